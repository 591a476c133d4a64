use std::collections::BTreeMap;

use crate::error::{NumError, Result};
use crate::kernels;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`]. Only meaningful for the graph that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
}

#[derive(Debug, Clone)]
enum Leaf {
    Constant,
    /// Differentiable input whose gradient is reported by position.
    Variable,
    /// Named parameter; gradients of same-named leaves are summed.
    Param(String),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf(Leaf),
    MatMul(Var, Var),
    Binary {
        op: Binary,
        a: Var,
        b: Var,
        bias: bool,
    },
    Act(Activation, Var),
    Concat(Var, Var),
    Slice {
        src: Var,
        start: usize,
        len: usize,
    },
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    Ln(Var),
    Powf(Var, f64),
    Clamp(Var, f64, f64),
    Affine(Var, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation tape. Nodes are appended in evaluation order, so operands always
/// precede their users.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of a backward sweep.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    params: BTreeMap<String, Vec<f64>>,
    variables: BTreeMap<Var, Vec<f64>>,
}

impl Gradients {
    pub fn param(&self, name: &str) -> Option<&[f64]> {
        self.params.get(name).map(Vec::as_slice)
    }

    pub fn variable(&self, v: Var) -> Option<&[f64]> {
        self.variables.get(&v).map(Vec::as_slice)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.params.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn into_params(self) -> BTreeMap<String, Vec<f64>> {
        self.params
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.detached(), Op::Leaf(Leaf::Constant), false)
    }

    /// Differentiable input; its gradient is available through [`Gradients::variable`].
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t.detached(), Op::Leaf(Leaf::Variable), true)
    }

    /// Named parameter. The tensor's value is copied onto the tape.
    pub fn param(&mut self, name: impl Into<String>, t: &Tensor) -> Var {
        self.push(t.detached(), Op::Leaf(Leaf::Param(name.into())), true)
    }

    /// `a[m×k] · b[k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(NumError::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(self.data(a), self.data(b), &mut out, m, k, n);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    /// Pointwise `a op b`. `b` may instead be a 1-D vector matching the last
    /// axis of `a`, in which case it is broadcast over the leading axes.
    pub fn elementwise(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let bias = if sa == sb {
            false
        } else if sb.len() == 1 && sa.last() == Some(&sb[0]) {
            true
        } else {
            return Err(NumError::shape("elementwise", sa, sb));
        };
        let shape = sa.to_vec();
        let (da, db) = (self.data(a), self.data(b));
        let f = |x: f64, y: f64| match op {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
        };
        let out: Vec<f64> = if bias {
            let w = db.len();
            let mut out = Vec::with_capacity(da.len());
            if w > 0 {
                for row in da.chunks_exact(w) {
                    out.extend(row.iter().zip(db).map(|(&x, &y)| f(x, y)));
                }
            }
            out
        } else {
            da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
        };
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Binary { op, a, b, bias },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Binary::Mul, a, b)
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Var {
        let f = match kind {
            Activation::Tanh => f64::tanh,
            Activation::Sigmoid => kernels::sigmoid,
        };
        let t = self.value(x);
        let out = Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect());
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Act(kind, x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(Activation::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(Activation::Sigmoid, x)
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() || sa.is_empty() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(NumError::shape("concat", sa, sb));
        }
        let (p, q) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = p + q;
        let rows: usize = sa[..sa.len() - 1].iter().product();
        let (da, db) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(rows * (p + q));
        for r in 0..rows {
            out.extend_from_slice(&da[r * p..(r + 1) * p]);
            out.extend_from_slice(&db[r * q..(r + 1) * q]);
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Concat(a, b), rg))
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(src);
        let w = s.last().copied().unwrap_or(0);
        if s.is_empty() || start + len > w {
            return Err(NumError::shape("slice_last", s, &[start, start + len]));
        }
        let mut shape = s.to_vec();
        *shape.last_mut().unwrap() = len;
        let rows: usize = s[..s.len() - 1].iter().product();
        let d = self.data(src);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&d[r * w + start..r * w + start + len]);
        }
        let rg = self.any_grad(&[src]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Slice { src, start, len }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(NumError::shape("transpose", s, &[]));
        }
        let (r, c) = (s[0], s[1]);
        let out = kernels::transpose(self.data(x), r, c);
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::from_parts(vec![c, r], out), Op::Transpose(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let d = self.data(x);
        if d.is_empty() {
            return Err(NumError::Contract("sum of an empty tensor".into()));
        }
        let s: f64 = d.iter().sum();
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let d = self.data(x);
        if d.is_empty() {
            return Err(NumError::Contract("mean of an empty tensor".into()));
        }
        let s = d.iter().sum::<f64>() / d.len() as f64;
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Mean(x), rg))
    }

    /// Natural logarithm. Inputs must be positive to stay finite.
    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Ln(x))
    }

    /// `x^p` for a fixed real exponent. Inputs should be positive unless `p` is integral.
    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        self.unary(x, |v| v.powf(p), Op::Powf(x, p))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    /// `scale · x + shift`
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(x, |v| scale * v + shift, Op::Affine(x, scale))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let out = Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect());
        let rg = self.any_grad(&[x]);
        self.push(out, op, rg)
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Leaves that have no path to `loss` (or were added as constants) are
    /// absent from the result.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(NumError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf(Leaf::Constant) => {}
                Op::Leaf(Leaf::Variable) => {
                    out.variables.insert(Var(i), g);
                }
                Op::Leaf(Leaf::Param(name)) => match out.params.get_mut(name) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => {
                        out.params.insert(name.clone(), g);
                    }
                },
                Op::MatMul(a, b) => {
                    let (sa, sb) = (self.shape(*a), self.shape(*b));
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    if self.requires_grad(*a) {
                        let bt = kernels::transpose(self.data(*b), k, n);
                        let mut da = vec![0.0; m * k];
                        kernels::matmul_acc(&g, &bt, &mut da, m, n, k);
                        accumulate(&mut grads, *a, da);
                    }
                    if self.requires_grad(*b) {
                        let at = kernels::transpose(self.data(*a), m, k);
                        let mut db = vec![0.0; k * n];
                        kernels::matmul_acc(&at, &g, &mut db, k, m, n);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Binary { op, a, b, bias } => {
                    let (a, b, bias) = (*a, *b, *bias);
                    let w = self.value(b).len();
                    if self.requires_grad(a) {
                        let da = match op {
                            Binary::Add | Binary::Sub => g.clone(),
                            Binary::Mul => {
                                let bd = self.data(b);
                                g.iter()
                                    .enumerate()
                                    .map(|(j, gv)| gv * bd[if bias { j % w } else { j }])
                                    .collect()
                            }
                        };
                        accumulate(&mut grads, a, da);
                    }
                    if self.requires_grad(b) {
                        let full: Vec<f64> = match op {
                            Binary::Add => g,
                            Binary::Sub => g.iter().map(|v| -v).collect(),
                            Binary::Mul => g.iter().zip(self.data(a)).map(|(gv, av)| gv * av).collect(),
                        };
                        let db = if bias {
                            let mut db = vec![0.0; w];
                            if w > 0 {
                                for row in full.chunks_exact(w) {
                                    db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                                }
                            }
                            db
                        } else {
                            full
                        };
                        accumulate(&mut grads, b, db);
                    }
                }
                Op::Act(kind, x) => {
                    let y = node.value.data();
                    let dx = match kind {
                        Activation::Tanh => g.iter().zip(y).map(|(gv, yv)| gv * (1.0 - yv * yv)).collect(),
                        Activation::Sigmoid => g.iter().zip(y).map(|(gv, yv)| gv * yv * (1.0 - yv)).collect(),
                    };
                    accumulate(&mut grads, *x, dx);
                }
                Op::Concat(a, b) => {
                    let p = self.value(*a).last_dim();
                    let q = self.value(*b).last_dim();
                    let rows = g.len().checked_div(p + q).unwrap_or(0);
                    let mut da = Vec::with_capacity(rows * p);
                    let mut db = Vec::with_capacity(rows * q);
                    for r in 0..rows {
                        let row = &g[r * (p + q)..(r + 1) * (p + q)];
                        da.extend_from_slice(&row[..p]);
                        db.extend_from_slice(&row[p..]);
                    }
                    if self.requires_grad(*a) {
                        accumulate(&mut grads, *a, da);
                    }
                    if self.requires_grad(*b) {
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Slice { src, start, len } => {
                    let w = self.value(*src).last_dim();
                    let mut ds = vec![0.0; self.value(*src).len()];
                    if *len > 0 {
                        for (r, row) in g.chunks_exact(*len).enumerate() {
                            ds[r * w + start..r * w + start + len].copy_from_slice(row);
                        }
                    }
                    accumulate(&mut grads, *src, ds);
                }
                Op::Transpose(x) => {
                    let s = self.shape(*x);
                    accumulate(&mut grads, *x, kernels::transpose(&g, s[1], s[0]));
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    accumulate(&mut grads, *x, vec![g[0]; n]);
                }
                Op::Mean(x) => {
                    let n = self.value(*x).len();
                    accumulate(&mut grads, *x, vec![g[0] / n as f64; n]);
                }
                Op::Ln(x) => {
                    let dx = g.iter().zip(self.data(*x)).map(|(gv, xv)| gv / xv).collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::Powf(x, p) => {
                    let p = *p;
                    let dx = g
                        .iter()
                        .zip(self.data(*x))
                        .map(|(gv, xv)| if p == 0.0 { 0.0 } else { gv * p * xv.powf(p - 1.0) })
                        .collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::Clamp(x, lo, hi) => {
                    let dx = g
                        .iter()
                        .zip(self.data(*x))
                        .map(|(gv, xv)| if xv >= lo && xv <= hi { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::Affine(x, scale) => {
                    let dx = g.iter().map(|gv| gv * scale).collect();
                    accumulate(&mut grads, *x, dx);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
        slot @ None => *slot = Some(contrib),
    }
}
