use std::collections::BTreeMap;

use numcore::{Graph, Tensor, Var};

use super::{Architecture, ModelParams, GATES};
use crate::cohort::NonSeqVector;
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::preprocess::SeqGrid;

/// Which output head a SEQ architecture evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// SEQ module → auxiliary head. Requires the aux head to be present.
    Phase1Aux,
    /// Full network (SEQ + NonSEQ fusion).
    Fused,
}

/// Model inputs for `size` samples.
#[derive(Debug, Clone)]
pub struct Batch {
    /// One `[size, 3]` tensor per grid step.
    pub steps: Vec<Tensor>,
    /// `[size, 9]`.
    pub nonseq: Tensor,
    /// Precomputed SEQ features `[size, seq_proj]`; used in place of the SEQ
    /// module when present.
    pub seq_cache: Option<Tensor>,
    pub size: usize,
}

impl Batch {
    pub fn new(inputs: &[(&SeqGrid, &NonSeqVector)]) -> Result<Self> {
        let size = inputs.len();
        if size == 0 {
            return Err(Error::contract("empty batch"));
        }
        let len = inputs[0].0.len();
        if inputs.iter().any(|(g, _)| g.len() != len) {
            return Err(Error::contract("grids in a batch must share one length"));
        }
        let steps = (0..len)
            .map(|t| {
                let data = inputs.iter().flat_map(|(g, _)| g.rows()[t]).collect();
                Tensor::new(vec![size, 3], data)
            })
            .collect::<numcore::Result<Vec<_>>>()?;
        let nonseq = Tensor::new(vec![size, 9], inputs.iter().flat_map(|(_, n)| n.0).collect())?;
        Ok(Batch {
            steps,
            nonseq,
            seq_cache: None,
            size,
        })
    }

    pub fn from_samples(samples: &[&Sample]) -> Result<Self> {
        let inputs: Vec<_> = samples.iter().map(|s| (&s.grid, &s.nonseq)).collect();
        Batch::new(&inputs)
    }

    pub fn with_seq_cache(mut self, cache: Tensor) -> Result<Self> {
        if cache.shape().first() != Some(&self.size) || cache.shape().len() != 2 {
            return Err(Error::contract(format!(
                "feature cache shape {:?} does not match batch size {}",
                cache.shape(),
                self.size
            )));
        }
        self.seq_cache = Some(cache);
        Ok(self)
    }
}

/// Graph handles for every parameter of one forward pass.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("parameter {name} is not bound")))
    }
}

/// Puts every parameter on the tape: trainable ones as named params, the rest
/// as constants (frozen: they receive no gradient).
pub fn bind(g: &mut Graph, params: &ModelParams, trainable: &dyn Fn(&str) -> bool) -> Bound {
    let vars = params
        .tensors()
        .iter()
        .map(|(name, t)| {
            let v = if trainable(name) {
                g.param(name.clone(), t)
            } else {
                g.constant(t.detached())
            };
            (name.clone(), v)
        })
        .collect();
    Bound { vars }
}

/// `x · Wᵀ + b` for a `[out, in]` weight.
fn linear(g: &mut Graph, bound: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let w = bound.get(&format!("{prefix}.weight"))?;
    let wt = g.transpose(w)?;
    let y = g.matmul(x, wt)?;
    Ok(g.add(y, bound.get(&format!("{prefix}.bias"))?)?)
}

/// One layer's gate weights fused along the last axis, gate order i, f, g, o.
#[derive(Debug, Clone, Copy)]
pub struct LstmCellVars {
    /// `[in, 4H]`
    pub w: Var,
    /// `[H, 4H]`
    pub u: Var,
    /// `[4H]`
    pub b: Var,
    pub hidden: usize,
}

impl LstmCellVars {
    pub fn bind_layer(g: &mut Graph, bound: &Bound, layer: usize, hidden: usize) -> Result<Self> {
        let mut fuse = |kind: char, transpose: bool| -> Result<Var> {
            let mut acc: Option<Var> = None;
            for gate in GATES {
                let mut v = bound.get(&format!("lstm.{layer}.{kind}_{gate}"))?;
                if transpose {
                    v = g.transpose(v)?;
                }
                acc = Some(match acc {
                    None => v,
                    Some(a) => g.concat(a, v)?,
                });
            }
            Ok(acc.expect("four gates"))
        };
        Ok(LstmCellVars {
            w: fuse('w', true)?,
            u: fuse('u', true)?,
            b: fuse('b', false)?,
            hidden,
        })
    }
}

/// One LSTM step. `prev` is `(h, c)` of the dilated predecessor; `None` means
/// a zero state.
pub fn lstm_cell_step(g: &mut Graph, cell: &LstmCellVars, x: Var, prev: Option<(Var, Var)>) -> Result<(Var, Var)> {
    let h = cell.hidden;
    let mut pre = g.matmul(x, cell.w)?;
    if let Some((h_prev, _)) = prev {
        let rec = g.matmul(h_prev, cell.u)?;
        pre = g.add(pre, rec)?;
    }
    let pre = g.add(pre, cell.b)?;
    let gi = g.slice_last(pre, 0, h)?;
    let gf = g.slice_last(pre, h, h)?;
    let gg = g.slice_last(pre, 2 * h, h)?;
    let go = g.slice_last(pre, 3 * h, h)?;
    let i = g.sigmoid(gi);
    let f = g.sigmoid(gf);
    let cand = g.tanh(gg);
    let o = g.sigmoid(go);
    let new_in = g.mul(i, cand)?;
    let c = match prev {
        Some((_, c_prev)) => {
            let kept = g.mul(f, c_prev)?;
            g.add(kept, new_in)?
        }
        None => new_in,
    };
    let tc = g.tanh(c);
    let h_new = g.mul(o, tc)?;
    Ok((h_new, c))
}

/// Stacked dilated LSTM; layer `l` at step `t` recurs on step `t − d_l` of
/// the same layer. Returns the top layer's hidden state at the last step.
pub fn dilated_lstm_forward(g: &mut Graph, bound: &Bound, params: &ModelParams, steps: &[Var]) -> Result<Var> {
    let cfg = &params.config;
    if steps.is_empty() {
        return Err(Error::contract("empty input sequence"));
    }
    if let Some(&d) = cfg.dilations.iter().find(|&&d| d == 0 || d >= steps.len()) {
        return Err(Error::config(format!(
            "dilation {d} must be positive and below the sequence length {}",
            steps.len()
        )));
    }
    let mut inputs = steps.to_vec();
    for (layer, &d) in cfg.dilations.iter().enumerate() {
        let cell = LstmCellVars::bind_layer(g, bound, layer, cfg.hidden)?;
        let mut hs: Vec<Var> = Vec::with_capacity(inputs.len());
        let mut cs: Vec<Var> = Vec::with_capacity(inputs.len());
        for (t, &x) in inputs.iter().enumerate() {
            let prev = (t >= d).then(|| (hs[t - d], cs[t - d]));
            let (h, c) = lstm_cell_step(g, &cell, x, prev)?;
            hs.push(h);
            cs.push(c);
        }
        inputs = hs;
    }
    Ok(*inputs.last().expect("non-empty"))
}

/// SEQ feature vector `[B, seq_proj]`.
pub fn seq_features(g: &mut Graph, bound: &Bound, params: &ModelParams, batch: &Batch) -> Result<Var> {
    if let Some(cache) = &batch.seq_cache {
        return Ok(g.constant(cache.clone()));
    }
    match params.arch {
        Architecture::Svs => {
            let steps: Vec<Var> = batch.steps.iter().map(|s| g.constant(s.clone())).collect();
            let h = dilated_lstm_forward(g, bound, params, &steps)?;
            let z = linear(g, bound, "fc_seq", h)?;
            Ok(g.tanh(z))
        }
        Architecture::Mlvs => {
            let last = batch.steps.last().ok_or_else(|| Error::contract("empty input sequence"))?;
            let x = g.constant(last.clone());
            let z0 = linear(g, bound, "mlp.0", x)?;
            let h0 = g.tanh(z0);
            let z1 = linear(g, bound, "mlp.1", h0)?;
            Ok(g.tanh(z1))
        }
        Architecture::Nshs => Err(Error::contract("nSHS-Net has no SEQ module")),
    }
}

/// Fusion head on top of SEQ features: probabilities `[B, 1]`.
pub fn fused_head(g: &mut Graph, bound: &Bound, seq: Var, nonseq: Var) -> Result<Var> {
    let zn = linear(g, bound, "fc_nonseq", nonseq)?;
    let n = g.tanh(zn);
    let z = g.concat(seq, n)?;
    let zf = linear(g, bound, "fc_fusion", z)?;
    let f = g.tanh(zf);
    let out = linear(g, bound, "fc_out", f)?;
    Ok(g.sigmoid(out))
}

/// Probabilities `[B, 1]` for `batch`.
pub fn forward(g: &mut Graph, bound: &Bound, params: &ModelParams, batch: &Batch, mode: Mode) -> Result<Var> {
    match (params.arch, mode) {
        (Architecture::Nshs, Mode::Fused) => {
            let x = g.constant(batch.nonseq.clone());
            let z = linear(g, bound, "fc_nonseq", x)?;
            let h = g.tanh(z);
            let out = linear(g, bound, "fc_out2", h)?;
            Ok(g.sigmoid(out))
        }
        (Architecture::Nshs, Mode::Phase1Aux) => Err(Error::contract("nSHS-Net has no auxiliary head")),
        (_, Mode::Phase1Aux) => {
            if !params.has_aux_head() {
                return Err(Error::contract("auxiliary head has been removed"));
            }
            let s = seq_features(g, bound, params, batch)?;
            let out = linear(g, bound, "aux_head", s)?;
            Ok(g.sigmoid(out))
        }
        (_, Mode::Fused) => {
            let s = seq_features(g, bound, params, batch)?;
            let n = g.constant(batch.nonseq.clone());
            fused_head(g, bound, s, n)
        }
    }
}

fn frozen(_: &str) -> bool {
    false
}

fn chunks<'a>(samples: &'a [&'a Sample], batch_size: usize) -> Result<std::slice::Chunks<'a, &'a Sample>> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    Ok(samples.chunks(batch_size))
}

/// Probabilities for every sample, evaluated in batches without gradients.
pub fn predict(params: &ModelParams, samples: &[&Sample], mode: Mode, batch_size: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in chunks(samples, batch_size)? {
        let batch = Batch::from_samples(chunk)?;
        let mut g = Graph::new();
        let bound = bind(&mut g, params, &frozen);
        let p = forward(&mut g, &bound, params, &batch, mode)?;
        out.extend_from_slice(g.value(p).data());
    }
    Ok(out)
}

/// SEQ feature rows `[n, seq_proj]` for every sample.
pub fn predict_seq_features(params: &ModelParams, samples: &[&Sample], batch_size: usize) -> Result<Tensor> {
    let width = params.config.seq_proj;
    let mut data = Vec::with_capacity(samples.len() * width);
    for chunk in chunks(samples, batch_size)? {
        let batch = Batch::from_samples(chunk)?;
        let mut g = Graph::new();
        let bound = bind(&mut g, params, &frozen);
        let s = seq_features(&mut g, &bound, params, &batch)?;
        data.extend_from_slice(g.value(s).data());
    }
    Ok(Tensor::new(vec![samples.len(), width], data)?)
}

fn single(params: &ModelParams, grid: &SeqGrid, nonseq: &NonSeqVector, mode: Mode) -> Result<f64> {
    let batch = Batch::new(&[(grid, nonseq)])?;
    let mut g = Graph::new();
    let bound = bind(&mut g, params, &frozen);
    let p = forward(&mut g, &bound, params, &batch, mode)?;
    Ok(g.value(p).data()[0])
}

fn expect_arch(params: &ModelParams, arch: Architecture) -> Result<()> {
    if params.arch != arch {
        return Err(Error::contract(format!("expected {arch} parameters, got {}", params.arch)));
    }
    Ok(())
}

pub fn svsnet_forward(grid: &SeqGrid, nonseq: &NonSeqVector, params: &ModelParams, mode: Mode) -> Result<f64> {
    expect_arch(params, Architecture::Svs)?;
    single(params, grid, nonseq, mode)
}

/// Uses only the vitals at the window end.
pub fn mlvsnet_forward(last_vitals: [f64; 3], nonseq: &NonSeqVector, params: &ModelParams, mode: Mode) -> Result<f64> {
    expect_arch(params, Architecture::Mlvs)?;
    single(params, &SeqGrid::new(vec![last_vitals])?, nonseq, mode)
}

pub fn nshsnet_forward(nonseq: &NonSeqVector, params: &ModelParams) -> Result<f64> {
    expect_arch(params, Architecture::Nshs)?;
    single(params, &SeqGrid::zeros(1), nonseq, Mode::Fused)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_params, ModelConfig};

    fn small() -> ModelConfig {
        ModelConfig {
            hidden: 4,
            seq_len: 8,
            ..ModelConfig::default()
        }
    }

    fn grid(len: usize, seed: f64) -> SeqGrid {
        SeqGrid::new((0..len).map(|t| [(t as f64 * 0.3 + seed).sin(), (t as f64 * 0.2).cos(), seed]).collect()).unwrap()
    }

    #[test]
    fn outputs_are_probabilities() {
        let ns = NonSeqVector([1.0, 10.0, 0.0, 1.0, 0.0, 1.0, 1.0, -3.0, 0.0]);
        for arch in Architecture::ALL {
            let p = init_params(arch, ModelConfig::default(), 3).unwrap();
            let v = match arch {
                Architecture::Svs => svsnet_forward(&grid(96, 0.1), &ns, &p, Mode::Fused).unwrap(),
                Architecture::Mlvs => mlvsnet_forward([0.1, -0.2, 0.3], &ns, &p, Mode::Fused).unwrap(),
                Architecture::Nshs => nshsnet_forward(&ns, &p).unwrap(),
            };
            assert!(v > 0.0 && v < 1.0, "{arch}: {v}");
        }
    }

    #[test]
    fn mode_pairing_is_checked() {
        let ns = NonSeqVector([0.0; 9]);
        let mut p = init_params(Architecture::Svs, small(), 3).unwrap();
        assert!(svsnet_forward(&grid(8, 0.0), &ns, &p, Mode::Phase1Aux).is_ok());
        p.remove_aux_head();
        assert!(svsnet_forward(&grid(8, 0.0), &ns, &p, Mode::Phase1Aux).is_err());
        assert!(svsnet_forward(&grid(8, 0.0), &ns, &p, Mode::Fused).is_ok());
        let n = init_params(Architecture::Nshs, small(), 3).unwrap();
        assert!(svsnet_forward(&grid(8, 0.0), &ns, &n, Mode::Fused).is_err());
    }

    #[test]
    fn batched_matches_single() {
        let p = init_params(Architecture::Svs, small(), 5).unwrap();
        let samples: Vec<Sample> = (0..5)
            .map(|i| Sample {
                window_id: format!("E{i}"),
                horizon: crate::cohort::Horizon::new(6).unwrap(),
                label: i % 2 == 0,
                nonseq: NonSeqVector([i as f64; 9]),
                grid: grid(8, i as f64 * 0.7),
            })
            .collect();
        let refs: Vec<&Sample> = samples.iter().collect();
        let batched = predict(&p, &refs, Mode::Fused, 2).unwrap();
        for (s, b) in samples.iter().zip(&batched) {
            let one = svsnet_forward(&s.grid, &s.nonseq, &p, Mode::Fused).unwrap();
            assert!((one - b).abs() < 1e-14);
        }
    }

    #[test]
    fn feature_cache_matches_live_seq_module() {
        let p = init_params(Architecture::Svs, small(), 5).unwrap();
        let s = Sample {
            window_id: "E".into(),
            horizon: crate::cohort::Horizon::new(6).unwrap(),
            label: true,
            nonseq: NonSeqVector([1.0; 9]),
            grid: grid(8, 0.4),
        };
        let feats = predict_seq_features(&p, &[&s], 4).unwrap();
        let batch = Batch::from_samples(&[&s]).unwrap().with_seq_cache(feats).unwrap();
        let mut g = Graph::new();
        let bound = bind(&mut g, &p, &frozen);
        let out = forward(&mut g, &bound, &p, &batch, Mode::Fused).unwrap();
        let live = svsnet_forward(&s.grid, &s.nonseq, &p, Mode::Fused).unwrap();
        assert_eq!(g.value(out).data()[0], live);
    }

    #[test]
    fn too_short_sequence_for_dilation() {
        let p = init_params(Architecture::Svs, small(), 5).unwrap();
        let ns = NonSeqVector([0.0; 9]);
        assert!(svsnet_forward(&grid(4, 0.0), &ns, &p, Mode::Fused).is_err());
    }
}
