use std::collections::BTreeMap;

use numcore::Gradients;

use crate::error::{Error, Result};
use crate::models::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

/// First/second moments and step count for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    entries: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let entries = params
            .tensors()
            .iter()
            .map(|(k, t)| {
                (
                    k.clone(),
                    Moments {
                        m: vec![0.0; t.len()],
                        v: vec![0.0; t.len()],
                        t: 0,
                    },
                )
            })
            .collect();
        AdamState { entries }
    }

    pub fn get(&self, name: &str) -> Option<&Moments> {
        self.entries.get(name)
    }
}

/// One bias-corrected ADAM update of every parameter accepted by `trainable`.
/// Other parameters and their moments are left as they are.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    hyper: AdamHyper,
    trainable: &dyn Fn(&str) -> bool,
) -> Result<()> {
    let AdamHyper { beta1, beta2, epsilon } = hyper;
    for (name, tensor) in params.iter_mut() {
        if !trainable(name) {
            continue;
        }
        let g = grads
            .param(name)
            .ok_or_else(|| Error::contract(format!("no gradient for trainable parameter {name}")))?;
        let st = state
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("no optimizer state for {name}")))?;
        if g.len() != tensor.len() {
            return Err(Error::contract(format!("gradient size mismatch for {name}")));
        }
        st.t += 1;
        let c1 = 1.0 - beta1.powi(st.t as i32);
        let c2 = 1.0 - beta2.powi(st.t as i32);
        for (((w, &gi), m), v) in tensor.data_mut().iter_mut().zip(g).zip(&mut st.m).zip(&mut st.v) {
            *m = beta1 * *m + (1.0 - beta1) * gi;
            *v = beta2 * *v + (1.0 - beta2) * gi * gi;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Architecture, ModelConfig};
    use numcore::{Graph, Tensor};

    const HYPER: AdamHyper = AdamHyper {
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };

    fn params() -> ModelParams {
        ModelParams::zeros(Architecture::Nshs, ModelConfig::default()).unwrap()
    }

    /// Gradients of `Σ c·θ` over `fc_out2.bias`, i.e. a constant gradient `c`.
    fn grads_for(p: &ModelParams, c: f64) -> Gradients {
        let mut g = Graph::new();
        let mut total = None;
        for (name, t) in p.tensors() {
            let v = g.param(name.clone(), t);
            let k = g.constant(Tensor::full(t.shape(), if name == "fc_out2.bias" { c } else { 0.0 }));
            let prod = g.mul(v, k).unwrap();
            let s = g.sum(prod).unwrap();
            total = Some(match total {
                None => s,
                Some(a) => g.add(a, s).unwrap(),
            });
        }
        g.backward(total.unwrap()).unwrap()
    }

    #[test]
    fn zero_gradient_is_null_update() {
        let mut p = params();
        let before = p.clone();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &grads_for(&before, 0.0), &mut st, 0.1, HYPER, &|_| true).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = params();
        let mut st = AdamState::new(&p);
        let g = grads_for(&p, 3.0);
        adam_step(&mut p, &g, &mut st, 0.01, HYPER, &|_| true).unwrap();
        let b = p.get("fc_out2.bias").unwrap().data()[0];
        assert!((b + 0.01).abs() < 1e-9);
    }

    #[test]
    fn two_step_trajectory() {
        // g1 = 2, g2 = -1 on a scalar starting at 0, lr = 0.1
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.1);
        let m1 = (1.0 - b1) * 2.0;
        let v1 = (1.0 - b2) * 4.0;
        let th1 = -lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        let m2 = b1 * m1 + (1.0 - b1) * -1.0;
        let v2 = b2 * v1 + (1.0 - b2) * 1.0;
        let th2 = th1 - lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);

        let mut p = params();
        let mut st = AdamState::new(&p);
        let g = grads_for(&p, 2.0);
        adam_step(&mut p, &g, &mut st, lr, HYPER, &|_| true).unwrap();
        let g = grads_for(&p, -1.0);
        adam_step(&mut p, &g, &mut st, lr, HYPER, &|_| true).unwrap();
        let m = st.get("fc_out2.bias").unwrap();
        assert_eq!(m.t, 2);
        assert!((m.m[0] - m2).abs() < 1e-15);
        assert!((m.v[0] - v2).abs() < 1e-15);
        assert!((p.get("fc_out2.bias").unwrap().data()[0] - th2).abs() < 1e-12);
    }

    #[test]
    fn frozen_entries_untouched_and_missing_grad_rejected() {
        let mut p = params();
        let mut st = AdamState::new(&p);
        let g = grads_for(&p, 1.0);
        let only_bias = |n: &str| n == "fc_out2.bias";
        adam_step(&mut p, &g, &mut st, 0.1, HYPER, &only_bias).unwrap();
        assert_eq!(st.get("fc_nonseq.weight").unwrap().t, 0);
        assert!(p.get("fc_nonseq.weight").unwrap().data().iter().all(|&v| v == 0.0));

        let empty = Graph::new();
        let mut g2 = empty;
        let c = g2.constant(Tensor::scalar(1.0));
        let none = g2.backward(c).unwrap();
        assert!(matches!(
            adam_step(&mut p, &none, &mut st, 0.1, HYPER, &only_bias),
            Err(Error::Contract(_))
        ));
    }
}
