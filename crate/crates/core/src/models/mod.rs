//! SVS-Net (dilated LSTM + static features), MLVS-Net (last vitals only) and
//! nSHS-Net (static features only).
//!
//! Parameters live in a flat name → tensor map. Weight matrices are stored
//! `[out, in]`; biases are 1-D. Names:
//!
//! | group      | names |
//! |------------|-------|
//! | SEQ module | `lstm.{l}.{w,u,b}_{i,f,g,o}`, `fc_seq.*` (SVS); `mlp.{0,1}.*` (MLVS) |
//! | aux head   | `aux_head.*` (phase 1 only) |
//! | fusion     | `fc_nonseq.*`, `fc_fusion.*`, `fc_out.*` |
//! | nSHS       | `fc_nonseq.*`, `fc_out2.*` |

mod checkpoint;
mod forward;

use std::collections::BTreeMap;
use std::fmt;

use numcore::Tensor;
use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{Checkpoint, ParamBlob, CHECKPOINT_FORMAT_VERSION};
pub use forward::{
    bind, dilated_lstm_forward, forward, fused_head, lstm_cell_step, mlvsnet_forward, nshsnet_forward, predict,
    predict_seq_features, seq_features, svsnet_forward, Batch, Bound, LstmCellVars, Mode,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Svs,
    Mlvs,
    Nshs,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::Svs, Architecture::Mlvs, Architecture::Nshs];

    pub fn code(self) -> &'static str {
        match self {
            Architecture::Svs => "svs",
            Architecture::Mlvs => "mlvs",
            Architecture::Nshs => "nshs",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Architecture::Svs => "SVS-Net",
            Architecture::Mlvs => "MLVS-Net",
            Architecture::Nshs => "nSHS-Net",
        }
    }

    /// Whether training runs the three-phase schedule.
    pub fn has_seq_module(self) -> bool {
        !matches!(self, Architecture::Nshs)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "svs" => Ok(Architecture::Svs),
            "mlvs" => Ok(Architecture::Mlvs),
            "nshs" => Ok(Architecture::Nshs),
            other => Err(Error::config(format!("unknown architecture '{other}' (svs, mlvs, nshs)"))),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

/// Layer sizes. [`ModelConfig::default`] gives the full-size network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    /// One entry per LSTM layer.
    pub dilations: Vec<usize>,
    pub seq_len: usize,
    pub seq_channels: usize,
    pub nonseq_dim: usize,
    pub seq_proj: usize,
    pub nonseq_proj: usize,
    pub fusion: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 32,
            dilations: vec![1, 2, 4],
            seq_len: crate::preprocess::GRID_LEN,
            seq_channels: 3,
            nonseq_dim: 9,
            seq_proj: 16,
            nonseq_proj: 16,
            fusion: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dilations.is_empty() {
            return Err(Error::config("at least one LSTM layer is required"));
        }
        for &d in &self.dilations {
            if d == 0 || d >= self.seq_len {
                return Err(Error::config(format!(
                    "dilation {d} must be positive and below the sequence length {}",
                    self.seq_len
                )));
            }
        }
        if [self.hidden, self.seq_channels, self.nonseq_dim, self.seq_proj, self.nonseq_proj, self.fusion].contains(&0) {
            return Err(Error::config("layer sizes must be positive"));
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.dilations.len()
    }
}

pub const GATES: [char; 4] = ['i', 'f', 'g', 'o'];

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Uniform on (−1/√fan_in, 1/√fan_in).
    Weight,
    Const(f64),
}

#[derive(Debug, Clone, PartialEq)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn dense(out: &mut Vec<ParamSpec>, name: &str, input: usize, output: usize) {
    out.push(ParamSpec {
        name: format!("{name}.weight"),
        shape: vec![output, input],
        init: Init::Weight,
    });
    out.push(ParamSpec {
        name: format!("{name}.bias"),
        shape: vec![output],
        init: Init::Const(0.0),
    });
}

fn param_specs(arch: Architecture, cfg: &ModelConfig, with_aux: bool) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    match arch {
        Architecture::Svs => {
            for l in 0..cfg.layers() {
                let input = if l == 0 { cfg.seq_channels } else { cfg.hidden };
                for gate in GATES {
                    out.push(ParamSpec {
                        name: format!("lstm.{l}.w_{gate}"),
                        shape: vec![cfg.hidden, input],
                        init: Init::Weight,
                    });
                    out.push(ParamSpec {
                        name: format!("lstm.{l}.u_{gate}"),
                        shape: vec![cfg.hidden, cfg.hidden],
                        init: Init::Weight,
                    });
                    out.push(ParamSpec {
                        name: format!("lstm.{l}.b_{gate}"),
                        shape: vec![cfg.hidden],
                        init: Init::Const(if gate == 'f' { 1.0 } else { 0.0 }),
                    });
                }
            }
            dense(&mut out, "fc_seq", cfg.hidden, cfg.seq_proj);
        }
        Architecture::Mlvs => {
            dense(&mut out, "mlp.0", cfg.seq_channels, cfg.seq_proj);
            dense(&mut out, "mlp.1", cfg.seq_proj, cfg.seq_proj);
        }
        Architecture::Nshs => {
            dense(&mut out, "fc_nonseq", cfg.nonseq_dim, cfg.nonseq_proj);
            dense(&mut out, "fc_out2", cfg.nonseq_proj, 1);
            return out;
        }
    }
    dense(&mut out, "fc_nonseq", cfg.nonseq_dim, cfg.nonseq_proj);
    dense(&mut out, "fc_fusion", cfg.seq_proj + cfg.nonseq_proj, cfg.fusion);
    dense(&mut out, "fc_out", cfg.fusion, 1);
    if with_aux {
        dense(&mut out, "aux_head", cfg.seq_proj, 1);
    }
    out
}

pub fn is_seq_module(name: &str) -> bool {
    name.starts_with("lstm.") || name.starts_with("fc_seq.") || name.starts_with("mlp.")
}

pub fn is_aux_head(name: &str) -> bool {
    name.starts_with("aux_head.")
}

/// Complete parameter set of one architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub config: ModelConfig,
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// All parameters set to zero (forget biases included).
    pub fn zeros(arch: Architecture, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let tensors = param_specs(arch, &config, arch.has_seq_module())
            .into_iter()
            .map(|s| (s.name, Tensor::zeros(&s.shape)))
            .collect();
        Ok(ModelParams { arch, config, tensors })
    }

    pub fn from_tensors(arch: Architecture, config: ModelConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let expected = param_specs(arch, &config, false);
        for s in &expected {
            match tensors.get(&s.name) {
                None => return Err(Error::contract(format!("missing parameter {}", s.name))),
                Some(t) if t.shape() != s.shape.as_slice() => {
                    return Err(Error::contract(format!(
                        "parameter {} has shape {:?}, expected {:?}",
                        s.name,
                        t.shape(),
                        s.shape
                    )))
                }
                Some(t) if !t.is_finite() => {
                    return Err(Error::contract(format!("parameter {} is not finite", s.name)));
                }
                _ => {}
            }
        }
        let allowed: Vec<ParamSpec> = param_specs(arch, &config, true);
        if let Some(extra) = tensors.keys().find(|k| !allowed.iter().any(|s| &s.name == *k)) {
            return Err(Error::contract(format!("unexpected parameter {extra}")));
        }
        Ok(ModelParams { arch, config, tensors })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn has_aux_head(&self) -> bool {
        self.tensors.keys().any(|k| is_aux_head(k))
    }

    /// Drops the phase-1 prediction head.
    pub fn remove_aux_head(&mut self) {
        self.tensors.retain(|k, _| !is_aux_head(k));
    }

    pub fn zero_grad(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Copy without gradient buffers.
    pub fn detached(&self) -> Self {
        ModelParams {
            arch: self.arch,
            config: self.config.clone(),
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.detached())).collect(),
        }
    }
}

/// Seeded initialization: weights uniform on (−1/√fan_in, 1/√fan_in), biases
/// zero except LSTM forget-gate biases at 1.0. SEQ architectures include the
/// auxiliary head used in phase 1.
pub fn init_params(arch: Architecture, config: ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = BTreeMap::new();
    for spec in param_specs(arch, &config, arch.has_seq_module()) {
        let n: usize = spec.shape.iter().product();
        let data = match spec.init {
            Init::Const(c) => vec![c; n],
            Init::Weight => {
                let bound = 1.0 / (spec.shape[1] as f64).sqrt();
                (0..n)
                    .map(|_| {
                        let u: f64 = rng.sample(Open01);
                        bound * (2.0 * u - 1.0)
                    })
                    .collect()
            }
        };
        tensors.insert(spec.name, Tensor::new(spec.shape, data)?);
    }
    Ok(ModelParams { arch, config, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svs_parameter_count() {
        let p = init_params(Architecture::Svs, ModelConfig::default(), 1).unwrap();
        let lstm = 4 * (32 * 3 + 32 * 32 + 32) + 2 * 4 * (32 * 32 + 32 * 32 + 32);
        let heads = 32 * 16 + 16 + 9 * 16 + 16 + 32 * 8 + 8 + 8 + 1;
        let aux = 16 + 1;
        assert_eq!(p.num_parameters(), lstm + heads + aux);
        assert_eq!(p.num_parameters(), 22_226);
        let mut q = p.clone();
        q.remove_aux_head();
        assert_eq!(q.num_parameters(), 22_209);
    }

    #[test]
    fn shapes_follow_layout() {
        let p = init_params(Architecture::Svs, ModelConfig::default(), 1).unwrap();
        assert_eq!(p.get("lstm.0.w_i").unwrap().shape(), &[32, 3]);
        assert_eq!(p.get("lstm.2.w_o").unwrap().shape(), &[32, 32]);
        assert_eq!(p.get("lstm.1.u_g").unwrap().shape(), &[32, 32]);
        assert_eq!(p.get("fc_seq.weight").unwrap().shape(), &[16, 32]);
        assert_eq!(p.get("fc_nonseq.weight").unwrap().shape(), &[16, 9]);
        assert_eq!(p.get("fc_fusion.weight").unwrap().shape(), &[8, 32]);
        assert_eq!(p.get("fc_out.weight").unwrap().shape(), &[1, 8]);
        assert_eq!(p.get("aux_head.weight").unwrap().shape(), &[1, 16]);

        let m = init_params(Architecture::Mlvs, ModelConfig::default(), 1).unwrap();
        assert_eq!(m.get("mlp.0.weight").unwrap().shape(), &[16, 3]);
        assert_eq!(m.get("mlp.1.weight").unwrap().shape(), &[16, 16]);

        let n = init_params(Architecture::Nshs, ModelConfig::default(), 1).unwrap();
        assert_eq!(n.names().collect::<Vec<_>>(), vec!["fc_nonseq.bias", "fc_nonseq.weight", "fc_out2.bias", "fc_out2.weight"]);
    }

    #[test]
    fn init_is_deterministic_and_biased() {
        let a = init_params(Architecture::Svs, ModelConfig::default(), 7).unwrap();
        let b = init_params(Architecture::Svs, ModelConfig::default(), 7).unwrap();
        let c = init_params(Architecture::Svs, ModelConfig::default(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for l in 0..3 {
            assert!(a.get(&format!("lstm.{l}.b_f")).unwrap().data().iter().all(|&v| v == 1.0));
            assert!(a.get(&format!("lstm.{l}.b_i")).unwrap().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn dilation_must_fit_sequence() {
        let cfg = ModelConfig {
            dilations: vec![1, 2, 96],
            ..ModelConfig::default()
        };
        assert!(matches!(init_params(Architecture::Svs, cfg, 0), Err(Error::Config(_))));
        let cfg = ModelConfig {
            dilations: vec![0],
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn from_tensors_checks_shapes() {
        let p = init_params(Architecture::Nshs, ModelConfig::default(), 1).unwrap();
        let mut t = p.tensors().clone();
        assert!(ModelParams::from_tensors(Architecture::Nshs, ModelConfig::default(), t.clone()).is_ok());
        t.insert("fc_out2.weight".into(), Tensor::zeros(&[2, 16]));
        assert!(ModelParams::from_tensors(Architecture::Nshs, ModelConfig::default(), t.clone()).is_err());
        t.remove("fc_out2.weight");
        assert!(ModelParams::from_tensors(Architecture::Nshs, ModelConfig::default(), t).is_err());
    }
}
