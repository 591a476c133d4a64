use std::collections::BTreeMap;
use std::path::Path;

use numcore::Tensor;
use serde::{Deserialize, Serialize};

use super::{Architecture, ModelConfig, ModelParams};
use crate::cohort::Horizon;
use crate::error::{Error, Result};
use crate::preprocess::NormStats;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlob {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Serialized model plus what is needed to preprocess its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: Architecture,
    /// Layer sizes and `dilations`, stored as top-level keys.
    #[serde(flatten)]
    pub config: ModelConfig,
    pub horizon: Option<Horizon>,
    pub norm_stats: Option<NormStats>,
    pub params: BTreeMap<String, ParamBlob>,
}

impl Checkpoint {
    pub fn new(params: &ModelParams, horizon: Option<Horizon>, norm_stats: Option<NormStats>) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            architecture: params.arch,
            config: params.config.clone(),
            horizon,
            norm_stats,
            params: params
                .tensors()
                .iter()
                .map(|(k, t)| {
                    (
                        k.clone(),
                        ParamBlob {
                            shape: t.shape().to_vec(),
                            data: t.data().to_vec(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::contract(format!(
                "unsupported checkpoint format version {}",
                self.format_version
            )));
        }
        let tensors = self
            .params
            .iter()
            .map(|(k, b)| Ok((k.clone(), Tensor::new(b.shape.clone(), b.data.clone())?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        ModelParams::from_tensors(self.architecture, self.config.clone(), tensors)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(file)?)
    }
}
