//! Focal loss, ADAM, the three-phase schedule and stratified cross-validation.

mod adam;
mod cv;
mod folds;
mod loss;
mod trainer;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::Horizon;
use crate::error::{Error, Result};

pub use adam::{adam_step, AdamHyper, AdamState, Moments};
pub use cv::{score_samples, cross_validate, cross_validate_windows, CvOutcome, FoldMetrics, FoldResult, MetricsReport};
pub use folds::stratified_kfold;
pub use loss::{focal_loss, focal_loss_scalar, PROB_CLAMP};
pub use trainer::{
    phase1, phase2, phase3, phase_trainable, train, train_single_phase, train_three_phase, Phase, PhaseOutcome,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Upper bound per phase.
    pub epochs: usize,
    pub lr_phase12: f64,
    pub lr_phase3: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub patience: usize,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub batch_size: usize,
    pub folds: usize,
    pub seed: u64,
    pub horizon_hours: Horizon,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr_phase12: 1e-4,
            lr_phase3: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patience: 100,
            focal_gamma: 2.0,
            focal_alpha: 0.75,
            batch_size: 64,
            folds: 3,
            seed: 0,
            horizon_hours: Horizon::new(24).expect("valid horizon"),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_phase12", self.lr_phase12),
            ("lr_phase3", self.lr_phase3),
            ("epsilon", self.epsilon),
        ];
        if let Some((k, v)) = positive.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::config(format!("{k} must be a finite non-negative number, got {v}")));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::config("epsilon must be positive"));
        }
        for (k, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(format!("{k} must lie in [0, 1), got {v}")));
            }
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha < 1.0) {
            return Err(Error::config(format!("focal_alpha must lie in (0, 1), got {}", self.focal_alpha)));
        }
        if !(self.focal_gamma >= 0.0 && self.focal_gamma.is_finite()) {
            return Err(Error::config("focal_gamma must be non-negative"));
        }
        for (k, v) in [
            ("epochs", self.epochs),
            ("patience", self.patience),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{k} must be positive")));
            }
        }
        if self.folds < 2 {
            return Err(Error::config("folds must be at least 2"));
        }
        Ok(())
    }

    pub fn hyper(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: TrainConfig = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One epoch of one phase. Validation metrics are `None` when undefined
/// (single-class validation set).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: u8,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auroc: Option<f64>,
    pub val_auprc: Option<f64>,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub phase: u8,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub phases: Vec<PhaseSummary>,
}

pub const HISTORY_HEADER: &str = "phase,epoch,train_loss,val_loss,val_auroc,val_auprc,val_accuracy";

impl TrainHistory {
    pub fn best_epoch(&self, phase: u8) -> Option<usize> {
        self.phases.iter().find(|p| p.phase == phase).map(|p| p.best_epoch)
    }

    pub fn phase_records(&self, phase: u8) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.phase == phase)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.phase,
                r.epoch,
                r.train_loss,
                r.val_loss,
                opt(r.val_auroc),
                opt(r.val_auprc),
                r.val_accuracy
            ));
        }
        out
    }
}
