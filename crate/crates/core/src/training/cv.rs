use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::stratified_kfold;
use super::trainer::{fold_seed, train};
use super::{TrainConfig, TrainHistory};
use crate::cohort::{Horizon, LabeledWindow};
use crate::dataset::{samples_from_windows, Sample};
use crate::error::{Error, Result};
use crate::metrics::{Metrics, ScoredSet};
use crate::models::{predict, Architecture, Mode, ModelConfig, ModelParams};
use crate::preprocess::{fit_normalizer, NormStats};

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub params: ModelParams,
    pub history: TrainHistory,
    /// Indices into the input dataset.
    pub val_indices: Vec<usize>,
    pub val_samples: Vec<Sample>,
    /// Present when the normalizer was fitted on this fold's training part.
    pub norm_stats: Option<NormStats>,
    pub val_scores: Vec<f64>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub arch: Architecture,
    pub horizon: Horizon,
    pub folds: Vec<FoldResult>,
    pub average: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub horizon: Horizon,
    pub architecture: Architecture,
    pub per_fold: Vec<FoldMetrics>,
    pub average: Metrics,
}

impl CvOutcome {
    pub fn report(&self) -> MetricsReport {
        MetricsReport {
            horizon: self.horizon,
            architecture: self.arch,
            per_fold: self
                .folds
                .iter()
                .map(|f| FoldMetrics {
                    fold: f.fold,
                    metrics: f.metrics,
                })
                .collect(),
            average: self.average,
        }
    }
}

/// Evaluates `params` on `samples` in fused mode.
pub fn score_samples(params: &ModelParams, samples: &[Sample], batch_size: usize) -> Result<(Vec<f64>, Metrics)> {
    let refs: Vec<&Sample> = samples.iter().collect();
    let scores = predict(params, &refs, Mode::Fused, batch_size)?;
    let set = ScoredSet::new(scores.clone(), samples.iter().map(|s| s.label).collect())?;
    Ok((scores, Metrics::evaluate(&set)?))
}

type Prepared = (Vec<Sample>, Vec<Sample>, Option<NormStats>);

fn run_folds<F>(
    labels: &[bool],
    arch: Architecture,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    jobs: usize,
    prepare: F,
) -> Result<Vec<FoldResult>>
where
    F: Fn(&[usize], &[usize]) -> Result<Prepared> + Sync,
{
    cfg.validate()?;
    model_cfg.validate()?;
    let folds = stratified_kfold(labels, cfg.folds, cfg.seed)?;
    let one = |k: usize| -> Result<FoldResult> {
        let val_idx = folds[k].clone();
        let train_idx: Vec<usize> = (0..folds.len()).filter(|&j| j != k).flat_map(|j| folds[j].iter().copied()).collect();
        let (train_s, val_s, norm_stats) = prepare(&train_idx, &val_idx)?;
        let train_refs: Vec<&Sample> = train_s.iter().collect();
        let val_refs: Vec<&Sample> = val_s.iter().collect();
        let fold_cfg = TrainConfig {
            seed: fold_seed(cfg.seed, k),
            ..cfg.clone()
        };
        let (params, history) = train(arch, model_cfg, &train_refs, &val_refs, &fold_cfg, fold_seed(cfg.seed, k))?;
        let (val_scores, metrics) = score_samples(&params, &val_s, cfg.batch_size)?;
        Ok(FoldResult {
            fold: k,
            params,
            history,
            val_indices: val_idx,
            val_samples: val_s,
            norm_stats,
            val_scores,
            metrics,
        })
    };
    if jobs <= 1 {
        (0..folds.len()).map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
        pool.install(|| (0..folds.len()).into_par_iter().map(one).collect())
    }
}

fn outcome(arch: Architecture, horizon: Horizon, folds: Vec<FoldResult>) -> Result<CvOutcome> {
    let all: Vec<Metrics> = folds.iter().map(|f| f.metrics).collect();
    Ok(CvOutcome {
        arch,
        horizon,
        average: Metrics::mean(&all)?,
        folds,
    })
}

fn common_horizon(mut hs: impl Iterator<Item = Horizon>) -> Result<Horizon> {
    let first = hs.next().ok_or_else(|| Error::contract("empty dataset"))?;
    if hs.any(|h| h != first) {
        return Err(Error::contract("dataset mixes prediction horizons"));
    }
    Ok(first)
}

/// k-fold CV over already-normalized samples.
pub fn cross_validate(
    samples: &[Sample],
    arch: Architecture,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    jobs: usize,
) -> Result<CvOutcome> {
    let horizon = common_horizon(samples.iter().map(|s| s.horizon))?;
    let labels: Vec<bool> = samples.iter().map(|s| s.label).collect();
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    let folds = run_folds(&labels, arch, model_cfg, cfg, jobs, |tr, va| Ok((pick(tr), pick(va), None)))?;
    outcome(arch, horizon, folds)
}

/// k-fold CV over raw windows; each fold fits its normalizer on its own
/// training windows.
pub fn cross_validate_windows(
    windows: &[LabeledWindow],
    arch: Architecture,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    jobs: usize,
) -> Result<CvOutcome> {
    let horizon = common_horizon(windows.iter().map(|w| w.horizon))?;
    let labels: Vec<bool> = windows.iter().map(|w| w.label.is_positive()).collect();
    let folds = run_folds(&labels, arch, model_cfg, cfg, jobs, |tr, va| {
        let train_w: Vec<LabeledWindow> = tr.iter().map(|&i| windows[i].clone()).collect();
        let val_w: Vec<LabeledWindow> = va.iter().map(|&i| windows[i].clone()).collect();
        let stats = fit_normalizer(&train_w)?;
        Ok((
            samples_from_windows(&train_w, &stats)?,
            samples_from_windows(&val_w, &stats)?,
            Some(stats),
        ))
    })?;
    outcome(arch, horizon, folds)
}
