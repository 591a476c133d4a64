//! Occlusion sensitivity and architecture/horizon comparison tables.

use std::fmt::Write as _;

use serde::Serialize;

use crate::cohort::{Horizon, LabeledWindow, NonSeqVector, VitalKind};
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::metrics::Metrics;
use crate::models::{Architecture, ModelConfig, ModelParams};
use crate::preprocess::SeqGrid;
use crate::training::{cross_validate, cross_validate_windows, score_samples, CvOutcome, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OcclusionKind {
    /// Non-SEQ slots set to zero.
    NonSeq(&'static [usize]),
    /// One full normalized grid column set to zero.
    SeqChannel(VitalKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OcclusionTarget {
    pub name: &'static str,
    pub kind: OcclusionKind,
}

const TARGETS: [OcclusionTarget; 10] = [
    OcclusionTarget {
        name: "sex",
        kind: OcclusionKind::NonSeq(&[NonSeqVector::SEX]),
    },
    OcclusionTarget {
        name: "obesity",
        kind: OcclusionKind::NonSeq(&[NonSeqVector::OBESITY]),
    },
    OcclusionTarget {
        name: "age",
        kind: OcclusionKind::NonSeq(&[NonSeqVector::AGE_GROUP]),
    },
    OcclusionTarget {
        name: "diabetes",
        kind: OcclusionKind::NonSeq(&NonSeqVector::DIABETES),
    },
    OcclusionTarget {
        name: "hypertension",
        kind: OcclusionKind::NonSeq(&[NonSeqVector::HYPERTENSION]),
    },
    OcclusionTarget {
        name: "vac_time",
        kind: OcclusionKind::NonSeq(&[NonSeqVector::VACCINATION_MONTHS]),
    },
    OcclusionTarget {
        name: "vac_status",
        kind: OcclusionKind::NonSeq(&[NonSeqVector::VACCINATION_STATUS]),
    },
    OcclusionTarget {
        name: "hr",
        kind: OcclusionKind::SeqChannel(VitalKind::Hr),
    },
    OcclusionTarget {
        name: "spo2",
        kind: OcclusionKind::SeqChannel(VitalKind::Spo2),
    },
    OcclusionTarget {
        name: "temperature",
        kind: OcclusionKind::SeqChannel(VitalKind::Temp),
    },
];

/// Label of the un-occluded row.
pub const NO_OCCLUSION: &str = "None";

impl OcclusionTarget {
    pub fn all() -> &'static [OcclusionTarget] {
        &TARGETS
    }

    pub fn parse(name: &str) -> Result<Self> {
        TARGETS.iter().copied().find(|t| t.name == name).ok_or_else(|| {
            let names: Vec<&str> = TARGETS.iter().map(|t| t.name).collect();
            Error::config(format!("unknown occlusion target '{name}' (one of {})", names.join(", ")))
        })
    }
}

/// Copy of the inputs with `target` zeroed.
pub fn occlude(grid: &SeqGrid, nonseq: &NonSeqVector, target: OcclusionTarget) -> (SeqGrid, NonSeqVector) {
    let mut g = grid.clone();
    let mut n = *nonseq;
    match target.kind {
        OcclusionKind::NonSeq(slots) => slots.iter().for_each(|&i| n.0[i] = 0.0),
        OcclusionKind::SeqChannel(kind) => g.rows_mut().iter_mut().for_each(|r| r[kind.column()] = 0.0),
    }
    (g, n)
}

pub fn occlude_sample(s: &Sample, target: OcclusionTarget) -> Sample {
    let (grid, nonseq) = occlude(&s.grid, &s.nonseq, target);
    Sample {
        grid,
        nonseq,
        ..s.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OcclusionRow {
    pub target: String,
    pub metrics: Metrics,
}

/// One horizon's occlusion results; the first row is [`NO_OCCLUSION`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OcclusionReport {
    pub horizon: Horizon,
    pub rows: Vec<OcclusionRow>,
}

impl OcclusionReport {
    pub fn get(&self, target: &str) -> Option<Metrics> {
        self.rows.iter().find(|r| r.target == target).map(|r| r.metrics)
    }

    /// `metric(target) − metric(None)` for AUROC.
    pub fn auroc_delta(&self, target: &str) -> Option<f64> {
        Some(self.get(target)?.auroc - self.get(NO_OCCLUSION)?.auroc)
    }
}

fn evaluate(params: &ModelParams, samples: &[Sample], batch_size: usize) -> Result<Metrics> {
    Ok(score_samples(params, samples, batch_size)?.1)
}

fn rows_for(params: &ModelParams, samples: &[Sample], targets: &[OcclusionTarget], batch_size: usize) -> Result<Vec<OcclusionRow>> {
    let mut rows = vec![OcclusionRow {
        target: NO_OCCLUSION.into(),
        metrics: evaluate(params, samples, batch_size)?,
    }];
    for &t in targets {
        let occluded: Vec<Sample> = samples.iter().map(|s| occlude_sample(s, t)).collect();
        rows.push(OcclusionRow {
            target: t.name.into(),
            metrics: evaluate(params, &occluded, batch_size)?,
        });
    }
    Ok(rows)
}

fn horizon_of(samples: &[Sample]) -> Result<Horizon> {
    samples.first().map(|s| s.horizon).ok_or_else(|| Error::contract("no samples to evaluate"))
}

/// Occlusion rows for one model on one sample set.
pub fn occlusion_report(
    params: &ModelParams,
    samples: &[Sample],
    targets: &[OcclusionTarget],
    batch_size: usize,
) -> Result<OcclusionReport> {
    Ok(OcclusionReport {
        horizon: horizon_of(samples)?,
        rows: rows_for(params, samples, targets, batch_size)?,
    })
}

/// Occlusion rows per CV fold (each model on its own validation fold),
/// averaged across folds.
pub fn occlusion_report_cv(cv: &CvOutcome, targets: &[OcclusionTarget], batch_size: usize) -> Result<OcclusionReport> {
    let per_fold = cv
        .folds
        .iter()
        .map(|f| rows_for(&f.params, &f.val_samples, targets, batch_size))
        .collect::<Result<Vec<_>>>()?;
    let first = per_fold.first().ok_or_else(|| Error::contract("no folds"))?;
    let rows = (0..first.len())
        .map(|i| {
            let all: Vec<Metrics> = per_fold.iter().map(|rows| rows[i].metrics).collect();
            Ok(OcclusionRow {
                target: first[i].target.clone(),
                metrics: Metrics::mean(&all)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OcclusionReport { horizon: cv.horizon, rows })
}

fn num(v: f64) -> String {
    format!("{v:.6}")
}

fn metric_columns(horizons: &[Horizon]) -> String {
    let mut out = String::new();
    for metric in ["accuracy", "auroc", "auprc"] {
        for h in horizons {
            let _ = write!(out, ",{metric}_{h}h");
        }
    }
    out
}

fn metric_cells(cells: &[Metrics]) -> String {
    let mut out = String::new();
    for pick in [|m: &Metrics| m.accuracy, |m: &Metrics| m.auroc, |m: &Metrics| m.auprc] {
        for m in cells {
            let _ = write!(out, ",{}", num(pick(m)));
        }
    }
    out
}

/// Rows = targets (None first), columns = metric × horizon.
pub fn occlusion_csv(reports: &[OcclusionReport]) -> Result<String> {
    let first = reports.first().ok_or_else(|| Error::contract("no occlusion reports"))?;
    let horizons: Vec<Horizon> = reports.iter().map(|r| r.horizon).collect();
    let mut out = format!("feature{}\n", metric_columns(&horizons));
    for (i, row) in first.rows.iter().enumerate() {
        let cells = reports
            .iter()
            .map(|r| {
                r.rows
                    .get(i)
                    .filter(|x| x.target == row.target)
                    .map(|x| x.metrics)
                    .ok_or_else(|| Error::contract("occlusion reports list different targets"))
            })
            .collect::<Result<Vec<_>>>()?;
        let _ = writeln!(out, "{}{}", row.target, metric_cells(&cells));
    }
    Ok(out)
}

/// Rows = architectures, columns = metric × horizon. Each entry of
/// `outcomes` is one architecture's CV results across horizons.
pub fn ablation_csv(outcomes: &[Vec<CvOutcome>]) -> Result<String> {
    let first = outcomes.first().ok_or_else(|| Error::contract("no ablation results"))?;
    let horizons: Vec<Horizon> = first.iter().map(|o| o.horizon).collect();
    let mut out = format!("architecture{}\n", metric_columns(&horizons));
    for per_arch in outcomes {
        let arch = per_arch.first().map(|o| o.arch).ok_or_else(|| Error::contract("empty ablation row"))?;
        if per_arch.iter().map(|o| o.horizon).collect::<Vec<_>>() != horizons {
            return Err(Error::contract("ablation rows cover different horizons"));
        }
        let cells: Vec<Metrics> = per_arch.iter().map(|o| o.average).collect();
        let _ = writeln!(out, "{}{}", arch.display_name(), metric_cells(&cells));
    }
    Ok(out)
}

pub const HORIZON_SWEEP_HEADER: &str = "horizon,architecture,accuracy,auroc,auprc";

/// One row per horizon.
pub fn horizon_sweep_csv(outcomes: &[CvOutcome]) -> String {
    let mut out = format!("{HORIZON_SWEEP_HEADER}\n");
    for o in outcomes {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            o.horizon.hours(),
            o.arch.code(),
            num(o.average.accuracy),
            num(o.average.auroc),
            num(o.average.auprc)
        );
    }
    out
}

/// Cross-validates every architecture on the same folds (same seed).
pub fn ablation_run(samples: &[Sample], model_cfg: &ModelConfig, cfg: &TrainConfig, jobs: usize) -> Result<Vec<CvOutcome>> {
    Architecture::ALL
        .iter()
        .map(|&a| cross_validate(samples, a, model_cfg, cfg, jobs))
        .collect()
}

/// As [`ablation_run`], normalizing per fold from raw windows.
pub fn ablation_run_windows(
    windows: &[LabeledWindow],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    jobs: usize,
) -> Result<Vec<CvOutcome>> {
    Architecture::ALL
        .iter()
        .map(|&a| cross_validate_windows(windows, a, model_cfg, cfg, jobs))
        .collect()
}
