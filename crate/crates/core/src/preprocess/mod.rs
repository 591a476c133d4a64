//! Irregular vital series → fixed 15-minute grid of normalized values.
//!
//! Per vital: Z-score with training-fold statistics, fit a natural cubic
//! spline through the normalized observations, then sample it on the grid.

mod spline;

use serde::{Deserialize, Serialize};

use crate::cohort::{hours_between, LabeledWindow, VitalKind, WINDOW_HOURS};
use crate::error::{Error, Result};

pub use spline::{spline_fit, SplineModel};

/// Number of grid points in a 24-hour window.
pub const GRID_LEN: usize = 96;
pub const GRID_STEP_HOURS: f64 = 0.25;
/// Lower bound on the standard deviation used for scaling.
pub const SD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KindStats {
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub spo2: KindStats,
    pub hr: KindStats,
    pub temp: KindStats,
}

impl NormStats {
    pub fn get(&self, kind: VitalKind) -> KindStats {
        match kind {
            VitalKind::Spo2 => self.spo2,
            VitalKind::Hr => self.hr,
            VitalKind::Temp => self.temp,
        }
    }
}

fn population_stats(mut values: Vec<f64>) -> KindStats {
    // summing in sorted order makes the result independent of input order
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    dev.sort_by(f64::total_cmp);
    let var = dev.iter().sum::<f64>() / n;
    KindStats { mean, sd: var.sqrt() }
}

/// Per-vital mean and population SD over every raw observation in `windows`.
pub fn fit_normalizer(windows: &[LabeledWindow]) -> Result<NormStats> {
    let mut per_kind: [Vec<f64>; 3] = Default::default();
    for w in windows {
        for kind in VitalKind::ALL {
            per_kind[kind.column()].extend(w.series(kind).iter().map(|&(_, v)| v));
        }
    }
    for kind in VitalKind::ALL {
        if per_kind[kind.column()].is_empty() {
            return Err(Error::contract(format!("cannot fit normalizer: no {kind} observations")));
        }
    }
    let [spo2, hr, temp] = per_kind.map(population_stats);
    Ok(NormStats { spo2, hr, temp })
}

pub fn zscore(values: &[f64], stats: KindStats) -> Vec<f64> {
    let sd = stats.sd.max(SD_FLOOR);
    values.iter().map(|v| (v - stats.mean) / sd).collect()
}

/// Grid times in hours relative to the window end: −23.75, −23.5, …, 0.
pub fn grid_times() -> Vec<f64> {
    (1..=GRID_LEN).map(|k| -WINDOW_HOURS + GRID_STEP_HOURS * k as f64).collect()
}

/// Samples `spline` (knots in hours relative to the window end) on the grid.
pub fn resample(spline: &SplineModel) -> Vec<f64> {
    grid_times().into_iter().map(|t| spline.eval(t)).collect()
}

/// Time-major `len × 3` matrix of model inputs; columns follow [`VitalKind::ALL`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 3]>", into = "Vec<[f64; 3]>")]
pub struct SeqGrid {
    rows: Vec<[f64; 3]>,
}

impl TryFrom<Vec<[f64; 3]>> for SeqGrid {
    type Error = Error;
    fn try_from(rows: Vec<[f64; 3]>) -> Result<Self> {
        SeqGrid::new(rows)
    }
}

impl From<SeqGrid> for Vec<[f64; 3]> {
    fn from(g: SeqGrid) -> Self {
        g.rows
    }
}

impl SeqGrid {
    pub fn new(rows: Vec<[f64; 3]>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::contract("empty sequence grid"));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::contract("sequence grid contains non-finite values"));
        }
        Ok(SeqGrid { rows })
    }

    pub fn zeros(len: usize) -> Self {
        SeqGrid { rows: vec![[0.0; 3]; len] }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[[f64; 3]] {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.rows
    }

    /// The row at the window end (t = 0).
    pub fn last_row(&self) -> [f64; 3] {
        *self.rows.last().expect("grid is never empty")
    }

    pub fn column(&self, kind: VitalKind) -> Vec<f64> {
        self.rows.iter().map(|r| r[kind.column()]).collect()
    }
}

/// Normalize → spline → resample for each vital of one window.
pub fn build_seq_grid(window: &LabeledWindow, stats: &NormStats) -> Result<SeqGrid> {
    let mut rows = vec![[0.0; 3]; GRID_LEN];
    for kind in VitalKind::ALL {
        let series = window.series(kind);
        let times: Vec<f64> = series.iter().map(|&(t, _)| hours_between(window.window_end, t)).collect();
        let raw: Vec<f64> = series.iter().map(|&(_, v)| v).collect();
        let spline = spline_fit(&times, &zscore(&raw, stats.get(kind)))
            .map_err(|e| Error::contract(format!("{} {kind}: {e}", window.encounter_id)))?;
        for (row, v) in rows.iter_mut().zip(resample(&spline)) {
            row[kind.column()] = v;
        }
    }
    SeqGrid::new(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{hours, Horizon, Label, NonSeqVector, Timestamp};
    use chrono::{TimeZone, Utc};

    fn end() -> Timestamp {
        Utc.with_ymd_and_hms(2021, 6, 2, 0, 0, 0).unwrap()
    }

    fn window(series: [Vec<(f64, f64)>; 3]) -> LabeledWindow {
        LabeledWindow {
            encounter_id: "E".into(),
            horizon: Horizon::new(24).unwrap(),
            label: Label::Negative,
            window_end: end(),
            raw_series: series.map(|s| s.into_iter().map(|(h, v)| (end() + hours(h), v)).collect()),
            nonseq: NonSeqVector([0.0; 9]),
        }
    }

    #[test]
    fn hr_population_moments() {
        let w = window([
            vec![(-20.0, 95.0), (-2.0, 97.0)],
            vec![(-20.0, 80.0), (-2.0, 100.0)],
            vec![(-20.0, 98.0), (-2.0, 98.0)],
        ]);
        let s = fit_normalizer(&[w]).unwrap();
        assert_eq!(s.hr, KindStats { mean: 90.0, sd: 10.0 });
        assert_eq!(s.temp.sd, 0.0);
    }

    #[test]
    fn normalizer_needs_every_kind() {
        let w = window([vec![], vec![(-1.0, 80.0)], vec![(-1.0, 98.0)]]);
        assert!(fit_normalizer(&[w]).is_err());
        assert!(fit_normalizer(&[]).is_err());
    }

    #[test]
    fn zscore_cases() {
        let st = KindStats { mean: 100.0, sd: 10.0 };
        assert_eq!(zscore(&[90.0, 100.0, 110.0], st), vec![-1.0, 0.0, 1.0]);
        let flat = KindStats { mean: 98.0, sd: 0.0 };
        assert_eq!(zscore(&[98.0, 98.0], flat), vec![0.0, 0.0]);
    }

    #[test]
    fn grid_ends_at_window_end() {
        let g = grid_times();
        assert_eq!(g.len(), 96);
        assert_eq!(g[0], -23.75);
        assert_eq!(g[95], 0.0);
    }

    #[test]
    fn clamped_outside_observed_range() {
        let s = spline_fit(&[-20.0, -4.0], &[1.0, 5.0]).unwrap();
        let r = resample(&s);
        for (t, v) in grid_times().iter().zip(&r) {
            if *t > -4.0 {
                assert_eq!(*v, 5.0);
            }
            if *t < -20.0 {
                assert_eq!(*v, 1.0);
            }
        }
    }

    #[test]
    fn on_grid_observations_are_reproduced() {
        let times: Vec<f64> = grid_times().into_iter().step_by(8).collect();
        let vals: Vec<f64> = times.iter().map(|t| (t / 3.0).sin()).collect();
        let r = resample(&spline_fit(&times, &vals).unwrap());
        for (i, v) in vals.iter().enumerate() {
            assert!((r[i * 8] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_at_mean_gives_zero_grid() {
        let w = window([
            vec![(-23.0, 96.0), (-10.0, 96.0), (-1.0, 96.0)],
            vec![(-22.0, 85.0), (-3.0, 85.0)],
            vec![(-20.0, 98.2), (-0.5, 98.2)],
        ]);
        let stats = NormStats {
            spo2: KindStats { mean: 96.0, sd: 2.0 },
            hr: KindStats { mean: 85.0, sd: 15.0 },
            temp: KindStats { mean: 98.2, sd: 1.0 },
        };
        let g = build_seq_grid(&w, &stats).unwrap();
        assert_eq!(g.len(), 96);
        assert!(g.rows().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn columns_are_independent() {
        let base = [
            vec![(-23.0, 96.0), (-10.0, 94.0), (-1.0, 97.0)],
            vec![(-22.0, 85.0), (-3.0, 95.0)],
            vec![(-20.0, 98.2), (-0.5, 99.0)],
        ];
        let stats = fit_normalizer(&[window(base.clone())]).unwrap();
        let a = build_seq_grid(&window(base.clone()), &stats).unwrap();
        let mut changed = base;
        changed[1][0].1 = 120.0;
        let b = build_seq_grid(&window(changed), &stats).unwrap();
        assert_eq!(a.column(VitalKind::Spo2), b.column(VitalKind::Spo2));
        assert_eq!(a.column(VitalKind::Temp), b.column(VitalKind::Temp));
        assert_ne!(a.column(VitalKind::Hr), b.column(VitalKind::Hr));
    }
}
