//! Encounter records, cohort filtering, outcome labeling and window cutting.

mod csvio;

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csvio::{load_dir, parse_encounters, write_tables, CsvTables, Rejection, RejectionReport};

pub type Timestamp = DateTime<Utc>;

/// Hours from `from` to `to` (negative when `to` is earlier).
pub fn hours_between(from: Timestamp, to: Timestamp) -> f64 {
    (to - from).num_milliseconds() as f64 / 3_600_000.0
}

pub(crate) fn hours(h: f64) -> Duration {
    Duration::milliseconds((h * 3_600_000.0).round() as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Diabetes {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "no_comp")]
    WithoutComplications,
    #[serde(rename = "with_comp")]
    WithComplications,
}

impl Diabetes {
    pub const ALL: [Diabetes; 3] = [
        Diabetes::None,
        Diabetes::WithoutComplications,
        Diabetes::WithComplications,
    ];

    pub fn one_hot(self) -> [f64; 3] {
        match self {
            Diabetes::None => [1.0, 0.0, 0.0],
            Diabetes::WithoutComplications => [0.0, 1.0, 0.0],
            Diabetes::WithComplications => [0.0, 0.0, 1.0],
        }
    }

    /// Inverse of [`Diabetes::one_hot`]; `None` unless exactly one slot is 1.
    pub fn from_one_hot(slots: [f64; 3]) -> Option<Self> {
        match slots {
            [1.0, 0.0, 0.0] => Some(Diabetes::None),
            [0.0, 1.0, 0.0] => Some(Diabetes::WithoutComplications),
            [0.0, 0.0, 1.0] => Some(Diabetes::WithComplications),
            _ => None,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Diabetes::None => "none",
            Diabetes::WithoutComplications => "no_comp",
            Diabetes::WithComplications => "with_comp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VitalKind {
    Spo2,
    Hr,
    Temp,
}

impl VitalKind {
    /// Column order of the resampled grid.
    pub const ALL: [VitalKind; 3] = [VitalKind::Spo2, VitalKind::Hr, VitalKind::Temp];

    pub fn column(self) -> usize {
        match self {
            VitalKind::Spo2 => 0,
            VitalKind::Hr => 1,
            VitalKind::Temp => 2,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            VitalKind::Spo2 => "spo2",
            VitalKind::Hr => "hr",
            VitalKind::Temp => "temp",
        }
    }

    /// Sanity bounds applied at parse time.
    pub fn in_bounds(self, v: f64) -> bool {
        match self {
            VitalKind::Spo2 => (0.0..=100.0).contains(&v),
            VitalKind::Hr => v > 0.0 && v < 400.0,
            VitalKind::Temp => v > 80.0 && v < 115.0,
        }
    }
}

impl fmt::Display for VitalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VitalObservation {
    pub time: Timestamp,
    pub kind: VitalKind,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Mortality,
    IcuAdmission,
    Intubation,
}

impl EventKind {
    pub const ALL: [EventKind; 3] = [EventKind::Mortality, EventKind::IcuAdmission, EventKind::Intubation];

    pub fn code(self) -> &'static str {
        match self {
            EventKind::Mortality => "mortality",
            EventKind::IcuAdmission => "icu",
            EventKind::Intubation => "intubation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdverseEvent {
    pub time: Timestamp,
    pub kind: EventKind,
}

/// One hospital encounter. `vitals` is sorted by (time, kind) and holds at
/// most one observation per (time, kind).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encounter {
    pub patient_id: String,
    pub encounter_id: String,
    pub encounter_start: Timestamp,
    pub covid_positive: bool,
    pub sex: Sex,
    pub age_years: u32,
    pub diabetes: Diabetes,
    pub hypertension: bool,
    pub obesity: bool,
    pub vaccinated: bool,
    pub second_dose_date: Option<Timestamp>,
    pub vitals: Vec<VitalObservation>,
    pub events: Vec<AdverseEvent>,
}

impl Encounter {
    pub fn series(&self, kind: VitalKind) -> impl Iterator<Item = &VitalObservation> {
        self.vitals.iter().filter(move |o| o.kind == kind)
    }

    pub fn first_vital_time(&self) -> Option<Timestamp> {
        self.vitals.iter().map(|o| o.time).min()
    }

    pub fn last_vital_time(&self) -> Option<Timestamp> {
        self.vitals.iter().map(|o| o.time).max()
    }
}

/// Prediction horizon in hours; one of 3, 6, …, 24.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Horizon(u32);

impl Horizon {
    pub const ALL: [Horizon; 8] = [
        Horizon(3),
        Horizon(6),
        Horizon(9),
        Horizon(12),
        Horizon(15),
        Horizon(18),
        Horizon(21),
        Horizon(24),
    ];

    pub fn new(hours: u32) -> Result<Self> {
        if hours % 3 == 0 && (3..=24).contains(&hours) {
            Ok(Horizon(hours))
        } else {
            Err(Error::config(format!(
                "horizon must be one of 3, 6, 9, 12, 15, 18, 21, 24 hours, got {hours}"
            )))
        }
    }

    pub fn hours(self) -> u32 {
        self.0
    }
}

impl TryFrom<u32> for Horizon {
    type Error = Error;
    fn try_from(h: u32) -> Result<Self> {
        Horizon::new(h)
    }
}

impl From<Horizon> for u32 {
    fn from(h: Horizon) -> u32 {
        h.0
    }
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Static patient features in model order:
/// `[sex, age_group, diabetes×3, hypertension, vaccination_status, vaccination_months, obesity]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonSeqVector(pub [f64; 9]);

impl NonSeqVector {
    pub const SEX: usize = 0;
    pub const AGE_GROUP: usize = 1;
    pub const DIABETES: [usize; 3] = [2, 3, 4];
    pub const HYPERTENSION: usize = 5;
    pub const VACCINATION_STATUS: usize = 6;
    pub const VACCINATION_MONTHS: usize = 7;
    pub const OBESITY: usize = 8;

    pub fn diabetes(&self) -> Option<Diabetes> {
        let d = Self::DIABETES;
        Diabetes::from_one_hot([self.0[d[0]], self.0[d[1]], self.0[d[2]]])
    }
}

/// Equal-width age groups; ages below `first_edge` fall into group 1 and
/// everything from the last edge upward into group `groups`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeBins {
    pub first_edge: u32,
    pub width: u32,
    pub groups: u32,
}

impl Default for AgeBins {
    fn default() -> Self {
        AgeBins {
            first_edge: 18,
            width: 5,
            groups: 18,
        }
    }
}

impl AgeBins {
    pub fn group(&self, age_years: u32) -> u32 {
        if age_years < self.first_edge {
            return 1;
        }
        (1 + (age_years - self.first_edge) / self.width.max(1)).min(self.groups)
    }
}

const THIRTY_DAYS_SECS: i64 = 30 * 86_400;

/// Encodes the static features as of `prediction_time`.
pub fn encode_nonseq(enc: &Encounter, prediction_time: Timestamp) -> NonSeqVector {
    encode_nonseq_with(enc, prediction_time, &AgeBins::default())
}

pub fn encode_nonseq_with(enc: &Encounter, prediction_time: Timestamp, bins: &AgeBins) -> NonSeqVector {
    let b = |x: bool| if x { 1.0 } else { 0.0 };
    let months = match (enc.vaccinated, enc.second_dose_date) {
        (true, Some(dose)) => (prediction_time - dose).num_seconds().div_euclid(THIRTY_DAYS_SECS) as f64,
        _ => 0.0,
    };
    let d = enc.diabetes.one_hot();
    NonSeqVector([
        match enc.sex {
            Sex::Male => 0.0,
            Sex::Female => 1.0,
        },
        bins.group(enc.age_years) as f64,
        d[0],
        d[1],
        d[2],
        b(enc.hypertension),
        b(enc.vaccinated),
        months,
        b(enc.obesity),
    ])
}

/// Counts after each filtering step, in application order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct InclusionSummary {
    pub input: usize,
    pub most_recent: usize,
    pub covid_positive: usize,
    pub with_vitals: usize,
}

pub fn apply_inclusion_criteria(encounters: Vec<Encounter>) -> Vec<Encounter> {
    apply_inclusion_criteria_with_summary(encounters).0
}

/// Keeps each patient's most recent encounter, then COVID-positive ones, then
/// those with at least one vital observation. Relative order is preserved.
pub fn apply_inclusion_criteria_with_summary(encounters: Vec<Encounter>) -> (Vec<Encounter>, InclusionSummary) {
    let mut summary = InclusionSummary {
        input: encounters.len(),
        ..Default::default()
    };
    let mut latest: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, e) in encounters.iter().enumerate() {
        latest
            .entry(e.patient_id.as_str())
            .and_modify(|j| {
                let cur = &encounters[*j];
                if (e.encounter_start, &e.encounter_id) > (cur.encounter_start, &cur.encounter_id) {
                    *j = i;
                }
            })
            .or_insert(i);
    }
    let mut keep = vec![false; encounters.len()];
    latest.values().for_each(|&i| keep[i] = true);

    let kept: Vec<Encounter> = encounters
        .into_iter()
        .zip(keep)
        .filter_map(|(e, k)| k.then_some(e))
        .collect();
    summary.most_recent = kept.len();
    let kept: Vec<Encounter> = kept.into_iter().filter(|e| e.covid_positive).collect();
    summary.covid_positive = kept.len();
    let kept: Vec<Encounter> = kept.into_iter().filter(|e| !e.vitals.is_empty()).collect();
    summary.with_vitals = kept.len();
    (kept, summary)
}

/// Same-kind events further apart than this start a new episode.
pub const EPISODE_GAP_HOURS: i64 = 7 * 24;

/// Reference deterioration time of an encounter.
///
/// Events of each kind are split into episodes wherever consecutive events are
/// more than a week apart; only the latest episode of a kind counts, starting
/// at its first event. The result is the earliest such start over all kinds.
pub fn derive_deterioration_time(enc: &Encounter) -> Option<Timestamp> {
    EventKind::ALL
        .iter()
        .filter_map(|&kind| {
            let mut times: Vec<Timestamp> = enc.events.iter().filter(|e| e.kind == kind).map(|e| e.time).collect();
            times.sort();
            let mut start = *times.first()?;
            for w in times.windows(2) {
                if w[1] - w[0] > Duration::hours(EPISODE_GAP_HOURS) {
                    start = w[1];
                }
            }
            Some(start)
        })
        .min()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    pub fn as_f64(self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            0.0
        }
    }
}

/// Hours of input history fed to the model.
pub const WINDOW_HOURS: f64 = 24.0;
/// Minimum monitoring before the reference time.
pub const COVERAGE_HOURS: f64 = 48.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledWindow {
    pub encounter_id: String,
    pub horizon: Horizon,
    pub label: Label,
    pub window_end: Timestamp,
    /// Per vital in [`VitalKind::ALL`] order, observations inside
    /// `[window_end − 24h, window_end]`.
    pub raw_series: [Vec<(Timestamp, f64)>; 3],
    pub nonseq: NonSeqVector,
}

impl LabeledWindow {
    pub fn window_start(&self) -> Timestamp {
        self.window_end - hours(WINDOW_HOURS)
    }

    pub fn series(&self, kind: VitalKind) -> &[(Timestamp, f64)] {
        &self.raw_series[kind.column()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WindowRejection {
    NoVitals,
    /// Monitoring began less than 48 hours before the reference time.
    InsufficientCoverage { hours: f64 },
    TooFewObservations { kind: VitalKind, count: usize },
}

impl fmt::Display for WindowRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WindowRejection::NoVitals => f.write_str("no vital observations"),
            WindowRejection::InsufficientCoverage { hours } => {
                write!(f, "only {hours:.2} h of monitoring before reference time (48 h required)")
            }
            WindowRejection::TooFewObservations { kind, count } => {
                write!(f, "{kind} has {count} observation(s) in the input window (2 required)")
            }
        }
    }
}

/// Cuts the labeled input window for one horizon, or explains why none exists.
pub fn cut_window(
    enc: &Encounter,
    horizon: Horizon,
    bins: &AgeBins,
) -> std::result::Result<LabeledWindow, WindowRejection> {
    let first = enc.first_vital_time().ok_or(WindowRejection::NoVitals)?;
    let (label, reference) = match derive_deterioration_time(enc) {
        Some(t) => (Label::Positive, t),
        None => (Label::Negative, enc.last_vital_time().ok_or(WindowRejection::NoVitals)?),
    };
    let covered = hours_between(first, reference);
    if covered < COVERAGE_HOURS {
        return Err(WindowRejection::InsufficientCoverage { hours: covered });
    }
    let window_end = reference - Duration::hours(horizon.hours() as i64);
    let window_start = window_end - hours(WINDOW_HOURS);
    let mut raw_series: [Vec<(Timestamp, f64)>; 3] = Default::default();
    for o in &enc.vitals {
        if o.time >= window_start && o.time <= window_end {
            raw_series[o.kind.column()].push((o.time, o.value));
        }
    }
    for kind in VitalKind::ALL {
        let count = raw_series[kind.column()].len();
        if count < 2 {
            return Err(WindowRejection::TooFewObservations { kind, count });
        }
    }
    Ok(LabeledWindow {
        encounter_id: enc.encounter_id.clone(),
        horizon,
        label,
        window_end,
        raw_series,
        nonseq: encode_nonseq_with(enc, window_end, bins),
    })
}

pub fn extract_windows(enc: &Encounter, horizon: Horizon) -> Option<LabeledWindow> {
    cut_window(enc, horizon, &AgeBins::default()).ok()
}

/// Windows for every encounter at one horizon, plus a rejection line for each
/// encounter that yields none.
pub fn extract_all(encounters: &[Encounter], horizon: Horizon, report: &mut RejectionReport) -> Vec<LabeledWindow> {
    let bins = AgeBins::default();
    let mut out = Vec::with_capacity(encounters.len());
    for e in encounters {
        match cut_window(e, horizon, &bins) {
            Ok(w) => out.push(w),
            Err(why) => report.push(format!("encounter:{}", e.encounter_id), why.to_string()),
        }
    }
    out
}
