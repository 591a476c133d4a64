//! Seeded synthetic cohort with a known deterioration signature.
//!
//! Each vital is `class level + patient offset + AR(1) noise`, observed at
//! visits spaced 4–5 hours apart. Deteriorating patients also get a linear
//! ramp over the last `drift_hours` before their adverse event; the ramp is
//! steepest in HR, milder in SpO2 (downwards) and weakest in temperature.

use chrono::{Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cohort::{
    write_tables, AdverseEvent, CsvTables, Diabetes, Encounter, EventKind, Sex, Timestamp, VitalKind, VitalObservation,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub sd: f64,
}

/// Per-vital level and spread, indexed like [`VitalKind::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassVitals {
    pub spo2: Moments,
    pub hr: Moments,
    pub temp: Moments,
}

impl ClassVitals {
    pub fn get(&self, kind: VitalKind) -> Moments {
        match kind {
            VitalKind::Spo2 => self.spo2,
            VitalKind::Hr => self.hr,
            VitalKind::Temp => self.temp,
        }
    }
}

/// Class-conditional static attributes. Proportions are in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Demographics {
    pub age: Moments,
    pub female: f64,
    pub diabetes_without_complications: f64,
    pub diabetes_with_complications: f64,
    pub hypertension: f64,
    pub vaccinated: f64,
    /// Months between the second dose and the reference time, vaccinated only.
    pub vaccination_months: Moments,
    pub obesity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub n_patients: usize,
    pub prevalence: f64,
    pub deteriorated: ClassVitals,
    pub stable: ClassVitals,
    pub demographics_deteriorated: Demographics,
    pub demographics_stable: Demographics,
    /// Share of each vital's variance that is a fixed per-patient offset.
    pub between_patient_fraction: f64,
    /// Lag-one-hour autocorrelation of the within-patient noise.
    pub ar_coefficient: f64,
    pub drift_hours: f64,
    /// Ramp size at the event in units of the stable-class SD, signed, per
    /// vital in [`VitalKind::ALL`] order.
    pub drift_gain: [f64; 3],
    pub sampling_interval_hours: (f64, f64),
    pub monitoring_hours: (f64, f64),
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        let m = |mean, sd| Moments { mean, sd };
        CohortSpec {
            n_patients: 1000,
            prevalence: 6104.0 / 37006.0,
            deteriorated: ClassVitals {
                spo2: m(95.2, 4.5),
                hr: m(93.98, 27.1),
                temp: m(98.37, 1.6),
            },
            stable: ClassVitals {
                spo2: m(96.2, 2.7),
                hr: m(82.9, 18.57),
                temp: m(98.2, 1.4),
            },
            demographics_deteriorated: Demographics {
                age: m(66.0, 18.4),
                female: 0.415,
                diabetes_without_complications: 0.247,
                diabetes_with_complications: 0.018,
                hypertension: 0.445,
                vaccinated: 0.391,
                vaccination_months: m(-0.67, 6.2),
                obesity: 0.164,
            },
            demographics_stable: Demographics {
                age: m(63.1, 18.0),
                female: 0.575,
                diabetes_without_complications: 0.180,
                diabetes_with_complications: 0.012,
                hypertension: 0.380,
                vaccinated: 0.542,
                vaccination_months: m(-0.94, 7.3),
                obesity: 0.173,
            },
            between_patient_fraction: 0.1,
            ar_coefficient: 0.8,
            drift_hours: 48.0,
            drift_gain: [-1.0, 2.0, 0.5],
            sampling_interval_hours: (4.0, 5.0),
            monitoring_hours: (72.0, 120.0),
            seed: 0,
        }
    }
}

/// Physiological clamp applied to every generated value.
pub fn vital_range(kind: VitalKind) -> (f64, f64) {
    match kind {
        VitalKind::Spo2 => (50.0, 100.0),
        VitalKind::Hr => (30.0, 220.0),
        VitalKind::Temp => (93.0, 108.0),
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("cohort spec: {m}")));
        if self.n_patients == 0 {
            return bad("n_patients must be positive");
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return bad("prevalence must lie in (0, 1)");
        }
        for c in [&self.deteriorated, &self.stable] {
            for k in VitalKind::ALL {
                if !(c.get(k).sd > 0.0) {
                    return bad("vital SDs must be positive");
                }
            }
        }
        for d in [&self.demographics_deteriorated, &self.demographics_stable] {
            let ps = [d.female, d.hypertension, d.vaccinated, d.obesity, d.diabetes_without_complications, d.diabetes_with_complications];
            if ps.iter().any(|p| !(0.0..=1.0).contains(p)) || d.diabetes_without_complications + d.diabetes_with_complications > 1.0 {
                return bad("proportions must lie in [0, 1]");
            }
            if !(d.age.sd > 0.0 && d.vaccination_months.sd > 0.0) {
                return bad("demographic SDs must be positive");
            }
        }
        if !(0.0..1.0).contains(&self.between_patient_fraction) {
            return bad("between_patient_fraction must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.ar_coefficient) {
            return bad("ar_coefficient must lie in [0, 1)");
        }
        if !(self.drift_hours > 0.0) {
            return bad("drift_hours must be positive");
        }
        let (a, b) = self.sampling_interval_hours;
        if !(a > 0.0 && b >= a) {
            return bad("sampling interval must be a positive range");
        }
        let (lo, hi) = self.monitoring_hours;
        if !(lo >= 48.0 && hi >= lo) {
            return bad("monitoring must last at least 48 hours");
        }
        Ok(())
    }

    pub fn positives(&self) -> usize {
        (self.n_patients as f64 * self.prevalence).round() as usize
    }

    /// Expected deteriorated-minus-stable mean of `kind` at `hours_before`
    /// the event.
    pub fn expected_gap(&self, kind: VitalKind, hours_before: f64) -> f64 {
        let level = self.deteriorated.get(kind).mean - self.stable.get(kind).mean;
        level + self.ramp(kind, hours_before)
    }

    fn ramp(&self, kind: VitalKind, hours_before: f64) -> f64 {
        let frac = (1.0 - hours_before / self.drift_hours).clamp(0.0, 1.0);
        self.drift_gain[kind.column()] * self.stable.get(kind).sd * frac
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn bernoulli(rng: &mut ChaCha8Rng, p: f64) -> bool {
    rng.gen::<f64>() < p
}

fn at_seconds(t0: Timestamp, hours: f64) -> Timestamp {
    t0 + Duration::seconds((hours * 3600.0).round() as i64)
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn patient(spec: &CohortSpec, index: usize, positive: bool) -> Encounter {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    let demo = if positive {
        &spec.demographics_deteriorated
    } else {
        &spec.demographics_stable
    };
    let vitals_spec = if positive { &spec.deteriorated } else { &spec.stable };

    let base = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
    let start = base + Duration::seconds(rng.gen_range(0..365 * 86_400));
    let length = rng.gen_range(spec.monitoring_hours.0..=spec.monitoring_hours.1);

    let age = (demo.age.mean + demo.age.sd * normal(&mut rng)).round().clamp(18.0, 105.0) as u32;
    let sex = if bernoulli(&mut rng, demo.female) { Sex::Female } else { Sex::Male };
    let u: f64 = rng.gen();
    let diabetes = if u < demo.diabetes_without_complications {
        Diabetes::WithoutComplications
    } else if u < demo.diabetes_without_complications + demo.diabetes_with_complications {
        Diabetes::WithComplications
    } else {
        Diabetes::None
    };
    let hypertension = bernoulli(&mut rng, demo.hypertension);
    let obesity = bernoulli(&mut rng, demo.obesity);
    let vaccinated = bernoulli(&mut rng, demo.vaccinated);
    let months = demo.vaccination_months.mean + demo.vaccination_months.sd * normal(&mut rng);
    let end = at_seconds(start, length);
    let second_dose_date = vaccinated.then(|| at_seconds(end, -months * 30.0 * 24.0));

    // visit times in hours since start, strictly before `length`
    let mut visits = vec![0.0];
    loop {
        let next = visits.last().unwrap() + rng.gen_range(spec.sampling_interval_hours.0..=spec.sampling_interval_hours.1);
        if next >= length {
            break;
        }
        visits.push(next);
    }
    if !positive {
        // the stable stay ends with its last visit
        visits.push(length);
    }

    let mut vitals = Vec::with_capacity(visits.len() * 3);
    for kind in VitalKind::ALL {
        let m = vitals_spec.get(kind);
        let var = m.sd * m.sd;
        let offset = (var * spec.between_patient_fraction).sqrt() * normal(&mut rng);
        let sw = (var * (1.0 - spec.between_patient_fraction)).sqrt();
        let (lo, hi) = vital_range(kind);
        let mut noise = sw * normal(&mut rng);
        let mut prev_t = 0.0;
        for &t in &visits {
            let dt: f64 = t - prev_t;
            let a = spec.ar_coefficient.powf(dt);
            noise = a * noise + sw * (1.0 - a * a).sqrt() * normal(&mut rng);
            prev_t = t;
            let ramp = if positive { spec.ramp(kind, length - t) } else { 0.0 };
            let v = round2((m.mean + offset + noise + ramp).clamp(lo, hi));
            vitals.push(VitalObservation {
                time: at_seconds(start, t),
                kind,
                value: v,
            });
        }
    }
    vitals.sort_by_key(|o| (o.time, o.kind));

    let events = if positive {
        let kind = *[EventKind::Mortality, EventKind::IcuAdmission, EventKind::Intubation]
            .choose(&mut rng)
            .unwrap();
        vec![AdverseEvent { time: end, kind }]
    } else {
        vec![]
    };

    Encounter {
        patient_id: format!("P{index:06}"),
        encounter_id: format!("E{index:06}"),
        encounter_start: start,
        covid_positive: true,
        sex,
        age_years: age,
        diabetes,
        hypertension,
        obesity,
        vaccinated,
        second_dose_date,
        vitals,
        events,
    }
}

/// Exactly `round(n · prevalence)` deteriorating patients, placed by a seeded
/// shuffle. Each patient draws from its own generator stream.
pub fn generate_encounters(spec: &CohortSpec) -> Result<Vec<Encounter>> {
    spec.validate()?;
    let mut labels = vec![false; spec.n_patients];
    labels[..spec.positives()].iter_mut().for_each(|l| *l = true);
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    Ok(labels.iter().enumerate().map(|(i, &pos)| patient(spec, i, pos)).collect())
}

/// The cohort serialized as the three input tables.
pub fn generate_cohort(spec: &CohortSpec) -> Result<CsvTables> {
    write_tables(&generate_encounters(spec)?)
}
