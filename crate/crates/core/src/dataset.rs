//! Model-ready samples and their JSON-lines interchange format.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::cohort::{Horizon, LabeledWindow, NonSeqVector};
use crate::error::{Error, Result};
use crate::preprocess::{build_seq_grid, NormStats, SeqGrid};

/// One preprocessed window. Serialized field order is fixed:
/// `window_id, horizon, label, nonseq, grid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub window_id: String,
    pub horizon: Horizon,
    #[serde(with = "label01")]
    pub label: bool,
    pub nonseq: NonSeqVector,
    pub grid: SeqGrid,
}

mod label01 {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(D::Error::custom(format!("label must be 0 or 1, got {other}"))),
        }
    }
}

pub fn window_id(encounter_id: &str, horizon: Horizon) -> String {
    format!("{encounter_id}@{horizon}h")
}

impl Sample {
    pub fn from_window(w: &LabeledWindow, stats: &NormStats) -> Result<Self> {
        Ok(Sample {
            window_id: window_id(&w.encounter_id, w.horizon),
            horizon: w.horizon,
            label: w.label.is_positive(),
            nonseq: w.nonseq,
            grid: build_seq_grid(w, stats)?,
        })
    }
}

pub fn samples_from_windows(windows: &[LabeledWindow], stats: &NormStats) -> Result<Vec<Sample>> {
    windows.iter().map(|w| Sample::from_window(w, stats)).collect()
}

pub fn labels(samples: &[Sample]) -> Vec<bool> {
    samples.iter().map(|s| s.label).collect()
}

pub fn write_jsonl<W: Write>(samples: &[Sample], mut out: W) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            file: "dataset".into(),
            row: i + 1,
            message: e.to_string(),
        })?;
        out.push(s);
    }
    Ok(out)
}
