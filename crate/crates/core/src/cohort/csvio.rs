use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::Serialize;

use super::{AdverseEvent, Diabetes, Encounter, EventKind, Sex, Timestamp, VitalKind, VitalObservation};
use crate::error::{Error, Result};

pub const ENCOUNTERS_HEADER: [&str; 11] = [
    "patient_id",
    "encounter_id",
    "encounter_start",
    "covid_positive",
    "sex",
    "age_years",
    "diabetes",
    "hypertension",
    "obesity",
    "vaccinated",
    "second_dose_date",
];
pub const VITALS_HEADER: [&str; 4] = ["encounter_id", "time", "kind", "value"];
pub const EVENTS_HEADER: [&str; 3] = ["encounter_id", "time", "kind"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    /// `file:line` for input rows, `encounter:<id>` for whole-encounter rejections.
    pub row: String,
    pub reason: String,
}

/// Rows (or encounters) dropped without failing the whole load.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RejectionReport {
    pub entries: Vec<Rejection>,
}

impl RejectionReport {
    pub fn push(&mut self, row: impl Into<String>, reason: impl Into<String>) {
        self.entries.push(Rejection {
            row: row.into(),
            reason: reason.into(),
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn merge(&mut self, other: RejectionReport) {
        self.entries.extend(other.entries);
    }

    /// `row,reason` CSV.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["row", "reason"])?;
        for r in &self.entries {
            w.write_record([&r.row, &r.reason])?;
        }
        finish(w)
    }
}

fn parse_err(file: &str, row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        row,
        message: message.into(),
    }
}

pub(crate) fn parse_time(s: &str) -> Option<Timestamp> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    if let Ok(t) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S") {
        return Some(t.and_utc());
    }
    if let Ok(t) = NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S") {
        return Some(t.and_utc());
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| t.and_utc())
}

pub(crate) fn format_time(t: Timestamp) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    }
}

struct Table {
    name: &'static str,
    rows: Vec<(usize, csv::StringRecord)>,
}

fn read_table<R: Read>(name: &'static str, input: R, header: &[&str]) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if found.is_empty() || (found.len() == 1 && found[0].is_empty()) {
        // an entirely empty file is an empty table
        return Ok(Table { name, rows: vec![] });
    }
    if found != header {
        return Err(parse_err(name, 1, format!("expected header {}, found {}", header.join(","), found.join(","))));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(name, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(parse_err(name, line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        rows.push((line, rec));
    }
    Ok(Table { name, rows })
}

/// Joins the three input tables into encounters.
///
/// Malformed rows fail the load with their line number. Rows that are well
/// formed but unusable (vital out of sanity bounds, duplicate vital,
/// reference to an unknown encounter, second mortality event) are dropped and
/// listed in the returned report.
pub fn parse_encounters<A: Read, B: Read, C: Read>(
    encounters: A,
    vitals: B,
    events: C,
) -> Result<(Vec<Encounter>, RejectionReport)> {
    let mut report = RejectionReport::default();
    let enc_t = read_table("encounters.csv", encounters, &ENCOUNTERS_HEADER)?;
    let vit_t = read_table("vitals.csv", vitals, &VITALS_HEADER)?;
    let evt_t = read_table("events.csv", events, &EVENTS_HEADER)?;

    let mut out: Vec<Encounter> = Vec::with_capacity(enc_t.rows.len());
    let mut index: HashMap<String, usize> = HashMap::new();
    for (line, r) in &enc_t.rows {
        let f = enc_t.name;
        let time = |s: &str, what: &str| parse_time(s).ok_or_else(|| parse_err(f, *line, format!("bad {what} timestamp '{s}'")));
        let flag = |s: &str, what: &str| parse_bool(s).ok_or_else(|| parse_err(f, *line, format!("{what} must be 0 or 1, got '{s}'")));
        let sex = match &r[4] {
            "male" | "M" | "m" => Sex::Male,
            "female" | "F" | "f" => Sex::Female,
            s => return Err(parse_err(f, *line, format!("unknown sex '{s}'"))),
        };
        let age_years: u32 = r[5].parse().map_err(|_| parse_err(f, *line, format!("bad age '{}'", &r[5])))?;
        let diabetes = match &r[6] {
            "none" => Diabetes::None,
            "no_comp" => Diabetes::WithoutComplications,
            "with_comp" => Diabetes::WithComplications,
            s => return Err(parse_err(f, *line, format!("unknown diabetes status '{s}'"))),
        };
        let vaccinated = flag(&r[9], "vaccinated")?;
        let second_dose_date = match &r[10] {
            "" => None,
            s => Some(time(s, "second_dose_date")?),
        };
        if vaccinated != second_dose_date.is_some() {
            return Err(parse_err(f, *line, "second_dose_date must be present exactly when vaccinated = 1"));
        }
        let enc = Encounter {
            patient_id: r[0].to_string(),
            encounter_id: r[1].to_string(),
            encounter_start: time(&r[2], "encounter_start")?,
            covid_positive: flag(&r[3], "covid_positive")?,
            sex,
            age_years,
            diabetes,
            hypertension: flag(&r[7], "hypertension")?,
            obesity: flag(&r[8], "obesity")?,
            vaccinated,
            second_dose_date,
            vitals: vec![],
            events: vec![],
        };
        if index.contains_key(&enc.encounter_id) {
            report.push(format!("{f}:{line}"), format!("duplicate encounter_id {}", enc.encounter_id));
            continue;
        }
        index.insert(enc.encounter_id.clone(), out.len());
        out.push(enc);
    }

    // vitals: (encounter index) -> rows in file order
    let mut pending: BTreeMap<usize, Vec<(usize, VitalObservation)>> = BTreeMap::new();
    for (line, r) in &vit_t.rows {
        let f = vit_t.name;
        let time = parse_time(&r[1]).ok_or_else(|| parse_err(f, *line, format!("bad time '{}'", &r[1])))?;
        let kind = match &r[2] {
            "spo2" => VitalKind::Spo2,
            "hr" => VitalKind::Hr,
            "temp" => VitalKind::Temp,
            s => return Err(parse_err(f, *line, format!("unknown vital kind '{s}'"))),
        };
        let value: f64 = r[3].parse().map_err(|_| parse_err(f, *line, format!("bad value '{}'", &r[3])))?;
        if !value.is_finite() {
            return Err(parse_err(f, *line, format!("non-finite value '{}'", &r[3])));
        }
        let Some(&ei) = index.get(&r[0]) else {
            report.push(format!("{f}:{line}"), format!("unknown encounter_id {}", &r[0]));
            continue;
        };
        if !kind.in_bounds(value) {
            report.push(format!("{f}:{line}"), format!("{kind} value {value} outside sanity bounds"));
            continue;
        }
        pending.entry(ei).or_default().push((*line, VitalObservation { time, kind, value }));
    }
    for (ei, mut rows) in pending {
        // stable: equal (kind, time) keep file order, so the first row survives
        rows.sort_by_key(|r| (r.1.kind, r.1.time));
        let mut kept: Vec<VitalObservation> = Vec::with_capacity(rows.len());
        let mut last: Option<(VitalKind, Timestamp)> = None;
        for (line, o) in rows {
            if last == Some((o.kind, o.time)) {
                report.push(format!("vitals.csv:{line}"), format!("duplicate {} observation at {}", o.kind, format_time(o.time)));
                continue;
            }
            last = Some((o.kind, o.time));
            kept.push(o);
        }
        kept.sort_by_key(|o| (o.time, o.kind));
        out[ei].vitals = kept;
    }

    for (line, r) in &evt_t.rows {
        let f = evt_t.name;
        let time = parse_time(&r[1]).ok_or_else(|| parse_err(f, *line, format!("bad time '{}'", &r[1])))?;
        let kind = match &r[2] {
            "mortality" => EventKind::Mortality,
            "icu" => EventKind::IcuAdmission,
            "intubation" => EventKind::Intubation,
            s => return Err(parse_err(f, *line, format!("unknown event kind '{s}'"))),
        };
        let Some(&ei) = index.get(&r[0]) else {
            report.push(format!("{f}:{line}"), format!("unknown encounter_id {}", &r[0]));
            continue;
        };
        let enc = &mut out[ei];
        if kind == EventKind::Mortality && enc.events.iter().any(|e| e.kind == EventKind::Mortality) {
            report.push(format!("{f}:{line}"), "second mortality event for encounter");
            continue;
        }
        enc.events.push(AdverseEvent { time, kind });
    }
    for e in &mut out {
        e.events.sort_by_key(|a| (a.time, a.kind));
    }
    Ok((out, report))
}

/// Reads `encounters.csv`, `vitals.csv` and `events.csv` from `dir`.
pub fn load_dir(dir: &Path) -> Result<(Vec<Encounter>, RejectionReport)> {
    let open = |name: &str| {
        std::fs::File::open(dir.join(name))
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.join(name).display()))))
    };
    parse_encounters(open("encounters.csv")?, open("vitals.csv")?, open("events.csv")?)
}

/// The three input tables as CSV text, in the layout [`parse_encounters`] reads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvTables {
    pub encounters: String,
    pub vitals: String,
    pub events: String,
}

impl CsvTables {
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("encounters.csv"), &self.encounters)?;
        std::fs::write(dir.join("vitals.csv"), &self.vitals)?;
        std::fs::write(dir.join("events.csv"), &self.events)?;
        Ok(())
    }

    pub fn parse(&self) -> Result<(Vec<Encounter>, RejectionReport)> {
        parse_encounters(self.encounters.as_bytes(), self.vitals.as_bytes(), self.events.as_bytes())
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Serializes encounters; values use the shortest exact decimal form.
pub fn write_tables(encounters: &[Encounter]) -> Result<CsvTables> {
    let flag = |b: bool| if b { "1" } else { "0" };
    let mut enc = csv::Writer::from_writer(Vec::new());
    let mut vit = csv::Writer::from_writer(Vec::new());
    let mut evt = csv::Writer::from_writer(Vec::new());
    enc.write_record(ENCOUNTERS_HEADER)?;
    vit.write_record(VITALS_HEADER)?;
    evt.write_record(EVENTS_HEADER)?;
    for e in encounters {
        let sex = match e.sex {
            Sex::Male => "male",
            Sex::Female => "female",
        };
        enc.write_record([
            e.patient_id.as_str(),
            &e.encounter_id,
            &format_time(e.encounter_start),
            flag(e.covid_positive),
            sex,
            &e.age_years.to_string(),
            e.diabetes.code(),
            flag(e.hypertension),
            flag(e.obesity),
            flag(e.vaccinated),
            &e.second_dose_date.map(format_time).unwrap_or_default(),
        ])?;
        for o in &e.vitals {
            vit.write_record([e.encounter_id.as_str(), &format_time(o.time), o.kind.code(), &o.value.to_string()])?;
        }
        for a in &e.events {
            evt.write_record([e.encounter_id.as_str(), &format_time(a.time), a.kind.code()])?;
        }
    }
    Ok(CsvTables {
        encounters: finish(enc)?,
        vitals: finish(vit)?,
        events: finish(evt)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const ENC: &str = "patient_id,encounter_id,encounter_start,covid_positive,sex,age_years,diabetes,hypertension,obesity,vaccinated,second_dose_date
P1,E1,2021-01-01T00:00:00Z,1,male,50,none,0,1,0,
P2,E2,2021-01-02T00:00:00Z,1,female,70,no_comp,1,0,1,2020-12-01T00:00:00Z
";
    const EVT_EMPTY: &str = "encounter_id,time,kind\n";

    fn parse(enc: &str, vit: &str, evt: &str) -> Result<(Vec<Encounter>, RejectionReport)> {
        parse_encounters(enc.as_bytes(), vit.as_bytes(), evt.as_bytes())
    }

    #[test]
    fn empty_vitals_file_gives_empty_lists() {
        let (encs, rep) = parse(ENC, "encounter_id,time,kind,value\n", EVT_EMPTY).unwrap();
        assert_eq!(encs.len(), 2);
        assert!(encs.iter().all(|e| e.vitals.is_empty()));
        assert!(rep.is_empty());
        // a zero-byte file is also accepted
        let (encs, _) = parse(ENC, "", "").unwrap();
        assert_eq!(encs.len(), 2);
    }

    #[test]
    fn vitals_group_by_encounter() {
        let vit = "encounter_id,time,kind,value
E1,2021-01-01T02:00:00Z,hr,80
E2,2021-01-02T01:00:00Z,spo2,97
E1,2021-01-01T01:00:00Z,temp,98.6
";
        let (encs, rep) = parse(ENC, vit, EVT_EMPTY).unwrap();
        assert!(rep.is_empty());
        assert_eq!(encs[0].vitals.len(), 2);
        assert_eq!(encs[1].vitals.len(), 1);
        // sorted by time
        assert_eq!(encs[0].vitals[0].kind, VitalKind::Temp);
        assert_eq!(encs[1].vitals[0].value, 97.0);
        assert_eq!(encs[1].second_dose_date, parse_time("2020-12-01T00:00:00Z"));
    }

    #[test]
    fn duplicate_vital_later_row_rejected() {
        let vit = "encounter_id,time,kind,value
E1,2021-01-01T02:00:00Z,hr,80
E1,2021-01-01T02:00:00Z,hr,85
";
        let (encs, rep) = parse(ENC, vit, EVT_EMPTY).unwrap();
        assert_eq!(encs[0].vitals.len(), 1);
        assert_eq!(encs[0].vitals[0].value, 80.0);
        assert_eq!(rep.len(), 1);
        assert_eq!(rep.entries[0].row, "vitals.csv:3");
    }

    #[test]
    fn out_of_bounds_vital_rejected_not_fatal() {
        let vit = "encounter_id,time,kind,value
E1,2021-01-01T02:00:00Z,spo2,101
E1,2021-01-01T03:00:00Z,temp,70
E1,2021-01-01T04:00:00Z,hr,0
E1,2021-01-01T05:00:00Z,hr,60
";
        let (encs, rep) = parse(ENC, vit, EVT_EMPTY).unwrap();
        assert_eq!(encs[0].vitals.len(), 1);
        assert_eq!(rep.len(), 3);
        let csv = rep.to_csv().unwrap();
        assert!(csv.starts_with("row,reason\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn malformed_row_reports_line() {
        let vit = "encounter_id,time,kind,value
E1,2021-01-01T02:00:00Z,hr,80
E1,not-a-time,hr,80
";
        match parse(ENC, vit, EVT_EMPTY) {
            Err(Error::Parse { file, row, .. }) => {
                assert_eq!(file, "vitals.csv");
                assert_eq!(row, 3);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad_kind = "encounter_id,time,kind,value\nE1,2021-01-01T02:00:00Z,bp,80\n";
        assert!(matches!(parse(ENC, bad_kind, EVT_EMPTY), Err(Error::Parse { row: 2, .. })));
    }

    #[test]
    fn vaccination_date_consistency_enforced() {
        let enc = "patient_id,encounter_id,encounter_start,covid_positive,sex,age_years,diabetes,hypertension,obesity,vaccinated,second_dose_date
P1,E1,2021-01-01T00:00:00Z,1,male,50,none,0,1,1,
";
        assert!(matches!(parse(enc, "", ""), Err(Error::Parse { row: 2, .. })));
    }

    #[test]
    fn wrong_header_rejected() {
        let vit = "encounter,time,kind,value\n";
        assert!(matches!(parse(ENC, vit, EVT_EMPTY), Err(Error::Parse { row: 1, .. })));
    }

    #[test]
    fn events_attach_and_second_mortality_rejected() {
        let evt = "encounter_id,time,kind
E1,2021-01-03T00:00:00Z,icu
E1,2021-01-04T00:00:00Z,mortality
E1,2021-01-05T00:00:00Z,mortality
E9,2021-01-05T00:00:00Z,icu
";
        let (encs, rep) = parse(ENC, "", evt).unwrap();
        assert_eq!(encs[0].events.len(), 2);
        assert_eq!(rep.len(), 2);
    }
}
