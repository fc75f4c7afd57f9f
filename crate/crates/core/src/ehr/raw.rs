//! Raw event-log CSVs: `events.csv`, `stays.csv`, `diagnoses_raw.csv` and an
//! optional `features.csv` registry.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::events::{FeatureGroup, FeatureRegistry, RawEvent, TimeSeriesFeature, ValueKind};
use crate::error::{Error, Result};

const STAY_FIXED_COLUMNS: [&str; 5] = [
    "stay_id",
    "patient_id",
    "length_hours",
    "admission_hour",
    "mortality",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RawStay {
    pub stay_id: u64,
    pub patient_id: u64,
    pub length_hours: f64,
    pub admission_hour: u32,
    pub mortality: bool,
    /// Static cells in `RawCohort::static_names` order.
    pub statics: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawDiagnosis {
    pub stay_id: u64,
    pub code_path: String,
    pub offset_minutes: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawCohort {
    pub features: Vec<TimeSeriesFeature>,
    pub static_names: Vec<String>,
    pub stays: Vec<RawStay>,
    pub events: Vec<RawEvent>,
    pub diagnoses: Vec<RawDiagnosis>,
}

impl RawCohort {
    pub fn registry(&self) -> Result<FeatureRegistry> {
        FeatureRegistry::new(self.features.clone())
    }

    /// Events grouped by stay, in file order.
    pub fn events_by_stay(&self) -> BTreeMap<u64, Vec<RawEvent>> {
        let mut out: BTreeMap<u64, Vec<RawEvent>> = BTreeMap::new();
        for e in &self.events {
            out.entry(e.stay_id).or_default().push(e.clone());
        }
        out
    }

    pub fn diagnoses_by_stay(&self) -> BTreeMap<u64, Vec<RawDiagnosis>> {
        let mut out: BTreeMap<u64, Vec<RawDiagnosis>> = BTreeMap::new();
        for d in &self.diagnoses {
            out.entry(d.stay_id).or_default().push(d.clone());
        }
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureRow {
    name: String,
    kind: ValueKind,
    group: FeatureGroup,
}

fn load_err(stay: impl ToString, column: &str, message: impl Into<String>) -> Error {
    Error::Load {
        stay: stay.to_string(),
        column: column.to_string(),
        message: message.into(),
    }
}

pub fn read_raw(dir: &Path) -> Result<RawCohort> {
    let mut events = Vec::new();
    for row in csv::Reader::from_path(dir.join("events.csv"))?.deserialize() {
        let e: RawEvent = row?;
        if !e.value.is_finite() || !e.offset_minutes.is_finite() {
            return Err(load_err(e.stay_id, &e.feature_name, "non-finite event"));
        }
        events.push(e);
    }

    let mut rdr = csv::Reader::from_path(dir.join("stays.csv"))?;
    let header = rdr.headers()?.clone();
    let fixed: Vec<&str> = header.iter().take(STAY_FIXED_COLUMNS.len()).collect();
    if fixed != STAY_FIXED_COLUMNS {
        return Err(Error::Dataset(format!(
            "stays.csv must start with {STAY_FIXED_COLUMNS:?}, found {fixed:?}"
        )));
    }
    let static_names: Vec<String> = header.iter().skip(5).map(str::to_string).collect();
    let mut stays = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let sid = rec.get(0).unwrap_or("");
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|c| c.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| load_err(sid, STAY_FIXED_COLUMNS[i], "not a finite number"))
        };
        stays.push(RawStay {
            stay_id: parse(0)? as u64,
            patient_id: parse(1)? as u64,
            length_hours: parse(2)?,
            admission_hour: (parse(3)? as u32) % 24,
            mortality: parse(4)? != 0.0,
            statics: rec.iter().skip(5).map(str::to_string).collect(),
        });
    }

    let diag_path = dir.join("diagnoses_raw.csv");
    let mut diagnoses = Vec::new();
    if diag_path.exists() {
        for row in csv::Reader::from_path(diag_path)?.deserialize() {
            diagnoses.push(row?);
        }
    }

    let feat_path = dir.join("features.csv");
    let features = if feat_path.exists() {
        let mut out = Vec::new();
        for row in csv::Reader::from_path(feat_path)?.deserialize() {
            let r: FeatureRow = row?;
            out.push(TimeSeriesFeature {
                name: r.name,
                kind: r.kind,
                group: r.group,
            });
        }
        out
    } else {
        infer_features(&events)
    };

    Ok(RawCohort {
        features,
        static_names,
        stays,
        events,
        diagnoses,
    })
}

/// Registry from the events themselves: names in sorted order, binary when
/// every value is 0 or 1, all in the non-lab group.
pub fn infer_features(events: &[RawEvent]) -> Vec<TimeSeriesFeature> {
    let mut binary: BTreeMap<&str, bool> = BTreeMap::new();
    for e in events {
        let b = binary.entry(&e.feature_name).or_insert(true);
        *b &= e.value == 0.0 || e.value == 1.0;
    }
    binary
        .into_iter()
        .map(|(name, b)| TimeSeriesFeature {
            name: name.to_string(),
            kind: if b { ValueKind::Binary } else { ValueKind::Continuous },
            group: FeatureGroup::Other,
        })
        .collect()
}

pub fn write_raw(dir: &Path, cohort: &RawCohort) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("events.csv"))?;
    for e in &cohort.events {
        w.serialize(e)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("stays.csv"))?;
    let mut header: Vec<String> = STAY_FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(cohort.static_names.iter().cloned());
    w.write_record(&header)?;
    for s in &cohort.stays {
        let mut row = vec![
            s.stay_id.to_string(),
            s.patient_id.to_string(),
            s.length_hours.to_string(),
            s.admission_hour.to_string(),
            u8::from(s.mortality).to_string(),
        ];
        row.extend(s.statics.iter().cloned());
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("diagnoses_raw.csv"))?;
    for d in &cohort.diagnoses {
        w.serialize(d)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("features.csv"))?;
    for f in &cohort.features {
        w.serialize(FeatureRow {
            name: f.name.clone(),
            kind: f.kind,
            group: f.group,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Unique patient ids in the cohort.
pub fn patient_ids(stays: &[RawStay]) -> Vec<u64> {
    stays
        .iter()
        .map(|s| s.patient_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}
