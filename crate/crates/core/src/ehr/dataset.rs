//! Processed dataset directory: `timeseries.csv`, `flat.csv`,
//! `diagnoses.csv`, `labels.csv` and `meta.json`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::diagnoses::DiagnosisCodebook;
use super::events::{FeatureGroup, TimeSeriesFeature, TIME_IN_ICU, TIME_OF_DAY};
use super::scaling::ScalingSpec;
use super::statics::StaticSchema;
use super::stay::{CohortSplit, Split, StayRecord, MIN_LOS_DAYS};
use super::synth::GenConfig;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const DECAY_SUFFIX: &str = "__decay";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub seed: u64,
    pub n_patients: usize,
    pub config: GenConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    /// Canonical time-series feature order, clock rows last.
    pub features: Vec<TimeSeriesFeature>,
    /// Scaled training mean per feature; the fill for never-observed values.
    pub fill: Vec<f64>,
    pub scaling: ScalingSpec,
    pub statics: StaticSchema,
    pub codebook: DiagnosisCodebook,
    pub horizon: usize,
    /// Patient-level split.
    pub split: CohortSplit,
    pub split_seed: u64,
    /// Stay id to patient id.
    pub patients: BTreeMap<u64, u64>,
    pub generator: Option<GeneratorInfo>,
}

impl DatasetMeta {
    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    /// Indices of features in `group`.
    pub fn group_indices(&self, group: FeatureGroup) -> Vec<usize> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.group == group)
            .map(|(i, _)| i)
            .collect()
    }

    /// SHA-256 over the newline-joined feature, static and diagnosis names.
    pub fn feature_order_hash(&self) -> String {
        let mut h = Sha256::new();
        for name in self
            .feature_names()
            .into_iter()
            .chain(self.statics.output_names())
            .chain(self.codebook.nodes.iter().cloned())
        {
            h.update(name.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub stays: Vec<StayRecord>,
}

impl Dataset {
    pub fn n_features(&self) -> usize {
        self.meta.features.len()
    }

    pub fn n_statics(&self) -> usize {
        self.meta.statics.width()
    }

    pub fn n_diagnoses(&self) -> usize {
        self.meta.codebook.len()
    }

    pub fn split_of(&self, stay: &StayRecord) -> Option<Split> {
        self.meta.split.which(stay.patient_id)
    }

    pub fn split(&self, split: Split) -> Vec<&StayRecord> {
        self.stays
            .iter()
            .filter(|s| self.split_of(s) == Some(split))
            .collect()
    }
}

/// Which time series feed the model. Clock features are kept in every
/// subset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSubset {
    #[default]
    All,
    Labs,
    Other,
}

impl FeatureSubset {
    pub fn name(self) -> &'static str {
        match self {
            FeatureSubset::All => "all",
            FeatureSubset::Labs => "labs",
            FeatureSubset::Other => "other",
        }
    }

    fn keeps(self, feature: &TimeSeriesFeature) -> bool {
        match self {
            FeatureSubset::All => true,
            _ if feature.name == TIME_IN_ICU || feature.name == TIME_OF_DAY => true,
            FeatureSubset::Labs => feature.group == FeatureGroup::Lab,
            FeatureSubset::Other => feature.group == FeatureGroup::Other,
        }
    }
}

impl std::str::FromStr for FeatureSubset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(FeatureSubset::All),
            "labs" => Ok(FeatureSubset::Labs),
            "other" => Ok(FeatureSubset::Other),
            _ => Err(Error::config(format!("unknown feature subset `{s}` (expected all, labs or other)"))),
        }
    }
}

impl Dataset {
    /// Copy restricted to the time series in `subset`.
    pub fn select_features(&self, subset: FeatureSubset) -> Result<Dataset> {
        if subset == FeatureSubset::All {
            return Ok(self.clone());
        }
        let keep: Vec<usize> = (0..self.n_features())
            .filter(|&i| subset.keeps(&self.meta.features[i]))
            .collect();
        if keep.is_empty() {
            return Err(Error::Dataset(format!("feature subset `{}` is empty", subset.name())));
        }
        let mut meta = self.meta.clone();
        meta.features = keep.iter().map(|&i| self.meta.features[i].clone()).collect();
        meta.fill = keep.iter().map(|&i| self.meta.fill[i]).collect();
        meta.scaling.features.retain(|name, _| meta.features.iter().any(|f| &f.name == name));
        let rows = |x: &Tensor, t: usize| -> Result<Tensor> {
            let data = keep.iter().flat_map(|&i| x.data()[i * t..(i + 1) * t].iter().copied()).collect();
            Tensor::new(vec![keep.len(), t], data)
        };
        let stays = self
            .stays
            .iter()
            .map(|s| {
                let t = s.hours();
                Ok(StayRecord {
                    values: rows(&s.values, t)?,
                    decay: rows(&s.decay, t)?,
                    ..s.clone()
                })
            })
            .collect::<Result<_>>()?;
        Ok(Dataset { meta, stays })
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

pub fn save_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let names = data.meta.feature_names();

    let mut w = csv::Writer::from_path(dir.join("timeseries.csv"))?;
    let mut header = vec!["stay_id".to_string(), "hour".to_string()];
    for n in &names {
        header.push(n.clone());
        header.push(format!("{n}{DECAY_SUFFIX}"));
    }
    w.write_record(&header)?;
    for s in &data.stays {
        let t_n = s.hours();
        for t in 0..t_n {
            let mut row = vec![s.stay_id.to_string(), (t + 1).to_string()];
            for f in 0..names.len() {
                row.push(num(s.values.data()[f * t_n + t]));
                row.push(num(s.decay.data()[f * t_n + t]));
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("flat.csv"))?;
    w.write_record(std::iter::once("stay_id".to_string()).chain(data.meta.statics.output_names()))?;
    for s in &data.stays {
        w.write_record(std::iter::once(s.stay_id.to_string()).chain(s.statics.iter().map(|v| num(*v))))?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("diagnoses.csv"))?;
    w.write_record(std::iter::once("stay_id".to_string()).chain(data.meta.codebook.nodes.iter().cloned()))?;
    for s in &data.stays {
        w.write_record(std::iter::once(s.stay_id.to_string()).chain(s.diagnoses.iter().map(|v| num(*v))))?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("labels.csv"))?;
    w.write_record(["stay_id", "hour", "remaining_los_days", "mortality"])?;
    for s in &data.stays {
        for (t, y) in s.los_labels.iter().enumerate() {
            w.write_record([
                s.stay_id.to_string(),
                (t + 1).to_string(),
                num(*y),
                u8::from(s.mortality).to_string(),
            ])?;
        }
    }
    w.flush()?;

    let out = BufWriter::new(File::create(dir.join("meta.json"))?);
    serde_json::to_writer_pretty(out, &data.meta)?;
    Ok(())
}

fn load_err(stay: impl ToString, column: &str, message: impl Into<String>) -> Error {
    Error::Load {
        stay: stay.to_string(),
        column: column.to_string(),
        message: message.into(),
    }
}

fn expect_header(rdr: &mut csv::Reader<File>, file: &str, expected: &[String]) -> Result<()> {
    let got: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if got != expected {
        return Err(Error::Dataset(format!(
            "{file}: header does not match meta.json (expected {} columns, found {})",
            expected.len(),
            got.len()
        )));
    }
    Ok(())
}

fn parse_cell(rec: &csv::StringRecord, i: usize, stay: &str, header: &[String]) -> Result<f64> {
    let cell = rec.get(i).unwrap_or("");
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| load_err(stay, &header[i], format!("cannot parse `{cell}`")))?;
    if v.is_nan() {
        return Err(load_err(stay, &header[i], "NaN cell"));
    }
    Ok(v)
}

fn parse_id(rec: &csv::StringRecord) -> Result<u64> {
    let cell = rec.get(0).unwrap_or("");
    cell.parse()
        .map_err(|_| load_err(cell, "stay_id", "not an integer id"))
}

/// Per-stay rows of a `stay_id, ...` CSV keyed by stay, preserving order.
type Rows = BTreeMap<u64, Vec<Vec<f64>>>;

fn read_rows(dir: &Path, file: &str, header: &[String]) -> Result<(Vec<u64>, Rows)> {
    let mut rdr = csv::Reader::from_path(dir.join(file))?;
    expect_header(&mut rdr, file, header)?;
    let mut order = Vec::new();
    let mut rows: Rows = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id = parse_id(&rec)?;
        let sid = id.to_string();
        let vals = (1..header.len())
            .map(|i| parse_cell(&rec, i, &sid, header))
            .collect::<Result<Vec<_>>>()?;
        let entry = rows.entry(id).or_default();
        if entry.is_empty() {
            order.push(id);
        }
        entry.push(vals);
    }
    Ok((order, rows))
}

/// Reads and validates a dataset directory, truncating every stay to the
/// stored horizon.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta: DatasetMeta = serde_json::from_reader(File::open(dir.join("meta.json"))?)?;
    if meta.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Dataset(format!(
            "unsupported dataset format version {}",
            meta.format_version
        )));
    }
    let names = meta.feature_names();
    let f_n = names.len();
    if meta.fill.len() != f_n {
        return Err(Error::Dataset("meta.json fill length differs from feature count".into()));
    }

    let mut ts_header = vec!["stay_id".to_string(), "hour".to_string()];
    for n in &names {
        ts_header.push(n.clone());
        ts_header.push(format!("{n}{DECAY_SUFFIX}"));
    }
    let (order, ts) = read_rows(dir, "timeseries.csv", &ts_header)?;

    let flat_header: Vec<String> = std::iter::once("stay_id".to_string())
        .chain(meta.statics.output_names())
        .collect();
    let (_, flat) = read_rows(dir, "flat.csv", &flat_header)?;
    let diag_header: Vec<String> = std::iter::once("stay_id".to_string())
        .chain(meta.codebook.nodes.iter().cloned())
        .collect();
    let (_, diag) = read_rows(dir, "diagnoses.csv", &diag_header)?;
    let label_header: Vec<String> = ["stay_id", "hour", "remaining_los_days", "mortality"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let (_, labels) = read_rows(dir, "labels.csv", &label_header)?;

    let mut stays = Vec::with_capacity(order.len());
    for id in order {
        let sid = id.to_string();
        let rows = &ts[&id];
        let t_n = rows.len();
        let mut values = vec![0.0; f_n * t_n];
        let mut decay = vec![0.0; f_n * t_n];
        for (t, row) in rows.iter().enumerate() {
            if row[0] != (t + 1) as f64 {
                return Err(load_err(&sid, "hour", format!("expected hour {}, found {}", t + 1, row[0])));
            }
            for f in 0..f_n {
                values[f * t_n + t] = row[1 + 2 * f];
                let d = row[2 + 2 * f];
                if !(0.0..=1.0).contains(&d) {
                    return Err(load_err(&sid, &ts_header[3 + 2 * f], format!("decay {d} outside [0, 1]")));
                }
                decay[f * t_n + t] = d;
            }
        }

        let label_rows = labels
            .get(&id)
            .ok_or_else(|| load_err(&sid, "remaining_los_days", "no labels"))?;
        if label_rows.len() != t_n {
            return Err(load_err(&sid, "hour", format!("{} label rows for {t_n} hours", label_rows.len())));
        }
        let mut los = Vec::with_capacity(t_n);
        for (t, row) in label_rows.iter().enumerate() {
            if row[0] != (t + 1) as f64 {
                return Err(load_err(&sid, "hour", "label hours are not contiguous"));
            }
            if row[1] < MIN_LOS_DAYS - 1e-12 {
                return Err(load_err(&sid, "remaining_los_days", format!("{} below 1/48 day", row[1])));
            }
            if let Some(prev) = los.last() {
                let step: f64 = prev - row[1];
                if row[1] > MIN_LOS_DAYS && (step - 1.0 / 24.0).abs() > 1e-9 {
                    return Err(load_err(&sid, "remaining_los_days", "labels must fall by 1/24 day per hour"));
                }
            }
            los.push(row[1]);
        }
        let mortality = label_rows[0][2] != 0.0;

        let statics = flat
            .get(&id)
            .and_then(|r| r.first())
            .ok_or_else(|| load_err(&sid, "stay_id", "missing from flat.csv"))?
            .clone();
        let diagnoses = diag
            .get(&id)
            .and_then(|r| r.first())
            .ok_or_else(|| load_err(&sid, "stay_id", "missing from diagnoses.csv"))?
            .clone();
        if let Some(j) = diagnoses.iter().position(|v| *v != 0.0 && *v != 1.0) {
            return Err(load_err(&sid, &diag_header[j + 1], "diagnosis cell is not binary"));
        }
        let patient_id = *meta
            .patients
            .get(&id)
            .ok_or_else(|| load_err(&sid, "stay_id", "no patient id in meta.json"))?;

        let mut rec = StayRecord {
            stay_id: id,
            patient_id,
            values: Tensor::new(vec![f_n, t_n], values)?,
            decay: Tensor::new(vec![f_n, t_n], decay)?,
            statics,
            diagnoses,
            los_labels: los,
            mortality,
        };
        rec.truncate(meta.horizon);
        stays.push(rec);
    }
    Ok(Dataset { meta, stays })
}
