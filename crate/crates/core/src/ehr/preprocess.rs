//! Raw cohort to processed dataset. Every statistic (percentiles, means,
//! static schema, diagnosis codebook) is fitted on training patients only.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, DatasetMeta, GeneratorInfo, DATASET_FORMAT_VERSION};
use super::diagnoses::{DiagnosisCodebook, DIAGNOSIS_CUTOFF_MINUTES, PREVALENCE_CUTOFF};
use super::events::{
    append_clock_features, clock_values, forward_fill_with_decay, resample_hourly, FeatureGroup,
    FeatureRegistry, RawEvent, TimeSeriesFeature, ValueKind, EARLIEST_OFFSET_MINUTES,
    TIME_IN_ICU, TIME_OF_DAY,
};
use super::raw::{patient_ids, RawCohort, RawStay};
use super::scaling::{fit_scaling, FeatureScale};
use super::statics::StaticSchema;
use super::stay::{
    remaining_los_labels, split_cohort, stay_hours, StayRecord, FIRST_LABELLED_HOUR, HORIZON_HOURS,
};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub split_ratios: [f64; 3],
    pub split_seed: u64,
    pub horizon: usize,
    pub prevalence_cutoff: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            split_ratios: [0.7, 0.15, 0.15],
            split_seed: 0,
            horizon: HORIZON_HOURS,
            prevalence_cutoff: PREVALENCE_CUTOFF,
        }
    }
}

/// Turns one stay's raw events into scaled `(values, decay)` rows, clock
/// rows included.
#[derive(Clone, Debug)]
pub struct SeriesEncoder {
    pub registry: FeatureRegistry,
    pub scales: Vec<FeatureScale>,
    /// Scaled training means of the event features.
    pub fill: Vec<f64>,
    pub clock: [FeatureScale; 2],
}

impl SeriesEncoder {
    pub fn encode(
        &self,
        events: &[RawEvent],
        length_hours: f64,
        admission_hour: u32,
    ) -> Result<(Tensor, Tensor)> {
        let kept: Vec<RawEvent> = events
            .iter()
            .filter(|e| self.registry.position(&e.feature_name).is_some())
            .cloned()
            .collect();
        let grid = resample_hourly(&kept, stay_hours(length_hours), &self.registry)?;
        let grid = grid.map_values(|f, v| self.scales[f].scale(v));
        let (values, decay) = forward_fill_with_decay(&grid, &self.fill)?;
        append_clock_features(&values, &decay, admission_hour, |row, v| {
            self.clock[row].scale(v)
        })
    }
}

fn training_clock_values(stays: &[&RawStay], horizon: usize) -> (Vec<f64>, Vec<f64>) {
    let mut icu = Vec::new();
    let mut tod = Vec::new();
    for s in stays {
        for t in 1..=stay_hours(s.length_hours).min(horizon) {
            let (a, b) = clock_values(s.admission_hour, t);
            icu.push(a);
            tod.push(b);
        }
    }
    (icu, tod)
}

pub fn preprocess(
    raw: &RawCohort,
    cfg: &PreprocessConfig,
    generator: Option<GeneratorInfo>,
) -> Result<Dataset> {
    let registry = raw.registry()?;
    if let Some(e) = raw.events.iter().find(|e| registry.position(&e.feature_name).is_none()) {
        return Err(Error::UnknownFeature(e.feature_name.clone()));
    }
    if let Some(e) = raw.events.iter().find(|e| e.offset_minutes < EARLIEST_OFFSET_MINUTES) {
        log::warn!(
            "stay {}: events earlier than 24 h before admission are ignored (first at {} min)",
            e.stay_id,
            e.offset_minutes
        );
    }
    for name in [TIME_IN_ICU, TIME_OF_DAY] {
        if registry.position(name).is_some() {
            return Err(Error::Dataset(format!("`{name}` is reserved for derived clock features")));
        }
    }

    let stays: Vec<&RawStay> = raw
        .stays
        .iter()
        .filter(|s| {
            let keep = s.length_hours >= FIRST_LABELLED_HOUR as f64;
            if !keep {
                log::debug!("stay {} shorter than 5 h excluded", s.stay_id);
            }
            keep
        })
        .collect();
    let kept_stays: Vec<RawStay> = stays.iter().map(|s| (*s).clone()).collect();
    let split = split_cohort(&patient_ids(&kept_stays), cfg.split_ratios, cfg.split_seed)?;
    let train: Vec<&RawStay> = stays
        .iter()
        .copied()
        .filter(|s| split.train.contains(&s.patient_id))
        .collect();
    let length: HashMap<u64, f64> = stays.iter().map(|s| (s.stay_id, s.length_hours)).collect();
    let train_ids: std::collections::HashSet<u64> = train.iter().map(|s| s.stay_id).collect();

    // Observed training values per feature, inside the admissible window.
    let mut observed: Vec<Vec<f64>> = vec![Vec::new(); registry.len()];
    for e in &raw.events {
        if !train_ids.contains(&e.stay_id) || e.offset_minutes < EARLIEST_OFFSET_MINUTES {
            continue;
        }
        if e.offset_minutes <= length[&e.stay_id] * 60.0 {
            observed[registry.position(&e.feature_name).expect("checked")].push(e.value);
        }
    }
    let mut scaling = fit_scaling(
        registry
            .features()
            .iter()
            .zip(&observed)
            .map(|(f, v)| (f.name.as_str(), f.kind, v.as_slice())),
    );
    let kept: Vec<TimeSeriesFeature> = registry
        .features()
        .iter()
        .filter(|f| scaling.get(&f.name).is_some())
        .cloned()
        .collect();
    let scales: Vec<FeatureScale> = kept.iter().map(|f| scaling.features[&f.name].clone()).collect();

    let (icu, tod) = training_clock_values(&train, cfg.horizon);
    let clock = [
        FeatureScale::fit(&icu, ValueKind::Continuous),
        FeatureScale::fit(&tod, ValueKind::Continuous),
    ];
    let [Some(icu_scale), Some(tod_scale)] = clock else {
        return Err(Error::Dataset("training split has no stays".into()));
    };
    scaling.features.insert(TIME_IN_ICU.into(), icu_scale.clone());
    scaling.features.insert(TIME_OF_DAY.into(), tod_scale.clone());

    let encoder = SeriesEncoder {
        registry: FeatureRegistry::new(kept.clone())?,
        fill: scales.iter().map(FeatureScale::scaled_mean).collect(),
        scales,
        clock: [icu_scale, tod_scale],
    };

    let mut features = kept;
    for name in [TIME_IN_ICU, TIME_OF_DAY] {
        features.push(TimeSeriesFeature {
            name: name.into(),
            kind: ValueKind::Continuous,
            group: FeatureGroup::Other,
        });
    }
    let mut fill = encoder.fill.clone();
    fill.extend(encoder.clock.iter().map(FeatureScale::scaled_mean));

    let static_rows: Vec<Vec<String>> = train.iter().map(|s| s.statics.clone()).collect();
    let statics = StaticSchema::fit(&raw.static_names, &static_rows);

    let diag_by_stay: BTreeMap<u64, Vec<String>> = raw
        .diagnoses_by_stay()
        .into_iter()
        .map(|(id, ds)| {
            let paths = ds
                .into_iter()
                .filter(|d| d.offset_minutes <= DIAGNOSIS_CUTOFF_MINUTES)
                .map(|d| d.code_path)
                .collect();
            (id, paths)
        })
        .collect();
    let empty = Vec::new();
    let codebook = DiagnosisCodebook::fit(
        train.iter().map(|s| {
            diag_by_stay
                .get(&s.stay_id)
                .unwrap_or(&empty)
                .iter()
                .map(String::as_str)
        }),
        cfg.prevalence_cutoff,
    );

    let events = raw.events_by_stay();
    let records = stays
        .par_iter()
        .map(|s| {
            let ev = events.get(&s.stay_id).map(Vec::as_slice).unwrap_or(&[]);
            let (values, decay) = encoder.encode(ev, s.length_hours, s.admission_hour)?;
            Ok(StayRecord {
                stay_id: s.stay_id,
                patient_id: s.patient_id,
                values,
                decay,
                statics: statics.encode(&s.statics),
                diagnoses: codebook.encode(
                    diag_by_stay
                        .get(&s.stay_id)
                        .unwrap_or(&empty)
                        .iter()
                        .map(String::as_str),
                ),
                los_labels: remaining_los_labels(s.length_hours),
                mortality: s.mortality,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let meta = DatasetMeta {
        format_version: DATASET_FORMAT_VERSION,
        features,
        fill,
        scaling,
        statics,
        codebook,
        horizon: cfg.horizon,
        split,
        split_seed: cfg.split_seed,
        patients: stays.iter().map(|s| (s.stay_id, s.patient_id)).collect(),
        generator,
    };
    Ok(Dataset {
        meta,
        stays: records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::raw::RawDiagnosis;

    fn feature(name: &str) -> TimeSeriesFeature {
        TimeSeriesFeature {
            name: name.into(),
            kind: ValueKind::Continuous,
            group: FeatureGroup::Other,
        }
    }

    fn ev(stay: u64, name: &str, m: f64, v: f64) -> RawEvent {
        RawEvent {
            stay_id: stay,
            feature_name: name.into(),
            offset_minutes: m,
            value: v,
        }
    }

    fn cohort() -> RawCohort {
        let mut stays = Vec::new();
        let mut events = Vec::new();
        let mut diagnoses = Vec::new();
        for i in 0..20u64 {
            stays.push(RawStay {
                stay_id: 100 + i,
                patient_id: i,
                length_hours: 6.0 + i as f64,
                admission_hour: (i % 24) as u32,
                mortality: i % 3 == 0,
                statics: vec![format!("{}", 40 + i)],
            });
            for h in 0..(6 + i) {
                events.push(ev(100 + i, "hr", h as f64 * 60.0 + 10.0, 70.0 + (i + h) as f64));
            }
            events.push(ev(100 + i, "lab", -30.0, i as f64));
            diagnoses.push(RawDiagnosis {
                stay_id: 100 + i,
                code_path: "a|b".into(),
                offset_minutes: if i % 2 == 0 { 60.0 } else { 600.0 },
            });
        }
        RawCohort {
            features: vec![feature("hr"), feature("lab"), feature("never")],
            static_names: vec!["age".into()],
            stays,
            events,
            diagnoses,
        }
    }

    #[test]
    fn end_to_end_shapes_and_fill() {
        let data = preprocess(&cohort(), &PreprocessConfig::default(), None).unwrap();
        // "never" has no observations and is dropped; two clock rows appended
        assert_eq!(data.meta.feature_names(), vec!["hr", "lab", TIME_IN_ICU, TIME_OF_DAY]);
        assert_eq!(data.stays.len(), 20);
        let s = &data.stays[0];
        assert_eq!(s.values.shape(), &[4, 6]);
        assert_eq!(s.los_labels.len(), 6);
        // pre-admission lab seeds the fill; decay 0.75 at hour 1
        assert_eq!(s.decay.get(&[1, 0]), 0.75);
        // diagnoses after 240 minutes are excluded
        let coded: Vec<f64> = data.stays.iter().map(|s| s.diagnoses[0]).collect();
        assert!(data.stays.iter().zip(&coded).all(|(s, c)| (*c == 1.0) == ((s.stay_id - 100) % 2 == 0)));
    }

    #[test]
    fn unknown_feature_rejected() {
        let mut c = cohort();
        c.events.push(ev(100, "mystery", 10.0, 1.0));
        assert!(matches!(
            preprocess(&c, &PreprocessConfig::default(), None),
            Err(Error::UnknownFeature(_))
        ));
    }

    #[test]
    fn no_future_leakage() {
        let c = cohort();
        let data = preprocess(&c, &PreprocessConfig::default(), None).unwrap();
        let scales: Vec<FeatureScale> = ["hr", "lab"]
            .iter()
            .map(|n| data.meta.scaling.features[*n].clone())
            .collect();
        let encoder = SeriesEncoder {
            registry: FeatureRegistry::new(vec![feature("hr"), feature("lab")]).unwrap(),
            fill: data.meta.fill[..2].to_vec(),
            scales,
            clock: [
                data.meta.scaling.features[TIME_IN_ICU].clone(),
                data.meta.scaling.features[TIME_OF_DAY].clone(),
            ],
        };
        let stay = &c.stays[10];
        let events: Vec<RawEvent> = c.events.iter().filter(|e| e.stay_id == stay.stay_id).cloned().collect();
        let (full_v, full_d) = encoder.encode(&events, stay.length_hours, stay.admission_hour).unwrap();
        assert_eq!(full_v, data.stays[10].values);
        let t_n = full_v.shape()[1];
        for cut in 1..=t_n {
            let trunc: Vec<RawEvent> = events
                .iter()
                .filter(|e| e.offset_minutes <= cut as f64 * 60.0)
                .cloned()
                .collect();
            let (v, d) = encoder.encode(&trunc, stay.length_hours, stay.admission_hour).unwrap();
            for f in 0..full_v.shape()[0] {
                for t in 0..cut {
                    assert_eq!(v.get(&[f, t]), full_v.get(&[f, t]));
                    assert_eq!(d.get(&[f, t]), full_d.get(&[f, t]));
                }
            }
        }
    }
}
