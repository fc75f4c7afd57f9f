//! Synthetic ICU cohorts in the raw event-log format.
//!
//! Each patient has a latent severity `s ~ N(0, 1)`. Total stay length is
//! log-normal in `s`, mortality is logistic in `s`, and every feature's mean
//! at hour `t` is `base + severity_coef * s + recovery_coef * tanh(rem / 72)`
//! where `rem` is the remaining stay in hours, plus AR(1) noise. Remaining
//! stay is therefore recoverable from the observed features.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{save_dataset, Dataset, GeneratorInfo};
use super::events::{FeatureGroup, RawEvent, TimeSeriesFeature, ValueKind};
use super::preprocess::{preprocess, PreprocessConfig};
use super::raw::{write_raw, RawCohort, RawDiagnosis, RawStay};
use crate::autodiff::sigmoid;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    /// Median total stay in hours at zero severity.
    pub los_median_hours: f64,
    pub los_severity_coef: f64,
    pub los_noise_sd: f64,
    pub min_los_hours: f64,
    pub max_los_hours: f64,
    pub mortality_intercept: f64,
    pub mortality_severity_coef: f64,
    /// Per-hour probability that a vital-like feature is charted.
    pub vital_sample_prob: f64,
    pub lab_interval_hours: (u32, u32),
    /// Probability that a lab's first draw predates admission.
    pub lab_pre_admission_prob: f64,
    pub ar_coef: f64,
    /// Multiplier on every feature's noise standard deviation.
    pub noise_scale: f64,
    pub second_stay_prob: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            los_median_hours: 48.0,
            los_severity_coef: 0.6,
            los_noise_sd: 0.25,
            min_los_hours: 5.0,
            max_los_hours: 720.0,
            mortality_intercept: -2.0,
            mortality_severity_coef: 1.5,
            vital_sample_prob: 0.9,
            lab_interval_hours: (6, 24),
            lab_pre_admission_prob: 0.5,
            ar_coef: 0.8,
            noise_scale: 1.0,
            second_stay_prob: 0.1,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.min_los_hours >= 5.0
            && self.max_los_hours >= self.min_los_hours
            && (0.0..=1.0).contains(&self.vital_sample_prob)
            && (0.0..=1.0).contains(&self.lab_pre_admission_prob)
            && (0.0..=1.0).contains(&self.second_stay_prob)
            && (0.0..1.0).contains(&self.ar_coef)
            && self.lab_interval_hours.0 >= 1
            && self.lab_interval_hours.1 >= self.lab_interval_hours.0
            && self.los_median_hours > 0.0
            && self.los_noise_sd >= 0.0
            && self.noise_scale >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid generator config {self:?}")))
        }
    }
}

struct FeatureSpec {
    name: &'static str,
    group: FeatureGroup,
    kind: ValueKind,
    base: f64,
    severity: f64,
    recovery: f64,
    noise_sd: f64,
    range: (f64, f64),
    integer: bool,
}

const fn vital(name: &'static str, base: f64, severity: f64, recovery: f64, noise_sd: f64, range: (f64, f64)) -> FeatureSpec {
    FeatureSpec { name, group: FeatureGroup::Other, kind: ValueKind::Continuous, base, severity, recovery, noise_sd, range, integer: false }
}

const fn lab(name: &'static str, base: f64, severity: f64, recovery: f64, noise_sd: f64, range: (f64, f64)) -> FeatureSpec {
    FeatureSpec { name, group: FeatureGroup::Lab, kind: ValueKind::Continuous, base, severity, recovery, noise_sd, range, integer: false }
}

const FEATURES: [FeatureSpec; 15] = [
    vital("heart_rate", 80.0, 10.0, 12.0, 6.0, (30.0, 200.0)),
    vital("resp_rate", 17.0, 3.0, 3.0, 2.0, (5.0, 50.0)),
    vital("sbp", 122.0, -8.0, -6.0, 8.0, (50.0, 220.0)),
    vital("temperature", 37.0, 0.4, 0.3, 0.3, (33.0, 42.0)),
    vital("spo2", 96.0, -1.5, -1.5, 1.0, (60.0, 100.0)),
    FeatureSpec { integer: true, ..vital("gcs", 14.0, -1.5, -2.0, 0.8, (3.0, 15.0)) },
    // Logit of the probability of mechanical ventilation.
    FeatureSpec { kind: ValueKind::Binary, ..vital("ventilated", -1.5, 1.2, 1.5, 0.5, (0.0, 1.0)) },
    lab("lactate", 1.8, 0.8, 1.0, 0.4, (0.3, 20.0)),
    lab("creatinine", 1.1, 0.35, 0.3, 0.15, (0.2, 12.0)),
    lab("bun", 20.0, 8.0, 6.0, 4.0, (2.0, 150.0)),
    lab("wbc", 10.0, 3.0, 2.0, 1.5, (0.5, 60.0)),
    lab("potassium", 4.1, 0.2, 0.0, 0.3, (2.0, 7.0)),
    lab("sodium", 139.0, -1.0, 0.0, 2.5, (115.0, 165.0)),
    lab("bilirubin", 0.9, 0.4, 0.2, 0.3, (0.1, 25.0)),
    lab("platelets", 220.0, -35.0, -20.0, 30.0, (5.0, 800.0)),
];

/// Features whose mean depends on remaining stay (non-zero recovery
/// coefficient).
pub fn los_signal_features() -> Vec<&'static str> {
    FEATURES.iter().filter(|f| f.recovery != 0.0).map(|f| f.name).collect()
}

/// (path, base logit, severity coefficient)
const DIAGNOSES: [(&str, f64, f64); 11] = [
    ("cardiovascular|shock|septic", -2.0, 1.0),
    ("cardiovascular|shock|cardiogenic", -3.0, 0.8),
    ("cardiovascular|arrhythmia|atrial fibrillation", -1.8, 0.3),
    ("cardiovascular|heart failure", -1.5, 0.4),
    ("pulmonary|respiratory failure|acute", -1.5, 0.9),
    ("pulmonary|pneumonia", -2.0, 0.5),
    ("renal|acute kidney injury", -1.8, 0.7),
    ("neurologic|stroke|ischemic", -2.5, 0.2),
    ("metabolic|diabetes mellitus", -1.2, 0.0),
    ("infectious|sepsis", -1.7, 1.0),
    ("rare|orphan syndrome", -6.0, 0.0),
];

const UNIT_TYPES: [(&str, f64); 4] = [("medical", 0.45), ("surgical", 0.3), ("cardiac", 0.15), ("neuro", 0.1)];
const STATIC_NAMES: [&str; 4] = ["age", "gender", "weight", "unit_type"];

/// Latent draw for one stay.
#[derive(Clone, Debug, PartialEq)]
pub struct StayProfile {
    pub stay_id: u64,
    pub patient_id: u64,
    pub severity: f64,
    pub length_hours: f64,
    pub admission_hour: u32,
    pub mortality: bool,
}

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    Normal::new(0.0, 1.0).expect("valid").sample(rng)
}

fn round_to(v: f64, digits: i32) -> f64 {
    let p = 10f64.powi(digits);
    (v * p).round() / p
}

fn draw_stay(rng: &mut ChaCha8Rng, cfg: &GenConfig, stay_id: u64, patient_id: u64, severity: f64) -> StayProfile {
    let log_l = cfg.los_median_hours.ln() + cfg.los_severity_coef * severity + cfg.los_noise_sd * std_normal(rng);
    let length = log_l.exp().clamp(cfg.min_los_hours, cfg.max_los_hours);
    let p_death = sigmoid(cfg.mortality_intercept + cfg.mortality_severity_coef * severity);
    StayProfile {
        stay_id,
        patient_id,
        severity,
        // whole minutes
        length_hours: (length * 60.0).round() / 60.0,
        admission_hour: rng.random_range(0..24),
        mortality: rng.random::<f64>() < p_death,
    }
}

/// Draws the latent stay profiles of `n_patients` patients.
pub fn draw_profiles(rng: &mut ChaCha8Rng, n_patients: usize, cfg: &GenConfig) -> Vec<StayProfile> {
    let mut out = Vec::with_capacity(n_patients);
    let mut stay_id = 1u64;
    for p in 1..=n_patients as u64 {
        let s = std_normal(rng);
        out.push(draw_stay(rng, cfg, stay_id, p, s));
        stay_id += 1;
        if rng.random::<f64>() < cfg.second_stay_prob {
            let s2 = 0.7 * s + (1.0f64 - 0.49).sqrt() * std_normal(rng);
            out.push(draw_stay(rng, cfg, stay_id, p, s2));
            stay_id += 1;
        }
    }
    out
}

/// Hourly latent means with AR(1) noise for hours `-24..=T`, indexed from 0.
fn latent_path(rng: &mut ChaCha8Rng, f: &FeatureSpec, p: &StayProfile, cfg: &GenConfig) -> Vec<f64> {
    let t_end = p.length_hours.ceil() as i64;
    let sd = f.noise_sd * cfg.noise_scale;
    let innov = (1.0 - cfg.ar_coef * cfg.ar_coef).sqrt();
    let mut noise = sd * std_normal(rng);
    (-24..=t_end)
        .map(|t| {
            noise = cfg.ar_coef * noise + innov * sd * std_normal(rng);
            let rem = (p.length_hours - t.max(0) as f64).max(0.0);
            f.base + f.severity * p.severity + f.recovery * (rem / 72.0).tanh() + noise
        })
        .collect()
}

fn observe(rng: &mut ChaCha8Rng, f: &FeatureSpec, latent: f64) -> f64 {
    match f.kind {
        ValueKind::Binary => f64::from(u8::from(rng.random::<f64>() < sigmoid(latent))),
        ValueKind::Continuous => {
            let v = latent.clamp(f.range.0, f.range.1);
            if f.integer {
                v.round()
            } else {
                round_to(v, 3)
            }
        }
    }
}

fn stay_events(rng: &mut ChaCha8Rng, p: &StayProfile, cfg: &GenConfig) -> Vec<RawEvent> {
    let mut events = Vec::new();
    let end_minutes = p.length_hours * 60.0;
    for f in &FEATURES {
        let path = latent_path(rng, f, p, cfg);
        let at = |minutes: f64| path[(((minutes / 60.0).ceil() as i64).max(-24) + 24) as usize];
        let mut push = |rng: &mut ChaCha8Rng, minutes: f64| {
            if minutes <= end_minutes {
                let value = observe(rng, f, at(minutes));
                events.push(RawEvent {
                    stay_id: p.stay_id,
                    feature_name: f.name.to_string(),
                    offset_minutes: minutes,
                    value,
                });
            }
        };
        match f.group {
            FeatureGroup::Other => {
                for h in 1..=p.length_hours.ceil() as i64 {
                    if rng.random::<f64>() < cfg.vital_sample_prob {
                        let m = (h - 1) as f64 * 60.0 + rng.random_range(1..=60) as f64;
                        push(rng, m);
                    }
                }
            }
            FeatureGroup::Lab => {
                let (lo, hi) = cfg.lab_interval_hours;
                let mut m = if rng.random::<f64>() < cfg.lab_pre_admission_prob {
                    -(rng.random_range(0..1440) as f64)
                } else {
                    rng.random_range(1..=360) as f64
                };
                while m <= end_minutes {
                    push(rng, m);
                    m += rng.random_range(lo..=hi) as f64 * 60.0 + rng.random_range(0..60) as f64;
                }
            }
        }
    }
    events.sort_by(|a, b| a.offset_minutes.total_cmp(&b.offset_minutes));
    events
}

fn stay_statics(rng: &mut ChaCha8Rng, p: &StayProfile) -> Vec<String> {
    let age = (64.0 + 14.0 * std_normal(rng) + 4.0 * p.severity).clamp(18.0, 95.0).round();
    let gender = u8::from(rng.random::<f64>() < 0.5);
    let weight = round_to((80.0 + 15.0 * std_normal(rng)).clamp(35.0, 200.0), 1);
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    let unit = UNIT_TYPES
        .iter()
        .find(|(_, w)| {
            acc += w;
            u < acc
        })
        .map_or(UNIT_TYPES[0].0, |(n, _)| n);
    vec![age.to_string(), gender.to_string(), weight.to_string(), unit.to_string()]
}

fn stay_diagnoses(rng: &mut ChaCha8Rng, p: &StayProfile) -> Vec<RawDiagnosis> {
    DIAGNOSES
        .iter()
        .filter_map(|(path, b, w)| {
            let present = rng.random::<f64>() < sigmoid(b + w * p.severity);
            let offset = rng.random_range(-600..=900) as f64;
            present.then(|| RawDiagnosis {
                stay_id: p.stay_id,
                code_path: path.to_string(),
                offset_minutes: offset,
            })
        })
        .collect()
}

/// Generates a raw cohort; deterministic in `seed`.
pub fn generate_synthetic_cohort(n_patients: usize, seed: u64, cfg: &GenConfig) -> Result<RawCohort> {
    if n_patients == 0 {
        return Err(Error::config("n_patients must be at least 1"));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profiles = draw_profiles(&mut rng, n_patients, cfg);
    let mut cohort = RawCohort {
        features: FEATURES
            .iter()
            .map(|f| TimeSeriesFeature {
                name: f.name.to_string(),
                kind: f.kind,
                group: f.group,
            })
            .collect(),
        static_names: STATIC_NAMES.iter().map(|s| s.to_string()).collect(),
        ..RawCohort::default()
    };
    for p in &profiles {
        cohort.events.extend(stay_events(&mut rng, p, cfg));
        cohort.diagnoses.extend(stay_diagnoses(&mut rng, p));
        cohort.stays.push(RawStay {
            stay_id: p.stay_id,
            patient_id: p.patient_id,
            length_hours: p.length_hours,
            admission_hour: p.admission_hour,
            mortality: p.mortality,
            statics: stay_statics(&mut rng, p),
        });
    }
    Ok(cohort)
}

/// Writes the raw cohort and its processed dataset into `dir`.
pub fn synthesize(
    dir: &Path,
    n_patients: usize,
    seed: u64,
    cfg: &GenConfig,
    pcfg: &PreprocessConfig,
) -> Result<Dataset> {
    let cohort = generate_synthetic_cohort(n_patients, seed, cfg)?;
    write_raw(dir, &cohort)?;
    let info = GeneratorInfo {
        seed,
        n_patients,
        config: cfg.clone(),
    };
    let data = preprocess(&cohort, pcfg, Some(info))?;
    save_dataset(dir, &data)?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Adjusted Fisher-Pearson sample skewness.
    fn skewness(x: &[f64]) -> f64 {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        let m3 = x.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
        let g1 = m3 / m2.powf(1.5);
        g1 * (n * (n - 1.0)).sqrt() / (n - 2.0)
    }

    #[test]
    fn total_los_is_positively_skewed() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = GenConfig {
            second_stay_prob: 0.0,
            ..GenConfig::default()
        };
        let los: Vec<f64> = draw_profiles(&mut rng, 10_000, &cfg).iter().map(|p| p.length_hours).collect();
        assert_eq!(los.len(), 10_000);
        assert!(skewness(&los) > 0.0);
        assert!(los.iter().all(|l| (5.0..=720.0).contains(l)));
    }

    #[test]
    fn labs_are_sparser_than_vitals() {
        let cohort = generate_synthetic_cohort(40, 3, &GenConfig::default()).unwrap();
        let hours: f64 = cohort.stays.iter().map(|s| s.length_hours.ceil()).sum();
        let rate = |group: FeatureGroup| {
            let names: Vec<&str> = FEATURES.iter().filter(|f| f.group == group).map(|f| f.name).collect();
            let n = cohort
                .events
                .iter()
                .filter(|e| e.offset_minutes > 0.0 && names.contains(&e.feature_name.as_str()))
                .count();
            n as f64 / (hours * names.len() as f64)
        };
        let (lab, vital) = (rate(FeatureGroup::Lab), rate(FeatureGroup::Other));
        assert!(lab < vital, "lab {lab} vital {vital}");
        assert!(lab > 0.0);
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate_synthetic_cohort(5, 9, &GenConfig::default()).unwrap();
        let b = generate_synthetic_cohort(5, 9, &GenConfig::default()).unwrap();
        let c = generate_synthetic_cohort(5, 10, &GenConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(generate_synthetic_cohort(0, 9, &GenConfig::default()).is_err());
    }
}
