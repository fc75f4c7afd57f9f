use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::PredictionSet;

pub const DEFAULT_COHORT: usize = 16;
pub const DEFAULT_RUNS: usize = 500;
/// Hour at which predictions are frozen for the simulation.
pub const SIMULATION_START_HOUR: usize = 5;

/// True and predicted remaining stay (days) of one stay at the start hour.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartEstimate {
    pub stay_id: u64,
    pub truth: f64,
    pub pred: f64,
}

/// One estimate per stay, taken at `hour`.
pub fn estimates_at(set: &PredictionSet, hour: usize) -> Vec<StartEstimate> {
    let mut by_stay = BTreeMap::new();
    for i in 0..set.len() {
        if set.hour[i] == hour {
            by_stay.entry(set.stay_id[i]).or_insert(StartEstimate {
                stay_id: set.stay_id[i],
                truth: set.truth[i],
                pred: set.pred[i],
            });
        }
    }
    by_stay.into_values().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyPoint {
    pub hour: usize,
    pub true_mean: f64,
    pub true_std: f64,
    pub pred_mean: f64,
    pub pred_std: f64,
    pub error_mean: f64,
    pub error_std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationRun {
    /// Indices into the estimate list.
    pub cohort: Vec<usize>,
    /// Patients still in the unit at each elapsed hour.
    pub true_counts: Vec<usize>,
    pub pred_counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Simulation {
    pub curve: Vec<OccupancyPoint>,
    pub runs: Vec<SimulationRun>,
}

/// Patients with remaining stay strictly greater than `h` hours, for
/// `h = 0..hours`.
fn remaining_counts(days: impl Iterator<Item = f64> + Clone, hours: usize) -> Vec<usize> {
    (0..hours)
        .map(|h| days.clone().filter(|d| d * 24.0 > h as f64).count())
        .collect()
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Samples `runs` cohorts of `cohort` stays without replacement and tracks
/// how many remain in the unit, truly and as predicted at admission to the
/// simulation. Run `r` draws from stream `r` of `seed`, so the result does
/// not depend on thread count.
pub fn simulate_icu(estimates: &[StartEstimate], runs: usize, cohort: usize, seed: u64) -> Result<Simulation> {
    if estimates.len() < cohort {
        return Err(Error::Dataset(format!(
            "{} stays available for a cohort of {cohort}",
            estimates.len()
        )));
    }
    if runs == 0 || cohort == 0 {
        return Err(Error::config("simulation needs at least one run and one patient"));
    }
    let longest = estimates.iter().map(|e| e.truth.max(e.pred)).fold(0.0, f64::max);
    let hours = (longest * 24.0).ceil() as usize + 1;
    let runs: Vec<SimulationRun> = (0..runs as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r);
            let picked = sample(&mut rng, estimates.len(), cohort).into_vec();
            let chosen = picked.iter().map(|&i| estimates[i]);
            SimulationRun {
                true_counts: remaining_counts(chosen.clone().map(|e| e.truth), hours),
                pred_counts: remaining_counts(chosen.map(|e| e.pred), hours),
                cohort: picked,
            }
        })
        .collect();
    let curve = (0..hours)
        .map(|h| {
            let t = runs.iter().map(|r| r.true_counts[h] as f64);
            let p = runs.iter().map(|r| r.pred_counts[h] as f64);
            let e = runs.iter().map(|r| r.true_counts[h] as f64 - r.pred_counts[h] as f64);
            let ((true_mean, true_std), (pred_mean, pred_std), (error_mean, error_std)) = (mean_std(t), mean_std(p), mean_std(e));
            OccupancyPoint {
                hour: h,
                true_mean,
                true_std,
                pred_mean,
                pred_std,
                error_mean,
                error_std,
            }
        })
        .collect();
    Ok(Simulation { curve, runs })
}

pub fn write_simulation(path: &Path, curve: &[OccupancyPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in curve {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
