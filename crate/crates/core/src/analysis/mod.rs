//! Attribution, reliability, occupancy simulation and constant baselines.

mod attribution;
mod baseline;
mod reliability;
mod simulation;

pub use attribution::{
    aggregate_attributions, attribute_cohort, attribute_stay, integrated_gradients,
    mean_baseline, write_attributions, AttributionResult, FeatureAttribution, StayAttribution,
    ATTRIBUTION_HOUR, DEFAULT_IG_STEPS,
};
pub use baseline::{baseline_value, fit_baseline, BaselineKind, ConstantPredictor};
pub use reliability::{day_bin, los_bin_label, reliability_grid, write_reliability, ReliabilityCell, DAY_BINS};
pub use simulation::{
    estimates_at, simulate_icu, write_simulation, OccupancyPoint, SimulationRun, Simulation,
    StartEstimate, DEFAULT_COHORT, DEFAULT_RUNS, SIMULATION_START_HOUR,
};
