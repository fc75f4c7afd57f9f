//! Raw ICU event logs to hourly model inputs, plus a synthetic cohort
//! generator and the on-disk dataset format.

pub mod dataset;
pub mod diagnoses;
pub mod events;
pub mod preprocess;
pub mod raw;
pub mod scaling;
pub mod statics;
pub mod stay;
pub mod synth;

pub use dataset::{load_dataset, save_dataset, Dataset, DatasetMeta, FeatureSubset, GeneratorInfo};
pub use diagnoses::{encode_diagnoses, DiagnosisCodebook};
pub use events::{
    append_clock_features, forward_fill_with_decay, resample_hourly, FeatureGroup,
    FeatureRegistry, HourlyGrid, RawEvent, TimeSeriesFeature, ValueKind,
};
pub use preprocess::{preprocess, PreprocessConfig};
pub use raw::{read_raw, write_raw, RawCohort};
pub use scaling::{fit_scaling, scale_value, FeatureScale, ScalingSpec};
pub use stay::{
    remaining_los_labels, split_cohort, CohortSplit, Split, StayRecord, FIRST_LABELLED_HOUR,
    HORIZON_HOURS, MAX_LOS_DAYS, MIN_LOS_DAYS,
};
pub use synth::{generate_synthetic_cohort, los_signal_features, synthesize, GenConfig};
