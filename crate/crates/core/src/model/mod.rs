//! The TPC network: stacked layers of per-feature temporal convolution and
//! shared pointwise convolution, a diagnosis embedding and a pointwise head.

mod checkpoint;
mod config;
mod input;
mod params;
mod tpc;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::{LayerLedger, Ledger, ModelConfig, Variant};
pub use input::{InputVars, ModelInput};
pub use params::{init_parameters, LayerSlots, Layout, Param};
pub use tpc::{ForwardCtx, LayerState, LayerTrace, ModelOutput, TpcModel};
