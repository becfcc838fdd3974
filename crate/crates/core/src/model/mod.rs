//! The scoring network: embeddings, per-strategy adaptive attention blocks,
//! gated cross-block fusion, and the scalar head, plus ablation switches
//! that peel those pieces back to a plain transformer baseline.

pub mod bias;
pub mod checkpoint;
mod config;
mod forward;
mod params;

pub use config::{Activation, ModelConfig};
pub use forward::{
    atl_forward, bgf_forward, block_forward, embed, grad_check, score, score_with_trace,
    ForwardTrace, RMS_EPS,
};
pub use params::{BlockParams, BoundParams, FusionParams, GateParams, LayerParams, Parameters};

pub(crate) use forward::{logits_on_tape, temperature_value};
