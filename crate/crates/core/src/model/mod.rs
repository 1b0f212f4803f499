//! The USLN network: dual-statistic white balance, multi-color-space stretch
//! and residual enhancement, plus parameter storage.

mod network;
pub mod weights;

pub use network::{
    dsbm_forward, mcsm_forward, rem_forward, touched_parameter_count, usln_forward, usln_graph, Architecture, Forward,
    GraphParams, ModuleTrace, STAT_EPS,
};
pub use weights::{GroupCounts, Param, WeightSet, TOTAL_PARAMS};
