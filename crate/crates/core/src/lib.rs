//! Prefix-based controller synthesis for switched linear systems over a finite
//! horizon, using system level parametrizations of the closed loop.
//!
//! A controller is designed for a finite set of admissible switching signals.
//! Its gains are shared between signals whose (possibly delayed) mode prefixes
//! coincide, so it can be run online from the observed mode history alone.

#![allow(clippy::needless_range_loop)]

pub mod blockmat;
pub mod error;
pub mod invariants;
pub mod language;
pub mod par;
pub mod scenario;
pub mod sim;
pub mod sls;
pub mod solver;
pub mod synth;
pub mod system;

pub use blockmat::{blkdiag, downshift, BlockDiagMatrix, BlockGrid, BlockLTMatrix, Matrix};
pub use error::{Error, Result};
pub use language::{
    build_prefix_tree, fault_language, uniform, PrefixNode, PrefixTree, SwitchingLanguage, SwitchingSignal,
};
pub use par::Execution;
pub use sim::{
    monte_carlo, sample_noise, simulate, worst_case_state_norm, BoundedSampling, Campaign, CampaignOptions,
    Disturbance, SimTrace, RNG_ALGORITHM,
};
pub use sls::{
    assemble_layout, check_affine, closed_loop_response, realize_online, recover_controller, PrefixController,
    PrefixLayout, ResponseBlock, SystemResponse,
};
pub use system::{
    admire_model, AdmireFault, BoundedNoise, CostSpec, GaussianNoise, ModeDynamics, NoiseSpec, SwitchedModel,
};
