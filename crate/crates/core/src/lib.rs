//! Simulation of collective spontaneous emission from N two-level emitters
//! coupled to a bidirectional waveguide with finite photon propagation delay.
//!
//! The field is sliced into time bins that collide with the emitters one
//! step at a time ([`collision`]); the joint state is a matrix product state
//! ([`mps`]) built on dense complex kernels ([`tensor`]). A dense Lindblad
//! solver ([`markov`]) provides the zero-delay reference, and [`observables`]
//! collects everything that is measured along a run.

pub mod collision;
pub mod markov;
pub mod mps;
pub mod observables;
mod sectors;
pub mod tensor;

pub use collision::{
    build_gates, build_layout, prepare_all_excited, prepare_emitter_state, prepare_symmetric_dicke,
    run, step, CollisionError, CollisionGate, CollisionRun, ModelParams, ObserverSchedule,
    SiteLayout, StepReport,
};
pub use markov::{build_spec, collective_jump_ops, evolve, LindbladMode, LindbladSpec, MarkovError};
pub use mps::{MatrixProductState, MpsError, SiteKind};
pub use observables::{
    BinOccupation, EmitterDensityMatrix, FieldProfile, ObservableError, ProfileCell,
    TimeSeriesRecord,
};
pub use tensor::{contract, expm_hermitian_generator, svd_truncate, ComplexTensor, SvdResult, TensorError, TruncationPolicy, C64};

/// Crate version, recorded in run metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
