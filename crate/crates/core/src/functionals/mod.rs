//! Stochastic Duhamel functionals, diagnostics and estimate verifiers.

pub mod duhamel;
pub mod maximal;
pub mod scattering;
pub mod verify;

pub use duhamel::{duhamel_residual, simulate_with_duhamel, stochastic_convolution, DuhamelAccumulator, DuhamelRun};
pub use maximal::{
    decompose_u1_u2, m1_functional, m1_profile, maximal_functional, maximal_profile, Decomposition, MaximalOptions,
    MaximalProfile, PartitionSpec, WeightedExponent, DEFAULT_E_M, DEFAULT_PARTITION_CAP,
};
pub use scattering::{ensemble_scattering, scattering_diagnostic, EnsembleScattering, ScatteringReport};
pub use verify::{
    theorem_experiment, verify_dispersive, verify_local_smoothing, wrap_time, DatumFamily, DispersiveTable,
    LinearFlow, SmoothingMode, SmoothingParams, SmoothingReport, TheoremConfig, TheoremKind, TheoremReport,
};
