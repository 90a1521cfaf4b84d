//! Periodic orbits of delay-coupled oscillator networks.
//!
//! This crate constructs periodic orbits of delay differential equations by
//! harmonic balance (a truncated Fourier ansatz collocated at uniform sample
//! times), computes their Floquet exponents as zeros of a per-mode stability
//! determinant, continues orbit branches in a scalar parameter with a
//! pseudo-arclength predictor–corrector, and cross-validates everything
//! against a direct delay-equation integrator with spatio-temporal pattern
//! classification.
//!
//! The network layer is restricted to circulant rings: coupling weights and
//! delays depend only on the cyclic distance between nodes. The circulant
//! eigenvectors then decouple the linearised network equations into one
//! single-node-sized stability problem per spatial mode `q`.

pub mod continuation;
pub mod error;
pub mod floquet;
pub mod simulate;
pub mod solver;
pub mod model;
pub mod spectral;

pub use continuation::{
    Branch, BranchPoint, ContinuationProblem, ExponentPolicy, StabilityEvent, StepSettings,
    Termination,
};
pub use error::{Error, Result};
pub use floquet::{
    FloquetExponent, MaxExponentOptions, ModeExponents, ScanRegion, SpectrumScan,
    StabilityOperator, StabilityProblem,
};
pub use simulate::{
    classify_pattern, integrate, perturb_mode, verify_orbit, ClassifyOptions, DelaySystem,
    HistoryFunction, NetworkSystem, PatternKind, PatternLabel, SimulationResult, SyncSystem,
};
pub use model::{
    sigmoid, sigmoid_derivative, NodeDynamics, NodeModel, PrimerParams, RingTopology,
    SigmoidParams, WilsonCowanParams,
};
pub use solver::{
    hb_residual, initial_guess_from_simulation, solve_orbit, solve_travelling_wave, HbProblem,
    NewtonSettings,
};
pub use spectral::{OrbitSolution, SpectralBasis};

/// CSV float formatting: 10 significant digits, fixed layout for
/// deterministic byte-identical output.
pub fn fmt_csv(x: f64) -> String {
    if x == 0.0 {
        return "0.000000000e0".into();
    }
    format!("{x:.9e}")
}
