//! Data-driven safety certificates for stochastic systems using kernel
//! conditional mean embeddings.
//!
//! The direct estimator regresses whole-trajectory safety labels on
//! initial states. The indirect family (empirical dynamic programming,
//! barrier checks, interval and sub-simulation abstractions) composes a
//! learned one-step model. Histogram binning turns any score into a
//! distribution-free certified lower bound.

pub mod abstraction;
pub mod barrier;
pub mod benchmark;
pub mod calibration;
pub mod direct;
pub mod dp;
pub mod error;
pub mod io;
pub mod kernels;
pub mod metrics;
pub mod points;
pub mod region;
pub mod rng;

pub use benchmark::{SynthParams, Trajectory, TrajectorySet, TransitionSet};
pub use direct::{fit_direct, DirectModel, ErrorBudget};
pub use dp::{fit_dp, DpModel};
pub use error::{Error, Result};
pub use kernels::{fit_weights, GramSystem, KernelSpec};
pub use points::PointSet;
pub use region::{AxisBox, SafeRegion};
