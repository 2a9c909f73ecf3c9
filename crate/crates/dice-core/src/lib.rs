//! Desk-scale training laboratory for diversity-regularized deep ensembles.
//!
//! The pieces, bottom up:
//!
//! - [`tensor`] / [`tape`] / [`optim`]: dense f64 tensors, recorded-tape
//!   reverse-mode differentiation, SGD-Nesterov and RMSProp.
//! - [`model`]: stochastic Gaussian encoders, class-embedding backward
//!   encoders, classifier heads and the shared pairwise discriminator.
//! - [`losses`]: variational bottleneck classification losses (VCEB / VIB)
//!   with the closed-form Gaussian KL.
//! - [`redundancy`]: neural conditional-redundancy estimation — joint and
//!   product samplers over a per-class feature memory, density-ratio
//!   clipping, discriminator loss and the adversarial member losses.
//! - [`training`]: the full alternating procedure with all schedules and
//!   ablation variants (Ind / IB / CEB / IBR / CEBR / DICE).
//! - [`metrics`]: diversity, uncertainty, calibration with temperature
//!   scaling, OOD scoring and the bias-variance-covariance diagnostic.
//! - [`datagen`]: synthetic classification tasks with controllable spurious
//!   correlations, plus OOD shifts of them.
//! - [`experiment`]: reproducible run directories, sweeps and report data.
//! - [`oracle`]: independent reference computations (finite differences,
//!   Monte-Carlo KL, exhaustive enumerations, brute-force metric sweeps)
//!   used to verify the implementation paths above.

pub mod checkpoint;
pub mod checks;
pub mod datagen;
pub mod experiment;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod oracle;
pub mod parallel;
pub mod redundancy;
pub mod rng;
pub mod schedule;
pub mod tape;
pub mod tensor;
pub mod training;

pub use optim::{GradMap, ParamSet};
pub use tape::{Gradients, Tape, TapeError, Var};
pub use tensor::Tensor;
