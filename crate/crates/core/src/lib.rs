//! Nonlinear single-photon-detector models and coherent-state detector tomography.
//!
//! - [`povm`]: Click diagonals of linear, `n`-photon and composite nonlinear detectors and
//!   their coherent-state response.
//! - [`loss`]: binomial loss channel acting on diagonal POVMs, forward and inverse.
//! - [`tomography`]: Poisson probe matrix, box-constrained smoothed reconstruction,
//!   probe rescaling and fidelity.
//! - [`modelfit`]: constrained fit of the nonlinear model, mechanism pruning and the
//!   loss-scaling regression.
//! - [`simulator`]: seeded synthetic experiments and probe sweeps.
//!
//! ```
//! use nlspd::{coherent_click_probability, NonlinearSpdParams};
//!
//! let detector = NonlinearSpdParams::new(vec![7.29e-4, 9.95e-2]).unwrap();
//! let q = coherent_click_probability(&detector, 30.0).unwrap();
//! assert!((q - 0.95).abs() < 0.01);
//! ```

pub mod bias_points;
pub mod error;
pub mod io;
pub mod loss;
pub mod modelfit;
pub mod numerics;
pub mod pipeline;
pub mod povm;
pub mod simulator;
pub mod solver;
pub mod tomography;

pub use error::{Error, Result};
pub use loss::{scale_povm, unscale_povm, LossChannel};
pub use modelfit::{
    fit_objective, fit_params, loss_scaling_analysis, prune_mechanisms, FitReport, MechanismLogVector,
};
pub use numerics::{binomial_exponent, log_binomial, log_poisson_weight, LogProb};
pub use povm::{
    coherent_click_probability, nonlinear_povm, npd_povm, spd_povm, truncation_for, DiagonalPovm,
    NonlinearSpdParams,
};
pub use simulator::{simulate, sweep_probe_grid, ExperimentConfig, Truth};
pub use tomography::{
    build_probe_matrix, fidelity, reconstruct_povm, scaled_fit_workflow, ClickRecord, ProbeMatrix, ProbeSet,
};
