//! Simulation and reconstruction of heralded continuous-wave homodyne
//! acquisition: trace synthesis, bandwidth and sampling degradation,
//! temporal-mode extraction, quadrature projection and maximum-likelihood
//! tomography.

pub mod autocorr;
pub mod config;
pub mod density;
pub mod dsp;
pub mod error;
pub mod fock;
pub mod io;
pub mod mode;
pub mod pipeline;
pub mod quadrature;
pub mod rng;
pub mod spectrum;
pub mod state;
pub mod synth;
pub mod tomography;

pub use density::{CMatrix, DensityMatrix};
pub use error::{Error, Result};
pub use mode::{ButterworthSpec, Grid, TemporalMode};
pub use state::{heralded_density, HeraldedStateModel, MarginalSampler};
pub use synth::{AcquisitionConfig, HomodyneTrace, TraceSource};
