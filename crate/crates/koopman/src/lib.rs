//! Data-driven lifted linear predictors for nonlinear controlled dynamical
//! systems, and linear model predictive control built on top of them.
//!
//! The workflow mirrors the toolkit's CLI: collect snapshot data from a
//! benchmark system ([`dynamics`]), choose a lifting dictionary
//! ([`dictionary`]), fit a lifted linear model `z⁺ = A z + B u`, `x̂ = C z` by
//! least squares ([`edmd`]), evaluate its prediction quality against
//! comparator predictors ([`predictor`]), and close the loop with a dense-form
//! MPC controller ([`mpc`]) driven by an operator-splitting QP solver
//! ([`qp`]).
//!
//! All numeric code is generic over the scalar type through [`Scalar`];
//! the aliases below pin the common double-precision instantiation.

pub mod dictionary;
pub mod dynamics;
pub mod edmd;
mod error;
pub mod io;
pub mod mpc;
pub mod predictor;
pub mod qp;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// The crate-wide seeded generator: a ChaCha8 stream keyed by the seed.
/// Pinning the generator (not just the seed) keeps campaigns, dictionaries
/// and trial draws bit-reproducible across platforms and releases.
pub fn seeded_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

/// Double-precision aliases for the main types.
pub type Dictionary64 = dictionary::Dictionary<f64>;
pub type BasisFn64 = dictionary::BasisFn<f64>;
pub type DelayVector64 = dictionary::DelayVector<f64>;
pub type DataSet64 = edmd::DataSet<f64>;
pub type LiftedModel64 = edmd::LiftedModel<f64>;
pub type FitReport64 = edmd::FitReport<f64>;
pub type Trajectory64 = predictor::Trajectory<f64>;
pub type CarlemanModel64 = predictor::CarlemanModel<f64>;
pub type KdvSolver64 = dynamics::kdv::KdvSolver<f64>;
pub type MpcSpec64 = mpc::MpcSpec<f64>;
pub type DenseQp64 = mpc::DenseQp<f64>;
pub type QpProblem64 = qp::QpProblem<f64>;
pub type QpSolution64 = qp::QpSolution<f64>;
