//! Finite-sample inference for the coefficient vector of the semiparametric
//! (median-restricted) binary response model `Y = 1{X·β + U ≥ 0}`.
//!
//! Inference is conditional on the observed covariates. Hypotheses
//! `H0: β = b` are tested with a studentized statistic built from moment
//! inequalities whose instrument directions cover every cell of the
//! hyperplane arrangement induced by the covariates. Critical values come
//! from the exactly known law of a Rademacher reference statistic, so the
//! test has size at most `α` for any sample size.
//!
//! Module map:
//!
//! - [`data`]: samples, parameter points, sign patterns, probability vectors.
//! - [`instruments`]: instrument direction sets (exact for `K = 2`, cell
//!   enumeration for general `K`), backed by the margin LP in [`lp`].
//! - [`teststat`]: moments, `T_n(b)`, Rademacher critical values, the test.
//! - [`inference`]: identified set, violation measure, power bounds, test
//!   inversion over a parameter grid.
//! - [`lrt`]: likelihood ratio benchmarks against a simple alternative.
//! - [`montecarlo`]: the four simulation designs and the experiment driver.

pub mod bitset;
pub mod data;
pub mod error;
pub mod inference;
pub mod instruments;
pub mod lp;
pub mod lrt;
pub mod montecarlo;
pub mod rng;
pub mod teststat;

pub use data::{
    load_covariates, load_probs, load_sample, sign_pattern, CondProbs, Covariates, ParamPoint,
    Sample, SignPattern,
};
pub use error::{Error, Result};

pub use inference::{PowerReport, ThetaGrid};
pub use instruments::{build_instruments_2d, enumerate_cells, InstrumentSets};
pub use lrt::{LrtSpec, NullDist};
pub use montecarlo::{Design, DgpSpec, McConfig, McResult};
pub use teststat::{Side, TestConfig, TestOutcome, DEFAULT_EPSILON};
