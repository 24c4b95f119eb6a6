//! Pattern-mixture analysis of paired 2×2 crossover trials with arbitrarily
//! missing responses.
//!
//! Each matched pair of subjects (types 1 and 2) is randomized to sequence AB or
//! BA and yields the quadrivariate response `(Y_1A, Y_1B, Y_2A, Y_2B)`. Pairs are
//! classified into one of fifteen missingness patterns, patterns are collapsed
//! into estimation groups, and a general linear model with a shared
//! unstructured covariance is fitted with group-specific fixed effects. The
//! group-specific cell means are then pooled with the empirical group
//! proportions, and the type-by-treatment interaction
//! `γ = (μ_1A − μ_1B) − (μ_2A − μ_2B)` is tested with a delta-method Wald test.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, configuration
//! and the command line live in the companion `crossmix` crate.
//!
//! Module map:
//!
//! * [`patterns`]: missingness taxonomy, selection matrices, grouping schemes.
//! * [`model`]: mean structure, covariance parameterization, reduced moments.
//! * [`estimation`]: ML / REML fitting by profile Newton iteration.
//! * [`inference`]: pooled means, delta-method variance, Wald test.
//! * [`simulate`]: synthetic data under known truth and Monte Carlo calibration.

#![no_std]
#![warn(missing_docs)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod estimation;
pub mod inference;
mod linalg;
pub mod model;
pub mod patterns;
pub mod simulate;

pub use error::{Error, Result};
pub use estimation::{fit, FitOptions, Method, ModelFit};
pub use inference::{delta_variance, interaction_contrast, pooled_means, wald_p, InferenceResult};
pub use model::{CovarianceUnstructured, GroupEffects, MeanModel, PairRecord};
pub use patterns::{classify, GroupingScheme, ObservationMask, PatternId, Sequence};
pub use simulate::{run_calibration, simulate_dataset, CalibrationReport, SimScenario};
