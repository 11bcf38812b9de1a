//! Goodness-of-fit testing for parametric models of bivariate extremal
//! dependence.
//!
//! The test compares a rank-based, constraint-corrected estimate of the
//! angular measure with the angular measure of a fitted parametric model
//! through a weighted L1 (Wasserstein) distance. Critical values come from a
//! Monte-Carlo simulation of the asymptotic null distribution, built from a
//! discretized set-indexed Wiener process.
//!
//! Modules, from the bottom up:
//! - [`geometry`]: L_p norms, the exceedance boundary, constraint and weight functions.
//! - [`models`]: logistic and Hüsler–Reiss families and their angular CDFs.
//! - [`empirical`]: ranks, exceedance angles, Euclidean-likelihood weights, the empirical stdf.
//! - [`wasserstein`]: the weighted L1 distance and the test statistic.
//! - [`limitlaw`]: the null-distribution simulator, quantiles, p-values, critical-value tables.
//! - [`datagen`]: copula samplers used by simulation studies.
//! - [`experiments`]: single tests, power studies, multi-pair analyses, multiple-testing corrections.

// Negated float comparisons are used on purpose so that NaN fails checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod empirical;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod limitlaw;
pub mod models;
pub mod quad;
pub mod rng;
pub mod special;
pub mod wasserstein;

pub use datagen::CopulaSpec;
pub use empirical::{AngularDataset, BivariateSample, StepCdf};
pub use error::{Error, Result};
pub use experiments::{MultiTestReport, PowerCurve, ScenarioConfig, TestConfig, TestReport};
pub use geometry::{PNorm, WeightKind};
pub use limitlaw::{CriticalValueTable, FieldGrid, GaussianField, GridPreset, LimitLawDraws, LimitLawSimulator};
pub use models::{AngularModel, Family, ModelParams};
