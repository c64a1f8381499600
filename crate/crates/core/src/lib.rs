//! Estimation of the Pitman-Yor type parameter σ (and precision M) by maximum
//! marginal likelihood and by grid posteriors, with the limit constants that
//! describe the estimators under a misspecified true distribution and a Monte
//! Carlo harness that checks them.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod asymptotics;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod inference;
pub mod likelihood;
pub mod numerics;
pub mod partition;
pub mod population;
pub mod sampler;

pub use asymptotics::{AsymptoticConstants, ExtReal, LimitSeries, PrecisionLimit};
pub use error::{Error, Result};
pub use estimators::{
    mle_sigma, profile_mle, sandwich_se, Boundary, EstimateOptions, EstimateResult,
};
pub use experiments::{
    run_experiment, Check, CheckReport, ExperimentConfig, ExperimentReport, Tolerances,
};
pub use inference::{
    bvm_gap, forensic_lr, posterior_sigma, ForensicResult, GridOptions, MPrior, PosteriorGrid,
    PriorSpec, SigmaPrior,
};
pub use likelihood::{LikelihoodSurface, PYParams};
pub use numerics::SeriesTolerance;
pub use partition::PartitionStats;
pub use population::{Population, PopulationSpec, RegularVariation, SlowVariation};
pub use sampler::{OccupancyCounts, Regime, RngStream};
