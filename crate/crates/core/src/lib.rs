//! Consistency-model lab: VP-SDE schedules, empirical and learned scores,
//! probability-flow solvers, Wasserstein estimators, consistency training
//! and rate studies.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod consistency;
pub mod error;
pub mod flow;
pub mod lab;
pub mod nn;
pub mod rng;
pub mod schedule;
pub mod score;
pub mod targets;
pub mod transport;

pub use error::{Error, Result};
pub use schedule::{Schedule, ScheduleKind, TimeGrid};
pub use score::{AnalyticScore, EmpiricalScore, PluginScore, ScoreField};
pub use targets::{Dataset, PointCloud, TargetDistribution};
