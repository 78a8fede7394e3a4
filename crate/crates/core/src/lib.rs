//! Attribute a system's overall measured effect to one component under
//! investigation (CUI) by running paired experiments over a declared design
//! context (DC), and compare that attribution against factorial designs,
//! randomized controlled trials and fixed-configuration benchmarking.
//!
//! The pipeline is `space` → `design` → `runner` → `stats`, with `meta`
//! closing the loop on synthetic models where the true effect is known.

pub mod design;
pub mod error;
mod hash;
pub mod meta;
pub mod runner;
pub mod space;
pub mod stats;

pub use design::{Arm, DesignPlan, FactorSplit, Group, Method, Trial};
pub use error::{Error, Result};
pub use hash::derive_seed;
pub use meta::{AccuracyRow, Direction, MethodSpec, Scenario};
pub use runner::{Aggregation, Backend, LogHeader, Measurement, RunLog, SyntheticModel};
pub use space::{ConfigId, ConfigSpace, Configuration, Factor, Level, Role, RoleSet};
pub use stats::{AnovaTable, AverageKind, EffectEstimate, Verdict};
