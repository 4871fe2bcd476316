//! Dynamic path analysis for survival outcomes under the additive hazard
//! model.
//!
//! The crate estimates time-varying covariate effects with Aalen's additive
//! hazard estimator, splits a treatment effect into direct and
//! mediator-driven (indirect) cumulative effects, attaches subject-level
//! bootstrap bands, and ships a discrete-time trial simulator and a
//! Monte-Carlo check of the selection and collapsibility properties that
//! make the decomposition valid.
// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bootstrap;
pub mod cli;
pub mod collider;
pub mod data;
pub mod dpa;
pub mod error;
pub mod hazard;
pub mod regress;
pub mod rng;
pub mod simgen;
pub mod spline;

pub use bootstrap::{bootstrap_bands, BandSet, BootstrapBands, BootstrapConfig};
pub use data::{Covariate, Dataset, MediatorSeries, Subject};
pub use dpa::{fit_dpa, fit_local, path_effect, total_decomposition, DpaResult, PathModel, PathSpec};
pub use error::{Error, Result};
pub use hazard::{fit_additive, CumulativeCurve, HazardSpec};
pub use simgen::{generate_trial, snapshot, true_curves, SimConfig};
pub use spline::SplineFunction;
