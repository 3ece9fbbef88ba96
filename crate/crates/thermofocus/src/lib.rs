//! Temperature-focused hyperthermia planning for phased-array applicators.
//!
//! The pipeline optimizes antenna excitations for SAR focusing on a voxel
//! phantom, solves the steady-state Pennes bioheat equation under water-bolus
//! and airway cooling, and corrects the SAR target position by an exhaustive
//! search that maximizes the tumor temperature-coverage objective.
//!
//! Modules follow the planning stages:
//! - [`phantom`]: tissue database, geometric phantoms, rasterization.
//! - [`fields`]: per-antenna complex E-fields, superposition, SAR.
//! - [`sar_planner`]: THQ objective and PSO excitation optimization.
//! - [`bioheat`]: steady-state Pennes solver with Robin/Dirichlet boundaries.
//! - [`gaussfit`]: Gaussian approximation of the focused field intensity.
//! - [`tshape`]: SAR-temperature shift, refinement search, full pipeline.
//! - [`cli`]: scenario configs, subcommand drivers, report files.

pub mod bioheat;
pub mod cli;
pub mod fields;
pub mod gaussfit;
pub mod io;
mod linalg;
pub mod phantom;
pub mod sar_planner;
pub mod tshape;

mod error;

pub use error::{Error, Result};
