//! Coupled sea-level-rise flooding and migration simulation.
//!
//! Counties are split into flooded and dry parts per scenario year, flooded
//! residents are redistributed with a climate migration model, and ordinary
//! moves between dry parts come from a standard model. The numeric core is
//! generic over [`Scalar`] (`f32` or `f64`); the `*64` / `*32` aliases below
//! fix the precision.

pub mod effects;
pub mod error;
pub mod fitval;
pub mod io;
pub mod jointmodel;
pub mod matrix;
pub mod migmodels;
pub mod scalar;
pub mod slrsplit;
pub mod zonegraph;

pub use error::{Error, Result};
pub use matrix::{MigrationMatrix, Registry};
pub use migmodels::{ModelKind, ModelSpec};
pub use scalar::Scalar;
pub use slrsplit::FloodScenario;
pub use zonegraph::{Zone, ZoneGraph};

pub type Zone64 = zonegraph::Zone<f64>;
pub type ZoneGraph64 = zonegraph::ZoneGraph<f64>;
pub type BlockGroup64 = slrsplit::BlockGroup<f64>;
pub type SplitZones64 = slrsplit::SplitZones<f64>;
pub type MigrationMatrix64 = matrix::MigrationMatrix<f64>;
pub type ModelSpec64 = migmodels::ModelSpec<f64>;
pub type NeuralModel64 = migmodels::NeuralModel<f64>;
pub type JointRunConfig64 = jointmodel::JointRunConfig<f64>;
pub type JointRun64 = jointmodel::JointRun<f64>;

pub type Zone32 = zonegraph::Zone<f32>;
pub type ZoneGraph32 = zonegraph::ZoneGraph<f32>;
pub type BlockGroup32 = slrsplit::BlockGroup<f32>;
pub type SplitZones32 = slrsplit::SplitZones<f32>;
pub type MigrationMatrix32 = matrix::MigrationMatrix<f32>;
pub type ModelSpec32 = migmodels::ModelSpec<f32>;
pub type NeuralModel32 = migmodels::NeuralModel<f32>;
pub type JointRunConfig32 = jointmodel::JointRunConfig<f32>;
pub type JointRun32 = jointmodel::JointRun<f32>;
