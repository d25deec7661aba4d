pub mod config;
pub mod diff;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod kinematics;
pub mod losses;
pub mod mesh;
pub mod metrics;
pub mod model;
pub mod params;
pub mod part_graph;
pub mod render;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
