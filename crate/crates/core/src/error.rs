use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("quaternion norm {0} outside [0.5, 2.0]; treating as corrupt")]
    CorruptQuaternion(f64),

    #[error("kinematics stream is empty")]
    EmptyStream,

    #[error("kinematics log line {line}: {msg}")]
    KinematicsLog { line: usize, msg: String },

    #[error("mesh {path}: {msg}")]
    MeshFormat { path: PathBuf, msg: String },

    #[error("unknown part group `{0}` (expected base, wrist or tip)")]
    UnknownPart(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("decimation rate must be at least 1")]
    ZeroDecimationRate,

    #[error("invalid camera intrinsics: {0}")]
    Intrinsics(String),

    #[error("invalid render config: {0}")]
    RenderConfig(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid label {0} (expected 0..=3)")]
    InvalidLabel(u8),

    #[error("mask size mismatch: {0}x{1} vs {2}x{3}")]
    MaskSize(usize, usize, usize, usize),

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("non-finite loss (seg={seg}, nc={nc}, ds={ds})")]
    NonFiniteLoss { seg: f64, nc: f64, ds: f64 },

    #[error("forward input mismatch: {0}")]
    ArmInput(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image encoding: {0}")]
    Image(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
