use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pixel ({u}, {v}) lies outside the fisheye image circle (theta = {theta:.4} rad)")]
    InvalidPixel { u: f64, v: f64, theta: f64 },

    #[error("ray origin (|o| = {origin_norm}) is not inside the sphere of radius {radius}; is the scene normalized?")]
    OriginOutsideSphere { origin_norm: f64, radius: f64 },

    #[error("disparity must be positive, got {0}")]
    NonPositiveDisparity(f64),

    #[error("camera rig is degenerate: {0}")]
    DegenerateRig(String),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot downsample axis {axis} from {from} to {to}")]
    Downsample { axis: usize, from: usize, to: usize },

    #[error("empty ray batch")]
    EmptyBatch,

    #[error("non-finite loss at step {step}: color = {color}, opacity = {opacity}")]
    NonFinite { step: usize, color: f64, opacity: f64 },

    #[error("dataset error: {0}")]
    Data(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
