//! On-disk session format, frame containers, and PLY point-cloud I/O.
//!
//! A session directory holds a `manifest.json` plus PNG images:
//!
//! ```text
//! manifest.json
//! rgb/000000.png            8-bit RGB
//! depth/<source>/000000.png 16-bit gray, millimeters, 0 = no measurement
//! ```
//!
//! Poses in the manifest are camera-to-world 4x4 matrices in row-major order.

mod ply;
mod session;
mod types;

use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::GeometryError;

pub use ply::{load_mesh_ply, load_pointcloud_ply, save_mesh_ply, save_pointcloud_ply, PlyFormat};
pub use session::{
    decode_depth_mm, encode_depth_mm, load_session, save_session, Manifest, ManifestFrame, SaveReport,
    MAX_ENCODABLE_DEPTH_M,
};
pub use types::{Aabb, DepthMap, Frame, PointCloud, RgbImage, Session, SurfaceMesh, DEFAULT_FPS};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("session has no frames")]
    EmptySession,
    #[error("malformed manifest {path}: {reason}")]
    MalformedManifest { path: PathBuf, reason: String },
    #[error("frame {frame}: {what} is {actual:?}, expected {expected:?}")]
    DimensionMismatch { frame: u64, what: String, expected: (u32, u32), actual: (u32, u32) },
    #[error("frame {frame}: timestamp does not increase")]
    NonMonotonicTimestamps { frame: u64 },
    #[error("missing file referenced by manifest: {}", path.display())]
    MissingFile { path: PathBuf },
    #[error("frame {frame} has no depth source '{source_name}'")]
    UnknownDepthSource { frame: u64, source_name: String },
    #[error("{}: expected a 16-bit single-channel depth PNG", path.display())]
    DepthFormat { path: PathBuf },
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("malformed PLY header: {0}")]
    PlyHeader(String),
    #[error("truncated or malformed PLY body: {0}")]
    PlyBody(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("image codec error on {}: {source}", path.display())]
    Image { path: PathBuf, source: image::ImageError },
    #[error("I/O error on {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl DatasetError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DatasetError::Io { path: path.into(), source }
    }
}
