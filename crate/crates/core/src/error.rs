use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("face {face} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        count: usize,
    },

    #[error("degenerate faces (repeated index or area below 1e-12): {faces:?}")]
    DegenerateFaces { faces: Vec<usize> },

    #[error("inconsistent face orientation across edge ({0}, {1})")]
    InconsistentOrientation(usize, usize),

    #[error("mesh is empty")]
    EmptyMesh,

    #[error("surface is not closed; {} boundary edges, first: {:?}", .edges.len(), .edges.first())]
    OpenSurface { edges: Vec<(usize, usize)> },

    #[error(
        "mesh has {components} connected components; one Poisson system per component is required"
    )]
    Disconnected { components: usize },

    #[error("factorization failed: matrix not positive definite at pivot {pivot}")]
    NotPositiveDefinite { pivot: usize },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mesh has no UV coordinates (missing UVs)")]
    MissingUvs,

    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
