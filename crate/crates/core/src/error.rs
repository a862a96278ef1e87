use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed model header: {0}")]
    MalformedHeader(String),
    #[error("unsupported model format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("degenerate scale {scale:e} below floor {floor:e}")]
    DegenerateScale { scale: f64, floor: f64 },
    #[error("invalid camera `{id}`: {reason}")]
    InvalidCamera { id: String, reason: String },
    #[error("duplicate camera id `{0}`")]
    DuplicateCamera(String),

    #[error("render was produced without contributor lists; backward needs them")]
    MissingContributorLists,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("model has no primitives")]
    EmptyModel,
    #[error("camera mismatch between student and teacher renders: `{student}` vs `{teacher}`")]
    CameraMismatch { student: String, teacher: String },
    #[error("degenerate plane: camera center lies on the plane (distance {0:e})")]
    DegeneratePlane(f64),

    #[error("no cameras available: {0}")]
    NoCameras(String),
    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },
    #[error("device cell `{0}` received no cameras")]
    EmptyCell(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid partition spec `{0}`; expected \"(PxP)*E\"")]
    PartitionSpec(String),

    #[error("missing artifact from `{agent}` at {path}")]
    MissingArtifact { agent: String, path: PathBuf },
    #[error("artifact schema violation in {path}: {reason}")]
    SchemaViolation { path: PathBuf, reason: String },
    #[error("stage `{stage}` failed: {reason}")]
    StageFailed { stage: String, reason: String },

    #[error("camera `{0}` sees no surface")]
    CameraSeesNothing(String),
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("no valid depth observations to fuse")]
    EmptyFusion,

    #[error("parse error in {context}: {reason}")]
    Parse { context: String, reason: String },
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(context: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            reason: reason.into(),
        }
    }
}
