use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no plane reached the minimum support of {min_inliers} points")]
    NoPlanesFound { min_inliers: usize },

    #[error("no floor candidate within {max_angle_deg} deg of the gravity prior")]
    NoFloorFound { max_angle_deg: f64 },

    #[error("interval chain is empty")]
    EmptyChain,

    #[error("label set is empty")]
    EmptyLabelSet,

    #[error("no translation consensus: best inlier ratio {ratio:.3} below {required:.3}")]
    NoConsensus { ratio: f64, required: f64 },

    #[error("odometry edge ({i}, {j}) does not join consecutive nodes")]
    NonConsecutiveEdge { i: usize, j: usize },

    #[error("edge ({i}, {j}) is invalid: {reason}")]
    InvalidEdge {
        i: usize,
        j: usize,
        reason: &'static str,
    },

    #[error("pose graph is disconnected: node {node} is unreachable from the anchor")]
    DisconnectedGraph { node: usize },

    #[error("normal equations are not positive definite at row {row}")]
    NotPositiveDefinite { row: usize },

    #[error("camera pose at ({x:.2}, {y:.2}) lies outside the world free space")]
    PoseOutsideWorld { x: f64, y: f64 },

    #[error("unknown world `{0}`")]
    UnknownWorld(String),

    #[error("missing index file {}", .0.display())]
    MissingIndexFile(PathBuf),

    #[error("no rgb/depth pairs within {max_gap} s of each other")]
    NoAssociations { max_gap: f64 },

    #[error("only {found} timestamp-matched poses, need at least 2")]
    InsufficientMatches { found: usize },

    #[error("no frame of the sequence could be parsed")]
    NoUsableFrames,

    #[error("{context}: {message}")]
    Parse { context: String, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NoPlanesFound { .. } => "no_planes_found",
            Error::NoFloorFound { .. } => "no_floor_found",
            Error::EmptyChain => "empty_chain",
            Error::EmptyLabelSet => "empty_label_set",
            Error::NoConsensus { .. } => "no_consensus",
            Error::NonConsecutiveEdge { .. } => "non_consecutive_edge",
            Error::InvalidEdge { .. } => "invalid_edge",
            Error::DisconnectedGraph { .. } => "disconnected_graph",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::PoseOutsideWorld { .. } => "pose_outside_world",
            Error::UnknownWorld(_) => "unknown_world",
            Error::MissingIndexFile(_) => "missing_index_file",
            Error::NoAssociations { .. } => "no_associations",
            Error::InsufficientMatches { .. } => "insufficient_matches",
            Error::NoUsableFrames => "no_usable_frames",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Image(_) => "image",
            Error::Json(_) => "json",
        }
    }

    /// Whether the error stems from the inputs rather than from processing
    /// valid inputs.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::NoPlanesFound { .. }
                | Error::NoFloorFound { .. }
                | Error::EmptyChain
                | Error::EmptyLabelSet
                | Error::NoConsensus { .. }
                | Error::NonConsecutiveEdge { .. }
                | Error::InvalidEdge { .. }
                | Error::DisconnectedGraph { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::NoUsableFrames
        )
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
