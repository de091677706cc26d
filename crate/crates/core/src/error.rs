use crate::lattice::{Edge, Point};
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("edge {0:?} lies outside the box")]
    EdgeOutsideBox(Edge),
    #[error("point {0} lies outside the box")]
    PointOutsideBox(Point),
    #[error("degenerate rectangle")]
    DegenerateRect,
    #[error("rectangle overlap graph is disconnected")]
    DisconnectedOverlap,
    #[error("region is empty")]
    EmptyRegion,
    #[error("invalid circuit: {0}")]
    InvalidCircuit(String),
    #[error("giant component is empty")]
    EmptyGiant,
    #[error("no unique largest cluster")]
    NoUniqueLargest,
    #[error("instance too large for exhaustive search (n = {0})")]
    TooLarge(i64),
    #[error("norm model: {0}")]
    Norm(String),
    #[error("empty family after filtering")]
    EmptyFamily,
    #[error("no conditioned trials: the uniqueness event never held")]
    NoConditionedTrials,
    #[error("infeasible barrier parameters: {0}")]
    InfeasibleBarrier(String),
    #[error("bad configuration file: {0}")]
    BadFile(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
