use thiserror::Error;

use crate::forest::Quadrant;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot refine {0:?}: already at the maximum level")]
    RefineAtMaxLevel(Quadrant),

    #[error("family of {0:?} is not a complete set of leaves")]
    IncompleteFamily(Quadrant),

    #[error("leaf {0:?} is not in the forest")]
    LeafNotFound(Quadrant),

    #[error("no coarse states bracket t = {target} for leaf {leaf:?}")]
    MissingTimeLevels { leaf: Quadrant, target: f64 },

    #[error("ghost cells of {leaf:?} were filled at t = {filled}, patch is at t = {patch}")]
    GhostNotFilled { leaf: Quadrant, filled: f64, patch: f64 },

    #[error("velocity field is identically zero, no CFL time step exists")]
    ZeroVelocityField,

    #[error("rank {rank} received data for {leaf:?} which is not in its ghost layer")]
    InconsistentGhostList { rank: usize, leaf: Quadrant },

    #[error("invalid connectivity: {0}")]
    Connectivity(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
