use crate::grid::CellIndex;
use crate::cutcell::Species;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("cell {cell} out of range for grid with {count} cells")]
    CellOutOfRange { cell: usize, count: usize },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("level set evaluated to a non-finite value {value} at {point:?}")]
    NonFiniteLevelSet { point: Vec<f64>, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("meshes are defined on different grids")]
    GridMismatch,

    #[error("no admissible root for {species:?} island of cells {cells:?}")]
    UnresolvableIsland { species: Species, cells: Vec<CellIndex> },

    #[error("agglomeration map is not a valid forest: {0}")]
    InvalidMap(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("agglomerated mass block for {0:?} is singular")]
    SingularBlock(CellIndex),

    #[error("empty stencil")]
    EmptyStencil,

    #[error("round function regressed the monotone state measure ({before} -> {after})")]
    NonMonotoneRound { before: u64, after: u64 },

    #[error("fixpoint iteration did not converge within {0} rounds")]
    NoConvergence(usize),

    #[error("message from rank {from} to rank {to} references cell {cell} outside both halo views")]
    LocalityViolation { from: usize, to: usize, cell: CellIndex },

    #[error("interface moved more than one cell between steps {step_prev} and {step_next}")]
    SpeedLimit { step_prev: usize, step_next: usize },

    #[error("trend violated: {0}")]
    TrendViolation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit status used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) | Error::InvalidGrid(_) | Error::InvalidPartition(_) => 2,
            Error::UnresolvableIsland { .. } => 3,
            Error::SpeedLimit { .. } => 4,
            Error::TrendViolation(_) => 5,
            _ => 1,
        }
    }
}
