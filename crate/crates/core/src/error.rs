use thiserror::Error;

/// Errors raised by the game model, solvers and CLI plumbing.
///
/// Stage indices carried by variants are zero-based; `Display` prints them
/// one-based to match the logs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid stage index {stage}: {reason}")]
    InvalidStage { stage: usize, reason: String },

    #[error("singular stage matrix at stage {} (pivot ratio {pivot_ratio:.3e})", .stage + 1)]
    SingularStageMatrix { stage: usize, pivot_ratio: f64 },

    #[error("singular monolithic system: {0}")]
    SingularSystem(String),

    #[error("infeasible game: {0}")]
    InfeasibleGame(String),

    #[error("active-set cycle at stage {}, player {}, row {}: no alternative constraint to drop", .stage + 1, .player + 1, .row + 1)]
    CycleFailure { stage: usize, player: usize, row: usize },

    #[error("maximum iterations ({0}) reached")]
    MaxIterations(usize),

    #[error("line search failed at major iteration {0}")]
    LineSearchFailure(usize),

    #[error("non-finite evaluator output: {0}")]
    NonFinite(String),

    #[error("degenerate direction cone for player {}", .player + 1)]
    DegenerateCone { player: usize },

    #[error("system too large for the monolithic oracle (width {0})")]
    TooLarge(usize),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
