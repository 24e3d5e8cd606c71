use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("component count mismatch: expected {expected}, found {found}")]
    ComponentMismatch { expected: usize, found: usize },

    #[error("multiplier `{tag}` is not finite at mode {mode:?}")]
    NonFiniteMultiplier { tag: String, mode: [i64; 3] },

    #[error("unsupported dimension {dim} for {what}")]
    UnsupportedDimension { dim: usize, what: &'static str },

    #[error("invalid norm index: {0}")]
    InvalidNorm(String),

    #[error("fine resolution {n_fine} is not divisible by coarse step count {n_coarse}")]
    NotDivisible { n_fine: usize, n_coarse: usize },

    #[error("fine path too coarse: {per_step} fine steps per coarse step (need at least {min})")]
    FinePathTooCoarse { per_step: usize, min: usize },

    #[error("step index {index} out of range for {steps} coarse steps")]
    StepOutOfRange { index: usize, steps: usize },

    #[error("unsupported tree order r = {0}")]
    UnsupportedOrder(String),

    #[error("no discretisation implemented for ({tree}, n = {n}, r = {r})")]
    UnimplementedDiscretisation { tree: String, n: u32, r: String },

    #[error("tree error: {0}")]
    Tree(String),

    #[error("missing noise component: {0}")]
    MissingNoise(&'static str),

    #[error("incompatible scheme configuration: {0}")]
    Incompatible(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
