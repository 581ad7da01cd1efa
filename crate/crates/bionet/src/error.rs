use thiserror::Error;

/// All failures surfaced by this crate.
///
/// The variants separate caller mistakes (`Config`, `Shape`), bad inputs
/// (`Data`, `Format`), runtime state problems (`State`, `Divergence`), and
/// wrapped I/O errors.
#[derive(Error, Debug)]
pub enum Error {
    /// Invalid configuration (bad hyperparameter, mismatched channel widths).
    #[error("config error: {0}")]
    Config(String),

    /// Tensor shapes incompatible with the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// Malformed dataset input (manifest rows, mask values, size mismatches).
    #[error("data error: {0}")]
    Data(String),

    /// Operation applied in a state that cannot support it.
    #[error("state error: {0}")]
    State(String),

    /// Checkpoint contents inconsistent with the requested model.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Unparseable file contents (checkpoint header, config file).
    #[error("format error: {0}")]
    Format(String),

    /// Loss became non-finite during training.
    #[error("training diverged at epoch {epoch}, step {step}: loss is not finite")]
    Divergence { epoch: usize, step: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
