use std::fmt;

/// Error type shared by every module in this crate.
///
/// Variants map onto the CLI exit-code table: `Config` and `Dataset` are
/// usage errors (exit 2), `TrainAbort` is a diverged run (exit 3), `Format`
/// and `Io` are file-level failures (exit 4).
#[derive(Debug)]
pub enum Error {
    /// Tensor shapes do not satisfy an operation's contract.
    Shape(String),
    /// A configuration value violates an invariant.
    Config(String),
    /// An index (class label, axis, layer) is out of range.
    Index(String),
    /// Non-finite values fed to an operation that requires finite input.
    NumericInput(String),
    /// An API contract was violated (e.g. backward on a non-scalar).
    Contract(String),
    /// A statistical estimate could not be formed.
    Estimation(String),
    /// Byte-level failure while decoding a file; `offset` is the position
    /// at which the problem was detected.
    Format { offset: u64, message: String },
    /// Problem with a dataset tree (empty root, class without images, ...).
    Dataset(String),
    /// Training diverged; carries the state needed to diagnose the abort.
    TrainAbort {
        epoch: usize,
        batch: usize,
        loss: f64,
        lr: f64,
    },
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Index(m) => write!(f, "index error: {m}"),
            Error::NumericInput(m) => write!(f, "numeric-input error: {m}"),
            Error::Contract(m) => write!(f, "contract error: {m}"),
            Error::Estimation(m) => write!(f, "estimation error: {m}"),
            Error::Format { offset, message } => {
                write!(f, "format error at byte {offset}: {message}")
            }
            Error::Dataset(m) => write!(f, "dataset error: {m}"),
            Error::TrainAbort {
                epoch,
                batch,
                loss,
                lr,
            } => write!(
                f,
                "training aborted: non-finite loss {loss} at epoch {epoch}, batch {batch}, lr {lr}"
            ),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
