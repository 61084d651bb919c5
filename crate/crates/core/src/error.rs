use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid dimension {0}: need n >= 2")]
    InvalidDimension(usize),

    #[error("query point lies {distance:.3e} from the simplex, outside the mu0 = {mu0} neighbourhood")]
    Domain { distance: f64, mu0: f64 },

    #[error("gradient estimate has a non-finite entry at index {0}")]
    NonFinite(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("scheme {0:?} is not supported here")]
    UnsupportedScheme(crate::sampling::Scheme),

    #[error("problem is not smooth (L2 = inf); use the Theorem-2 tuning instead")]
    NotSmooth,

    #[error("smoothing radius {mu} exceeds mu0 = {mu0}; use a smaller eps or a larger mu0")]
    RadiusTooLarge { mu: f64, mu0: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
