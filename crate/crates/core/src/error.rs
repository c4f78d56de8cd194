use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("failed to parse configuration: {0}")]
    ConfigParse(#[from] toml::de::Error),

    #[error("UE {ue} is not served by any AP")]
    EmptyCluster { ue: usize },

    #[error("SEU {seu}: {reason}")]
    Dimension { seu: usize, reason: String },

    #[error("LSFD system for UE {ue} is singular")]
    SingularLsfd { ue: usize },

    #[error("gamma moment matching needs at least one served AP with positive weight")]
    EmptyGammaMask,

    #[error("{0}")]
    Unsupported(&'static str),

    #[error("layout seed {seed}: {source}")]
    Layout {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// The underlying error with any layout-seed context removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Layout { source, .. } => source.root(),
            e => e,
        }
    }

    pub(crate) fn with_layout_seed(self, seed: u64) -> Error {
        match self {
            e @ Error::Layout { .. } => e,
            e => Error::Layout {
                seed,
                source: Box::new(e),
            },
        }
    }
}
