use std::fmt;

/// Errors surfaced by the model, solvers and harness.
#[derive(Debug)]
pub enum Error {
    /// Cluster count does not divide the UE count.
    NonDivisible { n_ues: usize, n_clusters: usize },
    /// Activity request violates `k_active <= N_c` or `l_c <= L`.
    BadCount(String),
    /// A Gaussian density was requested with a non-positive variance.
    NonPositiveVariance(f64),
    /// Likelihood site requires a strictly positive noise variance.
    SingularInput(String),
    /// Configuration enumeration requested for too many clusters.
    TooLarge { n_clusters: usize, max: usize },
    /// NMSE is undefined for an identically-zero truth matrix.
    ZeroTruth,
    /// Experiment or solver configuration is invalid.
    Config(String),
    /// I/O failure, with the offending path.
    Io { path: String, source: std::io::Error },
    /// Malformed config file or result record.
    Parse(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonDivisible { n_ues, n_clusters } => {
                write!(f, "{n_clusters} clusters do not evenly divide {n_ues} UEs")
            }
            Error::BadCount(msg) => write!(f, "bad activity count: {msg}"),
            Error::NonPositiveVariance(v) => write!(f, "non-positive variance {v}"),
            Error::SingularInput(msg) => write!(f, "singular input: {msg}"),
            Error::TooLarge { n_clusters, max } => {
                write!(f, "{n_clusters} clusters exceed the enumeration limit of {max}")
            }
            Error::ZeroTruth => write!(f, "NMSE undefined: truth matrix is identically zero"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Io { path, source } => write!(f, "I/O error on {path}: {source}"),
            Error::Parse(msg) => write!(f, "parse error: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
