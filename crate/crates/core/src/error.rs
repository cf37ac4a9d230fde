use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("root not bracketed on [{lo}, {hi}]")]
    NotBracketed { lo: f64, hi: f64 },

    #[error("could not regenerate an admissible chromosome after {0} attempts")]
    RegenerationCap(usize),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("estimator failure: {0}")]
    Estimator(String),
}

pub type Result<T> = std::result::Result<T, Error>;
