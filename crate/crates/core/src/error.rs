use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("potential evaluated outside its table range at eta = {0}")]
    Range(f64),
    #[error("ellipticity certification failed: {0}")]
    Certification(String),
    #[error("inadmissible tilt: {0}")]
    Inadmissible(String),
    #[error("field diverged at site {site:?} (time {time})")]
    Divergence { site: Vec<i64>, time: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("solver did not converge: residual {residual:e} after {iterations} iterations")]
    Solver { residual: f64, iterations: usize },
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("sampling diagnostic: {0}")]
    Diagnostic(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
