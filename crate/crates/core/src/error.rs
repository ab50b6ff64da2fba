use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("invalid norm spec: {0}")]
    Norm(String),
    #[error("invalid kernel: {0}")]
    Kernel(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("delta out of range: {0}")]
    Delta(String),
    #[error("time step {dt} exceeds the stiffness bound {max_dt}")]
    TimeStep { dt: f64, max_dt: f64 },
    #[error("blow-up: {0}")]
    BlowUp(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("linear algebra: {0}")]
    Linalg(String),
    #[error("spectrum: {0}")]
    Spectrum(String),
    #[error("{0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
