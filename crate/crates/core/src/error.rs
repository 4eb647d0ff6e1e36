use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid architecture: {0}")]
    Architecture(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value at index path {path:?}: {what}")]
    Numeric { path: Vec<i64>, what: String },

    #[error("resource guard: predicted {params} dense parameters exceeds limit {limit}")]
    ResourceGuard { params: u128, limit: u128 },

    #[error("cost guard: n = {n}, M = {m} needs --force")]
    CostGuard { n: u32, m: u32 },

    #[error("unreachable accuracy: requested {requested:e}, best achievable {achievable:e}")]
    Unreachable { requested: f64, achievable: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
