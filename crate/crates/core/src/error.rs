use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not Hurwitz; offending eigenvalues: {0}")]
    NotHurwitz(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("rank deficient matrix (smallest singular value {smallest_sv:e})")]
    RankDeficient { smallest_sv: f64 },

    #[error("pair (A, C) is not observable: rank of the observability matrix is {rank} < {n}")]
    Unobservable { rank: usize, n: usize },

    #[error("invalid interval: {0}")]
    Interval(String),

    #[error("quantizer saturation: |v| = {norm:e} exceeds range {range:e}")]
    Saturation { norm: f64, range: f64 },

    #[error("symbol index {index} outside alphabet [-{max}, {max}]")]
    OutOfAlphabet { index: i64, max: i64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invariant violated at t = {time} on {channel} channel: {detail}")]
    Invariant {
        time: f64,
        channel: &'static str,
        detail: String,
    },

    #[error("output history not full: {have} of {need} samples")]
    HistoryNotFull { have: usize, need: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
