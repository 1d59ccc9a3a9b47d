use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix or scalar is not invertible modulo 2^64")]
    NotInvertible,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("user key must not be empty")]
    EmptyKey,
    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: u64, limit: u64 },
    #[error("RT-PRN pool exhausted: write {next_j} needs R_{} but pool holds {d}", 2 * next_j)]
    PoolExhausted { d: u64, next_j: u64 },
    #[error("sector {0} has never been written")]
    NeverWritten(u64),
    #[error("temporary key matrix {round} has an even determinant")]
    InvalidKey { round: usize },
    #[error("corrupt IFCR chain: {0}")]
    CorruptChain(String),
    #[error("IFCR base block failed to decrypt to valid framing: {0}")]
    BadBase(String),
    #[error("block cipher input length {0} is not a multiple of 16")]
    BadLength(usize),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("corrupt disk image: {0}")]
    CorruptImage(String),
    #[error("energy trace is degenerate for file size {size}: denominator {denominator:e}")]
    DegenerateTrace { size: String, denominator: f64 },
    #[error("invalid energy trace: {0}")]
    InvalidTrace(String),
    #[error("argument outside the function's domain: {0}")]
    DomainError(String),
    #[error("parameter out of range: {0}")]
    ParamOutOfRange(String),
    #[error("need at least {needed} plaintext/ciphertext pairs, got {got}")]
    InsufficientPairs { needed: usize, got: usize },
    #[error("collected plaintexts do not span Z_2^64^64 (rank {rank} mod 2)")]
    SingularPlaintexts { rank: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Stable variant name for machine-readable output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotInvertible => "NotInvertible",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::EmptyKey => "EmptyKey",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::PoolExhausted { .. } => "PoolExhausted",
            Error::NeverWritten(_) => "NeverWritten",
            Error::InvalidKey { .. } => "InvalidKey",
            Error::CorruptChain(_) => "CorruptChain",
            Error::BadBase(_) => "BadBase",
            Error::BadLength(_) => "BadLength",
            Error::InvalidGeometry(_) => "InvalidGeometry",
            Error::CorruptImage(_) => "CorruptImage",
            Error::DegenerateTrace { .. } => "DegenerateTrace",
            Error::InvalidTrace(_) => "InvalidTrace",
            Error::DomainError(_) => "DomainError",
            Error::ParamOutOfRange(_) => "ParamOutOfRange",
            Error::InsufficientPairs { .. } => "InsufficientPairs",
            Error::SingularPlaintexts { .. } => "SingularPlaintexts",
            Error::Io(_) => "IoError",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
