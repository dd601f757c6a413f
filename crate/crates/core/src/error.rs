use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid exchange pair: {0}")]
    InvalidExchange(String),
    #[error("cell {0} is empty")]
    EmptyCell(usize),
    #[error("time step {dt} exceeds the stability bound {limit}")]
    Unstable { dt: f64, limit: f64 },
    #[error("wave field is not normalized (norm {0})")]
    NotNormalized(f64),
    #[error("history too short: need {need} states, have {have}")]
    History { need: usize, have: usize },
    #[error("population extinct at step {0}")]
    Extinct(u64),
    #[error("amplitude underflow at step {0}")]
    Underflow(u64),
    #[error("swarm sizes differ: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("inconsistent marginals: {0}")]
    Marginals(String),
    #[error("lattice mismatch: {0}")]
    Lattice(String),
    #[error("bad qubit target: {0}")]
    Target(String),
}

pub type Result<T> = std::result::Result<T, Error>;
