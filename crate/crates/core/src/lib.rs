//! Sample-swarm laboratory for quantum dynamics.
//!
//! A quantum particle is represented by a swarm of point samples whose cell
//! density follows |Ψ|². The crate provides the lattice substrate, the
//! dynamical diffusion engine, a Crank–Nicolson reference integrator, the
//! wave/swarm bridge, diffusion Monte Carlo, a path-integral wave swarm,
//! multi-particle cortege nets and a small statevector toolkit.

pub mod bridge;
pub mod cortege;
pub mod dds;
pub mod dmc;
pub mod error;
pub mod lattice;
pub mod oracle;
pub mod pathint;
pub mod qtoy;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use lattice::{Boundary, CellGrid, PotentialField, Sample, SimUnits, Speed, Swarm};
pub use oracle::WaveField;

pub use num_complex::Complex64 as C64;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
