pub mod asip;
pub mod cumulant;
pub mod error;
pub mod fit;
pub mod funcspace;
pub mod gibbs;
pub mod limits;
pub mod maps;
pub mod martingale;
pub mod model;
pub mod montecarlo;
pub mod rng;
pub mod rpf;
pub mod transfer;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
