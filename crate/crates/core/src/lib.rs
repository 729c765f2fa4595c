pub mod autodiff;
pub mod benchmarks;
pub mod cmmd;
pub mod dpc;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod rng;
pub mod sde;

pub use error::{DpcError, Result};
