//! Dense `f64` reverse-mode autodiff, the correction network, and its optimizer.

mod adam;
pub mod linalg;
mod mlp;
mod schedule;
mod tape;

pub use adam::Adam;
pub use mlp::{Dense, Mlp, MlpVars, PAPER_HIDDEN};
pub use schedule::LrSchedule;
pub use tape::{elu, pairwise_sq_dist, Gradients, Tape, Var};
