//! Deterministic numeric substrate: grids, the seeded generator, vector
//! primitives and the finite-difference gradient verifier.

mod grad;
mod grid;
mod ops;
mod rng;

pub use grad::{finite_diff_check, Block, DifferentiableOp, GradCheck, GradSlot, ParamSet};
pub use grid::Grid;
pub(crate) use ops::sq_dist;
pub use ops::{euclidean, CompensatedSum, softmax, softmax_backward, softmax_in_place};
pub use rng::{derive_seed, Pcg32, PCG32_ALGORITHM_ID};
