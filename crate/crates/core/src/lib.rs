//! Critical points, discriminants and feasible varieties of cumulant-based
//! portfolio utilities.
//!
//! A portfolio of `n` independent assets with per-asset cumulants `k_ij`
//! (asset `i`, order `j`) and preference weights `w_j` has utility
//! `L(x) = Σ_j Σ_i w_j k_ij x_i^j` on the budget hyperplane `Σ x_i = 1`.
//! This crate finds every complex critical point of `L` by homotopy
//! continuation, certifies multiplicities, and computes the dimension and
//! degree of the image of the budget hyperplane under the cumulant map.

pub mod critical;
pub mod cumulants;
pub mod discriminant;
mod error;
pub mod linalg;
pub mod model;
pub mod polysys;
pub mod tracker;
pub mod variety;

pub use critical::{solve_critical, solve_strata, CriticalPoint, SolveReport};
pub use cumulants::{CumulantMatrix, ReturnSeries};
pub use error::{Error, Result};
pub use model::{Classification, PortfolioPoint, UtilityModel, WeightVector};
pub use polysys::{MultiPoly, ParamFamily, PolySystem};
pub use tracker::{PathStatus, TrackedSolution, TrackerConfig};

/// Library version string embedded in every report.
pub const VERSION: &str = concat!("portvar ", env!("CARGO_PKG_VERSION"));

pub use num_complex::Complex64;
