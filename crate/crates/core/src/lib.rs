//! Stochastic economic dispatch under wind uncertainty, with a data-driven
//! sparse polynomial chaos surrogate of the minimum production cost.
//!
//! The crate is organised bottom-up:
//!
//! * [`lp`] bounded-variable simplex solver;
//! * [`grid`] multi-period DC dispatch model with PTDF line limits;
//! * [`gas`] gas-network extension solved by successive linear programming;
//! * [`transforms`] PCA whitening and raw moment estimation;
//! * [`orthopoly`] monic orthogonal polynomials from moments, tensor bases;
//! * [`sparse_fit`] orthogonal matching pursuit with leave-one-out selection;
//! * [`uq`] surrogate model, statistics, density and distribution curves;
//! * [`io`] and [`cli`] file formats and the command-line tool.

pub mod cli;
pub mod gas;
pub mod grid;
pub mod io;
pub mod lp;
pub mod orthopoly;
pub mod scenarios;
pub mod sparse_fit;
pub mod transforms;
pub mod uq;

pub use grid::{DispatchSolution, PowerSystem, PtdfMatrix};
pub use lp::{LpProblem, LpSolution, LpStatus, Relation, SolverConfig};
pub use orthopoly::{MultiIndex, MultiIndexSet, UnivariateBasis};
pub use sparse_fit::{FitConfig, SparseExpansion};
pub use transforms::{MomentTable, Whitener};
pub use uq::{SurrogateModel, UqReport};
