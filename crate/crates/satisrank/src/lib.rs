//! Satisficing risk indices for ranking items against aspiration targets.
//!
//! For an item with loss samples `d_n` and target `τ`, the index is
//! `1 − α*`, where α* is the boundary of the set of levels α at which the
//! OCE risk `inf_η η + f(α)·E φ*(d − τ − η)` is non-positive. Larger
//! indices rank as riskier.
//!
//! * [`divergence`]: conjugates φ* and subgradients.
//! * [`risk_core`]: the inner minimization over η and the CVaR closed form.
//! * [`batch_solver`]: bisection over α, the direct CVaR path, batch ranking.
//! * [`validation`]: confidence bounds on the index and sample-size calculators.
//! * [`online_solver`]: the one-observation-per-step primal-dual recursion.
//! * [`ranking`]: rankings, inversion loss, ranking-quality probabilities.
//! * [`data_io`]: CSV/stream input and seeded synthetic data.

pub mod batch_solver;
#[cfg(feature = "cli")]
pub mod cli;
pub mod data_io;
pub mod divergence;
pub mod error;
pub mod online_solver;
pub mod ranking;
pub mod risk_core;
pub mod validation;

pub use batch_solver::{
    cvar_satisficing_direct, rank_batch, satisficing_binary_search, BatchSolution, SolverOptions,
};
pub use divergence::{DivergenceKind, DivergenceSpec};
pub use error::{Error, Result};
pub use ranking::RankingReport;
pub use risk_core::{
    cvar_closed_form, empirical_oce_risk, ItemBatch, RegretScaling, ALPHA_MIN,
};
