//! SAA satisficing index by bisection over α, the direct CVaR path, and
//! batch ranking.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::divergence::DivergenceSpec;
use crate::error::{arg_err, Error, Result};
use crate::ranking::{rank_items, RankingReport};
use crate::risk_core::{ItemBatch, PreparedBatch, RegretScaling, ALPHA_MIN};

pub const DEFAULT_EPSILON: f64 = 1e-4;
pub const FEASIBILITY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub epsilon: f64,
    /// Compare the constraint against τ instead of 0.
    pub threshold_tau: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { epsilon: DEFAULT_EPSILON, threshold_tau: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSolution {
    pub item_id: String,
    pub alpha_star: f64,
    pub index: f64,
    pub eta_star: f64,
    /// Inner risk value at `alpha_star`.
    pub risk_at_alpha_star: f64,
    pub feasible_at_alpha_star: bool,
    pub bisection_steps: u32,
    pub scaling: RegretScaling,
    pub spec: DivergenceSpec,
}

/// Bisection on a prepared batch against an explicit threshold.
pub(crate) fn bisect_prepared(
    item_id: &str,
    pb: &PreparedBatch,
    spec: &DivergenceSpec,
    scaling: RegretScaling,
    epsilon: f64,
    threshold: f64,
) -> Result<BatchSolution> {
    if !(epsilon > 0.0) {
        return arg_err(format!("epsilon must be positive, got {epsilon}"));
    }
    let (lo, hi) = scaling.alpha_range();
    let mut evals = 0u32;
    let mut failures = 0u32;
    let mut last_err = None;
    let mut probe = |alpha: f64| -> Option<(bool, f64, f64)> {
        evals += 1;
        match pb.minimize(spec, scaling.factor(alpha)) {
            Ok(r) => Some((r.value <= threshold + FEASIBILITY_SLACK, r.value, r.eta_star)),
            Err(e) => {
                failures += 1;
                last_err = Some(e);
                None
            }
        }
    };
    // An inner failure means every η is outside the domain: treat as infeasible.
    let mut check = |alpha: f64| probe(alpha).unwrap_or((false, f64::INFINITY, f64::NAN));

    // `safe` is the end of the α range that is always feasible if anything is.
    let (safe, risky) = if scaling.feasible_above() { (hi, lo) } else { (lo, hi) };
    let at_safe = check(safe);
    let mut steps = 0u32;
    let (alpha_star, value, eta, feasible) = if !at_safe.0 {
        (safe, at_safe.1, at_safe.2, false)
    } else {
        let at_risky = check(risky);
        if at_risky.0 {
            (risky, at_risky.1, at_risky.2, true)
        } else {
            let (mut good, mut bad) = (safe, risky);
            let mut good_eval = at_safe;
            while (good - bad).abs() > epsilon {
                steps += 1;
                let mid = 0.5 * (good + bad);
                let r = check(mid);
                if r.0 {
                    good = mid;
                    good_eval = r;
                } else {
                    bad = mid;
                }
            }
            (good, good_eval.1, good_eval.2, true)
        }
    };
    if failures == evals {
        return Err(Error::Solver(format!(
            "item '{item_id}': inner problem infeasible at every probe ({})",
            last_err.map(|e| e.to_string()).unwrap_or_default()
        )));
    }
    Ok(BatchSolution {
        item_id: item_id.to_string(),
        alpha_star,
        index: 1.0 - alpha_star,
        eta_star: eta,
        risk_at_alpha_star: value,
        feasible_at_alpha_star: feasible,
        bisection_steps: steps,
        scaling,
        spec: *spec,
    })
}

pub fn satisficing_binary_search_with(
    batch: &ItemBatch,
    spec: &DivergenceSpec,
    scaling: RegretScaling,
    options: &SolverOptions,
) -> Result<BatchSolution> {
    let pb = PreparedBatch::new(batch)?;
    let threshold = if options.threshold_tau { batch.target } else { 0.0 };
    bisect_prepared(&batch.item_id, &pb, spec, scaling, options.epsilon, threshold)
}

pub fn satisficing_binary_search(
    batch: &ItemBatch,
    spec: &DivergenceSpec,
    scaling: RegretScaling,
    epsilon: f64,
) -> Result<BatchSolution> {
    satisficing_binary_search_with(
        batch,
        spec,
        scaling,
        &SolverOptions { epsilon, threshold_tau: false },
    )
}

/// `sup_{a>0} mean(min{−a(d−τ), 1})`, clipped at 0, with the maximizer.
///
/// The objective is concave and piecewise linear in `a` with kinks at
/// `a = −1/x` for the negative shifted samples `x`, so the supremum is
/// attained at a kink (or approached as `a → 0`, where it is 0). All kinks
/// are evaluated exactly from prefix sums; ties go to the smallest `a`.
pub fn cvar_satisficing_direct_argmax(batch: &ItemBatch) -> Result<(f64, f64)> {
    let pb = PreparedBatch::new(batch)?;
    let x = pb.shifted();
    let n = x.len() as f64;
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    for &v in x {
        prefix.push(prefix[prefix.len() - 1] + v);
    }
    let total = prefix[x.len()];
    // At a = −1/x[j] the samples x[..=j] are capped at 1, the rest give −a·x.
    let mut best = (ALPHA_MIN, 0.0);
    for j in (0..x.len()).rev().filter(|&j| x[j] < 0.0) {
        if j + 1 < x.len() && x[j + 1] == x[j] {
            continue;
        }
        let a = -1.0 / x[j];
        let v = ((j + 1) as f64 - a * (total - prefix[j + 1])) / n;
        if v > best.1 {
            best = (a, v);
        }
    }
    Ok((best.1.max(0.0), best.0))
}

pub fn cvar_satisficing_direct(batch: &ItemBatch) -> Result<f64> {
    cvar_satisficing_direct_argmax(batch).map(|r| r.0)
}

fn check_distinct(items: &[ItemBatch]) -> Result<()> {
    if items.is_empty() {
        return arg_err("at least one item is required");
    }
    let mut seen = HashSet::new();
    for it in items {
        if !seen.insert(it.item_id.as_str()) {
            return arg_err(format!("duplicate item_id '{}'", it.item_id));
        }
    }
    Ok(())
}

/// Solves each item independently and ranks by index, descending.
pub fn rank_batch_with(
    items: &[ItemBatch],
    spec: &DivergenceSpec,
    scaling: RegretScaling,
    options: &SolverOptions,
) -> Result<(RankingReport, Vec<BatchSolution>)> {
    check_distinct(items)?;
    #[cfg(feature = "parallel")]
    let solved: Vec<Result<BatchSolution>> = {
        use rayon::prelude::*;
        items
            .par_iter()
            .map(|b| satisficing_binary_search_with(b, spec, scaling, options))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let solved: Vec<Result<BatchSolution>> =
        items.iter().map(|b| satisficing_binary_search_with(b, spec, scaling, options)).collect();
    let solutions = solved.into_iter().collect::<Result<Vec<_>>>()?;
    let scores: Vec<(String, f64)> =
        solutions.iter().map(|s| (s.item_id.clone(), s.index)).collect();
    Ok((rank_items(&scores)?, solutions))
}

pub fn rank_batch(
    items: &[ItemBatch],
    spec: &DivergenceSpec,
    scaling: RegretScaling,
    epsilon: f64,
) -> Result<RankingReport> {
    rank_batch_with(items, spec, scaling, &SolverOptions { epsilon, threshold_tau: false })
        .map(|r| r.0)
}
