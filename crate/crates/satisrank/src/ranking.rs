//! Rankings, inversion loss, and the binomial bound on ranking quality.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};

pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub item_id: String,
    pub index: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub entries: Vec<RankEntry>,
    pub ties: Vec<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inversion_loss: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validity: Option<f64>,
}

impl RankingReport {
    pub fn scores(&self) -> Vec<(String, f64)> {
        self.entries.iter().map(|e| (e.item_id.clone(), e.index)).collect()
    }

    /// Attaches a reference ordering and the inversion loss against it.
    pub fn with_reference(mut self, truth: &[(String, f64)]) -> Result<Self> {
        let loss = inversion_loss(&self.scores(), truth)?;
        let reference = rank_items(truth)?.entries.into_iter().map(|e| e.item_id).collect();
        self.reference = Some(reference);
        self.inversion_loss = Some(loss);
        Ok(self)
    }

    /// Flat `item_id,index,rank` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("item_id,index,rank\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{}\n", e.item_id, e.index, e.rank));
        }
        out
    }
}

fn check_distinct(scores: &[(String, f64)]) -> Result<()> {
    let mut seen = HashSet::new();
    for (id, v) in scores {
        if !seen.insert(id.as_str()) {
            return arg_err(format!("duplicate item_id '{id}'"));
        }
        if v.is_nan() {
            return arg_err(format!("score of '{id}' is NaN"));
        }
    }
    Ok(())
}

/// Descending order, ties broken by id, competition ranks ("1224").
pub fn rank_items(scores: &[(String, f64)]) -> Result<RankingReport> {
    check_distinct(scores)?;
    let mut order: Vec<&(String, f64)> = scores.iter().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    // Group consecutive entries within tolerance of the group's first entry,
    // then re-sort each group by id so tie order does not depend on noise.
    let mut groups: Vec<Vec<&(String, f64)>> = Vec::new();
    for e in order {
        match groups.last_mut() {
            Some(g) if (g[0].1 - e.1).abs() <= TIE_TOLERANCE => g.push(e),
            _ => groups.push(vec![e]),
        }
    }
    let mut entries = Vec::with_capacity(scores.len());
    let mut ties = Vec::new();
    for mut g in groups {
        g.sort_by(|a, b| a.0.cmp(&b.0));
        let rank = entries.len() + 1;
        if g.len() > 1 {
            ties.push(g.iter().map(|e| e.0.clone()).collect());
        }
        for e in g {
            entries.push(RankEntry { item_id: e.0.clone(), index: e.1, rank });
        }
    }
    Ok(RankingReport { entries, ties, reference: None, inversion_loss: None, validity: None })
}

/// Number of unordered pairs ordered oppositely by the two score vectors.
pub fn inversion_loss(estimated: &[(String, f64)], truth: &[(String, f64)]) -> Result<u64> {
    check_distinct(estimated)?;
    check_distinct(truth)?;
    if estimated.len() != truth.len() {
        return arg_err("estimated and truth cover different item sets");
    }
    let t: HashMap<&str, f64> = truth.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    let mut pairs = Vec::with_capacity(estimated.len());
    for (id, e) in estimated {
        match t.get(id.as_str()) {
            Some(&tv) => pairs.push((*e, tv)),
            None => return arg_err(format!("item '{id}' missing from truth")),
        }
    }
    let mut sorted_truth: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    sorted_truth.sort_by(f64::total_cmp);
    if sorted_truth.windows(2).any(|w| (w[1] - w[0]).abs() <= TIE_TOLERANCE) {
        return arg_err("truth ranking contains ties");
    }
    let mut count = 0u64;
    for i in 0..pairs.len() {
        for j in i + 1..pairs.len() {
            if (pairs[i].0 - pairs[j].0) * (pairs[i].1 - pairs[j].1) < 0.0 {
                count += 1;
            }
        }
    }
    Ok(count)
}

pub fn gumbel_cdf(x: f64, location: f64, scale: f64) -> Result<f64> {
    if !(scale > 0.0) {
        return arg_err(format!("Gumbel scale must be positive, got {scale}"));
    }
    Ok((-(-(x - location) / scale).exp()).exp())
}

pub fn n_choose_2(items: u64) -> u64 {
    items * items.saturating_sub(1) / 2
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

fn ln_factorial(n: u64) -> f64 {
    // Exact sum for moderate n, Stirling series beyond.
    if n < 256 {
        (2..=n).map(|i| (i as f64).ln()).sum()
    } else {
        let x = n as f64;
        x * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI * x).ln() + 1.0 / (12.0 * x)
            - 1.0 / (360.0 * x * x * x)
    }
}

fn choose_exact(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c
}

/// `P(Bin(n, p) ≤ e)`. Exact binomial coefficients for n ≤ 64, log-space
/// terms otherwise; `e ≥ n` returns exactly 1.
pub fn binomial_cdf(n: u64, p: f64, e: u64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return arg_err(format!("probability {p} outside [0, 1]"));
    }
    if e >= n {
        return Ok(1.0);
    }
    let q = 1.0 - p;
    let mut sum = 0.0;
    if n <= 64 {
        for i in 0..=e {
            let c = choose_exact(n, i) as f64;
            sum += c * p.powi(i as i32) * q.powi((n - i) as i32);
        }
    } else {
        for i in 0..=e {
            let lp = if i == 0 { 0.0 } else { i as f64 * p.ln() };
            let lq = if i == n { 0.0 } else { (n - i) as f64 * q.ln() };
            sum += (ln_choose(n, i) + lp + lq).exp();
        }
    }
    Ok(sum.clamp(0.0, 1.0))
}

/// Probability of an inversion between two items separated by `gap_c`
/// after `iters` steps: `1 − G(c; κ′/T, 1)`.
pub fn inversion_probability(gap_c: f64, kappa_prime: f64, iters: u64) -> Result<f64> {
    Ok(1.0 - gumbel_cdf(gap_c, kappa_prime / iters as f64, 1.0)?)
}

/// `P(ℰ ≤ e)` for `items` items. With `literal` the roles of p and 1−p in
/// the binomial terms are swapped.
pub fn loss_bound_probability(
    items: u64,
    e: u64,
    gap_c: f64,
    kappa_prime: f64,
    iters: u64,
    literal: bool,
) -> Result<f64> {
    if items < 2 {
        return arg_err("at least two items are required");
    }
    let n = n_choose_2(items);
    if e > n {
        return arg_err(format!("e = {e} exceeds C({items}, 2) = {n}"));
    }
    if !(gap_c > 0.0) {
        return arg_err(format!("gap c must be positive, got {gap_c}"));
    }
    if iters == 0 {
        return arg_err("iters must be at least 1");
    }
    if !kappa_prime.is_finite() {
        return arg_err("kappa' must be finite");
    }
    let p = inversion_probability(gap_c, kappa_prime, iters)?;
    binomial_cdf(n, if literal { 1.0 - p } else { p }, e)
}
