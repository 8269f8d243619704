//! Solution-quality bounds for the SAA index and sample-size calculators.
//!
//! Two estimates bracket the true index:
//! * a candidate α̃, solved against a tightened threshold τ̃ ≤ 0 and checked
//!   on an independent resample;
//! * the Lagrangian dual function evaluated on independent groups, averaged
//!   and turned into a one-sided confidence limit.
//!
//! Under `1/(1−α)` the index is a minimum over the feasible set, so the
//! candidate gives the upper bound and the Lagrangian groups the lower
//! bound. Under `1/α` the roles are swapped; reports carry a [`BoundSide`].

use serde::{Deserialize, Serialize};

use crate::batch_solver::{bisect_prepared, BatchSolution};
use crate::data_io::{DistributionSpec, Sampler};
use crate::divergence::DivergenceSpec;
use crate::error::{arg_err, Error, Result};
use crate::risk_core::{ItemBatch, PreparedBatch, RegretScaling};

const GRID_POINTS: usize = 65;
const GOLDEN: f64 = 0.618_033_988_749_894_8;

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Inverse standard normal CDF by bisection.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return arg_err(format!("quantile level {p} outside (0, 1)"));
    }
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// How the inner risk g_N(α) is evaluated inside the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMode {
    /// Infimum over η (the SAA constraint).
    #[default]
    Inf,
    /// Supremum over the finite η bracket.
    SupOverBracket,
}

fn g_value(pb: &PreparedBatch, spec: &DivergenceSpec, factor: f64, mode: InnerMode) -> f64 {
    match mode {
        InnerMode::Inf => pb.minimize(spec, factor).map(|r| r.value).unwrap_or(f64::INFINITY),
        InnerMode::SupOverBracket => pb.sup_over_bracket(spec, factor).1,
    }
}

/// Which side of the true index a bound lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSide {
    Upper,
    Lower,
}

fn lagrangian_on_prepared(
    pb: &PreparedBatch,
    pi: f64,
    spec: &DivergenceSpec,
    scaling: RegretScaling,
    mode: InnerMode,
) -> Result<(f64, f64)> {
    if !pi.is_finite() {
        return arg_err(format!("pi must be finite, got {pi}"));
    }
    let maximize = scaling.feasible_above();
    // Signed so that we always maximize `sign·J`.
    let sign = if maximize { 1.0 } else { -1.0 };
    let j = |alpha: f64| -> f64 {
        let base = 1.0 - alpha;
        if pi == 0.0 {
            return sign * base;
        }
        let g = g_value(pb, spec, scaling.factor(alpha), mode);
        let v = base + pi * g;
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            sign * v
        }
    };
    let (lo, hi) = scaling.alpha_range();
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let mut best = (lo, f64::NEG_INFINITY);
    let mut best_i = 0;
    for i in 0..GRID_POINTS {
        let a = if i == GRID_POINTS - 1 { hi } else { lo + step * i as f64 };
        let v = j(a);
        if v > best.1 {
            best = (a, v);
            best_i = i;
        }
    }
    let (mut a, mut b) = (
        lo + step * best_i.saturating_sub(1) as f64,
        (lo + step * (best_i + 1) as f64).min(hi),
    );
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let (mut jc, mut jd) = (j(c), j(d));
    for _ in 0..100 {
        if b - a < 1e-9 {
            break;
        }
        if jc >= jd {
            b = d;
            d = c;
            jd = jc;
            c = b - GOLDEN * (b - a);
            jc = j(c);
            if jc > best.1 {
                best = (c, jc);
            }
        } else {
            a = c;
            c = d;
            jc = jd;
            d = a + GOLDEN * (b - a);
            jd = j(d);
            if jd > best.1 {
                best = (d, jd);
            }
        }
    }
    for (x, v) in [(c, jc), (d, jd)] {
        if v > best.1 {
            best = (x, v);
        }
    }
    if best.1 == f64::NEG_INFINITY {
        return Err(Error::Solver("Lagrangian is undefined on the whole α range".into()));
    }
    Ok((best.0, sign * best.1))
}

/// Lagrangian `1 − α + π·g_N(α)`: maximized over α for `1/α`, minimized
/// for `1/(1−α)`. Returns `(α, value)`.
pub fn solve_lagrangian(
    batch: &ItemBatch,
    pi_tilde: f64,
    spec: &DivergenceSpec,
    scaling: RegretScaling,
) -> Result<(f64, f64)> {
    lagrangian_on_prepared(&PreparedBatch::new(batch)?, pi_tilde, spec, scaling, InnerMode::Inf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpperBoundReport {
    pub alpha_tilde: f64,
    pub q_tilde: f64,
    pub s_q: f64,
    pub z_delta: f64,
    pub accepted: bool,
    pub confidence: f64,
    /// `1 − α̃`.
    pub bound: f64,
    pub side: BoundSide,
    pub resample_size: usize,
}

/// z statistic `(0 − q̃)/S` and the acceptance decision at level δ.
pub fn upper_bound_decision(q_tilde: f64, s_q: f64, delta: f64) -> Result<(f64, bool)> {
    if !(delta > 0.0 && delta < 1.0) {
        return arg_err(format!("delta {delta} outside (0, 1)"));
    }
    if s_q == 0.0 {
        let z = if q_tilde < 0.0 {
            f64::INFINITY
        } else if q_tilde > 0.0 {
            f64::NEG_INFINITY
        } else {
            0.0
        };
        return Ok((z, q_tilde <= 0.0));
    }
    let z = -q_tilde / s_q;
    Ok((z, z >= normal_quantile(1.0 - delta)?))
}

fn check_candidate(
    alpha_tilde: f64,
    resample: &PreparedBatch,
    spec: &DivergenceSpec,
    scaling: RegretScaling,
    delta: f64,
    mode: InnerMode,
) -> Result<UpperBoundReport> {
    if resample.len() < 30 {
        return arg_err(format!("resample needs at least 30 values, got {}", resample.len()));
    }
    let factor = scaling.factor(alpha_tilde);
    let (q, eta) = match mode {
        InnerMode::Inf => {
            let r = resample.minimize(spec, factor)?;
            (r.value, r.eta_star)
        }
        InnerMode::SupOverBracket => {
            let (eta, v) = resample.sup_over_bracket(spec, factor);
            (v, eta)
        }
    };
    let s = resample.term_std_error(spec, factor, eta);
    let (z, accepted) = upper_bound_decision(q, s, delta)?;
    Ok(UpperBoundReport {
        alpha_tilde,
        q_tilde: q,
        s_q: s,
        z_delta: z,
        accepted,
        confidence: 1.0 - delta,
        bound: 1.0 - alpha_tilde,
        side: if scaling.feasible_above() { BoundSide::Lower } else { BoundSide::Upper },
        resample_size: resample.len(),
    })
}

/// Checks a candidate α̃ on an independent resample.
pub fn upper_bound_check(
    alpha_tilde: f64,
    resample: &ItemBatch,
    spec: &DivergenceSpec,
    scaling: RegretScaling,
    delta: f64,
) -> Result<UpperBoundReport> {
    let (lo, hi) = scaling.alpha_range();
    if !(alpha_tilde >= lo && alpha_tilde <= hi) {
        return arg_err(format!("alpha_tilde {alpha_tilde} outside [{lo}, {hi}]"));
    }
    check_candidate(alpha_tilde, &PreparedBatch::new(resample)?, spec, scaling, delta, InnerMode::Inf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundReport {
    pub l_tilde: f64,
    pub s_l: f64,
    /// `l̃ − z_{γ/2}·S`.
    pub lb: f64,
    /// `l̃ + z_{γ/2}·S`.
    pub ub: f64,
    pub confidence: f64,
    pub group_values: Vec<f64>,
    /// Which of `lb`/`ub` bounds the index for this scaling.
    pub side: BoundSide,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub popoviciu_ok: Option<bool>,
}

impl LowerBoundReport {
    pub fn index_bound(&self) -> f64 {
        match self.side {
            BoundSide::Lower => self.lb,
            BoundSide::Upper => self.ub,
        }
    }
}

/// Confidence limits from group values; `big_m` enables the Popoviciu check.
pub fn lower_bound_from_values(
    values: &[f64],
    gamma: f64,
    side: BoundSide,
    big_m: Option<f64>,
) -> Result<LowerBoundReport> {
    if values.len() < 2 {
        return arg_err(format!("at least 2 groups are required, got {}", values.len()));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return arg_err(format!("gamma {gamma} outside (0, 1)"));
    }
    let m = values.len() as f64;
    let l = values.iter().sum::<f64>() / m;
    let s2 = values.iter().map(|h| (h - l) * (h - l)).sum::<f64>() / (m * (m - 1.0));
    let s = s2.sqrt();
    let z = normal_quantile(1.0 - gamma / 2.0)?;
    Ok(LowerBoundReport {
        l_tilde: l,
        s_l: s,
        lb: l - z * s,
        ub: l + z * s,
        confidence: 1.0 - gamma,
        group_values: values.to_vec(),
        side,
        popoviciu_ok: big_m.map(|bm| s2 <= bm * bm / 4.0),
    })
}

/// Solves the Lagrangian on each group and aggregates.
pub fn lower_bound_estimate(
    groups: &[ItemBatch],
    pi_tilde: f64,
    spec: &DivergenceSpec,
    scaling: RegretScaling,
    gamma: f64,
) -> Result<LowerBoundReport> {
    if groups.len() < 2 {
        return arg_err(format!("at least 2 groups are required, got {}", groups.len()));
    }
    let values = groups
        .iter()
        .map(|g| solve_lagrangian(g, pi_tilde, spec, scaling).map(|r| r.1))
        .collect::<Result<Vec<_>>>()?;
    lower_bound_from_values(&values, gamma, lagrangian_side(scaling), None)
}

fn lagrangian_side(scaling: RegretScaling) -> BoundSide {
    if scaling.feasible_above() {
        BoundSide::Upper
    } else {
        BoundSide::Lower
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsConfig {
    pub spec: DivergenceSpec,
    pub scaling: RegretScaling,
    pub epsilon: f64,
    pub delta: f64,
    pub gamma: f64,
    pub groups: usize,
    /// Group size; `None` splits the sample budget, `max(N / groups, 5)`.
    pub group_size: Option<usize>,
    pub resample_factor: usize,
    pub max_rounds: u32,
    pub inner_mode: InnerMode,
}

impl BoundsConfig {
    pub fn new(spec: DivergenceSpec, scaling: RegretScaling) -> Self {
        BoundsConfig {
            spec,
            scaling,
            epsilon: crate::batch_solver::DEFAULT_EPSILON,
            delta: 0.05,
            gamma: 0.05,
            groups: 10,
            group_size: None,
            resample_factor: 10,
            max_rounds: 20,
            inner_mode: InnerMode::Inf,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) || !(self.gamma > 0.0 && self.gamma < 1.0) {
            return arg_err("delta and gamma must lie in (0, 1)");
        }
        if self.groups < 2 {
            return arg_err("at least 2 groups are required");
        }
        if self.resample_factor == 0 || self.group_size == Some(0) {
            return arg_err("resample factor and group size must be positive");
        }
        if !(self.epsilon > 0.0) {
            return arg_err("epsilon must be positive");
        }
        Ok(())
    }
}

/// Where resamples and groups come from.
pub enum ResampleSource {
    /// Fresh draws from a generator.
    Generator(Sampler),
    /// Bootstrap with replacement from the batch itself.
    Bootstrap { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub item_id: String,
    pub sample_size: usize,
    pub solution: BatchSolution,
    pub pi_tilde: f64,
    pub tau_tilde: f64,
    pub rounds: u32,
    pub candidate: UpperBoundReport,
    pub lagrangian: LowerBoundReport,
    pub group_size: usize,
    /// Bounds on the index, whichever procedure produced them.
    pub ub: f64,
    pub lb: f64,
    pub relative_gap: f64,
}

/// π̃ from stationarity of the Lagrangian at α*: `π̃ = 1/g_N′(α*)`, set to 0
/// when the sign is not the admissible one.
fn dual_estimate(
    pb: &PreparedBatch,
    spec: &DivergenceSpec,
    scaling: RegretScaling,
    alpha: f64,
) -> f64 {
    let (lo, hi) = scaling.alpha_range();
    let h = 0.01;
    let (a0, a1) = ((alpha - h).max(lo), (alpha + h).min(hi));
    let g0 = g_value(pb, spec, scaling.factor(a0), InnerMode::Inf);
    let g1 = g_value(pb, spec, scaling.factor(a1), InnerMode::Inf);
    let slope = (g1 - g0) / (a1 - a0);
    if !slope.is_finite() || slope == 0.0 {
        return 0.0;
    }
    let pi = 1.0 / slope;
    let admissible = if scaling.feasible_above() { pi <= 0.0 } else { pi >= 0.0 };
    if admissible && pi.is_finite() {
        pi
    } else {
        0.0
    }
}

/// Full bounding procedure for one item.
pub fn bound_item(
    batch: &ItemBatch,
    source: ResampleSource,
    config: &BoundsConfig,
) -> Result<BoundsReport> {
    config.validate()?;
    let pb = PreparedBatch::new(batch)?;
    let (spec, scaling) = (&config.spec, config.scaling);
    let n = batch.len();
    let solution = bisect_prepared(&batch.item_id, &pb, spec, scaling, config.epsilon, 0.0)?;

    let shifted = |v: Vec<f64>| PreparedBatch::from_shifted(v.into_iter().map(|d| d - batch.target).collect());
    let mut draw: Box<dyn FnMut(usize) -> Vec<f64>> = match source {
        ResampleSource::Generator(mut s) => Box::new(move |k| s.take_vec(k)),
        ResampleSource::Bootstrap { seed } => {
            let mut s = DistributionSpec::empirical(batch.samples.clone(), seed)?.sampler()?;
            Box::new(move |k| s.take_vec(k))
        }
    };
    let resample = shifted(draw(n * config.resample_factor));
    let group_size = config.group_size.unwrap_or((n / config.groups).max(5));
    let groups: Vec<PreparedBatch> =
        (0..config.groups).map(|_| shifted(draw(group_size))).collect();

    // Candidate with a tightened threshold.
    let z_delta = normal_quantile(1.0 - config.delta)?;
    let mut tau_tilde = 0.0;
    let mut rounds = 0;
    let candidate = loop {
        rounds += 1;
        let cand = bisect_prepared(&batch.item_id, &pb, spec, scaling, config.epsilon, tau_tilde)?;
        let check =
            check_candidate(cand.alpha_star, &resample, spec, scaling, config.delta, config.inner_mode)?;
        if check.accepted || !cand.feasible_at_alpha_star || rounds >= config.max_rounds {
            if !check.accepted {
                log::debug!("item '{}': candidate not accepted after {rounds} rounds", batch.item_id);
            }
            break check;
        }
        let shortfall = check.q_tilde + z_delta * check.s_q;
        tau_tilde -= shortfall.max(1e-6 * (1.0 + tau_tilde.abs()));
    };

    let pi_tilde = dual_estimate(&pb, spec, scaling, solution.alpha_star);
    let values = groups
        .iter()
        .map(|g| lagrangian_on_prepared(g, pi_tilde, spec, scaling, config.inner_mode).map(|r| r.1))
        .collect::<Result<Vec<_>>>()?;
    let lagrangian = lower_bound_from_values(&values, config.gamma, lagrangian_side(scaling), None)?;

    let (ub, lb) = if scaling.feasible_above() {
        (lagrangian.ub, candidate.bound)
    } else {
        (candidate.bound, lagrangian.lb)
    };
    Ok(BoundsReport {
        item_id: batch.item_id.clone(),
        sample_size: n,
        solution,
        pi_tilde,
        tau_tilde,
        rounds,
        candidate,
        lagrangian,
        group_size,
        ub,
        lb,
        relative_gap: (ub - lb) / ub.abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub sigma2: f64,
    pub psi_bar: f64,
    pub phi_bar: f64,
    pub diameter: f64,
    pub lipschitz_pi: f64,
    pub tau_gap: f64,
    pub gap_c: f64,
    pub big_m: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub m_groups: u64,
}

impl BoundParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma2", self.sigma2),
            ("psi_bar", self.psi_bar),
            ("phi_bar", self.phi_bar),
            ("diameter", self.diameter),
            ("lipschitz_pi", self.lipschitz_pi),
            ("big_m", self.big_m),
            ("gap_c", self.gap_c),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, v) in [("beta", self.beta), ("gamma", self.gamma), ("delta", self.delta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if !(self.tau_gap >= 0.0 && self.tau_gap.is_finite()) {
            return Err(Error::Config(format!("tau_gap must be >= 0, got {}", self.tau_gap)));
        }
        if self.epsilon > self.gap_c {
            return Err(Error::Config("epsilon must not exceed gap_c".into()));
        }
        if self.epsilon <= self.lipschitz_pi * self.tau_gap {
            return Err(Error::Config("epsilon must exceed lipschitz_pi * tau_gap".into()));
        }
        if self.m_groups == 0 {
            return Err(Error::Config("m_groups must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let p: BoundParams =
            toml::from_str(text).map_err(|e| Error::Config(format!("parameter file: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    fn third_gap(&self) -> Result<(f64, f64)> {
        let z = normal_quantile(1.0 - self.gamma / 2.0)?;
        let den = self.gap_c - self.epsilon - z * self.big_m * self.big_m / 4.0;
        if !(den > 0.0) {
            return Err(Error::Config(format!(
                "c - epsilon - z_(gamma/2) M^2/4 = {den} must be positive"
            )));
        }
        Ok((den, z))
    }

    fn nets(&self) -> Result<(f64, f64, f64, f64, f64)> {
        self.validate()?;
        let (den, z) = self.third_gap()?;
        let sum = self.psi_bar + self.phi_bar;
        let c = self.lipschitz_pi;
        let v1 = 1.0 / (4.0 * sum / self.epsilon + 2.0);
        let v2 = 1.0 / (4.0 * sum * c / (self.epsilon - c * self.tau_gap) + 2.0);
        let v3 = 1.0 / (4.0 * sum / den + 2.0);
        Ok((v1, v2, v3, den, z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeReport {
    pub n: u64,
    pub n_exact: f64,
    pub first_stage: f64,
    pub group_stage: f64,
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub z_half_gamma: f64,
}

/// Sample size for a correct ranking of every item pair separated by `c`.
pub fn required_sample_size(params: &BoundParams) -> Result<SampleSizeReport> {
    let (v1, v2, v3, den, z) = params.nets()?;
    let p = params;
    let c = p.lipschitz_pi;
    let lg = |v: f64| ((2.0 / p.beta) * (2.0 + p.diameter / (v * v))).ln();
    let t1 = 8.0 * p.sigma2 / (p.epsilon * p.epsilon) * lg(v1);
    let e2 = p.epsilon - c * p.tau_gap;
    let t2 = 8.0 * p.sigma2 * c * c / (e2 * e2) * lg(v2);
    let t3 = 8.0 * p.sigma2 * c * c / (den * den) * lg(v3);
    let first = t1.max(t2);
    let n_exact = first + t3 * p.m_groups as f64;
    Ok(SampleSizeReport {
        n: n_exact.ceil() as u64,
        n_exact,
        first_stage: first,
        group_stage: t3,
        v1,
        v2,
        v3,
        z_half_gamma: z,
    })
}

/// Probability that the SAA ranking of `items` items is correct with
/// `N = n1 + n2·M_l` samples.
pub fn ranking_validity_probability(
    n1: u64,
    n2: u64,
    items: u64,
    params: &BoundParams,
) -> Result<f64> {
    if n1 == 0 || n2 == 0 {
        return arg_err("n1 and n2 must be at least 1");
    }
    if items < 2 {
        return arg_err("at least two items are required");
    }
    let (v1, v2, v3, den, _) = params.nets()?;
    let p = params;
    let c = p.lipschitz_pi;
    let e2 = p.epsilon - c * p.tau_gap;
    let bracket = |v: f64, rate: f64, n: u64| {
        (1.0 - 2.0 * (2.0 + p.diameter / (v * v)) * (-(n as f64) * rate).exp()).clamp(0.0, 1.0)
    };
    let b1 = bracket(v1, p.epsilon * p.epsilon / (8.0 * p.sigma2), n1);
    let b2 = bracket(v2, e2 * e2 / (8.0 * p.sigma2 * c * c), n1);
    let b3 = bracket(v3, den * den / (8.0 * p.sigma2), n2);
    let i = items as f64;
    Ok((b1.min(b2).powf(i) * b3.powf(i)).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::DistributionSpec;

    fn example_params() -> BoundParams {
        BoundParams {
            sigma2: 1.0,
            psi_bar: 1.0,
            phi_bar: 1.0,
            diameter: 10.0,
            lipschitz_pi: 1.0,
            tau_gap: 0.01,
            gap_c: 0.9,
            big_m: 0.5,
            beta: 0.1,
            gamma: 0.5,
            delta: 0.05,
            epsilon: 0.1,
            m_groups: 10,
        }
    }

    #[test]
    fn quantiles() {
        assert!(normal_quantile(0.5).unwrap().abs() < 1e-10);
        assert!((normal_quantile(0.975).unwrap() - 1.959_963_984_540_054).abs() < 1e-9);
        assert!((normal_quantile(0.95).unwrap() - 1.644_853_626_951_472).abs() < 1e-9);
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
    }

    #[test]
    fn lagrangian_examples() {
        let cv = DivergenceSpec::cvar();
        let inv = RegretScaling::InverseAlpha;
        let b = ItemBatch::new("a", vec![0.3, -1.0, 2.0], 0.0).unwrap();
        let (a, v) = solve_lagrangian(&b, 0.0, &cv, inv).unwrap();
        assert_eq!(a, crate::risk_core::ALPHA_MIN);
        assert_eq!(v, 1.0 - crate::risk_core::ALPHA_MIN);
        let b = ItemBatch::new("a", vec![-1.0; 4], 0.0).unwrap();
        let (a, v) = solve_lagrangian(&b, -1.0, &cv, inv).unwrap();
        assert!((v - (2.0 - crate::risk_core::ALPHA_MIN)).abs() < 1e-9);
        assert!(a < 1e-3);
    }

    #[test]
    fn lagrangian_weak_duality() {
        let cv = DivergenceSpec::cvar();
        let inv = RegretScaling::InverseAlpha;
        let d = DistributionSpec::normal(0.0, 1.0, 4).unwrap();
        for seed in 0..20 {
            let s = crate::data_io::generate_synthetic(&d.with_seed(seed), 40).unwrap();
            let b = ItemBatch::new("a", s, -0.5).unwrap();
            let sol = crate::batch_solver::satisficing_binary_search(&b, &cv, inv, 1e-6).unwrap();
            for pi in [-0.1, -1.0, -5.0] {
                let (_, v) = solve_lagrangian(&b, pi, &cv, inv).unwrap();
                if pi * sol.risk_at_alpha_star >= 0.0 {
                    assert!(v >= sol.index - 1e-9, "{seed} {pi}");
                }
            }
        }
    }

    #[test]
    fn upper_bound_examples() {
        assert_eq!(upper_bound_decision(0.0, 0.1, 0.05).unwrap(), (0.0, false));
        let (z, ok) = upper_bound_decision(-0.4, 0.1, 0.05).unwrap();
        assert!((z - 4.0).abs() < 1e-12 && ok);
        assert!(upper_bound_decision(0.0, 0.0, 0.05).unwrap().1);
        assert!(!upper_bound_decision(0.1, 0.0, 0.05).unwrap().1);
        let r = ItemBatch::new("a", vec![-1.0; 40], 0.0).unwrap();
        let rep =
            upper_bound_check(0.3, &r, &DivergenceSpec::cvar(), RegretScaling::InverseAlpha, 0.05)
                .unwrap();
        assert!((rep.q_tilde + 1.0).abs() < 1e-9);
        assert_eq!(rep.s_q, 0.0);
        assert!(rep.accepted);
        let small = ItemBatch::new("a", vec![-1.0; 29], 0.0).unwrap();
        assert!(upper_bound_check(0.3, &small, &DivergenceSpec::cvar(), RegretScaling::InverseAlpha, 0.05)
            .is_err());
    }

    #[test]
    fn lower_bound_examples() {
        let r = lower_bound_from_values(&[0.7, 0.8], 0.05, BoundSide::Lower, None).unwrap();
        assert!((r.l_tilde - 0.75).abs() < 1e-12);
        assert!((r.s_l - 0.05).abs() < 1e-12);
        assert!((r.lb - 0.652_001_800_772_997_2).abs() < 1e-9);
        let r = lower_bound_from_values(&[0.4; 5], 0.05, BoundSide::Lower, None).unwrap();
        assert_eq!((r.s_l, r.lb), (0.0, 0.4));
        assert!(lower_bound_from_values(&[0.4], 0.05, BoundSide::Lower, None).is_err());
        let r = lower_bound_from_values(&[0.0, 2.0, 0.0, 2.0], 0.05, BoundSide::Lower, Some(2.0))
            .unwrap();
        assert_eq!(r.popoviciu_ok, Some(true));
    }

    #[test]
    fn sample_size_example() {
        // Frozen from an independent evaluation of the displayed bound.
        let r = required_sample_size(&example_params()).unwrap();
        assert_eq!(r.n, 15584);
        assert!((r.n_exact - 15_583.937_156_904_79).abs() < 1e-6);
        assert!((r.v1 - 0.012_195_121_951_219_513).abs() < 1e-15);
        assert!((r.v2 - 0.011_002_444_987_775_063).abs() < 1e-15);
        assert!((r.v3 - 0.079_641_569_626_360_25).abs() < 1e-12);
    }

    #[test]
    fn sample_size_monotone() {
        let p = example_params();
        let base = required_sample_size(&p).unwrap().n_exact;
        let more_var = required_sample_size(&BoundParams { sigma2: 2.0, ..p }).unwrap().n_exact;
        let small_beta = required_sample_size(&BoundParams { beta: 0.01, ..p }).unwrap().n_exact;
        assert!(more_var > base && small_beta > base);
    }

    #[test]
    fn degenerate_third_term() {
        let p = BoundParams { big_m: 3.0, ..example_params() };
        assert!(required_sample_size(&p).is_err());
    }

    #[test]
    fn validity_probability_example() {
        let p = example_params();
        let v = ranking_validity_probability(14141, 145, 2, &p).unwrap();
        let one = ranking_validity_probability(14141, 145, 2, &p).unwrap();
        assert!((0.0..=1.0).contains(&v));
        assert_eq!(v, one);
        // I = 1 value frozen from the same independent evaluation.
        let single = {
            let (v1, v2, v3, den, _) = p.nets().unwrap();
            let b1 = 1.0 - 2.0 * (2.0 + 10.0 / (v1 * v1)) * (-14141.0 * 0.01 / 8.0f64).exp();
            let b2 = 1.0 - 2.0 * (2.0 + 10.0 / (v2 * v2)) * (-14141.0 * 0.0081 / 8.0f64).exp();
            let b3 = 1.0 - 2.0 * (2.0 + 10.0 / (v3 * v3)) * (-145.0 * den * den / 8.0).exp();
            b1.min(b2) * b3
        };
        assert!((single - 0.814_374_583_932_787_3).abs() < 1e-9);
        assert!((v - single * single).abs() < 1e-12);
        assert!(single >= (1.0 - p.beta) * (1.0 - p.gamma) * (1.0 - p.delta));
        let big = ranking_validity_probability(10_000_000, 10_000_000, 2, &p).unwrap();
        assert!((big - 1.0).abs() < 1e-12);
    }

    #[test]
    fn params_from_toml() {
        let text = "sigma2 = 1.0\npsi_bar = 1.0\nphi_bar = 1.0\ndiameter = 10.0\nlipschitz_pi = 1.0\n\
                    tau_gap = 0.01\ngap_c = 0.9\nbig_m = 0.5\nbeta = 0.1\ngamma = 0.5\ndelta = 0.05\n\
                    epsilon = 0.1\nm_groups = 10\n";
        assert_eq!(BoundParams::from_toml(text).unwrap(), example_params());
        assert!(BoundParams::from_toml("sigma2 = 1.0").is_err());
    }

    #[test]
    fn bounds_bracket_true_index_one_minus_alpha() {
        let spec = DivergenceSpec::cvar();
        let cfg = BoundsConfig::new(spec, RegretScaling::InverseOneMinusAlpha);
        let d = DistributionSpec::normal(100.0, 50.0, 11).unwrap();
        let mut s = d.sampler().unwrap();
        let b = ItemBatch::new("a", s.take_vec(500), 120.0).unwrap();
        let rep = bound_item(&b, ResampleSource::Generator(s), &cfg).unwrap();
        assert!(rep.lb <= rep.solution.index + 1e-12);
        assert!(rep.ub >= rep.solution.index - 1e-12);
        assert!(rep.candidate.accepted);
        assert!(rep.pi_tilde >= 0.0);
        assert_eq!(rep.group_size, 50);
        // True index ≈ 0.767 for this model.
        assert!(rep.lb < 0.767 && rep.ub > 0.767, "{} {}", rep.lb, rep.ub);
    }

    #[test]
    fn bounds_bootstrap_inverse_alpha() {
        let spec = DivergenceSpec::cvar();
        let cfg = BoundsConfig::new(spec, RegretScaling::InverseAlpha);
        let d = DistributionSpec::normal(100.0, 50.0, 12).unwrap();
        let b = ItemBatch::new("a", crate::data_io::generate_synthetic(&d, 300).unwrap(), 120.0)
            .unwrap();
        let rep = bound_item(&b, ResampleSource::Bootstrap { seed: 3 }, &cfg).unwrap();
        assert_eq!(rep.lagrangian.side, BoundSide::Upper);
        assert_eq!(rep.candidate.side, BoundSide::Lower);
        assert!(rep.pi_tilde <= 0.0);
        assert!(rep.lb <= rep.solution.index + 1e-12);
        assert!(rep.ub >= rep.lb);
    }
}
