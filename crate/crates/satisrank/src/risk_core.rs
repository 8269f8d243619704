//! Empirical OCE risk: `inf_η η + f(α)·mean φ*(d − τ − η)` on one sample batch.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::divergence::{DivergenceKind, DivergenceSpec};
use crate::error::{arg_err, Error, Result};

/// Representation of the open end of `(0, 1]`.
pub const ALPHA_MIN: f64 = 1e-6;

const GOLDEN: f64 = 0.618_033_988_749_894_8;
const MAX_EXPANSIONS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemBatch {
    pub item_id: String,
    pub samples: Vec<f64>,
    pub target: f64,
}

impl ItemBatch {
    pub fn new(item_id: impl Into<String>, samples: Vec<f64>, target: f64) -> Result<Self> {
        let b = ItemBatch { item_id: item_id.into(), samples, target };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return arg_err(format!("item '{}' has no samples", self.item_id));
        }
        if let Some(x) = self.samples.iter().find(|x| !x.is_finite()) {
            return arg_err(format!("item '{}' has a non-finite sample {x}", self.item_id));
        }
        if !self.target.is_finite() {
            return arg_err(format!("item '{}' has a non-finite target", self.item_id));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegretScaling {
    #[serde(rename = "inv_alpha")]
    InverseAlpha,
    #[serde(rename = "inv_one_minus_alpha")]
    InverseOneMinusAlpha,
}

impl RegretScaling {
    pub fn name(self) -> &'static str {
        match self {
            RegretScaling::InverseAlpha => "inv_alpha",
            RegretScaling::InverseOneMinusAlpha => "inv_one_minus_alpha",
        }
    }

    /// f(α) without range checks.
    pub fn factor(self, alpha: f64) -> f64 {
        match self {
            RegretScaling::InverseAlpha => 1.0 / alpha,
            RegretScaling::InverseOneMinusAlpha => 1.0 / (1.0 - alpha),
        }
    }

    /// f′(α).
    pub fn factor_derivative(self, alpha: f64) -> f64 {
        match self {
            RegretScaling::InverseAlpha => -1.0 / (alpha * alpha),
            RegretScaling::InverseOneMinusAlpha => 1.0 / ((1.0 - alpha) * (1.0 - alpha)),
        }
    }

    /// Admissible α interval, with the singular end replaced by the clamp.
    pub fn alpha_range(self) -> (f64, f64) {
        match self {
            RegretScaling::InverseAlpha => (ALPHA_MIN, 1.0),
            RegretScaling::InverseOneMinusAlpha => (ALPHA_MIN, 1.0 - ALPHA_MIN),
        }
    }

    /// True when the feasible set in α is an upper interval `[α*, hi]`
    /// (the constraint value decreases in α). False for `1/(1−α)`, where it
    /// is a lower interval `[lo, α*]`.
    pub fn feasible_above(self) -> bool {
        matches!(self, RegretScaling::InverseAlpha)
    }
}

impl fmt::Display for RegretScaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegretScaling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inv_alpha" => Ok(RegretScaling::InverseAlpha),
            "inv_one_minus_alpha" => Ok(RegretScaling::InverseOneMinusAlpha),
            _ => Err(Error::Config(format!("unknown scaling '{s}'"))),
        }
    }
}

/// f(α) with the range checks of the respective form.
pub fn regret_scale(scaling: RegretScaling, alpha: f64) -> Result<f64> {
    let ok = match scaling {
        RegretScaling::InverseAlpha => alpha > 0.0 && alpha <= 1.0,
        RegretScaling::InverseOneMinusAlpha => alpha > 0.0 && alpha < 1.0,
    };
    if !ok {
        return arg_err(format!("alpha = {alpha} is outside the range of {scaling}"));
    }
    Ok(scaling.factor(alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerSolveResult {
    pub value: f64,
    pub eta_star: f64,
    pub iterations: u32,
    pub bracket: (f64, f64),
}

/// Target-shifted, sorted samples with suffix sums, shared by all α probes
/// of one batch.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    x: Vec<f64>,
    suffix: Vec<f64>,
}

impl PreparedBatch {
    pub fn new(batch: &ItemBatch) -> Result<Self> {
        batch.validate()?;
        Ok(Self::from_shifted(batch.samples.iter().map(|d| d - batch.target).collect()))
    }

    /// From already target-shifted values `d − τ`.
    pub fn from_shifted(mut x: Vec<f64>) -> Self {
        x.sort_by(f64::total_cmp);
        let mut suffix = vec![0.0; x.len() + 1];
        for i in (0..x.len()).rev() {
            suffix[i] = suffix[i + 1] + x[i];
        }
        PreparedBatch { x, suffix }
    }

    pub fn shifted(&self) -> &[f64] {
        &self.x
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.x[0]
    }

    pub fn max(&self) -> f64 {
        self.x[self.x.len() - 1]
    }

    /// Σ (x_n − η)⁺ in O(log N).
    fn excess_sum(&self, eta: f64) -> f64 {
        let idx = self.x.partition_point(|&v| v <= eta);
        let k = (self.x.len() - idx) as f64;
        self.suffix[idx] - eta * k
    }

    /// mean φ*(x_n − η), `+inf` if any term leaves the domain.
    pub fn mean_conjugate(&self, spec: &DivergenceSpec, eta: f64) -> f64 {
        let n = self.x.len() as f64;
        match spec.kind() {
            DivergenceKind::CVaRIndicator => self.excess_sum(eta) / n,
            DivergenceKind::VariationDistance => {
                if self.max() - eta > 1.0 {
                    f64::INFINITY
                } else {
                    -1.0 + self.excess_sum(eta - 1.0) / n
                }
            }
            _ => {
                let dom = spec.domain();
                if dom.is_bounded() && !dom.contains(self.max() - eta) {
                    return f64::INFINITY;
                }
                let s: f64 = self.x.iter().map(|&v| spec.conjugate_value(v - eta)).sum();
                s / n
            }
        }
    }

    /// η + c·mean φ*(x − η).
    pub fn objective(&self, spec: &DivergenceSpec, factor: f64, eta: f64) -> f64 {
        let m = self.mean_conjugate(spec, eta);
        if m == f64::INFINITY {
            f64::INFINITY
        } else {
            eta + factor * m
        }
    }

    /// Bracket for η: the shifted sample range widened by `R = range + 1`,
    /// with the left end clipped to the conjugate domain. The flag reports
    /// whether the clip was active.
    pub fn bracket(&self, spec: &DivergenceSpec) -> ((f64, f64), bool) {
        let r = self.max() - self.min() + 1.0;
        let mut lo = self.min() - r;
        let hi = self.max() + r;
        let dom = spec.domain();
        let mut clipped = false;
        if dom.is_bounded() {
            let edge = self.max() - dom.upper;
            if edge >= lo {
                lo = edge;
                clipped = true;
            }
        }
        ((lo, hi), clipped)
    }

    /// Minimizes the inner objective for a given regret factor `c = f(α)`.
    pub fn minimize(&self, spec: &DivergenceSpec, factor: f64) -> Result<InnerSolveResult> {
        let ((mut lo, mut hi), clipped) = self.bracket(spec);
        let f = |eta: f64| self.objective(spec, factor, eta);

        // Widen ends where the convex objective is still decreasing outward.
        for _ in 0..MAX_EXPANSIONS {
            let w = hi - lo;
            let probe = hi - 1e-6 * w;
            let (fh, fp) = (f(hi), f(probe));
            if fh.is_finite() && fh < fp - 1e-12 * (1.0 + fh.abs()) {
                hi += w;
            } else {
                break;
            }
        }
        if !clipped {
            for _ in 0..MAX_EXPANSIONS {
                let w = hi - lo;
                let probe = lo + 1e-6 * w;
                let (fl, fp) = (f(lo), f(probe));
                if fl.is_finite() && fl < fp - 1e-12 * (1.0 + fl.abs()) {
                    lo -= w;
                } else {
                    break;
                }
            }
        }
        let bracket = (lo, hi);

        let mut best = (f64::NAN, f64::INFINITY);
        let consider = |eta: f64, v: f64, best: &mut (f64, f64)| {
            if v < best.1 || best.0.is_nan() {
                *best = (eta, v);
            }
        };
        consider(lo, f(lo), &mut best);
        consider(hi, f(hi), &mut best);

        let tol = 1e-8 * (1.0 + (hi - lo));
        let (mut a, mut b) = (lo, hi);
        let mut c = b - GOLDEN * (b - a);
        let mut d = a + GOLDEN * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        consider(c, fc, &mut best);
        consider(d, fd, &mut best);
        let mut iterations = 0u32;
        while b - a > tol && iterations < 200 {
            iterations += 1;
            if fc == f64::INFINITY && fd == f64::INFINITY {
                // Infeasible η form a left interval.
                a = d;
                c = b - GOLDEN * (b - a);
                d = a + GOLDEN * (b - a);
                fc = f(c);
                fd = f(d);
                consider(c, fc, &mut best);
                consider(d, fd, &mut best);
            } else if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - GOLDEN * (b - a);
                fc = f(c);
                consider(c, fc, &mut best);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + GOLDEN * (b - a);
                fd = f(d);
                consider(d, fd, &mut best);
            }
        }
        let mid = 0.5 * (a + b);
        consider(mid, f(mid), &mut best);

        if let Some(kinks) = spec.linear_kinks() {
            // Piecewise-linear objectives attain their minimum at a kink
            // η = x_n − k; check the kinks next to the located point.
            for &k in kinks {
                let idx = self.x.partition_point(|&v| v - k <= best.0);
                let from = idx.saturating_sub(2);
                let to = (idx + 2).min(self.x.len());
                for j in from..to {
                    let eta = self.x[j] - k;
                    // Ties go to the kink, so flat minima report an in-sample η.
                    let v = f(eta);
                    if eta >= lo && eta <= hi && v <= best.1 {
                        best = (eta, v);
                    }
                }
            }
        }

        if best.1 == f64::INFINITY {
            return Err(Error::InfeasibleEvaluation { lo, hi });
        }
        Ok(InnerSolveResult { value: best.1, eta_star: best.0, iterations, bracket })
    }

    /// Standard error of the per-sample terms `η + c·φ*(x_n − η)`.
    pub fn term_std_error(&self, spec: &DivergenceSpec, factor: f64, eta: f64) -> f64 {
        let n = self.x.len();
        if n < 2 {
            return 0.0;
        }
        let terms: Vec<f64> =
            self.x.iter().map(|&v| eta + factor * spec.conjugate_value(v - eta)).collect();
        let mean = terms.iter().sum::<f64>() / n as f64;
        let var = terms.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    }

    /// Supremum of the inner objective over the η bracket (convex, so it is
    /// attained at an end).
    pub fn sup_over_bracket(&self, spec: &DivergenceSpec, factor: f64) -> (f64, f64) {
        let ((lo, hi), _) = self.bracket(spec);
        let (flo, fhi) = (self.objective(spec, factor, lo), self.objective(spec, factor, hi));
        if flo >= fhi {
            (lo, flo)
        } else {
            (hi, fhi)
        }
    }
}

fn check_alpha(scaling: RegretScaling, alpha: f64) -> Result<()> {
    let (lo, hi) = scaling.alpha_range();
    if !(alpha >= lo && alpha <= hi) {
        return arg_err(format!("alpha = {alpha} outside [{lo}, {hi}] for {scaling}"));
    }
    Ok(())
}

/// Inner minimum over η at level α.
pub fn empirical_oce_risk(
    batch: &ItemBatch,
    alpha: f64,
    spec: &DivergenceSpec,
    scaling: RegretScaling,
) -> Result<InnerSolveResult> {
    check_alpha(scaling, alpha)?;
    PreparedBatch::new(batch)?.minimize(spec, scaling.factor(alpha))
}

/// Same as [`empirical_oce_risk`] on a prepared batch.
pub fn prepared_oce_risk(
    prepared: &PreparedBatch,
    alpha: f64,
    spec: &DivergenceSpec,
    scaling: RegretScaling,
) -> Result<InnerSolveResult> {
    check_alpha(scaling, alpha)?;
    prepared.minimize(spec, scaling.factor(alpha))
}

/// Discrete CVaR of `d − τ` at tail mass α by the sorted-tail formula.
pub fn cvar_closed_form(batch: &ItemBatch, alpha: f64) -> Result<f64> {
    batch.validate()?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return arg_err(format!("alpha = {alpha} must lie in (0, 1]"));
    }
    let mut v: Vec<f64> = batch.samples.iter().map(|d| d - batch.target).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    let n = v.len() as f64;
    let an = alpha * n;
    let k = (an.ceil() as usize).clamp(1, v.len());
    let head: f64 = v[..k - 1].iter().sum();
    Ok((head + (an - (k - 1) as f64) * v[k - 1]) / an)
}

#[cfg(test)]
mod tests {
    use super::*;
    use DivergenceKind::*;

    fn batch(s: &[f64], tau: f64) -> ItemBatch {
        ItemBatch::new("x", s.to_vec(), tau).unwrap()
    }

    #[test]
    fn regret_scale_examples() {
        assert_eq!(regret_scale(RegretScaling::InverseAlpha, 1.0).unwrap(), 1.0);
        assert_eq!(regret_scale(RegretScaling::InverseAlpha, 0.25).unwrap(), 4.0);
        assert_eq!(regret_scale(RegretScaling::InverseOneMinusAlpha, 0.75).unwrap(), 4.0);
        assert!(regret_scale(RegretScaling::InverseOneMinusAlpha, 1.0).is_err());
        assert!(regret_scale(RegretScaling::InverseAlpha, 0.0).is_err());
    }

    #[test]
    fn flat_cvar_segment() {
        let r = empirical_oce_risk(
            &batch(&[0.0, 10.0], 0.0),
            0.5,
            &DivergenceSpec::cvar(),
            RegretScaling::InverseAlpha,
        )
        .unwrap();
        assert!((r.value - 10.0).abs() < 1e-9);
        assert!(r.eta_star >= -1e-6 && r.eta_star <= 10.0 + 1e-6);
        // Cross-check against a grid scan at step 1e-3.
        let pb = PreparedBatch::new(&batch(&[0.0, 10.0], 0.0)).unwrap();
        let spec = DivergenceSpec::cvar();
        let grid_min = (0..=10_000)
            .map(|i| pb.objective(&spec, 2.0, i as f64 * 1e-3))
            .fold(f64::INFINITY, f64::min);
        assert!((grid_min - r.value).abs() < 1e-9);
    }

    #[test]
    fn constant_batch() {
        let r = empirical_oce_risk(
            &batch(&[5.0, 5.0, 5.0], 0.0),
            1.0,
            &DivergenceSpec::cvar(),
            RegretScaling::InverseAlpha,
        )
        .unwrap();
        assert!((r.value - 5.0).abs() < 1e-9);
        assert!((r.eta_star - 5.0).abs() < 1e-6);
    }

    #[test]
    fn kl_single_zero() {
        let kl = DivergenceSpec::simple(KullbackLeibler).unwrap();
        let r = empirical_oce_risk(&batch(&[0.0], 0.0), 1.0, &kl, RegretScaling::InverseAlpha)
            .unwrap();
        assert!(r.value.abs() < 1e-12);
        assert!(r.eta_star.abs() < 1e-5);
        assert!(r.eta_star >= r.bracket.0 && r.eta_star <= r.bracket.1);
    }

    #[test]
    fn kl_matches_log_sum_exp() {
        // inf_η η + c(mean e^{x−η} − 1) = ln(c·mean e^x) + 1 − c.
        let kl = DivergenceSpec::simple(KullbackLeibler).unwrap();
        let b = batch(&[0.3, -1.2, 2.0, 0.7], 0.5);
        for alpha in [1.0, 0.5, 0.1, 1e-3, 1e-6] {
            let r = empirical_oce_risk(&b, alpha, &kl, RegretScaling::InverseAlpha).unwrap();
            let c = 1.0 / alpha;
            let m: f64 = b.samples.iter().map(|d| (d - 0.5f64).exp()).sum::<f64>() / 4.0;
            let exact = (c * m).ln() + 1.0 - c;
            assert!((r.value - exact).abs() < 1e-7 * (1.0 + exact.abs()), "{alpha}");
        }
    }

    #[test]
    fn cvar_closed_form_examples() {
        let b: Vec<f64> = (1..=10).map(f64::from).collect();
        assert!((cvar_closed_form(&batch(&b, 0.0), 0.2).unwrap() - 9.5).abs() < 1e-12);
        assert!((cvar_closed_form(&batch(&[3.0; 4], 0.0), 0.3).unwrap() - 3.0).abs() < 1e-12);
        assert!(cvar_closed_form(&batch(&[-2.0, 1.0], 0.0), 0.75).unwrap().abs() < 1e-12);
        assert!(cvar_closed_form(&batch(&[1.0], 0.0), 0.0).is_err());
    }

    #[test]
    fn alpha_range_checked() {
        let b = batch(&[1.0], 0.0);
        let cv = DivergenceSpec::cvar();
        assert!(empirical_oce_risk(&b, 0.0, &cv, RegretScaling::InverseAlpha).is_err());
        assert!(empirical_oce_risk(&b, 1.0, &cv, RegretScaling::InverseOneMinusAlpha).is_err());
    }

    #[test]
    fn bounded_domains_are_clipped() {
        let burg = DivergenceSpec::simple(BurgEntropy).unwrap();
        let pb = PreparedBatch::new(&batch(&[0.0, 3.0, 1.0], 0.0)).unwrap();
        let ((lo, _), clipped) = pb.bracket(&burg);
        assert!(clipped);
        assert_eq!(lo, 2.0);
        let r = pb.minimize(&burg, 2.0).unwrap();
        assert!(r.value.is_finite() && r.eta_star > 2.0);
    }

    #[test]
    fn variation_fast_path_matches_direct_sum() {
        let var = DivergenceSpec::simple(VariationDistance).unwrap();
        let pb = PreparedBatch::new(&batch(&[0.2, -0.5, 1.4, 0.9], 0.1)).unwrap();
        for eta in [0.3, 0.5, 1.0, 2.0, -3.0] {
            let direct: f64 =
                pb.shifted().iter().map(|&v| var.conjugate_value(v - eta)).sum::<f64>() / 4.0;
            let fast = pb.mean_conjugate(&var, eta);
            if direct.is_finite() {
                assert!((direct - fast).abs() < 1e-12);
            } else {
                assert_eq!(fast, f64::INFINITY);
            }
        }
    }

    #[test]
    fn inner_minimum_not_above_bracket_ends() {
        let specs = [
            DivergenceSpec::simple(KullbackLeibler).unwrap(),
            DivergenceSpec::simple(ChiSquared).unwrap(),
            DivergenceSpec::simple(Hellinger).unwrap(),
            DivergenceSpec::simple(ModifiedChiSquared).unwrap(),
            DivergenceSpec::new(ChiDivergence, Some(2.0)).unwrap(),
            DivergenceSpec::new(CressieRead, Some(0.5)).unwrap(),
            DivergenceSpec::cvar(),
        ];
        let pb = PreparedBatch::new(&batch(&[0.1, 0.4, -0.3, 0.9, 0.0], 0.2)).unwrap();
        for sp in specs {
            for c in [1.0, 2.5, 10.0] {
                let r = pb.minimize(&sp, c).unwrap();
                let (lo, hi) = r.bracket;
                assert!(r.value <= pb.objective(&sp, c, lo));
                assert!(r.value <= pb.objective(&sp, c, hi));
                assert!(r.eta_star >= lo && r.eta_star <= hi);
                // Nearby points are not better.
                for dx in [-1e-3, 1e-3] {
                    assert!(r.value <= pb.objective(&sp, c, r.eta_star + dx) + 1e-9, "{sp}");
                }
            }
        }
    }
}
