//! Convex conjugates φ* of the supported φ-divergences and their subgradients.
//!
//! Values outside the domain of φ* are reported as `f64::INFINITY`; solvers
//! treat them as larger than any finite objective value.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    #[serde(rename = "kl")]
    KullbackLeibler,
    #[serde(rename = "burg")]
    BurgEntropy,
    #[serde(rename = "chi2")]
    ChiSquared,
    #[serde(rename = "mod_chi2")]
    ModifiedChiSquared,
    #[serde(rename = "hellinger")]
    Hellinger,
    #[serde(rename = "chi_div")]
    ChiDivergence,
    #[serde(rename = "variation")]
    VariationDistance,
    #[serde(rename = "cressie_read")]
    CressieRead,
    #[serde(rename = "cvar")]
    CVaRIndicator,
}

impl DivergenceKind {
    pub const ALL: [DivergenceKind; 9] = [
        DivergenceKind::KullbackLeibler,
        DivergenceKind::BurgEntropy,
        DivergenceKind::ChiSquared,
        DivergenceKind::ModifiedChiSquared,
        DivergenceKind::Hellinger,
        DivergenceKind::ChiDivergence,
        DivergenceKind::VariationDistance,
        DivergenceKind::CressieRead,
        DivergenceKind::CVaRIndicator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DivergenceKind::KullbackLeibler => "kl",
            DivergenceKind::BurgEntropy => "burg",
            DivergenceKind::ChiSquared => "chi2",
            DivergenceKind::ModifiedChiSquared => "mod_chi2",
            DivergenceKind::Hellinger => "hellinger",
            DivergenceKind::ChiDivergence => "chi_div",
            DivergenceKind::VariationDistance => "variation",
            DivergenceKind::CressieRead => "cressie_read",
            DivergenceKind::CVaRIndicator => "cvar",
        }
    }

    pub fn needs_theta(self) -> bool {
        matches!(self, DivergenceKind::ChiDivergence | DivergenceKind::CressieRead)
    }
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DivergenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DivergenceKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown divergence kind '{s}'")))
    }
}

/// Upper end of the conjugate domain `(-inf, upper)` or `(-inf, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Domain {
    pub upper: f64,
    pub closed: bool,
}

impl Domain {
    const ALL_REALS: Domain = Domain { upper: f64::INFINITY, closed: false };

    pub fn contains(&self, s: f64) -> bool {
        s < self.upper || (self.closed && s == self.upper)
    }

    pub fn is_bounded(&self) -> bool {
        self.upper.is_finite()
    }
}

#[derive(Deserialize)]
struct RawSpec {
    kind: DivergenceKind,
    #[serde(default)]
    theta: Option<f64>,
}

/// A validated divergence choice. `theta` is only present for the kinds that use it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct DivergenceSpec {
    kind: DivergenceKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta: Option<f64>,
}

impl TryFrom<RawSpec> for DivergenceSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        DivergenceSpec::new(raw.kind, raw.theta)
    }
}

impl DivergenceSpec {
    /// Builds a spec, checking theta. Theta is ignored for kinds that do not use it.
    pub fn new(kind: DivergenceKind, theta: Option<f64>) -> Result<Self> {
        if !kind.needs_theta() {
            return Ok(DivergenceSpec { kind, theta: None });
        }
        let theta = theta.ok_or_else(|| Error::Config(format!("{kind} requires theta")))?;
        if !theta.is_finite() {
            return Err(Error::Config(format!("theta must be finite, got {theta}")));
        }
        match kind {
            DivergenceKind::CressieRead if theta == 0.0 || theta == 1.0 => {
                Err(Error::Config(format!("cressie_read needs theta not in {{0, 1}}, got {theta}")))
            }
            DivergenceKind::ChiDivergence if theta <= 1.0 => {
                Err(Error::Config(format!("chi_div needs theta > 1, got {theta}")))
            }
            _ => Ok(DivergenceSpec { kind, theta: Some(theta) }),
        }
    }

    pub fn simple(kind: DivergenceKind) -> Result<Self> {
        DivergenceSpec::new(kind, None)
    }

    pub fn cvar() -> Self {
        DivergenceSpec { kind: DivergenceKind::CVaRIndicator, theta: None }
    }

    pub fn kind(&self) -> DivergenceKind {
        self.kind
    }

    pub fn theta(&self) -> Option<f64> {
        self.theta
    }

    fn th(&self) -> f64 {
        self.theta.unwrap_or(f64::NAN)
    }

    pub fn domain(&self) -> Domain {
        use DivergenceKind::*;
        match self.kind {
            BurgEntropy | ChiSquared | Hellinger => Domain { upper: 1.0, closed: false },
            VariationDistance => Domain { upper: 1.0, closed: true },
            CressieRead if self.th() < 1.0 => {
                Domain { upper: 1.0 / (1.0 - self.th()), closed: false }
            }
            _ => Domain::ALL_REALS,
        }
    }

    /// φ*(s); `+inf` outside the domain.
    pub fn conjugate_value(&self, s: f64) -> f64 {
        use DivergenceKind::*;
        if !self.domain().contains(s) {
            return f64::INFINITY;
        }
        match self.kind {
            KullbackLeibler => s.exp_m1(),
            BurgEntropy => -(-s).ln_1p(),
            ChiSquared => 2.0 - 2.0 * (1.0 - s).sqrt(),
            ModifiedChiSquared => {
                if s < -2.0 {
                    -1.0
                } else {
                    s + s * s / 4.0
                }
            }
            Hellinger => s / (1.0 - s),
            ChiDivergence => {
                let th = self.th();
                s + (th + 1.0) * (s.abs() / th).powf(th / (th - 1.0))
            }
            VariationDistance => s.max(-1.0),
            CressieRead => {
                let th = self.th();
                let base = (1.0 - (1.0 - th) * s).max(0.0);
                (base.powf(th / (th - 1.0)) - 1.0) / th
            }
            CVaRIndicator => {
                if s > 0.0 {
                    s
                } else {
                    0.0
                }
            }
        }
    }

    /// One element of ∂φ*(s). Kinks use the left-side (smaller) selection.
    pub fn conjugate_subgradient(&self, s: f64) -> Result<f64> {
        use DivergenceKind::*;
        if !s.is_finite() || !self.domain().contains(s) {
            return Err(Error::Domain(s));
        }
        let g = match self.kind {
            KullbackLeibler => s.exp(),
            BurgEntropy => 1.0 / (1.0 - s),
            ChiSquared => 1.0 / (1.0 - s).sqrt(),
            ModifiedChiSquared => {
                if s <= -2.0 {
                    0.0
                } else {
                    1.0 + s / 2.0
                }
            }
            Hellinger => 1.0 / ((1.0 - s) * (1.0 - s)),
            ChiDivergence => {
                let th = self.th();
                if s == 0.0 {
                    1.0
                } else {
                    1.0 + (th + 1.0) / (th - 1.0) * (s.abs() / th).powf(1.0 / (th - 1.0)) * s.signum()
                }
            }
            VariationDistance => {
                if s <= -1.0 {
                    0.0
                } else {
                    1.0
                }
            }
            CressieRead => {
                let th = self.th();
                let base = 1.0 - (1.0 - th) * s;
                if base <= 0.0 {
                    0.0
                } else {
                    base.powf(1.0 / (th - 1.0))
                }
            }
            CVaRIndicator => {
                if s > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        };
        Ok(g)
    }

    /// Kink locations for kinds whose conjugate is piecewise linear.
    pub fn linear_kinks(&self) -> Option<&'static [f64]> {
        match self.kind {
            DivergenceKind::CVaRIndicator => Some(&[0.0]),
            DivergenceKind::VariationDistance => Some(&[-1.0]),
            _ => None,
        }
    }

    /// Points where φ* is not twice differentiable (used to exclude
    /// neighbourhoods in finite-difference checks).
    pub fn kinks(&self) -> Vec<f64> {
        match self.kind {
            DivergenceKind::CVaRIndicator => vec![0.0],
            DivergenceKind::VariationDistance => vec![-1.0],
            DivergenceKind::ModifiedChiSquared => vec![-2.0],
            DivergenceKind::ChiDivergence => vec![0.0],
            DivergenceKind::CressieRead if self.th() > 1.0 => vec![-1.0 / (self.th() - 1.0)],
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for DivergenceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.theta {
            Some(th) => write!(f, "{}(theta={})", self.kind, th),
            None => write!(f, "{}", self.kind),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use DivergenceKind::*;

    fn spec(kind: DivergenceKind) -> DivergenceSpec {
        let theta = match kind {
            ChiDivergence => Some(2.0),
            CressieRead => Some(0.5),
            _ => None,
        };
        DivergenceSpec::new(kind, theta).unwrap()
    }

    fn all_specs() -> Vec<DivergenceSpec> {
        let mut v: Vec<_> = DivergenceKind::ALL.iter().map(|&k| spec(k)).collect();
        v.push(DivergenceSpec::new(ChiDivergence, Some(3.5)).unwrap());
        v.push(DivergenceSpec::new(CressieRead, Some(-1.0)).unwrap());
        v.push(DivergenceSpec::new(CressieRead, Some(0.25)).unwrap());
        v.push(DivergenceSpec::new(CressieRead, Some(2.0)).unwrap());
        v
    }

    #[test]
    fn printed_values() {
        assert_eq!(spec(KullbackLeibler).conjugate_value(0.0), 0.0);
        assert_eq!(spec(ModifiedChiSquared).conjugate_value(-3.0), -1.0);
        assert_eq!(spec(VariationDistance).conjugate_value(-2.0), -1.0);
        assert_eq!(spec(CVaRIndicator).conjugate_value(2.0), 2.0);
        assert_eq!(spec(CVaRIndicator).conjugate_value(-2.0), 0.0);
        assert_eq!(spec(BurgEntropy).conjugate_value(1.0), f64::INFINITY);
        assert_eq!(spec(BurgEntropy).conjugate_value(2.0), f64::INFINITY);
        assert_eq!(spec(VariationDistance).conjugate_value(1.0), 1.0);
        assert_eq!(spec(VariationDistance).conjugate_value(1.5), f64::INFINITY);
        assert!((spec(ModifiedChiSquared).conjugate_value(2.0) - 3.0).abs() < 1e-15);
        assert!((spec(Hellinger).conjugate_value(0.5) - 1.0).abs() < 1e-15);
        assert!((spec(ChiSquared).conjugate_value(0.75) - 1.0).abs() < 1e-15);
        // theta = 2: s + 3 (|s|/2)^2
        assert!((spec(ChiDivergence).conjugate_value(-2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn subgradient_examples() {
        assert_eq!(spec(KullbackLeibler).conjugate_subgradient(0.0).unwrap(), 1.0);
        assert_eq!(spec(CVaRIndicator).conjugate_subgradient(0.0).unwrap(), 0.0);
        assert!((spec(Hellinger).conjugate_subgradient(0.5).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(spec(VariationDistance).conjugate_subgradient(-1.0).unwrap(), 0.0);
        assert_eq!(spec(ModifiedChiSquared).conjugate_subgradient(-2.0).unwrap(), 0.0);
        assert!(matches!(
            spec(BurgEntropy).conjugate_subgradient(1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn kink_selection_matches_left_difference() {
        let h = 1e-7;
        for (sp, k) in [(spec(CVaRIndicator), 0.0), (spec(VariationDistance), -1.0)] {
            let left = (sp.conjugate_value(k) - sp.conjugate_value(k - h)) / h;
            assert!((sp.conjugate_subgradient(k).unwrap() - left).abs() < 1e-6);
        }
    }

    #[test]
    fn domains() {
        let d = spec(BurgEntropy).domain();
        assert_eq!((d.upper, d.closed), (1.0, false));
        assert_eq!(spec(KullbackLeibler).domain().upper, f64::INFINITY);
        let d = spec(CressieRead).domain();
        assert_eq!((d.upper, d.closed), (2.0, false));
        assert!(spec(VariationDistance).domain().closed);
        let cr2 = DivergenceSpec::new(CressieRead, Some(2.0)).unwrap();
        assert_eq!(cr2.domain().upper, f64::INFINITY);
    }

    #[test]
    fn theta_validation() {
        assert!(DivergenceSpec::new(CressieRead, Some(1.0)).is_err());
        assert!(DivergenceSpec::new(CressieRead, Some(0.0)).is_err());
        assert!(DivergenceSpec::new(CressieRead, None).is_err());
        assert!(DivergenceSpec::new(ChiDivergence, Some(1.0)).is_err());
        assert!(DivergenceSpec::new(ChiDivergence, Some(f64::NAN)).is_err());
        assert_eq!(DivergenceSpec::new(KullbackLeibler, Some(3.0)).unwrap().theta(), None);
    }

    #[test]
    fn names_round_trip() {
        for k in DivergenceKind::ALL {
            assert_eq!(k.name().parse::<DivergenceKind>().unwrap(), k);
            let js = serde_json::to_string(&k).unwrap();
            assert_eq!(js, format!("\"{}\"", k.name()));
        }
        let sp: DivergenceSpec =
            serde_json::from_str(r#"{"kind":"cressie_read","theta":0.5}"#).unwrap();
        assert_eq!(sp.domain().upper, 2.0);
        assert!(serde_json::from_str::<DivergenceSpec>(r#"{"kind":"chi_div","theta":0.5}"#).is_err());
    }

    // Points strictly inside the domain, spread over a range that matters
    // for the solvers.
    fn interior_points(sp: &DivergenceSpec, n: usize, seed: u64) -> Vec<f64> {
        use rand_chacha::rand_core::{RngCore, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let upper = sp.domain().upper.min(4.0);
        let lower = -4.0;
        let mut out = Vec::new();
        while out.len() < n {
            let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
            let s = lower + u * (upper - lower);
            let margin = 0.05;
            if s < upper - margin && sp.kinks().iter().all(|k| (s - k).abs() > 2e-5) {
                out.push(s);
            }
        }
        out
    }

    #[test]
    fn convexity_on_random_triples() {
        for sp in all_specs() {
            let mut pts = interior_points(&sp, 300, 7);
            pts.sort_by(f64::total_cmp);
            for w in pts.windows(3) {
                let (s1, s2, s3) = (w[0], w[1], w[2]);
                if s3 - s1 < 1e-9 {
                    continue;
                }
                let lam = (s3 - s2) / (s3 - s1);
                let rhs = lam * sp.conjugate_value(s1) + (1.0 - lam) * sp.conjugate_value(s3);
                let lhs = sp.conjugate_value(s2);
                assert!(lhs <= rhs + 1e-10 * (1.0 + rhs.abs()), "{sp}: {s1} {s2} {s3}");
            }
        }
    }

    #[test]
    fn subgradient_monotone() {
        for sp in all_specs() {
            let mut pts = interior_points(&sp, 300, 11);
            pts.sort_by(f64::total_cmp);
            for w in pts.windows(2) {
                let a = sp.conjugate_subgradient(w[0]).unwrap();
                let b = sp.conjugate_subgradient(w[1]).unwrap();
                assert!(a <= b + 1e-10, "{sp}: {} {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn finite_difference_agreement() {
        let h = 1e-5;
        for sp in all_specs() {
            for s in interior_points(&sp, 100, 3) {
                if s + h >= sp.domain().upper {
                    continue;
                }
                let fd = (sp.conjugate_value(s + h) - sp.conjugate_value(s - h)) / (2.0 * h);
                let g = sp.conjugate_subgradient(s).unwrap();
                assert!((g - fd).abs() <= 1e-4, "{sp} at {s}: {g} vs {fd}");
            }
        }
    }
}
