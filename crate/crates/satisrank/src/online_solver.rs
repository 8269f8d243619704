//! Online primal-dual subgradient recursion, one observation per step.
//!
//! The state carries the η box `E` and a constraint scale `s`: the dual
//! term is `λ·G/s`, the η step is multiplied by `s²`. With `s = 1` the
//! recursion is the plain one. [`OnlineState::warm_start`] builds the state
//! from the SAA solution on a warm-up window; that start is used by
//! [`run_warm`] and by the CLI.

use serde::{Deserialize, Serialize};

use crate::batch_solver::bisect_prepared;
use crate::divergence::DivergenceSpec;
use crate::error::{arg_err, Result};
use crate::risk_core::{PreparedBatch, RegretScaling};

pub const WARMUP: usize = 50;
pub const DOMAIN_SENTINEL: f64 = 1e12;
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineState {
    pub alpha: f64,
    pub eta: f64,
    pub lambda: f64,
    pub r: f64,
    pub t: u64,
    pub tau: f64,
    pub spec: DivergenceSpec,
    pub scaling: RegretScaling,
    pub eta_bracket: (f64, f64),
    pub constraint_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subgradient {
    pub g_alpha: f64,
    pub g_eta: f64,
    pub g_lambda: f64,
}

impl OnlineState {
    /// A state at `t = 0`, `R = 0` with unit constraint scale.
    pub fn new(
        alpha: f64,
        eta: f64,
        lambda: f64,
        tau: f64,
        spec: DivergenceSpec,
        scaling: RegretScaling,
        eta_bracket: (f64, f64),
    ) -> Result<Self> {
        let st = OnlineState {
            alpha,
            eta,
            lambda,
            r: 0.0,
            t: 0,
            tau,
            spec,
            scaling,
            eta_bracket,
            constraint_scale: 1.0,
        };
        st.validate()?;
        Ok(st)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scaling.alpha_range();
        if !(self.alpha >= lo && self.alpha <= hi) {
            return arg_err(format!("alpha {} outside [{lo}, {hi}]", self.alpha));
        }
        if !(self.lambda <= 0.0) {
            return arg_err(format!("lambda must be <= 0, got {}", self.lambda));
        }
        let (a, b) = self.eta_bracket;
        if !(a <= b) || !(self.eta >= a && self.eta <= b) {
            return arg_err(format!("eta {} outside the bracket [{a}, {b}]", self.eta));
        }
        if !(self.constraint_scale > 0.0) || !self.tau.is_finite() || !self.r.is_finite() {
            return arg_err("constraint scale, tau and r must be finite, scale positive");
        }
        Ok(())
    }

    /// Initial state from the SAA solution on a warm-up window.
    ///
    /// α and η come from the batch solve, λ from stationarity in α, the η
    /// box from the sample-range rule, the constraint scale from the window's
    /// standard deviation. The step counter starts at the window length and
    /// `R` at the window's batch index readout.
    pub fn warm_start(
        window: &[f64],
        tau: f64,
        spec: DivergenceSpec,
        scaling: RegretScaling,
        epsilon: f64,
    ) -> Result<Self> {
        if window.is_empty() {
            return arg_err("warm-up window is empty");
        }
        let pb = PreparedBatch::from_shifted(window.iter().map(|d| d - tau).collect());
        let (bracket, _) = pb.bracket(&spec);
        let sol = bisect_prepared("warmup", &pb, &spec, scaling, epsilon, 0.0)?;
        let alpha = sol.alpha_star;
        let eta = if sol.eta_star.is_finite() {
            sol.eta_star.clamp(bracket.0, bracket.1)
        } else {
            0.5 * (bracket.0 + bracket.1)
        };
        let n = window.len() as f64;
        let mean = window.iter().sum::<f64>() / n;
        let sd = (window.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n).sqrt();
        let scale = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
        let e_phi = pb.mean_conjugate(&spec, eta);
        let denom = scaling.factor_derivative(alpha) * e_phi;
        let lambda = if denom.is_finite() && denom.abs() > 1e-12 {
            (-objective_slope(scaling) / denom * scale).min(0.0)
        } else {
            0.0
        };
        let st = OnlineState {
            alpha,
            eta,
            lambda: if lambda.is_finite() { lambda } else { 0.0 },
            r: objective_value(scaling, alpha),
            t: window.len() as u64,
            tau,
            spec,
            scaling,
            eta_bracket: bracket,
            constraint_scale: scale,
        };
        st.validate()?;
        Ok(st)
    }

    /// Index readout from `R`.
    pub fn index_from_r(&self) -> f64 {
        readout(self.scaling, self.r)
    }

    /// Alternative readout from the current α.
    pub fn index_from_alpha(&self) -> f64 {
        1.0 - self.alpha
    }
}

/// Primal objective: `1 − α` for `1/α`; for `1/(1−α)` the index is one minus
/// the largest feasible α, so the objective is α itself.
fn objective_value(scaling: RegretScaling, alpha: f64) -> f64 {
    if scaling.feasible_above() {
        1.0 - alpha
    } else {
        alpha
    }
}

fn objective_slope(scaling: RegretScaling) -> f64 {
    if scaling.feasible_above() {
        -1.0
    } else {
        1.0
    }
}

fn readout(scaling: RegretScaling, r: f64) -> f64 {
    let v = if scaling.feasible_above() { r } else { 1.0 - r };
    v.clamp(0.0, 1.0)
}

fn cap(v: f64) -> f64 {
    v.min(DOMAIN_SENTINEL)
}

/// Realized Lagrangian at one observation.
pub fn lagrangian_realization(state: &OnlineState, d: f64) -> f64 {
    let s = d - state.tau - state.eta;
    let phi = cap(state.spec.conjugate_value(s));
    let g = state.eta + state.scaling.factor(state.alpha) * phi;
    let base = objective_value(state.scaling, state.alpha);
    if state.lambda == 0.0 {
        base
    } else {
        base + state.lambda * g / state.constraint_scale
    }
}

pub fn subgradient(state: &OnlineState, d: f64) -> Subgradient {
    let st = state;
    let s = d - st.tau - st.eta;
    let f = st.scaling.factor(st.alpha);
    let k = st.constraint_scale;
    match st.spec.conjugate_subgradient(s) {
        Ok(dphi) => {
            // Huge values (e.g. e^s far above target) are capped like a domain
            // violation, which keeps λ and R finite.
            let (phi, dphi) = (cap(st.spec.conjugate_value(s)), cap(dphi));
            Subgradient {
                g_alpha: objective_slope(st.scaling)
                    + st.lambda * st.scaling.factor_derivative(st.alpha) * phi / k,
                g_eta: st.lambda * (1.0 - f * dphi) / k,
                g_lambda: (st.eta + f * phi) / k,
            }
        }
        // Outside the domain: s is too large, so η must grow.
        Err(_) => Subgradient {
            g_alpha: objective_slope(st.scaling),
            g_eta: 1.0,
            g_lambda: (st.eta + f * DOMAIN_SENTINEL) / k,
        },
    }
}

/// Step size used for the transition from `t` to `t + 1`.
pub fn step_size(t: u64) -> f64 {
    1.0 / (t as f64 + 1.0)
}

/// One update. Gradients and realization use the state before the update.
pub fn step(state: &OnlineState, d: f64) -> OnlineState {
    let g = subgradient(state, d);
    let l = lagrangian_realization(state, d);
    let a = step_size(state.t);
    let (alo, ahi) = state.scaling.alpha_range();
    let (elo, ehi) = state.eta_bracket;
    let k = state.constraint_scale;
    let eta_step = if state.spec.conjugate_subgradient(d - state.tau - state.eta).is_ok() {
        a * k * k * g.g_eta
    } else {
        // Domain push: move by a unit (in data units) step toward the domain.
        a * k * g.g_eta
    };
    let mut next = state.clone();
    next.alpha = (state.alpha + a * g.g_alpha).clamp(alo, ahi);
    next.eta = (state.eta + eta_step).clamp(elo, ehi);
    next.lambda = (state.lambda - a * g.g_lambda).min(0.0);
    next.r = state.r - a * (state.r - l);
    next.t = state.t + 1;
    next
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineResult {
    pub final_state: OnlineState,
    /// `(t, R_t)` pairs.
    pub r_history: Vec<(u64, f64)>,
    pub index_estimate: f64,
    pub alpha_readout: f64,
    /// Set when the stream ended before the requested number of steps.
    pub exhausted_at: Option<u64>,
}

/// Which steps to record.
#[derive(Debug, Clone, PartialEq)]
pub enum History {
    /// Every `⌈iters/1000⌉` steps.
    Decimated,
    /// Exactly these `t` values.
    At(Vec<u64>),
    None,
}

impl History {
    fn wants(&self, t: u64, every: u64) -> bool {
        match self {
            History::Decimated => t.is_multiple_of(every),
            History::At(v) => v.binary_search(&t).is_ok(),
            History::None => false,
        }
    }
}

/// Applies `iters` steps from `init`.
pub fn run<I>(stream: I, iters: u64, init: OnlineState, history: &History) -> Result<OnlineResult>
where
    I: IntoIterator<Item = f64>,
{
    if iters == 0 {
        return arg_err("iters must be at least 1");
    }
    init.validate()?;
    let every = iters.div_ceil(1000).max(1);
    let history = match history {
        History::At(v) => {
            let mut v = v.clone();
            v.sort_unstable();
            History::At(v)
        }
        h => h.clone(),
    };
    let mut st = init;
    let mut hist = Vec::new();
    let mut it = stream.into_iter();
    let end = st.t + iters;
    let mut exhausted_at = None;
    let mut done = 0u64;
    while done < iters {
        let Some(d) = it.next() else {
            exhausted_at = Some(st.t);
            log::warn!("stream ended after {done} of {iters} steps");
            break;
        };
        st = step(&st, d);
        done += 1;
        if history.wants(st.t, every) || st.t == end {
            hist.push((st.t, st.r));
        }
    }
    hist.dedup_by_key(|p| p.0);
    Ok(OnlineResult {
        index_estimate: st.index_from_r(),
        alpha_readout: st.index_from_alpha(),
        final_state: st,
        r_history: hist,
        exhausted_at,
    })
}

/// Warm-started run: the first `WARMUP` observations (or fewer, if `iters`
/// is smaller) initialize the state; the remaining steps run the recursion.
/// For `t` inside the window the recorded value is the SAA readout on the
/// first `t` observations.
pub fn run_warm<I>(
    stream: I,
    iters: u64,
    tau: f64,
    spec: DivergenceSpec,
    scaling: RegretScaling,
    epsilon: f64,
    history: &History,
) -> Result<OnlineResult>
where
    I: IntoIterator<Item = f64>,
{
    if iters == 0 {
        return arg_err("iters must be at least 1");
    }
    let mut it = stream.into_iter();
    let w = (WARMUP as u64).min(iters) as usize;
    let window: Vec<f64> = it.by_ref().take(w).collect();
    if window.is_empty() {
        return arg_err("stream is empty");
    }
    let every = iters.div_ceil(1000).max(1);
    let mut prefix_hist = Vec::new();
    for t in 1..=window.len() as u64 {
        let record = match history {
            History::Decimated => t % every == 0 || t == iters,
            History::At(v) => v.contains(&t) || t == iters,
            History::None => t == iters,
        };
        if record {
            let st = OnlineState::warm_start(&window[..t as usize], tau, spec, scaling, epsilon)?;
            prefix_hist.push((t, st.r));
        }
    }
    let init = OnlineState::warm_start(&window, tau, spec, scaling, epsilon)?;
    let remaining = iters - window.len() as u64;
    if remaining == 0 || window.len() < w {
        return Ok(OnlineResult {
            index_estimate: init.index_from_r(),
            alpha_readout: init.index_from_alpha(),
            exhausted_at: (window.len() < w).then_some(window.len() as u64),
            final_state: init,
            r_history: prefix_hist,
        });
    }
    let mut res = run(it, remaining, init, history)?;
    prefix_hist.append(&mut res.r_history);
    res.r_history = prefix_hist;
    Ok(res)
}

/// Least-squares slope of log mean-squared gap against log t.
///
/// `runs` holds one `(t, R_t)` history per run; points are matched by t.
/// Returns `-inf` if every gap is zero.
pub fn convergence_diagnostic(runs: &[Vec<(u64, f64)>], r_star: f64) -> Result<f64> {
    let pts = mean_squared_gaps(runs, r_star)?;
    if pts.len() < 10 {
        return arg_err(format!("need at least 10 history points, got {}", pts.len()));
    }
    let usable: Vec<(f64, f64)> = pts
        .iter()
        .filter(|p| p.1 > 0.0)
        .map(|&(t, m)| ((t as f64).ln(), m.ln()))
        .collect();
    if usable.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    if usable.len() < 2 {
        return arg_err("too few nonzero gaps for a slope");
    }
    let n = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = usable.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Ok(sxy / sxx)
}

/// Mean over runs of `(R_t − R*)²` at every t present in all runs.
pub fn mean_squared_gaps(runs: &[Vec<(u64, f64)>], r_star: f64) -> Result<Vec<(u64, f64)>> {
    if runs.is_empty() {
        return arg_err("no runs given");
    }
    let mut out = Vec::new();
    for &(t, _) in &runs[0] {
        let mut sum = 0.0;
        let mut all = true;
        for run in runs {
            match run.binary_search_by_key(&t, |p| p.0) {
                Ok(i) => sum += (run[i].1 - r_star).powi(2),
                Err(_) => {
                    all = false;
                    break;
                }
            }
        }
        if all {
            out.push((t, sum / runs.len() as f64));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub item_id: String,
    pub state: OnlineState,
}

/// One JSON record per line.
pub fn write_checkpoint(items: &[(String, OnlineState)]) -> Result<String> {
    let mut out = String::new();
    for (id, st) in items {
        let c = Checkpoint { version: CHECKPOINT_VERSION, item_id: id.clone(), state: st.clone() };
        out.push_str(&serde_json::to_string(&c)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_checkpoint(text: &str) -> Result<Vec<(String, OnlineState)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let c: Checkpoint = serde_json::from_str(line).map_err(|e| crate::Error::Parse {
            line: i as u64 + 1,
            msg: e.to_string(),
        })?;
        if c.version != CHECKPOINT_VERSION {
            return Err(crate::Error::Parse {
                line: i as u64 + 1,
                msg: format!("unsupported checkpoint version {}", c.version),
            });
        }
        c.state.validate()?;
        out.push((c.item_id, c.state));
    }
    Ok(out)
}
