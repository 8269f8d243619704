//! Browser bindings for the demo page in `www/`.
//!
//! Each export takes plain numbers and strings and returns a JSON string, so
//! the page needs no glue beyond `JSON.parse`. The `*_json` functions carry
//! the logic and are tested natively.

use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

use satisrank::batch_solver::{rank_batch_with, satisficing_binary_search, SolverOptions};
use satisrank::data_io::{read_batches, DistributionSpec};
use satisrank::online_solver::{run_warm, History};
use satisrank::ranking::inversion_loss;
use satisrank::{DivergenceKind, DivergenceSpec, Error, ItemBatch, RegretScaling};

const EPSILON: f64 = 1e-4;

fn spec(risk: &str, theta: f64) -> Result<DivergenceSpec, Error> {
    let kind: DivergenceKind = risk.parse()?;
    // NaN from the page means "no parameter".
    let theta = (!theta.is_nan()).then_some(theta);
    DivergenceSpec::new(kind, theta.filter(|_| kind.needs_theta()))
}

#[derive(Serialize)]
struct CurvePoint {
    tau: f64,
    index: f64,
}

/// Index as the target sweeps `[tau_lo, tau_hi]`, on one fixed sample.
pub fn index_curve_json(
    dist: &str,
    n: usize,
    risk: &str,
    theta: f64,
    scaling: &str,
    tau_lo: f64,
    tau_hi: f64,
    points: usize,
) -> Result<String, Error> {
    let spec = spec(risk, theta)?;
    let scaling: RegretScaling = scaling.parse()?;
    let d: DistributionSpec = dist.parse()?;
    if n == 0 || points < 2 || !(tau_hi > tau_lo) {
        return Err(Error::Argument("need n ≥ 1, points ≥ 2 and tau_hi > tau_lo".into()));
    }
    let samples = d.sampler()?.take_vec(n);
    let curve = (0..points)
        .map(|k| {
            let tau = tau_lo + (tau_hi - tau_lo) * k as f64 / (points - 1) as f64;
            let b = ItemBatch::new("x", samples.clone(), tau)?;
            let s = satisficing_binary_search(&b, &spec, scaling, EPSILON)?;
            Ok(CurvePoint { tau, index: s.index })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    Ok(serde_json::to_string(&json!({ "spec": spec, "curve": curve }))?)
}

/// Online index trace next to the batch index on the same observations.
pub fn online_trace_json(
    dist: &str,
    tau: f64,
    risk: &str,
    theta: f64,
    scaling: &str,
    iters: u64,
) -> Result<String, Error> {
    let spec = spec(risk, theta)?;
    let scaling: RegretScaling = scaling.parse()?;
    let d: DistributionSpec = dist.parse()?;
    if iters == 0 || iters > 1_000_000 {
        return Err(Error::Argument("iters must be in 1..=1000000".into()));
    }
    let obs = d.sampler()?.take_vec(iters as usize);
    let res = run_warm(obs.iter().copied(), iters, tau, spec, scaling, EPSILON, &History::Decimated)?;
    let trace: Vec<(u64, f64)> = res
        .r_history
        .iter()
        .map(|&(t, r)| (t, if scaling.feasible_above() { r } else { 1.0 - r }.clamp(0.0, 1.0)))
        .collect();
    let batch = satisficing_binary_search(&ItemBatch::new("x", obs, tau)?, &spec, scaling, EPSILON)?;
    Ok(serde_json::to_string(&json!({
        "trace": trace,
        "online_index": res.index_estimate,
        "batch_index": batch.index,
    }))?)
}

/// Ranks the items in a batch CSV (`item_id,target,value`). With a
/// non-empty `reference` CSV of `item_id,index` lines, also reports the
/// inversion loss against it.
pub fn rank_csv_json(
    csv: &str,
    reference: &str,
    risk: &str,
    theta: f64,
    scaling: &str,
) -> Result<String, Error> {
    let spec = spec(risk, theta)?;
    let scaling: RegretScaling = scaling.parse()?;
    let items = read_batches(csv.as_bytes())?;
    let (report, _) = rank_batch_with(&items, &spec, scaling, &SolverOptions::default())?;
    let mut out = json!({ "ranking": report });
    let truth = parse_reference(reference)?;
    if !truth.is_empty() {
        out["inversion_loss"] = json!(inversion_loss(&report.scores(), &truth)?);
    }
    Ok(serde_json::to_string(&out)?)
}

fn parse_reference(text: &str) -> Result<Vec<(String, f64)>, Error> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with("item_id"))
        .map(|(i, l)| {
            let bad = |msg: &str| Error::Parse { line: i as u64 + 1, msg: msg.into() };
            let (id, v) = l.split_once(',').ok_or_else(|| bad("expected item_id,index"))?;
            let v: f64 = v.trim().parse().map_err(|_| bad("index is not a number"))?;
            Ok((id.trim().to_string(), v))
        })
        .collect()
}

fn to_js(r: Result<String, Error>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
}

#[allow(clippy::too_many_arguments)]
#[wasm_bindgen]
pub fn index_curve(
    dist: &str,
    n: usize,
    risk: &str,
    theta: f64,
    scaling: &str,
    tau_lo: f64,
    tau_hi: f64,
    points: usize,
) -> Result<String, JsValue> {
    to_js(index_curve_json(dist, n, risk, theta, scaling, tau_lo, tau_hi, points))
}

#[wasm_bindgen]
pub fn online_trace(
    dist: &str,
    tau: f64,
    risk: &str,
    theta: f64,
    scaling: &str,
    iters: u64,
) -> Result<String, JsValue> {
    to_js(online_trace_json(dist, tau, risk, theta, scaling, iters))
}

#[wasm_bindgen]
pub fn rank_csv(
    csv: &str,
    reference: &str,
    risk: &str,
    theta: f64,
    scaling: &str,
) -> Result<String, JsValue> {
    to_js(rank_csv_json(csv, reference, risk, theta, scaling))
}
