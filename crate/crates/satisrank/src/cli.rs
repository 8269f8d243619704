//! Command-line front end: argument parsing, command execution, reports.
//!
//! Every command produces one JSON report that embeds the resolved
//! configuration. With `--out DIR` the report goes to `DIR/report.json` and
//! CSV traces are written next to it; otherwise the report is printed.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::batch_solver::{rank_batch_with, SolverOptions};
use crate::data_io::{load_batches, stream_observations, write_batches, DistributionSpec};
use crate::divergence::{DivergenceKind, DivergenceSpec};
use crate::error::{Error, Result};
use crate::online_solver::{run_warm, History, OnlineResult};
use crate::ranking::{loss_bound_probability, n_choose_2, rank_items};
use crate::risk_core::{ItemBatch, RegretScaling};
use crate::validation::{
    bound_item, ranking_validity_probability, required_sample_size, BoundParams, BoundsConfig,
    InnerMode, ResampleSource,
};

#[derive(Debug, Parser)]
#[command(name = "satisrank", version, about = "Satisficing risk indices and rankings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Divergence kind: kl, burg, chi2, mod_chi2, hellinger, chi_div, variation, cressie_read, cvar.
    #[arg(long, default_value = "cvar")]
    pub risk: String,
    /// Shape parameter for chi_div and cressie_read.
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long, value_enum, default_value_t = ScalingArg::InvAlpha)]
    pub scaling: ScalingArg,
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for report.json and CSV traces.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Test the constraint against τ instead of 0.
    #[arg(long)]
    pub threshold_tau: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingArg {
    InvAlpha,
    InvOneMinusAlpha,
}

impl From<ScalingArg> for RegretScaling {
    fn from(s: ScalingArg) -> Self {
        match s {
            ScalingArg::InvAlpha => RegretScaling::InverseAlpha,
            ScalingArg::InvOneMinusAlpha => RegretScaling::InverseOneMinusAlpha,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Synthetic {
    /// Generator, e.g. normal:100:50:42. Item i uses seed SEED + i.
    #[arg(long)]
    pub dist: Option<String>,
    /// Target of the first item.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Target increment between consecutive items.
    #[arg(long, default_value_t = 0.0)]
    pub tau_step: f64,
    #[arg(long, default_value_t = 1)]
    pub items: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// SAA index per item and the resulting ranking.
    Batch {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Online recursion per item on a stream file or a generator.
    Online {
        /// `item_id,value` lines.
        #[arg(long)]
        stream: Option<PathBuf>,
        #[command(flatten)]
        synthetic: Synthetic,
        #[arg(long, default_value_t = 10_000)]
        iters: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Confidence bounds on the index per item.
    Bounds {
        /// Batch CSV; resamples are bootstrapped.
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        synthetic: Synthetic,
        /// Sample size per item with --dist.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long, default_value_t = 0.05)]
        gamma: f64,
        #[arg(long, default_value_t = 10)]
        groups: usize,
        #[arg(long)]
        group_size: Option<usize>,
        #[arg(long, default_value_t = 10)]
        resample_factor: usize,
        /// Use the supremum over the η bracket in the bounds.
        #[arg(long)]
        literal_sup: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Sample size from a parameter file.
    Samplesize {
        #[arg(long)]
        params: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Ranking-quality probabilities.
    Rankprob {
        #[arg(long, value_enum)]
        mode: ProbMode,
        #[arg(long)]
        items: u64,
        #[arg(long)]
        e: Option<u64>,
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        iters: Option<u64>,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        n1: Option<u64>,
        #[arg(long)]
        n2: Option<u64>,
        /// Swap p and 1 − p in the binomial terms.
        #[arg(long)]
        literal_binomial: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Synthetic batch CSV.
    Simulate {
        #[command(flatten)]
        synthetic: Synthetic,
        #[arg(long)]
        n: usize,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbMode {
    /// P(inversion loss ≤ e) after a number of online steps.
    Inversion,
    /// Probability that the SAA ranking is correct for given sample sizes.
    Validity,
}

/// Resolved configuration embedded in every report.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: &'static str,
    pub divergence: Option<DivergenceSpec>,
    pub scaling: RegretScaling,
    pub epsilon: f64,
    pub seed: u64,
    pub output_path: Option<String>,
    pub params: BTreeMap<String, Value>,
}

/// Files produced by a command, written by a single writer at the end.
pub struct Output {
    pub report: Value,
    pub files: Vec<(String, String)>,
    /// Printed instead of the report when no output directory is given.
    pub stdout: Option<String>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Batch { .. } => "batch",
            Command::Online { .. } => "online",
            Command::Bounds { .. } => "bounds",
            Command::Samplesize { .. } => "samplesize",
            Command::Rankprob { .. } => "rankprob",
            Command::Simulate { .. } => "simulate",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Batch { common, .. }
            | Command::Online { common, .. }
            | Command::Bounds { common, .. }
            | Command::Samplesize { common, .. }
            | Command::Rankprob { common, .. }
            | Command::Simulate { common, .. } => common,
        }
    }
}

fn divergence(common: &Common) -> Result<DivergenceSpec> {
    let kind: DivergenceKind = common.risk.parse()?;
    DivergenceSpec::new(kind, common.theta)
}

fn base_config(cmd: &Command) -> RunConfig {
    let common = cmd.common();
    RunConfig {
        command: cmd.name(),
        divergence: divergence(common).ok(),
        scaling: common.scaling.into(),
        epsilon: common.epsilon,
        seed: common.seed,
        output_path: common.out.as_ref().map(|p| p.display().to_string()),
        params: BTreeMap::new(),
    }
}

fn param(cfg: &mut RunConfig, key: &str, v: impl Serialize) {
    cfg.params.insert(key.to_string(), serde_json::to_value(v).unwrap_or(Value::Null));
}

/// Items drawn from `--dist`; item i has id `item{i+1}`, seed SEED + i and
/// target τ + i·step.
fn synthetic_items(syn: &Synthetic) -> Result<Vec<(String, DistributionSpec, f64)>> {
    let dist: DistributionSpec = syn
        .dist
        .as_deref()
        .ok_or_else(|| Error::Config("--dist is required".into()))?
        .parse()?;
    let tau = syn.tau.ok_or_else(|| Error::Config("--tau is required with --dist".into()))?;
    if syn.items == 0 {
        return Err(Error::Config("--items must be at least 1".into()));
    }
    Ok((0..syn.items)
        .map(|i| {
            (
                format!("item{}", i + 1),
                dist.with_seed(dist.seed.wrapping_add(i)),
                tau + syn.tau_step * i as f64,
            )
        })
        .collect())
}

fn record_synthetic(cfg: &mut RunConfig, syn: &Synthetic) {
    param(cfg, "dist", &syn.dist);
    param(cfg, "tau", syn.tau);
    param(cfg, "tau_step", syn.tau_step);
    param(cfg, "items", syn.items);
}

fn validate_common(common: &Common) -> Result<()> {
    if !(common.epsilon > 0.0 && common.epsilon.is_finite()) {
        return Err(Error::Config(format!("epsilon must be positive, got {}", common.epsilon)));
    }
    Ok(())
}

/// Runs one command and returns its outputs without touching the filesystem
/// (apart from reading inputs).
pub fn execute(cmd: &Command) -> (RunConfig, Result<Output>) {
    let mut cfg = base_config(cmd);
    let res = validate_common(cmd.common()).and_then(|_| execute_inner(cmd, &mut cfg));
    (cfg, res)
}

fn execute_inner(cmd: &Command, cfg: &mut RunConfig) -> Result<Output> {
    let common = cmd.common();
    let scaling: RegretScaling = common.scaling.into();
    match cmd {
        Command::Batch { input, .. } => {
            param(cfg, "input", input.display().to_string());
            param(cfg, "threshold_tau", common.threshold_tau);
            let spec = divergence(common)?;
            let items = load_batches(input)?;
            let opts = SolverOptions { epsilon: common.epsilon, threshold_tau: common.threshold_tau };
            let (ranking, solutions) = rank_batch_with(&items, &spec, scaling, &opts)?;
            let csv = ranking.to_csv();
            Ok(Output {
                report: json!({ "ranking": ranking, "solutions": solutions }),
                files: vec![("ranking.csv".into(), csv)],
                stdout: None,
            })
        }
        Command::Online { stream, synthetic, iters, .. } => {
            param(cfg, "iters", iters);
            param(cfg, "stream", stream.as_ref().map(|p| p.display().to_string()));
            record_synthetic(cfg, synthetic);
            let spec = divergence(common)?;
            let runs: Vec<(String, f64, Vec<f64>)> = match stream {
                Some(path) => {
                    let tau = synthetic
                        .tau
                        .ok_or_else(|| Error::Config("--tau is required with --stream".into()))?;
                    let mut order: Vec<(String, f64, Vec<f64>)> = Vec::new();
                    for rec in stream_observations(path)? {
                        let (id, v) = rec?;
                        match order.iter_mut().find(|r| r.0 == id) {
                            Some(r) => r.2.push(v),
                            None => {
                                let t = tau + synthetic.tau_step * order.len() as f64;
                                order.push((id, t, vec![v]));
                            }
                        }
                    }
                    if order.is_empty() {
                        return Err(Error::Argument("stream file has no observations".into()));
                    }
                    order
                }
                None => synthetic_items(synthetic)?
                    .into_iter()
                    .map(|(id, d, tau)| {
                        d.sampler().map(|mut s| (id, tau, s.take_vec(*iters as usize)))
                    })
                    .collect::<Result<_>>()?,
            };
            let results: Vec<(String, f64, OnlineResult)> = runs
                .into_iter()
                .map(|(id, tau, obs)| {
                    run_warm(obs, *iters, tau, spec, scaling, common.epsilon, &History::Decimated)
                        .map(|r| (id, tau, r))
                })
                .collect::<Result<_>>()?;
            let scores: Vec<(String, f64)> =
                results.iter().map(|(id, _, r)| (id.clone(), r.index_estimate)).collect();
            let ranking = rank_items(&scores)?;
            let mut trace = String::from("item_id,t,r,index\n");
            for (id, _, r) in &results {
                for &(t, v) in &r.r_history {
                    let idx = if scaling.feasible_above() { v } else { 1.0 - v };
                    trace.push_str(&format!("{id},{t},{v},{}\n", idx.clamp(0.0, 1.0)));
                }
            }
            let items: Vec<Value> = results
                .iter()
                .map(|(id, tau, r)| json!({ "item_id": id, "target": tau, "result": r }))
                .collect();
            Ok(Output {
                report: json!({
                    "ranking": ranking,
                    "items": items,
                    "readout": "index_estimate from R_t; alpha_readout is 1 - alpha_t",
                }),
                files: vec![("trace.csv".into(), trace), ("ranking.csv".into(), ranking.to_csv())],
                stdout: None,
            })
        }
        Command::Bounds {
            input,
            synthetic,
            n,
            delta,
            gamma,
            groups,
            group_size,
            resample_factor,
            literal_sup,
            ..
        } => {
            param(cfg, "input", input.as_ref().map(|p| p.display().to_string()));
            record_synthetic(cfg, synthetic);
            param(cfg, "n", n);
            param(cfg, "delta", delta);
            param(cfg, "gamma", gamma);
            param(cfg, "groups", groups);
            param(cfg, "group_size", group_size);
            param(cfg, "resample_factor", resample_factor);
            param(cfg, "literal_sup", literal_sup);
            let spec = divergence(common)?;
            let mut bc = BoundsConfig::new(spec, scaling);
            bc.epsilon = common.epsilon;
            bc.delta = *delta;
            bc.gamma = *gamma;
            bc.groups = *groups;
            bc.group_size = *group_size;
            bc.resample_factor = *resample_factor;
            bc.inner_mode = if *literal_sup { InnerMode::SupOverBracket } else { InnerMode::Inf };
            let reports = match input {
                Some(path) => load_batches(path)?
                    .iter()
                    .enumerate()
                    .map(|(i, b)| {
                        let src =
                            ResampleSource::Bootstrap { seed: common.seed.wrapping_add(i as u64) };
                        bound_item(b, src, &bc)
                    })
                    .collect::<Result<Vec<_>>>()?,
                None => {
                    let n = n.ok_or_else(|| Error::Config("--n is required with --dist".into()))?;
                    synthetic_items(synthetic)?
                        .into_iter()
                        .map(|(id, d, tau)| {
                            let mut s = d.sampler()?;
                            let b = ItemBatch::new(id, s.take_vec(n), tau)?;
                            bound_item(&b, ResampleSource::Generator(s), &bc)
                        })
                        .collect::<Result<Vec<_>>>()?
                }
            };
            let mut csv = String::from("item_id,n,index,lb,ub,relative_gap\n");
            for r in &reports {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.item_id, r.sample_size, r.solution.index, r.lb, r.ub, r.relative_gap
                ));
            }
            Ok(Output {
                report: json!({ "items": reports }),
                files: vec![("bounds.csv".into(), csv)],
                stdout: None,
            })
        }
        Command::Samplesize { params, .. } => {
            param(cfg, "params", params.display().to_string());
            let p = BoundParams::from_toml(&fs::read_to_string(params)?)?;
            param(cfg, "bound_params", p);
            let r = required_sample_size(&p)?;
            Ok(Output { report: json!({ "sample_size": r }), files: vec![], stdout: None })
        }
        Command::Rankprob {
            mode, items, e, c, kappa, iters, params, n1, n2, literal_binomial, ..
        } => {
            param(cfg, "mode", mode);
            param(cfg, "items", items);
            let need = |name: &str| Error::Config(format!("--{name} is required for this mode"));
            match mode {
                ProbMode::Inversion => {
                    let (c, kappa, iters) = (
                        c.ok_or_else(|| need("c"))?,
                        kappa.ok_or_else(|| need("kappa"))?,
                        iters.ok_or_else(|| need("iters"))?,
                    );
                    param(cfg, "c", c);
                    param(cfg, "kappa", kappa);
                    param(cfg, "iters", iters);
                    param(cfg, "e", e);
                    param(cfg, "literal_binomial", literal_binomial);
                    let n = n_choose_2(*items);
                    let curve = (0..=n)
                        .map(|k| loss_bound_probability(*items, k, c, kappa, iters, *literal_binomial))
                        .collect::<Result<Vec<_>>>()?;
                    let mut report = json!({ "pairs": n, "cdf": curve });
                    if let Some(e) = e {
                        report["probability"] =
                            json!(loss_bound_probability(*items, *e, c, kappa, iters, *literal_binomial)?);
                    }
                    Ok(Output { report, files: vec![], stdout: None })
                }
                ProbMode::Validity => {
                    let path = params.as_ref().ok_or_else(|| need("params"))?;
                    let (n1, n2) = (n1.ok_or_else(|| need("n1"))?, n2.ok_or_else(|| need("n2"))?);
                    param(cfg, "params", path.display().to_string());
                    param(cfg, "n1", n1);
                    param(cfg, "n2", n2);
                    let p = BoundParams::from_toml(&fs::read_to_string(path)?)?;
                    param(cfg, "bound_params", p);
                    let prob = ranking_validity_probability(n1, n2, *items, &p)?;
                    Ok(Output { report: json!({ "probability": prob }), files: vec![], stdout: None })
                }
            }
        }
        Command::Simulate { synthetic, n, .. } => {
            record_synthetic(cfg, synthetic);
            param(cfg, "n", n);
            if *n == 0 {
                return Err(Error::Config("--n must be at least 1".into()));
            }
            let items = synthetic_items(synthetic)?
                .into_iter()
                .map(|(id, d, tau)| ItemBatch::new(id, d.sampler()?.take_vec(*n), tau))
                .collect::<Result<Vec<_>>>()?;
            let mut buf = Vec::new();
            write_batches(&mut buf, &items)?;
            let csv = String::from_utf8(buf).expect("ascii output");
            let summary: Vec<Value> = items
                .iter()
                .map(|b| json!({ "item_id": b.item_id, "target": b.target, "rows": b.len() }))
                .collect();
            Ok(Output {
                report: json!({ "items": summary, "rows": n * items.len() }),
                files: vec![("samples.csv".into(), csv.clone())],
                stdout: Some(csv),
            })
        }
    }
}

/// Report document: resolved config plus the command result.
pub fn report_document(cfg: &RunConfig, result: Value) -> Value {
    json!({ "config": cfg, "result": result })
}

pub fn error_document(cfg: &RunConfig, err: &Error) -> Value {
    json!({
        "error": {
            "command": cfg.command,
            "kind": err.kind(),
            "message": err.to_string(),
            "config": cfg,
        }
    })
}

fn write_outputs(dir: &Path, doc: &Value, files: &[(String, String)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut text = serde_json::to_string_pretty(doc)?;
    text.push('\n');
    fs::write(dir.join("report.json"), text)?;
    for (name, content) in files {
        fs::write(dir.join(name), content)?;
    }
    Ok(())
}

/// Parses arguments, runs, writes outputs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let (cfg, res) = execute(&cli.command);
    let out_dir = cli.command.common().out.clone();
    let written = res.and_then(|out| {
        let doc = report_document(&cfg, out.report);
        match out_dir {
            Some(dir) => write_outputs(&dir, &doc, &out.files),
            None => {
                let text = match out.stdout {
                    Some(s) => s,
                    None => serde_json::to_string_pretty(&doc)? + "\n",
                };
                let mut stdout = std::io::stdout().lock();
                match stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
                    // A closed pipe (e.g. `| head`) is not an error.
                    Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                    r => r.map_err(Error::from),
                }
            }
        }
    });
    match written {
        Ok(()) => 0,
        Err(e) => {
            log::debug!("command failed: {e:?}");
            eprintln!("{}", error_document(&cfg, &e));
            1
        }
    }
}
