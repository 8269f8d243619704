//! Batch CSV and stream files, and seeded synthetic data.
//!
//! The generator core is ChaCha8 seeded from a 64-bit integer; normal
//! deviates use the Box-Muller transform on 53-bit uniforms, so a seed gives
//! the same draws on every platform.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::risk_core::ItemBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Normal,
    Uniform,
    LogNormal,
    Empirical,
}

/// A seeded source of i.i.d. draws. For `Normal` the parameters are mean and
/// standard deviation, for `Uniform` the bounds, for `LogNormal` μ and σ of
/// the underlying normal. `Empirical` resamples `values` with replacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub family: Family,
    pub param1: f64,
    pub param2: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f64>,
}

impl DistributionSpec {
    pub fn normal(mean: f64, sd: f64, seed: u64) -> Result<Self> {
        Self::parametric(Family::Normal, mean, sd, seed)
    }

    pub fn uniform(lo: f64, hi: f64, seed: u64) -> Result<Self> {
        Self::parametric(Family::Uniform, lo, hi, seed)
    }

    pub fn lognormal(mu: f64, sigma: f64, seed: u64) -> Result<Self> {
        Self::parametric(Family::LogNormal, mu, sigma, seed)
    }

    pub fn empirical(values: Vec<f64>, seed: u64) -> Result<Self> {
        let s = DistributionSpec { family: Family::Empirical, param1: 0.0, param2: 0.0, seed, values };
        s.validate()?;
        Ok(s)
    }

    fn parametric(family: Family, param1: f64, param2: f64, seed: u64) -> Result<Self> {
        let s = DistributionSpec { family, param1, param2, seed, values: Vec::new() };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.param1.is_finite() || !self.param2.is_finite() {
            return arg_err("distribution parameters must be finite");
        }
        match self.family {
            Family::Normal | Family::LogNormal if self.param2 <= 0.0 => {
                arg_err(format!("scale parameter must be positive, got {}", self.param2))
            }
            Family::Uniform if self.param1 >= self.param2 => {
                arg_err(format!("uniform needs lo < hi, got {} and {}", self.param1, self.param2))
            }
            Family::Empirical if self.values.is_empty() => arg_err("empirical source has no values"),
            Family::Empirical if self.values.iter().any(|v| !v.is_finite()) => {
                arg_err("empirical source has non-finite values")
            }
            _ => Ok(()),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        DistributionSpec { seed, ..self.clone() }
    }

    pub fn sampler(&self) -> Result<Sampler> {
        self.validate()?;
        Ok(Sampler { spec: self.clone(), rng: ChaCha8Rng::seed_from_u64(self.seed), spare: None })
    }
}

impl FromStr for DistributionSpec {
    type Err = Error;

    /// `normal:MEAN:SD:SEED`, `uniform:LO:HI:SEED`, `lognormal:MU:SIGMA:SEED`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 4 {
            return Err(Error::Config(format!("distribution '{s}' must be FAMILY:P1:P2:SEED")));
        }
        let num = |t: &str| -> Result<f64> {
            t.parse::<f64>().map_err(|_| Error::Config(format!("bad number '{t}' in '{s}'")))
        };
        let (p1, p2) = (num(parts[1])?, num(parts[2])?);
        let seed: u64 =
            parts[3].parse().map_err(|_| Error::Config(format!("bad seed '{}' in '{s}'", parts[3])))?;
        match parts[0] {
            "normal" => Self::normal(p1, p2, seed),
            "uniform" => Self::uniform(p1, p2, seed),
            "lognormal" => Self::lognormal(p1, p2, seed),
            other => Err(Error::Config(format!("unknown distribution family '{other}'"))),
        }
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fam = match self.family {
            Family::Normal => "normal",
            Family::Uniform => "uniform",
            Family::LogNormal => "lognormal",
            Family::Empirical => {
                return write!(f, "empirical[{}]:{}", self.values.len(), self.seed);
            }
        };
        write!(f, "{}:{}:{}:{}", fam, self.param1, self.param2, self.seed)
    }
}

/// Infinite iterator of draws from a [`DistributionSpec`].
#[derive(Debug, Clone)]
pub struct Sampler {
    spec: DistributionSpec,
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Sampler {
    /// Uniform on [0, 1) with 53 random bits.
    pub fn next_uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.next_uniform(); // (0, 1]
        let u2 = self.next_uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let th = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * th.sin());
        r * th.cos()
    }

    pub fn draw(&mut self) -> f64 {
        let (p1, p2) = (self.spec.param1, self.spec.param2);
        match self.spec.family {
            Family::Normal => p1 + p2 * self.next_standard_normal(),
            Family::Uniform => p1 + (p2 - p1) * self.next_uniform(),
            Family::LogNormal => (p1 + p2 * self.next_standard_normal()).exp(),
            Family::Empirical => {
                let n = self.spec.values.len();
                let i = ((self.next_uniform() * n as f64) as usize).min(n - 1);
                self.spec.values[i]
            }
        }
    }

    pub fn take_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.draw()).collect()
    }
}

impl Iterator for Sampler {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        Some(self.draw())
    }
}

pub fn generate_synthetic(spec: &DistributionSpec, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return arg_err("n must be at least 1");
    }
    Ok(spec.sampler()?.take_vec(n))
}

fn parse_num(field: &str, line: u64, what: &str) -> Result<f64> {
    let t = field.trim();
    if t.is_empty() {
        return Err(Error::Parse { line, msg: format!("empty {what}") });
    }
    let v: f64 =
        t.parse().map_err(|_| Error::Parse { line, msg: format!("non-numeric {what} '{t}'") })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, msg: format!("non-finite {what} '{t}'") });
    }
    Ok(v)
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Parse { line, msg: e.to_string() }
}

/// Reads `item_id,target,value` rows into batches in first-appearance order.
pub fn read_batches<R: Read>(reader: R) -> Result<Vec<ItemBatch>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let cols: Vec<&str> = headers.iter().map(str::trim).collect();
    if cols != ["item_id", "target", "value"] {
        if cols.is_empty() || cols == [""] {
            return arg_err("batch file is empty");
        }
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header item_id,target,value, got {}", cols.join(",")),
        });
    }
    let mut order: Vec<ItemBatch> = Vec::new();
    let mut pos: HashMap<String, usize> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 3 {
            return Err(Error::Parse { line, msg: format!("expected 3 fields, got {}", rec.len()) });
        }
        let id = rec[0].trim();
        if id.is_empty() {
            return Err(Error::Parse { line, msg: "empty item_id".into() });
        }
        let target = parse_num(&rec[1], line, "target")?;
        let value = parse_num(&rec[2], line, "value")?;
        match pos.get(id) {
            Some(&i) => {
                let b = &mut order[i];
                if b.target.to_bits() != target.to_bits() {
                    return Err(Error::Parse {
                        line,
                        msg: format!(
                            "item '{id}' changes target from {} to {target}",
                            b.target
                        ),
                    });
                }
                b.samples.push(value);
            }
            None => {
                pos.insert(id.to_string(), order.len());
                order.push(ItemBatch { item_id: id.to_string(), samples: vec![value], target });
            }
        }
    }
    if order.is_empty() {
        return arg_err("batch file has no data rows");
    }
    Ok(order)
}

pub fn load_batches(path: impl AsRef<Path>) -> Result<Vec<ItemBatch>> {
    read_batches(File::open(path)?)
}

/// Writes batches with shortest round-trip number formatting.
pub fn write_batches<W: Write>(mut w: W, items: &[ItemBatch]) -> Result<()> {
    writeln!(w, "item_id,target,value")?;
    for b in items {
        for v in &b.samples {
            writeln!(w, "{},{},{}", b.item_id, b.target, v)?;
        }
    }
    Ok(())
}

pub fn save_batches(path: impl AsRef<Path>, items: &[ItemBatch]) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    write_batches(&mut f, items)?;
    f.flush()?;
    Ok(())
}

/// Line-delimited `item_id,value` records. A leading `item_id,value`
/// header line is skipped; blank lines are ignored.
pub struct ObservationReader<R> {
    lines: std::io::Lines<R>,
    position: u64,
}

impl<R: BufRead> ObservationReader<R> {
    pub fn new(reader: R) -> Self {
        ObservationReader { lines: reader.lines(), position: 0 }
    }
}

impl<R: BufRead> Iterator for ObservationReader<R> {
    type Item = Result<(String, f64)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.position += 1;
            let t = line.trim();
            if t.is_empty() || (self.position == 1 && t == "item_id,value") {
                continue;
            }
            let position = self.position;
            let mut it = t.splitn(2, ',');
            let (id, val) = (it.next().unwrap_or("").trim(), it.next().map(str::trim));
            let rec = match val {
                None => Err(Error::Stream { position, msg: format!("missing value in '{t}'") }),
                Some(_) if id.is_empty() => {
                    Err(Error::Stream { position, msg: "empty item_id".into() })
                }
                Some(v) => match v.parse::<f64>() {
                    Ok(x) if x.is_finite() => Ok((id.to_string(), x)),
                    _ => Err(Error::Stream { position, msg: format!("bad value '{v}'") }),
                },
            };
            return Some(rec);
        }
    }
}

pub fn stream_observations(
    path: impl AsRef<Path>,
) -> Result<ObservationReader<BufReader<File>>> {
    Ok(ObservationReader::new(BufReader::new(File::open(path)?)))
}

/// Infinite labelled stream from a generator.
pub fn stream_generated(
    item_id: impl Into<String>,
    spec: &DistributionSpec,
) -> Result<impl Iterator<Item = Result<(String, f64)>>> {
    let id = item_id.into();
    Ok(spec.sampler()?.map(move |v| Ok((id.clone(), v))))
}
