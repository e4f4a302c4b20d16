//! Simulation generators, support-recovery metrics and seeded sweeps.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationSpec;
use crate::error::{Error, Result};
use crate::network::{Dataset, NetworkShape, Task, Theta};
use crate::qut::{self, QutConfig};
use crate::rng;
use crate::solver::{self, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimKind {
    /// `Y = X beta + noise` with `s` equal coefficients.
    Linear,
    /// `Y = sum_i amp |x_{2i} - x_{2i-1}| + noise` over `h = s/2` pairs.
    Absdiff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub kind: SimKind,
    pub n: usize,
    pub p1: usize,
    /// Sparsity levels swept by [`run_sweep`].
    pub s_grid: Vec<usize>,
    pub noise_sd: f64,
    /// Linear coefficient value, or the amplitude of each absolute difference.
    pub coef: f64,
    pub repetitions: usize,
    pub seed: u64,
    /// Fresh inputs used to estimate the prediction error.
    pub test_n: usize,
}

impl SimConfig {
    pub fn linear() -> Self {
        Self {
            kind: SimKind::Linear,
            n: 100,
            p1: 200,
            s_grid: vec![0, 1],
            noise_sd: 1.0,
            coef: 3.0,
            repetitions: 20,
            seed: 0,
            test_n: 10_000,
        }
    }

    pub fn absdiff() -> Self {
        Self { kind: SimKind::Absdiff, n: 500, p1: 50, s_grid: vec![0, 2], coef: 10.0, ..Self::linear() }
    }

    pub fn for_kind(kind: SimKind) -> Self {
        match kind {
            SimKind::Linear => Self::linear(),
            SimKind::Absdiff => Self::absdiff(),
        }
    }

    fn check_s(&self, s: usize) -> Result<()> {
        if s > self.p1 {
            return Err(Error::Config(format!("s = {s} exceeds p1 = {}", self.p1)));
        }
        if self.kind == SimKind::Absdiff && s % 2 == 1 {
            return Err(Error::Config(format!("absolute-difference pairs need an even s, got {s}")));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p1 == 0 {
            return Err(Error::Config(format!("need n >= 2 and p1 >= 1, got n = {}, p1 = {}", self.n, self.p1)));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) || !self.coef.is_finite() {
            return Err(Error::Config("noise_sd must be >= 0 and coef finite".into()));
        }
        if self.s_grid.is_empty() || self.repetitions == 0 {
            return Err(Error::Config("s_grid and repetitions must be nonempty".into()));
        }
        self.s_grid.iter().try_for_each(|&s| self.check_s(s))
    }
}

/// One simulated training set with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub data: Dataset,
    /// True support, 0-based and ascending.
    pub support: Vec<usize>,
    /// Noiseless association at the training inputs.
    pub mu: Array1<f64>,
}

fn gaussian<R: Rng + ?Sized>(n: usize, p: usize, g: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((n, p), |_| StandardNormal.sample(g))
}

fn add_noise<R: Rng + ?Sized>(mu: &Array1<f64>, sd: f64, g: &mut R) -> Array2<f64> {
    let y = mu.mapv(|m| {
        let e: f64 = StandardNormal.sample(g);
        m + sd * e
    });
    y.insert_axis(ndarray::Axis(1))
}

/// True association of the given simulation kind.
pub fn true_mu(kind: SimKind, coef: f64, support: &[usize], x: ArrayView2<f64>) -> Array1<f64> {
    match kind {
        SimKind::Linear => x.outer_iter().map(|row| coef * support.iter().map(|&j| row[j]).sum::<f64>()).collect(),
        SimKind::Absdiff => x
            .outer_iter()
            .map(|row| support.chunks(2).map(|pair| coef * (row[pair[1]] - row[pair[0]]).abs()).sum())
            .collect(),
    }
}

/// Gaussian inputs, support on the first `s` entries of a seeded column permutation.
pub fn gen_linear<R: Rng + ?Sized>(config: &SimConfig, s: usize, g: &mut R) -> Result<Simulated> {
    if config.kind != SimKind::Linear {
        return Err(Error::Config("gen_linear needs kind = linear".into()));
    }
    config.check_s(s)?;
    let x = gaussian(config.n, config.p1, g);
    let mut cols: Vec<usize> = (0..config.p1).collect();
    cols.shuffle(g);
    let mut support = cols[..s].to_vec();
    support.sort_unstable();
    let mu = true_mu(SimKind::Linear, config.coef, &support, x.view());
    let y = add_noise(&mu, config.noise_sd, g);
    Ok(Simulated { data: Dataset::new(x, y, Task::Regression)?, support, mu })
}

/// Gaussian inputs with `h = s/2` informative pairs in the leading columns.
pub fn gen_absdiff<R: Rng + ?Sized>(config: &SimConfig, s: usize, g: &mut R) -> Result<Simulated> {
    if config.kind != SimKind::Absdiff {
        return Err(Error::Config("gen_absdiff needs kind = absdiff".into()));
    }
    config.check_s(s)?;
    let x = gaussian(config.n, config.p1, g);
    let support: Vec<usize> = (0..s).collect();
    let mu = true_mu(SimKind::Absdiff, config.coef, &support, x.view());
    let y = add_noise(&mu, config.noise_sd, g);
    Ok(Simulated { data: Dataset::new(x, y, Task::Regression)?, support, mu })
}

pub fn generate<R: Rng + ?Sized>(config: &SimConfig, s: usize, g: &mut R) -> Result<Simulated> {
    match config.kind {
        SimKind::Linear => gen_linear(config, s, g),
        SimKind::Absdiff => gen_absdiff(config, s, g),
    }
}

/// Two-layer network computing `sum_i 10 |x_{2i} - x_{2i-1}|` with ReLU-limit units.
///
/// Hidden unit `i` sees `+(x_{2i} - x_{2i-1})` and unit `h + i` sees the negated
/// difference; the output weights are 10 on those `2h` units. The output row is
/// used through its unit-norm version, so the first layer is scaled by the output
/// row norm and the intercept absorbs the shifted activations.
pub fn exact_absdiff_network(h: usize, shape: &NetworkShape) -> Result<Theta> {
    let w = shape.widths();
    if shape.n_layers() != 2 || shape.output_dim() != 1 {
        return Err(Error::Shape("absolute-difference construction needs a two-layer scalar network".into()));
    }
    if w[1] < 2 * h {
        return Err(Error::Capacity(format!("need p2 >= {} hidden units, got {}", 2 * h, w[1])));
    }
    if w[0] < 2 * h {
        return Err(Error::Shape(format!("need p1 >= {} inputs, got {}", 2 * h, w[0])));
    }
    let act = shape.activations()[0];
    if act.power != 1.0 {
        return Err(Error::Config(format!("construction needs activation power k = 1, got {}", act.power)));
    }
    let mut theta = Theta::zeros(shape);
    if h == 0 {
        // any unit row; the hidden layer outputs sigma(0) = 0
        theta.deep[0][[0, 0]] = 1.0;
        return Ok(theta);
    }
    let amp = 10.0;
    let kappa = amp * ((2 * h) as f64).sqrt();
    for i in 0..h {
        for (unit, sign) in [(i, 1.0), (h + i, -1.0)] {
            theta.w1[[unit, 2 * i + 1]] = sign * kappa;
            theta.w1[[unit, 2 * i]] = -sign * kappa;
            theta.biases[0][unit] = -act.shift;
            theta.deep[0][[0, unit]] = amp;
        }
    }
    // each unit contributes (amp / kappa) (kappa |d|_+ - u0)
    theta.c[0] = (2 * h) as f64 * amp * act.shift / kappa;
    Ok(theta)
}

/// Single hidden ReLU-limit neuron reproducing `beta0 + x^T beta` on the convex hull of `x`.
pub fn linear_relu_network(beta0: f64, beta: ArrayView1<f64>, x: ArrayView2<f64>) -> Result<(NetworkShape, Theta)> {
    let p = beta.len();
    if x.ncols() != p || x.nrows() == 0 {
        return Err(Error::Shape(format!("inputs must be nonempty with {p} columns")));
    }
    let shape = NetworkShape::new(vec![p, 1, 1], crate::network::Link::Identity, ActivationSpec::relu())?;
    let mut theta = Theta::zeros(&shape);
    theta.w1.row_mut(0).assign(&beta);
    let b = -x.dot(&beta).iter().copied().fold(f64::INFINITY, f64::min);
    theta.biases[0][0] = b;
    theta.deep[0][[0, 0]] = 1.0;
    theta.c[0] = beta0 - b;
    Ok((shape, theta))
}

/// Support-recovery scores for one fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `None` when the true support is empty.
    pub tpr: Option<f64>,
    pub fdr: f64,
    pub exact: bool,
    /// Root mean squared error against the true association, when available.
    pub pe: Option<f64>,
}

pub fn metrics(truth: &[usize], selected: &[usize], mu: Option<(ArrayView1<f64>, ArrayView1<f64>)>) -> Metrics {
    let hits = selected.iter().filter(|j| truth.contains(j)).count();
    let false_hits = selected.len() - hits;
    let tpr = (!truth.is_empty()).then(|| hits as f64 / truth.len() as f64);
    let fdr = false_hits as f64 / selected.len().max(1) as f64;
    let mut a = truth.to_vec();
    let mut b = selected.to_vec();
    a.sort_unstable();
    a.dedup();
    b.sort_unstable();
    b.dedup();
    let pe = mu.map(|(truth_mu, fitted)| {
        let n = truth_mu.len().max(1) as f64;
        ((&truth_mu - &fitted).mapv(|d| d * d).sum() / n).sqrt()
    });
    Metrics { tpr, fdr, exact: a == b, pe }
}

/// Outcome of one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub s: usize,
    pub rep: usize,
    pub seed: u64,
    /// 1-based.
    pub truth: Vec<usize>,
    /// 1-based; empty for failed repetitions.
    pub selected: Vec<usize>,
    pub lambda_qut: Option<f64>,
    pub metrics: Option<Metrics>,
    /// Error message of a numerically failed repetition.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub s: usize,
    pub repetitions: usize,
    pub failed: usize,
    /// Means over the repetitions that completed.
    pub pesr: f64,
    pub mean_tpr: Option<f64>,
    pub mean_fdr: f64,
    pub mean_pe: Option<f64>,
    /// Fraction of completed repetitions with a nonempty selected support.
    pub nonempty_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub sim: SimConfig,
    pub shape: NetworkShape,
    pub qut: QutConfig,
    pub solver: SolverConfig,
    pub records: Vec<RepRecord>,
    pub summary: Vec<Aggregate>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    s: usize,
    rep: usize,
    seed: u64,
    truth: String,
    selected: String,
    lambda_qut: Option<f64>,
    tpr: Option<f64>,
    fdr: Option<f64>,
    exact: Option<bool>,
    pe: Option<f64>,
    failure: Option<&'a str>,
}

fn join(v: &[usize]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

impl SimReport {
    pub fn aggregate(&self, s: usize) -> Option<&Aggregate> {
        self.summary.iter().find(|a| a.s == s)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    /// One row per repetition; supports are space-separated 1-based indices.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(CsvRow {
                s: r.s,
                rep: r.rep,
                seed: r.seed,
                truth: join(&r.truth),
                selected: join(&r.selected),
                lambda_qut: r.lambda_qut,
                tpr: r.metrics.and_then(|m| m.tpr),
                fdr: r.metrics.map(|m| m.fdr),
                exact: r.metrics.map(|m| m.exact),
                pe: r.metrics.and_then(|m| m.pe),
                failure: r.failure.as_deref(),
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

fn is_numerical(e: &Error) -> bool {
    matches!(e, Error::Divergence { .. } | Error::NonDifferentiable(_) | Error::DegenerateParameter { .. })
}

/// Seed of repetition `rep` at sparsity `s`.
pub fn repetition_seed(master: u64, s: usize, rep: usize) -> u64 {
    rng::derive_seed(rng::derive_seed(master, s as u64), rep as u64)
}

fn run_one(
    sim: &SimConfig,
    shape: &NetworkShape,
    qut_cfg: &QutConfig,
    solver_cfg: &SolverConfig,
    s: usize,
    rep: usize,
) -> Result<RepRecord> {
    let seed = repetition_seed(sim.seed, s, rep);
    let simulated = generate(sim, s, &mut rng::stream(seed, 0))?;
    let truth: Vec<usize> = simulated.support.iter().map(|j| j + 1).collect();
    let mut record =
        RepRecord { s, rep, seed, truth, selected: vec![], lambda_qut: None, metrics: None, failure: None };

    let qcfg = QutConfig { seed: rng::derive_seed(seed, 1), ..*qut_cfg };
    let q = match qut::compute_qut(&simulated.data, shape, &qcfg) {
        Ok(q) => q,
        Err(e) if is_numerical(&e) => {
            record.failure = Some(e.to_string());
            return Ok(record);
        }
        Err(e) => return Err(e),
    };
    record.lambda_qut = Some(q.lambda_qut);
    let scfg = SolverConfig { seed: rng::derive_seed(seed, 2), ..*solver_cfg };
    let fit = match solver::fit(&simulated.data, shape, q.lambda_qut, &scfg) {
        Ok(f) => f,
        Err(e) if is_numerical(&e) => {
            record.failure = Some(e.to_string());
            return Ok(record);
        }
        Err(e) => return Err(e),
    };
    record.selected = fit.support.iter().map(|j| j + 1).collect();

    let pe_pair = match sim.kind {
        SimKind::Linear => None,
        SimKind::Absdiff => {
            let x_test = gaussian(sim.test_n, sim.p1, &mut rng::stream(seed, 3));
            let mu = true_mu(sim.kind, sim.coef, &simulated.support, x_test.view());
            let fitted = solver::predict(&fit, x_test.view())?.column(0).to_owned();
            Some((mu, fitted))
        }
    };
    record.metrics =
        Some(metrics(&simulated.support, &fit.support, pe_pair.as_ref().map(|(a, b)| (a.view(), b.view()))));
    Ok(record)
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = v.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    (count > 0).then(|| sum / count as f64)
}

fn summarize(s: usize, records: &[RepRecord]) -> Aggregate {
    let rows: Vec<&RepRecord> = records.iter().filter(|r| r.s == s).collect();
    let done: Vec<Metrics> = rows.iter().filter_map(|r| r.metrics).collect();
    let nonempty = rows.iter().filter(|r| r.metrics.is_some() && !r.selected.is_empty()).count();
    Aggregate {
        s,
        repetitions: rows.len(),
        failed: rows.len() - done.len(),
        pesr: mean(done.iter().map(|m| f64::from(u8::from(m.exact)))).unwrap_or(0.0),
        mean_tpr: mean(done.iter().filter_map(|m| m.tpr)),
        mean_fdr: mean(done.iter().map(|m| m.fdr)).unwrap_or(0.0),
        mean_pe: mean(done.iter().filter_map(|m| m.pe)),
        nonempty_rate: if done.is_empty() { 0.0 } else { nonempty as f64 / done.len() as f64 },
    }
}

/// Generate, threshold, fit and score every `(s, repetition)` pair.
///
/// Each repetition draws from its own seed, so the report is identical for any
/// thread count.
pub fn run_sweep(sim: &SimConfig, shape: &NetworkShape, qut_cfg: &QutConfig, solver_cfg: &SolverConfig) -> Result<SimReport> {
    sim.validate()?;
    qut_cfg.validate()?;
    solver_cfg.validate()?;
    let shape = shape.with_input_dim(sim.p1)?;
    if shape.output_dim() != 1 {
        return Err(Error::Config("simulations are scalar regressions; output width must be 1".into()));
    }
    let jobs: Vec<(usize, usize)> =
        sim.s_grid.iter().flat_map(|&s| (0..sim.repetitions).map(move |r| (s, r))).collect();
    let records = jobs
        .par_iter()
        .map(|&(s, rep)| run_one(sim, &shape, qut_cfg, solver_cfg, s, rep))
        .collect::<Result<Vec<_>>>()?;
    let summary = sim.s_grid.iter().map(|&s| summarize(s, &records)).collect();
    Ok(SimReport {
        sim: sim.clone(),
        shape,
        qut: *qut_cfg,
        solver: *solver_cfg,
        records,
        summary,
    })
}
