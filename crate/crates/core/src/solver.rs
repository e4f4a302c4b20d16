//! Penalized fitting: annealed warm-start descent, then proximal gradient refinement.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{self, Dataset, NetworkShape, Task, Theta};
use crate::objective::{self, PenaltySpec};
use crate::qut::QutResult;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Step of the subgradient descent stages.
    pub lr_descent: f64,
    /// Full-batch epochs per annealing stage.
    pub descent_epochs: usize,
    pub prox_max_iter: usize,
    /// Relative objective change that ends the proximal refinement.
    pub prox_tol: f64,
    /// Half-width of the uniform draw for `W_1` and the biases.
    pub init_scale: f64,
    pub seed: u64,
    /// Anneal the penalty up to its target; when false, run a single stage at the target.
    pub warm_start: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lr_descent: 1e-3,
            descent_epochs: 1500,
            prox_max_iter: 2000,
            prox_tol: 1e-8,
            init_scale: 1.0,
            seed: 0,
            warm_start: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_descent > 0.0 && self.lr_descent.is_finite()) {
            return Err(Error::Config(format!("lr_descent must be > 0, got {}", self.lr_descent)));
        }
        if !(self.prox_tol > 0.0) {
            return Err(Error::Config(format!("prox_tol must be > 0, got {}", self.prox_tol)));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config(format!("init_scale must be >= 0, got {}", self.init_scale)));
        }
        Ok(())
    }
}

/// Summary of one annealing stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub lambda: f64,
    /// Penalized objective at the end of the stage.
    pub objective: f64,
    pub support_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub task: Task,
    pub shape: NetworkShape,
    pub theta: Theta,
    pub lambda: f64,
    /// Selected input columns. 0-based in memory, 1-based in JSON.
    #[serde(with = "one_based")]
    pub support: Vec<usize>,
    pub feature_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_labels: Option<Vec<String>>,
    pub objective: f64,
    pub stages: Vec<StageTrace>,
    pub prox_iterations: usize,
    /// Whether the proximal refinement met `prox_tol` before its iteration cap.
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qut: Option<QutResult>,
}

impl FitResult {
    pub fn support_names(&self) -> Vec<&str> {
        self.support.iter().map(|&j| self.feature_names[j].as_str()).collect()
    }
}

mod one_based {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[usize], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|j| j + 1).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<usize>, D::Error> {
        let raw = Vec::<usize>::deserialize(d)?;
        raw.into_iter()
            .map(|j| j.checked_sub(1).ok_or_else(|| serde::de::Error::custom("support indices are 1-based")))
            .collect()
    }
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Increasing penalties `sigmoid(k) lambda` for `k = -1, .., 4`, then `lambda` itself.
pub fn lambda_schedule(lambda: f64) -> Vec<f64> {
    (-1..=4).map(|k| sigmoid(f64::from(k)) * lambda).chain(std::iter::once(lambda)).collect()
}

/// Random start: uniform `W_1` and biases, Gaussian unit-norm deeper rows, and the
/// constant-fit intercept.
pub fn init_theta<R: Rng + ?Sized>(shape: &NetworkShape, data: &Dataset, init_scale: f64, g: &mut R) -> Result<Theta> {
    if !(init_scale >= 0.0 && init_scale.is_finite()) {
        return Err(Error::Config(format!("init_scale must be >= 0, got {init_scale}")));
    }
    let mut theta = Theta::zeros(shape);
    if init_scale > 0.0 {
        let u = Uniform::new(-init_scale, init_scale).map_err(|e| Error::Config(e.to_string()))?;
        theta.w1.mapv_inplace(|_| u.sample(g));
        for b in &mut theta.biases {
            b.mapv_inplace(|_| u.sample(g));
        }
    }
    for w in &mut theta.deep {
        w.mapv_inplace(|_| StandardNormal.sample(g));
    }
    redraw_and_normalize(&mut theta, g);
    theta.c = objective::null_intercept(shape.link(), data.y.view())?;
    Ok(theta)
}

/// Normalize deeper rows, redrawing any row whose norm has collapsed.
fn redraw_and_normalize<R: Rng + ?Sized>(theta: &mut Theta, g: &mut R) {
    for w in &mut theta.deep {
        for mut row in w.outer_iter_mut() {
            let mut norm = row.dot(&row).sqrt();
            while !(norm >= 1e-12 && norm.is_finite()) {
                row.mapv_inplace(|_| StandardNormal.sample(g));
                norm = row.dot(&row).sqrt();
            }
            row /= norm;
        }
    }
}

/// Indices of input columns with at least one nonzero first-layer weight.
pub fn support_of(theta: &Theta) -> Vec<usize> {
    theta
        .w1
        .axis_iter(Axis(1))
        .enumerate()
        .filter(|(_, col)| col.iter().any(|&v| v != 0.0))
        .map(|(j, _)| j)
        .collect()
}

/// Fit at penalty `lambda`.
pub fn fit(data: &Dataset, shape: &NetworkShape, lambda: f64, config: &SolverConfig) -> Result<FitResult> {
    config.validate()?;
    PenaltySpec::new(lambda)?;
    if data.p() != shape.input_dim() || data.m() != shape.output_dim() {
        return Err(Error::Shape(format!(
            "data has {} inputs and {} outputs, network has {} and {}",
            data.p(),
            data.m(),
            shape.input_dim(),
            shape.output_dim()
        )));
    }
    if data.task == Task::Classification && !shape.link().is_probabilistic() {
        return Err(Error::Config("classification needs a Softmax or multiclass-Logit link".into()));
    }
    let mut g = rng::stream(config.seed, 0);
    let mut theta = init_theta(shape, data, config.init_scale, &mut g)?;
    let mut redraw = rng::stream(config.seed, 1);

    let schedule = if config.warm_start { lambda_schedule(lambda) } else { vec![lambda] };
    let mut stages = Vec::with_capacity(schedule.len());
    for (s, &lam) in schedule.iter().enumerate() {
        let label = format!("descent stage {} (lambda = {lam:e})", s + 1);
        descend(data, shape, &mut theta, lam, config, &mut redraw, &label)?;
        let objective = objective::objective_value(shape, &theta, data, PenaltySpec { lambda: lam })
            .map_err(|_| Error::Divergence { stage: label.clone() })?;
        if !objective.is_finite() {
            return Err(Error::Divergence { stage: label });
        }
        stages.push(StageTrace { lambda: lam, objective, support_size: support_of(&theta).len() });
    }

    let (objective, prox_iterations, converged) = refine(data, shape, &mut theta, lambda, config, &mut redraw)?;
    Ok(FitResult {
        task: data.task,
        shape: shape.clone(),
        support: support_of(&theta),
        theta,
        lambda,
        feature_names: data.feature_names.clone(),
        class_labels: data.class_labels.clone(),
        objective,
        stages,
        prox_iterations,
        converged,
        qut: None,
    })
}

/// Full-batch subgradient descent on `L + lambda |theta_1|_1`, with `sign(0) = 0`.
fn descend<R: Rng + ?Sized>(
    data: &Dataset,
    shape: &NetworkShape,
    theta: &mut Theta,
    lambda: f64,
    config: &SolverConfig,
    g: &mut R,
    label: &str,
) -> Result<()> {
    let loss = data.task.loss_kind();
    let diverged = || Error::Divergence { stage: label.to_string() };
    for _ in 0..config.descent_epochs {
        let (value, mut grad) = network::loss_and_gradient(shape, theta, data, loss).map_err(|e| match e {
            Error::Domain(_) => diverged(),
            other => other,
        })?;
        if !value.is_finite() {
            return Err(diverged());
        }
        grad.w1.zip_mut_with(&theta.w1, |gv, &w| *gv += lambda * sign0(w));
        for (gb, b) in grad.biases.iter_mut().zip(&theta.biases) {
            gb.zip_mut_with(b, |gv, &w| *gv += lambda * sign0(w));
        }
        theta.axpy(-config.lr_descent, &grad);
        if !theta.is_finite() {
            return Err(diverged());
        }
        redraw_and_normalize(theta, g);
    }
    Ok(())
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Proximal gradient with backtracking. Returns the final objective, the number of
/// iterations and whether the tolerance was met.
fn refine<R: Rng + ?Sized>(
    data: &Dataset,
    shape: &NetworkShape,
    theta: &mut Theta,
    lambda: f64,
    config: &SolverConfig,
    g: &mut R,
) -> Result<(f64, usize, bool)> {
    let loss = data.task.loss_kind();
    let label = format!("proximal refinement (lambda = {lambda:e})");
    let diverged = || Error::Divergence { stage: label.clone() };
    let (mut f, mut grad) = network::loss_and_gradient(shape, theta, data, loss)?;
    let mut obj = f + lambda * objective::penalty_l1(theta);
    if !obj.is_finite() {
        return Err(diverged());
    }
    let mut step = 1.0;
    for it in 0..config.prox_max_iter {
        let (candidate, f_new) = loop {
            let mut cand = theta.clone();
            cand.axpy(-step, &grad);
            objective::prox_l1_in_place(&mut cand, step, lambda)?;
            let mut diff = cand.clone();
            diff.axpy(-1.0, theta);
            let bound = f + grad.dot(&diff) + diff.dot(&diff) / (2.0 * step);
            let trial = network::forward_cached(shape, &cand, data.x.view())
                .and_then(|cache| objective::loss_value(loss, data.y.view(), cache.output.view()));
            if let Ok(v) = trial {
                if v.is_finite() && v <= bound {
                    break (cand, v);
                }
            }
            step *= 0.5;
            if step < 1e-30 {
                // no descent direction left at machine precision
                return Ok((obj, it, true));
            }
        };
        *theta = candidate;
        redraw_and_normalize(theta, g);
        let obj_new = f_new + lambda * objective::penalty_l1(theta);
        if !obj_new.is_finite() {
            return Err(diverged());
        }
        let change = (obj - obj_new).abs();
        obj = obj_new;
        if change <= config.prox_tol * obj.abs().max(f64::MIN_POSITIVE) {
            return Ok((obj, it + 1, true));
        }
        (f, grad) = network::loss_and_gradient(shape, theta, data, loss)?;
    }
    Ok((obj, config.prox_max_iter, false))
}

/// Network output for new inputs.
pub fn predict(fit: &FitResult, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    network::forward(&fit.shape, &fit.theta, x)
}

/// Most probable class per row; ties go to the smallest index.
pub fn predict_class(fit: &FitResult, x: ArrayView2<f64>) -> Result<Array1<usize>> {
    let probs = predict(fit, x)?;
    Ok(probs
        .outer_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect())
}
