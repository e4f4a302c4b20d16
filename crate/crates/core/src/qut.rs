//! Zero-thresholding values and the quantile universal threshold.
//!
//! `lambda_0(Y, X)` is the smallest penalty for which `theta_1 = 0` (with the
//! intercept at its constant-fit minimizer) is a local minimum whatever the
//! deeper weights. Under the constant-association null it becomes a random
//! variable; its upper `alpha` quantile is the selected penalty.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{self, Dataset, Link, NetworkShape, Task, Theta};
use crate::objective;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QutConfig {
    pub alpha: f64,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for QutConfig {
    fn default() -> Self {
        Self { alpha: 0.05, mc_samples: 1000, seed: 0 }
    }
}

impl QutConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.mc_samples < 100 {
            return Err(Error::Config(format!("mc_samples must be >= 100, got {}", self.mc_samples)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QutResult {
    pub lambda_qut: f64,
    /// Monte-Carlo draws of `lambda_0` under the null, ascending.
    pub lambda_samples: Vec<f64>,
    pub alpha: f64,
    pub mc_samples: usize,
    pub seed: u64,
    pub task: Task,
    /// Link of the network the threshold was computed for.
    pub link: Link,
}

fn require_smooth(shape: &NetworkShape) -> Result<()> {
    shape.activations().iter().try_for_each(|a| a.require_smooth())
}

fn check_inputs(y: ArrayView2<f64>, x: ArrayView2<f64>, shape: &NetworkShape) -> Result<()> {
    require_smooth(shape)?;
    if y.nrows() != x.nrows() {
        return Err(Error::Shape(format!("Y has {} rows, X has {}", y.nrows(), x.nrows())));
    }
    if x.ncols() != shape.input_dim() {
        return Err(Error::Shape(format!("X has {} columns, network expects {}", x.ncols(), shape.input_dim())));
    }
    if y.nrows() < 2 {
        return Err(Error::Data("need at least two observations".into()));
    }
    Ok(())
}

/// Closed form for the square-root loss:
/// `pi_l s'(0)^{l-1} |X^T Y.|_inf / |Y.|_2`.
pub fn lambda0_regression(y: ArrayView2<f64>, x: ArrayView2<f64>, shape: &NetworkShape) -> Result<f64> {
    check_inputs(y, x, shape)?;
    if y.ncols() != 1 {
        return Err(Error::Shape(format!("regression needs a single response column, got {}", y.ncols())));
    }
    let yc = objective::centered(y)?;
    let yc = yc.column(0);
    let norm = yc.dot(&yc).sqrt();
    if norm == 0.0 {
        return Err(Error::DegenerateResponse("constant response makes lambda_0 undefined".into()));
    }
    let score = x.t().dot(&yc).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(shape.depth_factor() * shape.slope_product_at_zero() * score / norm)
}

/// Closed form for cross-entropy with a Softmax link:
/// `pi_l s'(0)^{l-1} max_j sum_t |(X^T Y.)_{jt}|`.
pub fn lambda0_classification(y: ArrayView2<f64>, x: ArrayView2<f64>, shape: &NetworkShape) -> Result<f64> {
    check_inputs(y, x, shape)?;
    let yc = objective::centered(y)?;
    let a = x.t().dot(&yc);
    let score = a.outer_iter().map(|row| row.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    Ok(shape.depth_factor() * shape.slope_product_at_zero() * score)
}

pub fn lambda0(data: &Dataset, shape: &NetworkShape) -> Result<f64> {
    match data.task {
        Task::Regression => lambda0_regression(data.y.view(), data.x.view(), shape),
        Task::Classification => lambda0_classification(data.y.view(), data.x.view(), shape),
    }
}

/// Best point found by the numeric supremum search.
#[derive(Debug, Clone)]
pub struct OracleOutcome {
    /// `|g_0|_inf` at the best deeper weights; a lower bound on `lambda_0`.
    pub value: f64,
    /// `(0, W_2, .., W_l, c_hat)` at the best deeper weights.
    pub theta0: Theta,
    /// Full loss gradient at `theta0`.
    pub gradient: Theta,
}

/// Oracle ascent schedule.
const ORACLE_STEPS: usize = 100;
const ORACLE_STEP: f64 = 0.1;
const ORACLE_DECAY: f64 = 0.9;
/// Steps between decays.
const ORACLE_DECAY_EVERY: usize = 10;

/// Numerically maximize the sup-norm of the first-block gradient at the null over
/// unit-row deeper weights, by multi-start projected gradient ascent.
///
/// Each candidate is scored with the generic backward pass, so the returned value
/// never relies on the closed forms.
pub fn lambda0_oracle(data: &Dataset, shape: &NetworkShape, restarts: usize, seed: u64) -> Result<OracleOutcome> {
    check_inputs(data.y.view(), data.x.view(), shape)?;
    if restarts == 0 {
        return Err(Error::Config("oracle needs at least one restart".into()));
    }
    let loss = data.task.loss_kind();
    let c_hat = objective::null_intercept(shape.link(), data.y.view())?;
    if loss == objective::LossKind::SqrtL2 {
        let yc = objective::centered(data.y.view())?;
        if yc.iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateResponse("constant response makes lambda_0 undefined".into()));
        }
    }

    let mut theta = Theta::zeros(shape);
    theta.c = c_hat;
    let mut g = rng::stream(seed, 0);
    randomize_deep(&mut theta, &mut g);

    // dL/dlogits is the same for every choice of deeper weights because the output is constant
    let cache = network::forward_cached(shape, &theta, data.x.view())?;
    let (_, delta) = objective::loss_and_logit_grad(loss, shape.link(), data.y.view(), &cache)?;
    let a = data.x.t().dot(&delta); // p1 x m
    let slope = shape.slope_product_at_zero();

    let mut best: Option<OracleOutcome> = None;
    for r in 0..restarts {
        let mut g = rng::stream(seed, r as u64 + 1);
        randomize_deep(&mut theta, &mut g);
        let mut step = ORACLE_STEP;
        for k in 1..=ORACLE_STEPS {
            ascent_step(&mut theta.deep, a.view(), slope, step);
            if k % ORACLE_DECAY_EVERY == 0 {
                step *= ORACLE_DECAY;
            }
        }
        let grad = network::backward(shape, &theta, data, loss)?;
        let value = theta1_sup_norm(&grad);
        if best.as_ref().is_none_or(|b| value > b.value) {
            best = Some(OracleOutcome { value, theta0: theta.clone(), gradient: grad });
        }
    }
    Ok(best.expect("at least one restart"))
}

fn randomize_deep<R: Rng>(theta: &mut Theta, g: &mut R) {
    for w in &mut theta.deep {
        w.mapv_inplace(|_| StandardNormal.sample(g));
        normalize_rows_or_keep(w, None);
    }
}

/// Rescale rows to unit norm; a row that collapsed to zero is restored from `fallback`.
fn normalize_rows_or_keep(w: &mut Array2<f64>, fallback: Option<&Array2<f64>>) {
    for (r, mut row) in w.outer_iter_mut().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 && norm.is_finite() {
            row /= norm;
        } else if let Some(f) = fallback {
            row.assign(&f.row(r));
        } else {
            row.fill(0.0);
            row[0] = 1.0;
        }
    }
}

/// Largest absolute entry of the penalized block.
pub fn theta1_sup_norm(grad: &Theta) -> f64 {
    grad.w1
        .iter()
        .chain(grad.biases.iter().flat_map(|b| b.iter()))
        .fold(0.0f64, |m, v| m.max(v.abs()))
}

/// One projected ascent step on `|s a_j^T W_l .. W_2 e_i|` for the currently active `(i, j)`.
fn ascent_step(deep: &mut [Array2<f64>], a: ArrayView2<f64>, slope: f64, step: f64) {
    let depth = deep.len();
    // P = W_l .. W_2 (m x p2); the W_1 gradient is slope * P^T A^T
    let mut prod = deep[0].clone();
    for w in &deep[1..] {
        prod = w.dot(&prod);
    }
    let g1 = prod.t().dot(&a.t()) * slope; // p2 x p1
    let (mut bi, mut bj, mut bv) = (0, 0, 0.0f64);
    for ((i, j), &v) in g1.indexed_iter() {
        if v.abs() > bv.abs() {
            (bi, bj, bv) = (i, j, v);
        }
    }
    if bv == 0.0 {
        return;
    }
    let sign = bv.signum();
    let a_j: ArrayView1<f64> = a.row(bj);

    // right[k] = W_{k-1} .. W_2 e_i, the vector entering layer index k of `deep`
    let mut right: Vec<Array1<f64>> = Vec::with_capacity(depth);
    let mut e = Array1::zeros(deep[0].ncols());
    e[bi] = 1.0;
    right.push(e);
    for k in 0..depth - 1 {
        let next = deep[k].dot(&right[k]);
        right.push(next);
    }
    // left[k] = a_j^T W_l .. W_{k+1}, the row vector leaving layer index k
    let mut left: Vec<Array1<f64>> = vec![Array1::zeros(0); depth];
    left[depth - 1] = a_j.to_owned();
    for k in (0..depth - 1).rev() {
        left[k] = left[k + 1].dot(&deep[k + 1]);
    }
    // the target is linear in each row, so every row moves along its own unit ascent direction
    let updates: Vec<Array2<f64>> = (0..depth)
        .map(|k| {
            let l = left[k].view().insert_axis(Axis(1));
            let r = right[k].view().insert_axis(Axis(0));
            let mut u = l.dot(&r) * sign;
            for mut row in u.outer_iter_mut() {
                let norm = row.dot(&row).sqrt();
                if norm > 0.0 {
                    row /= norm;
                }
            }
            u
        })
        .collect();
    for (w, u) in deep.iter_mut().zip(updates) {
        let old = w.clone();
        w.scaled_add(step, &u);
        normalize_rows_or_keep(w, Some(&old));
    }
}

/// `n` i.i.d. standard normal responses. Location and scale are irrelevant
/// because the regression statistic is pivotal.
pub fn sample_null_regression<R: Rng + ?Sized>(n: usize, g: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((n, 1), |_| StandardNormal.sample(g))
}

/// `n` one-hot rows drawn i.i.d. from the categorical distribution `p_hat`.
pub fn sample_null_classification<R: Rng + ?Sized>(n: usize, p_hat: &[f64], g: &mut R) -> Result<Array2<f64>> {
    if p_hat.is_empty() || p_hat.iter().any(|&p| !(p >= -1e-8) || !p.is_finite()) {
        return Err(Error::Domain(format!("class probabilities must be nonnegative, got {p_hat:?}")));
    }
    let total: f64 = p_hat.iter().sum();
    if (total - 1.0).abs() > 1e-8 {
        return Err(Error::Domain(format!("class probabilities sum to {total}, not 1")));
    }
    let mut cumulative = Vec::with_capacity(p_hat.len());
    let mut acc = 0.0;
    for &p in p_hat {
        acc += p.max(0.0);
        cumulative.push(acc);
    }
    let m = p_hat.len();
    let mut y = Array2::zeros((n, m));
    for mut row in y.outer_iter_mut() {
        let u: f64 = g.random::<f64>() * acc;
        let class = cumulative.iter().position(|&c| u < c).unwrap_or_else(|| {
            // u landed on the top edge through rounding: take the last class with mass
            p_hat.iter().rposition(|&p| p > 0.0).unwrap_or(m - 1)
        });
        row[class] = 1.0;
    }
    Ok(y)
}

/// Order statistic `ceil((1 - alpha) M)` of an ascending sample.
pub fn upper_quantile(sorted: &[f64], alpha: f64) -> f64 {
    let m = sorted.len();
    let rank = (((1.0 - alpha) * m as f64) - 1e-9).ceil().clamp(1.0, m as f64) as usize;
    sorted[rank - 1]
}

/// Monte-Carlo quantile universal threshold for the inputs of `data`.
///
/// Sample `i` uses RNG stream `i` of `config.seed`, so the result does not depend
/// on how the evaluations are scheduled.
pub fn compute_qut(data: &Dataset, shape: &NetworkShape, config: &QutConfig) -> Result<QutResult> {
    config.validate()?;
    require_smooth(shape)?;
    if data.p() != shape.input_dim() || data.m() != shape.output_dim() {
        return Err(Error::Shape(format!(
            "data has {} inputs and {} outputs, network has {} and {}",
            data.p(),
            data.m(),
            shape.input_dim(),
            shape.output_dim()
        )));
    }
    let n = data.n();
    let x = data.x.view();
    let mut samples: Vec<f64> = match data.task {
        Task::Regression => (0..config.mc_samples)
            .into_par_iter()
            .map(|i| {
                let mut g = rng::stream(config.seed, i as u64);
                let y0 = sample_null_regression(n, &mut g);
                lambda0_regression(y0.view(), x, shape)
            })
            .collect::<Result<_>>()?,
        Task::Classification => {
            let p_hat = data
                .y
                .mean_axis(Axis(0))
                .ok_or_else(|| Error::Data("empty response matrix".into()))?
                .to_vec();
            (0..config.mc_samples)
                .into_par_iter()
                .map(|i| {
                    let mut g = rng::stream(config.seed, i as u64);
                    let y0 = sample_null_classification(n, &p_hat, &mut g)?;
                    lambda0_classification(y0.view(), x, shape)
                })
                .collect::<Result<_>>()?
        }
    };
    samples.sort_by(|a, b| a.total_cmp(b));
    Ok(QutResult {
        lambda_qut: upper_quantile(&samples, config.alpha),
        lambda_samples: samples,
        alpha: config.alpha,
        mc_samples: config.mc_samples,
        seed: config.seed,
        task: data.task,
        link: shape.link(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::ActivationSpec;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn unit_slope() -> ActivationSpec {
        // s'(0) = logistic(M u0) = 1 to machine precision
        ActivationSpec::new(60.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn regression_closed_form_examples() {
        let x = array![[1.0], [-1.0]];
        let y = array![[1.0], [-1.0]];
        let two = NetworkShape::new(vec![1, 3, 1], Link::Identity, unit_slope()).unwrap();
        assert_relative_eq!(lambda0_regression(y.view(), x.view(), &two).unwrap(), 2f64.sqrt(), epsilon = 1e-14);
        let three = NetworkShape::new(vec![1, 3, 4, 1], Link::Identity, unit_slope()).unwrap();
        assert_relative_eq!(
            lambda0_regression(y.view(), x.view(), &three).unwrap(),
            2.0 * 2f64.sqrt(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn regression_is_pivotal() {
        let mut g = rng::stream(11, 0);
        let x = Array2::from_shape_fn((12, 4), |_| StandardNormal.sample(&mut g));
        let y = sample_null_regression(12, &mut g);
        let shape = NetworkShape::new(vec![4, 5, 1], Link::Identity, ActivationSpec::DEFAULT).unwrap();
        let base = lambda0_regression(y.view(), x.view(), &shape).unwrap();
        let moved = y.mapv(|v| 3.7 * v - 2.0);
        let other = lambda0_regression(moved.view(), x.view(), &shape).unwrap();
        assert!((other - base).abs() <= 1e-12 * base);
    }

    #[test]
    fn constant_response_is_rejected() {
        let shape = NetworkShape::new(vec![1, 2, 1], Link::Identity, ActivationSpec::DEFAULT).unwrap();
        let err = lambda0_regression(array![[2.0], [2.0]].view(), array![[1.0], [0.0]].view(), &shape);
        assert!(matches!(err, Err(Error::DegenerateResponse(_))));
    }

    #[test]
    fn relu_limit_is_rejected() {
        let shape = NetworkShape::new(vec![1, 2, 1], Link::Identity, ActivationSpec::relu()).unwrap();
        assert!(lambda0_regression(array![[1.0], [2.0]].view(), array![[1.0], [0.0]].view(), &shape).is_err());
    }

    #[test]
    fn classification_closed_form_examples() {
        let x = array![[1.0], [-1.0]];
        let y = array![[1.0, 0.0], [0.0, 1.0]];
        let shape = NetworkShape::new(vec![1, 3, 2], Link::Softmax, unit_slope()).unwrap();
        assert_relative_eq!(lambda0_classification(y.view(), x.view(), &shape).unwrap(), 2.0, epsilon = 1e-14);

        let single = array![[1.0, 0.0], [1.0, 0.0]];
        assert_eq!(lambda0_classification(single.view(), x.view(), &shape).unwrap(), 0.0);

        let mut g = rng::stream(12, 0);
        let x = Array2::from_shape_fn((9, 3), |_| StandardNormal.sample(&mut g));
        let y = sample_null_classification(9, &[0.2, 0.5, 0.3], &mut g).unwrap();
        let shape = NetworkShape::new(vec![3, 2, 3], Link::Softmax, ActivationSpec::DEFAULT).unwrap();
        let base = lambda0_classification(y.view(), x.view(), &shape).unwrap();
        let permuted = ndarray::concatenate![Axis(1), y.slice(ndarray::s![.., 2..]), y.slice(ndarray::s![.., ..2])];
        let other = lambda0_classification(permuted.view(), x.view(), &shape).unwrap();
        assert_relative_eq!(base, other, max_relative = 1e-14);
    }

    /// Direct two-layer evaluation, written independently of the general formulas.
    #[test]
    fn two_layer_reduces_to_single_slope() {
        let mut g = rng::stream(13, 0);
        let act = ActivationSpec::new(5.0, 0.3, 1.0).unwrap();
        let shape = NetworkShape::new(vec![3, 7, 1], Link::Identity, act).unwrap();
        let x = Array2::from_shape_fn((8, 3), |_| StandardNormal.sample(&mut g));
        let y = sample_null_regression(8, &mut g);
        let ybar: f64 = y.iter().sum::<f64>() / 8.0;
        let mut best = 0.0f64;
        let mut ss = 0.0;
        for i in 0..8 {
            ss += (y[[i, 0]] - ybar).powi(2);
        }
        for j in 0..3 {
            let mut s = 0.0f64;
            for i in 0..8 {
                s += x[[i, j]] * (y[[i, 0]] - ybar);
            }
            best = best.max(s.abs());
        }
        let slope = 1.0 / (1.0 + (-5.0f64 * 0.3).exp());
        let expected = slope * best / ss.sqrt();
        assert_relative_eq!(lambda0_regression(y.view(), x.view(), &shape).unwrap(), expected, max_relative = 1e-13);
    }

    #[test]
    fn oracle_lower_bounds_and_approaches_closed_form() {
        let mut g = rng::stream(14, 0);
        let x = Array2::from_shape_fn((6, 3), |_| StandardNormal.sample(&mut g));
        let y = sample_null_regression(6, &mut g);
        let shape = NetworkShape::new(vec![3, 2, 1], Link::Identity, ActivationSpec::DEFAULT).unwrap();
        let data = Dataset::new(x, y, Task::Regression).unwrap();
        let closed = lambda0(&data, &shape).unwrap();
        let oracle = lambda0_oracle(&data, &shape, 50, 3).unwrap();
        assert!(oracle.value <= closed + 1e-8);
        assert!(oracle.value >= 0.99 * closed, "{} vs {}", oracle.value, closed);
        for b in &oracle.gradient.biases {
            assert!(b.iter().all(|v| v.abs() < 1e-12));
        }
        assert!(oracle.theta0.theta1_is_zero());
    }

    #[test]
    fn null_regression_sampler() {
        let a = sample_null_regression(20, &mut rng::stream(1, 2));
        let b = sample_null_regression(20, &mut rng::stream(1, 2));
        assert_eq!(a, b);
        let big = sample_null_regression(100_000, &mut rng::stream(2, 0));
        assert!(big.mean().unwrap().abs() < 0.02);
    }

    #[test]
    fn null_classification_sampler() {
        let y = sample_null_classification(50, &[1.0, 0.0], &mut rng::stream(1, 0)).unwrap();
        assert!(y.outer_iter().all(|r| r[0] == 1.0 && r[1] == 0.0));

        let y = sample_null_classification(10_000, &[0.5, 0.5], &mut rng::stream(2, 0)).unwrap();
        let ones = y.column(0).sum();
        assert!((ones - 5000.0).abs() <= 150.0, "{ones}");

        let p = [0.2, 0.3, 0.5];
        let y = sample_null_classification(100_000, &p, &mut rng::stream(3, 0)).unwrap();
        let means = y.mean_axis(Axis(0)).unwrap();
        for (m, q) in means.iter().zip(p) {
            assert!((m - q).abs() < 0.02);
        }
        assert!(sample_null_classification(5, &[0.5, 0.6], &mut rng::stream(0, 0)).is_err());
        assert!(sample_null_classification(5, &[1.2, -0.2], &mut rng::stream(0, 0)).is_err());
    }

    fn toy_regression(seed: u64, n: usize, p: usize) -> Dataset {
        let mut g = rng::stream(seed, 0);
        let x = Array2::from_shape_fn((n, p), |_| StandardNormal.sample(&mut g));
        let y = sample_null_regression(n, &mut g);
        Dataset::new(x, y, Task::Regression).unwrap()
    }

    #[test]
    fn qut_quantile_definition_and_determinism() {
        let data = toy_regression(21, 15, 4);
        let shape = NetworkShape::new(vec![4, 3, 1], Link::Identity, ActivationSpec::DEFAULT).unwrap();
        let cfg = QutConfig { alpha: 0.5, mc_samples: 200, seed: 9 };
        let r = compute_qut(&data, &shape, &cfg).unwrap();
        assert_eq!(r.lambda_qut, r.lambda_samples[99]);
        assert!(r.lambda_samples.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(r, compute_qut(&data, &shape, &cfg).unwrap());

        let cfg = QutConfig { alpha: 0.05, mc_samples: 1000, seed: 9 };
        let r = compute_qut(&data, &shape, &cfg).unwrap();
        assert_eq!(r.lambda_qut, r.lambda_samples[949]);
        assert!(r.lambda_qut > r.lambda_samples[499]);
    }

    #[test]
    fn qut_scales_with_inputs() {
        let data = toy_regression(22, 15, 4);
        let shape = NetworkShape::new(vec![4, 3, 1], Link::Identity, ActivationSpec::DEFAULT).unwrap();
        let cfg = QutConfig { alpha: 0.05, mc_samples: 300, seed: 5 };
        let base = compute_qut(&data, &shape, &cfg).unwrap();
        let doubled = Dataset::new(data.x.mapv(|v| 2.0 * v), data.y.clone(), Task::Regression).unwrap();
        let r = compute_qut(&doubled, &shape, &cfg).unwrap();
        for (a, b) in base.lambda_samples.iter().zip(&r.lambda_samples) {
            assert_relative_eq!(2.0 * a, *b, max_relative = 1e-13);
        }
        assert_relative_eq!(2.0 * base.lambda_qut, r.lambda_qut, max_relative = 1e-13);
    }

    #[test]
    fn qut_config_validation() {
        assert!(QutConfig { alpha: 0.0, ..Default::default() }.validate().is_err());
        assert!(QutConfig { alpha: 1.0, ..Default::default() }.validate().is_err());
        assert!(QutConfig { mc_samples: 99, ..Default::default() }.validate().is_err());
        assert!(QutConfig::default().validate().is_ok());
    }

    #[test]
    fn upper_quantile_rank() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(upper_quantile(&v, 0.05), 950.0);
        assert_eq!(upper_quantile(&v, 0.5), 500.0);
        assert_eq!(upper_quantile(&v[..100], 0.999), 1.0);
    }
}
