//! Losses, the `l1` penalty on the first block, the penalized objective and its
//! proximal map.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{self, Dataset, ForwardCache, Link, NetworkShape, Task, Theta};

/// Probability floor applied before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `|Y - mu|_2`, not squared.
    SqrtL2,
    /// `-sum_i y_i^T log mu_i`.
    CrossEntropy,
}

/// `lambda * P(theta_1)` with `q = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub lambda: f64,
}

impl PenaltySpec {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        Ok(Self { lambda })
    }
}

pub fn loss_sqrt_l2(y: ArrayView2<f64>, mu: ArrayView2<f64>) -> f64 {
    let mut s = 0.0;
    ndarray::Zip::from(&y).and(&mu).for_each(|&a, &b| s += (a - b) * (a - b));
    s.sqrt()
}

pub fn loss_cross_entropy(y: ArrayView2<f64>, p: ArrayView2<f64>) -> Result<f64> {
    for (i, row) in p.outer_iter().enumerate() {
        let s = row.sum();
        if (s - 1.0).abs() > 1e-8 {
            return Err(Error::Domain(format!("probability row {i} sums to {s}")));
        }
    }
    let mut total = 0.0;
    ndarray::Zip::from(&y).and(&p).for_each(|&yi, &pi| {
        if yi != 0.0 {
            total -= yi * pi.max(PROB_FLOOR).ln();
        }
    });
    Ok(total)
}

pub fn loss_value(kind: LossKind, y: ArrayView2<f64>, mu: ArrayView2<f64>) -> Result<f64> {
    if y.dim() != mu.dim() {
        return Err(Error::Shape(format!("Y is {:?}, predictions are {:?}", y.dim(), mu.dim())));
    }
    match kind {
        LossKind::SqrtL2 => Ok(loss_sqrt_l2(y, mu)),
        LossKind::CrossEntropy => loss_cross_entropy(y, mu),
    }
}

/// Loss value and `dL/dlogits` for the cached forward pass.
pub(crate) fn loss_and_logit_grad(
    kind: LossKind,
    link: Link,
    y: ArrayView2<f64>,
    cache: &ForwardCache,
) -> Result<(f64, Array2<f64>)> {
    let mu = &cache.output;
    if y.dim() != mu.dim() {
        return Err(Error::Shape(format!("Y is {:?}, predictions are {:?}", y.dim(), mu.dim())));
    }
    match kind {
        LossKind::SqrtL2 => {
            let value = loss_sqrt_l2(y, mu.view());
            if value == 0.0 {
                return Err(Error::NonDifferentiable("zero residual under the square-root loss".into()));
            }
            let g = (mu - &y) / value;
            let delta = match link {
                Link::Identity => g,
                Link::Softmax | Link::MulticlassLogit => {
                    let mut d = &g * mu;
                    let inner = d.sum_axis(Axis(1));
                    d -= &(mu * &inner.insert_axis(Axis(1)));
                    if link == Link::MulticlassLogit {
                        let m = d.ncols();
                        d.column_mut(m - 1).fill(0.0);
                    }
                    d
                }
            };
            Ok((value, delta))
        }
        LossKind::CrossEntropy => {
            if !link.is_probabilistic() {
                return Err(Error::Config("cross-entropy needs a Softmax or multiclass-Logit link".into()));
            }
            let value = loss_cross_entropy(y, mu.view())?;
            let row_mass = y.sum_axis(Axis(1)).insert_axis(Axis(1));
            let mut d = mu * &row_mass - y;
            if link == Link::MulticlassLogit {
                let m = d.ncols();
                d.column_mut(m - 1).fill(0.0);
            }
            Ok((value, d))
        }
    }
}

/// `sum |W_1| + sum_k sum |b_k|`.
pub fn penalty_l1(theta: &Theta) -> f64 {
    theta.w1.iter().map(|v| v.abs()).sum::<f64>()
        + theta.biases.iter().flat_map(|b| b.iter()).map(|v| v.abs()).sum::<f64>()
}

/// `L_n(Y, mu_theta(X)) + lambda P(theta_1)`.
pub fn objective_value(shape: &NetworkShape, theta: &Theta, data: &Dataset, penalty: PenaltySpec) -> Result<f64> {
    let out = network::forward(shape, theta, data.x.view())?;
    let loss = loss_value(data.task.loss_kind(), data.y.view(), out.view())?;
    Ok(loss + penalty.lambda * penalty_l1(theta))
}

#[inline]
pub fn soft_threshold(w: f64, threshold: f64) -> f64 {
    if w > threshold {
        w - threshold
    } else if w < -threshold {
        w + threshold
    } else {
        0.0
    }
}

/// Soft-threshold every penalized entry by `step * lambda`; the free block is untouched.
pub fn prox_l1(theta: &Theta, step: f64, lambda: f64) -> Result<Theta> {
    let mut out = theta.clone();
    prox_l1_in_place(&mut out, step, lambda)?;
    Ok(out)
}

pub fn prox_l1_in_place(theta: &mut Theta, step: f64, lambda: f64) -> Result<()> {
    if !(step > 0.0) {
        return Err(Error::Domain(format!("prox step must be > 0, got {step}")));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("lambda must be >= 0, got {lambda}")));
    }
    let t = step * lambda;
    if t == 0.0 {
        return Ok(());
    }
    theta.w1.mapv_inplace(|v| soft_threshold(v, t));
    for b in &mut theta.biases {
        b.mapv_inplace(|v| soft_threshold(v, t));
    }
    Ok(())
}

/// Minimizer of the loss over constant predictions `c`.
///
/// Regression: the response mean. Softmax: `log p_hat`. Multiclass-Logit:
/// log odds against the last class, with the ignored last logit set to 0.
pub fn null_intercept(link: Link, y: ArrayView2<f64>) -> Result<Array1<f64>> {
    let means = y
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::Data("empty response matrix".into()))?;
    Ok(match link {
        Link::Identity => means,
        Link::Softmax => means.mapv(|p| p.max(PROB_FLOOR).ln()),
        Link::MulticlassLogit => {
            let m = means.len();
            let last = means[m - 1].max(PROB_FLOOR).ln();
            let mut c = means.mapv(|p| p.max(PROB_FLOOR).ln() - last);
            c[m - 1] = 0.0;
            c
        }
    })
}

/// Centered responses `Y - 1 mean(Y)^T`.
pub fn centered(y: ArrayView2<f64>) -> Result<Array2<f64>> {
    let means = y
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::Data("empty response matrix".into()))?;
    Ok(&y - &means.insert_axis(Axis(0)))
}

/// Closed-form Hessians of the square-root loss with respect to `b_1` and `b_2`
/// at `theta_1 = 0`, `c = mean(Y)`, for a three-layer regression network.
///
/// Returns `n s1'^2 s2'^2 v^T v / |Y.|` with `v = w_3 W_2` (normalized rows), and
/// `n s2'^2 w_3^T w_3 / |Y.|`.
pub fn hessian_at_null(shape: &NetworkShape, data: &Dataset, theta: &Theta) -> Result<(Array2<f64>, Array2<f64>)> {
    if shape.n_layers() != 3 || data.task != Task::Regression || shape.link() != Link::Identity {
        return Err(Error::Config("null Hessian is defined for three-layer identity-link regression".into()));
    }
    theta.check_shape(shape)?;
    let yc = centered(data.y.view())?;
    let ynorm = yc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if ynorm == 0.0 {
        return Err(Error::DegenerateResponse("constant response".into()));
    }
    let unit = |w: &Array2<f64>, layer: usize| -> Result<Array2<f64>> {
        let mut w = w.clone();
        for (r, mut row) in w.outer_iter_mut().enumerate() {
            let norm = row.dot(&row).sqrt();
            if !(norm > 0.0) {
                return Err(Error::DegenerateParameter { layer, row: r });
            }
            row /= norm;
        }
        Ok(w)
    };
    let w2 = unit(&theta.deep[0], 2)?;
    let w3 = unit(&theta.deep[1], 3)?;
    let s1 = shape.activations()[0].deriv(0.0);
    let s2 = shape.activations()[1].deriv(0.0);
    let n = data.n() as f64;

    let v = w3.dot(&w2); // 1 x p2
    let h1 = v.t().dot(&v) * (n * s1 * s1 * s2 * s2 / ynorm);
    let h2 = w3.t().dot(&w3) * (n * s2 * s2 / ynorm);
    Ok((h1, h2))
}
