//! Fully connected sparse-input network with row-normalized deeper layers.
//!
//! Layer maps, for hidden layers `1 <= k < l` and output layer `l`:
//!
//! ```text
//! S_1(u) = sigma(b_1 + W_1 u)
//! S_k(u) = sigma(b_k + (W_k / rownorm(W_k)) u)      1 < k < l
//! S_l(u) = G(c + (W_l / rownorm(W_l)) u)
//! ```
//!
//! Parameters split into the penalized block `(W_1, b_1, .., b_{l-1})` and the
//! free block `(W_2, .., W_l, c)`. The backward pass differentiates through the
//! row normalization.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::activation::ActivationSpec;
use crate::error::{Error, Result};
use crate::objective::{self, LossKind};

/// Output link `G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    Softmax,
    /// Softmax of `(u_1, .., u_{m-1}, 0)`; the last logit is ignored.
    MulticlassLogit,
}

impl Link {
    pub fn is_probabilistic(self) -> bool {
        !matches!(self, Link::Identity)
    }
}

/// Architecture: widths `p_1, .., p_l, p_{l+1} = m`, link and one activation per hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ShapeWire", into = "ShapeWire")]
pub struct NetworkShape {
    widths: Vec<usize>,
    link: Link,
    activations: Vec<ActivationSpec>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShapeWire {
    widths: Vec<usize>,
    link: Link,
    activations: Vec<ActivationSpec>,
}

impl TryFrom<ShapeWire> for NetworkShape {
    type Error = Error;
    fn try_from(w: ShapeWire) -> Result<Self> {
        NetworkShape::with_activations(w.widths, w.link, w.activations)
    }
}

impl From<NetworkShape> for ShapeWire {
    fn from(s: NetworkShape) -> Self {
        ShapeWire { widths: s.widths, link: s.link, activations: s.activations }
    }
}

impl NetworkShape {
    /// Shape with the same activation in every hidden layer.
    pub fn new(widths: Vec<usize>, link: Link, activation: ActivationSpec) -> Result<Self> {
        let hidden = widths.len().saturating_sub(2);
        Self::with_activations(widths, link, vec![activation; hidden])
    }

    pub fn with_activations(widths: Vec<usize>, link: Link, activations: Vec<ActivationSpec>) -> Result<Self> {
        if widths.len() < 3 {
            return Err(Error::Config(format!(
                "need at least one hidden layer (3 widths), got widths {widths:?}"
            )));
        }
        if widths.contains(&0) {
            return Err(Error::Config(format!("all widths must be >= 1, got {widths:?}")));
        }
        if activations.len() != widths.len() - 2 {
            return Err(Error::Config(format!(
                "expected {} hidden activations, got {}",
                widths.len() - 2,
                activations.len()
            )));
        }
        for a in &activations {
            a.validate()?;
        }
        Ok(Self { widths, link, activations })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn link(&self) -> Link {
        self.link
    }

    pub fn activations(&self) -> &[ActivationSpec] {
        &self.activations
    }

    /// Number of layers `l` (hidden layers plus the output layer).
    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Total parameter count `sum_k p_{k+1} (p_k + 1)`.
    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    /// Product of `sigma_k'(0)` over hidden layers.
    pub fn slope_product_at_zero(&self) -> f64 {
        self.activations.iter().map(|a| a.deriv(0.0)).product()
    }

    /// `sqrt(p_3 * .. * p_l)`, equal to 1 for two layers.
    pub fn depth_factor(&self) -> f64 {
        let l = self.n_layers();
        // widths[j - 1] is p_j
        (3..=l).map(|j| self.widths[j - 1] as f64).product::<f64>().sqrt()
    }

    /// Same architecture on a different input dimension.
    pub fn with_input_dim(&self, p1: usize) -> Result<Self> {
        let mut widths = self.widths.clone();
        widths[0] = p1;
        Self::with_activations(widths, self.link, self.activations.clone())
    }
}

/// Network parameters. Also used for gradients, which share the layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    /// `W_1`, `p_2 x p_1`. Penalized.
    pub w1: Array2<f64>,
    /// `b_1, .., b_{l-1}`. Penalized.
    pub biases: Vec<Array1<f64>>,
    /// `W_2, .., W_l`, used through their row-normalized versions.
    pub deep: Vec<Array2<f64>>,
    /// Output intercept `c`.
    pub c: Array1<f64>,
}

impl Theta {
    pub fn zeros(shape: &NetworkShape) -> Self {
        let w = shape.widths();
        let l = shape.n_layers();
        Self {
            w1: Array2::zeros((w[1], w[0])),
            biases: (1..l).map(|k| Array1::zeros(w[k])).collect(),
            deep: (1..l).map(|k| Array2::zeros((w[k + 1], w[k]))).collect(),
            c: Array1::zeros(w[l]),
        }
    }

    /// Verify block dimensions against `shape`.
    pub fn check_shape(&self, shape: &NetworkShape) -> Result<()> {
        let w = shape.widths();
        let l = shape.n_layers();
        if self.w1.dim() != (w[1], w[0]) {
            return Err(Error::Shape(format!("W_1 is {:?}, expected {:?}", self.w1.dim(), (w[1], w[0]))));
        }
        if self.biases.len() != l - 1 || self.deep.len() != l - 1 {
            return Err(Error::Shape(format!("expected {} biases and deeper layers", l - 1)));
        }
        for k in 1..l {
            if self.biases[k - 1].len() != w[k] {
                return Err(Error::Shape(format!("b_{k} has length {}, expected {}", self.biases[k - 1].len(), w[k])));
            }
            if self.deep[k - 1].dim() != (w[k + 1], w[k]) {
                return Err(Error::Shape(format!(
                    "W_{} is {:?}, expected {:?}",
                    k + 1,
                    self.deep[k - 1].dim(),
                    (w[k + 1], w[k])
                )));
            }
        }
        if self.c.len() != w[l] {
            return Err(Error::Shape(format!("c has length {}, expected {}", self.c.len(), w[l])));
        }
        Ok(())
    }

    /// True when every penalized entry is exactly zero.
    pub fn theta1_is_zero(&self) -> bool {
        self.w1.iter().all(|&v| v == 0.0) && self.biases.iter().all(|b| b.iter().all(|&v| v == 0.0))
    }

    pub fn zero_theta1(&mut self) {
        self.w1.fill(0.0);
        for b in &mut self.biases {
            b.fill(0.0);
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Theta) {
        self.w1.scaled_add(alpha, &other.w1);
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.scaled_add(alpha, b);
        }
        for (a, b) in self.deep.iter_mut().zip(&other.deep) {
            a.scaled_add(alpha, b);
        }
        self.c.scaled_add(alpha, &other.c);
    }

    pub fn dot(&self, other: &Theta) -> f64 {
        let mut s = (&self.w1 * &other.w1).sum();
        for (a, b) in self.biases.iter().zip(&other.biases) {
            s += a.dot(b);
        }
        for (a, b) in self.deep.iter().zip(&other.deep) {
            s += (a * b).sum();
        }
        s + self.c.dot(&other.c)
    }

    /// All entries in a fixed order: `W_1`, biases, deeper layers, `c`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.w1.iter().copied());
        for b in &self.biases {
            out.extend(b.iter().copied());
        }
        for w in &self.deep {
            out.extend(w.iter().copied());
        }
        out.extend(self.c.iter().copied());
        out
    }

    /// Inverse of [`Theta::to_flat`] on a template with the target layout.
    pub fn from_flat_like(template: &Theta, flat: &[f64]) -> Result<Theta> {
        let mut t = template.clone();
        let mut it = flat.iter().copied();
        let mut fill = |dst: &mut dyn Iterator<Item = &mut f64>| -> Result<()> {
            for d in dst {
                *d = it.next().ok_or_else(|| Error::Shape("flat vector too short".into()))?;
            }
            Ok(())
        };
        fill(&mut t.w1.iter_mut())?;
        for b in &mut t.biases {
            fill(&mut b.iter_mut())?;
        }
        for w in &mut t.deep {
            fill(&mut w.iter_mut())?;
        }
        fill(&mut t.c.iter_mut())?;
        if it.next().is_some() {
            return Err(Error::Shape("flat vector too long".into()));
        }
        Ok(t)
    }

    /// Number of leading entries of [`Theta::to_flat`] that belong to the penalized block.
    pub fn theta1_len(&self) -> usize {
        self.w1.len() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Rescale every deeper-layer row to unit norm. Leaves the network function unchanged.
    pub fn normalize_deep_rows(&mut self) -> Result<()> {
        for (idx, w) in self.deep.iter_mut().enumerate() {
            for (r, mut row) in w.axis_iter_mut(Axis(0)).enumerate() {
                let norm = row.dot(&row).sqrt();
                if !(norm > 0.0 && norm.is_finite()) {
                    return Err(Error::DegenerateParameter { layer: idx + 2, row: r });
                }
                row /= norm;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ThetaWire {
    /// `p_1, .., p_{l+1}` recovered from the blocks.
    widths: Vec<usize>,
    w1: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    deep: Vec<Vec<Vec<f64>>>,
    c: Vec<f64>,
}

fn rows_of(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], dim: (usize, usize), what: &str) -> Result<Array2<f64>> {
    if rows.len() != dim.0 || rows.iter().any(|r| r.len() != dim.1) {
        return Err(Error::Shape(format!("{what} does not match declared {}x{}", dim.0, dim.1)));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec(dim, flat).map_err(|e| Error::Shape(e.to_string()))
}

impl Serialize for Theta {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut widths = vec![self.w1.ncols(), self.w1.nrows()];
        widths.extend(self.deep.iter().map(|w| w.nrows()));
        ThetaWire {
            widths,
            w1: rows_of(&self.w1),
            biases: self.biases.iter().map(|b| b.to_vec()).collect(),
            deep: self.deep.iter().map(rows_of).collect(),
            c: self.c.to_vec(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Theta {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let w = ThetaWire::deserialize(d)?;
        theta_from_wire(w).map_err(serde::de::Error::custom)
    }
}

fn theta_from_wire(w: ThetaWire) -> Result<Theta> {
    let widths = &w.widths;
    if widths.len() < 3 {
        return Err(Error::Shape("theta header needs at least 3 widths".into()));
    }
    let l = widths.len() - 1;
    if w.biases.len() != l - 1 || w.deep.len() != l - 1 {
        return Err(Error::Shape(format!("expected {} biases and deeper layers", l - 1)));
    }
    let w1 = matrix_from_rows(&w.w1, (widths[1], widths[0]), "W_1")?;
    let mut biases = Vec::new();
    let mut deep = Vec::new();
    for k in 1..l {
        if w.biases[k - 1].len() != widths[k] {
            return Err(Error::Shape(format!("b_{k} does not match declared width {}", widths[k])));
        }
        biases.push(Array1::from(w.biases[k - 1].clone()));
        deep.push(matrix_from_rows(&w.deep[k - 1], (widths[k + 1], widths[k]), &format!("W_{}", k + 1))?);
    }
    if w.c.len() != widths[l] {
        return Err(Error::Shape("c does not match declared output width".into()));
    }
    Ok(Theta { w1, biases, deep, c: Array1::from(w.c) })
}

/// Regression or classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

impl Task {
    pub fn loss_kind(self) -> LossKind {
        match self {
            Task::Regression => LossKind::SqrtL2,
            Task::Classification => LossKind::CrossEntropy,
        }
    }
}

/// Responses `Y` (`n x m`) and inputs `X` (`n x p_1`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub task: Task,
    pub feature_names: Vec<String>,
    /// Class labels in column order; `None` for regression.
    pub class_labels: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array2<f64>, task: Task) -> Result<Self> {
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        let labels = match task {
            Task::Regression => None,
            Task::Classification => Some((0..y.ncols()).map(|t| t.to_string()).collect()),
        };
        Self::with_names(x, y, task, names, labels)
    }

    pub fn with_names(
        x: Array2<f64>,
        y: Array2<f64>,
        task: Task,
        feature_names: Vec<String>,
        class_labels: Option<Vec<String>>,
    ) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::Shape(format!("X has {} rows, Y has {}", x.nrows(), y.nrows())));
        }
        if feature_names.len() != x.ncols() {
            return Err(Error::Shape("feature name count differs from column count".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite value in X or Y".into()));
        }
        match task {
            Task::Regression => {
                if y.ncols() != 1 {
                    return Err(Error::Data(format!("regression needs m = 1, got {}", y.ncols())));
                }
            }
            Task::Classification => {
                for (i, row) in y.outer_iter().enumerate() {
                    let ones = row.iter().filter(|&&v| v == 1.0).count();
                    let zeros = row.iter().filter(|&&v| v == 0.0).count();
                    if ones != 1 || ones + zeros != row.len() {
                        return Err(Error::Data(format!("row {i} of Y is not one-hot")));
                    }
                }
            }
        }
        Ok(Self { x, y, task, feature_names, class_labels })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn m(&self) -> usize {
        self.y.ncols()
    }

    /// Same inputs with a different response matrix.
    pub fn with_response(&self, y: Array2<f64>) -> Result<Self> {
        Self::with_names(self.x.clone(), y, self.task, self.feature_names.clone(), self.class_labels.clone())
    }

    fn check_against(&self, shape: &NetworkShape) -> Result<()> {
        if self.p() != shape.input_dim() || self.m() != shape.output_dim() {
            return Err(Error::Shape(format!(
                "data is {}x{} -> {}, network expects {} -> {}",
                self.n(),
                self.p(),
                self.m(),
                shape.input_dim(),
                shape.output_dim()
            )));
        }
        Ok(())
    }
}

/// Apply the output link row-wise.
pub fn link_apply(link: Link, z: ArrayView2<f64>) -> Result<Array2<f64>> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite link input".into()));
    }
    Ok(link_apply_unchecked(link, z))
}

fn link_apply_unchecked(link: Link, z: ArrayView2<f64>) -> Array2<f64> {
    let mut out = z.to_owned();
    match link {
        Link::Identity => {}
        Link::Softmax => {
            for mut row in out.outer_iter_mut() {
                let mx = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                row.mapv_inplace(|v| (v - mx).exp());
                let s = row.sum();
                row /= s;
            }
        }
        Link::MulticlassLogit => {
            let m = out.ncols();
            for mut row in out.outer_iter_mut() {
                row[m - 1] = 0.0;
                let mx = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                row.mapv_inplace(|v| (v - mx).exp());
                let s = row.sum();
                row /= s;
            }
        }
    }
    out
}

/// Row-normalized copy of `w` together with the row norms.
fn normalize_rows(w: &Array2<f64>, layer: usize) -> Result<(Array2<f64>, Array1<f64>)> {
    let norms: Array1<f64> = w.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if let Some(row) = norms.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::DegenerateParameter { layer, row });
    }
    let normalized = w / &norms.view().insert_axis(Axis(1));
    Ok((normalized, norms))
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Pre-activations `z_k` of hidden layers `1..l-1`.
    pub pre: Vec<Array2<f64>>,
    /// Activations `a_k = sigma(z_k)`.
    pub post: Vec<Array2<f64>>,
    /// Row-normalized `W_2..W_l`.
    pub normalized: Vec<Array2<f64>>,
    pub row_norms: Vec<Array1<f64>>,
    /// Output pre-link values `c + W_l a_{l-1}`.
    pub logits: Array2<f64>,
    /// Network output `G(logits)`.
    pub output: Array2<f64>,
}

pub fn forward_cached(shape: &NetworkShape, theta: &Theta, x: ArrayView2<f64>) -> Result<ForwardCache> {
    theta.check_shape(shape)?;
    if x.ncols() != shape.input_dim() {
        return Err(Error::Shape(format!("X has {} columns, network expects {}", x.ncols(), shape.input_dim())));
    }
    let l = shape.n_layers();
    let mut pre = Vec::with_capacity(l - 1);
    let mut post = Vec::with_capacity(l - 1);
    let mut normalized = Vec::with_capacity(l - 1);
    let mut row_norms = Vec::with_capacity(l - 1);

    let mut z = x.dot(&theta.w1.t());
    z += &theta.biases[0];
    for k in 1..l {
        let act = shape.activations()[k - 1];
        let a = z.mapv(|v| act.value(v));
        pre.push(z);
        let (wn, norms) = normalize_rows(&theta.deep[k - 1], k + 1)?;
        let mut next = a.dot(&wn.t());
        if k < l - 1 {
            next += &theta.biases[k];
        } else {
            next += &theta.c;
        }
        post.push(a);
        normalized.push(wn);
        row_norms.push(norms);
        z = next;
    }
    let output = link_apply_unchecked(shape.link(), z.view());
    Ok(ForwardCache { pre, post, normalized, row_norms, logits: z, output })
}

/// Network output `mu_theta(X)`, one row per input row.
pub fn forward(shape: &NetworkShape, theta: &Theta, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    Ok(forward_cached(shape, theta, x)?.output)
}

/// Loss value and its exact gradient with respect to every parameter.
pub fn loss_and_gradient(
    shape: &NetworkShape,
    theta: &Theta,
    data: &Dataset,
    loss: LossKind,
) -> Result<(f64, Theta)> {
    data.check_against(shape)?;
    let cache = forward_cached(shape, theta, data.x.view())?;
    let (value, mut delta) = objective::loss_and_logit_grad(loss, shape.link(), data.y.view(), &cache)?;
    let grad = backprop(shape, data.x.view(), &cache, &mut delta);
    Ok((value, grad))
}

/// Gradient of `L_n(Y, mu_theta(X))` congruent to `theta`.
pub fn backward(shape: &NetworkShape, theta: &Theta, data: &Dataset, loss: LossKind) -> Result<Theta> {
    Ok(loss_and_gradient(shape, theta, data, loss)?.1)
}

/// Propagate `delta = dL/dlogits` back through the layers.
fn backprop(shape: &NetworkShape, x: ArrayView2<f64>, cache: &ForwardCache, delta: &mut Array2<f64>) -> Theta {
    let l = shape.n_layers();
    let mut biases = vec![Array1::zeros(0); l - 1];
    let mut deep = vec![Array2::zeros((0, 0)); l - 1];
    let c = delta.sum_axis(Axis(0));

    let mut d = std::mem::take(delta);
    for k in (2..=l).rev() {
        let idx = k - 2;
        let a_prev = &cache.post[idx];
        let wn = &cache.normalized[idx];
        let norms = &cache.row_norms[idx];
        // gradient w.r.t. the normalized rows, then projected through w / |w|
        let g_hat = d.t().dot(a_prev);
        let mut g = g_hat;
        Zip::from(g.rows_mut()).and(wn.rows()).and(norms).for_each(|mut g_row, w_row, &norm| {
            let radial = g_row.dot(&w_row);
            g_row.scaled_add(-radial, &w_row);
            g_row /= norm;
        });
        deep[idx] = g;

        let mut da = d.dot(wn);
        let act = shape.activations()[idx];
        Zip::from(&mut da).and(&cache.pre[idx]).for_each(|v, &z| *v *= act.deriv(z));
        biases[idx] = da.sum_axis(Axis(0));
        d = da;
    }
    let w1 = d.t().dot(&x);
    Theta { w1, biases, deep, c }
}
