//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero if any fails.

use std::time::Instant;

use lasso_ann::activation::ActivationSpec;
use lasso_ann::eval::{self, SimConfig, SimKind};
use lasso_ann::network::{self, Dataset, Link, NetworkShape, Task, Theta};
use lasso_ann::objective::{self, LossKind, PenaltySpec};
use lasso_ann::qut::{self, QutConfig};
use lasso_ann::rng::{self, Rng};
use lasso_ann::solver::SolverConfig;
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

const ORACLE_EXCESS_TOL: f64 = 1e-8;
const ORACLE_MIN_RATIO: f64 = 0.99;
const ORACLE_RESTARTS: usize = 200;
const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-5;
const PIVOT_REL_TOL: f64 = 1e-12;
const CERT_LAMBDA_FACTOR: f64 = 1.01;
const CERT_STEP: f64 = 1e-4;
const CERT_DIRECTIONS: usize = 200;
const NULL_MAX_NONEMPTY: f64 = 0.12;
const PESR_SMALL_MIN: f64 = 0.7;
const PESR_LARGE_MAX: f64 = 0.3;
const ABSDIFF_TPR_MIN: f64 = 0.8;
const ABSDIFF_FDR_MAX: f64 = 0.3;
const PSD_TOL: f64 = -1e-8;
const CONSTRUCTION_TOL: f64 = 1e-9;
const PROX_TOL: f64 = 1e-12;

type Criterion = fn() -> Outcome;

struct Outcome {
    pass: bool,
    detail: String,
}

fn gaussian(n: usize, p: usize, g: &mut Rng) -> Array2<f64> {
    Array2::from_shape_fn((n, p), |_| StandardNormal.sample(g))
}

fn one_hot(n: usize, m: usize, g: &mut Rng) -> Array2<f64> {
    let mut y = Array2::zeros((n, m));
    for i in 0..n {
        // first rows cover every class so no column is empty
        let c = if i < m { i } else { g.random_range(0..m) };
        y[[i, c]] = 1.0;
    }
    y
}

fn random_activation(g: &mut Rng) -> ActivationSpec {
    let m = g.random_range(1.0..20.0);
    let u0 = g.random_range(0.0..1.5);
    let k = if g.random_bool(0.5) { 1.0 } else { 2.0 };
    ActivationSpec::new(m, u0, k).unwrap()
}

fn random_deep(theta: &mut Theta, g: &mut Rng) {
    for w in &mut theta.deep {
        w.mapv_inplace(|_| StandardNormal.sample(g));
    }
    theta.normalize_deep_rows().unwrap();
}

fn criterion_1() -> Outcome {
    let mut g = rng::stream(101, 0);
    let mut max_excess = f64::NEG_INFINITY;
    let mut min_ratio = f64::INFINITY;
    for inst in 0..50 {
        let n = g.random_range(3..=10);
        let p = g.random_range(1..=5);
        let classification = inst % 2 == 1;
        let m = if classification { g.random_range(2..=3) } else { 1 };
        let mut widths = vec![p, g.random_range(1..=4)];
        if g.random_bool(0.5) {
            widths.push(g.random_range(1..=4));
        }
        widths.push(m);
        let act = random_activation(&mut g);
        let x = gaussian(n, p, &mut g);
        let (data, link) = if classification {
            (Dataset::new(x, one_hot(n, m, &mut g), Task::Classification).unwrap(), Link::Softmax)
        } else {
            (Dataset::new(x, gaussian(n, 1, &mut g), Task::Regression).unwrap(), Link::Identity)
        };
        let shape = NetworkShape::new(widths, link, act).unwrap();
        let closed = qut::lambda0(&data, &shape).unwrap();
        let oracle = qut::lambda0_oracle(&data, &shape, ORACLE_RESTARTS, inst as u64).unwrap();
        max_excess = max_excess.max((oracle.value - closed) / closed.max(1.0));
        min_ratio = min_ratio.min(oracle.value / closed);
    }
    Outcome {
        pass: max_excess <= ORACLE_EXCESS_TOL && min_ratio >= ORACLE_MIN_RATIO,
        detail: format!("50 instances: max excess {max_excess:.2e}, min oracle/closed ratio {min_ratio:.5}"),
    }
}

fn fd_check(shape: &NetworkShape, theta: &Theta, data: &Dataset, loss: LossKind) -> f64 {
    let (_, grad) = network::loss_and_gradient(shape, theta, data, loss).unwrap();
    let flat = theta.to_flat();
    let analytic = grad.to_flat();
    let eval = |v: &[f64]| {
        let t = Theta::from_flat_like(theta, v).unwrap();
        let out = network::forward(shape, &t, data.x.view()).unwrap();
        objective::loss_value(loss, data.y.view(), out.view()).unwrap()
    };
    let mut worst = 0.0f64;
    let mut probe = flat.clone();
    for i in 0..flat.len() {
        probe[i] = flat[i] + FD_STEP;
        let up = eval(&probe);
        probe[i] = flat[i] - FD_STEP;
        let down = eval(&probe);
        probe[i] = flat[i];
        let fd = (up - down) / (2.0 * FD_STEP);
        worst = worst.max((analytic[i] - fd).abs() / fd.abs().max(1.0));
    }
    worst
}

fn criterion_2() -> Outcome {
    let mut g = rng::stream(102, 0);
    let combos = [
        (LossKind::SqrtL2, Link::Identity),
        (LossKind::SqrtL2, Link::Softmax),
        (LossKind::SqrtL2, Link::MulticlassLogit),
        (LossKind::CrossEntropy, Link::Softmax),
        (LossKind::CrossEntropy, Link::MulticlassLogit),
    ];
    let mut worst = 0.0f64;
    for cfg in 0..20 {
        let (loss, link) = combos[cfg % combos.len()];
        let layers = 2 + cfg % 3;
        let n = g.random_range(4..=8);
        let p = g.random_range(2..=4);
        let m = if link == Link::Identity { 1 } else { 3 };
        let mut widths = vec![p];
        for _ in 1..layers {
            widths.push(g.random_range(2..=4));
        }
        widths.push(m);
        let acts = (1..layers).map(|_| random_activation(&mut g)).collect();
        let shape = NetworkShape::with_activations(widths, link, acts).unwrap();
        let x = gaussian(n, p, &mut g);
        let data = if link == Link::Identity {
            Dataset::new(x, gaussian(n, 1, &mut g), Task::Regression).unwrap()
        } else {
            Dataset::new(x, one_hot(n, m, &mut g), Task::Classification).unwrap()
        };
        let mut theta = Theta::zeros(&shape);
        let flat: Vec<f64> = (0..theta.to_flat().len()).map(|_| { let z: f64 = StandardNormal.sample(&mut g); 0.5 * z }).collect();
        theta = Theta::from_flat_like(&theta, &flat).unwrap();
        worst = worst.max(fd_check(&shape, &theta, &data, loss));
    }
    Outcome { pass: worst <= FD_REL_TOL, detail: format!("20 configurations: max relative error {worst:.2e}") }
}

fn criterion_3() -> Outcome {
    let mut g = rng::stream(103, 0);
    let x = gaussian(30, 6, &mut g);
    let y = gaussian(30, 1, &mut g);
    let shape = NetworkShape::new(vec![6, 8, 4, 1], Link::Identity, ActivationSpec::DEFAULT).unwrap();
    let base = qut::lambda0_regression(y.view(), x.view(), &shape).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let a = g.random_range(0.01..100.0);
        let b = g.random_range(-50.0..50.0);
        let moved = y.mapv(|v| a * v + b);
        let other = qut::lambda0_regression(moved.view(), x.view(), &shape).unwrap();
        worst = worst.max((other - base).abs() / base);
    }
    Outcome { pass: worst <= PIVOT_REL_TOL, detail: format!("20 affine maps: max relative deviation {worst:.2e}") }
}

fn criterion_4() -> Outcome {
    let mut g = rng::stream(104, 0);
    let mut worst = f64::INFINITY;
    for inst in 0..10 {
        let classification = inst % 2 == 1;
        let n = g.random_range(6..=15);
        let p = g.random_range(2..=5);
        let m = if classification { 3 } else { 1 };
        let mut widths = vec![p, g.random_range(2..=5)];
        if inst % 3 == 0 {
            widths.push(g.random_range(2..=4));
        }
        widths.push(m);
        let x = gaussian(n, p, &mut g);
        let (data, link) = if classification {
            (Dataset::new(x, one_hot(n, m, &mut g), Task::Classification).unwrap(), Link::Softmax)
        } else {
            (Dataset::new(x, gaussian(n, 1, &mut g), Task::Regression).unwrap(), Link::Identity)
        };
        let shape = NetworkShape::new(widths, link, random_activation(&mut g)).unwrap();
        let lambda = CERT_LAMBDA_FACTOR * qut::lambda0(&data, &shape).unwrap();
        let penalty = PenaltySpec::new(lambda).unwrap();
        let mut theta0 = Theta::zeros(&shape);
        random_deep(&mut theta0, &mut g);
        theta0.c = objective::null_intercept(link, data.y.view()).unwrap();
        let f0 = objective::objective_value(&shape, &theta0, &data, penalty).unwrap();
        for _ in 0..CERT_DIRECTIONS {
            let mut t = theta0.clone();
            let mut dir: Vec<f64> = (0..t.theta1_len()).map(|_| StandardNormal.sample(&mut g)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            dir.iter_mut().for_each(|v| *v *= CERT_STEP / norm);
            let mut flat = t.to_flat();
            flat[..dir.len()].copy_from_slice(&dir);
            t = Theta::from_flat_like(&t, &flat).unwrap();
            let f = objective::objective_value(&shape, &t, &data, penalty).unwrap();
            worst = worst.min(f - f0);
        }
    }
    Outcome {
        pass: worst >= 0.0,
        detail: format!("10 instances x {CERT_DIRECTIONS} directions: min objective increase {worst:.3e}"),
    }
}

fn criterion_5() -> Outcome {
    let sim = SimConfig { n: 100, p1: 50, s_grid: vec![0], repetitions: 100, seed: 105, ..SimConfig::linear() };
    let shape = NetworkShape::new(vec![50, 20, 1], Link::Identity, ActivationSpec::DEFAULT).unwrap();
    let q = QutConfig { alpha: 0.05, ..QutConfig::default() };
    let report = eval::run_sweep(&sim, &shape, &q, &SolverConfig::default()).unwrap();
    let agg = report.aggregate(0).unwrap();
    let failed = agg.failed;
    let rate = (agg.nonempty_rate * (agg.repetitions - failed) as f64 + failed as f64) / agg.repetitions as f64;
    Outcome {
        pass: rate <= NULL_MAX_NONEMPTY,
        detail: format!("100 null repetitions: nonempty support in {:.0}% ({failed} failed)", 100.0 * rate),
    }
}

fn criterion_6() -> Outcome {
    let sim = SimConfig { n: 100, p1: 200, s_grid: vec![1, 8, 16], repetitions: 20, seed: 106, ..SimConfig::linear() };
    let shape = NetworkShape::new(vec![200, 20, 1], Link::Identity, ActivationSpec::DEFAULT).unwrap();
    let report = eval::run_sweep(&sim, &shape, &QutConfig::default(), &SolverConfig::default()).unwrap();
    // a failed repetition counts as a miss
    let pesr = |s| {
        let a = report.aggregate(s).unwrap();
        a.pesr * (a.repetitions - a.failed) as f64 / a.repetitions as f64
    };
    let (p1, p8, p16) = (pesr(1), pesr(8), pesr(16));
    Outcome {
        pass: p1 >= PESR_SMALL_MIN && p1 >= p8 && p8 >= p16 && p16 <= PESR_LARGE_MAX,
        detail: format!("PESR(1) = {p1:.2}, PESR(8) = {p8:.2}, PESR(16) = {p16:.2}"),
    }
}

fn criterion_7() -> Outcome {
    let sim = SimConfig { s_grid: vec![2, 16], repetitions: 10, seed: 107, ..SimConfig::absdiff() };
    let shape = NetworkShape::new(vec![50, 20, 1], Link::Identity, ActivationSpec::DEFAULT).unwrap();
    let report = eval::run_sweep(&sim, &shape, &QutConfig::default(), &SolverConfig::default()).unwrap();
    let a2 = report.aggregate(2).unwrap();
    let a16 = report.aggregate(16).unwrap();
    let tpr = a2.mean_tpr.unwrap_or(0.0) * (a2.repetitions - a2.failed) as f64 / a2.repetitions as f64;
    Outcome {
        pass: a2.failed == 0 && tpr >= ABSDIFF_TPR_MIN && a2.mean_fdr <= ABSDIFF_FDR_MAX,
        detail: format!(
            "s = 2: TPR {tpr:.2}, FDR {:.2}, PE {:.2}; s = 16: TPR {:.2}, FDR {:.2} ({} failed)",
            a2.mean_fdr,
            a2.mean_pe.unwrap_or(f64::NAN),
            a16.mean_tpr.unwrap_or(f64::NAN),
            a16.mean_fdr,
            a2.failed + a16.failed
        ),
    }
}

fn min_eigenvalue(h: &Array2<f64>) -> f64 {
    let m = DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| h[[i, j]]);
    SymmetricEigen::new(m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

fn criterion_8() -> Outcome {
    let mut g = rng::stream(108, 0);
    let mut worst = f64::INFINITY;
    for _ in 0..20 {
        let n = g.random_range(5..=20);
        let p = g.random_range(1..=6);
        let widths = vec![p, g.random_range(1..=6), g.random_range(1..=6), 1];
        let shape = NetworkShape::new(widths, Link::Identity, random_activation(&mut g)).unwrap();
        let data = Dataset::new(gaussian(n, p, &mut g), gaussian(n, 1, &mut g), Task::Regression).unwrap();
        let mut theta = Theta::zeros(&shape);
        random_deep(&mut theta, &mut g);
        theta.c = objective::null_intercept(Link::Identity, data.y.view()).unwrap();
        let (h1, h2) = objective::hessian_at_null(&shape, &data, &theta).unwrap();
        worst = worst.min(min_eigenvalue(&h1)).min(min_eigenvalue(&h2));
    }
    Outcome { pass: worst >= PSD_TOL, detail: format!("20 instances: min eigenvalue {worst:.3e}") }
}

fn criterion_9() -> Outcome {
    let mut g = rng::stream(109, 0);
    let mut worst_linear = 0.0f64;
    for _ in 0..20 {
        let n = g.random_range(5..=30);
        let p = g.random_range(2..=10);
        let x = gaussian(n, p, &mut g);
        let beta = Array1::from_shape_fn(p, |_| if g.random_bool(0.5) { StandardNormal.sample(&mut g) } else { 0.0 });
        let beta0: f64 = StandardNormal.sample(&mut g);
        let (shape, theta) = eval::linear_relu_network(beta0, beta.view(), x.view()).unwrap();
        // data points plus random convex combinations of them
        let mut pts = x.clone();
        let mut hull = Array2::zeros((50, p));
        for mut row in hull.outer_iter_mut() {
            let w: Vec<f64> = (0..n).map(|_| -g.random::<f64>().ln()).collect();
            let total: f64 = w.iter().sum();
            for (i, wi) in w.iter().enumerate() {
                row.scaled_add(wi / total, &x.row(i));
            }
        }
        pts.append(ndarray::Axis(0), hull.view()).unwrap();
        let out = network::forward(&shape, &theta, pts.view()).unwrap();
        for (i, row) in pts.outer_iter().enumerate() {
            let expected = beta0 + row.dot(&beta);
            worst_linear = worst_linear.max((out[[i, 0]] - expected).abs());
        }
    }
    let mut worst_abs = 0.0f64;
    let h = 4;
    let shape = NetworkShape::new(vec![10, 8, 1], Link::Identity, ActivationSpec::relu()).unwrap();
    let theta = eval::exact_absdiff_network(h, &shape).unwrap();
    let x = gaussian(100, 10, &mut g);
    let out = network::forward(&shape, &theta, x.view()).unwrap();
    let support: Vec<usize> = (0..2 * h).collect();
    let mu = eval::true_mu(SimKind::Absdiff, 10.0, &support, x.view());
    for (a, b) in out.column(0).iter().zip(mu.iter()) {
        worst_abs = worst_abs.max((a - b).abs());
    }
    Outcome {
        pass: worst_linear <= CONSTRUCTION_TOL && worst_abs <= CONSTRUCTION_TOL,
        detail: format!("single neuron max error {worst_linear:.2e}; absolute differences max error {worst_abs:.2e}"),
    }
}

fn criterion_10() -> Outcome {
    let mut g = rng::stream(110, 0);
    let shape = NetworkShape::new(vec![1, 1, 1], Link::Identity, ActivationSpec::DEFAULT).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let w = g.random_range(-10.0..10.0);
        let step = g.random_range(0.01..2.0);
        let lambda = g.random_range(0.0..5.0);
        let mut t = Theta::zeros(&shape);
        t.w1[[0, 0]] = w;
        let z = objective::prox_l1(&t, step, lambda).unwrap().w1[[0, 0]];
        let thr = step * lambda;
        // optimality of 0.5 (z - w)^2 + thr |z|: w - z lies in thr * d|z|
        let violation = if z != 0.0 {
            (w - z - thr * z.signum()).abs()
        } else {
            (w.abs() - thr).max(0.0)
        };
        worst = worst.max(violation);
    }
    Outcome { pass: worst <= PROX_TOL, detail: format!("1000 scalars: max subgradient violation {worst:.2e}") }
}

fn main() {
    let criteria: [(&str, Criterion); 10] = [
        ("closed-form zero-thresholding value vs numeric supremum", criterion_1),
        ("backward pass vs central finite differences", criterion_2),
        ("pivotal regression statistic", criterion_3),
        ("null point is a local minimum above the threshold", criterion_4),
        ("null calibration of the selected support", criterion_5),
        ("linear phase transition", criterion_6),
        ("absolute-difference recovery", criterion_7),
        ("bias Hessians at the null are PSD", criterion_8),
        ("explicit network constructions", criterion_9),
        ("soft-threshold subgradient optimality", criterion_10),
    ];
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!("{verdict} {id:>2} {name}: {} [{:.1}s]", outcome.detail, start.elapsed().as_secs_f64());
        if !outcome.pass {
            failures += 1;
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
