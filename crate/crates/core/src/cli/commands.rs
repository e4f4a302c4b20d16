use std::fmt::Write as _;
use std::path::Path;

use super::config::RunConfig;
use super::ingest::{load_csv, load_features};
use super::{CommonArgs, DataArgs, FitArgs, PredictArgs, QutArgs, QutOptions, SimulateArgs};
use crate::error::{Error, Result};
use crate::eval::run_sweep;
use crate::network::{Dataset, Task};
use crate::qut::compute_qut;
use crate::solver::{self, FitResult};

fn base_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_path(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed.or(cfg.seed) {
        cfg.apply_seed(seed);
    }
    if common.out.is_some() {
        cfg.io.out.clone_from(&common.out);
    }
    Ok(cfg)
}

fn apply_data_args(cfg: &mut RunConfig, data: &DataArgs) {
    if let Some(task) = data.task {
        cfg.task = task;
    }
    if let Some(hidden) = &data.hidden {
        cfg.shape.hidden.clone_from(hidden);
    }
    if data.data.is_some() {
        cfg.io.data.clone_from(&data.data);
    }
    if data.response.is_some() {
        cfg.io.response.clone_from(&data.response);
    }
}

fn apply_qut_args(cfg: &mut RunConfig, qut: &QutOptions) {
    if let Some(alpha) = qut.alpha {
        cfg.qut.alpha = alpha;
    }
    if let Some(m) = qut.mc_samples {
        cfg.qut.mc_samples = m;
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg.io.data.as_deref().ok_or_else(|| Error::Config("no input data: pass --data".into()))?;
    let response =
        cfg.io.response.as_deref().ok_or_else(|| Error::Config("no response column: pass --response".into()))?;
    let data = load_csv(path, response, cfg.task)?;
    eprintln!("loaded {}: n = {}, p1 = {}, m = {}", path.display(), data.n(), data.p(), data.m());
    Ok(data)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn prepare(common: &CommonArgs, data: &DataArgs, qut: &QutOptions) -> Result<RunConfig> {
    let mut cfg = base_config(common)?;
    apply_data_args(&mut cfg, data);
    apply_qut_args(&mut cfg, qut);
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_qut(args: &QutArgs) -> Result<()> {
    let cfg = prepare(&args.common, &args.data, &args.qut)?;
    let data = load_dataset(&cfg)?;
    let shape = cfg.network(data.p(), data.m())?;
    let result = compute_qut(&data, &shape, &cfg.qut)?;
    eprintln!("lambda_qut = {}", result.lambda_qut);
    emit(cfg.io.out.as_deref(), &(serde_json::to_string_pretty(&result)? + "\n"))
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let cfg = prepare(&args.common, &args.data, &args.qut)?;
    let data = load_dataset(&cfg)?;
    let shape = cfg.network(data.p(), data.m())?;
    let (lambda, qut) = match args.lambda {
        Some(l) if l >= 0.0 && l.is_finite() => (l, None),
        Some(l) => return Err(Error::Config(format!("--lambda must be finite and >= 0, got {l}"))),
        None => {
            let q = compute_qut(&data, &shape, &cfg.qut)?;
            (q.lambda_qut, Some(q))
        }
    };
    let mut fit = solver::fit(&data, &shape, lambda, &cfg.solver)?;
    fit.qut = qut;
    eprintln!(
        "lambda = {}, selected {} of {} inputs: [{}]",
        fit.lambda,
        fit.support.len(),
        data.p(),
        fit.support_names().join(", ")
    );
    emit(cfg.io.out.as_deref(), &(serde_json::to_string_pretty(&fit)? + "\n"))
}

/// CSV text of predictions: one `prediction` column for regression, otherwise the
/// predicted label followed by one probability column per class.
pub fn format_predictions(fit: &FitResult, x: ndarray::ArrayView2<f64>) -> Result<String> {
    let out = solver::predict(fit, x)?;
    let mut text = String::new();
    match fit.task {
        Task::Regression => {
            text.push_str("prediction\n");
            for v in out.column(0) {
                let _ = writeln!(text, "{v}");
            }
        }
        Task::Classification => {
            let labels: Vec<String> = match &fit.class_labels {
                Some(l) => l.clone(),
                None => (0..out.ncols()).map(|t| t.to_string()).collect(),
            };
            let classes = solver::predict_class(fit, x)?;
            text.push_str("class");
            for l in &labels {
                let _ = write!(text, ",p_{l}");
            }
            text.push('\n');
            for (row, &c) in out.outer_iter().zip(classes.iter()) {
                text.push_str(&labels[c]);
                for v in row {
                    let _ = write!(text, ",{v}");
                }
                text.push('\n');
            }
        }
    }
    Ok(text)
}

pub fn load_model(path: &Path) -> Result<FitResult> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read model {}: {e}", path.display())))?;
    let fit: FitResult =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("invalid model {}: {e}", path.display())))?;
    fit.theta.check_shape(&fit.shape)?;
    if fit.feature_names.len() != fit.shape.input_dim() {
        return Err(Error::Data("model feature names do not match its input width".into()));
    }
    Ok(fit)
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let cfg = base_config(&args.common)?;
    let model = args
        .model
        .as_deref()
        .or(cfg.io.model.as_deref())
        .ok_or_else(|| Error::Config("no model: pass --model".into()))?;
    let data = args
        .data
        .as_deref()
        .or(cfg.io.data.as_deref())
        .ok_or_else(|| Error::Config("no input data: pass --data".into()))?;
    let fit = load_model(model)?;
    let x = load_features(data, &fit.feature_names)?;
    emit(cfg.io.out.as_deref(), &format_predictions(&fit, x.view())?)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    apply_qut_args(&mut cfg, &args.qut);
    if let Some(hidden) = &args.hidden {
        cfg.shape.hidden.clone_from(hidden);
    }
    cfg.task = Task::Regression;
    cfg.validate()?;
    let mut sim = cfg.simulation(args.sim_kind);
    if let Some(grid) = &args.s_grid {
        sim.s_grid.clone_from(grid);
    }
    if let Some(reps) = args.reps {
        sim.repetitions = reps;
    }
    let out = cfg.io.out.clone().ok_or_else(|| Error::Config("simulate needs --out".into()))?;
    let shape = cfg.network(sim.p1, 1)?;
    let report = run_sweep(&sim, &shape, &cfg.qut, &cfg.solver)?;
    for a in &report.summary {
        eprintln!(
            "s = {:>3}: PESR = {:.3}, FDR = {:.3}, TPR = {}, failed = {}",
            a.s,
            a.pesr,
            a.mean_fdr,
            a.mean_tpr.map_or("n/a".to_string(), |t| format!("{t:.3}")),
            a.failed
        );
    }
    report.write_json(&out.with_extension("json"))?;
    report.write_csv(&out.with_extension("csv"))?;
    Ok(())
}
