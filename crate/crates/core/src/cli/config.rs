//! JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::activation::ActivationSpec;
use crate::error::{Error, Result};
use crate::eval::{SimConfig, SimKind};
use crate::network::{Link, NetworkShape, Task};
use crate::qut::QutConfig;
use crate::rng;
use crate::solver::SolverConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapeConfig {
    /// Hidden widths `p_2, .., p_l`.
    pub hidden: Vec<usize>,
    /// Defaults to Identity for regression and Softmax for classification.
    pub link: Option<Link>,
    pub activation: ActivationSpec,
}

impl Default for ShapeConfig {
    fn default() -> Self {
        Self { hidden: vec![20], link: None, activation: ActivationSpec::DEFAULT }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub data: Option<PathBuf>,
    pub response: Option<String>,
    pub out: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

/// Optional overrides of the simulation defaults for the chosen kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub kind: Option<SimKind>,
    pub n: Option<usize>,
    pub p1: Option<usize>,
    pub s_grid: Option<Vec<usize>>,
    pub noise_sd: Option<f64>,
    pub coef: Option<f64>,
    pub repetitions: Option<usize>,
    pub test_n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: Task,
    pub shape: ShapeConfig,
    pub qut: QutConfig,
    pub solver: SolverConfig,
    pub io: IoConfig,
    /// Master seed; when set, the QUT and solver seeds are derived from it.
    pub seed: Option<u64>,
    pub sim: SimSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::Regression,
            shape: ShapeConfig::default(),
            qut: QutConfig::default(),
            solver: SolverConfig::default(),
            io: IoConfig::default(),
            seed: None,
            sim: SimSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn link(&self) -> Link {
        self.shape.link.unwrap_or(match self.task {
            Task::Regression => Link::Identity,
            Task::Classification => Link::Softmax,
        })
    }

    /// Push the master seed into the component seeds.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.qut.seed = rng::derive_seed(seed, 1);
        self.solver.seed = rng::derive_seed(seed, 2);
    }

    /// Network for `p1` inputs and `m` outputs.
    pub fn network(&self, p1: usize, m: usize) -> Result<NetworkShape> {
        if self.shape.hidden.is_empty() || self.shape.hidden.contains(&0) {
            return Err(Error::Config("shape.hidden must list at least one positive width".into()));
        }
        let mut widths = Vec::with_capacity(self.shape.hidden.len() + 2);
        widths.push(p1);
        widths.extend(&self.shape.hidden);
        widths.push(m);
        NetworkShape::new(widths, self.link(), self.shape.activation)
    }

    pub fn simulation(&self, kind: Option<SimKind>) -> SimConfig {
        let s = &self.sim;
        let base = SimConfig::for_kind(kind.or(s.kind).unwrap_or(SimKind::Linear));
        SimConfig {
            n: s.n.unwrap_or(base.n),
            p1: s.p1.unwrap_or(base.p1),
            s_grid: s.s_grid.clone().unwrap_or(base.s_grid.clone()),
            noise_sd: s.noise_sd.unwrap_or(base.noise_sd),
            coef: s.coef.unwrap_or(base.coef),
            repetitions: s.repetitions.unwrap_or(base.repetitions),
            test_n: s.test_n.unwrap_or(base.test_n),
            seed: self.seed.unwrap_or(0),
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.qut.validate()?;
        self.solver.validate()?;
        self.shape.activation.validate()?;
        if self.task == Task::Classification && self.link() == Link::Identity {
            return Err(Error::Config("classification needs a Softmax or multiclass-Logit link".into()));
        }
        if self.task == Task::Regression && self.link() != Link::Identity {
            return Err(Error::Config("regression uses the Identity link".into()));
        }
        Ok(())
    }
}
