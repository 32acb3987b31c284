//! Experiment configuration: a versioned TOML document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qlayout_core::layout::{sigma_levels, PlanMode, QuantLevel, QuantLevelSet};
use qlayout_core::noise::{ActivationDraw, NoiseKind, NoiseModel, ParamNoise};
use qlayout_core::sensitivity::{Aggregate, DEFAULT_CALIBRATION};
use qlayout_core::GeneratorKind;

use crate::error::{Error, Result};
use crate::fixtures::Fixture;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Where the trained network comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    /// Trained from scratch with the fixture's recipe.
    Fixture(Fixture),
    /// A checkpoint file; relative paths resolve against the config file.
    Checkpoint(PathBuf),
}

/// Where calibration and evaluation samples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Calibration from the head of a fixture's training split, evaluation
    /// from its held-out split. Defaults to the model's fixture.
    Fixture {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fixture: Option<Fixture>,
    },
    Generator {
        kind: GeneratorKind,
        n: usize,
        seed: u64,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        input_shape: Option<Vec<usize>>,
        #[serde(default)]
        classes: Option<usize>,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        classes: Option<usize>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        Self::Fixture { fixture: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelDef {
    pub id: String,
    pub max_error: f64,
    #[serde(default = "yes")]
    pub lossless_upconvert: bool,
    /// Multiplicity; when every level omits it the layers are split as
    /// evenly as possible, coarsest levels taking the remainder.
    #[serde(default)]
    pub count: Option<usize>,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Levels {
    /// 1e-3, 1e-5, 1e-7, 1e-10.
    #[default]
    Sigma,
    Explicit(Vec<LevelDef>),
}

impl Levels {
    pub fn resolve(&self, n_sites: usize) -> Result<QuantLevelSet> {
        let defs = match self {
            Levels::Sigma => return Ok(QuantLevelSet::partition(sigma_levels(), n_sites)?),
            Levels::Explicit(defs) => defs,
        };
        let level = |d: &LevelDef| QuantLevel {
            id: d.id.clone(),
            max_error: d.max_error,
            lossless_upconvert: d.lossless_upconvert,
        };
        let counted = defs.iter().filter(|d| d.count.is_some()).count();
        if counted == 0 {
            return Ok(QuantLevelSet::partition(defs.iter().map(level).collect(), n_sites)?);
        }
        if counted != defs.len() {
            return Err(Error::Config("give a count for every level or for none".into()));
        }
        let set = QuantLevelSet::new(defs.iter().map(|d| (level(d), d.count.unwrap())).collect())?;
        if set.total() != n_sites {
            return Err(Error::Config(format!(
                "level counts sum to {}, network has {n_sites} sites",
                set.total()
            )));
        }
        Ok(set)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Gradient,
    Trivial,
    StorageAware,
    HessianBaseline,
    Bruteforce,
    /// Expands to `random_k` plans `random_0 .. random_{k-1}`.
    Random,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Self::Gradient => "gradient",
            Self::Trivial => "trivial",
            Self::StorageAware => "storage_aware",
            Self::HessianBaseline => "hessian_baseline",
            Self::Bruteforce => "bruteforce",
            Self::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [
            Self::Gradient,
            Self::Trivial,
            Self::StorageAware,
            Self::HessianBaseline,
            Self::Bruteforce,
            Self::Random,
        ]
        .into_iter()
        .find(|a| a.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub kind: NoiseKind,
    pub activation: ActivationDraw,
    pub param_noise: ParamNoise,
    /// Id of the level the model is stored at. When set, the model is first
    /// perturbed at that level and every delta is measured against the
    /// unperturbed loss.
    pub storage_level: Option<String>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Uniform,
            activation: ActivationDraw::PerSample,
            param_noise: ParamNoise::PerTrialFrozen,
            storage_level: None,
        }
    }
}

impl NoiseSection {
    pub fn model(&self) -> NoiseModel {
        NoiseModel {
            kind: self.kind,
            param_noise: self.param_noise,
            activation: self.activation,
            storage_level: self.storage_level.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSource,
    #[serde(default)]
    pub data: DataSource,
    #[serde(default = "default_calibration")]
    pub calibration: usize,
    #[serde(default = "default_eval")]
    pub eval: usize,
    #[serde(default)]
    pub levels: Levels,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Hutchinson probes per layer for the Hessian baseline.
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default = "default_random_k")]
    pub random_k: usize,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub aggregate: Aggregate,
    #[serde(default = "default_storage_mode")]
    pub storage_mode: PlanMode,
    #[serde(default)]
    pub attribution: bool,
}

fn default_calibration() -> usize {
    DEFAULT_CALIBRATION
}
fn default_eval() -> usize {
    256
}
fn default_algorithms() -> Vec<Algorithm> {
    vec![Algorithm::Gradient, Algorithm::HessianBaseline, Algorithm::Random]
}
fn default_trials() -> usize {
    20
}
fn default_probes() -> usize {
    100
}
fn default_random_k() -> usize {
    10
}
fn default_storage_mode() -> PlanMode {
    PlanMode::Shared
}

impl ExperimentConfig {
    pub fn for_fixture(fixture: Fixture) -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 0,
            model: ModelSource::Fixture(fixture),
            data: DataSource::default(),
            calibration: default_calibration(),
            eval: default_eval(),
            levels: Levels::Sigma,
            algorithms: default_algorithms(),
            trials: default_trials(),
            probes: default_probes(),
            random_k: default_random_k(),
            noise: NoiseSection::default(),
            aggregate: Aggregate::default(),
            storage_mode: default_storage_mode(),
            attribution: false,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Probe {
            schema_version: Option<u32>,
        }
        let probe: Probe = toml::from_str(text)?;
        match probe.schema_version {
            Some(CONFIG_SCHEMA_VERSION) => {}
            Some(found) => {
                return Err(Error::Schema {
                    kind: "experiment_config".into(),
                    found,
                    expected: CONFIG_SCHEMA_VERSION,
                })
            }
            None => return Err(Error::Config("missing `schema_version`".into())),
        }
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let ModelSource::Checkpoint(p) = &mut self.model {
            fix(p);
        }
        match &mut self.data {
            DataSource::Csv { path, .. } => fix(path),
            DataSource::Idx { images, labels, .. } => {
                fix(images);
                fix(labels);
            }
            _ => {}
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.calibration == 0 || self.eval == 0 {
            return Err(Error::Config("calibration and eval sizes must be positive".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithms selected".into()));
        }
        if self.algorithms.contains(&Algorithm::HessianBaseline) && self.probes == 0 {
            return Err(Error::Config("hessian_baseline needs at least one probe".into()));
        }
        self.data_fixture()?;
        Ok(())
    }

    /// The fixture whose data splits are used, if the data source is a fixture.
    pub fn data_fixture(&self) -> Result<Option<Fixture>> {
        match (&self.data, &self.model) {
            (DataSource::Fixture { fixture: Some(f) }, _) => Ok(Some(*f)),
            (DataSource::Fixture { fixture: None }, ModelSource::Fixture(f)) => Ok(Some(*f)),
            (DataSource::Fixture { fixture: None }, _) => Err(Error::Config(
                "data source `fixture` needs a fixture name when the model is a checkpoint".into(),
            )),
            _ => Ok(None),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Algorithms in run order, duplicates removed.
    pub fn algorithm_names(&self) -> Vec<String> {
        let mut algs = self.algorithms.clone();
        algs.sort();
        algs.dedup();
        let mut out = Vec::new();
        for a in algs {
            match a {
                Algorithm::Random => out.extend((0..self.random_k).map(|i| format!("random_{i}"))),
                a => out.push(a.name().to_string()),
            }
        }
        out
    }
}
