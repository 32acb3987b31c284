//! Command-line interface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use qlayout_core::layout::PlanMode;
use qlayout_core::network::NetworkSpec;
use qlayout_core::noise::{simulate, NoiseKind, NoiseReport, SimConfig};
use qlayout_core::sensitivity::{gradient_profile, hessian_trace_profile, Aggregate, SensitivityProfile};
use qlayout_core::train::{train, TrainConfig};
use qlayout_core::{dataset::generate, GeneratorKind, Network};

use crate::config::{Algorithm, DataSource, ExperimentConfig, ModelSource};
use crate::docs::{self, PlanDoc, Versioned};
use crate::error::{Error, Result};
use crate::experiment::{self, make_plan};
use crate::fixtures::Fixture;
use crate::{checkpoint, compare, data_io, Workers};

#[derive(Debug, Parser)]
#[command(name = "qlayout", version, about = "Gradient-based mixed-precision layout planning")]
pub struct Cli {
    /// Seed for data generation, probes, random plans and noise.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory (meaning depends on the command).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Experiment config (TOML); flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads. Results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset as CSV or IDX.
    GenData {
        #[arg(long, value_parser = parse_generator)]
        generator: GeneratorKind,
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value_t = DataFormat::Csv)]
        format: DataFormat,
    },
    /// Train a fixture network, or a network spec on a dataset, and save a checkpoint.
    Train {
        #[arg(long, value_parser = parse_fixture, conflicts_with = "spec")]
        fixture: Option<Fixture>,
        /// Network spec as JSON (requires data flags).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        grad_norm_target: Option<f64>,
    },
    /// Compute the sensitivity profile of a checkpoint.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        calibration: Option<usize>,
        /// Hutchinson probes per layer; 0 skips the Hessian traces.
        #[arg(long)]
        probes: Option<usize>,
        #[arg(long, value_enum)]
        aggregate: Option<AggregateArg>,
    },
    /// Build a layout plan from a profile.
    Plan {
        #[arg(long)]
        profile: PathBuf,
        /// gradient, trivial, storage_aware, hessian_baseline, bruteforce or random_<i>.
        #[arg(long, default_value = "gradient")]
        algorithm: String,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Run noisy inference under a plan.
    Simulate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_enum)]
        noise: Option<NoiseArg>,
        #[arg(long)]
        eval: Option<usize>,
    },
    /// Run the full pipeline from a config file.
    Experiment {
        #[arg(long)]
        trials: Option<usize>,
        /// Comma-separated algorithm list.
        #[arg(long, value_delimiter = ',')]
        algorithms: Option<Vec<String>>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Merge bundles of one experiment run under different seeds.
    Compare {
        bundles: Vec<PathBuf>,
        #[arg(long, default_value = "gradient")]
        reference: String,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DataFormat {
    Csv,
    Idx,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AggregateArg {
    NormOfSum,
    SumOfNorms,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Shared,
    Split,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum NoiseArg {
    Uniform,
    ScaleQuant,
    DirectionalLossless,
    None,
}

/// Data selection shared by several commands.
#[derive(Debug, Default, Args)]
pub struct DataArgs {
    /// Use a fixture's calibration/evaluation splits.
    #[arg(long, value_parser = parse_fixture)]
    pub fixture_data: Option<Fixture>,
    /// CSV file with a `label` column.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Sample shape for CSV rows, e.g. `1,8,8`.
    #[arg(long, value_delimiter = ',')]
    pub input_shape: Option<Vec<usize>>,
    #[arg(long, num_args = 2, value_names = ["IMAGES", "LABELS"])]
    pub idx: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, value_parser = parse_generator)]
    pub generator: Option<GeneratorKind>,
    #[arg(long, requires = "generator")]
    pub samples: Option<usize>,
}

impl DataArgs {
    fn source(&self, seed: u64) -> Result<Option<DataSource>> {
        let mut found = Vec::new();
        if let Some(f) = self.fixture_data {
            found.push(DataSource::Fixture { fixture: Some(f) });
        }
        if let Some(path) = &self.csv {
            found.push(DataSource::Csv {
                path: path.clone(),
                input_shape: self.input_shape.clone(),
                classes: self.classes,
            });
        }
        if let Some(p) = &self.idx {
            found.push(DataSource::Idx {
                images: p[0].clone(),
                labels: p[1].clone(),
                classes: self.classes,
            });
        }
        if let Some(kind) = self.generator {
            let n = self
                .samples
                .ok_or_else(|| Error::Config("--generator needs --samples".into()))?;
            found.push(DataSource::Generator { kind, n, seed });
        }
        match found.len() {
            0 => Ok(None),
            1 => Ok(found.pop()),
            _ => Err(Error::Config("choose one data source".into())),
        }
    }
}

fn parse_generator(s: &str) -> std::result::Result<GeneratorKind, String> {
    GeneratorKind::parse(s).map_err(|e| e.to_string())
}

fn parse_fixture(s: &str) -> std::result::Result<Fixture, String> {
    Fixture::parse(s).map_err(|e| e.to_string())
}

fn required_out(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| Error::Config("this command needs --out".into()))
}

/// Base config: the `--config` file if given, otherwise defaults around `model`.
fn base_config(cli: &Cli, model: ModelSource) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => {
            let mut c = ExperimentConfig::for_fixture(Fixture::MoonsMlp);
            c.model = model.clone();
            c
        }
    };
    cfg.model = model;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn apply_data(cfg: &mut ExperimentConfig, data: &DataArgs) -> Result<()> {
    if let Some(d) = data.source(cfg.seed)? {
        cfg.data = d;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<String> {
    let workers = cli.workers.map_or_else(Workers::available, Workers::new);
    match &cli.command {
        Command::GenData { generator, n, format } => {
            let out = required_out(&cli)?;
            let d = generate(*generator, *n, cli.seed.unwrap_or(0))?;
            match format {
                DataFormat::Csv => data_io::write_csv(out, &d)?,
                DataFormat::Idx => {
                    let labels = out.with_extension("labels.idx");
                    data_io::write_idx(out, &labels, &d)?;
                }
            }
            Ok(format!("wrote {} samples of {}\n", d.len(), d.id()))
        }
        Command::Train {
            fixture,
            spec,
            data,
            epochs,
            lr,
            grad_norm_target,
        } => {
            let out = required_out(&cli)?;
            let (mut net, train_set, mut tc) = match (fixture, spec) {
                (Some(f), _) => {
                    let seed = cli.seed.unwrap_or(f.init_seed());
                    let mut tc = f.train_config();
                    tc.seed = seed;
                    (Network::build(f.spec(), seed)?, f.data()?.train, tc)
                }
                (None, Some(spec_path)) => {
                    let text = std::fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
                    let spec: NetworkSpec = serde_json::from_str(&text)?;
                    let seed = cli.seed.unwrap_or(0);
                    let src = data
                        .source(seed)?
                        .ok_or_else(|| Error::Config("--spec needs a data source".into()))?;
                    let mut cfg = ExperimentConfig::for_fixture(Fixture::MoonsMlp);
                    cfg.data = src;
                    let all = match cfg.data_fixture()? {
                        Some(f) => f.data()?.train,
                        None => full_dataset(&cfg)?,
                    };
                    (Network::build(spec, seed)?, all, TrainConfig::sgd(0.05, 500))
                }
                (None, None) => return Err(Error::Config("train needs --fixture or --spec".into())),
            };
            if let Some(e) = epochs {
                tc.epochs = *e;
            }
            if let Some(l) = lr {
                tc.lr = *l;
            }
            if let Some(g) = grad_norm_target {
                tc.grad_norm_target = *g;
            }
            let ck = train(&mut net, &train_set, &tc, &workers)?;
            checkpoint::save(out, &ck)?;
            Ok(format!(
                "loss {:.6e}  grad norm {:.3e}  epochs {}\n",
                ck.meta.final_loss, ck.meta.grad_norm, ck.meta.epochs_run
            ))
        }
        Command::Analyze {
            checkpoint: ck_path,
            data,
            calibration,
            probes,
            aggregate,
        } => {
            let out = required_out(&cli)?;
            let mut cfg = base_config(&cli, ModelSource::Checkpoint(ck_path.clone()))?;
            apply_data(&mut cfg, data)?;
            if let Some(c) = calibration {
                cfg.calibration = *c;
            }
            if let Some(p) = probes {
                cfg.probes = *p;
            }
            if let Some(a) = aggregate {
                cfg.aggregate = match a {
                    AggregateArg::NormOfSum => Aggregate::NormOfSum,
                    AggregateArg::SumOfNorms => Aggregate::SumOfNorms,
                };
            }
            cfg.eval = 1;
            let net = checkpoint::load(ck_path)?.network()?;
            let (calib, _) = experiment::load_data(&cfg)?;
            let mut profile = gradient_profile(&net, &calib, cfg.aggregate, &workers)?;
            if cfg.probes > 0 {
                profile.merge(&hessian_trace_profile(&net, &calib, cfg.probes, cfg.seed, &workers)?);
            }
            docs::write_json(out, &docs::profile_doc(&profile))?;
            Ok(profile_table(&profile))
        }
        Command::Plan {
            profile,
            algorithm,
            mode,
        } => {
            let out = required_out(&cli)?;
            let profile: SensitivityProfile = docs::read_doc(profile, "sensitivity_profile")?;
            let mut cfg = base_config(&cli, ModelSource::Fixture(Fixture::MoonsMlp))?;
            if let Some(m) = mode {
                cfg.storage_mode = match m {
                    ModeArg::Shared => PlanMode::Shared,
                    ModeArg::Split => PlanMode::Split,
                };
            }
            if !algorithm.starts_with("random_") {
                Algorithm::parse(algorithm)?;
            }
            let levels = cfg.levels.resolve(profile.len())?;
            let plan = make_plan(algorithm, &cfg, &profile, &levels)?;
            let doc = PlanDoc::new(&plan, &levels);
            docs::write_json(out, &Versioned::new("layout_plan", &doc))?;
            let ids: Vec<&str> = doc.layers.iter().map(|e| e.level_id.as_str()).collect();
            Ok(format!("{}: {}\n", plan.provenance, ids.join(" ")))
        }
        Command::Simulate {
            checkpoint: ck_path,
            plan,
            data,
            trials,
            noise,
            eval,
        } => {
            let out = required_out(&cli)?;
            let mut cfg = base_config(&cli, ModelSource::Checkpoint(ck_path.clone()))?;
            apply_data(&mut cfg, data)?;
            if let Some(t) = trials {
                cfg.trials = *t;
            }
            if let Some(e) = eval {
                cfg.eval = *e;
            }
            if let Some(n) = noise {
                cfg.noise.kind = match n {
                    NoiseArg::Uniform => NoiseKind::Uniform,
                    NoiseArg::ScaleQuant => NoiseKind::ScaleQuant,
                    NoiseArg::DirectionalLossless => NoiseKind::DirectionalLossless,
                    NoiseArg::None => NoiseKind::None,
                };
            }
            let net = checkpoint::load(ck_path)?.network()?;
            let eval_set = eval_only(&cfg)?;
            let plan: PlanDoc = docs::read_doc(plan, "layout_plan")?;
            let plan = plan.to_plan()?;
            let sim = SimConfig {
                trials: cfg.trials,
                seed: cfg.seed,
                attribution: cfg.attribution,
            };
            let report = simulate(&net, &eval_set, &plan, &cfg.noise.model(), &sim, &workers)?;
            docs::write_json(out, &docs::report_doc(&report))?;
            Ok(report_line(&report))
        }
        Command::Experiment {
            trials,
            algorithms,
            checkpoint: ck,
        } => {
            let out = required_out(&cli)?;
            let path = cli
                .config
                .as_deref()
                .ok_or_else(|| Error::Config("experiment needs --config".into()))?;
            let mut cfg = ExperimentConfig::load(path)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(t) = trials {
                cfg.trials = *t;
            }
            if let Some(a) = algorithms {
                cfg.algorithms = a.iter().map(|s| Algorithm::parse(s)).collect::<Result<_>>()?;
            }
            if let Some(c) = ck {
                cfg.model = ModelSource::Checkpoint(c.clone());
            }
            cfg.validate()?;
            let outcome = experiment::run_to_dir(&cfg, &workers, out)?;
            Ok(experiment::summary(&outcome.bundle, Some(&outcome.timings)))
        }
        Command::Compare { bundles, reference } => {
            let loaded = bundles
                .iter()
                .map(|p| experiment::read_bundle(p))
                .collect::<Result<Vec<_>>>()?;
            let c = compare::compare(&loaded, reference)?;
            let text = compare::summary(&c);
            if let Some(out) = &cli.out {
                std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
                docs::write_json(&out.join("comparison.json"), &Versioned::new("comparison", &c))?;
                compare::write_scatter_csv(&out.join("scatter.csv"), &loaded)?;
                std::fs::write(out.join("comparison.txt"), &text).map_err(|e| Error::io(out, e))?;
            }
            Ok(text)
        }
    }
}

/// Every sample of a non-fixture data source.
fn full_dataset(cfg: &ExperimentConfig) -> Result<qlayout_core::Dataset> {
    Ok(match &cfg.data {
        DataSource::Generator { kind, n, seed } => generate(*kind, *n, *seed)?,
        DataSource::Csv {
            path,
            input_shape,
            classes,
        } => data_io::load_csv(path, input_shape.as_deref(), *classes)?,
        DataSource::Idx {
            images,
            labels,
            classes,
        } => data_io::load_idx(images, labels, *classes)?,
        DataSource::Fixture { .. } => return Err(Error::Config("expected a file or generator data source".into())),
    })
}

/// The evaluation set: the fixture's held-out split, or the first `eval`
/// samples of any other source.
fn eval_only(cfg: &ExperimentConfig) -> Result<qlayout_core::Dataset> {
    if let Some(f) = cfg.data_fixture()? {
        return Ok(f.data()?.eval.head(cfg.eval)?);
    }
    let all = full_dataset(cfg)?;
    Ok(all.head(cfg.eval)?)
}

fn profile_table(p: &SensitivityProfile) -> String {
    let mut s = format!(
        "{:>3} {:<16} {:>12} {:>12} {:>12}\n",
        "k", "stage", "input", "param", "trace"
    );
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4e}"));
    for (k, l) in p.layers.iter().enumerate() {
        let stage = &l.kind;
        s.push_str(&format!(
            "{k:>3} {stage:<16} {:>12} {:>12} {:>12}\n",
            fmt(l.input_grad_norm),
            fmt(l.param_grad_norm),
            fmt(l.hessian_trace.map(|t| t.mean))
        ));
    }
    s
}

fn report_line(r: &NoiseReport) -> String {
    format!(
        "{}: baseline {:.6e}  mean dloss {:+.4e}  std {:.3e}  ({} trials)\n",
        r.provenance,
        r.baseline_loss,
        r.mean_delta,
        r.std_delta,
        r.deltas.len()
    )
}
