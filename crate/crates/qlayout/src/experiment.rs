//! The end-to-end pipeline: load, profile, plan, simulate, report.
//!
//! `bundle.json` holds every result and is byte-identical across repeated
//! runs and worker counts. Wall-clock times go to `timings.json` and
//! `summary.txt` only.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qlayout_core::layout::{
    bound_value, plan_bruteforce, plan_gradient, plan_hessian_baseline, plan_random, plan_storage_aware, plan_trivial,
    LayoutPlan, Objective, QuantLevelSet,
};
use qlayout_core::noise::{simulate, storage_perturbed, NoiseReport, SimConfig};
use qlayout_core::sensitivity::{gradient_profile, hessian_trace_profile, SensitivityProfile};
use qlayout_core::train::Checkpoint;
use qlayout_core::{dataset::generate, Dataset, Network};

use crate::config::{DataSource, ExperimentConfig, ModelSource};
use crate::docs::{self, PlanDoc, Versioned};
use crate::error::{Error, Result};
use crate::{checkpoint, data_io, Workers};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const BUNDLE_KIND: &str = "experiment_bundle";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub source: String,
    pub checkpoint_sha256: String,
    pub param_count: usize,
    pub sites: usize,
    pub train_loss: f64,
    pub train_grad_norm: f64,
}

/// One row of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub algorithm: String,
    pub mean_delta: f64,
    pub std_delta: f64,
    pub std_error: f64,
    pub mean_abs_delta: f64,
    pub bound_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub tool_version: String,
    pub config_sha256: String,
    /// Hash of everything but the seed; bundles sharing it can be compared.
    pub experiment_key: String,
    pub config: ExperimentConfig,
    pub model: ModelInfo,
    pub calibration_set: String,
    pub eval_set: String,
    pub levels: QuantLevelSet,
    /// Eval loss of the unperturbed model.
    pub baseline_loss: f64,
    /// Eval loss of the model restored from storage, when a storage level is set.
    pub stored_loss: Option<f64>,
    pub profile: SensitivityProfile,
    pub plans: Vec<PlanDoc>,
    pub reports: Vec<NoiseReport>,
    pub table: Vec<Row>,
    /// Spearman correlation between bound value and mean loss change.
    pub bound_rank_correlation: Option<f64>,
}

impl Bundle {
    pub fn row(&self, algorithm: &str) -> Option<&Row> {
        self.table.iter().find(|r| r.algorithm == algorithm)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub name: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stages: Vec<Timing>,
    pub algorithms: Vec<Timing>,
}

impl Timings {
    fn record(list: &mut Vec<Timing>, name: &str, since: Instant) {
        list.push(Timing {
            name: name.into(),
            seconds: since.elapsed().as_secs_f64(),
        });
    }

    pub fn algorithm(&self, name: &str) -> Option<f64> {
        self.algorithms.iter().find(|t| t.name == name).map(|t| t.seconds)
    }
}

pub struct Outcome {
    pub bundle: Bundle,
    pub timings: Timings,
    /// Present when the model was trained during the run.
    pub trained: Option<Checkpoint>,
}

pub const STAGES: [&str; 5] = ["model", "data", "profile", "plan", "simulate"];

fn experiment_key(cfg: &ExperimentConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.seed = 0;
    Ok(sha256_hex(c.to_toml()?.as_bytes()))
}

fn load_model(cfg: &ExperimentConfig, workers: &Workers) -> Result<(Checkpoint, String, Option<Checkpoint>)> {
    match &cfg.model {
        ModelSource::Checkpoint(path) => Ok((checkpoint::load(path)?, path.display().to_string(), None)),
        ModelSource::Fixture(f) => {
            let ck = f.train(&f.train_config(), workers)?;
            Ok((ck.clone(), format!("fixture:{}", f.name()), Some(ck)))
        }
    }
}

/// Calibration and evaluation sets, disjoint.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    if let Some(f) = cfg.data_fixture()? {
        let d = f.data()?;
        let (n_train, n_eval) = f.sizes();
        if cfg.calibration > n_train || cfg.eval > n_eval {
            return Err(Error::Config(format!(
                "fixture {} has {n_train} training and {n_eval} evaluation samples",
                f.name()
            )));
        }
        return Ok((d.train.head(cfg.calibration)?, d.eval.head(cfg.eval)?));
    }
    let all = match &cfg.data {
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
        DataSource::Fixture { .. } => unreachable!("handled above"),
    };
    let (c, e) = (cfg.calibration, cfg.eval);
    if c + e > all.len() {
        return Err(Error::Config(format!(
            "need {c} calibration + {e} evaluation samples, dataset has {}",
            all.len()
        )));
    }
    let idx: Vec<usize> = (0..c + e).collect();
    Ok((
        all.subset(&idx[..c], format!("{}[0..{c}]", all.id()))?,
        all.subset(&idx[c..], format!("{}[{c}..{}]", all.id(), c + e))?,
    ))
}

/// Builds the plan for one algorithm name.
pub fn make_plan(
    name: &str,
    cfg: &ExperimentConfig,
    profile: &SensitivityProfile,
    levels: &QuantLevelSet,
) -> Result<LayoutPlan> {
    let mask: Vec<bool> = (0..profile.len()).map(|k| profile.has_params(k)).collect();
    let mut plan = match name {
        "gradient" => plan_gradient(profile, levels)?,
        "trivial" => plan_trivial(levels, profile.len())?.with_param_mask(&mask),
        "storage_aware" => plan_storage_aware(profile, profile, levels, cfg.storage_mode)?,
        "hessian_baseline" => plan_hessian_baseline(profile, levels)?,
        "bruteforce" => plan_bruteforce(profile, levels, Objective::Bound)?.plan,
        other => match other.strip_prefix("random_").and_then(|i| i.parse().ok()) {
            Some(i) => plan_random(profile, levels, cfg.seed, i)?,
            None => return Err(Error::Config(format!("unknown algorithm `{other}`"))),
        },
    };
    plan.provenance = name.into();
    Ok(plan)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - mean) * (y - mean);
        saa += (x - mean) * (x - mean);
        sbb += (y - mean) * (y - mean);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

fn row(report: &NoiseReport, bound: f64) -> Row {
    let n = report.deltas.len() as f64;
    Row {
        algorithm: report.provenance.clone(),
        mean_delta: report.mean_delta,
        std_delta: report.std_delta,
        std_error: report.std_delta / n.sqrt(),
        mean_abs_delta: report.deltas.iter().map(|d| d.abs()).sum::<f64>() / n,
        bound_value: bound,
    }
}

/// Runs the whole pipeline in memory. `on_stage` is called after each stage.
pub fn run(cfg: &ExperimentConfig, workers: &Workers, mut on_stage: impl FnMut(&str)) -> Result<Outcome> {
    cfg.validate()?;
    let mut timings = Timings::default();

    let t = Instant::now();
    let (ck, source, trained) = load_model(cfg, workers)?;
    let net = ck.network()?;
    let model = ModelInfo {
        source,
        checkpoint_sha256: sha256_hex(&checkpoint::encode(&ck)?),
        param_count: net.param_count(),
        sites: net.num_sites(),
        train_loss: ck.meta.final_loss,
        train_grad_norm: ck.meta.grad_norm,
    };
    Timings::record(&mut timings.stages, "model", t);
    on_stage("model");

    let t = Instant::now();
    let (calib, eval) = load_data(cfg)?;
    net.check_dataset(&calib)?;
    net.check_dataset(&eval)?;
    let levels = cfg.levels.resolve(net.num_sites())?;
    let baseline_loss = net.mean_loss(workers, &eval)?;
    let (work, stored_loss): (Network, Option<f64>) = match &cfg.noise.storage_level {
        None => (net, None),
        Some(id) => {
            let level = levels
                .entries()
                .iter()
                .find(|e| &e.level.id == id)
                .map(|e| e.level.clone())
                .ok_or_else(|| Error::Config(format!("storage level `{id}` is not in the level set")))?;
            let stored = storage_perturbed(&net, &level, cfg.seed)?;
            let loss = stored.mean_loss(workers, &eval)?;
            (stored, Some(loss))
        }
    };
    Timings::record(&mut timings.stages, "data", t);
    on_stage("data");

    let t = Instant::now();
    let names = cfg.algorithm_names();
    let mut profile = gradient_profile(&work, &calib, cfg.aggregate, workers)?;
    if names.iter().any(|n| n == "hessian_baseline") {
        profile.merge(&hessian_trace_profile(&work, &calib, cfg.probes, cfg.seed, workers)?);
    }
    Timings::record(&mut timings.stages, "profile", t);
    on_stage("profile");

    let t = Instant::now();
    let plans = names
        .iter()
        .map(|n| make_plan(n, cfg, &profile, &levels))
        .collect::<Result<Vec<_>>>()?;
    Timings::record(&mut timings.stages, "plan", t);
    on_stage("plan");

    let t = Instant::now();
    let sim = SimConfig {
        trials: cfg.trials,
        seed: cfg.seed,
        attribution: cfg.attribution,
    };
    let model_noise = cfg.noise.model();
    let mut reports = Vec::with_capacity(plans.len());
    let mut table = Vec::with_capacity(plans.len());
    for plan in &plans {
        let ta = Instant::now();
        let mut report = simulate(&work, &eval, plan, &model_noise, &sim, workers)?;
        if stored_loss.is_some() {
            report = report.rebased(baseline_loss);
        }
        table.push(row(&report, bound_value(&profile, plan)?));
        reports.push(report);
        Timings::record(&mut timings.algorithms, &plan.provenance, ta);
    }
    Timings::record(&mut timings.stages, "simulate", t);
    on_stage("simulate");

    let bounds: Vec<f64> = table.iter().map(|r| r.bound_value).collect();
    let means: Vec<f64> = table.iter().map(|r| r.mean_delta).collect();
    let bundle = Bundle {
        tool_version: TOOL_VERSION.into(),
        config_sha256: sha256_hex(cfg.to_toml()?.as_bytes()),
        experiment_key: experiment_key(cfg)?,
        config: cfg.clone(),
        model,
        calibration_set: calib.id().into(),
        eval_set: eval.id().into(),
        levels: levels.clone(),
        baseline_loss,
        stored_loss,
        profile,
        plans: plans.iter().map(|p| PlanDoc::new(p, &levels)).collect(),
        reports,
        table,
        bound_rank_correlation: spearman(&bounds, &means),
    };
    Ok(Outcome {
        bundle,
        timings,
        trained,
    })
}

pub fn bundle_json(bundle: &Bundle) -> Result<String> {
    docs::to_json(&Versioned::new(BUNDLE_KIND, bundle))
}

pub fn read_bundle(path: &Path) -> Result<Bundle> {
    docs::read_doc(path, BUNDLE_KIND)
}

/// Plain-text comparison table.
pub fn summary(bundle: &Bundle, timings: Option<&Timings>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "model        {}", bundle.model.source);
    let _ = writeln!(s, "eval set     {}", bundle.eval_set);
    let _ = writeln!(
        s,
        "seed         {}  trials {}",
        bundle.config.seed, bundle.config.trials
    );
    let _ = writeln!(
        s,
        "\n{:<18} {:>13} {:>11} {:>11} {:>11} {:>9}",
        "algorithm", "mean dloss", "std", "mean |d|", "bound", "wall s"
    );
    let _ = writeln!(s, "{:<18} {:>13.6e}", "baseline loss", bundle.baseline_loss);
    if let Some(l) = bundle.stored_loss {
        let _ = writeln!(s, "{:<18} {:>13.6e}", "stored loss", l);
    }
    for r in &bundle.table {
        let wall = timings
            .and_then(|t| t.algorithm(&r.algorithm))
            .map_or(String::from("-"), |w| format!("{w:.2}"));
        let _ = writeln!(
            s,
            "{:<18} {:>+13.4e} {:>11.3e} {:>11.3e} {:>11.3e} {:>9}",
            r.algorithm, r.mean_delta, r.std_delta, r.mean_abs_delta, r.bound_value, wall
        );
    }
    if let Some(rho) = bundle.bound_rank_correlation {
        let _ = writeln!(s, "\nrank correlation (bound vs mean dloss): {rho:+.3}");
    }
    s
}

fn manifest(cfg_hash: &str, seed: u64, stage: &str) -> String {
    format!("tool_version: {TOOL_VERSION}\nconfig_sha256: {cfg_hash}\nseed: {seed}\ncompleted_stage: {stage}\n")
}

/// Runs the pipeline and writes every output file into `out`.
///
/// `MANIFEST` is rewritten after each stage, so an interrupted run shows
/// how far it got.
pub fn run_to_dir(cfg: &ExperimentConfig, workers: &Workers, out: &Path) -> Result<Outcome> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let cfg_text = cfg.to_toml()?;
    let cfg_hash = sha256_hex(cfg_text.as_bytes());
    let write = |name: &str, text: &str| -> Result<()> {
        let p = out.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("config.toml", &cfg_text)?;
    write("MANIFEST", &manifest(&cfg_hash, cfg.seed, "started"))?;
    let mut stage_err = None;
    let outcome = run(cfg, workers, |stage| {
        if let Err(e) = write("MANIFEST", &manifest(&cfg_hash, cfg.seed, stage)) {
            stage_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = stage_err {
        return Err(e);
    }
    let b = &outcome.bundle;
    if let Some(ck) = &outcome.trained {
        checkpoint::save(&out.join("checkpoint.prcl"), ck)?;
    }
    write("bundle.json", &bundle_json(b)?)?;
    docs::write_json(&out.join("profile.json"), &docs::profile_doc(&b.profile))?;
    let plans = out.join("plans");
    std::fs::create_dir_all(&plans).map_err(|e| Error::io(&plans, e))?;
    for p in &b.plans {
        docs::write_json(
            &plans.join(format!("{}.json", p.provenance)),
            &Versioned::new("layout_plan", p),
        )?;
    }
    let named: Vec<(String, NoiseReport)> = b.reports.iter().map(|r| (r.provenance.clone(), r.clone())).collect();
    docs::write_trials_csv(&out.join("trials.csv"), &named)?;
    write("summary.txt", &summary(b, Some(&outcome.timings)))?;
    docs::write_json(&out.join("timings.json"), &outcome.timings)?;
    write("MANIFEST", &manifest(&cfg_hash, cfg.seed, "done"))?;
    Ok(outcome)
}
