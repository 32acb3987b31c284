//! Noise-injection inference: measured loss change under a layout plan,
//! the first-order prediction, scale quantization and the storage-side
//! quadratic model.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::fd::{self, HVP_STEP};
use crate::layout::{LayoutPlan, QuantLevel};
use crate::network::{flatten, LayerParams, Network};
use crate::rng;
use crate::tensor::{dot, norm_l2, Tensor};

const TAG_PARAM: u64 = 0xDE17A;
const TAG_ACT: u64 = 0xE751;
const TAG_FIXED: u64 = 0xF1CED;
const TAG_STORAGE: u64 = 0x5709;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Independent error uniform in `[-q, q]` per element.
    #[default]
    Uniform,
    /// Round onto the grid of step `2q` (error at most `q`).
    ScaleQuant,
    /// Uniform, except that no error enters where the data does not change
    /// level or moves losslessly into a finer level. The sample itself is
    /// taken as stored at the first site's level.
    DirectionalLossless,
    None,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamNoise {
    /// One draw per layer per trial, shared by every sample.
    #[default]
    PerTrialFrozen,
    None,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationDraw {
    /// Fresh error per element, sample and trial.
    #[default]
    PerSample,
    /// One draw per site per trial, reused for every sample.
    Frozen,
    Off,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub param_noise: ParamNoise,
    pub activation: ActivationDraw,
    /// Parameters are already stored at this level; re-quantizing them to
    /// the same level adds no error.
    #[serde(default)]
    pub storage_level: Option<String>,
}

impl NoiseModel {
    pub fn new(kind: NoiseKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn none() -> Self {
        Self::new(NoiseKind::None)
    }

    /// Error bound of the activation noise at each site; 0 where none enters.
    pub fn activation_bounds(&self, plan: &LayoutPlan) -> Vec<f64> {
        let levels = &plan.activation;
        (0..levels.len())
            .map(|k| match (self.kind, self.activation) {
                (NoiseKind::None, _) | (_, ActivationDraw::Off) => 0.0,
                (NoiseKind::DirectionalLossless, _) if k == 0 => 0.0,
                (NoiseKind::DirectionalLossless, _) if conversion_is_lossless(&levels[k - 1], &levels[k]) => 0.0,
                _ => levels[k].max_error,
            })
            .collect()
    }

    /// Error bound of the parameter noise at each site; 0 where none enters.
    pub fn param_bounds(&self, plan: &LayoutPlan) -> Vec<f64> {
        plan.params
            .iter()
            .map(|l| match (self.kind, self.param_noise, l) {
                (NoiseKind::None, _, _) | (_, ParamNoise::None, _) | (_, _, None) => 0.0,
                (_, _, Some(l)) if self.storage_level.as_deref() == Some(l.id.as_str()) => 0.0,
                (_, _, Some(l)) => l.max_error,
            })
            .collect()
    }
}

fn conversion_is_lossless(from: &QuantLevel, to: &QuantLevel) -> bool {
    from.id == to.id || (to.max_error < from.max_error && to.lossless_upconvert)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub trials: usize,
    pub seed: u64,
    /// Also measure each site noised on its own.
    #[serde(default)]
    pub attribution: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub provenance: String,
    pub model: NoiseModel,
    pub seed: u64,
    pub baseline_loss: f64,
    pub trial_losses: Vec<f64>,
    pub deltas: Vec<f64>,
    pub mean_delta: f64,
    pub std_delta: f64,
    /// Sites whose incoming activation received noise.
    pub activation_sites: usize,
    /// Mean loss change with only site `i` (activation and parameters) noised.
    pub attribution: Option<Vec<f64>>,
}

impl NoiseReport {
    /// Measures every delta against `baseline` instead.
    pub fn rebased(mut self, baseline: f64) -> Self {
        self.baseline_loss = baseline;
        self.deltas = self.trial_losses.iter().map(|l| l - baseline).collect();
        (self.mean_delta, self.std_delta) = mean_std(&self.deltas);
        self
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var))
}

/// Rounds every element onto the grid of step `2q`.
fn snap(t: &mut [f64], q: f64) {
    let step = 2.0 * q;
    for v in t.iter_mut() {
        *v = libm::rint(*v / step) * step;
    }
}

fn add_uniform(t: &mut [f64], q: f64, r: &mut rng::StreamRng) {
    for v in t.iter_mut() {
        *v += rng::symmetric(r, q);
    }
}

fn perturb_params(
    net: &Network,
    model: &NoiseModel,
    bounds: &[f64],
    seed: u64,
    trial: usize,
    only: Option<usize>,
) -> LayerParams {
    let mut params = net.params().clone();
    for (k, layer) in params.iter_mut().enumerate() {
        let q = bounds[k];
        if q == 0.0 || only.is_some_and(|o| o != k) {
            continue;
        }
        let mut r = rng::stream(seed, &[TAG_PARAM, trial as u64, k as u64]);
        for t in layer.iter_mut() {
            match model.kind {
                NoiseKind::ScaleQuant => snap(t.data_mut(), q),
                _ => add_uniform(t.data_mut(), q, &mut r),
            }
        }
    }
    params
}

#[allow(clippy::too_many_arguments)]
fn trial_loss<E: Executor>(
    net: &Network,
    data: &Dataset,
    model: &NoiseModel,
    act: &[f64],
    par: &[f64],
    seed: u64,
    trial: usize,
    only: Option<usize>,
    exec: &E,
) -> Result<f64> {
    let params = perturb_params(net, model, par, seed, trial, only);
    let active = |k: usize| act[k] > 0.0 && only.is_none_or(|o| o == k);
    let frozen: Vec<Option<Tensor>> = match model.activation {
        ActivationDraw::Frozen if model.kind != NoiseKind::ScaleQuant => net
            .site_shapes()
            .iter()
            .enumerate()
            .map(|(k, shape)| {
                active(k).then(|| {
                    let mut t = Tensor::zeros(shape);
                    add_uniform(
                        t.data_mut(),
                        act[k],
                        &mut rng::stream(seed, &[TAG_ACT, trial as u64, k as u64]),
                    );
                    t
                })
            })
            .collect(),
        _ => vec![None; net.num_sites()],
    };
    let sum = net.fold_samples(
        exec,
        data,
        || 0.0,
        |ev, acc, i| {
            let (x, y) = data.sample(i);
            let mut hook = |k: usize, t: &mut Tensor| {
                if !active(k) {
                    return;
                }
                if model.kind == NoiseKind::ScaleQuant {
                    snap(t.data_mut(), act[k]);
                } else if let Some(eps) = &frozen[k] {
                    t.add_assign(eps);
                } else {
                    let mut r = rng::stream(seed, &[TAG_ACT, trial as u64, k as u64, i as u64]);
                    add_uniform(t.data_mut(), act[k], &mut r);
                }
            };
            *acc += ev.loss_with_hook(&params, x, y, &mut hook)?;
            Ok(())
        },
        |a, b| *a += b,
    )?;
    Ok(sum / data.len() as f64)
}

/// Runs `cfg.trials` noisy inference passes over `data` under `plan`.
///
/// All draws are keyed by `(seed, trial, site)` and, for per-sample
/// activation noise, the sample index, so results do not depend on the
/// executor.
pub fn simulate<E: Executor>(
    net: &Network,
    data: &Dataset,
    plan: &LayoutPlan,
    model: &NoiseModel,
    cfg: &SimConfig,
    exec: &E,
) -> Result<NoiseReport> {
    if plan.len() != net.num_sites() || plan.params.len() != net.num_sites() {
        return Err(Error::PlanMismatch {
            plan: plan.len(),
            network: net.num_sites(),
        });
    }
    if cfg.trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    let act = model.activation_bounds(plan);
    let par = model.param_bounds(plan);
    let baseline = net.mean_loss(exec, data)?;
    let mut trial_losses = Vec::with_capacity(cfg.trials);
    for t in 0..cfg.trials {
        trial_losses.push(trial_loss(net, data, model, &act, &par, cfg.seed, t, None, exec)?);
    }
    let attribution = if cfg.attribution {
        let mut out = Vec::with_capacity(net.num_sites());
        for k in 0..net.num_sites() {
            let mut total = 0.0;
            for t in 0..cfg.trials {
                total += trial_loss(net, data, model, &act, &par, cfg.seed, t, Some(k), exec)? - baseline;
            }
            out.push(total / cfg.trials as f64);
        }
        Some(out)
    } else {
        None
    };
    let deltas: Vec<f64> = trial_losses.iter().map(|l| l - baseline).collect();
    let (mean_delta, std_delta) = mean_std(&deltas);
    Ok(NoiseReport {
        provenance: plan.provenance.clone(),
        model: model.clone(),
        seed: cfg.seed,
        baseline_loss: baseline,
        trial_losses,
        deltas,
        mean_delta,
        std_delta,
        activation_sites: act.iter().filter(|&&q| q > 0.0).count(),
        attribution,
    })
}

/// Parameters with one frozen uniform draw of magnitude `level.max_error`
/// added to every layer, standing in for a model restored from coarse storage.
pub fn storage_perturbed(net: &Network, level: &QuantLevel, seed: u64) -> Result<Network> {
    let mut params = net.params().clone();
    for (k, layer) in params.iter_mut().enumerate() {
        let mut r = rng::stream(seed, &[TAG_STORAGE, k as u64]);
        for t in layer.iter_mut() {
            add_uniform(t.data_mut(), level.max_error, &mut r);
        }
    }
    let mut out = net.clone();
    out.set_params(params)?;
    Ok(out)
}

/// Deterministic perturbations: one tensor per site and one per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedNoise {
    pub activation: Vec<Tensor>,
    pub params: LayerParams,
}

impl FixedNoise {
    pub fn zeros(net: &Network) -> Self {
        Self {
            activation: net.site_shapes().iter().map(|s| Tensor::zeros(s)).collect(),
            params: net
                .params()
                .iter()
                .map(|layer| layer.iter().map(|t| Tensor::zeros(t.shape())).collect())
                .collect(),
        }
    }

    /// Uniform draws in `[-q_act[k], q_act[k]]` and `[-q_param[k], q_param[k]]`.
    pub fn uniform(net: &Network, q_act: &[f64], q_param: &[f64], seed: u64) -> Result<Self> {
        if q_act.len() != net.num_sites() || q_param.len() != net.num_layers() {
            return Err(Error::PlanMismatch {
                plan: q_act.len(),
                network: net.num_sites(),
            });
        }
        let mut out = Self::zeros(net);
        for (k, t) in out.activation.iter_mut().enumerate() {
            add_uniform(
                t.data_mut(),
                q_act[k],
                &mut rng::stream(seed, &[TAG_FIXED, 0, k as u64]),
            );
        }
        for (k, layer) in out.params.iter_mut().enumerate() {
            let mut r = rng::stream(seed, &[TAG_FIXED, 1, k as u64]);
            for t in layer.iter_mut() {
                add_uniform(t.data_mut(), q_param[k], &mut r);
            }
        }
        Ok(out)
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            activation: self.activation.iter().map(|t| t.map(|v| a * v)).collect(),
            params: self
                .params
                .iter()
                .map(|layer| layer.iter().map(|t| t.map(|v| a * v)).collect())
                .collect(),
        }
    }

    fn check(&self, net: &Network) -> Result<()> {
        let sites_ok = self.activation.len() == net.num_sites()
            && self
                .activation
                .iter()
                .zip(net.site_shapes())
                .all(|(t, s)| t.shape() == s.as_slice());
        let params_ok = self.params.len() == net.num_layers()
            && self
                .params
                .iter()
                .zip(net.params())
                .all(|(a, b)| a.len() == b.len() && a.iter().zip(b).all(|(s, t)| s.shape() == t.shape()));
        if sites_ok && params_ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "fixed noise does not match the network's shapes".into(),
            ))
        }
    }
}

/// Mean loss with `fixed` added minus the clean mean loss.
pub fn measure_fixed<E: Executor>(net: &Network, data: &Dataset, fixed: &FixedNoise, exec: &E) -> Result<f64> {
    fixed.check(net)?;
    let mut params = net.params().clone();
    for (layer, noise) in params.iter_mut().zip(&fixed.params) {
        for (t, e) in layer.iter_mut().zip(noise) {
            t.add_assign(e);
        }
    }
    let noisy = net.fold_samples(
        exec,
        data,
        || 0.0,
        |ev, acc, i| {
            let (x, y) = data.sample(i);
            *acc += ev.loss_with_hook(&params, x, y, &mut |k, t| t.add_assign(&fixed.activation[k]))?;
            Ok(())
        },
        |a, b| *a += b,
    )?;
    Ok(noisy / data.len() as f64 - net.mean_loss(exec, data)?)
}

/// `(1/m) sum_j sum_i <dl/dh_i, eps_i> + <dl/dw_i, delta_i>` at the clean point.
pub fn predict_first_order<E: Executor>(net: &Network, data: &Dataset, fixed: &FixedNoise, exec: &E) -> Result<f64> {
    fixed.check(net)?;
    let delta = flatten(&fixed.params);
    let sum = net.fold_samples(
        exec,
        data,
        || 0.0,
        |ev, acc, i| {
            let (x, y) = data.sample(i);
            ev.loss(net.params(), x, y)?;
            let g = ev.gradients()?;
            for (gs, eps) in g.sites.iter().zip(&fixed.activation) {
                *acc += gs.dot(eps);
            }
            *acc += dot(&flatten(&g.params), &delta);
            Ok(())
        },
        |a, b| *a += b,
    )?;
    Ok(sum / data.len() as f64)
}

/// Integer codes `round(x / scale)` (ties to even) and their dequantized values.
pub fn quantize_scale(x: &Tensor, scale: f64) -> Result<(Vec<i32>, Tensor)> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidScale(scale));
    }
    let mut codes = Vec::with_capacity(x.len());
    let mut deq = Vec::with_capacity(x.len());
    for (index, &v) in x.data().iter().enumerate() {
        let q = libm::rint(v / scale);
        if !(q >= i32::MIN as f64 && q <= i32::MAX as f64) {
            return Err(Error::Saturation { index, value: v, scale });
        }
        codes.push(q as i32);
        deq.push(q * scale);
    }
    Ok((codes, Tensor::from_raw(x.shape().to_vec(), deq)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StorageEval {
    /// `f(w + delta) - f(w)`, `f` the mean loss over the data.
    pub measured: f64,
    /// `0.5 * delta^T H delta`.
    pub quadratic: f64,
    /// `grad f(w)^T delta`, the term the quadratic model neglects.
    pub linear: f64,
}

/// Measured loss change under a parameter perturbation next to its quadratic model.
pub fn storage_eval<E: Executor>(net: &Network, data: &Dataset, delta: &[f64], exec: &E) -> Result<StorageEval> {
    let w = net.flat_params();
    if delta.len() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            found: delta.len(),
        });
    }
    let (f0, g0) = net.loss_and_gradient(exec, net.params(), data)?;
    let shifted: Vec<f64> = w.iter().zip(delta).map(|(a, b)| a + b).collect();
    let f1 = net.mean_loss_with(exec, &net.unflatten(&shifted)?, data)?;
    let n = norm_l2(delta);
    let quadratic = if n == 0.0 {
        0.0
    } else {
        let v: Vec<f64> = delta.iter().map(|d| d / n).collect();
        let hv = fd::hvp(
            |p| Ok(net.loss_and_gradient(exec, &net.unflatten(p)?, data)?.1),
            &w,
            &v,
            HVP_STEP,
        )?;
        0.5 * n * n * dot(&v, &hv)
    };
    Ok(StorageEval {
        measured: f1 - f0,
        quadratic,
        linear: dot(&g0, delta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Serial;
    use crate::layout::{plan_trivial, QuantLevelSet};
    use crate::network::{LayerSpec, LossKind, NetworkSpec};

    fn single_dense(w: f64) -> Network {
        let spec = NetworkSpec {
            input_shape: vec![1],
            layers: vec![LayerSpec::Dense {
                inputs: 1,
                outputs: 1,
                bias: false,
            }],
            loss: LossKind::Mse,
        };
        Network::from_flat(spec, &[w]).unwrap()
    }

    fn one_sample(x: f64, t: f64) -> Dataset {
        Dataset::new(
            "one",
            vec![Tensor::vector(&[x]).unwrap()],
            vec![Tensor::vector(&[t]).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn fixed_loss_input_noise_closed_form() {
        let net = single_dense(2.0);
        let data = one_sample(1.0, 0.0);
        let mut fixed = FixedNoise::zeros(&net);
        fixed.activation[1] = Tensor::vector(&[0.01]).unwrap();
        let measured = measure_fixed(&net, &data, &fixed, &Serial).unwrap();
        let predicted = predict_first_order(&net, &data, &fixed, &Serial).unwrap();
        assert!((measured - 0.02005).abs() < 1e-15, "{measured}");
        assert!((predicted - 0.02).abs() < 1e-15);
        assert!((measured - predicted - 5e-5).abs() < 1e-15);
        let zero = FixedNoise::zeros(&net);
        assert_eq!(predict_first_order(&net, &data, &zero, &Serial).unwrap(), 0.0);
    }

    #[test]
    fn no_noise_means_zero_delta() {
        let net = single_dense(2.0);
        let data = one_sample(1.0, 0.5);
        let set = QuantLevelSet::partition(crate::layout::sigma_levels(), 2).unwrap();
        let plan = plan_trivial(&set, 2).unwrap();
        let cfg = SimConfig {
            trials: 3,
            seed: 1,
            attribution: true,
        };
        let r = simulate(&net, &data, &plan, &NoiseModel::none(), &cfg, &Serial).unwrap();
        assert!(r.deltas.iter().all(|&d| d == 0.0));
        assert_eq!(r.attribution, Some(vec![0.0, 0.0]));
        assert_eq!(r.activation_sites, 0);
    }

    #[test]
    fn simulate_is_reproducible() {
        let net = single_dense(1.5);
        let data = one_sample(1.0, 0.5);
        let set = QuantLevelSet::partition(crate::layout::sigma_levels(), 2).unwrap();
        let plan = plan_trivial(&set, 2).unwrap();
        let cfg = SimConfig {
            trials: 4,
            seed: 7,
            attribution: false,
        };
        let model = NoiseModel::new(NoiseKind::Uniform);
        let a = simulate(&net, &data, &plan, &model, &cfg, &Serial).unwrap();
        let b = simulate(&net, &data, &plan, &model, &cfg, &Serial).unwrap();
        assert_eq!(a, b);
        assert!(a.deltas.iter().any(|&d| d != 0.0));
        let (m, s) = mean_std(&a.deltas);
        assert_eq!((m, s), (a.mean_delta, a.std_delta));
    }

    #[test]
    fn directional_model_silences_trivial_plan() {
        let set = QuantLevelSet::partition(crate::layout::sigma_levels(), 4).unwrap();
        let plan = plan_trivial(&set, 4).unwrap();
        let model = NoiseModel::new(NoiseKind::DirectionalLossless);
        assert_eq!(model.activation_bounds(&plan), vec![0.0; 4]);
        let mut reversed = plan.clone();
        reversed.activation.reverse();
        assert_eq!(model.activation_bounds(&reversed), vec![0.0, 1e-7, 1e-5, 1e-3]);
    }

    #[test]
    fn storage_level_params_are_lossless() {
        let set = QuantLevelSet::partition(crate::layout::sigma_levels(), 4).unwrap();
        let plan = plan_trivial(&set, 4).unwrap();
        let mut model = NoiseModel::new(NoiseKind::Uniform);
        model.storage_level = Some("sigma1".into());
        assert_eq!(model.param_bounds(&plan), vec![0.0, 1e-5, 1e-7, 1e-10]);
    }

    #[test]
    fn quantize_examples() {
        let (q, d) = quantize_scale(&Tensor::vector(&[2.13, 0.0, 0.05]).unwrap(), 0.1).unwrap();
        assert_eq!(q, vec![21, 0, 0]);
        assert!((d.data()[0] - 2.1).abs() < 1e-15);
        assert!((2.13 - d.data()[0]).abs() <= 0.05);
        assert_eq!(d.data()[1], 0.0);
        assert_eq!((0.05 - d.data()[2]).abs(), 0.05);
        assert!(matches!(
            quantize_scale(&Tensor::vector(&[1.0]).unwrap(), 0.0),
            Err(Error::InvalidScale(_))
        ));
        assert!(matches!(
            quantize_scale(&Tensor::vector(&[1e10]).unwrap(), 1.0),
            Err(Error::Saturation { index: 0, .. })
        ));
    }

    #[test]
    fn storage_quadratic_is_exact_for_quadratic_loss() {
        let net = single_dense(1.0);
        let data = one_sample(1.0, 1.0);
        let e = storage_eval(&net, &data, &[0.01], &Serial).unwrap();
        assert!((e.measured - 5e-5).abs() < 1e-17, "{e:?}");
        assert!((e.quadratic - 5e-5).abs() < 1e-15, "{e:?}");
        let z = storage_eval(&net, &data, &[0.0], &Serial).unwrap();
        assert_eq!((z.measured, z.quadratic), (0.0, 0.0));
    }

    #[test]
    fn rebase_recomputes_statistics() {
        let net = single_dense(1.5);
        let data = one_sample(1.0, 0.5);
        let set = QuantLevelSet::partition(crate::layout::sigma_levels(), 2).unwrap();
        let plan = plan_trivial(&set, 2).unwrap();
        let cfg = SimConfig {
            trials: 2,
            seed: 0,
            attribution: false,
        };
        let r = simulate(&net, &data, &plan, &NoiseModel::default(), &cfg, &Serial).unwrap();
        let shifted = r.clone().rebased(r.baseline_loss - 1.0);
        assert!((shifted.mean_delta - r.mean_delta - 1.0).abs() < 1e-12);
    }
}
