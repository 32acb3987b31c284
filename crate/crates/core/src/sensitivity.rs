//! Per-layer sensitivity statistics over a calibration set.
//!
//! * input-gradient norm: `|| sum_j dl/dh ||_2` for the tensor `h` entering
//!   each stage, summed over calibration samples before taking the norm;
//! * parameter-gradient norm: the same statistic for each layer's parameters;
//! * Hessian trace: Hutchinson estimate of `tr(d^2 f / dw_i^2)` per layer,
//!   `f` the mean calibration loss, with Rademacher probes and central
//!   difference Hessian-vector products restricted to that layer.
//!
//! The `1/m` factor is not applied to the gradient norms; it is a common
//! positive factor and does not change any ordering.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::exec::{Executor, Serial};
use crate::fd::HVP_STEP;
use crate::network::{outer_index, Network};
use crate::rng;
use crate::tensor::norm_l2;

/// Calibration samples used when none is specified.
pub const DEFAULT_CALIBRATION: usize = 256;

const TAG_PROBE: u64 = 0x7ACE;

/// How per-sample gradients are combined into one number per layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    /// `|| sum_j g_j ||`. Opposite per-sample gradients can cancel.
    #[default]
    NormOfSum,
    /// `sum_j || g_j ||`. Ablation variant.
    SumOfNorms,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub probes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSensitivity {
    /// Stage index, input to output; the last stage is the loss.
    pub layer_index: usize,
    /// Position in the nested composite, loss = 1.
    pub outer_index: usize,
    pub kind: String,
    pub param_count: usize,
    pub input_grad_norm: Option<f64>,
    pub param_grad_norm: Option<f64>,
    pub hessian_trace: Option<TraceEstimate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityProfile {
    pub layers: Vec<LayerSensitivity>,
    pub sample_count: usize,
    pub dataset_id: String,
    pub seed: Option<u64>,
    pub aggregate: Aggregate,
}

impl SensitivityProfile {
    fn skeleton(net: &Network, calib: &Dataset) -> Self {
        let layers = (0..net.num_sites())
            .map(|k| LayerSensitivity {
                layer_index: k,
                outer_index: outer_index(net.num_layers(), k),
                kind: net.stage_name(k).to_string(),
                param_count: net.layer_param_count(k),
                input_grad_norm: None,
                param_grad_norm: None,
                hessian_trace: None,
            })
            .collect();
        Self {
            layers,
            sample_count: calib.len(),
            dataset_id: calib.id().to_string(),
            seed: None,
            aggregate: Aggregate::NormOfSum,
        }
    }

    /// Profile with only input-gradient norms, for planning without a network.
    /// Every layer is treated as parameter-free.
    pub fn from_input_norms(norms: &[f64], sample_count: usize) -> Self {
        let n = norms.len();
        let layers = norms
            .iter()
            .enumerate()
            .map(|(k, &v)| LayerSensitivity {
                layer_index: k,
                outer_index: n - k,
                kind: "layer".to_string(),
                param_count: 0,
                input_grad_norm: Some(v),
                param_grad_norm: None,
                hessian_trace: None,
            })
            .collect();
        Self {
            layers,
            sample_count,
            dataset_id: String::new(),
            seed: None,
            aggregate: Aggregate::NormOfSum,
        }
    }

    /// Sets parameter-gradient norms; layers with `Some` are marked as parameter-bearing.
    pub fn with_param_norms(mut self, norms: &[Option<f64>]) -> Self {
        for (l, v) in self.layers.iter_mut().zip(norms) {
            l.param_grad_norm = *v;
            if v.is_some() && l.param_count == 0 {
                l.param_count = 1;
            }
        }
        self
    }

    /// Sets exact Hessian traces; layers with `Some` are marked as parameter-bearing.
    pub fn with_traces(mut self, traces: &[Option<f64>]) -> Self {
        for (l, v) in self.layers.iter_mut().zip(traces) {
            l.hessian_trace = v.map(|mean| TraceEstimate {
                mean,
                std_error: 0.0,
                probes: 0,
            });
            if v.is_some() && l.param_count == 0 {
                l.param_count = 1;
            }
        }
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn input_norms(&self) -> Result<Vec<f64>> {
        self.layers
            .iter()
            .map(|l| {
                l.input_grad_norm.ok_or(Error::MissingStatistic {
                    stat: "input_grad_norm",
                    layer: l.layer_index,
                })
            })
            .collect()
    }

    /// Parameter-gradient norms; `None` for parameter-free layers.
    pub fn param_norms(&self) -> Result<Vec<Option<f64>>> {
        self.layers
            .iter()
            .map(|l| match (l.param_count > 0, l.param_grad_norm) {
                (false, _) => Ok(None),
                (true, Some(v)) => Ok(Some(v)),
                (true, None) => Err(Error::MissingStatistic {
                    stat: "param_grad_norm",
                    layer: l.layer_index,
                }),
            })
            .collect()
    }

    /// Hessian-trace means; `None` for parameter-free layers.
    pub fn traces(&self) -> Result<Vec<Option<f64>>> {
        self.layers
            .iter()
            .map(|l| match (l.param_count > 0, l.hessian_trace) {
                (false, _) => Ok(None),
                (true, Some(t)) => Ok(Some(t.mean)),
                (true, None) => Err(Error::MissingStatistic {
                    stat: "hessian_trace",
                    layer: l.layer_index,
                }),
            })
            .collect()
    }

    pub fn has_params(&self, layer: usize) -> bool {
        self.layers[layer].param_count > 0
    }

    /// Fills statistics absent here from `other` (same layers).
    pub fn merge(&mut self, other: &SensitivityProfile) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.input_grad_norm = a.input_grad_norm.or(b.input_grad_norm);
            a.param_grad_norm = a.param_grad_norm.or(b.param_grad_norm);
            a.hessian_trace = a.hessian_trace.or(b.hessian_trace);
        }
        self.seed = self.seed.or(other.seed);
    }
}

struct GradSums {
    sites: Vec<Vec<f64>>,
    site_norms: Vec<f64>,
    params: Vec<Vec<f64>>,
    param_norms: Vec<f64>,
}

impl GradSums {
    fn zeros(net: &Network) -> Self {
        Self {
            sites: net
                .site_shapes()
                .iter()
                .map(|s| vec![0.0; s.iter().product()])
                .collect(),
            site_norms: vec![0.0; net.num_sites()],
            params: (0..net.num_layers())
                .map(|k| vec![0.0; net.layer_param_count(k)])
                .collect(),
            param_norms: vec![0.0; net.num_layers()],
        }
    }

    fn merge(&mut self, other: GradSums) {
        for (a, b) in self.sites.iter_mut().zip(other.sites) {
            add(a, &b);
        }
        for (a, b) in self.params.iter_mut().zip(other.params) {
            add(a, &b);
        }
        add(&mut self.site_norms, &other.site_norms);
        add(&mut self.param_norms, &other.param_norms);
    }
}

fn add(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

fn gradient_sums<E: Executor>(net: &Network, calib: &Dataset, exec: &E) -> Result<GradSums> {
    net.fold_samples(
        exec,
        calib,
        || GradSums::zeros(net),
        |ev, acc, i| {
            let (x, y) = calib.sample(i);
            ev.loss(net.params(), x, y)?;
            let g = ev.gradients()?;
            for (k, site) in g.sites.iter().enumerate() {
                add(&mut acc.sites[k], site.data());
                acc.site_norms[k] += site.norm_l2();
            }
            for (k, layer) in g.params.iter().enumerate() {
                let mut sq = 0.0;
                let mut offset = 0;
                for t in layer {
                    add(&mut acc.params[k][offset..offset + t.len()], t.data());
                    sq += t.data().iter().map(|v| v * v).sum::<f64>();
                    offset += t.len();
                }
                acc.param_norms[k] += libm::sqrt(sq);
            }
            Ok(())
        },
        GradSums::merge,
    )
}

/// Input- and parameter-gradient norms in one pass over `calib`.
pub fn gradient_profile<E: Executor>(
    net: &Network,
    calib: &Dataset,
    aggregate: Aggregate,
    exec: &E,
) -> Result<SensitivityProfile> {
    let sums = gradient_sums(net, calib, exec)?;
    let mut profile = SensitivityProfile::skeleton(net, calib);
    profile.aggregate = aggregate;
    for (k, l) in profile.layers.iter_mut().enumerate() {
        l.input_grad_norm = Some(match aggregate {
            Aggregate::NormOfSum => norm_l2(&sums.sites[k]),
            Aggregate::SumOfNorms => sums.site_norms[k],
        });
        if k < net.num_layers() && net.stage_has_params(k) {
            l.param_grad_norm = Some(match aggregate {
                Aggregate::NormOfSum => norm_l2(&sums.params[k]),
                Aggregate::SumOfNorms => sums.param_norms[k],
            });
        }
    }
    Ok(profile)
}

/// `|| sum_j dl/dh ||` for the tensor entering every stage.
pub fn input_gradient_profile<E: Executor>(
    net: &Network,
    calib: &Dataset,
    aggregate: Aggregate,
    exec: &E,
) -> Result<SensitivityProfile> {
    let mut p = gradient_profile(net, calib, aggregate, exec)?;
    for l in p.layers.iter_mut() {
        l.param_grad_norm = None;
    }
    Ok(p)
}

/// `|| sum_j dl/dw_i ||` for every parameter-bearing layer.
pub fn param_gradient_profile<E: Executor>(
    net: &Network,
    calib: &Dataset,
    aggregate: Aggregate,
    exec: &E,
) -> Result<SensitivityProfile> {
    let mut p = gradient_profile(net, calib, aggregate, exec)?;
    for l in p.layers.iter_mut() {
        l.input_grad_norm = None;
    }
    Ok(p)
}

/// Rademacher probe for `(layer, probe)` under `seed`.
pub fn rademacher_probe(seed: u64, layer: usize, probe: usize, dim: usize) -> Vec<f64> {
    let mut r = rng::stream(seed, &[TAG_PROBE, layer as u64, probe as u64]);
    (0..dim).map(|_| rng::rademacher(&mut r)).collect()
}

/// Mean and standard error of the mean of `samples`.
pub fn mean_and_std_error(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var / n))
}

/// Hutchinson estimate of each layer's Hessian-block trace for the mean
/// calibration loss. Parameter-free layers get no entry.
pub fn hessian_trace_profile<E: Executor>(
    net: &Network,
    calib: &Dataset,
    probes: usize,
    seed: u64,
    exec: &E,
) -> Result<SensitivityProfile> {
    if probes == 0 {
        return Err(Error::InvalidConfig("probes must be at least 1".into()));
    }
    net.check_dataset(calib)?;
    let layers: Vec<usize> = (0..net.num_layers()).filter(|&k| net.stage_has_params(k)).collect();
    let offsets: Vec<usize> = (0..net.num_layers())
        .scan(0, |acc, k| {
            let o = *acc;
            *acc += net.layer_param_count(k);
            Some(o)
        })
        .collect();
    let base = net.flat_params();
    let tasks = layers.len() * probes;
    let samples = exec.map(tasks, |t| -> Result<f64> {
        let (layer, probe) = (layers[t / probes], t % probes);
        let dim = net.layer_param_count(layer);
        let v = rademacher_probe(seed, layer, probe, dim);
        let grad_at = |sign: f64| -> Result<Vec<f64>> {
            let mut flat = base.clone();
            for (w, vi) in flat[offsets[layer]..offsets[layer] + dim].iter_mut().zip(&v) {
                *w += sign * HVP_STEP * vi;
            }
            let params = net.unflatten(&flat)?;
            let (_, g) = net.loss_and_gradient(&Serial, &params, calib)?;
            Ok(g[offsets[layer]..offsets[layer] + dim].to_vec())
        };
        let (gp, gm) = (grad_at(1.0)?, grad_at(-1.0)?);
        Ok(v.iter()
            .zip(gp.iter().zip(&gm))
            .map(|(vi, (a, b))| vi * (a - b) / (2.0 * HVP_STEP))
            .sum())
    });
    let samples: Vec<f64> = samples.into_iter().collect::<Result<_>>()?;
    let mut profile = SensitivityProfile::skeleton(net, calib);
    profile.seed = Some(seed);
    for (i, &layer) in layers.iter().enumerate() {
        let (mean, std_error) = mean_and_std_error(&samples[i * probes..(i + 1) * probes]);
        profile.layers[layer].hessian_trace = Some(TraceEstimate {
            mean,
            std_error,
            probes,
        });
    }
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{LayerSpec, LossKind, NetworkSpec};
    use crate::tensor::Tensor;

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

    fn scalar_data(pairs: &[(f64, f64)]) -> Dataset {
        Dataset::new(
            "pairs",
            pairs.iter().map(|p| Tensor::vector(&[p.0]).unwrap()).collect(),
            pairs.iter().map(|p| Tensor::vector(&[p.1]).unwrap()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn loss_input_norm_sums_before_norm() {
        let net = single_dense(2.0);
        let p = input_gradient_profile(
            &net,
            &scalar_data(&[(1.0, 0.0), (1.0, 0.0)]),
            Aggregate::NormOfSum,
            &Serial,
        )
        .unwrap();
        assert_eq!(p.layers[1].input_grad_norm, Some(4.0));
        assert_eq!(p.layers[1].outer_index, 1);
        assert_eq!(p.layers[1].kind, "loss");
        assert_eq!(p.sample_count, 2);
    }

    #[test]
    fn opposite_residuals_cancel() {
        // residuals +2 and -2 at the loss input
        let net = single_dense(2.0);
        let data = scalar_data(&[(1.0, 0.0), (1.0, 4.0)]);
        let p = input_gradient_profile(&net, &data, Aggregate::NormOfSum, &Serial).unwrap();
        assert_eq!(p.layers[1].input_grad_norm, Some(0.0));
        let q = input_gradient_profile(&net, &data, Aggregate::SumOfNorms, &Serial).unwrap();
        assert_eq!(q.layers[1].input_grad_norm, Some(4.0));
    }

    #[test]
    fn extreme_point_has_zero_param_gradient() {
        let net = single_dense(1.0);
        let p = param_gradient_profile(&net, &scalar_data(&[(1.0, 1.0)]), Aggregate::NormOfSum, &Serial).unwrap();
        assert!(p.layers[0].param_grad_norm.unwrap() <= 1e-10);
        assert_eq!(p.layers[1].param_grad_norm, None);
    }

    #[test]
    fn identity_hessian_trace_is_dimension() {
        // f = 0.5 ||w||^2: dense 1 -> 5 without bias, x = 1, target 0.
        let spec = NetworkSpec {
            input_shape: vec![1],
            layers: vec![LayerSpec::Dense {
                inputs: 1,
                outputs: 5,
                bias: false,
            }],
            loss: LossKind::Mse,
        };
        let net = Network::from_flat(spec, &[0.3, -0.2, 0.9, 1.1, -0.7]).unwrap();
        let data = Dataset::new("unit", vec![Tensor::vector(&[1.0]).unwrap()], vec![Tensor::zeros(&[5])]).unwrap();
        let p = hessian_trace_profile(&net, &data, 3, 11, &Serial).unwrap();
        let t = p.layers[0].hessian_trace.unwrap();
        assert!((t.mean - 5.0).abs() < 1e-9, "{t:?}");
        assert!(t.std_error < 1e-9);
        assert!(p.layers[1].hessian_trace.is_none());
    }

    #[test]
    fn std_error_of_single_probe_is_zero() {
        assert_eq!(mean_and_std_error(&[3.0]), (3.0, 0.0));
        let (m, se) = mean_and_std_error(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-15);
    }

    #[test]
    fn missing_statistics_are_errors() {
        let p = SensitivityProfile::from_input_norms(&[1.0, 2.0], 1);
        assert_eq!(p.traces().unwrap(), vec![None, None]);
        let q = p.with_param_norms(&[Some(1.0), None]);
        assert_eq!(q.param_norms().unwrap(), vec![Some(1.0), None]);
        assert!(matches!(q.traces(), Err(Error::MissingStatistic { layer: 0, .. })));
    }
}
