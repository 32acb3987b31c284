//! Sequential and residual networks compiled onto a [`TapeGraph`].
//!
//! Layers are stored input to output. Stage `k < L` is layer `k`; stage `L`
//! is the loss. Every stage has one noise site: the tensor entering it, so a
//! network with `L` layers has `L + 1` sites (site 0 is the sample itself,
//! site `L` is the loss input). [`outer_index`] maps a stage to its position
//! in the nested composite `loss(layer_L(...layer_1(x)))`, counting the
//! loss as 1 and the first layer as `L + 1`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::exec::{self, Executor};
use crate::graph::{NodeId, Op, TapeGraph};
use crate::rng;
use crate::tensor::Tensor;

/// Per-layer parameter tensors, outer index = layer.
pub type LayerParams = Vec<Vec<Tensor>>;

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Relu,
    /// `x + F(x)` with `F` two dense (1-D input) or two 3x3 conv (3-D input)
    /// layers and a ReLU between them.
    ResidualBlock {
        channels: usize,
    },
    GlobalAvgPool,
    Flatten,
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize) -> Self {
        Self::Dense {
            inputs,
            outputs,
            bias: true,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Dense { .. } => "dense",
            Self::Conv { .. } => "conv",
            Self::Relu => "relu",
            Self::ResidualBlock { .. } => "residual_block",
            Self::GlobalAvgPool => "global_avg_pool",
            Self::Flatten => "flatten",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self,
            Self::Dense { .. } | Self::Conv { .. } | Self::ResidualBlock { .. }
        )
    }

    fn output_shape(&self, input: &[usize]) -> core::result::Result<Vec<usize>, String> {
        match *self {
            Self::Dense { inputs, outputs, .. } => {
                if input == [inputs] {
                    Ok(vec![outputs])
                } else {
                    Err(format!("expects [{inputs}]"))
                }
            }
            Self::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if input.len() != 3 || input[0] != in_channels {
                    return Err(format!("expects [{in_channels}, h, w]"));
                }
                if kernel == 0 || stride == 0 {
                    return Err("kernel and stride must be positive".into());
                }
                let out = |e: usize| {
                    let padded = e + 2 * padding;
                    (padded >= kernel).then(|| (padded - kernel) / stride + 1)
                };
                match (out(input[1]), out(input[2])) {
                    (Some(h), Some(w)) => Ok(vec![out_channels, h, w]),
                    _ => Err(format!("kernel {kernel} does not fit the spatial extent")),
                }
            }
            Self::Relu => Ok(input.to_vec()),
            Self::ResidualBlock { channels } => {
                if (input.len() == 1 || input.len() == 3) && input[0] == channels {
                    Ok(input.to_vec())
                } else {
                    Err(format!("expects [{channels}] or [{channels}, h, w]"))
                }
            }
            Self::GlobalAvgPool => {
                if input.len() >= 2 {
                    Ok(vec![input[0]])
                } else {
                    Err("expects channel and spatial axes".into())
                }
            }
            Self::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    fn param_shapes(&self, input: &[usize]) -> Vec<Vec<usize>> {
        match *self {
            Self::Dense { inputs, outputs, bias } => {
                let mut v = vec![vec![outputs, inputs]];
                if bias {
                    v.push(vec![outputs]);
                }
                v
            }
            Self::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![vec![out_channels, in_channels, kernel, kernel], vec![out_channels]],
            Self::ResidualBlock { channels: c } => {
                let w = if input.len() == 3 { vec![c, c, 3, 3] } else { vec![c, c] };
                vec![w.clone(), vec![c], w, vec![c]]
            }
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SoftmaxCrossEntropy,
    /// `0.5 * ||output - target||^2` per sample.
    Mse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub loss: LossKind,
}

impl NetworkSpec {
    /// Shape of the tensor entering each stage (`layers.len() + 1` entries).
    pub fn site_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.layers.is_empty() {
            return Err(Error::EmptyNetwork);
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (index, layer) in self.layers.iter().enumerate() {
            let input = shapes.last().unwrap();
            let out = layer.output_shape(input).map_err(|detail| Error::LayerShape {
                index,
                kind: layer.kind_name(),
                previous: previous_name(&self.layers, index),
                shape: input.clone(),
                detail,
            })?;
            shapes.push(out);
        }
        let last = shapes.last().unwrap();
        if self.loss == LossKind::SoftmaxCrossEntropy && last.len() != 1 {
            return Err(Error::LayerShape {
                index: self.layers.len(),
                kind: "loss",
                previous: previous_name(&self.layers, self.layers.len()),
                shape: last.clone(),
                detail: "softmax cross-entropy expects 1-D logits".into(),
            });
        }
        Ok(shapes)
    }
}

fn previous_name(layers: &[LayerSpec], index: usize) -> String {
    if index == 0 {
        "the network input".to_string()
    } else {
        format!("layer {} ({})", index - 1, layers[index - 1].kind_name())
    }
}

/// Position of stage `stage` in the nested composite, loss = 1.
pub fn outer_index(num_layers: usize, stage: usize) -> usize {
    num_layers + 1 - stage
}

#[derive(Clone, Debug)]
struct Wiring {
    params: Vec<Vec<NodeId>>,
    taps: Vec<NodeId>,
}

/// A built network: spec, parameters, and the compiled tape.
#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    params: LayerParams,
    site_shapes: Vec<Vec<usize>>,
    graph: TapeGraph,
    wiring: Wiring,
    loss_scale: f64,
}

const TAG_INIT: u64 = 0x1417;

impl Network {
    /// Builds a network with He-style uniform weights drawn from `seed` and zero biases.
    pub fn build(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let site_shapes = spec.site_shapes()?;
        let mut params = Vec::with_capacity(spec.layers.len());
        for (k, layer) in spec.layers.iter().enumerate() {
            let shapes = layer.param_shapes(&site_shapes[k]);
            let mut tensors = Vec::with_capacity(shapes.len());
            for (j, shape) in shapes.iter().enumerate() {
                let n: usize = shape.iter().product();
                if shape.len() == 1 {
                    tensors.push(Tensor::zeros(shape));
                    continue;
                }
                let fan_in: usize = shape[1..].iter().product();
                let mut bound = libm::sqrt(6.0 / fan_in as f64);
                // Residual branches start close to the identity map.
                if matches!(layer, LayerSpec::ResidualBlock { .. }) && j == 2 {
                    bound *= 0.25;
                }
                let mut r = rng::stream(seed, &[TAG_INIT, k as u64, j as u64]);
                let data = (0..n).map(|_| rng::symmetric(&mut r, bound)).collect();
                tensors.push(Tensor::from_raw(shape.clone(), data));
            }
            params.push(tensors);
        }
        Self::assemble(spec, site_shapes, params, 1.0)
    }

    /// Builds a network from a flat parameter payload.
    pub fn from_flat(spec: NetworkSpec, flat: &[f64]) -> Result<Self> {
        let site_shapes = spec.site_shapes()?;
        let params = unflatten_with(&spec, &site_shapes, flat)?;
        Self::assemble(spec, site_shapes, params, 1.0)
    }

    fn assemble(spec: NetworkSpec, site_shapes: Vec<Vec<usize>>, params: LayerParams, loss_scale: f64) -> Result<Self> {
        let mut g = TapeGraph::new();
        let x = g.input("x");
        let y = g.input("y");
        let mut pids = Vec::with_capacity(params.len());
        for (k, p) in params.iter().enumerate() {
            pids.push(
                (0..p.len())
                    .map(|j| g.input(&format!("layer{k}.{j}")))
                    .collect::<Vec<_>>(),
            );
        }
        let mut taps = Vec::with_capacity(spec.layers.len() + 1);
        let mut h = x;
        for (k, layer) in spec.layers.iter().enumerate() {
            h = g.tap(h, k);
            taps.push(h);
            let p = &pids[k];
            h = match *layer {
                LayerSpec::Dense { bias, .. } => {
                    let z = g.matmul(p[0], h);
                    if bias {
                        g.bias_add(z, p[1])
                    } else {
                        z
                    }
                }
                LayerSpec::Conv { stride, padding, .. } => {
                    let z = g.conv2d(h, p[0], stride, padding);
                    g.bias_add(z, p[1])
                }
                LayerSpec::Relu => g.relu(h),
                LayerSpec::ResidualBlock { .. } => {
                    let spatial = site_shapes[k].len() == 3;
                    let branch = |g: &mut TapeGraph, input: NodeId, w: NodeId, b: NodeId| {
                        let z = if spatial {
                            g.conv2d(input, w, 1, 1)
                        } else {
                            g.matmul(w, input)
                        };
                        g.bias_add(z, b)
                    };
                    let z = branch(&mut g, h, p[0], p[1]);
                    let z = g.relu(z);
                    let z = branch(&mut g, z, p[2], p[3]);
                    g.add(h, z)
                }
                LayerSpec::GlobalAvgPool => g.global_avg_pool(h),
                LayerSpec::Flatten => g.flatten(h),
            };
        }
        h = g.tap(h, spec.layers.len());
        taps.push(h);
        let mut loss = match spec.loss {
            LossKind::SoftmaxCrossEntropy => g.softmax_cross_entropy(h, y),
            LossKind::Mse => g.squared_error(h, y),
        };
        if loss_scale != 1.0 {
            loss = g.scale(loss, loss_scale);
        }
        g.set_loss(loss);
        Ok(Self {
            spec,
            params,
            site_shapes,
            graph: g,
            wiring: Wiring { params: pids, taps },
            loss_scale,
        })
    }

    /// The same network with its per-sample loss multiplied by `factor`.
    pub fn with_loss_scale(self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "loss scale must be positive, got {factor}"
            )));
        }
        Self::assemble(self.spec, self.site_shapes, self.params, factor)
    }

    pub fn loss_scale(&self) -> f64 {
        self.loss_scale
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &LayerParams {
        &self.params
    }

    pub fn num_layers(&self) -> usize {
        self.spec.layers.len()
    }

    /// Number of noise sites (layers plus the loss stage).
    pub fn num_sites(&self) -> usize {
        self.spec.layers.len() + 1
    }

    pub fn site_shapes(&self) -> &[Vec<usize>] {
        &self.site_shapes
    }

    pub fn stage_name(&self, stage: usize) -> &'static str {
        self.spec.layers.get(stage).map_or("loss", LayerSpec::kind_name)
    }

    pub fn stage_has_params(&self, stage: usize) -> bool {
        self.spec.layers.get(stage).is_some_and(LayerSpec::has_params)
    }

    pub fn layer_param_count(&self, stage: usize) -> usize {
        self.params.get(stage).map_or(0, |p| p.iter().map(Tensor::len).sum())
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().flatten().map(Tensor::len).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        flatten(&self.params)
    }

    pub fn unflatten(&self, flat: &[f64]) -> Result<LayerParams> {
        unflatten_with(&self.spec, &self.site_shapes, flat)
    }

    pub fn set_params(&mut self, params: LayerParams) -> Result<()> {
        check_params(&self.params, &params)?;
        self.params = params;
        Ok(())
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        self.params = self.unflatten(flat)?;
        Ok(())
    }

    /// The compiled tape. Inputs are `x`, `y`, then `layer{k}.{j}` for each parameter.
    pub fn graph(&self) -> &TapeGraph {
        &self.graph
    }

    pub fn evaluator(&self) -> Evaluator<'_> {
        Evaluator {
            net: self,
            graph: self.graph.clone(),
        }
    }

    fn check_sample(&self, index: usize, x: &Tensor, y: &Tensor) -> Result<()> {
        if x.shape() != self.site_shapes[0].as_slice() {
            return Err(Error::SampleShape {
                index,
                detail: format!("input shape {:?}, network expects {:?}", x.shape(), self.site_shapes[0]),
            });
        }
        let out = self.site_shapes.last().unwrap();
        if y.len() != out.iter().product::<usize>() {
            return Err(Error::SampleShape {
                index,
                detail: format!("label shape {:?}, network output is {:?}", y.shape(), out),
            });
        }
        Ok(())
    }

    /// Checks every sample of `data` against the network's input and output shapes.
    pub fn check_dataset(&self, data: &Dataset) -> Result<()> {
        for i in 0..data.len() {
            let (x, y) = data.sample(i);
            self.check_sample(i, x, y)?;
        }
        Ok(())
    }

    /// Folds per-sample work over `data` in canonical sample order.
    ///
    /// Samples are split into fixed-size chunks of the canonical order; each
    /// chunk is folded serially and chunk results are merged in chunk order,
    /// so the result does not depend on the executor or on dataset order.
    pub fn fold_samples<E, A, I, S, M>(&self, exec: &E, data: &Dataset, init: I, step: S, mut merge: M) -> Result<A>
    where
        E: Executor,
        A: Send,
        I: Fn() -> A + Sync,
        S: Fn(&mut Evaluator<'_>, &mut A, usize) -> Result<()> + Sync,
        M: FnMut(&mut A, A),
    {
        self.check_dataset(data)?;
        let order = data.canonical_order();
        let ranges: Vec<_> = exec::chunks(order.len()).collect();
        let parts = exec.map(ranges.len(), |c| -> Result<A> {
            let mut ev = self.evaluator();
            let mut acc = init();
            for &i in &order[ranges[c].clone()] {
                step(&mut ev, &mut acc, i)?;
            }
            Ok(acc)
        });
        let mut total = init();
        for part in parts {
            merge(&mut total, part?);
        }
        Ok(total)
    }

    /// Mean loss over `data` with parameters `params`.
    pub fn mean_loss_with<E: Executor>(&self, exec: &E, params: &LayerParams, data: &Dataset) -> Result<f64> {
        let sum = self.fold_samples(
            exec,
            data,
            || 0.0,
            |ev, acc, i| {
                let (x, y) = data.sample(i);
                *acc += ev.loss(params, x, y)?;
                Ok(())
            },
            |a, b| *a += b,
        )?;
        Ok(sum / data.len() as f64)
    }

    pub fn mean_loss<E: Executor>(&self, exec: &E, data: &Dataset) -> Result<f64> {
        self.mean_loss_with(exec, &self.params, data)
    }

    /// Mean loss and its flat parameter gradient over `data`.
    pub fn loss_and_gradient<E: Executor>(
        &self,
        exec: &E,
        params: &LayerParams,
        data: &Dataset,
    ) -> Result<(f64, Vec<f64>)> {
        let p = self.param_count();
        let (sum, mut grad) = self.fold_samples(
            exec,
            data,
            || (0.0, vec![0.0; p]),
            |ev, acc, i| {
                let (x, y) = data.sample(i);
                acc.0 += ev.loss(params, x, y)?;
                ev.add_param_gradient(&mut acc.1)?;
                Ok(())
            },
            |a, b| {
                a.0 += b.0;
                for (s, t) in a.1.iter_mut().zip(&b.1) {
                    *s += t;
                }
            },
        )?;
        let m = data.len() as f64;
        for g in grad.iter_mut() {
            *g /= m;
        }
        Ok((sum / m, grad))
    }

    /// Mean loss over `batch` plus the tensor entering every site, per sample.
    ///
    /// `inputs[j][k]` is the input of stage `k` for sample `j` (sample order
    /// as given); `inputs[j][0]` is the sample and the last entry is the loss
    /// input.
    pub fn forward_capture(&self, batch: &Dataset) -> Result<Capture> {
        self.check_dataset(batch)?;
        let loss = self.mean_loss(&exec::Serial, batch)?;
        let mut ev = self.evaluator();
        let mut inputs = Vec::with_capacity(batch.len());
        for i in 0..batch.len() {
            let (x, y) = batch.sample(i);
            ev.loss(&self.params, x, y)?;
            inputs.push(ev.captured());
        }
        Ok(Capture { loss, inputs })
    }

    /// Samples of `data` whose every ReLU input, including those inside
    /// residual blocks, stays at least `margin` away from zero. Perturbations
    /// smaller than `margin` then keep the network on one linear piece.
    pub fn kink_free_subset(&self, data: &Dataset, margin: f64) -> Result<Dataset> {
        self.check_dataset(data)?;
        let mut ev = self.evaluator();
        let mut keep = Vec::new();
        for i in 0..data.len() {
            let (x, y) = data.sample(i);
            ev.loss(&self.params, x, y)?;
            if ev.relu_margin() >= margin {
                keep.push(i);
            }
        }
        data.subset(&keep, format!("{}/margin={margin:?}", data.id()))
    }
}

#[derive(Clone, Debug)]
pub struct Capture {
    pub loss: f64,
    pub inputs: Vec<Vec<Tensor>>,
}

/// Per-sample gradients at every site and every parameter tensor.
#[derive(Clone, Debug)]
pub struct SampleGradients {
    pub sites: Vec<Tensor>,
    pub params: LayerParams,
}

/// Single-sample evaluation state for a [`Network`].
pub struct Evaluator<'n> {
    net: &'n Network,
    graph: TapeGraph,
}

impl Evaluator<'_> {
    pub fn loss(&mut self, params: &LayerParams, x: &Tensor, y: &Tensor) -> Result<f64> {
        self.loss_with_hook(params, x, y, &mut |_, _| {})
    }

    /// Forward pass calling `hook(site, value)` on the tensor entering every site.
    pub fn loss_with_hook(
        &mut self,
        params: &LayerParams,
        x: &Tensor,
        y: &Tensor,
        hook: &mut dyn FnMut(usize, &mut Tensor),
    ) -> Result<f64> {
        let mut inputs: Vec<&Tensor> = Vec::with_capacity(2 + params.len() * 2);
        inputs.push(x);
        inputs.push(y);
        inputs.extend(params.iter().flatten());
        self.graph.evaluate_with_hook(&inputs, hook)
    }

    /// Smallest `|z|` over every ReLU input of the last forward pass.
    pub fn relu_margin(&self) -> f64 {
        let mut m = f64::INFINITY;
        for op in self.graph.ops() {
            if let Op::Relu(a) = op {
                if let Some(t) = self.graph.value(*a) {
                    m = t.data().iter().fold(m, |m, z| m.min(z.abs()));
                }
            }
        }
        m
    }

    /// Tensors entering each site during the last forward pass (after any hook).
    pub fn captured(&self) -> Vec<Tensor> {
        self.net
            .wiring
            .taps
            .iter()
            .map(|&t| self.graph.value(t).cloned().unwrap_or_else(|| Tensor::zeros(&[1])))
            .collect()
    }

    pub fn gradients(&self) -> Result<SampleGradients> {
        let mut g = self.graph.backward()?;
        let sites = self.net.wiring.taps.iter().map(|&t| g.take(t)).collect();
        let params = self
            .net
            .wiring
            .params
            .iter()
            .map(|ids| ids.iter().map(|&id| g.take(id)).collect())
            .collect();
        Ok(SampleGradients { sites, params })
    }

    /// Adds the flat parameter gradient of the last forward pass into `acc`.
    pub fn add_param_gradient(&self, acc: &mut [f64]) -> Result<()> {
        let g = self.graph.backward()?;
        let mut offset = 0;
        for id in self.net.wiring.params.iter().flatten() {
            let t = g.get(*id);
            for (a, v) in acc[offset..offset + t.len()].iter_mut().zip(t.data()) {
                *a += v;
            }
            offset += t.len();
        }
        Ok(())
    }
}

pub fn flatten(params: &LayerParams) -> Vec<f64> {
    params.iter().flatten().flat_map(|t| t.data().iter().copied()).collect()
}

fn check_params(reference: &LayerParams, candidate: &LayerParams) -> Result<()> {
    let same = reference.len() == candidate.len()
        && reference
            .iter()
            .zip(candidate)
            .all(|(a, b)| a.len() == b.len() && a.iter().zip(b).all(|(s, t)| s.shape() == t.shape()));
    if same {
        Ok(())
    } else {
        Err(Error::ParamCount {
            expected: flatten(reference).len(),
            found: flatten(candidate).len(),
        })
    }
}

fn unflatten_with(spec: &NetworkSpec, site_shapes: &[Vec<usize>], flat: &[f64]) -> Result<LayerParams> {
    let shapes: Vec<Vec<Vec<usize>>> = spec
        .layers
        .iter()
        .enumerate()
        .map(|(k, l)| l.param_shapes(&site_shapes[k]))
        .collect();
    let expected: usize = shapes.iter().flatten().map(|s| s.iter().product::<usize>()).sum();
    if expected != flat.len() {
        return Err(Error::ParamCount {
            expected,
            found: flat.len(),
        });
    }
    let mut offset = 0;
    let mut out = Vec::with_capacity(shapes.len());
    for layer in shapes {
        let mut tensors = Vec::with_capacity(layer.len());
        for shape in layer {
            let n: usize = shape.iter().product();
            tensors.push(Tensor::new(shape, flat[offset..offset + n].to_vec())?);
            offset += n;
        }
        out.push(tensors);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

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

    #[test]
    fn kink_free_subset_respects_margin() {
        // Single ReLU of x: the margin is |x| itself.
        let spec = NetworkSpec {
            input_shape: vec![1],
            layers: vec![LayerSpec::Relu],
            loss: LossKind::Mse,
        };
        let net = Network::build(spec, 0).unwrap();
        let xs = [-0.5, 0.01, 0.3, -0.02, 2.0];
        let t = |v: f64| Tensor::vector(&[v]).unwrap();
        let data = Dataset::new(
            "d",
            xs.iter().map(|&v| t(v)).collect(),
            xs.iter().map(|_| t(0.0)).collect(),
        )
        .unwrap();
        let kept = net.kink_free_subset(&data, 0.02).unwrap();
        let vals: Vec<f64> = kept.inputs().iter().map(|x| x.data()[0]).collect();
        assert_eq!(vals, vec![-0.5, 0.3, -0.02, 2.0]);
        assert_eq!(net.kink_free_subset(&data, 0.0).unwrap().len(), 5);
    }

    #[test]
    fn dense_param_count() {
        let spec = NetworkSpec {
            input_shape: vec![2],
            layers: vec![LayerSpec::dense(2, 1)],
            loss: LossKind::Mse,
        };
        let net = Network::build(spec, 7).unwrap();
        assert_eq!(net.param_count(), 3);
        assert_eq!(net.num_sites(), 2);
    }

    #[test]
    fn empty_spec_is_rejected() {
        let spec = NetworkSpec {
            input_shape: vec![2],
            layers: vec![],
            loss: LossKind::Mse,
        };
        assert_eq!(Network::build(spec, 0).unwrap_err(), Error::EmptyNetwork);
    }

    #[test]
    fn non_composing_shapes_name_the_pair() {
        let spec = NetworkSpec {
            input_shape: vec![4],
            layers: vec![LayerSpec::dense(4, 3), LayerSpec::Relu, LayerSpec::dense(5, 2)],
            loss: LossKind::Mse,
        };
        match Network::build(spec, 0).unwrap_err() {
            Error::LayerShape { index, previous, .. } => {
                assert_eq!(index, 2);
                assert_eq!(previous, "layer 1 (relu)");
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn residual_blocks_compose() {
        for input_shape in [vec![8], vec![8, 4, 4]] {
            let spec = NetworkSpec {
                input_shape: input_shape.clone(),
                layers: vec![
                    LayerSpec::ResidualBlock { channels: 8 },
                    LayerSpec::ResidualBlock { channels: 8 },
                ],
                loss: LossKind::Mse,
            };
            let shapes = spec.site_shapes().unwrap();
            assert!(shapes.iter().all(|s| *s == input_shape));
        }
    }

    #[test]
    fn same_seed_same_params() {
        let spec = NetworkSpec {
            input_shape: vec![3],
            layers: vec![LayerSpec::dense(3, 4), LayerSpec::Relu, LayerSpec::dense(4, 2)],
            loss: LossKind::SoftmaxCrossEntropy,
        };
        let a = Network::build(spec.clone(), 5).unwrap();
        let b = Network::build(spec.clone(), 5).unwrap();
        let c = Network::build(spec, 6).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
        assert_ne!(a.flat_params(), c.flat_params());
    }

    #[test]
    fn capture_single_dense() {
        let net = single_dense(2.0);
        let data = Dataset::new(
            "one",
            vec![Tensor::vector(&[1.0]).unwrap()],
            vec![Tensor::vector(&[0.0]).unwrap()],
        )
        .unwrap();
        let cap = net.forward_capture(&data).unwrap();
        assert_eq!(cap.loss, 2.0);
        assert_eq!(cap.inputs[0][0].data(), &[1.0]);
        assert_eq!(cap.inputs[0][1].data(), &[2.0]);
    }

    #[test]
    fn zero_weights_capture_zeros() {
        let spec = NetworkSpec {
            input_shape: vec![2],
            layers: vec![LayerSpec::dense(2, 3), LayerSpec::Relu, LayerSpec::dense(3, 1)],
            loss: LossKind::Mse,
        };
        let mut net = Network::build(spec, 1).unwrap();
        net.set_flat_params(&vec![0.0; net.param_count()]).unwrap();
        let data = Dataset::new(
            "z",
            vec![
                Tensor::vector(&[0.3, -1.0]).unwrap(),
                Tensor::vector(&[2.0, 1.0]).unwrap(),
            ],
            vec![Tensor::vector(&[0.0]).unwrap(), Tensor::vector(&[0.0]).unwrap()],
        )
        .unwrap();
        let cap = net.forward_capture(&data).unwrap();
        assert_eq!(cap.loss, 0.0);
        for sample in &cap.inputs {
            for site in &sample[1..] {
                assert!(site.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn sample_shape_mismatch() {
        let net = single_dense(1.0);
        let data = Dataset::new(
            "bad",
            vec![Tensor::vector(&[1.0, 2.0]).unwrap()],
            vec![Tensor::vector(&[0.0]).unwrap()],
        )
        .unwrap();
        assert!(matches!(
            net.forward_capture(&data),
            Err(Error::SampleShape { index: 0, .. })
        ));
    }

    #[test]
    fn flat_round_trip() {
        let spec = NetworkSpec {
            input_shape: vec![1, 6, 6],
            layers: vec![
                LayerSpec::Conv {
                    in_channels: 1,
                    out_channels: 2,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::ResidualBlock { channels: 2 },
                LayerSpec::GlobalAvgPool,
                LayerSpec::dense(2, 3),
            ],
            loss: LossKind::SoftmaxCrossEntropy,
        };
        let net = Network::build(spec.clone(), 3).unwrap();
        let flat = net.flat_params();
        assert_eq!(flat.len(), net.param_count());
        let again = Network::from_flat(spec.clone(), &flat).unwrap();
        assert_eq!(again.params(), net.params());
        assert!(matches!(
            Network::from_flat(spec, &flat[1..]),
            Err(Error::ParamCount { .. })
        ));
        assert_eq!(outer_index(net.num_layers(), net.num_layers()), 1);
        assert_eq!(outer_index(net.num_layers(), 0), 5);
    }
}
