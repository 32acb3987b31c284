//! Random single-primitive graphs for gradient checks.
//!
//! Each case wires one primitive between free inputs and a squared-error
//! readout against a random constant, so every primitive's backward rule is
//! exercised on its own.

use qlayout_core::graph::{NodeId, TapeGraph};
use qlayout_core::rng::{self, below, uniform, StreamRng};
use qlayout_core::Tensor;

pub const PRIMITIVES: [&str; 13] = [
    "matmul_vec",
    "matmul_mat",
    "conv2d",
    "add",
    "mul",
    "scale",
    "bias_add",
    "relu",
    "global_avg_pool",
    "flatten",
    "softmax_cross_entropy",
    "squared_error",
    "tap",
];

fn dim(r: &mut StreamRng, lo: usize, hi: usize) -> usize {
    lo + below(r, hi - lo + 1)
}

fn random(r: &mut StreamRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| uniform(r, -1.0, 1.0)).collect()).unwrap()
}

/// Values at least 0.05 away from zero, so a central difference never
/// straddles the ReLU kink.
fn away_from_zero(r: &mut StreamRng, shape: &[usize]) -> Tensor {
    random(r, shape).map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 })
}

fn readout(g: &mut TapeGraph, out: NodeId, shape: &[usize], r: &mut StreamRng) -> NodeId {
    let t = g.constant(random(r, shape));
    g.squared_error(out, t)
}

/// Builds the graph for primitive `name` with random shapes and inputs.
pub fn case(name: &str, seed: u64) -> (TapeGraph, Vec<Tensor>) {
    let which = PRIMITIVES.iter().position(|p| *p == name).expect("known primitive");
    let r = &mut rng::stream(seed, &[0xC4EC, which as u64]);
    let mut g = TapeGraph::new();
    let mut inputs = Vec::new();
    let mut input = |g: &mut TapeGraph, t: Tensor| {
        inputs.push(t);
        g.input(&format!("x{}", inputs.len() - 1))
    };
    let loss = match name {
        "matmul_vec" => {
            let (m, k) = (dim(r, 1, 6), dim(r, 1, 6));
            let a = input(&mut g, random(r, &[m, k]));
            let b = input(&mut g, random(r, &[k]));
            let y = g.matmul(a, b);
            readout(&mut g, y, &[m], r)
        }
        "matmul_mat" => {
            let (m, k, n) = (dim(r, 1, 5), dim(r, 1, 5), dim(r, 1, 5));
            let a = input(&mut g, random(r, &[m, k]));
            let b = input(&mut g, random(r, &[k, n]));
            let y = g.matmul(a, b);
            readout(&mut g, y, &[m, n], r)
        }
        "conv2d" => {
            let (c, o, k) = (dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3));
            let (stride, padding) = (dim(r, 1, 2), below(r, 2));
            let (h, w) = (dim(r, k, k + 4), dim(r, k, k + 4));
            let x = input(&mut g, random(r, &[c, h, w]));
            let kern = input(&mut g, random(r, &[o, c, k, k]));
            let y = g.conv2d(x, kern, stride, padding);
            let oh = (h + 2 * padding - k) / stride + 1;
            let ow = (w + 2 * padding - k) / stride + 1;
            readout(&mut g, y, &[o, oh, ow], r)
        }
        "add" | "mul" => {
            let shape = [dim(r, 1, 4), dim(r, 1, 4)];
            let a = input(&mut g, random(r, &shape));
            let b = input(&mut g, random(r, &shape));
            let y = if name == "add" { g.add(a, b) } else { g.mul(a, b) };
            readout(&mut g, y, &shape, r)
        }
        "scale" => {
            let shape = [dim(r, 1, 8)];
            let a = input(&mut g, random(r, &shape));
            let y = g.scale(a, uniform(r, -3.0, 3.0));
            readout(&mut g, y, &shape, r)
        }
        "bias_add" => {
            let c = dim(r, 1, 4);
            let shape = if below(r, 2) == 0 {
                vec![c]
            } else {
                vec![c, dim(r, 1, 4), dim(r, 1, 4)]
            };
            let x = input(&mut g, random(r, &shape));
            let b = input(&mut g, random(r, &[c]));
            let y = g.bias_add(x, b);
            readout(&mut g, y, &shape, r)
        }
        "relu" => {
            let shape = [dim(r, 1, 10)];
            let x = input(&mut g, away_from_zero(r, &shape));
            let y = g.relu(x);
            readout(&mut g, y, &shape, r)
        }
        "global_avg_pool" => {
            let c = dim(r, 1, 4);
            let shape = [c, dim(r, 1, 5), dim(r, 1, 5)];
            let x = input(&mut g, random(r, &shape));
            let y = g.global_avg_pool(x);
            readout(&mut g, y, &[c], r)
        }
        "flatten" => {
            let shape = [dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3)];
            let x = input(&mut g, random(r, &shape));
            let y = g.flatten(x);
            readout(&mut g, y, &[shape.iter().product()], r)
        }
        "softmax_cross_entropy" => {
            let k = dim(r, 2, 8);
            let z = input(&mut g, random(r, &[k]).map(|v| 3.0 * v));
            let raw = random(r, &[k]).map(|v| v.abs() + 0.1);
            let total: f64 = raw.data().iter().sum();
            let t = input(&mut g, raw.map(|v| v / total));
            g.softmax_cross_entropy(z, t)
        }
        "squared_error" => {
            let shape = [dim(r, 1, 8)];
            let p = input(&mut g, random(r, &shape));
            let t = input(&mut g, random(r, &shape));
            g.squared_error(p, t)
        }
        "tap" => {
            let shape = [dim(r, 1, 3), dim(r, 1, 3)];
            let x = input(&mut g, random(r, &shape));
            let y = g.tap(x, 0);
            readout(&mut g, y, &shape, r)
        }
        _ => unreachable!(),
    };
    g.set_loss(loss);
    (g, inputs)
}
