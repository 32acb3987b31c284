//! Central finite differences: gradient oracle and Hessian-vector products.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{NodeId, TapeGraph};
use crate::tensor::Tensor;

/// Default step for finite-difference gradients.
pub const GRAD_STEP: f64 = 1e-5;
/// Default step for finite-difference Hessian-vector products.
pub const HVP_STEP: f64 = 1e-4;

fn check_step(step: f64) -> Result<()> {
    if step > 0.0 && step.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidStep(step))
    }
}

/// Central-difference gradient `(f(x + s e_k) - f(x - s e_k)) / 2s` per coordinate.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    check_step(step)?;
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        probe[k] = x[k] + step;
        let up = f(&probe);
        probe[k] = x[k] - step;
        let down = f(&probe);
        probe[k] = x[k];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFiniteValue { coordinate: k });
        }
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// Hessian-vector product `(grad(w + s v) - grad(w - s v)) / 2s`, where
/// `grad` is an exact (reverse-mode) gradient.
pub fn hvp<G>(mut grad: G, w: &[f64], v: &[f64], step: f64) -> Result<Vec<f64>>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    check_step(step)?;
    if w.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            found: v.len(),
        });
    }
    let plus: Vec<f64> = w.iter().zip(v).map(|(a, b)| a + step * b).collect();
    let minus: Vec<f64> = w.iter().zip(v).map(|(a, b)| a - step * b).collect();
    let gp = grad(&plus)?;
    let gm = grad(&minus)?;
    if gp.len() != w.len() || gm.len() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            found: gp.len().min(gm.len()),
        });
    }
    Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * step)).collect())
}

/// Largest norm-wise relative error, over every graph input, between the
/// reverse-mode gradient and a central-difference gradient at `inputs`.
pub fn gradient_check(graph: &TapeGraph, inputs: &[Tensor], step: f64) -> Result<f64> {
    let mut g = graph.clone();
    let refs: Vec<&Tensor> = inputs.iter().collect();
    g.evaluate_inputs(&refs)?;
    let grads = g.backward()?;
    let mut worst: f64 = 0.0;
    for (slot, x) in inputs.iter().enumerate() {
        let ad = grads.get(NodeId::from_index(input_node(graph, slot)?)).data().to_vec();
        let mut probe = inputs.to_vec();
        let mut eval = graph.clone();
        let fd = finite_diff_grad(
            |v| {
                probe[slot] = Tensor::new(x.shape().to_vec(), v.to_vec()).expect("same shape");
                let refs: Vec<&Tensor> = probe.iter().collect();
                eval.evaluate_inputs(&refs).unwrap_or(f64::NAN)
            },
            x.data(),
            step,
        )?;
        let diff = libm::sqrt(ad.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
        let scale = libm::sqrt(fd.iter().map(|b| b * b).sum::<f64>());
        worst = worst.max(if scale > 0.0 { diff / scale } else { diff });
    }
    Ok(worst)
}

fn input_node(graph: &TapeGraph, slot: usize) -> Result<usize> {
    graph
        .ops()
        .iter()
        .position(|op| matches!(op, crate::graph::Op::Input { slot: s, .. } if *s == slot))
        .ok_or(Error::InputCount {
            expected: slot + 1,
            found: slot,
        })
}
