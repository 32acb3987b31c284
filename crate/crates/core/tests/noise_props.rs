use proptest::prelude::*;
use qlayout_core::dataset::generate;
use qlayout_core::exec::Executor;
use qlayout_core::layout::{plan_trivial, sigma_levels, QuantLevelSet};
use qlayout_core::network::{LayerSpec, LossKind, NetworkSpec};
use qlayout_core::noise::{
    measure_fixed, predict_first_order, quantize_scale, simulate, FixedNoise, NoiseKind, NoiseModel, SimConfig,
};
use qlayout_core::{Dataset, GeneratorKind, Network, Serial, Tensor};

/// Evaluates in reverse order but hands back results in index order.
struct Reverse;

impl Executor for Reverse {
    fn map<T, F>(&self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        let mut out: Vec<T> = (0..count).rev().map(f).collect();
        out.reverse();
        out
    }
}

fn net() -> (Network, Dataset) {
    let d = LayerSpec::dense;
    let spec = NetworkSpec {
        input_shape: vec![2],
        layers: vec![d(2, 6), LayerSpec::Relu, d(6, 6), LayerSpec::Relu, d(6, 2)],
        loss: LossKind::SoftmaxCrossEntropy,
    };
    (
        Network::build(spec, 4).unwrap(),
        generate(GeneratorKind::TwoMoons, 100, 1).unwrap(),
    )
}

fn plan(net: &Network) -> qlayout_core::layout::LayoutPlan {
    let levels = QuantLevelSet::partition(sigma_levels(), net.num_sites()).unwrap();
    let mask: Vec<bool> = (0..net.num_layers()).map(|k| net.layer_param_count(k) > 0).collect();
    plan_trivial(&levels, net.num_sites()).unwrap().with_param_mask(&mask)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn quantization_error_is_within_half_a_step(
        values in prop::collection::vec(-1e3f64..1e3, 1..40),
        exp in -6i32..1,
    ) {
        let scale = 10f64.powi(exp);
        let x = Tensor::vector(&values).unwrap();
        let (codes, deq) = quantize_scale(&x, scale).unwrap();
        for ((&v, &d), &c) in values.iter().zip(deq.data()).zip(&codes) {
            prop_assert!((v - d).abs() <= 0.5 * scale * (1.0 + 1e-9));
            prop_assert_eq!(d, c as f64 * scale);
        }
    }

    #[test]
    fn first_order_prediction_is_linear(a in -4.0f64..4.0, seed in 0u64..1000) {
        let (net, data) = net();
        let fixed = FixedNoise::uniform(
            &net,
            &vec![1e-3; net.num_sites()],
            &vec![1e-3; net.num_layers()],
            seed,
        ).unwrap();
        let base = predict_first_order(&net, &data, &fixed, &Serial).unwrap();
        let scaled = predict_first_order(&net, &data, &fixed.scaled(a), &Serial).unwrap();
        prop_assert!((scaled - a * base).abs() <= 1e-12 * base.abs().max(1e-12) * a.abs().max(1.0));
    }
}

#[test]
fn simulation_does_not_depend_on_the_executor() {
    let (net, data) = net();
    let p = plan(&net);
    let cfg = SimConfig {
        trials: 5,
        seed: 11,
        attribution: true,
    };
    for kind in [
        NoiseKind::Uniform,
        NoiseKind::ScaleQuant,
        NoiseKind::DirectionalLossless,
    ] {
        let model = NoiseModel::new(kind);
        let a = simulate(&net, &data, &p, &model, &cfg, &Serial).unwrap();
        let b = simulate(&net, &data, &p, &model, &cfg, &Reverse).unwrap();
        assert_eq!(a, b, "{kind:?}");
    }
}

#[test]
fn no_noise_means_no_loss_change() {
    let (net, data) = net();
    let cfg = SimConfig {
        trials: 3,
        seed: 0,
        attribution: false,
    };
    let r = simulate(&net, &data, &plan(&net), &NoiseModel::none(), &cfg, &Serial).unwrap();
    assert!(r.deltas.iter().all(|&d| d == 0.0));
    assert_eq!(r.activation_sites, 0);
    assert_eq!(
        measure_fixed(&net, &data, &FixedNoise::zeros(&net), &Serial).unwrap(),
        0.0
    );
}

#[test]
fn small_fixed_noise_follows_the_first_order_prediction() {
    let (net, data) = net();
    let fixed = FixedNoise::uniform(&net, &vec![1e-6; net.num_sites()], &vec![1e-6; net.num_layers()], 3).unwrap();
    let measured = measure_fixed(&net, &data, &fixed, &Serial).unwrap();
    let predicted = predict_first_order(&net, &data, &fixed, &Serial).unwrap();
    assert!(
        (measured - predicted).abs() <= 1e-3 * predicted.abs(),
        "{measured:e} vs {predicted:e}"
    );
}
