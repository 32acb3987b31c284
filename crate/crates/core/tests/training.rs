use qlayout_core::dataset::{argmax, generate};
use qlayout_core::network::{LayerSpec, LossKind, NetworkSpec};
use qlayout_core::train::{train, Optimizer, TrainConfig};
use qlayout_core::{GeneratorKind, Network, Serial};

#[test]
fn two_layer_moons_mlp_reaches_the_default_target() {
    let spec = NetworkSpec {
        input_shape: vec![2],
        layers: vec![LayerSpec::dense(2, 16), LayerSpec::Relu, LayerSpec::dense(16, 2)],
        loss: LossKind::SoftmaxCrossEntropy,
    };
    let mut net = Network::build(spec, 7).unwrap();
    let data = generate(GeneratorKind::TwoMoons, 200, 7).unwrap();
    let mut cfg = TrainConfig::sgd(0.5, 500);
    cfg.grad_norm_target = 1e-3;
    let ck = train(&mut net, &data, &cfg, &Serial).unwrap();
    assert!(ck.meta.grad_norm <= 1e-3, "grad norm {:e}", ck.meta.grad_norm);
    assert!(ck.meta.epochs_run <= 500);
}

#[test]
fn blob_mlp_fits_its_training_set() {
    let spec = NetworkSpec {
        input_shape: vec![8],
        layers: vec![LayerSpec::dense(8, 32), LayerSpec::Relu, LayerSpec::dense(32, 10)],
        loss: LossKind::SoftmaxCrossEntropy,
    };
    let mut net = Network::build(spec, 3).unwrap();
    let data = generate(GeneratorKind::GaussianBlobs, 1000, 3).unwrap();
    let cfg = TrainConfig {
        optimizer: Optimizer::Momentum { beta: 0.9 },
        grad_norm_target: 0.0,
        ..TrainConfig::sgd(0.05, 500)
    };
    train(&mut net, &data, &cfg, &Serial).unwrap();
    let capture = net.forward_capture(&data).unwrap();
    let correct = capture
        .inputs
        .iter()
        .zip(data.labels())
        .filter(|(c, y)| argmax(c.last().unwrap()) == argmax(y))
        .count();
    let acc = correct as f64 / data.len() as f64;
    assert!(acc > 0.9, "accuracy {acc}");
}
