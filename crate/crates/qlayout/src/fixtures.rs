//! Desk-scale reference networks with their datasets and training recipes.

use serde::{Deserialize, Serialize};

use qlayout_core::dataset::generate;
use qlayout_core::network::{LayerSpec, LossKind, NetworkSpec};
use qlayout_core::train::{train, Checkpoint, Optimizer, TrainConfig};
use qlayout_core::{Dataset, Executor, GeneratorKind, Network};

use crate::error::{Error, Result};

/// Tighter than the library default so shipped checkpoints sit close to a
/// stationary point; training stops early once it is reached.
pub const FIXTURE_GRAD_NORM_TARGET: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fixture {
    /// 4 dense layers on two-moons.
    MoonsMlp,
    /// Dense stem, 6 residual blocks and a dense head on Gaussian blobs.
    ResidualMlp,
    /// 2 conv layers, global pooling and a dense head on 8x8 digits.
    DigitsConv,
}

/// Splits of one generated dataset: training samples first, evaluation after.
pub struct FixtureData {
    pub train: Dataset,
    pub eval: Dataset,
}

impl Fixture {
    pub const ALL: [Fixture; 3] = [Self::MoonsMlp, Self::ResidualMlp, Self::DigitsConv];

    pub fn name(self) -> &'static str {
        match self {
            Self::MoonsMlp => "moons_mlp",
            Self::ResidualMlp => "residual_mlp",
            Self::DigitsConv => "digits_conv",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name).ok_or_else(|| {
            Error::Config(format!(
                "unknown fixture `{name}`; expected one of moons_mlp, residual_mlp, digits_conv"
            ))
        })
    }

    pub fn generator(self) -> GeneratorKind {
        match self {
            Self::MoonsMlp => GeneratorKind::TwoMoons,
            Self::ResidualMlp => GeneratorKind::GaussianBlobs,
            Self::DigitsConv => GeneratorKind::Digits8x8,
        }
    }

    /// `(training samples, evaluation samples)`.
    pub fn sizes(self) -> (usize, usize) {
        match self {
            Self::MoonsMlp => (1024, 256),
            Self::ResidualMlp => (1000, 256),
            Self::DigitsConv => (500, 256),
        }
    }

    pub fn data_seed(self) -> u64 {
        match self {
            Self::MoonsMlp => 1,
            Self::ResidualMlp => 2,
            Self::DigitsConv => 3,
        }
    }

    pub fn init_seed(self) -> u64 {
        match self {
            Self::MoonsMlp => 11,
            Self::ResidualMlp => 12,
            Self::DigitsConv => 13,
        }
    }

    pub fn spec(self) -> NetworkSpec {
        let d = LayerSpec::dense;
        match self {
            Self::MoonsMlp => NetworkSpec {
                input_shape: vec![2],
                layers: vec![
                    d(2, 8),
                    LayerSpec::Relu,
                    d(8, 8),
                    LayerSpec::Relu,
                    d(8, 8),
                    LayerSpec::Relu,
                    d(8, 2),
                ],
                loss: LossKind::SoftmaxCrossEntropy,
            },
            Self::ResidualMlp => {
                let mut layers = vec![d(8, 16), LayerSpec::Relu];
                layers.extend(std::iter::repeat_n(LayerSpec::ResidualBlock { channels: 16 }, 6));
                layers.push(d(16, 10));
                NetworkSpec {
                    input_shape: vec![8],
                    layers,
                    loss: LossKind::SoftmaxCrossEntropy,
                }
            }
            Self::DigitsConv => NetworkSpec {
                input_shape: vec![1, 8, 8],
                layers: vec![
                    LayerSpec::Conv {
                        in_channels: 1,
                        out_channels: 4,
                        kernel: 3,
                        stride: 1,
                        padding: 1,
                    },
                    LayerSpec::Relu,
                    LayerSpec::Conv {
                        in_channels: 4,
                        out_channels: 8,
                        kernel: 3,
                        stride: 2,
                        padding: 1,
                    },
                    LayerSpec::Relu,
                    LayerSpec::GlobalAvgPool,
                    d(8, 10),
                ],
                loss: LossKind::SoftmaxCrossEntropy,
            },
        }
    }

    pub fn train_config(self) -> TrainConfig {
        let (lr, epochs) = match self {
            Self::MoonsMlp => (0.02, 3000),
            Self::ResidualMlp => (0.05, 600),
            Self::DigitsConv => (0.1, 3000),
        };
        TrainConfig {
            optimizer: Optimizer::Momentum { beta: 0.9 },
            lr,
            epochs,
            batch_size: None,
            grad_norm_target: FIXTURE_GRAD_NORM_TARGET,
            seed: self.init_seed(),
        }
    }

    pub fn data(self) -> Result<FixtureData> {
        let (n_train, n_eval) = self.sizes();
        let all = generate(self.generator(), n_train + n_eval, self.data_seed())?;
        let idx: Vec<usize> = (0..all.len()).collect();
        Ok(FixtureData {
            train: all.subset(&idx[..n_train], format!("{}/train", all.id()))?,
            eval: all.subset(&idx[n_train..], format!("{}/eval", all.id()))?,
        })
    }

    /// Builds the network from its init seed and trains it on the training split.
    pub fn train<E: Executor>(self, cfg: &TrainConfig, exec: &E) -> Result<Checkpoint> {
        let data = self.data()?;
        let mut net = Network::build(self.spec(), self.init_seed())?;
        Ok(train(&mut net, &data.train, cfg, exec)?)
    }
}
