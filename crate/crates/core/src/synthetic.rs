//! Seeded random models and images for tests, examples and the CLI's
//! `generate` subcommand.
//!
//! Every synthetic model has the same frontend: a 3x3 convolution from RGB
//! to `N` channels with per-channel gain, ReLU, and a 2x2 max-pool, so a
//! `3 x 2H x 2W` image yields an `N x H x W` activation stack. The head
//! varies with [`HeadKind`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Layer, ModelGraph};
use crate::tensor::Tensor;

/// Upper bound on synthetic channel counts.
pub const MAX_SYNTHETIC_CHANNELS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    /// Flatten and one dense layer: no nonlinearity after the split.
    Linear,
    /// Flatten, dense, ReLU, dense.
    ReluMlp,
    /// 3x3 convolution, ReLU, pooling, dense.
    ConvRelu,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Linear => "linear",
            HeadKind::ReluMlp => "relu-mlp",
            HeadKind::ConvRelu => "conv-relu",
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(HeadKind::Linear),
            "relu-mlp" => Ok(HeadKind::ReluMlp),
            "conv-relu" => Ok(HeadKind::ConvRelu),
            _ => Err(Error::Invalid(format!(
                "unknown head kind '{s}', expected linear, relu-mlp or conv-relu"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub head: HeadKind,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(channels: usize, size: usize, head: HeadKind, seed: u64) -> Self {
        SyntheticSpec {
            channels,
            height: size,
            width: size,
            num_classes: 5,
            head,
            seed,
        }
    }
}

/// Hidden width of the `relu-mlp` head.
const MLP_HIDDEN: usize = 16;
/// Output channels of the `conv-relu` head's convolution.
const CONV_HIDDEN: usize = 8;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], scale: f32) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

fn biases(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn generate_synthetic_model(spec: &SyntheticSpec) -> Result<ModelGraph> {
    let SyntheticSpec {
        channels: n,
        height: h,
        width: w,
        num_classes,
        head,
        seed,
    } = *spec;
    if n == 0 || n > MAX_SYNTHETIC_CHANNELS {
        return Err(Error::Invalid(format!(
            "synthetic models support 1..={MAX_SYNTHETIC_CHANNELS} channels, got {n}"
        )));
    }
    if h == 0 || w == 0 || num_classes == 0 {
        return Err(Error::Invalid("sizes and class count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let fan_in = 27.0f32;
    let mut kernels = uniform(&mut rng, &[n, 3, 3, 3], (3.0 / fan_in).sqrt());
    // Per-channel gain spreads activation magnitudes across maps.
    for k in 0..n {
        let gain = rng.gen_range(0.2f32..2.0);
        kernels.data_mut()[k * 27..(k + 1) * 27]
            .iter_mut()
            .for_each(|v| *v *= gain);
    }
    let frontend = vec![
        Layer::Conv2d {
            kernels,
            bias: biases(&mut rng, n, 0.1),
            stride: 1,
            padding: 1,
        },
        Layer::Relu,
        Layer::MaxPool {
            window: 2,
            stride: 2,
        },
    ];

    let flat = n * h * w;
    let head_layers = match head {
        HeadKind::Linear => vec![
            Layer::Flatten,
            Layer::Dense {
                weights: uniform(&mut rng, &[num_classes, flat], (3.0 / flat as f32).sqrt()),
                bias: biases(&mut rng, num_classes, 0.1),
            },
        ],
        HeadKind::ReluMlp => vec![
            Layer::Flatten,
            Layer::Dense {
                weights: uniform(&mut rng, &[MLP_HIDDEN, flat], (6.0 / flat as f32).sqrt()),
                bias: biases(&mut rng, MLP_HIDDEN, 0.2),
            },
            Layer::Relu,
            Layer::Dense {
                weights: uniform(&mut rng, &[num_classes, MLP_HIDDEN], (3.0 / MLP_HIDDEN as f32).sqrt()),
                bias: biases(&mut rng, num_classes, 0.1),
            },
        ],
        HeadKind::ConvRelu => {
            let conv_fan = (9 * n) as f32;
            let mut layers = vec![
                Layer::Conv2d {
                    kernels: uniform(&mut rng, &[CONV_HIDDEN, n, 3, 3], (6.0 / conv_fan).sqrt()),
                    bias: biases(&mut rng, CONV_HIDDEN, 0.2),
                    stride: 1,
                    padding: 1,
                },
                Layer::Relu,
            ];
            let pooled = if h % 2 == 0 && w % 2 == 0 {
                layers.push(Layer::MaxPool {
                    window: 2,
                    stride: 2,
                });
                layers.push(Layer::Flatten);
                CONV_HIDDEN * (h / 2) * (w / 2)
            } else {
                layers.push(Layer::GlobalAvgPool);
                CONV_HIDDEN
            };
            layers.push(Layer::Dense {
                weights: uniform(&mut rng, &[num_classes, pooled], (3.0 / pooled as f32).sqrt()),
                bias: biases(&mut rng, num_classes, 0.1),
            });
            layers
        }
    };
    ModelGraph::new([3, 2 * h, 2 * w], frontend, head_layers)
}

/// Image with entries uniform in `[0, 1)`, shaped for `model`.
pub fn synthetic_image(model: &ModelGraph, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    Tensor::from_fn(&model.input_shape(), |_| rng.gen_range(0.0f32..1.0))
}

/// Index of the largest logit, lowest index on ties.
pub fn top_class(logits: &[f64]) -> usize {
    logits
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}
