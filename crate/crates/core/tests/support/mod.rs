//! Shared helpers for the integration tests: an independent `f64` head
//! evaluator written directly from the layer definitions, and fixture
//! builders.
#![allow(dead_code)]

use camshap::network::{ActivationStack, Layer, ModelGraph};
use camshap::synthetic::{generate_synthetic_model, synthetic_image, top_class, HeadKind, SyntheticSpec};
use camshap::Tensor;

/// Output of [`eval_head`]: values plus the piecewise-linear region, i.e.
/// every ReLU sign and every max-pool winner along the way.
pub struct RefEval {
    pub out: Vec<f64>,
    pub region: Vec<usize>,
}

fn f(x: f32) -> f64 {
    f64::from(x)
}

/// Runs `layers` on `x` (shape `shape`) entirely in `f64`.
pub fn eval_layers(layers: &[Layer], shape: &[usize], x: &[f64]) -> RefEval {
    let mut shape = shape.to_vec();
    let mut cur = x.to_vec();
    let mut region = Vec::new();
    for layer in layers {
        match layer {
            Layer::Conv2d {
                kernels,
                bias,
                stride,
                padding,
            } => {
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let ks = kernels.shape();
                let (o, kh, kw) = (ks[0], ks[2], ks[3]);
                let ho = (h + 2 * padding - kh) / stride + 1;
                let wo = (w + 2 * padding - kw) / stride + 1;
                let mut next = vec![0.0; o * ho * wo];
                for oc in 0..o {
                    for i in 0..ho {
                        for j in 0..wo {
                            let mut acc = f(bias[oc]);
                            for ic in 0..c {
                                for u in 0..kh {
                                    for v in 0..kw {
                                        let ii = (i * stride + u) as i64 - *padding as i64;
                                        let jj = (j * stride + v) as i64 - *padding as i64;
                                        if ii < 0 || jj < 0 || ii >= h as i64 || jj >= w as i64 {
                                            continue;
                                        }
                                        let kv = kernels.data()[((oc * c + ic) * kh + u) * kw + v];
                                        acc += f(kv) * cur[(ic * h + ii as usize) * w + jj as usize];
                                    }
                                }
                            }
                            next[(oc * ho + i) * wo + j] = acc;
                        }
                    }
                }
                cur = next;
                shape = vec![o, ho, wo];
            }
            Layer::Relu => {
                for v in cur.iter_mut() {
                    region.push(usize::from(*v > 0.0));
                    *v = v.max(0.0);
                }
            }
            Layer::MaxPool { window, stride } | Layer::AvgPool { window, stride } => {
                let is_max = matches!(layer, Layer::MaxPool { .. });
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let ho = (h - window) / stride + 1;
                let wo = (w - window) / stride + 1;
                let mut next = Vec::with_capacity(c * ho * wo);
                for k in 0..c {
                    for i in 0..ho {
                        for j in 0..wo {
                            let mut best = (f64::NEG_INFINITY, 0);
                            let mut sum = 0.0;
                            for u in 0..*window {
                                for v in 0..*window {
                                    let idx = (k * h + i * stride + u) * w + j * stride + v;
                                    sum += cur[idx];
                                    if cur[idx] > best.0 {
                                        best = (cur[idx], idx);
                                    }
                                }
                            }
                            if is_max {
                                region.push(best.1);
                                next.push(best.0);
                            } else {
                                next.push(sum / (window * window) as f64);
                            }
                        }
                    }
                }
                cur = next;
                shape = vec![c, ho, wo];
            }
            Layer::GlobalAvgPool => {
                let (c, plane) = (shape[0], shape[1] * shape[2]);
                cur = (0..c)
                    .map(|k| cur[k * plane..(k + 1) * plane].iter().sum::<f64>() / plane as f64)
                    .collect();
                shape = vec![c];
            }
            Layer::Flatten => shape = vec![cur.len()],
            Layer::Dense { weights, bias } => {
                let (o, i) = (weights.shape()[0], weights.shape()[1]);
                cur = (0..o)
                    .map(|r| {
                        f(bias[r])
                            + (0..i)
                                .map(|k| f(weights.data()[r * i + k]) * cur[k])
                                .sum::<f64>()
                    })
                    .collect();
                shape = vec![o];
            }
        }
    }
    RefEval { out: cur, region }
}

/// Head logit of `class` at activation values `a` (shape of the model's stack).
pub fn ref_head(model: &ModelGraph, a: &[f64], class: usize) -> RefEval {
    let mut e = eval_layers(model.head(), &model.activation_shape(), a);
    e.out = vec![e.out[class]];
    e
}

pub fn stack_f64(a: &ActivationStack) -> Vec<f64> {
    a.tensor().data().iter().map(|&v| f64::from(v)).collect()
}

/// A seeded synthetic model with a matching image, its activation stack
/// and the top-scoring class.
pub struct Fixture {
    pub model: ModelGraph,
    pub image: Tensor,
    pub stack: ActivationStack,
    pub class: usize,
}

pub fn fixture(channels: usize, size: usize, head: HeadKind, seed: u64) -> Fixture {
    let model = generate_synthetic_model(&SyntheticSpec::new(channels, size, head, seed)).unwrap();
    let image = synthetic_image(&model, seed);
    let stack = model.frontend_forward(&image).unwrap();
    let class = top_class(&model.head_logits(&stack).unwrap());
    Fixture {
        model,
        image,
        stack,
        class,
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}
