//! Dense row-major `f32` tensors and the numerical primitives the network
//! and attribution code are built from.
//!
//! Layout is channel-first (`C x H x W`) everywhere. Storage is `f32`;
//! reductions (convolution sums, dense rows, pooling means, softmax
//! denominators) accumulate in `f64` and round once on store.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidShape {
                op: "tensor",
                reason: format!("zero-sized dimension in {shape:?}"),
            });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidShape {
                op: "tensor",
                reason: format!(
                    "shape {shape:?} needs {expected} values, got {}",
                    data.len()
                ),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// One-dimensional tensor over `data`. Panics if `data` is empty.
    pub fn vector(data: Vec<f32>) -> Self {
        assert!(!data.is_empty(), "tensor dimensions must be positive");
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    /// Value at `(c, i, j)` of a rank-3 tensor.
    pub fn at3(&self, c: usize, i: usize, j: usize) -> f32 {
        let (h, w) = (self.shape[1], self.shape[2]);
        self.data[(c * h + i) * w + j]
    }

    /// Channel `c` of a rank-3 tensor as an `H x W` tensor.
    pub fn channel(&self, c: usize) -> Result<Tensor> {
        let (ch, h, w) = dims3("channel", self)?;
        if c >= ch {
            return Err(Error::InvalidShape {
                op: "channel",
                reason: format!("channel {c} of {ch}"),
            });
        }
        let plane = h * w;
        Tensor::new(vec![h, w], self.data[c * plane..(c + 1) * plane].to_vec())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum()
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }
}

pub(crate) fn dims3(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::InvalidShape {
            op,
            reason: format!("expected a C x H x W tensor, got {s:?}"),
        }),
    }
}

pub(crate) fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [h, w] => Ok((h, w)),
        ref s => Err(Error::InvalidShape {
            op,
            reason: format!("expected an H x W tensor, got {s:?}"),
        }),
    }
}

/// Output extent of a sliding window, requiring an exact fit.
pub(crate) fn window_out(
    op: &'static str,
    extent: usize,
    window: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    if stride == 0 || window == 0 {
        return Err(Error::InvalidShape {
            op,
            reason: "window and stride must be positive".into(),
        });
    }
    let padded = extent + 2 * padding;
    if window > padded {
        return Err(Error::InvalidShape {
            op,
            reason: format!("window {window} exceeds padded extent {padded}"),
        });
    }
    if !(padded - window).is_multiple_of(stride) {
        return Err(Error::InvalidShape {
            op,
            reason: format!(
                "extent {extent} (padding {padding}) does not tile exactly with window {window}, stride {stride}"
            ),
        });
    }
    Ok((padded - window) / stride + 1)
}

/// Cross-correlation of a `C_in x H x W` input with `C_out x C_in x kH x kW`
/// kernels.
pub fn conv2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: &[f32],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (cin, h, w) = dims3("conv2d", input)?;
    let (cout, kcin, kh, kw) = match *kernels.shape() {
        [a, b, c, d] => (a, b, c, d),
        _ => {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: input.shape().to_vec(),
                right: kernels.shape().to_vec(),
            })
        }
    };
    if kcin != cin || bias.len() != cout {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            left: input.shape().to_vec(),
            right: kernels.shape().to_vec(),
        });
    }
    let ho = window_out("conv2d", h, kh, stride, padding)?;
    let wo = window_out("conv2d", w, kw, stride, padding)?;

    let x = input.data();
    let k = kernels.data();
    let mut out = Vec::with_capacity(cout * ho * wo);
    for o in 0..cout {
        for oi in 0..ho {
            for oj in 0..wo {
                let mut acc = f64::from(bias[o]);
                for c in 0..cin {
                    for a in 0..kh {
                        let ii = (oi * stride + a) as isize - padding as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for b in 0..kw {
                            let jj = (oj * stride + b) as isize - padding as isize;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            let xv = x[(c * h + ii as usize) * w + jj as usize];
                            let kv = k[((o * cin + c) * kh + a) * kw + b];
                            acc += f64::from(xv) * f64::from(kv);
                        }
                    }
                }
                out.push(acc as f32);
            }
        }
    }
    Tensor::new(vec![cout, ho, wo], out)
}

/// `weights (m x n) * input (n) + bias (m)`, accumulated in `f64`.
pub fn dense_f64(input: &[f32], weights: &Tensor, bias: &[f32]) -> Result<Vec<f64>> {
    let (m, n) = match *weights.shape() {
        [m, n] => (m, n),
        _ => {
            return Err(Error::ShapeMismatch {
                op: "dense",
                left: vec![input.len()],
                right: weights.shape().to_vec(),
            })
        }
    };
    if n != input.len() || bias.len() != m {
        return Err(Error::ShapeMismatch {
            op: "dense",
            left: vec![input.len()],
            right: weights.shape().to_vec(),
        });
    }
    let w = weights.data();
    Ok((0..m)
        .map(|i| {
            let row = &w[i * n..(i + 1) * n];
            row.iter()
                .zip(input)
                .fold(f64::from(bias[i]), |acc, (&a, &b)| {
                    acc + f64::from(a) * f64::from(b)
                })
        })
        .collect())
}

pub fn dense(input: &Tensor, weights: &Tensor, bias: &[f32]) -> Result<Tensor> {
    let out = dense_f64(input.data(), weights, bias)?;
    Ok(Tensor::vector(out.into_iter().map(|v| v as f32).collect()))
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolMode {
    Max,
    Avg,
    GlobalAvg,
}

/// Window pooling over a `C x H x W` tensor. `GlobalAvg` ignores `window`
/// and `stride` and returns a length-`C` vector.
pub fn pool(input: &Tensor, mode: PoolMode, window: usize, stride: usize) -> Result<Tensor> {
    let (c, h, w) = dims3("pool", input)?;
    let x = input.data();
    if mode == PoolMode::GlobalAvg {
        let plane = h * w;
        let out = (0..c)
            .map(|k| {
                let s: f64 = x[k * plane..(k + 1) * plane]
                    .iter()
                    .map(|&v| f64::from(v))
                    .sum();
                (s / plane as f64) as f32
            })
            .collect();
        return Ok(Tensor::vector(out));
    }
    let ho = window_out("pool", h, window, stride, 0)?;
    let wo = window_out("pool", w, window, stride, 0)?;
    let mut out = Vec::with_capacity(c * ho * wo);
    for k in 0..c {
        for oi in 0..ho {
            for oj in 0..wo {
                let cells = (0..window).flat_map(|a| {
                    (0..window).map(move |b| x[(k * h + oi * stride + a) * w + oj * stride + b])
                });
                let v = match mode {
                    PoolMode::Max => cells.fold(f32::NEG_INFINITY, f32::max),
                    _ => {
                        let s: f64 = cells.map(f64::from).sum();
                        (s / (window * window) as f64) as f32
                    }
                };
                out.push(v);
            }
        }
    }
    Tensor::new(vec![c, ho, wo], out)
}

/// Numerically stable softmax (max subtraction, `f64` denominator).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Bilinear resize of an `H x W` map with the align-corners convention:
/// the four corner pixels of the source land exactly on the target corners.
pub fn upsample_bilinear(map: &Tensor, target: (usize, usize)) -> Result<Tensor> {
    let (h, w) = dims2("upsample_bilinear", map)?;
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::InvalidShape {
            op: "upsample_bilinear",
            reason: format!("target {target:?} must be positive"),
        });
    }
    let coord = |o: usize, src: usize, dst: usize| -> (usize, usize, f64) {
        if dst == 1 || src == 1 {
            return (0, 0, 0.0);
        }
        let pos = o as f64 * (src - 1) as f64 / (dst - 1) as f64;
        let lo = (pos.floor() as usize).min(src - 1);
        let hi = (lo + 1).min(src - 1);
        (lo, hi, pos - lo as f64)
    };
    let x = map.data();
    let mut out = Vec::with_capacity(th * tw);
    for oi in 0..th {
        let (i0, i1, fy) = coord(oi, h, th);
        for oj in 0..tw {
            let (j0, j1, fx) = coord(oj, w, tw);
            let v00 = f64::from(x[i0 * w + j0]);
            let v01 = f64::from(x[i0 * w + j1]);
            let v10 = f64::from(x[i1 * w + j0]);
            let v11 = f64::from(x[i1 * w + j1]);
            let top = v00 + (v01 - v00) * fx;
            let bottom = v10 + (v11 - v10) * fx;
            let v = top + (bottom - top) * fy;
            // Clamp rounding excursions so bounds of the source are kept.
            let lo = v00.min(v01).min(v10).min(v11);
            let hi = v00.max(v01).max(v10).max(v11);
            out.push(v.clamp(lo, hi) as f32);
        }
    }
    Tensor::new(vec![th, tw], out)
}

/// `(v - min) / (max - min)`. A constant input maps to all zeros.
pub fn minmax_normalize(map: &Tensor) -> Tensor {
    let lo = map.min();
    let hi = map.max();
    let range = f64::from(hi) - f64::from(lo);
    if !(range > 0.0) {
        return Tensor::zeros(map.shape());
    }
    map.map(|v| ((f64::from(v) - f64::from(lo)) / range).clamp(0.0, 1.0) as f32)
}

/// Elementwise product of two tensors of identical shape.
pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "hadamard",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Multiplies every channel of a `C x H x W` image by one `H x W` mask.
pub fn hadamard_broadcast(mask: &Tensor, image: &Tensor) -> Result<Tensor> {
    let (h, w) = dims2("hadamard_broadcast", mask)?;
    let (c, ih, iw) = dims3("hadamard_broadcast", image)?;
    if (h, w) != (ih, iw) {
        return Err(Error::ShapeMismatch {
            op: "hadamard_broadcast",
            left: mask.shape().to_vec(),
            right: image.shape().to_vec(),
        });
    }
    let m = mask.data();
    let plane = h * w;
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(idx, &v)| v * m[idx % plane])
        .collect();
    Tensor::new(vec![c, h, w], data)
}
