//! Layered CNN split at an activation layer into a frontend (image to
//! activation stack) and a head (activation stack to logits), plus the two
//! backward traversals over the head: plain gradients and DeepLIFT-Rescale
//! multipliers against the all-zero reference stack.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, dims3, softmax, window_out, PoolMode, Tensor};

/// Below this `|Δinput|` the Rescale multiplier falls back to the local
/// gradient.
pub const RESCALE_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d {
        kernels: Tensor,
        bias: Vec<f32>,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    AvgPool {
        window: usize,
        stride: usize,
    },
    GlobalAvgPool,
    Flatten,
    Dense {
        weights: Tensor,
        bias: Vec<f32>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Conv2d,
    Relu,
    Maxpool,
    Avgpool,
    GlobalAvgpool,
    Flatten,
    Dense,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::Maxpool => "maxpool",
            LayerKind::Avgpool => "avgpool",
            LayerKind::GlobalAvgpool => "global-avgpool",
            LayerKind::Flatten => "flatten",
            LayerKind::Dense => "dense",
        }
    }

    pub fn parse(s: &str) -> Option<LayerKind> {
        Some(match s {
            "conv2d" => LayerKind::Conv2d,
            "relu" => LayerKind::Relu,
            "maxpool" => LayerKind::Maxpool,
            "avgpool" => LayerKind::Avgpool,
            "global-avgpool" => LayerKind::GlobalAvgpool,
            "flatten" => LayerKind::Flatten,
            "dense" => LayerKind::Dense,
            _ => return None,
        })
    }
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv2d { .. } => LayerKind::Conv2d,
            Layer::Relu => LayerKind::Relu,
            Layer::MaxPool { .. } => LayerKind::Maxpool,
            Layer::AvgPool { .. } => LayerKind::Avgpool,
            Layer::GlobalAvgPool => LayerKind::GlobalAvgpool,
            Layer::Flatten => LayerKind::Flatten,
            Layer::Dense { .. } => LayerKind::Dense,
        }
    }

    /// True for layers that are affine in their input.
    pub fn is_linear(&self) -> bool {
        !matches!(self, Layer::Relu | Layer::MaxPool { .. })
    }

    /// Shape produced from an input of shape `input`, or a reason it cannot be.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        let spatial = |op: &'static str| match *input {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(format!("{op} needs a C x H x W input, got {input:?}")),
        };
        match self {
            Layer::Conv2d {
                kernels,
                bias,
                stride,
                padding,
            } => {
                let (c, h, w) = spatial("conv2d")?;
                let [o, kc, kh, kw] = *kernels.shape() else {
                    return Err(format!("kernel tensor must be rank 4, got {:?}", kernels.shape()));
                };
                if kc != c {
                    return Err(format!("kernels expect {kc} input channels, input has {c}"));
                }
                if bias.len() != o {
                    return Err(format!("bias length {} for {o} output channels", bias.len()));
                }
                let ho = window_out("conv2d", h, kh, *stride, *padding).map_err(|e| e.to_string())?;
                let wo = window_out("conv2d", w, kw, *stride, *padding).map_err(|e| e.to_string())?;
                Ok(vec![o, ho, wo])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool { window, stride } | Layer::AvgPool { window, stride } => {
                let (c, h, w) = spatial("pool")?;
                let ho = window_out("pool", h, *window, *stride, 0).map_err(|e| e.to_string())?;
                let wo = window_out("pool", w, *window, *stride, 0).map_err(|e| e.to_string())?;
                Ok(vec![c, ho, wo])
            }
            Layer::GlobalAvgPool => {
                let (c, _, _) = spatial("global-avgpool")?;
                Ok(vec![c])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Dense { weights, bias } => {
                let [m, n] = *weights.shape() else {
                    return Err(format!("weights must be rank 2, got {:?}", weights.shape()));
                };
                if input.len() != 1 {
                    return Err(format!("dense needs a flat input, got {input:?}"));
                }
                if input[0] != n {
                    return Err(format!("weights expect {n} inputs, got {}", input[0]));
                }
                if bias.len() != m {
                    return Err(format!("bias length {} for {m} outputs", bias.len()));
                }
                Ok(vec![m])
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d {
                kernels,
                bias,
                stride,
                padding,
            } => tensor::conv2d(x, kernels, bias, *stride, *padding),
            Layer::Relu => Ok(tensor::relu(x)),
            Layer::MaxPool { window, stride } => tensor::pool(x, PoolMode::Max, *window, *stride),
            Layer::AvgPool { window, stride } => tensor::pool(x, PoolMode::Avg, *window, *stride),
            Layer::GlobalAvgPool => tensor::pool(x, PoolMode::GlobalAvg, 0, 0),
            Layer::Flatten => x.reshape(&[x.len()]),
            Layer::Dense { weights, bias } => {
                let flat = x.reshape(&[x.len()])?;
                tensor::dense(&flat, weights, bias)
            }
        }
    }

    /// Output of a vector-producing layer kept in `f64`, so target logits
    /// are not rounded to `f32`.
    fn forward_f64(&self, x: &Tensor) -> Result<Vec<f64>> {
        match self {
            Layer::Dense { weights, bias } => tensor::dense_f64(x.data(), weights, bias),
            Layer::GlobalAvgPool => {
                let (c, h, w) = dims3("global-avgpool", x)?;
                let plane = h * w;
                Ok((0..c)
                    .map(|k| {
                        x.data()[k * plane..(k + 1) * plane]
                            .iter()
                            .map(|&v| f64::from(v))
                            .sum::<f64>()
                            / plane as f64
                    })
                    .collect())
            }
            _ => Ok(self
                .forward(x)?
                .data()
                .iter()
                .map(|&v| f64::from(v))
                .collect()),
        }
    }
}

/// The `N x H x W` activation maps at the split layer for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationStack(Tensor);

impl ActivationStack {
    pub fn new(t: Tensor) -> Result<Self> {
        dims3("activation stack", &t)?;
        Ok(ActivationStack(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[0]
    }

    /// `(H, W)` of each map.
    pub fn spatial(&self) -> (usize, usize) {
        (self.0.shape()[1], self.0.shape()[2])
    }

    pub fn zeros_like(&self) -> ActivationStack {
        ActivationStack(Tensor::zeros(self.0.shape()))
    }

    pub fn channel(&self, k: usize) -> Tensor {
        self.0.channel(k).expect("channel index in range")
    }
}

/// A CNN split into `frontend` (image to activations) and `head`
/// (activations to logits). Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    input_shape: [usize; 3],
    frontend: Vec<Layer>,
    head: Vec<Layer>,
    activation_shape: [usize; 3],
    num_classes: usize,
    head_shapes: Vec<Vec<usize>>,
}

impl ModelGraph {
    /// Shape-checks the whole chain. Errors name the first offending layer
    /// by its index in the concatenated layer list.
    pub fn new(input_shape: [usize; 3], frontend: Vec<Layer>, head: Vec<Layer>) -> Result<Self> {
        if input_shape.contains(&0) {
            return Err(Error::Invalid(format!(
                "input shape {input_shape:?} must be positive"
            )));
        }
        let mut shape = input_shape.to_vec();
        for (index, layer) in frontend.iter().enumerate() {
            shape = layer.output_shape(&shape).map_err(|reason| Error::Layer {
                index,
                kind: layer.kind().as_str().into(),
                reason,
            })?;
        }
        let activation_shape: [usize; 3] = match *shape {
            [n, h, w] => [n, h, w],
            _ => {
                return Err(Error::Layer {
                    index: frontend.len().saturating_sub(1),
                    kind: frontend
                        .last()
                        .map_or("input", |l| l.kind().as_str())
                        .into(),
                    reason: format!("frontend must end in a C x H x W stack, got {shape:?}"),
                })
            }
        };
        let mut head_shapes = Vec::with_capacity(head.len());
        for (offset, layer) in head.iter().enumerate() {
            head_shapes.push(shape.clone());
            shape = layer.output_shape(&shape).map_err(|reason| Error::Layer {
                index: frontend.len() + offset,
                kind: layer.kind().as_str().into(),
                reason,
            })?;
        }
        if shape.len() != 1 {
            return Err(Error::Invalid(format!(
                "head must end in a logit vector, got shape {shape:?}"
            )));
        }
        Ok(ModelGraph {
            input_shape,
            frontend,
            head,
            activation_shape,
            num_classes: shape[0],
            head_shapes,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn activation_shape(&self) -> [usize; 3] {
        self.activation_shape
    }

    pub fn num_channels(&self) -> usize {
        self.activation_shape[0]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn frontend(&self) -> &[Layer] {
        &self.frontend
    }

    pub fn head(&self) -> &[Layer] {
        &self.head
    }

    /// Index of the first head layer in the concatenated layer list.
    pub fn split_index(&self) -> usize {
        self.frontend.len()
    }

    pub fn head_is_linear(&self) -> bool {
        self.head.iter().all(Layer::is_linear)
    }

    pub fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.num_classes {
            return Err(Error::ClassOutOfRange {
                class,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        if image.shape() != self.input_shape {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: self.input_shape.to_vec(),
                right: image.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn check_stack(&self, a: &ActivationStack) -> Result<()> {
        if a.tensor().shape() != self.activation_shape {
            return Err(Error::ShapeMismatch {
                op: "head",
                left: self.activation_shape.to_vec(),
                right: a.tensor().shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn frontend_forward(&self, image: &Tensor) -> Result<ActivationStack> {
        self.check_image(image)?;
        let mut x = image.clone();
        for layer in &self.frontend {
            x = layer.forward(&x)?;
        }
        ActivationStack::new(x)
    }

    /// All logits of the head applied to `a`.
    pub fn head_logits(&self, a: &ActivationStack) -> Result<Vec<f64>> {
        self.check_stack(a)?;
        head_pass(&self.head, a.tensor(), None)
    }

    /// Target logit `F^c(a)`.
    pub fn forward_head(&self, a: &ActivationStack, class: usize) -> Result<f64> {
        self.check_class(class)?;
        Ok(self.head_logits(a)?[class])
    }

    pub fn forward_full(&self, image: &Tensor) -> Result<FullForward> {
        let activations = self.frontend_forward(image)?;
        let logits = self.head_logits(&activations)?;
        let probs = softmax(&logits);
        Ok(FullForward {
            activations,
            logits,
            probs,
        })
    }

    /// Softmax probability of `class` for `image`.
    pub fn class_probability(&self, image: &Tensor, class: usize) -> Result<f64> {
        self.check_class(class)?;
        Ok(self.forward_full(image)?.probs[class])
    }
}

fn head_pass(head: &[Layer], input: &Tensor, mut record: Option<&mut Vec<Tensor>>) -> Result<Vec<f64>> {
    let Some((last, body)) = head.split_last() else {
        return Ok(input.data().iter().map(|&v| f64::from(v)).collect());
    };
    let mut x = input.clone();
    for layer in body {
        let y = layer.forward(&x)?;
        if let Some(rec) = record.as_deref_mut() {
            rec.push(x);
        }
        x = y;
    }
    let out = last.forward_f64(&x)?;
    if let Some(rec) = record {
        rec.push(x);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FullForward {
    pub activations: ActivationStack,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Per-layer head inputs for one activation stack, and optionally for the
/// all-zero reference stack.
#[derive(Debug, Clone)]
pub struct HeadTrace {
    inputs: Vec<Tensor>,
    logits: Vec<f64>,
    reference: Option<(Vec<Tensor>, Vec<f64>)>,
}

impl HeadTrace {
    /// Forward trace of `a` plus the trace of the zero stack.
    pub fn record(model: &ModelGraph, a: &ActivationStack) -> Result<Self> {
        let mut trace = Self::record_forward(model, a)?;
        let zero = a.zeros_like();
        let mut ref_inputs = Vec::with_capacity(model.head.len());
        let ref_logits = head_pass(&model.head, zero.tensor(), Some(&mut ref_inputs))?;
        trace.reference = Some((ref_inputs, ref_logits));
        Ok(trace)
    }

    /// Forward trace only; enough for gradients, not for DeepLIFT.
    pub fn record_forward(model: &ModelGraph, a: &ActivationStack) -> Result<Self> {
        model.check_stack(a)?;
        let mut inputs = Vec::with_capacity(model.head.len());
        let logits = head_pass(&model.head, a.tensor(), Some(&mut inputs))?;
        Ok(HeadTrace {
            inputs,
            logits,
            reference: None,
        })
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn reference_logits(&self) -> Option<&[f64]> {
        self.reference.as_ref().map(|(_, l)| l.as_slice())
    }

    pub fn has_reference(&self) -> bool {
        self.reference.is_some()
    }

    /// The activation stack the trace was recorded for.
    pub fn activations(&self) -> Option<&Tensor> {
        self.inputs.first()
    }

    fn check(&self, model: &ModelGraph) -> Result<()> {
        if self.inputs.len() != model.head.len() {
            return Err(Error::TraceMismatch(format!(
                "trace has {} layers, head has {}",
                self.inputs.len(),
                model.head.len()
            )));
        }
        if self.logits.len() != model.num_classes {
            return Err(Error::TraceMismatch(format!(
                "trace has {} logits, model has {} classes",
                self.logits.len(),
                model.num_classes
            )));
        }
        for (i, (x, s)) in self.inputs.iter().zip(&model.head_shapes).enumerate() {
            if x.shape() != s.as_slice() {
                return Err(Error::TraceMismatch(format!(
                    "head layer {i} input {:?}, model expects {s:?}",
                    x.shape()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rule {
    Gradient,
    Rescale,
}

/// `∂F^c/∂A` for every activation neuron, as `f64`.
pub fn head_gradient_f64(model: &ModelGraph, trace: &HeadTrace, class: usize) -> Result<Vec<f64>> {
    model.check_class(class)?;
    trace.check(model)?;
    backward(model, trace, class, Rule::Gradient)
}

/// Gradient of the target logit with respect to the activation stack.
pub fn backward_head_gradient(model: &ModelGraph, trace: &HeadTrace, class: usize) -> Result<Tensor> {
    let g = head_gradient_f64(model, trace, class)?;
    to_stack_tensor(model, g)
}

/// DeepLIFT-Rescale contribution of every activation neuron to
/// `F^c(A) - F^c(0)`, as `f64`.
pub fn deeplift_contributions_f64(
    model: &ModelGraph,
    trace: &HeadTrace,
    class: usize,
) -> Result<Vec<f64>> {
    model.check_class(class)?;
    trace.check(model)?;
    if trace.reference.is_none() {
        return Err(Error::TraceMismatch(
            "DeepLIFT needs reference activations; record the trace with HeadTrace::record".into(),
        ));
    }
    let multipliers = backward(model, trace, class, Rule::Rescale)?;
    // Head layers always exist, and the reference stack is zero, so Δa = a.
    let a = &trace.inputs[0];
    Ok(multipliers
        .iter()
        .zip(a.data())
        .map(|(m, &x)| m * f64::from(x))
        .collect())
}

pub fn deeplift_head(model: &ModelGraph, trace: &HeadTrace, class: usize) -> Result<Tensor> {
    let c = deeplift_contributions_f64(model, trace, class)?;
    to_stack_tensor(model, c)
}

fn to_stack_tensor(model: &ModelGraph, v: Vec<f64>) -> Result<Tensor> {
    Tensor::new(
        model.activation_shape.to_vec(),
        v.into_iter().map(|x| x as f32).collect(),
    )
}

fn backward(model: &ModelGraph, trace: &HeadTrace, class: usize, rule: Rule) -> Result<Vec<f64>> {
    let mut g = vec![0.0f64; model.num_classes];
    g[class] = 1.0;
    let refs = trace.reference.as_ref().map(|(r, _)| r);
    for (idx, layer) in model.head.iter().enumerate().rev() {
        let x = &trace.inputs[idx];
        let xr = refs.map(|r| &r[idx]);
        g = layer_backward(layer, x, xr, &g, rule)?;
    }
    Ok(g)
}

/// Position (flat index into the input) of the first maximum in a pooling
/// window, scanning row-major.
#[allow(clippy::too_many_arguments)]
fn window_argmax(x: &[f32], h: usize, w: usize, k: usize, oi: usize, oj: usize, window: usize, stride: usize) -> usize {
    let mut best = usize::MAX;
    let mut best_v = f32::NEG_INFINITY;
    for a in 0..window {
        for b in 0..window {
            let p = (k * h + oi * stride + a) * w + oj * stride + b;
            if best == usize::MAX || x[p] > best_v {
                best = p;
                best_v = x[p];
            }
        }
    }
    best
}

fn layer_backward(
    layer: &Layer,
    x: &Tensor,
    xr: Option<&Tensor>,
    g_out: &[f64],
    rule: Rule,
) -> Result<Vec<f64>> {
    let xd = x.data();
    let mut g_in = vec![0.0f64; xd.len()];
    match layer {
        Layer::Dense { weights, .. } => {
            let n = xd.len();
            let w = weights.data();
            for (i, &go) in g_out.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                for (gi, &wv) in g_in.iter_mut().zip(&w[i * n..(i + 1) * n]) {
                    *gi += f64::from(wv) * go;
                }
            }
        }
        Layer::Flatten => g_in.copy_from_slice(g_out),
        Layer::GlobalAvgPool => {
            let (_, h, w) = dims3("global-avgpool", x)?;
            let plane = h * w;
            for (i, gi) in g_in.iter_mut().enumerate() {
                *gi = g_out[i / plane] / plane as f64;
            }
        }
        Layer::AvgPool { window, stride } => {
            let (c, h, w) = dims3("avgpool", x)?;
            let ho = (h - window) / stride + 1;
            let wo = (w - window) / stride + 1;
            let share = 1.0 / (window * window) as f64;
            for k in 0..c {
                for oi in 0..ho {
                    for oj in 0..wo {
                        let go = g_out[(k * ho + oi) * wo + oj] * share;
                        for a in 0..*window {
                            for b in 0..*window {
                                g_in[(k * h + oi * stride + a) * w + oj * stride + b] += go;
                            }
                        }
                    }
                }
            }
        }
        Layer::MaxPool { window, stride } => {
            let (c, h, w) = dims3("maxpool", x)?;
            let ho = (h - window) / stride + 1;
            let wo = (w - window) / stride + 1;
            for k in 0..c {
                for oi in 0..ho {
                    for oj in 0..wo {
                        let go = g_out[(k * ho + oi) * wo + oj];
                        let p = window_argmax(xd, h, w, k, oi, oj, *window, *stride);
                        let m = match (rule, xr) {
                            (Rule::Rescale, Some(r)) => {
                                let rd = r.data();
                                let pr = window_argmax(rd, h, w, k, oi, oj, *window, *stride);
                                let dy = f64::from(xd[p]) - f64::from(rd[pr]);
                                let dx = f64::from(xd[p]) - f64::from(rd[p]);
                                if dx.abs() > RESCALE_EPSILON {
                                    dy / dx
                                } else {
                                    1.0
                                }
                            }
                            _ => 1.0,
                        };
                        g_in[p] += go * m;
                    }
                }
            }
        }
        Layer::Relu => {
            for (i, gi) in g_in.iter_mut().enumerate() {
                let xv = f64::from(xd[i]);
                let local = if xv > 0.0 { 1.0 } else { 0.0 };
                let m = match (rule, xr) {
                    (Rule::Rescale, Some(r)) => {
                        let rv = f64::from(r.data()[i]);
                        let dx = xv - rv;
                        if dx.abs() > RESCALE_EPSILON {
                            (xv.max(0.0) - rv.max(0.0)) / dx
                        } else {
                            local
                        }
                    }
                    _ => local,
                };
                *gi = g_out[i] * m;
            }
        }
        Layer::Conv2d {
            kernels,
            stride,
            padding,
            ..
        } => {
            let (cin, h, w) = dims3("conv2d", x)?;
            let [cout, _, kh, kw] = *kernels.shape() else {
                unreachable!("validated at construction")
            };
            let ho = (h + 2 * padding - kh) / stride + 1;
            let wo = (w + 2 * padding - kw) / stride + 1;
            let kd = kernels.data();
            for o in 0..cout {
                for oi in 0..ho {
                    for oj in 0..wo {
                        let go = g_out[(o * ho + oi) * wo + oj];
                        if go == 0.0 {
                            continue;
                        }
                        for c in 0..cin {
                            for a in 0..kh {
                                let ii = (oi * stride + a) as isize - *padding as isize;
                                if ii < 0 || ii >= h as isize {
                                    continue;
                                }
                                for b in 0..kw {
                                    let jj = (oj * stride + b) as isize - *padding as isize;
                                    if jj < 0 || jj >= w as isize {
                                        continue;
                                    }
                                    let kv = kd[((o * cin + c) * kh + a) * kw + b];
                                    g_in[(c * h + ii as usize) * w + jj as usize] += f64::from(kv) * go;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(g_in)
}

/// Zeroes every channel whose mask entry is `false`.
pub fn mask_apply(a: &ActivationStack, mask: &[bool]) -> Result<ActivationStack> {
    let n = a.channels();
    if mask.len() != n {
        return Err(Error::ShapeMismatch {
            op: "mask_apply",
            left: vec![n],
            right: vec![mask.len()],
        });
    }
    let (h, w) = a.spatial();
    let plane = h * w;
    let mut t = a.tensor().clone();
    for (k, &keep) in mask.iter().enumerate() {
        if !keep {
            t.data_mut()[k * plane..(k + 1) * plane].fill(0.0);
        }
    }
    Ok(ActivationStack(t))
}

/// [`mask_apply`] with the mask packed into a bitset (bit `k` = channel `k`).
pub fn mask_apply_bits(a: &ActivationStack, bits: u64) -> ActivationStack {
    let n = a.channels();
    assert!(n <= 64, "bitset masks cover at most 64 channels");
    let (h, w) = a.spatial();
    let plane = h * w;
    let mut t = a.tensor().clone();
    for k in 0..n {
        if bits >> k & 1 == 0 {
            t.data_mut()[k * plane..(k + 1) * plane].fill(0.0);
        }
    }
    ActivationStack(t)
}
