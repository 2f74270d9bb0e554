//! Channel coefficients for class activation maps and the explanation maps
//! assembled from them.
//!
//! Gradient methods (Grad-CAM, Grad-CAM++, XGrad-CAM) read the head gradient
//! of the target logit. Score-CAM and Ablation-CAM perturb the input or the
//! activation stack and need `N` forward passes. LIFT-CAM sums DeepLIFT
//! contributions per channel from a single backward pass, so its
//! coefficients add up to `F^c(A) - F^c(0)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{self, mask_apply_bits, ActivationStack, HeadTrace, ModelGraph};
use crate::tensor::{self, dims3, Tensor};

/// Grad-CAM++ neuron weights with a smaller denominator are set to zero.
pub const GRAD_CAM_PP_EPSILON: f64 = 1e-12;
/// XGrad-CAM channels with a smaller total activation get a zero coefficient.
pub const XGRAD_CAM_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "grad-cam")]
    GradCam,
    #[serde(rename = "grad-cam++")]
    GradCamPlusPlus,
    #[serde(rename = "xgrad-cam")]
    XGradCam,
    #[serde(rename = "score-cam")]
    ScoreCam,
    #[serde(rename = "ablation-cam")]
    AblationCam,
    #[serde(rename = "shap-cam")]
    ShapCam,
    #[serde(rename = "lift-cam")]
    LiftCam,
    #[serde(rename = "exact-shapley")]
    ExactShapley,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::GradCam,
        Method::GradCamPlusPlus,
        Method::XGradCam,
        Method::ScoreCam,
        Method::AblationCam,
        Method::ShapCam,
        Method::LiftCam,
        Method::ExactShapley,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::GradCam => "grad-cam",
            Method::GradCamPlusPlus => "grad-cam++",
            Method::XGradCam => "xgrad-cam",
            Method::ScoreCam => "score-cam",
            Method::AblationCam => "ablation-cam",
            Method::ShapCam => "shap-cam",
            Method::LiftCam => "lift-cam",
            Method::ExactShapley => "exact-shapley",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::Invalid(format!(
                    "unknown method '{s}', expected one of: {}",
                    names.join(", ")
                ))
            })
    }
}

/// Per-channel importances produced by one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVector {
    pub method: Method,
    pub values: Vec<f64>,
}

impl CoefficientVector {
    pub fn new(method: Method, values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "{method}: coefficient {i} is not finite"
            )));
        }
        Ok(CoefficientVector { method, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> CoefficientVector {
        CoefficientVector {
            method: self.method,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

/// `raw` is `ReLU(Σ α_k A_k)` at activation resolution; `normalized` is
/// that map upsampled to the image and min-max scaled into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationMap {
    pub raw: Tensor,
    pub normalized: Tensor,
}

impl ExplanationMap {
    /// Wraps an already normalized `H' x W'` map (e.g. a hand-built mask).
    pub fn from_normalized(normalized: Tensor) -> Result<Self> {
        tensor::dims2("explanation map", &normalized)?;
        if normalized.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Invalid("normalized map leaves [0, 1]".into()));
        }
        Ok(ExplanationMap {
            raw: normalized.clone(),
            normalized,
        })
    }

    pub fn size(&self) -> (usize, usize) {
        (self.normalized.shape()[0], self.normalized.shape()[1])
    }
}

/// Linear combination of the activation maps, rectified, upsampled to
/// `target` and min-max normalized.
pub fn assemble_map(
    a: &ActivationStack,
    coeffs: &CoefficientVector,
    target: (usize, usize),
) -> Result<ExplanationMap> {
    let n = a.channels();
    if coeffs.len() != n {
        return Err(Error::ShapeMismatch {
            op: "assemble_map",
            left: vec![n],
            right: vec![coeffs.len()],
        });
    }
    let (h, w) = a.spatial();
    let plane = h * w;
    let data = a.tensor().data();
    let raw: Vec<f32> = (0..plane)
        .map(|p| {
            let v: f64 = coeffs
                .values
                .iter()
                .enumerate()
                .map(|(k, &alpha)| alpha * f64::from(data[k * plane + p]))
                .sum();
            v.max(0.0) as f32
        })
        .collect();
    let raw = Tensor::new(vec![h, w], raw)?;
    let normalized = tensor::minmax_normalize(&tensor::upsample_bilinear(&raw, target)?);
    Ok(ExplanationMap { raw, normalized })
}

fn trace_stack(trace: &HeadTrace) -> Result<&Tensor> {
    trace
        .activations()
        .ok_or_else(|| Error::TraceMismatch("trace holds no activations".into()))
}

/// Iterates `(stack plane, gradient plane)` per channel.
fn per_channel<'a>(
    a: &'a Tensor,
    g: &'a [f64],
) -> Result<impl Iterator<Item = (&'a [f32], &'a [f64])> + 'a> {
    let (n, h, w) = dims3("coefficients", a)?;
    let plane = h * w;
    Ok((0..n).map(move |k| {
        (
            &a.data()[k * plane..(k + 1) * plane],
            &g[k * plane..(k + 1) * plane],
        )
    }))
}

/// Grad-CAM: mean head gradient over each activation map.
pub fn grad_cam(model: &ModelGraph, trace: &HeadTrace, class: usize) -> Result<CoefficientVector> {
    let g = network::head_gradient_f64(model, trace, class)?;
    let a = trace_stack(trace)?;
    let values = per_channel(a, &g)?
        .map(|(_, gk)| gk.iter().sum::<f64>() / gk.len() as f64)
        .collect();
    CoefficientVector::new(Method::GradCam, values)
}

/// Grad-CAM++ with the closed-form second/third-order weights
/// `w = g² / (2g² + Σ A · g³)` and `α_k = Σ w · ReLU(g)`.
pub fn grad_cam_pp(model: &ModelGraph, trace: &HeadTrace, class: usize) -> Result<CoefficientVector> {
    let g = network::head_gradient_f64(model, trace, class)?;
    let a = trace_stack(trace)?;
    let values = per_channel(a, &g)?
        .map(|(ak, gk)| {
            let total: f64 = ak.iter().map(|&v| f64::from(v)).sum();
            gk.iter()
                .map(|&gv| {
                    let g2 = gv * gv;
                    let denom = 2.0 * g2 + total * g2 * gv;
                    if denom.abs() < GRAD_CAM_PP_EPSILON {
                        0.0
                    } else {
                        g2 / denom * gv.max(0.0)
                    }
                })
                .sum()
        })
        .collect();
    CoefficientVector::new(Method::GradCamPlusPlus, values)
}

/// XGrad-CAM: gradient averaged with activation-proportional weights.
pub fn xgrad_cam(model: &ModelGraph, trace: &HeadTrace, class: usize) -> Result<CoefficientVector> {
    let g = network::head_gradient_f64(model, trace, class)?;
    let a = trace_stack(trace)?;
    let values = per_channel(a, &g)?
        .map(|(ak, gk)| {
            let abs_total: f64 = ak.iter().map(|&v| f64::from(v).abs()).sum();
            let total: f64 = ak.iter().map(|&v| f64::from(v)).sum();
            if abs_total < XGRAD_CAM_EPSILON || total == 0.0 {
                return 0.0;
            }
            ak.iter()
                .zip(gk)
                .map(|(&av, &gv)| f64::from(av) * gv)
                .sum::<f64>()
                / total
        })
        .collect();
    CoefficientVector::new(Method::XGradCam, values)
}

/// LIFT-CAM: per-channel sum of DeepLIFT-Rescale contributions against the
/// zero stack. Needs a trace recorded with [`HeadTrace::record`].
pub fn lift_cam(model: &ModelGraph, trace: &HeadTrace, class: usize) -> Result<CoefficientVector> {
    let contributions = network::deeplift_contributions_f64(model, trace, class)?;
    let [n, h, w] = model.activation_shape();
    let plane = h * w;
    let values = (0..n)
        .map(|k| contributions[k * plane..(k + 1) * plane].iter().sum())
        .collect();
    CoefficientVector::new(Method::LiftCam, values)
}

/// Ablation-CAM: relative drop of the target logit when one map is zeroed.
pub fn ablation_cam(model: &ModelGraph, a: &ActivationStack, class: usize) -> Result<CoefficientVector> {
    let n = a.channels();
    if n > 64 {
        return Err(Error::Invalid(format!(
            "ablation-cam supports at most 64 channels, got {n}"
        )));
    }
    let full = model.forward_head(a, class)?;
    if full == 0.0 {
        return Err(Error::ZeroFullLogit);
    }
    let all = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    let values = (0..n)
        .map(|k| {
            let dropped = model.forward_head(&mask_apply_bits(a, all & !(1u64 << k)), class)?;
            Ok((full - dropped) / full)
        })
        .collect::<Result<Vec<_>>>()?;
    CoefficientVector::new(Method::AblationCam, values)
}

#[derive(Debug, Clone, Default)]
pub struct ScoreCamConfig {
    /// Reference image; all zeros when `None`.
    pub baseline: Option<Tensor>,
    /// Score with logits instead of softmax probabilities.
    pub use_logits: bool,
    /// Leave raw channel scores as they are instead of a softmax over channels.
    pub skip_channel_softmax: bool,
}

/// Score-CAM: each normalized, upsampled activation map masks the image;
/// the channel score is the target's gain over the baseline image.
pub fn score_cam(
    model: &ModelGraph,
    image: &Tensor,
    a: &ActivationStack,
    class: usize,
    config: &ScoreCamConfig,
) -> Result<CoefficientVector> {
    model.check_class(class)?;
    let [_, ih, iw] = model.input_shape();
    let target_score = |x: &Tensor| -> Result<f64> {
        let out = model.forward_full(x)?;
        Ok(if config.use_logits {
            out.logits[class]
        } else {
            out.probs[class]
        })
    };
    let baseline = match &config.baseline {
        Some(b) => b.clone(),
        None => Tensor::zeros(image.shape()),
    };
    let base_score = target_score(&baseline)?;
    let scores = (0..a.channels())
        .map(|k| {
            let up = tensor::upsample_bilinear(&a.channel(k), (ih, iw))?;
            let mask = tensor::minmax_normalize(&up);
            let masked = tensor::hadamard_broadcast(&mask, image)?;
            Ok(target_score(&masked)? - base_score)
        })
        .collect::<Result<Vec<f64>>>()?;
    let values = if config.skip_channel_softmax {
        scores
    } else {
        tensor::softmax(&scores)
    };
    CoefficientVector::new(Method::ScoreCam, values)
}
