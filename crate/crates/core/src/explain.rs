//! One entry point for every coefficient method, plus map assembly.

use std::time::{Duration, Instant};

use crate::attribution::{self, CoefficientVector, ExplanationMap, Method, ScoreCamConfig};
use crate::error::Result;
use crate::network::{ActivationStack, HeadTrace, ModelGraph};
use crate::shapley::{self, OrderingSet};
use crate::tensor::Tensor;

/// SHAP-CAM ordering count when none is given.
pub const DEFAULT_ORDERINGS: usize = 100;

#[derive(Debug, Clone)]
pub struct ExplainOptions {
    pub orderings: usize,
    pub seed: u64,
    pub score_cam: ScoreCamConfig,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        ExplainOptions {
            orderings: DEFAULT_ORDERINGS,
            seed: 0,
            score_cam: ScoreCamConfig::default(),
        }
    }
}

/// Coefficients of `method` for an already computed activation stack.
/// `image` is only read by Score-CAM.
pub fn coefficients(
    model: &ModelGraph,
    image: &Tensor,
    a: &ActivationStack,
    class: usize,
    method: Method,
    opts: &ExplainOptions,
) -> Result<CoefficientVector> {
    model.check_class(class)?;
    match method {
        Method::GradCam | Method::GradCamPlusPlus | Method::XGradCam | Method::LiftCam => {
            let trace = if method == Method::LiftCam {
                HeadTrace::record(model, a)?
            } else {
                HeadTrace::record_forward(model, a)?
            };
            match method {
                Method::GradCam => attribution::grad_cam(model, &trace, class),
                Method::GradCamPlusPlus => attribution::grad_cam_pp(model, &trace, class),
                Method::XGradCam => attribution::xgrad_cam(model, &trace, class),
                _ => attribution::lift_cam(model, &trace, class),
            }
        }
        Method::ScoreCam => attribution::score_cam(model, image, a, class, &opts.score_cam),
        Method::AblationCam => attribution::ablation_cam(model, a, class),
        Method::ShapCam => {
            let orderings = OrderingSet::sample(a.channels(), opts.orderings, opts.seed)?;
            shapley::shap_cam(model, a, class, &orderings)
        }
        Method::ExactShapley => shapley::exact_shapley(model, a, class),
    }
}

#[derive(Debug, Clone)]
pub struct Explanation {
    pub class: usize,
    pub coefficients: CoefficientVector,
    pub map: ExplanationMap,
    /// `F^c(A)`.
    pub logit: f64,
    /// `F^c(0)`.
    pub reference_logit: f64,
    /// Wall time spent on the coefficients alone.
    pub coefficient_time: Duration,
}

/// Frontend pass, coefficients and an explanation map at input resolution.
pub fn explain(
    model: &ModelGraph,
    image: &Tensor,
    class: usize,
    method: Method,
    opts: &ExplainOptions,
) -> Result<Explanation> {
    let a = model.frontend_forward(image)?;
    explain_stack(model, image, &a, class, method, opts)
}

pub fn explain_stack(
    model: &ModelGraph,
    image: &Tensor,
    a: &ActivationStack,
    class: usize,
    method: Method,
    opts: &ExplainOptions,
) -> Result<Explanation> {
    let start = Instant::now();
    let coeffs = coefficients(model, image, a, class, method, opts)?;
    let coefficient_time = start.elapsed();
    let [_, h, w] = model.input_shape();
    let map = attribution::assemble_map(a, &coeffs, (h, w))?;
    Ok(Explanation {
        class,
        logit: model.forward_head(a, class)?,
        reference_logit: model.forward_head(&a.zeros_like(), class)?,
        coefficients: coeffs,
        map,
        coefficient_time,
    })
}
