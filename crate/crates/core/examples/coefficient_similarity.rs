//! Mean cosine similarity of each method's coefficients to the exact
//! Shapley values over a suite of ReLU-head fixtures.

use camshap::evaluation::coefficient_similarity;
use camshap::explain::{coefficients, ExplainOptions};
use camshap::shapley::exact_shapley;
use camshap::synthetic::{generate_synthetic_model, synthetic_image, top_class, HeadKind, SyntheticSpec};
use camshap::Method;

fn main() -> camshap::Result<()> {
    let methods = [
        Method::LiftCam,
        Method::AblationCam,
        Method::ShapCam,
        Method::GradCam,
        Method::GradCamPlusPlus,
        Method::XGradCam,
        Method::ScoreCam,
    ];
    let fixtures = 20;
    let mut sums = vec![0.0; methods.len()];
    let opts = ExplainOptions::default();
    for seed in 0..fixtures {
        let model = generate_synthetic_model(&SyntheticSpec::new(8, 4, HeadKind::ReluMlp, seed))?;
        let image = synthetic_image(&model, seed);
        let a = model.frontend_forward(&image)?;
        let class = top_class(&model.head_logits(&a)?);
        let truth = exact_shapley(&model, &a, class)?;
        for (sum, &m) in sums.iter_mut().zip(&methods) {
            *sum += coefficient_similarity(&coefficients(&model, &image, &a, class, m, &opts)?, &truth)?;
        }
    }
    for (m, s) in methods.iter().zip(&sums) {
        println!("{:<13} {:.3}", m.name(), s / fixtures as f64);
    }
    Ok(())
}
