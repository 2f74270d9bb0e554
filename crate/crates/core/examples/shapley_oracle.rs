//! Exact Shapley values by subset enumeration, the Monte-Carlo estimate for
//! growing ordering counts, and the single-pass LIFT-CAM approximation.

use camshap::attribution::lift_cam;
use camshap::network::HeadTrace;
use camshap::shapley::{exact_shapley, shap_cam, OrderingSet};
use camshap::synthetic::{generate_synthetic_model, synthetic_image, top_class, HeadKind, SyntheticSpec};

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn main() -> camshap::Result<()> {
    let model = generate_synthetic_model(&SyntheticSpec::new(8, 4, HeadKind::ReluMlp, 5))?;
    let a = model.frontend_forward(&synthetic_image(&model, 5))?;
    let class = top_class(&model.head_logits(&a)?);

    let exact = exact_shapley(&model, &a, class)?;
    println!("exact     {:+.4?}", exact.values);
    for count in [1, 10, 100, 1000] {
        let mean_err: f64 = (0..10)
            .map(|seed| {
                let o = OrderingSet::sample(8, count, seed)?;
                Ok(l2(&shap_cam(&model, &a, class, &o)?.values, &exact.values))
            })
            .sum::<camshap::Result<f64>>()?
            / 10.0;
        println!("shap-cam with {count:>4} orderings: mean L2 error {mean_err:.5}");
    }
    let lift = lift_cam(&model, &HeadTrace::record(&model, &a)?, class)?;
    println!("lift-cam  {:+.4?}", lift.values);
    println!("lift-cam L2 error {:.5}", l2(&lift.values, &exact.values));
    Ok(())
}
