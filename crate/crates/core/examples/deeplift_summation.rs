//! DeepLIFT-Rescale contributions against a zero reference add up to the
//! logit gap, even through ReLU and max-pool layers.

use camshap::network::{deeplift_head, HeadTrace};
use camshap::synthetic::{generate_synthetic_model, synthetic_image, top_class, HeadKind, SyntheticSpec};

fn main() -> camshap::Result<()> {
    for head in [HeadKind::Linear, HeadKind::ReluMlp, HeadKind::ConvRelu] {
        let model = generate_synthetic_model(&SyntheticSpec::new(6, 4, head, 3))?;
        let a = model.frontend_forward(&synthetic_image(&model, 3))?;
        let class = top_class(&model.head_logits(&a)?);
        let trace = HeadTrace::record(&model, &a)?;
        let contributions = deeplift_head(&model, &trace, class)?;
        let gap = model.forward_head(&a, class)? - model.forward_head(&a.zeros_like(), class)?;
        println!(
            "{head:>9}: sum of contributions {:+.6}, F(A) - F(0) {:+.6}",
            contributions.sum(),
            gap
        );
    }
    Ok(())
}
