//! Split forward pass and the head gradient, checked against a central
//! difference on a few activation entries.

use camshap::network::{head_gradient_f64, ActivationStack, HeadTrace};
use camshap::synthetic::{generate_synthetic_model, synthetic_image, top_class, HeadKind, SyntheticSpec};
use camshap::Tensor;

fn main() -> camshap::Result<()> {
    let model = generate_synthetic_model(&SyntheticSpec::new(8, 4, HeadKind::ConvRelu, 1))?;
    let image = synthetic_image(&model, 1);
    let full = model.forward_full(&image)?;
    let class = top_class(&full.logits);
    println!("input {:?} -> activations {:?}", model.input_shape(), model.activation_shape());
    println!("logits {:.4?}, class {class} with p = {:.4}", full.logits, full.probs[class]);

    let a = full.activations;
    let trace = HeadTrace::record_forward(&model, &a)?;
    let grad = head_gradient_f64(&model, &trace, class)?;
    let h = 1e-3f32;
    for p in [0, 17, 45, 100] {
        let bump = |d: f32| -> camshap::Result<f64> {
            let mut data = a.tensor().data().to_vec();
            data[p] += d;
            let shifted = ActivationStack::new(Tensor::new(a.tensor().shape().to_vec(), data)?)?;
            model.forward_head(&shifted, class)
        };
        let fd = (bump(h)? - bump(-h)?) / (2.0 * f64::from(h));
        println!("neuron {p:>3}: backward {:+.6}, finite difference {:+.6}", grad[p], fd);
    }
    Ok(())
}
