//! Every coefficient method on one image, with a heatmap per method written
//! to the system temp directory.

use camshap::heatmap::{emit_heatmap, HeatmapStyle};
use camshap::synthetic::{generate_synthetic_model, synthetic_image, top_class, HeadKind, SyntheticSpec};
use camshap::{explain, ExplainOptions, Method};

fn main() -> camshap::Result<()> {
    let model = generate_synthetic_model(&SyntheticSpec::new(8, 4, HeadKind::ReluMlp, 7))?;
    let image = synthetic_image(&model, 7);
    let class = top_class(&model.forward_full(&image)?.logits);
    let out = std::env::temp_dir().join("camshap-methods");
    std::fs::create_dir_all(&out).map_err(|e| camshap::Error::Invalid(e.to_string()))?;

    for method in Method::ALL {
        let e = explain(&model, &image, class, method, &ExplainOptions::default())?;
        let path = out.join(format!("{method}.ppm"));
        emit_heatmap(&e.map, &path, HeatmapStyle::Overlay(&image))?;
        println!(
            "{:<14} sum {:+.4}  time {:>9.2?}  {:.3?}",
            method.name(),
            e.coefficients.sum(),
            e.coefficient_time,
            e.coefficients.values
        );
    }
    println!("heatmaps in {}", out.display());
    Ok(())
}
