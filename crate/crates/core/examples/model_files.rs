//! Writing and reading the container format for models and samples.

use camshap::evaluation::BoundingBox;
use camshap::io::{load_model, load_sample, save_model, save_sample, Container, SampleFile};
use camshap::synthetic::{generate_synthetic_model, synthetic_image, top_class, HeadKind, SyntheticSpec};

fn main() -> camshap::Result<()> {
    let dir = std::env::temp_dir().join("camshap-files");
    std::fs::create_dir_all(&dir).map_err(|e| camshap::Error::Invalid(e.to_string()))?;
    let model = generate_synthetic_model(&SyntheticSpec::new(4, 2, HeadKind::ConvRelu, 2))?;
    let model_path = dir.join("model.camshap");
    save_model(&model, &model_path)?;

    let header = Container::read(&model_path)?.header;
    println!("model header kind {:?}, version {}", header.kind, header.format_version);
    for t in &header.tensors {
        println!("  {:<14} {:?} at byte {}", t.name, t.shape, t.offset);
    }

    let image = synthetic_image(&model, 2);
    let logits = model.forward_full(&image)?.logits;
    let sample = SampleFile {
        class: top_class(&logits),
        bbox: Some(BoundingBox::new(0, 0, 2, 2)),
        reference_logits: Some(logits.iter().map(|&v| v as f32).collect()),
        image: image.clone(),
    };
    let sample_path = dir.join("sample.camshap");
    save_sample(&sample, &sample_path)?;

    let reloaded = load_model(&model_path)?;
    let again = reloaded.forward_full(&load_sample(&sample_path)?.image)?.logits;
    println!("logits identical after round trip: {}", again == logits);
    Ok(())
}
