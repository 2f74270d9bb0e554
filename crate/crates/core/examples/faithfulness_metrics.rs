//! IC/AD/ADD, insertion/deletion AUC and the energy pointing game for a few
//! methods over a small synthetic sample set.

use camshap::evaluation::{confidences, insertion_deletion_auc, pointing_game, BoundingBox, EvalSample, MetricReport, SampleRecord};
use camshap::synthetic::{generate_synthetic_model, synthetic_image, top_class, HeadKind, SyntheticSpec};
use camshap::{explain, ExplainOptions, Method};

fn main() -> camshap::Result<()> {
    let model = generate_synthetic_model(&SyntheticSpec::new(8, 4, HeadKind::ConvRelu, 11))?;
    let samples = (0..8)
        .map(|i| {
            let image = synthetic_image(&model, 100 + i);
            let class = top_class(&model.forward_full(&image)?.logits);
            EvalSample::new(&model, image, class, Some(BoundingBox::new(0, 0, 4, 4)))
        })
        .collect::<camshap::Result<Vec<_>>>()?;

    let mut reports = Vec::new();
    for method in [Method::GradCam, Method::ScoreCam, Method::AblationCam, Method::LiftCam] {
        let mut records = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            let e = explain(&model, &s.image, s.class, method, &ExplainOptions::default())?;
            let (ins, del) = insertion_deletion_auc(&model, s, &e.map)?;
            records.push(SampleRecord {
                sample: i,
                class: s.class,
                confidences: Some(confidences(&model, s, &e.map)?),
                insertion_auc: Some(ins),
                deletion_auc: Some(del),
                proportion: s.bbox.as_ref().map(|b| pointing_game(&e.map, b)).transpose()?,
                cosine: None,
            });
        }
        reports.push(MetricReport::from_records(method.name(), records)?);
    }
    print!("{}", MetricReport::text_table(&reports));
    Ok(())
}
