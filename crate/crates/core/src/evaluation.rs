//! Faithfulness and localization metrics for explanation maps.
//!
//! * IC / AD / ADD compare the target probability of the original image
//!   (`Y`) with that of the explanation image (`O`, map kept) and of the
//!   inverted explanation image (`D`, map removed).
//! * Insertion / deletion AUC threshold the map at 41 evenly spaced
//!   fractions of top pixels and integrate the probability curves with the
//!   trapezoidal rule.
//! * The energy pointing game measures how much map mass lies in a box.
//! * Cosine similarity compares coefficient vectors.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::attribution::{CoefficientVector, ExplanationMap};
use crate::error::{Error, Result};
use crate::network::ModelGraph;
use crate::tensor::{self, dims3, Tensor};

/// Number of steps in the threshold grid `δ ∈ {0, 0.025, ..., 1}`.
pub const AUC_STEPS: usize = 40;

/// Pixel box, top/left inclusive and bottom/right exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl BoundingBox {
    pub fn new(top: usize, left: usize, bottom: usize, right: usize) -> Self {
        BoundingBox {
            top,
            left,
            bottom,
            right,
        }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.top < self.bottom
            && self.left < self.right
            && self.bottom <= height
            && self.right <= width
        {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "bounding box {self:?} invalid for a {height} x {width} image"
            )))
        }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        (self.top..self.bottom).contains(&i) && (self.left..self.right).contains(&j)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    pub image: Tensor,
    pub class: usize,
    pub bbox: Option<BoundingBox>,
}

impl EvalSample {
    pub fn new(model: &ModelGraph, image: Tensor, class: usize, bbox: Option<BoundingBox>) -> Result<Self> {
        model.check_class(class)?;
        let (_, h, w) = dims3("sample", &image)?;
        if let Some(b) = bbox {
            b.validate(h, w)?;
        }
        Ok(EvalSample { image, class, bbox })
    }
}

fn check_map(image: &Tensor, map: &ExplanationMap) -> Result<()> {
    let (_, h, w) = dims3("explanation image", image)?;
    if map.size() != (h, w) {
        return Err(Error::ShapeMismatch {
            op: "explanation image",
            left: image.shape().to_vec(),
            right: map.normalized.shape().to_vec(),
        });
    }
    Ok(())
}

/// Image kept only where the map is high: `s(u(L)) ∘ x`.
pub fn explanation_image(image: &Tensor, map: &ExplanationMap) -> Result<Tensor> {
    check_map(image, map)?;
    tensor::hadamard_broadcast(&map.normalized, image)
}

/// Complement: `(1 - s(u(L))) ∘ x`.
pub fn inverted_explanation_image(image: &Tensor, map: &ExplanationMap) -> Result<Tensor> {
    check_map(image, map)?;
    let inverse = map.normalized.map(|v| 1.0 - v);
    tensor::hadamard_broadcast(&inverse, image)
}

/// Target probabilities `(Y, O, D)` for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confidences {
    pub original: f64,
    pub explanation: f64,
    pub inverted: f64,
}

pub fn confidences(model: &ModelGraph, sample: &EvalSample, map: &ExplanationMap) -> Result<Confidences> {
    let prob = |x: &Tensor| model.class_probability(x, sample.class);
    Ok(Confidences {
        original: prob(&sample.image)?,
        explanation: prob(&explanation_image(&sample.image, map)?)?,
        inverted: prob(&inverted_explanation_image(&sample.image, map)?)?,
    })
}

/// IC, AD and ADD in percent. AD and ADD skip samples with `Y = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Faithfulness {
    pub ic: f64,
    pub ad: f64,
    pub add: f64,
    pub n: usize,
    pub excluded: usize,
}

pub fn faithfulness(scores: &[Confidences]) -> Result<Faithfulness> {
    if scores.is_empty() {
        return Err(Error::Metric("no samples".into()));
    }
    let n = scores.len();
    let ic = 100.0
        * scores
            .iter()
            .filter(|s| s.original < s.explanation)
            .count() as f64
        / n as f64;
    let kept: Vec<&Confidences> = scores.iter().filter(|s| s.original != 0.0).collect();
    let excluded = n - kept.len();
    let (ad, add) = if kept.is_empty() {
        (0.0, 0.0)
    } else {
        let m = kept.len() as f64;
        let ad = kept
            .iter()
            .map(|s| (s.original - s.explanation).max(0.0) / s.original)
            .sum::<f64>();
        // No clipping: ADD goes negative when removal raises confidence.
        let add = kept
            .iter()
            .map(|s| (s.original - s.inverted) / s.original)
            .sum::<f64>();
        (100.0 * ad / m, 100.0 * add / m)
    };
    Ok(Faithfulness {
        ic,
        ad,
        add,
        n,
        excluded,
    })
}

/// Binary mask selecting the `round(step/40 · P)` highest pixels. Equal
/// values are ranked by flat index, lowest first.
pub fn top_fraction_mask(map: &Tensor, step: usize) -> Tensor {
    assert!(step <= AUC_STEPS, "threshold step {step} beyond {AUC_STEPS}");
    let p = map.len();
    let count = (2 * step * p + AUC_STEPS) / (2 * AUC_STEPS);
    let mut order: Vec<usize> = (0..p).collect();
    let v = map.data();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    let mut mask = Tensor::zeros(map.shape());
    for &i in &order[..count] {
        mask.data_mut()[i] = 1.0;
    }
    mask
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucCurves {
    pub insertion: Vec<f64>,
    pub deletion: Vec<f64>,
    pub insertion_auc: f64,
    pub deletion_auc: f64,
}

/// Trapezoidal area over the evenly spaced grid on `[0, 1]`.
pub fn trapezoid(curve: &[f64]) -> f64 {
    let h = 1.0 / (curve.len() - 1) as f64;
    curve.windows(2).map(|w| 0.5 * (w[0] + w[1]) * h).sum()
}

pub fn insertion_deletion_curves(
    model: &ModelGraph,
    sample: &EvalSample,
    map: &ExplanationMap,
) -> Result<AucCurves> {
    check_map(&sample.image, map)?;
    let mut insertion = Vec::with_capacity(AUC_STEPS + 1);
    let mut deletion = Vec::with_capacity(AUC_STEPS + 1);
    for step in 0..=AUC_STEPS {
        let mask = top_fraction_mask(&map.normalized, step);
        let kept = tensor::hadamard_broadcast(&mask, &sample.image)?;
        let removed = tensor::hadamard_broadcast(&mask.map(|v| 1.0 - v), &sample.image)?;
        insertion.push(model.class_probability(&kept, sample.class)?);
        deletion.push(model.class_probability(&removed, sample.class)?);
    }
    Ok(AucCurves {
        insertion_auc: trapezoid(&insertion),
        deletion_auc: trapezoid(&deletion),
        insertion,
        deletion,
    })
}

/// `(insertion AUC, deletion AUC)`.
pub fn insertion_deletion_auc(
    model: &ModelGraph,
    sample: &EvalSample,
    map: &ExplanationMap,
) -> Result<(f64, f64)> {
    let c = insertion_deletion_curves(model, sample, map)?;
    Ok((c.insertion_auc, c.deletion_auc))
}

/// Fraction of normalized map energy inside `bbox`.
pub fn pointing_game(map: &ExplanationMap, bbox: &BoundingBox) -> Result<f64> {
    let (h, w) = map.size();
    bbox.validate(h, w)?;
    let v = map.normalized.data();
    let total: f64 = v.iter().map(|&x| f64::from(x)).sum();
    if !(total > 0.0) {
        return Err(Error::Metric(
            "pointing game undefined: explanation map has zero energy".into(),
        ));
    }
    let inside: f64 = (bbox.top..bbox.bottom)
        .flat_map(|i| (bbox.left..bbox.right).map(move |j| f64::from(v[i * w + j])))
        .sum();
    Ok((inside / total).clamp(0.0, 1.0))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "cosine_similarity",
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Metric(
            "cosine similarity undefined for a zero vector".into(),
        ));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn coefficient_similarity(a: &CoefficientVector, b: &CoefficientVector) -> Result<f64> {
    cosine_similarity(&a.values, &b.values)
}

/// Metrics of one sample under one method; absent fields were not requested.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample: usize,
    pub class: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub confidences: Option<Confidences>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub proportion: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub insertion_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub deletion_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cosine: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ad: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub add: Option<f64>,
    /// Samples left out of AD/ADD because `Y = 0`.
    pub excluded: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub insertion_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub deletion_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub proportion: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cosine: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub n: usize,
    pub records: Vec<SampleRecord>,
    pub aggregates: Aggregates,
    /// Reference used for `cosine`, e.g. `exact-shapley`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cosine_reference: Option<String>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl MetricReport {
    /// Builds a report whose aggregates are recomputed from `records`.
    pub fn from_records(method: impl Into<String>, mut records: Vec<SampleRecord>) -> Result<Self> {
        records.sort_by_key(|r| r.sample);
        let scores: Vec<Confidences> = records.iter().filter_map(|r| r.confidences).collect();
        let mut aggregates = Aggregates::default();
        if !scores.is_empty() {
            let f = faithfulness(&scores)?;
            aggregates.ic = Some(f.ic);
            aggregates.ad = Some(f.ad);
            aggregates.add = Some(f.add);
            aggregates.excluded = f.excluded;
        }
        aggregates.insertion_auc = mean(records.iter().filter_map(|r| r.insertion_auc));
        aggregates.deletion_auc = mean(records.iter().filter_map(|r| r.deletion_auc));
        aggregates.proportion = mean(records.iter().filter_map(|r| r.proportion));
        aggregates.cosine = mean(records.iter().filter_map(|r| r.cosine));
        Ok(MetricReport {
            method: method.into(),
            n: records.len(),
            records,
            aggregates,
            cosine_reference: None,
        })
    }

    /// IC/AD/ADD over the given samples and their maps.
    pub fn ic_ad_add(
        method: impl Into<String>,
        model: &ModelGraph,
        samples: &[EvalSample],
        maps: &[ExplanationMap],
    ) -> Result<Self> {
        if samples.len() != maps.len() {
            return Err(Error::Invalid(format!(
                "{} samples but {} maps",
                samples.len(),
                maps.len()
            )));
        }
        let records = samples
            .iter()
            .zip(maps)
            .enumerate()
            .map(|(i, (s, m))| {
                Ok(SampleRecord {
                    sample: i,
                    class: s.class,
                    confidences: Some(confidences(model, s, m)?),
                    ..Default::default()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_records(method, records)
    }

    /// One-line-per-report text table with a header row.
    pub fn text_table(reports: &[MetricReport]) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:>5} {:>9} {:>9} {:>9} {:>9} {:>9} {:>10} {:>9} {:>8}",
            "method", "n", "IC", "AD", "ADD", "ins_auc", "del_auc", "proportion", "cosine", "excluded"
        );
        for r in reports {
            let a = &r.aggregates;
            let _ = writeln!(
                out,
                "{:<14} {:>5} {:>9} {:>9} {:>9} {:>9} {:>9} {:>10} {:>9} {:>8}",
                r.method,
                r.n,
                fmt(a.ic),
                fmt(a.ad),
                fmt(a.add),
                fmt(a.insertion_auc),
                fmt(a.deletion_auc),
                fmt(a.proportion),
                fmt(a.cosine),
                a.excluded
            );
        }
        out
    }
}
