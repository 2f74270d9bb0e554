//! Command-line surface: `explain`, `evaluate` and `generate`.
//!
//! The thin `camshap` binary parses [`Cli`] and calls [`run`]; everything
//! here is usable from library code and tests as well.
//!
//! `explain --output result.json` writes three files side by side:
//! `result.json` (coefficients and logits, byte-identical across runs with
//! the same flags), `result.ppm` (the heatmap) and `result.timings.json`
//! (wall times, which naturally vary).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{CoefficientVector, Method};
use crate::error::{Error, Result};
use crate::evaluation::{self, BoundingBox, EvalSample, MetricReport, SampleRecord};
use crate::explain::{self, ExplainOptions, DEFAULT_ORDERINGS};
use crate::heatmap::{emit_heatmap, HeatmapStyle};
use crate::io::{self, Container, FileKind, SampleFile};
use crate::network::ModelGraph;
use crate::shapley::EXACT_CHANNEL_CAP;
use crate::synthetic::{self, HeadKind, SyntheticSpec};
use crate::tensor::Tensor;

/// Environment variable holding the default worker count for `evaluate`.
pub const WORKERS_ENV: &str = "CAMSHAP_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "camshap", version, about = "Class activation maps with Shapley-value coefficients")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Explain one image with one method.
    Explain(ExplainArgs),
    /// Score methods over a set of samples.
    Evaluate(EvaluateArgs),
    /// Write a seeded synthetic model and samples.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Style {
    Gray,
    Overlay,
}

#[derive(Debug, Clone, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Sample file, or a tensor file holding a C x H x W image.
    #[arg(long)]
    pub input: PathBuf,
    /// Target class; defaults to the sample's class, else the top logit.
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    /// Result file; the heatmap and timings land next to it.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// SHAP-CAM ordering count.
    #[arg(long)]
    pub orderings: Option<usize>,
    /// Score-CAM baseline image (tensor file).
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Style::Gray)]
    pub style: Style,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    IcAdAdd,
    Auc,
    Pointing,
    Cosine,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    pub samples: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', value_parser = parse_method, required = true)]
    pub methods: Vec<Method>,
    #[arg(long, value_delimiter = ',', value_enum,
          default_values_t = [Metric::IcAdAdd, Metric::Auc, Metric::Pointing, Metric::Cosine])]
    pub metrics: Vec<Metric>,
    /// Report file; a text table is written next to it.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_ORDERINGS)]
    pub orderings: usize,
    #[arg(long, env = WORKERS_ENV)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 8)]
    pub channels: usize,
    /// Activation map side; the input image side is twice this.
    #[arg(long, default_value_t = 4)]
    pub size: usize,
    #[arg(long, default_value = "relu-mlp")]
    pub head: HeadKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub samples: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

/// Parses `args`; on a usage error prints the error and the usage line of
/// the subcommand involved, then exits with status 2.
pub fn parse_or_exit<I, T>(args: I) -> Cli
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let mut cmd = Cli::command();
            cmd.build();
            let sub = args.get(1).and_then(|a| a.to_str()).map(str::to_owned);
            let usage = match sub.as_deref().and_then(|s| cmd.find_subcommand_mut(s)) {
                Some(c) => c.render_usage(),
                None => cmd.render_usage(),
            };
            eprint!("{e}");
            eprintln!("\n{usage}");
            std::process::exit(2);
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Explain(a) => run_explain(&a).map(|_| ()),
        Command::Evaluate(a) => run_evaluate(&a).map(|_| ()),
        Command::Generate(a) => run_generate(&a).map(|_| ()),
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("result types serialize");
    s.push('\n');
    s
}

/// `dir/stem<suffix>` for an output path `dir/stem.ext`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}{suffix}"))
}

/// Image plus its recorded class when the input is a sample file.
fn load_input(path: &Path) -> Result<(Tensor, Option<usize>)> {
    let c = Container::read(path)?;
    match c.header.kind {
        FileKind::Sample => io::load_sample(path).map(|s| (s.image, Some(s.class))),
        FileKind::Tensor => c
            .tensors
            .into_iter()
            .next()
            .map(|(_, t)| (t, None))
            .ok_or_else(|| Error::format(path, "container holds no tensors")),
        FileKind::Model => Err(Error::format(path, "expected a sample or tensor file, found a model")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainResult {
    pub format_version: u32,
    pub method: Method,
    pub class: usize,
    pub coefficients: Vec<f64>,
    pub coefficient_sum: f64,
    /// `F^c(A)`.
    pub logit: f64,
    /// `F^c(0)`.
    pub reference_logit: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub orderings: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    pub heatmap: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub method: Method,
    pub coefficient_seconds: f64,
    pub total_seconds: f64,
}

pub fn run_explain(args: &ExplainArgs) -> Result<ExplainResult> {
    let start = Instant::now();
    let model = io::load_model(&args.model)?;
    let (image, sample_class) = load_input(&args.input)?;
    if image.shape() != model.input_shape() {
        return Err(Error::ShapeMismatch {
            op: "explain input",
            left: model.input_shape().to_vec(),
            right: image.shape().to_vec(),
        });
    }
    let a = model.frontend_forward(&image)?;
    let class = match args.class.or(sample_class) {
        Some(c) => c,
        None => synthetic::top_class(&model.head_logits(&a)?),
    };
    let mut opts = ExplainOptions {
        orderings: args.orderings.unwrap_or(DEFAULT_ORDERINGS),
        seed: args.seed,
        ..Default::default()
    };
    if let Some(b) = &args.baseline {
        opts.score_cam.baseline = Some(io::load_tensor(b)?.1);
    }
    let e = explain::explain_stack(&model, &image, &a, class, args.method, &opts)?;

    let heatmap_path = sibling(&args.output, ".ppm");
    let style = match args.style {
        Style::Gray => HeatmapStyle::Gray,
        Style::Overlay => HeatmapStyle::Overlay(&image),
    };
    emit_heatmap(&e.map, &heatmap_path, style)?;

    let shap = args.method == Method::ShapCam;
    let result = ExplainResult {
        format_version: io::FORMAT_VERSION,
        method: args.method,
        class,
        coefficient_sum: e.coefficients.sum(),
        coefficients: e.coefficients.values,
        logit: e.logit,
        reference_logit: e.reference_logit,
        orderings: shap.then_some(opts.orderings),
        seed: shap.then_some(opts.seed),
        heatmap: heatmap_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    write(&args.output, to_json(&result))?;
    let timings = Timings {
        method: args.method,
        coefficient_seconds: e.coefficient_time.as_secs_f64(),
        total_seconds: start.elapsed().as_secs_f64(),
    };
    write(&sibling(&args.output, ".timings.json"), to_json(&timings))?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateReport {
    pub format_version: u32,
    pub metrics: Vec<Metric>,
    pub reports: Vec<MetricReport>,
}

/// Coefficients used as the cosine reference: exact enumeration when the
/// channel count allows it, otherwise SHAP-CAM.
fn cosine_reference(n: usize) -> Method {
    if n <= EXACT_CHANNEL_CAP {
        Method::ExactShapley
    } else {
        Method::ShapCam
    }
}

fn sample_records(
    model: &ModelGraph,
    index: usize,
    sample: &EvalSample,
    methods: &[Method],
    metrics: &[Metric],
    opts: &ExplainOptions,
) -> Result<Vec<(SampleRecord, f64)>> {
    let a = model.frontend_forward(&sample.image)?;
    let reference: Option<CoefficientVector> = if metrics.contains(&Metric::Cosine) {
        let m = cosine_reference(a.channels());
        Some(explain::coefficients(model, &sample.image, &a, sample.class, m, opts)?)
    } else {
        None
    };
    methods
        .iter()
        .map(|&method| {
            let e = explain::explain_stack(model, &sample.image, &a, sample.class, method, opts)?;
            let mut r = SampleRecord {
                sample: index,
                class: sample.class,
                ..Default::default()
            };
            if metrics.contains(&Metric::IcAdAdd) {
                r.confidences = Some(evaluation::confidences(model, sample, &e.map)?);
            }
            if metrics.contains(&Metric::Auc) {
                let (ins, del) = evaluation::insertion_deletion_auc(model, sample, &e.map)?;
                r.insertion_auc = Some(ins);
                r.deletion_auc = Some(del);
            }
            if let (true, Some(b)) = (metrics.contains(&Metric::Pointing), &sample.bbox) {
                r.proportion = Some(evaluation::pointing_game(&e.map, b)?);
            }
            if let Some(refc) = &reference {
                r.cosine = Some(evaluation::coefficient_similarity(&e.coefficients, refc)?);
            }
            Ok((r, e.coefficient_time.as_secs_f64()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTiming {
    pub method: Method,
    pub mean_coefficient_seconds: f64,
}

pub fn run_evaluate(args: &EvaluateArgs) -> Result<EvaluateReport> {
    let model = io::load_model(&args.model)?;
    let samples = args
        .samples
        .iter()
        .map(|p| io::load_sample(p)?.into_eval_sample(&model))
        .collect::<Result<Vec<_>>>()?;
    let opts = ExplainOptions {
        orderings: args.orderings,
        seed: args.seed,
        ..Default::default()
    };
    let workers = args.workers.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Invalid(format!("cannot start {workers} workers: {e}")))?;
    let per_sample = pool.install(|| {
        samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| sample_records(&model, i, s, &args.methods, &args.metrics, &opts))
            .collect::<Result<Vec<_>>>()
    })?;

    let reference = args
        .metrics
        .contains(&Metric::Cosine)
        .then(|| cosine_reference(model.num_channels()));
    let mut reports = Vec::with_capacity(args.methods.len());
    let mut timings = Vec::with_capacity(args.methods.len());
    for (j, &method) in args.methods.iter().enumerate() {
        let records: Vec<SampleRecord> = per_sample.iter().map(|rs| rs[j].0.clone()).collect();
        let mut report = MetricReport::from_records(method.name(), records)?;
        report.cosine_reference = reference.map(|m| match m {
            Method::ShapCam => format!("shap-cam (over the {EXACT_CHANNEL_CAP}-channel exact cap)"),
            m => m.name().to_string(),
        });
        reports.push(report);
        let total: f64 = per_sample.iter().map(|rs| rs[j].1).sum();
        timings.push(MethodTiming {
            method,
            mean_coefficient_seconds: total / per_sample.len().max(1) as f64,
        });
    }

    let report = EvaluateReport {
        format_version: io::FORMAT_VERSION,
        metrics: args.metrics.clone(),
        reports,
    };
    write(&args.output, to_json(&report))?;
    let table = MetricReport::text_table(&report.reports);
    write(&sibling(&args.output, ".txt"), &table)?;
    write(&sibling(&args.output, ".timings.json"), to_json(&timings))?;
    print!("{table}");
    Ok(report)
}

/// Files written by `generate`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub model: PathBuf,
    pub samples: Vec<PathBuf>,
}

/// Random box covering at least one pixel of an `h x w` image.
fn random_bbox(rng: &mut ChaCha8Rng, h: usize, w: usize) -> BoundingBox {
    let top = rng.gen_range(0..h);
    let left = rng.gen_range(0..w);
    let bottom = rng.gen_range(top + 1..=h);
    let right = rng.gen_range(left + 1..=w);
    BoundingBox::new(top, left, bottom, right)
}

pub fn run_generate(args: &GenerateArgs) -> Result<Generated> {
    let spec = SyntheticSpec::new(args.channels, args.size, args.head, args.seed);
    let model = synthetic::generate_synthetic_model(&spec)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let model_path = args.out_dir.join("model.camshap");
    io::save_model(&model, &model_path)?;
    let [_, h, w] = model.input_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(1));
    let mut samples = Vec::with_capacity(args.samples);
    for i in 0..args.samples {
        let image: Tensor = synthetic::synthetic_image(&model, args.seed.wrapping_mul(1000).wrapping_add(i as u64));
        let logits = model.forward_full(&image)?.logits;
        let sample = SampleFile {
            class: synthetic::top_class(&logits),
            bbox: Some(random_bbox(&mut rng, h, w)),
            reference_logits: Some(logits.iter().map(|&v| v as f32).collect()),
            image,
        };
        let path = args.out_dir.join(format!("sample{i}.camshap"));
        io::save_sample(&sample, &path)?;
        samples.push(path);
    }
    Ok(Generated {
        model: model_path,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sibling_paths() {
        let p = Path::new("/tmp/out/result.json");
        assert_eq!(sibling(p, ".ppm"), Path::new("/tmp/out/result.ppm"));
        assert_eq!(sibling(p, ".timings.json"), Path::new("/tmp/out/result.timings.json"));
    }

    #[test]
    fn parses_flags() {
        let cli = Cli::try_parse_from([
            "camshap", "explain", "--model", "m", "--input", "x", "--method", "shap-cam", "--output", "o.json",
        ])
        .unwrap();
        match cli.command {
            Command::Explain(a) => {
                assert_eq!(a.method, Method::ShapCam);
                assert_eq!(a.orderings, None);
                assert_eq!(a.style, Style::Gray);
            }
            _ => panic!("wrong subcommand"),
        }
        let cli = Cli::try_parse_from([
            "camshap", "evaluate", "--model", "m", "--samples", "a", "b", "--methods", "grad-cam,lift-cam",
            "--metrics", "cosine", "--output", "r.json",
        ])
        .unwrap();
        match cli.command {
            Command::Evaluate(a) => {
                assert_eq!(a.samples.len(), 2);
                assert_eq!(a.methods, vec![Method::GradCam, Method::LiftCam]);
                assert_eq!(a.metrics, vec![Metric::Cosine]);
            }
            _ => panic!("wrong subcommand"),
        }
        let err = Cli::try_parse_from([
            "camshap", "explain", "--model", "m", "--input", "x", "--method", "magic-cam", "--output", "o",
        ])
        .unwrap_err();
        assert!(err.to_string().contains("magic-cam"));
    }

    #[test]
    fn random_boxes_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            random_bbox(&mut rng, 5, 3).validate(5, 3).unwrap();
        }
    }
}
