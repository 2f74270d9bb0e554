//! Acceptance suite: one check per criterion, each printing a single
//! PASS/FAIL line with its measured figures. Runs without the libtest
//! harness so the lines always reach stdout.

mod support;

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use camshap::attribution::{self, CoefficientVector, Method};
use camshap::evaluation::{
    coefficient_similarity, cosine_similarity, faithfulness, insertion_deletion_curves, pointing_game,
    BoundingBox, Confidences, EvalSample,
};
use camshap::explain::{coefficients, ExplainOptions};
use camshap::network::{head_gradient_f64, ActivationStack, HeadTrace, Layer, ModelGraph};
use camshap::shapley::{self, exact_shapley_values, FnGame, HeadGame, OrderingSet};
use camshap::synthetic::HeadKind;
use camshap::{ExplanationMap, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{fixture, l2_distance, max_abs_diff, ref_head, stack_f64};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn lift(f: &support::Fixture) -> CoefficientVector {
    let trace = HeadTrace::record(&f.model, &f.stack).unwrap();
    attribution::lift_cam(&f.model, &trace, f.class).unwrap()
}

fn exact(f: &support::Fixture) -> CoefficientVector {
    shapley::exact_shapley(&f.model, &f.stack, f.class).unwrap()
}

fn delta(f: &support::Fixture) -> f64 {
    f.model.forward_head(&f.stack, f.class).unwrap()
        - f.model.forward_head(&f.stack.zeros_like(), f.class).unwrap()
}

fn relu_head(seed: u64) -> HeadKind {
    if seed.is_multiple_of(2) {
        HeadKind::ReluMlp
    } else {
        HeadKind::ConvRelu
    }
}

/// Linear heads: LIFT-CAM equals the exact Shapley values.
fn linear_exactness() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let f = fixture(8, 4, HeadKind::Linear, seed);
        assert!(f.model.head_is_linear());
        worst = worst.max(max_abs_diff(&lift(&f).values, &exact(&f).values));
    }
    check(worst <= 1e-6, format!("50 models, max |lift - exact| = {worst:.3e} (tol 1e-6)"))
}

/// ReLU heads: LIFT-CAM coefficients sum to F(A) - F(0).
fn local_accuracy() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let f = fixture(8, 4, relu_head(seed), seed);
        let d = delta(&f);
        let err = (lift(&f).sum() - d).abs() / d.abs().max(f64::MIN_POSITIVE);
        worst = worst.max(err);
    }
    check(worst <= 1e-4, format!("50 models, max relative error = {worst:.3e} (tol 1e-4)"))
}

/// Flatten + dense head on an `n x h x w` stack with per-channel weights
/// `cols[k]` broadcast over the channel's pixels, followed by ReLU and a
/// second dense layer so the game is not additive.
fn channel_weighted_head(n: usize, plane: usize, cols: &[[f32; 3]]) -> Vec<Layer> {
    let hidden = 3;
    let weights = Tensor::from_fn(&[hidden, n * plane], |i| {
        let (r, col) = (i / (n * plane), i % (n * plane));
        cols[col / plane][r]
    });
    vec![
        Layer::Flatten,
        Layer::Dense {
            weights,
            bias: vec![-0.3, 0.1, -0.05],
        },
        Layer::Relu,
        Layer::Dense {
            weights: Tensor::new(vec![2, hidden], vec![1.0, -0.7, 0.9, 0.2, 0.5, -1.0]).unwrap(),
            bias: vec![0.05, 0.0],
        },
    ]
}

/// Efficiency, null player and symmetry of exact enumeration.
fn shapley_axioms() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    let mut eff = 0.0f64;
    for seed in 0..10 {
        let f = fixture(8, 4, relu_head(seed), 100 + seed);
        let d = delta(&f);
        eff = eff.max((exact(&f).sum() - d).abs() / d.abs().max(f64::MIN_POSITIVE));
    }
    let game = FnGame::new(5, |s: u64| {
        let k = s.count_ones() as f64;
        k * k + if s & 0b11 == 0b11 { 2.5 } else { 0.0 }
    });
    let phi = exact_shapley_values(&game).unwrap();
    let total = game_value(&game, 0b11111) - game_value(&game, 0);
    eff = eff.max((phi.iter().sum::<f64>() - total).abs() / total.abs());
    ok &= eff <= 1e-6;
    notes.push(format!("efficiency rel {eff:.2e}"));

    // Channel 2 has zero weight everywhere: a null player. Channels 0 and 1
    // carry the same map and the same weights: symmetric players.
    let (n, h, w) = (5usize, 3usize, 3usize);
    let plane = h * w;
    let cols = [[0.8, -0.4, 0.3], [0.8, -0.4, 0.3], [0.0, 0.0, 0.0], [-0.5, 0.9, 0.2], [0.3, 0.6, -0.7]];
    let model = ModelGraph::new([n, h, w], vec![], channel_weighted_head(n, plane, &cols)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let base: Vec<f32> = (0..plane).map(|_| rng.gen_range(0.1..1.5)).collect();
    let data: Vec<f32> = (0..n)
        .flat_map(|k| {
            if k <= 1 {
                base.clone()
            } else {
                (0..plane).map(|_| rng.gen_range(0.1..1.5)).collect()
            }
        })
        .collect();
    let stack = ActivationStack::new(Tensor::new(vec![n, h, w], data).unwrap()).unwrap();
    let head_game = HeadGame::new(&model, &stack, 0).unwrap();
    let phi = exact_shapley_values(&head_game).unwrap();
    let null_exact = phi[2] == 0.0;
    let sym = (phi[0] - phi[1]).abs();
    let fn_null = {
        let g = FnGame::new(4, |s: u64| ((s & 0b1011).count_ones() as f64).powi(2));
        exact_shapley_values(&g).unwrap()[2] == 0.0
    };
    let fn_sym = {
        let g = FnGame::new(4, |s: u64| ((s & 1) + (s >> 1 & 1)) as f64 * 1.5 + (s >> 3 & 1) as f64);
        let p = exact_shapley_values(&g).unwrap();
        (p[0] - p[1]).abs()
    };
    ok &= null_exact && fn_null && sym.max(fn_sym) <= 1e-6;
    notes.push(format!(
        "null player exact zero: {} ; symmetry |diff| {:.2e}",
        null_exact && fn_null,
        sym.max(fn_sym)
    ));
    check(ok, notes.join(", "))
}

fn game_value<G: shapley::CoalitionGame>(g: &G, s: u64) -> f64 {
    g.value(s).unwrap()
}

/// SHAP-CAM error against exact values shrinks as orderings grow.
fn monte_carlo_convergence() -> Outcome {
    let sizes = [1usize, 10, 100, 1000];
    let fixtures: Vec<_> = (0..5).map(|s| fixture(8, 4, HeadKind::ReluMlp, 300 + s)).collect();
    let truths: Vec<Vec<f64>> = fixtures.iter().map(|f| exact(f).values).collect();
    let mut means = Vec::new();
    for &count in &sizes {
        let mut total = 0.0;
        let mut runs = 0usize;
        for (f, truth) in fixtures.iter().zip(&truths) {
            for seed in 0..10 {
                let o = OrderingSet::sample(8, count, seed).unwrap();
                let est = shapley::shap_cam(&f.model, &f.stack, f.class, &o).unwrap();
                total += l2_distance(&est.values, truth);
                runs += 1;
            }
        }
        means.push(total / runs as f64);
    }
    let decreasing = means.windows(2).all(|w| w[1] < w[0]);
    let text: Vec<String> = sizes.iter().zip(&means).map(|(s, m)| format!("|P|={s}: {m:.4e}")).collect();
    check(decreasing, format!("mean L2 error {}", text.join(", ")))
}

/// Mean cosine against exact Shapley ranks LIFT/Ablation above gradient CAMs.
fn cosine_ordering() -> Outcome {
    let methods = [
        Method::LiftCam,
        Method::AblationCam,
        Method::GradCam,
        Method::GradCamPlusPlus,
        Method::XGradCam,
        Method::ScoreCam,
    ];
    let fixtures = 20;
    let mut sums = [0.0f64; 6];
    let opts = ExplainOptions::default();
    for seed in 0..fixtures {
        let f = fixture(8, 4, HeadKind::ReluMlp, seed);
        let truth = exact(&f);
        for (i, &m) in methods.iter().enumerate() {
            let c = coefficients(&f.model, &f.image, &f.stack, f.class, m, &opts).unwrap();
            sums[i] += coefficient_similarity(&c, &truth).unwrap();
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / fixtures as f64).collect();
    let (lift, ablation) = (means[0], means[1]);
    let best_gradient = means[2..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ok = lift >= ablation - 0.005 && lift - best_gradient >= 0.05 && ablation - best_gradient >= 0.05;
    let text: Vec<String> = methods.iter().zip(&means).map(|(m, v)| format!("{m} {v:.3}")).collect();
    check(ok, format!("{fixtures} fixtures: {}", text.join(", ")))
}

/// Backward gradients agree with central differences of the reference
/// evaluator away from ReLU and max-pool kinks.
fn gradient_vs_finite_differences() -> Outcome {
    let step = 1e-3;
    let (mut agree, mut probed, mut kinks, mut nonzero) = (0usize, 0usize, 0usize, 0usize);
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for seed in 0..10 {
        let f = fixture(8, 4, relu_head(seed), 600 + seed);
        let trace = HeadTrace::record_forward(&f.model, &f.stack).unwrap();
        let grad = head_gradient_f64(&f.model, &trace, f.class).unwrap();
        let a = stack_f64(&f.stack);
        let region = ref_head(&f.model, &a, f.class).region;
        for _ in 0..100 {
            probed += 1;
            let p = rng.gen_range(0..a.len());
            let mut plus = a.clone();
            plus[p] += step;
            let mut minus = a.clone();
            minus[p] -= step;
            let (hi, lo) = (ref_head(&f.model, &plus, f.class), ref_head(&f.model, &minus, f.class));
            if hi.region != region || lo.region != region {
                kinks += 1;
                continue;
            }
            let fd = (hi.out[0] - lo.out[0]) / (2.0 * step);
            let g = grad[p];
            if fd != 0.0 || g != 0.0 {
                nonzero += 1;
            }
            let scale = fd.abs().max(g.abs());
            if (g - fd).abs() <= 1e-3 * scale || scale < 1e-12 {
                agree += 1;
            }
        }
    }
    let considered = probed - kinks;
    let rate = agree as f64 / considered as f64;
    check(
        rate >= 0.95,
        format!(
            "{probed} probes, {kinks} kink-adjacent excluded, {agree}/{considered} agree ({:.1}%, {nonzero} nonzero)",
            100.0 * rate
        ),
    )
}

fn conf(y: f64, o: f64, d: f64) -> Confidences {
    Confidences {
        original: y,
        explanation: o,
        inverted: d,
    }
}

fn map(h: usize, w: usize, v: &[f32]) -> ExplanationMap {
    ExplanationMap::from_normalized(Tensor::new(vec![h, w], v.to_vec()).unwrap()).unwrap()
}

/// Hand-computable metric cases.
fn metric_cases() -> Outcome {
    let mut failures = Vec::new();
    let mut case = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    let f = faithfulness(&[conf(0.5, 0.6, 0.5)]).unwrap();
    case("IC=100 AD=0", (f.ic, f.ad) == (100.0, 0.0));
    let f = faithfulness(&[conf(0.5, 0.25, 0.5)]).unwrap();
    case("IC=0 AD=50", (f.ic, f.ad) == (0.0, 50.0));
    case("ADD=50", faithfulness(&[conf(0.5, 0.5, 0.25)]).unwrap().add == 50.0);
    case("ADD=-50", faithfulness(&[conf(0.5, 0.5, 0.75)]).unwrap().add == -50.0);

    // Two pixels, only the first drives class 0 with weight 4.
    let model = ModelGraph::new(
        [1, 1, 2],
        vec![],
        vec![
            Layer::Flatten,
            Layer::Dense {
                weights: Tensor::new(vec![2, 2], vec![4.0, 0.0, 0.0, 0.0]).unwrap(),
                bias: vec![0.0, 0.0],
            },
        ],
    )
    .unwrap();
    let image = Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap();
    let sample = EvalSample::new(&model, image.clone(), 0, None).unwrap();
    let y = 1.0 / (1.0 + (-4.0f64).exp());
    let good = insertion_deletion_curves(&model, &sample, &map(1, 2, &[1.0, 0.0])).unwrap();
    let bad = insertion_deletion_curves(&model, &sample, &map(1, 2, &[0.0, 1.0])).unwrap();
    case("insertion starts at black image", good.insertion[0] == 0.5);
    case("insertion ends at Y", (good.insertion[40] - y).abs() < 1e-15);
    case("deletion starts at Y", (good.deletion[0] - y).abs() < 1e-15);
    case(
        "insertion AUC frozen value",
        (good.insertion_auc - (9.5 * 0.5 + 0.5 * y + 30.0 * y) / 40.0).abs() < 1e-12,
    );
    case("perfect map wins insertion", good.insertion_auc > bad.insertion_auc);
    case("perfect map wins deletion", good.deletion_auc < bad.deletion_auc);
    let all_ones = map(1, 2, &[1.0, 1.0]);
    let s = camshap::evaluation::confidences(&model, &sample, &all_ones).unwrap();
    let f = faithfulness(&[s]).unwrap();
    case("all-ones map gives IC=0 AD=0", (f.ic, f.ad) == (0.0, 0.0));

    let inside = map(2, 2, &[1.0, 0.0, 0.0, 0.0]);
    case("pointing all inside", pointing_game(&inside, &BoundingBox::new(0, 0, 1, 1)).unwrap() == 1.0);
    let uniform = map(2, 2, &[0.3; 4]);
    case("pointing half", pointing_game(&uniform, &BoundingBox::new(0, 0, 1, 2)).unwrap() == 0.5);
    case("pointing full box", pointing_game(&inside, &BoundingBox::new(0, 0, 2, 2)).unwrap() == 1.0);

    case("cosine identical", (cosine_similarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
    case("cosine orthogonal", cosine_similarity(&[1.0, 0.0], &[0.0, 3.0]).unwrap() == 0.0);
    case("cosine opposite", cosine_similarity(&[1.0, 0.0], &[-1.0, 0.0]).unwrap() == -1.0);

    check(failures.is_empty(), if failures.is_empty() {
        "all hand cases match".into()
    } else {
        format!("mismatched: {}", failures.join("; "))
    })
}

fn fastest(reps: usize, mut run: impl FnMut()) -> Duration {
    (0..reps)
        .map(|_| {
            let t = Instant::now();
            run();
            t.elapsed()
        })
        .min()
        .unwrap()
}

/// One backward pass against N forward passes on a 64-channel stack.
fn efficiency() -> Outcome {
    let f = fixture(64, 8, HeadKind::ConvRelu, 808);
    let opts = ExplainOptions::default();
    let time = |m: Method| {
        fastest(5, || {
            coefficients(&f.model, &f.image, &f.stack, f.class, m, &opts).unwrap();
        })
    };
    let lift = time(Method::LiftCam);
    let ablation = time(Method::AblationCam);
    let score = time(Method::ScoreCam);
    let (ra, rs) = (
        ablation.as_secs_f64() / lift.as_secs_f64(),
        score.as_secs_f64() / lift.as_secs_f64(),
    );
    check(
        ra >= 2.0 && rs >= 2.0,
        format!("lift {lift:.2?}, ablation {ablation:.2?} ({ra:.1}x), score {score:.2?} ({rs:.1}x)"),
    )
}

fn camshap(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_camshap"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).trim().to_string())
    }
}

/// Two identical `explain` runs give byte-identical result files.
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    camshap(&["generate", "--channels", "8", "--size", "4", "--seed", "9", "--out-dir", &s(d)])?;
    let (model, sample) = (s(&d.join("model.camshap")), s(&d.join("sample0.camshap")));
    let mut compared = 0;
    for method in ["shap-cam", "lift-cam", "score-cam"] {
        let mut outputs = Vec::new();
        let out = d.join(format!("{method}.json"));
        for _ in 0..2 {
            camshap(&[
                "explain", "--model", &model, "--input", &sample, "--method", method, "--seed", "7",
                "--orderings", "25", "--output", &s(&out),
            ])?;
            let json = fs::read(&out).map_err(|e| e.to_string())?;
            let ppm = fs::read(d.join(format!("{method}.ppm"))).map_err(|e| e.to_string())?;
            outputs.push((json, ppm));
        }
        if outputs[0] != outputs[1] {
            return Err(format!("{method}: result files differ between runs"));
        }
        compared += 1;
    }
    Ok(format!("{compared} methods, result and heatmap bytes identical across runs"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("linear-head exactness", linear_exactness),
        ("local accuracy", local_accuracy),
        ("shapley axioms", shapley_axioms),
        ("monte-carlo convergence", monte_carlo_convergence),
        ("cosine ordering", cosine_ordering),
        ("gradient vs finite differences", gradient_vs_finite_differences),
        ("metric hand cases", metric_cases),
        ("efficiency", efficiency),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {} [{tag}] {name}: {detail} ({secs:.2}s)", i + 1);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
