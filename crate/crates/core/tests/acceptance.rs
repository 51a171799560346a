//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with a
//! failure status if any criterion fails.
//!
//! `cargo test --test acceptance -- 3 9` runs only criteria 3 and 9.

use std::path::Path;
use std::process::{Command, ExitCode, Stdio};
use std::time::{Duration, Instant};

use paintbot::gradcheck::{self, GradcheckConfig};
use paintbot::losses::{loss_l2, loss_lhalf, loss_perceptual, FeatureStack};
use paintbot::nn::layers::Conv2d;
use paintbot::rollout::{paint, paint_multiscale, replay, RolloutConfig};
use paintbot::trainer::{build_env, evaluate, train, Dataset, EvalPolicy, Sampling, TrainConfig};
use paintbot::{Action, Canvas, Env, EnvConfig, LossKind, Metric, NetSpec, PolicyNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

type Criterion = (u32, &'static str, Option<Duration>, fn() -> Outcome);

fn random_canvas(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Canvas {
    Canvas::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap()
}

fn toy_patches() -> Vec<Canvas> {
    vec![
        Canvas::new(32, 32, [1.0, 0.0, 0.0]).unwrap(),
        Canvas::new(32, 32, [0.0, 1.0, 0.0]).unwrap(),
        Canvas::new(32, 32, [0.0, 0.0, 1.0]).unwrap(),
        Canvas::from_fn(32, 32, |_, c| {
            let t = c as f64 / 31.0;
            [1.0 - t, 0.0, t]
        })
        .unwrap(),
    ]
}

/// Training setup shared by the learning, ablation and sampler criteria.
fn desk_config() -> TrainConfig {
    TrainConfig {
        loss: LossKind::new(Metric::LHalf),
        iterations: 1500,
        episodes_per_iteration: 16,
        learning_rate: 3e-4,
        sampling: Sampling::Uniform,
        step_budget: 200_000,
        ..TrainConfig::desk()
    }
}

fn loss_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut identity = Conv2d::<f64>::zeros(3, 3, 1, 1, 1);
    for c in 0..3 {
        identity.weight[c * 3 + c] = 1.0;
    }
    let stack = FeatureStack::from_layers(vec![identity]).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let a = random_canvas(4, 4, &mut rng);
        let b = random_canvas(4, 4, &mut rng);
        let (mut sq, mut half, mut feat) = (0.0, 0.0, 0.0);
        for r in 0..4 {
            for c in 0..4 {
                let (pa, pb) = (a.get(r, c), b.get(r, c));
                for ch in 0..3 {
                    let d = pa[ch] - pb[ch];
                    sq += d * d;
                    half += d.abs().sqrt();
                    let f = pa[ch].max(0.0) - pb[ch].max(0.0);
                    feat += f * f;
                }
            }
        }
        let n = 48.0;
        worst = worst
            .max((loss_l2(&a, &b).unwrap() - sq / n).abs())
            .max((loss_lhalf(&a, &b).unwrap() - half / n).abs())
            .max((loss_perceptual(&a, &b, &stack).unwrap() - feat / n).abs());
    }
    Outcome::new(worst <= 1e-12, format!("max abs deviation {worst:.2e} over 100 pairs x 3 losses"))
}

fn reward_telescoping() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let metrics = [Metric::L2, Metric::LHalf, Metric::Perceptual];
    let (mut worst, mut max_sum) = (0.0f64, f64::NEG_INFINITY);
    for episode in 0..50 {
        let env = Env::with_kind(EnvConfig::desk(), LossKind::new(metrics[episode % 3])).unwrap();
        let reference = random_canvas(32, 32, &mut rng);
        let mut state = env.reset(&reference, None, None).unwrap();
        let l0 = env.loss().eval(&state.canvas, &reference).unwrap();
        let mut total = 0.0;
        for _ in 0..20 {
            let action = Action::clamped(std::array::from_fn(|_| rng.random()));
            total += env.step(&mut state, &action).unwrap().reward;
        }
        let lt = env.loss().eval(&state.canvas, &reference).unwrap();
        worst = worst.max((total - (l0 - lt) / l0).abs());
        max_sum = max_sum.max(total);
    }
    Outcome::new(
        worst <= 1e-9 && max_sum <= 1.0,
        format!("max |sum r - (L0-Lt)/L0| {worst:.2e}, max sum r {max_sum:.4}"),
    )
}

fn gradient_check() -> Outcome {
    let report = gradcheck::run(&GradcheckConfig::default()).unwrap();
    let checked: usize = report.entries.iter().map(|e| e.checked).sum();
    Outcome::new(
        report.passed(),
        format!(
            "max rel error {:.2e} over {checked} coordinates in {} checks",
            report.max_rel_error(),
            report.entries.len()
        ),
    )
}

fn architecture_shapes() -> Outcome {
    let spec = NetSpec::full();
    let net = PolicyNet::<f32>::init(&spec, 0).unwrap();
    let (mut h, mut w) = (41usize, 82usize);
    let mut expected = Vec::new();
    for c in &spec.convs {
        h = (h - c.kernel) / c.stride + 1;
        w = (w - c.kernel) / c.stride + 1;
        expected.push((h, w, c.filters));
    }
    let frozen = vec![(9, 19, 64), (3, 8, 64), (1, 6, 64)];
    let shapes = net.conv_shapes();
    let obs = paintbot::env::Observation::from_data(41, 82, vec![0.5; 41 * 82 * 3]).unwrap();
    let out = net.forward(&obs).unwrap();
    let pass = shapes == expected
        && shapes == frozen
        && net.fc.inputs == 384
        && net.fc.outputs == 512
        && net.policy.outputs == 6
        && net.log_std.len() == 6
        && net.value.outputs == 1
        && out.mean.len() + out.log_std.len() + 1 == 13;
    Outcome::new(
        pass,
        format!(
            "convs {shapes:?}, fc {}->{}, heads {}+{}+{}",
            net.fc.inputs,
            net.fc.outputs,
            net.policy.outputs,
            net.log_std.len(),
            net.value.outputs
        ),
    )
}

fn desk_learning() -> Outcome {
    let cfg = desk_config();
    let patches = toy_patches();
    let mut dataset = Dataset::new(patches.clone()).unwrap();
    let outcome = train(&cfg, &mut dataset, None, None).unwrap();
    let env = build_env(&cfg).unwrap();
    let trained = evaluate(&outcome.net, &env, &patches, cfg.t_max, EvalPolicy::Deterministic, 0).unwrap();
    let random = evaluate(&outcome.net, &env, &patches, cfg.t_max, EvalPolicy::Random, 0).unwrap();
    Outcome::new(
        outcome.env_steps <= 200_000 && trained.mean_loss_ratio <= 0.5 && random.mean_loss_ratio >= 0.8,
        format!(
            "trained ratio {:.3}, random ratio {:.3}, {} steps",
            trained.mean_loss_ratio, random.mean_loss_ratio, outcome.env_steps
        ),
    )
}

fn validation_patches() -> Vec<Canvas> {
    vec![
        Canvas::new(32, 32, [1.0, 1.0, 0.0]).unwrap(),
        Canvas::new(32, 32, [0.0, 1.0, 1.0]).unwrap(),
        Canvas::new(32, 32, [1.0, 0.0, 1.0]).unwrap(),
        Canvas::from_fn(32, 32, |r, _| {
            let t = r as f64 / 31.0;
            [0.0, 1.0 - t, t]
        })
        .unwrap(),
    ]
}

fn curriculum_ablation() -> Outcome {
    let budget = 100_000;
    let run = |curriculum: bool| {
        let cfg = TrainConfig { curriculum, step_budget: budget, ..desk_config() };
        let mut dataset = Dataset::new(toy_patches()).unwrap();
        let outcome = train(&cfg, &mut dataset, None, None).unwrap();
        let env = build_env(&cfg).unwrap();
        let report =
            evaluate(&outcome.net, &env, &validation_patches(), cfg.t_max, EvalPolicy::Deterministic, 0).unwrap();
        (report.mean_reward, outcome.env_steps)
    };
    let (with, steps_with) = run(true);
    let (without, steps_without) = run(false);
    Outcome::new(
        with >= without,
        format!(
            "validation reward {with:.3} with curriculum ({steps_with} steps) vs {without:.3} without ({steps_without} steps)"
        ),
    )
}

fn sampler_prefers_noise() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut patches = toy_patches();
    patches.push(random_canvas(32, 32, &mut rng));
    let noise = patches.len() - 1;
    let n = patches.len();
    let cfg = TrainConfig { sampling: Sampling::Value, step_budget: 50_000, ..desk_config() };
    let mut dataset = Dataset::new(patches).unwrap();
    let outcome = train(&cfg, &mut dataset, None, None).unwrap();
    let picked = outcome.selections.iter().filter(|&&i| i == noise).count();
    let total = outcome.selections.len();
    let freq = picked as f64 / total as f64;
    Outcome::new(
        freq > 1.0 / n as f64,
        format!("noise reference chosen {picked}/{total} = {freq:.3} (uniform {:.3})", 1.0 / n as f64),
    )
}

fn runtime_linearity() -> Outcome {
    let env = Env::with_kind(EnvConfig::desk(), LossKind::new(Metric::L2)).unwrap();
    let net = PolicyNet::<f32>::init(&NetSpec::desk(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pixels_per_stroke = 256;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for side in [128usize, 256, 512] {
        let reference = random_canvas(side, side, &mut rng);
        let cfg = RolloutConfig {
            thresh_sim: 0.0,
            value_stop: f64::NEG_INFINITY,
            max_strokes: side * side / pixels_per_stroke,
            max_segments: 4,
            ..RolloutConfig::default()
        };
        for _ in 0..2 {
            let start = Instant::now();
            paint(&reference, &net, &cfg, &env).unwrap();
            xs.push((side * side) as f64);
            ys.push(start.elapsed().as_secs_f64());
        }
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    let times: Vec<String> = ys.iter().map(|t| format!("{t:.2}")).collect();
    Outcome::new(r2 >= 0.9, format!("R^2 {r2:.4}, times [{}] s", times.join(", ")))
}

fn run_cli(args: &[&str]) {
    let status =
        Command::new(env!("CARGO_BIN_EXE_paintbot")).args(args).stdout(Stdio::null()).status().expect("spawn paintbot");
    assert!(status.success(), "paintbot {args:?} failed: {status}");
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

const CLI_CONFIG: &str = "\
network = desk
obs_height = 21
obs_width = 21
max_width = 20
loss = lhalf
t_max = 6
iterations = 3
episodes_per_iteration = 4
";

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    std::fs::write(p("train.cfg"), CLI_CONFIG).unwrap();
    Dataset::new(toy_patches()).unwrap().save(p("toy.pbds")).unwrap();
    toy_patches()[3].save_png(p("ref.png")).unwrap();
    for run in ["a", "b"] {
        run_cli(&["train", "--config", &p("train.cfg"), "--dataset", &p("toy.pbds"), "--out", &p(run), "--seed", "11"]);
        let ckpt = format!("{}/final.ckpt", p(run));
        let log = format!("{}/strokes.csv", p(run));
        let png = format!("{}/painted.png", p(run));
        run_cli(&[
            "paint",
            "--checkpoint",
            &ckpt,
            "--ref",
            &p("ref.png"),
            "--out",
            &png,
            "--config",
            &p("train.cfg"),
            "--seed",
            "4",
            "--value-stop=-1e9",
            "--max-strokes",
            "20",
            "--stroke-log",
            &log,
        ]);
    }
    let same = |f: &str| read(dir.path().join("a").join(f)) == read(dir.path().join("b").join(f));
    let results: Vec<(&str, bool)> =
        ["metrics.csv", "final.ckpt", "painted.png", "strokes.csv"].into_iter().map(|f| (f, same(f))).collect();
    let rows = String::from_utf8(read(dir.path().join("a/metrics.csv"))).unwrap().lines().count();
    Outcome::new(results.iter().all(|r| r.1) && rows == 4, format!("identical: {results:?}, metrics rows {}", rows - 1))
}

fn stroke_replay() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let env = Env::with_kind(EnvConfig::desk(), LossKind::new(Metric::L2)).unwrap();
    let mut checked = Vec::new();
    let mut all = true;
    for (seed, scales) in [(0u64, vec![1.0]), (1, vec![0.25, 0.5, 1.0]), (2, vec![0.5, 1.0])] {
        let net = PolicyNet::<f32>::init(&NetSpec::desk(), seed).unwrap();
        let reference = random_canvas(48, 40, &mut rng);
        let cfg = RolloutConfig {
            value_stop: f64::NEG_INFINITY,
            max_strokes: 30,
            max_segments: 5,
            scales: scales.clone(),
            seed,
            ..RolloutConfig::default()
        };
        let painted = paint_multiscale(&reference, &net, &cfg, &env).unwrap();
        let text = paintbot::rollout::format_stroke_log(&painted.strokes);
        let records = paintbot::rollout::parse_stroke_log(&text).unwrap();
        let redrawn = replay(&records, 48, 40, &scales, env.config()).unwrap();
        let identical = redrawn.data().iter().zip(painted.canvas.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        all &= identical && !records.is_empty();
        checked.push(format!("{} scales/{} segments", scales.len(), records.len()));
    }
    Outcome::new(all, format!("bit-identical replays: {}", checked.join(", ")))
}

fn main() -> ExitCode {
    let criteria: Vec<Criterion> = vec![
        (1, "loss oracles", Some(Duration::from_secs(1)), loss_oracles),
        (2, "reward telescoping", Some(Duration::from_secs(5)), reward_telescoping),
        (3, "gradient check", Some(Duration::from_secs(30)), gradient_check),
        (4, "architecture shapes", None, architecture_shapes),
        (5, "desk-scale learning", Some(Duration::from_secs(3600)), desk_learning),
        (6, "curriculum ablation", Some(Duration::from_secs(7200)), curriculum_ablation),
        (7, "difficulty sampler", Some(Duration::from_secs(3600)), sampler_prefers_noise),
        (8, "runtime linearity", Some(Duration::from_secs(600)), runtime_linearity),
        (9, "determinism", Some(Duration::from_secs(3600)), cli_determinism),
        (10, "stroke-log replay", Some(Duration::from_secs(60)), stroke_replay),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (id, name, limit, check) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let in_time = limit.is_none_or(|l| elapsed <= l);
        let pass = outcome.pass && in_time;
        failures += usize::from(!pass);
        println!(
            "criterion {id:>2} {name:<22} {} {} [{:.1}s{}]",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64(),
            if in_time { "" } else { ", over time limit" }
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
