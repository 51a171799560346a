//! Command-line front end: `prep-data`, `train`, `paint`, `eval`, `gradcheck`.
//!
//! Exit codes: 0 success, 1 runtime or format error, 2 usage error (bad flags,
//! bad config keys, invalid arguments).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::canvas::Canvas;
use crate::env::{Env, EnvConfig};
use crate::error::{Error, Result};
use crate::gradcheck::{self, GradcheckConfig};
use crate::losses::{FeatureStack, LossKind, Metric};
use crate::nn::load_params;
use crate::rollout::{paint_multiscale, write_stroke_log, RolloutConfig};
use crate::trainer::{self, cluster_representatives, prepare_dataset, Dataset, EvalPolicy, PrepOptions, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "paintbot", version, about = "Train and run a stroke-based painting agent")]
pub struct Cli {
    /// Upper bound on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample fixed-size training patches from a directory of PNGs.
    PrepData(PrepArgs),
    /// Train a policy with PPO.
    Train(TrainArgs),
    /// Paint a reference image with a trained policy.
    Paint(PaintArgs),
    /// Report mean reward and final-loss ratio over a dataset.
    Eval(EvalArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    /// Directory containing source PNG images.
    #[arg(long)]
    pub input: PathBuf,
    /// Output dataset archive.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of patches to sample.
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    /// Side length of the stored patches.
    #[arg(long, default_value_t = 32)]
    pub patch_size: usize,
    /// Crop sizes in pyramid-level pixels (default: the patch size).
    #[arg(long, value_delimiter = ',')]
    pub crop_sizes: Vec<usize>,
    /// Pyramid scale factors.
    #[arg(long, value_delimiter = ',', default_value = "1,0.5,0.25")]
    pub scales: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep one random member of each of this many perceptual clusters.
    #[arg(long)]
    pub cluster_k: Option<usize>,
    #[arg(long)]
    pub no_rotate: bool,
    #[arg(long)]
    pub no_flip: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset archive from `prep-data`.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory for checkpoints and metrics.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PaintArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Reference PNG.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Pyramid factors, increasing and ending at 1.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub scales: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the executed strokes here as CSV.
    #[arg(long)]
    pub stroke_log: Option<PathBuf>,
    /// Training config supplying the environment and loss settings
    /// (default: `config.txt` beside the checkpoint, if present).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Loss for the stopping rule (overrides the config).
    #[arg(long)]
    pub loss: Option<Metric>,
    #[arg(long, default_value_t = 200)]
    pub max_strokes: usize,
    #[arg(long, default_value_t = 16)]
    pub max_segments: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub thresh_sim: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub value_stop: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyMode {
    Mean,
    Sample,
    Random,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset archive, or a directory of PNG references.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub loss: Option<Metric>,
    /// Training config supplying the environment settings
    /// (default: `config.txt` beside the checkpoint, if present).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Episode length (default: the config's t_max).
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_enum, default_value_t = PolicyMode::Mean)]
    pub policy: PolicyMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Instance sizes; the network check needs at least 17.
    #[arg(long, value_delimiter = ',', default_value = "17,21")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    pub per_tensor: usize,
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::InvalidArgument(_) => 2,
        Error::Format(_) | Error::Io { .. } => 1,
    }
}

/// Parses `args` (including the program name), runs the command, and returns
/// the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            let _ = writeln!(err, "error: --workers must be at least 1");
            return 2;
        }
        // fails only if the pool was already built, e.g. by an earlier call
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn w(out: &mut dyn Write, text: std::fmt::Arguments) -> Result<()> {
    out.write_fmt(text).map_err(|e| Error::io("<stdout>", e))
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::PrepData(a) => prep_data(a, out).map(|_| 0),
        Command::Train(a) => train(a, out).map(|_| 0),
        Command::Paint(a) => paint(a, out).map(|_| 0),
        Command::Eval(a) => eval(a, out).map(|_| 0),
        Command::Gradcheck(a) => gradcheck(a, out),
    }
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(format!("no PNG files in {}", dir.display())));
    }
    Ok(files)
}

fn prep_data(a: PrepArgs, out: &mut dyn Write) -> Result<()> {
    let sources: Vec<Canvas> = png_files(&a.input)?.iter().map(Canvas::load_png).collect::<Result<_>>()?;
    let opts = PrepOptions {
        count: a.n,
        patch_size: a.patch_size,
        crop_sizes: if a.crop_sizes.is_empty() { vec![a.patch_size] } else { a.crop_sizes },
        scales: a.scales,
        rotate: !a.no_rotate,
        flip: !a.no_flip,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut dataset = prepare_dataset(&sources, &opts, &mut rng)?;
    if let Some(k) = a.cluster_k {
        dataset = cluster_representatives(&dataset, &FeatureStack::default(), k, &mut rng)?;
    }
    dataset.save(&a.out)?;
    w(
        out,
        format_args!(
            "wrote {} patches of {}x{} from {} images to {}\n",
            dataset.len(),
            a.patch_size,
            a.patch_size,
            sources.len(),
            a.out.display()
        ),
    )
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p),
        None => Ok(TrainConfig::default()),
    }
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let mut dataset = Dataset::load(&a.dataset)?;
    let resume = a.resume.as_ref().map(load_params).transpose()?;
    let outcome = trainer::train(&cfg, &mut dataset, resume, Some(&a.out))?;
    fs::write(a.out.join("config.txt"), cfg.to_config_string()).map_err(|e| Error::io(a.out.join("config.txt"), e))?;
    let last = outcome.metrics.last().expect("at least one iteration");
    w(
        out,
        format_args!(
            "trained {} iterations ({} environment steps); last mean reward {:.6}\nwrote {}\n",
            outcome.episodes,
            outcome.env_steps,
            last.mean_reward,
            a.out.join("final.ckpt").display()
        ),
    )
}

/// Environment for a checkpoint: the given config, else the `config.txt` that
/// `train` wrote next to the checkpoint, else the defaults with the
/// observation size taken from the checkpoint.
fn env_for(
    config: Option<&Path>,
    checkpoint: &Path,
    loss: Option<Metric>,
    obs: (usize, usize),
) -> Result<(Env, TrainConfig)> {
    let beside = checkpoint.with_file_name("config.txt");
    let config = config.or_else(|| beside.is_file().then_some(beside.as_path()));
    let cfg = load_config(config)?;
    let mut env_cfg: EnvConfig = cfg.env;
    if config.is_none() {
        env_cfg.obs_height = obs.0;
        env_cfg.obs_width = obs.1 / 2;
    }
    let mut kind = cfg.loss;
    if let Some(m) = loss {
        kind = LossKind { metric: m, ..kind };
    }
    Ok((Env::with_kind(env_cfg, kind)?, cfg))
}

fn paint(a: PaintArgs, out: &mut dyn Write) -> Result<()> {
    let ck = load_params(&a.checkpoint)?;
    let reference = Canvas::load_png(&a.reference)?;
    let (env, _) = env_for(a.config.as_deref(), &a.checkpoint, a.loss, ck.net.observation_dims())?;
    let cfg = RolloutConfig {
        thresh_sim: a.thresh_sim,
        value_stop: a.value_stop,
        max_strokes: a.max_strokes,
        max_segments: a.max_segments,
        scales: a.scales,
        seed: a.seed,
    };
    let result = paint_multiscale(&reference, &ck.net, &cfg, &env)?;
    result.canvas.save_png(&a.out)?;
    if let Some(p) = &a.stroke_log {
        write_stroke_log(p, &result.strokes)?;
    }
    w(
        out,
        format_args!(
            "painted {} segments in {} strokes; {} loss {:.6} -> {:.6}\n",
            result.strokes.len(),
            result.strokes_started,
            env.loss().kind().metric,
            result.initial_loss,
            result.final_loss
        ),
    )
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let ck = load_params(&a.checkpoint)?;
    let references: Vec<Canvas> = if a.dataset.is_dir() {
        png_files(&a.dataset)?.iter().map(Canvas::load_png).collect::<Result<_>>()?
    } else {
        Dataset::load(&a.dataset)?.patches().to_vec()
    };
    let (env, cfg) = env_for(a.config.as_deref(), &a.checkpoint, a.loss, ck.net.observation_dims())?;
    let steps = a.steps.unwrap_or(cfg.t_max);
    let policy = match a.policy {
        PolicyMode::Mean => EvalPolicy::Deterministic,
        PolicyMode::Sample => EvalPolicy::Stochastic,
        PolicyMode::Random => EvalPolicy::Random,
    };
    if ck.net.observation_dims() != env.config().observation_dims() {
        return Err(Error::invalid(format!(
            "checkpoint takes {:?} observations but the config produces {:?}",
            ck.net.observation_dims(),
            env.config().observation_dims()
        )));
    }
    let report = trainer::evaluate(&ck.net, &env, &references, steps, policy, a.seed)?;
    w(
        out,
        format_args!(
            "references {}\nsteps {}\nloss {}\nmean_reward {:.6}\nmean_loss_ratio {:.6}\n",
            references.len(),
            steps,
            env.loss().kind().metric,
            report.mean_reward,
            report.mean_loss_ratio
        ),
    )
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let report = gradcheck::run(&GradcheckConfig {
        seed: a.seed,
        sizes: a.sizes,
        per_tensor: a.per_tensor,
        corrupt: a.corrupt_gradient,
    })?;
    w(out, format_args!("{report}\n"))?;
    Ok(if report.passed() { 0 } else { 1 })
}
