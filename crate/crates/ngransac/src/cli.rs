//! Command-line front end: scene synthesis, guidance training, single-scene
//! evaluation, benchmark sweeps, and the gradient-oracle suite.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures. Every
//! knob resolves as CLI flag > config-file value > built-in default, and the
//! resolved configuration is echoed as `#` comment lines into every text
//! output. The `NGRANSAC_SEED` environment variable replaces the built-in
//! default seed when neither a flag nor the config file sets one.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bench::{run_benchmark, BenchConfig, MethodSpec};
use crate::estimator::{ng_ransac, EpipolarFittingTask, EpipolarSolver, EstimateConfig};
use crate::geometry::{decompose_essential, ModelKind, Pose};
use crate::gradcheck;
use crate::guidance::{GuidanceNet, GuidanceNetSpec, HeadKind};
use crate::metrics::{epipolar_stats, fscore_inliers, quantize9, MetricRecord};
use crate::rng::mix_seed;
use crate::sampling::GuidanceDistribution;
use crate::sceneio::{
    correspondences_to_string, load_correspondences, CorrespondenceFile,
};
use crate::synthdata::{
    gen_epipolar_scene, gen_line_scene, EpipolarSceneConfig, LineSceneConfig, SideInfo,
    LINE_FEATURES_PER_PATCH,
};
use crate::training::{
    epipolar_features, train_loop, EpipolarExample, LineExample, Objective, TrainConfig,
    TrainExample,
};

#[derive(Parser)]
#[command(
    name = "ngransac",
    version,
    about = "Robust model fitting with learned hypothesis sampling",
    arg_required_else_help = true
)]
struct Cli {
    /// TOML config file; explicit flags take precedence over its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic two-view scenes as correspondence files.
    Synth(SynthArgs),
    /// Train a guidance network and save it as a model file.
    Train(TrainArgs),
    /// Estimate a model for one correspondence file; reports JSON.
    Eval(EvalArgs),
    /// Sweep methods x budgets x outlier rates x seeds into a metrics CSV.
    Bench(BenchArgs),
    /// Run the gradient and estimator oracle suite.
    Gradcheck,
}

#[derive(Args)]
struct SynthArgs {
    /// Number of scenes to write.
    #[arg(long)]
    count: Option<usize>,
    /// Correspondences per scene.
    #[arg(long)]
    n: Option<usize>,
    /// Outlier fraction in [0, 1].
    #[arg(long)]
    outliers: Option<f64>,
    /// Coordinate noise in normalized units.
    #[arg(long)]
    noise: Option<f64>,
    /// Ratio side information attached to each correspondence.
    #[arg(long, value_enum)]
    side_info: Option<SideInfoArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for scene files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Task loss minimized in expectation.
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
    /// Hypothesis pools drawn per example (K).
    #[arg(long)]
    k: Option<usize>,
    /// Hypotheses per pool (M).
    #[arg(long)]
    m: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Expected-loss iterations.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Weight initialization scheme.
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// Directory of correspondence files to train on; synthetic scenes are
    /// generated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic training scenes to generate.
    #[arg(long)]
    scenes: Option<usize>,
    /// Observations per synthetic scene.
    #[arg(long)]
    n: Option<usize>,
    /// Outlier (or clutter) fraction of synthetic scenes.
    #[arg(long)]
    outliers: Option<f64>,
    /// Observation noise of synthetic scenes.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Inlier threshold (tau).
    #[arg(long)]
    tau: Option<f64>,
    /// Hidden width of the guidance network.
    #[arg(long)]
    hidden: Option<usize>,
    /// Residual blocks of the guidance network.
    #[arg(long)]
    blocks: Option<usize>,
    /// Iterations of the KL phase when --init kl.
    #[arg(long)]
    kl_iters: Option<usize>,
    /// Write a model checkpoint every this many iterations.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long, value_enum)]
    side_info: Option<SideInfoArg>,
}

#[derive(Args)]
struct EvalArgs {
    /// Correspondence file to evaluate.
    #[arg(long)]
    input: PathBuf,
    /// Hypothesis budget (pool size).
    #[arg(long)]
    m: Option<usize>,
    /// Inlier threshold (tau).
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sampling method.
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Guidance model file, required for --method net.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    /// Output JSON file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated methods: uniform, ratio, net:PATH.
    #[arg(long)]
    methods: Option<String>,
    /// Comma-separated hypothesis budgets.
    #[arg(long)]
    budgets: Option<String>,
    /// Comma-separated outlier rates.
    #[arg(long)]
    rates: Option<String>,
    /// Scenes per (rate, method, budget) cell group; seeds run 0..trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Correspondences per scene.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    /// Inlier threshold (tau).
    #[arg(long)]
    tau: Option<f64>,
    /// Concurrent worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    side_info: Option<SideInfoArg>,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ObjectiveArg {
    Pose,
    Inliers,
    Fscore,
    #[value(name = "mean-epi")]
    MeanEpi,
    Line,
}

impl ObjectiveArg {
    fn to_objective(self) -> Objective {
        match self {
            ObjectiveArg::Pose => Objective::PoseAngular,
            ObjectiveArg::Inliers => Objective::InlierCount,
            ObjectiveArg::Fscore => Objective::FScore,
            ObjectiveArg::MeanEpi => Objective::MeanEpipolar,
            ObjectiveArg::Line => Objective::LineDistance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitArg {
    Kl,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SideInfoArg {
    None,
    Informative,
    Uninformative,
}

impl SideInfoArg {
    fn to_side_info(self) -> SideInfo {
        match self {
            SideInfoArg::None => SideInfo::None,
            SideInfoArg::Informative => SideInfo::Informative { separation: 0.2 },
            SideInfoArg::Uninformative => SideInfo::Uninformative,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Uniform,
    Ratio,
    Net,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Essential,
    Fundamental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolverArg {
    #[value(name = "8pt")]
    EightPoint,
    #[value(name = "7pt")]
    SevenPoint,
}

/// Tag string for echo lines; `to_possible_value` is the single source of the
/// user-facing spelling of every enum flag.
fn enum_name<T: ValueEnum>(value: T) -> String {
    value.to_possible_value().expect("no skipped variants").get_name().to_string()
}

fn enum_from_str<T: ValueEnum>(s: &str, what: &str) -> Result<T, RunError> {
    T::from_str(s, true).map_err(|_| RunError::Usage(format!("invalid {what} `{s}` in config file")))
}

// ---------------------------------------------------------------------------
// Config file

#[derive(Deserialize, Default)]
#[serde(default)]
struct FileConfig {
    seed: Option<u64>,
    synth: SynthSection,
    train: TrainSection,
    eval: EvalSection,
    bench: BenchSection,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct SynthSection {
    count: Option<usize>,
    n: Option<usize>,
    outliers: Option<f64>,
    noise: Option<f64>,
    side_info: Option<String>,
    seed: Option<u64>,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct TrainSection {
    objective: Option<String>,
    k: Option<usize>,
    m: Option<usize>,
    lr: Option<f64>,
    iters: Option<usize>,
    seed: Option<u64>,
    init: Option<String>,
    batch: Option<usize>,
    tau: Option<f64>,
    hidden: Option<usize>,
    blocks: Option<usize>,
    kl_iters: Option<usize>,
    scenes: Option<usize>,
    n: Option<usize>,
    outliers: Option<f64>,
    noise: Option<f64>,
    side_info: Option<String>,
    checkpoint_every: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct EvalSection {
    m: Option<usize>,
    tau: Option<f64>,
    seed: Option<u64>,
    method: Option<String>,
    kind: Option<String>,
    solver: Option<String>,
    model: Option<String>,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct BenchSection {
    methods: Option<String>,
    budgets: Option<String>,
    rates: Option<String>,
    trials: Option<usize>,
    n: Option<usize>,
    noise: Option<f64>,
    tau: Option<f64>,
    jobs: Option<usize>,
    seed: Option<u64>,
    side_info: Option<String>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig, RunError> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = fs::read_to_string(path)
        .map_err(|e| RunError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| RunError::Usage(format!("malformed config file {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Plumbing

enum RunError {
    Usage(String),
    Runtime(String),
}

impl RunError {
    fn runtime(e: impl std::fmt::Display) -> Self {
        RunError::Runtime(e.to_string())
    }
}

/// CLI flag beats config file; the environment seed only replaces the
/// built-in default.
fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn pick_seed(flag: Option<u64>, section: Option<u64>, top: Option<u64>, env: Option<u64>) -> u64 {
    flag.or(section).or(top).or(env).unwrap_or(0)
}

fn parse_env_seed(env_seed: Option<&str>) -> Result<Option<u64>, RunError> {
    match env_seed {
        None => Ok(None),
        Some(s) => s
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| RunError::Usage(format!("NGRANSAC_SEED must be an unsigned integer, got `{s}`"))),
    }
}

fn parse_usize_list(s: &str, what: &str) -> Result<Vec<usize>, RunError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| RunError::Usage(format!("invalid {what} entry `{t}`")))
        })
        .collect()
}

fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>, RunError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| RunError::Usage(format!("invalid {what} entry `{t}`")))
        })
        .collect()
}

/// `#`-prefixed echo of the resolved configuration, one `key = value` pair
/// per line, written at the top of every text output.
fn config_comments(pairs: &[(&str, String)]) -> Vec<String> {
    pairs.iter().map(|(k, v)| format!("{k} = {v}")).collect()
}

/// Shortest decimal form of a value quantized to 9 significant digits.
fn fmt9(x: f64) -> String {
    format!("{}", quantize9(x))
}

/// Entry point used by `main`: reads `NGRANSAC_SEED` from the environment.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let env = std::env::var("NGRANSAC_SEED").ok();
    run_with_env(argv, env.as_deref())
}

/// Testable entry point with an explicit environment-seed override.
pub fn run_with_env<I, T>(argv: I, env_seed: Option<&str>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = (|| {
        let env = parse_env_seed(env_seed)?;
        let file = load_file_config(cli.config.as_deref())?;
        match cli.command {
            Command::Synth(args) => cmd_synth(args, &file, env),
            Command::Train(args) => cmd_train(args, &file, env),
            Command::Eval(args) => cmd_eval(args, &file, env),
            Command::Bench(args) => cmd_bench(args, &file, env),
            Command::Gradcheck => cmd_gradcheck(),
        }
    })();
    match result {
        Ok(()) => 0,
        Err(RunError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(RunError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

// ---------------------------------------------------------------------------
// synth

fn cmd_synth(args: SynthArgs, file: &FileConfig, env: Option<u64>) -> Result<(), RunError> {
    let s = &file.synth;
    let side_file = s.side_info.as_deref().map(|v| enum_from_str(v, "side-info")).transpose()?;
    let count = pick(args.count, s.count, 10);
    let n = pick(args.n, s.n, 500);
    let outliers = pick(args.outliers, s.outliers, 0.6);
    let noise = pick(args.noise, s.noise, 1e-3);
    let side = pick(args.side_info, side_file, SideInfoArg::Informative);
    let seed = pick_seed(args.seed, s.seed, file.seed, env);

    if count == 0 {
        return Err(RunError::Usage("--count must be at least 1".into()));
    }
    if n < 16 {
        return Err(RunError::Usage("--n must be at least 16".into()));
    }
    if !(0.0..=1.0).contains(&outliers) {
        return Err(RunError::Usage("--outliers must lie in [0, 1]".into()));
    }

    let echo = config_comments(&[
        ("command", "synth".into()),
        ("count", count.to_string()),
        ("n", n.to_string()),
        ("outliers", fmt9(outliers)),
        ("noise", fmt9(noise)),
        ("side_info", enum_name(side)),
        ("seed", seed.to_string()),
    ]);

    fs::create_dir_all(&args.out).map_err(RunError::runtime)?;
    for i in 0..count {
        let mut config =
            EpipolarSceneConfig::new(n, outliers, noise, mix_seed(&[seed, i as u64]));
        config.side_info = side.to_side_info();
        let scene = gen_epipolar_scene(&config);
        let corr_file = CorrespondenceFile {
            correspondences: scene.correspondences.clone(),
            scale: 1.0,
            identity_intrinsics: true,
            gt_model: Some(scene.gt_essential),
        };
        let text = correspondences_to_string(&corr_file).map_err(RunError::runtime)?;
        // Config echo goes right after the version line so readers (which
        // pass unknown comments through) keep a self-describing header block.
        let (version, rest) = text.split_once('\n').expect("header present");
        let mut out = String::new();
        writeln!(out, "{version}").unwrap();
        for line in &echo {
            writeln!(out, "# {line}").unwrap();
        }
        out.push_str(rest);
        let path = args.out.join(format!("scene_{i:04}.txt"));
        fs::write(&path, out).map_err(RunError::runtime)?;
    }
    println!("wrote {count} scenes to {}", args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train

fn cmd_train(args: TrainArgs, file: &FileConfig, env: Option<u64>) -> Result<(), RunError> {
    let t = &file.train;
    let objective_file =
        t.objective.as_deref().map(|v| enum_from_str(v, "objective")).transpose()?;
    let init_file = t.init.as_deref().map(|v| enum_from_str(v, "init")).transpose()?;
    let side_file = t.side_info.as_deref().map(|v| enum_from_str(v, "side-info")).transpose()?;

    let objective = pick(args.objective, objective_file, ObjectiveArg::Pose);
    let k = pick(args.k, t.k, 4);
    let m = pick(args.m, t.m, 16);
    let lr = pick(args.lr, t.lr, 1e-3);
    let iters = pick(args.iters, t.iters, 500);
    let init = pick(args.init, init_file, InitArg::None);
    let batch = pick(args.batch, t.batch, 16);
    let hidden = pick(args.hidden, t.hidden, 16);
    let blocks = pick(args.blocks, t.blocks, 2);
    let kl_iters = pick(args.kl_iters, t.kl_iters, 100);
    let scenes = pick(args.scenes, t.scenes, 64);
    let seed = pick_seed(args.seed, t.seed, file.seed, env);
    let side = pick(args.side_info, side_file, SideInfoArg::Informative);
    let is_line = objective == ObjectiveArg::Line;
    let n = pick(args.n, t.n, if is_line { 64 } else { 100 });
    let outliers = pick(args.outliers, t.outliers, if is_line { 0.3 } else { 0.6 });
    let noise = pick(args.noise, t.noise, if is_line { 0.01 } else { 1e-3 });
    let checkpoint_every = args.checkpoint_every.or(t.checkpoint_every);

    if k == 0 || m == 0 || iters == 0 || batch == 0 || scenes == 0 {
        return Err(RunError::Usage("--k, --m, --iters, --batch and --scenes must be positive".into()));
    }
    if checkpoint_every == Some(0) {
        return Err(RunError::Usage("--checkpoint-every must be positive".into()));
    }

    let mut config = TrainConfig::new(objective.to_objective());
    config.k = k;
    config.m = m;
    config.learning_rate = lr;
    config.iterations = iters;
    config.batch_size = batch;
    config.seed = seed;
    config.kl_iterations = if init == InitArg::Kl { kl_iters } else { 0 };
    let tau = pick(args.tau, t.tau, config.inlier_threshold);
    config.inlier_threshold = tau;

    let (dataset, mut net) = if is_line {
        let mut examples = Vec::with_capacity(scenes);
        for i in 0..scenes {
            let mut scene_config = LineSceneConfig::new(mix_seed(&[seed, 0x5ce, i as u64]));
            // The raster side must be a multiple of the patch size.
            scene_config.grid = n.max(16).div_ceil(scene_config.patch) * scene_config.patch;
            scene_config.point_noise = noise;
            scene_config.clutter_fraction = outliers;
            let scene = gen_line_scene(&scene_config);
            examples.push(TrainExample::Line(LineExample {
                features: scene.features,
                anchors: scene.anchors,
                gt_line: Some(scene.gt_line),
            }));
        }
        let spec =
            GuidanceNetSpec::new(LINE_FEATURES_PER_PATCH, hidden, blocks, HeadKind::PointsAndWeights);
        (examples, GuidanceNet::init(spec, mix_seed(&[seed, 0x1e7])))
    } else if let Some(dir) = &args.data {
        let examples = load_training_dir(dir, objective)?;
        let TrainExample::Epipolar(first) = &examples[0] else { unreachable!() };
        let input_dim = if first.correspondences[0].ratio.is_some() { 5 } else { 4 };
        let spec = GuidanceNetSpec::new(input_dim, hidden, blocks, HeadKind::WeightsOnly);
        (examples, GuidanceNet::init(spec, mix_seed(&[seed, 0x1e7])))
    } else {
        if n < 16 {
            return Err(RunError::Usage("--n must be at least 16".into()));
        }
        let mut examples = Vec::with_capacity(scenes);
        for i in 0..scenes {
            let mut scene_config =
                EpipolarSceneConfig::new(n, outliers, noise, mix_seed(&[seed, 0x5ce, i as u64]));
            scene_config.side_info = side.to_side_info();
            let scene = gen_epipolar_scene(&scene_config);
            examples.push(TrainExample::from_epipolar_scene(&scene, ModelKind::Essential));
        }
        let input_dim = if side == SideInfoArg::None { 4 } else { 5 };
        let spec = GuidanceNetSpec::new(input_dim, hidden, blocks, HeadKind::WeightsOnly);
        (examples, GuidanceNet::init(spec, mix_seed(&[seed, 0x1e7])))
    };

    let echo = config_comments(&[
        ("command", "train".into()),
        ("objective", enum_name(objective)),
        ("k", k.to_string()),
        ("m", m.to_string()),
        ("lr", fmt9(lr)),
        ("iters", iters.to_string()),
        ("batch", batch.to_string()),
        ("init", enum_name(init)),
        ("kl_iters", if init == InitArg::Kl { kl_iters.to_string() } else { "0".into() }),
        ("tau", fmt9(tau)),
        ("hidden", hidden.to_string()),
        ("blocks", blocks.to_string()),
        ("scenes", dataset.len().to_string()),
        ("seed", seed.to_string()),
    ]);

    let mut curve = String::new();
    for line in &echo {
        writeln!(curve, "# {line}").unwrap();
    }
    writeln!(curve, "iteration,loss,kl,wall_seconds").unwrap();

    let mut total_skipped = 0usize;
    let record_row = |record: &crate::training::IterationRecord, base: usize, curve: &mut String| {
        let loss = record.mean_loss.map(fmt9).unwrap_or_default();
        let kl = record.kl.map(fmt9).unwrap_or_default();
        writeln!(
            curve,
            "{},{},{},{}",
            record.iteration + base,
            loss,
            kl,
            fmt9(record.wall_seconds)
        )
        .unwrap();
    };

    match checkpoint_every {
        None => {
            let outcome =
                train_loop(&dataset, &mut net, &config, |_| {}).map_err(RunError::runtime)?;
            for record in &outcome.records {
                record_row(record, 0, &mut curve);
            }
            total_skipped = outcome.skipped_examples;
        }
        Some(interval) => {
            // Checkpointing splits training into segments; each segment owns
            // a derived seed, so a rerun reproduces the same curve.
            let mut done = 0usize;
            let mut segment = 0usize;
            while done < iters {
                let span = interval.min(iters - done);
                let mut seg_config = config.clone();
                seg_config.kl_iterations = if segment == 0 { config.kl_iterations } else { 0 };
                seg_config.iterations = span;
                seg_config.seed = mix_seed(&[seed, 0xc4ec, segment as u64]);
                let outcome = train_loop(&dataset, &mut net, &seg_config, |_| {})
                    .map_err(RunError::runtime)?;
                for record in &outcome.records {
                    record_row(record, done, &mut curve);
                }
                total_skipped += outcome.skipped_examples;
                done += span;
                segment += 1;
                let checkpoint = args.out.with_extension(format!("iter{done:05}"));
                fs::write(&checkpoint, net.serialize()).map_err(RunError::runtime)?;
            }
        }
    }

    fs::write(&args.out, net.serialize()).map_err(RunError::runtime)?;
    let curve_path = args.out.with_extension("losses.csv");
    fs::write(&curve_path, curve).map_err(RunError::runtime)?;
    println!(
        "trained {} iterations ({} skipped examples); model {}, loss curve {}",
        iters,
        total_skipped,
        args.out.display(),
        curve_path.display()
    );
    Ok(())
}

/// Loads every `.txt` correspondence file in `dir`, in name order.
fn load_training_dir(dir: &Path, objective: ObjectiveArg) -> Result<Vec<TrainExample>, RunError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(RunError::runtime)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(RunError::Runtime(format!("no .txt scenes in {}", dir.display())));
    }
    let mut examples = Vec::with_capacity(paths.len());
    for path in &paths {
        let file = load_correspondences(path).map_err(RunError::runtime)?;
        let kind = file.gt_model.as_ref().map_or(ModelKind::Essential, |m| m.kind);
        // A ground-truth pose is recoverable when the file carries both the
        // essential matrix and inlier labels.
        let gt_pose = match (&file.gt_model, objective) {
            (Some(model), ObjectiveArg::Pose) if model.kind == ModelKind::Essential => {
                let supports: Vec<_> = file
                    .correspondences
                    .iter()
                    .filter(|c| c.gt_inlier == Some(true))
                    .copied()
                    .collect();
                decompose_essential(model, &supports).ok()
            }
            _ => None,
        };
        if objective == ObjectiveArg::Pose && gt_pose.is_none() {
            return Err(RunError::Runtime(format!(
                "{} lacks the ground truth needed for the pose objective",
                path.display()
            )));
        }
        examples.push(TrainExample::Epipolar(EpipolarExample {
            correspondences: file.correspondences,
            kind,
            gt_pose,
            gt_model: file.gt_model,
        }));
    }
    Ok(examples)
}

// ---------------------------------------------------------------------------
// eval

#[derive(Serialize)]
struct EvalReport {
    config: EvalEcho,
    model: ModelJson,
    score: f64,
    inlier_count: usize,
    inlier_indices: Vec<usize>,
    pools_drawn: usize,
    hypotheses_drawn: usize,
    refit_applied: bool,
    warnings: Vec<String>,
    /// Present for essential models with a decodable pose.
    pose: Option<PoseJson>,
    /// Present when the input file carries a ground-truth model.
    ground_truth: Option<GtJson>,
}

#[derive(Serialize)]
struct EvalEcho {
    input: String,
    m: usize,
    tau: f64,
    seed: u64,
    method: String,
    kind: String,
    solver: String,
    model: Option<String>,
}

#[derive(Serialize)]
struct ModelJson {
    kind: String,
    /// Row-major 3x3 entries.
    matrix: [[f64; 3]; 3],
}

#[derive(Serialize)]
struct PoseJson {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

#[derive(Serialize)]
struct GtJson {
    f_score: f64,
    mean_epipolar: Option<f64>,
    median_epipolar: Option<f64>,
}

fn matrix_rows(m: &nalgebra::Matrix3<f64>) -> [[f64; 3]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

fn pose_json(pose: &Pose) -> PoseJson {
    PoseJson {
        rotation: matrix_rows(&pose.rotation),
        translation: [pose.translation[0], pose.translation[1], pose.translation[2]],
    }
}

fn cmd_eval(args: EvalArgs, file: &FileConfig, env: Option<u64>) -> Result<(), RunError> {
    let e = &file.eval;
    let method_file = e.method.as_deref().map(|v| enum_from_str(v, "method")).transpose()?;
    let kind_file = e.kind.as_deref().map(|v| enum_from_str(v, "kind")).transpose()?;
    let solver_file = e.solver.as_deref().map(|v| enum_from_str(v, "solver")).transpose()?;

    let m = pick(args.m, e.m, 64);
    let tau = pick(args.tau, e.tau, 3e-3);
    let seed = pick_seed(args.seed, e.seed, file.seed, env);
    let method = pick(args.method, method_file, MethodArg::Uniform);
    let kind = pick(args.kind, kind_file, KindArg::Essential);
    let solver = pick(args.solver, solver_file, SolverArg::EightPoint);
    let model_path = args.model.or_else(|| e.model.as_ref().map(PathBuf::from));

    if m == 0 {
        return Err(RunError::Usage("--m must be positive".into()));
    }
    if tau <= 0.0 {
        return Err(RunError::Usage("--tau must be positive".into()));
    }
    let kind = match kind {
        KindArg::Essential => ModelKind::Essential,
        KindArg::Fundamental => ModelKind::Fundamental,
    };
    let solver = match solver {
        SolverArg::EightPoint => EpipolarSolver::EightPoint,
        SolverArg::SevenPoint => EpipolarSolver::SevenPoint,
    };
    if solver == EpipolarSolver::SevenPoint && kind == ModelKind::Essential {
        return Err(RunError::Usage("the 7pt solver fits fundamental matrices only".into()));
    }
    if method == MethodArg::Net && model_path.is_none() {
        return Err(RunError::Usage("--method net requires --model".into()));
    }

    let scene = load_correspondences(&args.input).map_err(RunError::runtime)?;
    let corrs = scene.correspondences.clone();
    if corrs.len() < 16 {
        return Err(RunError::Runtime("scene has fewer than 16 correspondences".into()));
    }

    let dist = match method {
        MethodArg::Uniform => GuidanceDistribution::uniform(corrs.len()),
        MethodArg::Ratio => {
            crate::bench::method_weights(&crate::bench::MethodGuidance::RatioHeuristic, &corrs)
                .map_err(RunError::Runtime)?
        }
        MethodArg::Net => {
            let path = model_path.as_ref().expect("checked above");
            let bytes = fs::read(path).map_err(RunError::runtime)?;
            let net = GuidanceNet::deserialize(&bytes).map_err(RunError::runtime)?;
            let features =
                epipolar_features(&corrs, net.spec.input_dim).map_err(RunError::runtime)?;
            net.forward(&features, None, 1.0).map_err(RunError::runtime)?.weights
        }
    };

    let task = EpipolarFittingTask::new(corrs.clone(), kind, solver);
    let config = EstimateConfig::new(m, tau, seed);
    let report = ng_ransac(&task, &dist, &config).map_err(RunError::runtime)?;

    let pose = if kind == ModelKind::Essential {
        let supports: Vec<_> =
            report.inlier_indices.iter().map(|&i| corrs[i]).collect();
        decompose_essential(&report.model, &supports).ok()
    } else {
        None
    };

    let ground_truth = scene.gt_model.as_ref().map(|gt| {
        let stats = epipolar_stats(&report.model, gt, &corrs, tau).ok();
        GtJson {
            f_score: fscore_inliers(&report.model, gt, &corrs, tau),
            mean_epipolar: stats.as_ref().map(|s| s.mean),
            median_epipolar: stats.as_ref().map(|s| s.median),
        }
    });

    let json = EvalReport {
        config: EvalEcho {
            input: args.input.display().to_string(),
            m,
            tau,
            seed,
            method: enum_name(method),
            kind: enum_name(match kind {
                ModelKind::Essential => KindArg::Essential,
                ModelKind::Fundamental => KindArg::Fundamental,
            }),
            solver: enum_name(match solver {
                EpipolarSolver::EightPoint => SolverArg::EightPoint,
                EpipolarSolver::SevenPoint => SolverArg::SevenPoint,
            }),
            model: model_path.map(|p| p.display().to_string()),
        },
        model: ModelJson {
            kind: match report.model.kind {
                ModelKind::Essential => "essential".into(),
                ModelKind::Fundamental => "fundamental".into(),
            },
            matrix: matrix_rows(&report.model.m),
        },
        score: report.score,
        inlier_count: report.inlier_indices.len(),
        inlier_indices: report.inlier_indices.clone(),
        pools_drawn: report.pools_drawn,
        hypotheses_drawn: report.hypotheses_drawn,
        refit_applied: report.refit_applied,
        warnings: report.warnings.clone(),
        pose: pose.as_ref().map(pose_json),
        ground_truth,
    };
    let mut text = serde_json::to_string_pretty(&json).map_err(RunError::runtime)?;
    text.push('\n');
    match &args.out {
        Some(path) => fs::write(path, text).map_err(RunError::runtime)?,
        None => print!("{text}"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// bench

fn parse_methods(spec: &str) -> Result<Vec<MethodSpec>, RunError> {
    let mut methods = Vec::new();
    for token in spec.split(',') {
        let token = token.trim();
        if token == "uniform" {
            methods.push(MethodSpec::uniform());
        } else if token == "ratio" {
            methods.push(MethodSpec::ratio_heuristic());
        } else if let Some(path) = token.strip_prefix("net:") {
            let bytes = fs::read(path)
                .map_err(|e| RunError::Runtime(format!("cannot read model {path}: {e}")))?;
            let net = GuidanceNet::deserialize(&bytes).map_err(RunError::runtime)?;
            let id = Path::new(path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "net".into());
            methods.push(MethodSpec::net(id, Arc::new(net)));
        } else {
            return Err(RunError::Usage(format!(
                "unknown method `{token}` (expected uniform, ratio, or net:PATH)"
            )));
        }
    }
    if methods.is_empty() {
        return Err(RunError::Usage("--methods must name at least one method".into()));
    }
    Ok(methods)
}

fn cmd_bench(args: BenchArgs, file: &FileConfig, env: Option<u64>) -> Result<(), RunError> {
    let b = &file.bench;
    let side_file = b.side_info.as_deref().map(|v| enum_from_str(v, "side-info")).transpose()?;

    let methods_spec =
        pick(args.methods, b.methods.clone(), "uniform,ratio".to_string());
    let budgets_spec = pick(args.budgets, b.budgets.clone(), "10,100".to_string());
    let rates_spec = pick(args.rates, b.rates.clone(), "0.6".to_string());
    let trials = pick(args.trials, b.trials, 20);
    let n = pick(args.n, b.n, 500);
    let noise = pick(args.noise, b.noise, 1e-3);
    let tau = pick(args.tau, b.tau, 3e-3);
    let jobs = pick(args.jobs, b.jobs, 1);
    let seed = pick_seed(args.seed, b.seed, file.seed, env);
    let side = pick(args.side_info, side_file, SideInfoArg::Informative);

    let methods = parse_methods(&methods_spec)?;
    let budgets = parse_usize_list(&budgets_spec, "budget")?;
    let rates = parse_f64_list(&rates_spec, "rate")?;
    if trials == 0 {
        return Err(RunError::Usage("--trials must be at least 1".into()));
    }
    if n < 16 {
        return Err(RunError::Usage("--n must be at least 16".into()));
    }
    if budgets.iter().any(|&m| m == 0) {
        return Err(RunError::Usage("budgets must be positive".into()));
    }
    if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(RunError::Usage("rates must lie in [0, 1]".into()));
    }
    if jobs == 0 {
        return Err(RunError::Usage("--jobs must be at least 1".into()));
    }

    let mut config = BenchConfig::new(methods, budgets, rates, (0..trials as u64).collect());
    config.scene_n = n;
    config.noise_std = noise;
    config.side_info = side.to_side_info();
    config.inlier_threshold = tau;
    config.jobs = jobs;
    config.base_seed = seed;

    let echo = config_comments(&[
        ("command", "bench".into()),
        ("methods", methods_spec.clone()),
        ("budgets", budgets_spec.clone()),
        ("rates", rates_spec.clone()),
        ("trials", trials.to_string()),
        ("n", n.to_string()),
        ("noise", fmt9(noise)),
        ("tau", fmt9(tau)),
        ("side_info", enum_name(side)),
        ("seed", seed.to_string()),
    ]);

    let out = fs::File::create(&args.out).map_err(RunError::runtime)?;
    let mut writer = std::io::BufWriter::new(out);
    let mut io_error: Option<std::io::Error> = None;
    {
        let mut write_line = |line: &str| {
            if io_error.is_none() {
                io_error = writeln!(writer, "{line}").err();
            }
        };
        for line in &echo {
            write_line(&format!("# {line}"));
        }
        write_line(MetricRecord::CSV_HEADER);
        // Rows stream out as cells complete, in deterministic grid order.
        let rows = run_benchmark(&config, |outcome| write_line(&outcome.csv_line()));
        let cells = config.methods.len()
            * config.budgets.len()
            * config.outlier_rates.len()
            * config.seeds.len();
        println!(
            "benchmarked {} cells: {} rows, {} failures; wrote {}",
            cells,
            rows.len(),
            cells - rows.len(),
            args.out.display()
        );
    }
    if let Some(e) = io_error {
        return Err(RunError::runtime(e));
    }
    writer.flush().map_err(RunError::runtime)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// gradcheck

fn cmd_gradcheck() -> Result<(), RunError> {
    let reports = gradcheck::run_all();
    let mut failures = 0usize;
    for report in &reports {
        println!("{report}");
        if !report.passed {
            failures += 1;
        }
    }
    if failures == 0 {
        println!("all {} checks passed", reports.len());
        Ok(())
    } else {
        Err(RunError::Runtime(format!("{failures} of {} checks failed", reports.len())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::read_csv;
    use tempfile::tempdir;

    fn run_cli(args: &[&str]) -> i32 {
        run_with_env(args, None)
    }

    #[test]
    fn help_and_usage_exit_codes() {
        assert_eq!(run_cli(&["ngransac", "bench", "--help"]), 0);
        assert_eq!(run_cli(&["ngransac", "--help"]), 0);
        assert_eq!(run_cli(&["ngransac", "bench", "--no-such-flag", "--out", "x.csv"]), 1);
        assert_eq!(run_cli(&["ngransac", "no-such-command"]), 1);
        // Missing required --out.
        assert_eq!(run_cli(&["ngransac", "train", "--iters", "1"]), 1);
        assert_eq!(run_cli(&["ngransac"]), 1);
    }

    #[test]
    fn synth_writes_parseable_scenes_and_eval_reports_json() {
        let dir = tempdir().unwrap();
        let scenes = dir.path().join("scenes");
        let code = run_cli(&[
            "ngransac", "synth", "--count", "2", "--n", "40", "--outliers", "0.4",
            "--seed", "9", "--out", scenes.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let scene_path = scenes.join("scene_0000.txt");
        let text = fs::read_to_string(&scene_path).unwrap();
        assert!(text.contains("# command = synth"));
        assert!(text.contains("# seed = 9"));
        let parsed = load_correspondences(&scene_path).unwrap();
        assert_eq!(parsed.correspondences.len(), 40);
        assert!(parsed.gt_model.is_some());

        let report_path = dir.path().join("report.json");
        let code = run_cli(&[
            "ngransac", "eval", "--input", scene_path.to_str().unwrap(),
            "--m", "32", "--seed", "4", "--out", report_path.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
        assert_eq!(report["config"]["m"], 32);
        assert_eq!(report["config"]["method"], "uniform");
        assert!(report["inlier_count"].as_u64().unwrap() > 0);
        assert!(report["ground_truth"]["f_score"].as_f64().unwrap() > 0.0);
        assert_eq!(report["model"]["kind"], "essential");

        // Same invocation reproduces the same bytes.
        let report_path_2 = dir.path().join("report2.json");
        let code = run_cli(&[
            "ngransac", "eval", "--input", scene_path.to_str().unwrap(),
            "--m", "32", "--seed", "4", "--out", report_path_2.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let a = fs::read_to_string(&report_path).unwrap();
        let mut b = fs::read_to_string(&report_path_2).unwrap();
        b = b.replace("report2.json", "report.json");
        assert_eq!(a, b);
    }

    #[test]
    fn eval_usage_errors() {
        assert_eq!(
            run_cli(&["ngransac", "eval", "--input", "x.txt", "--method", "net"]),
            1,
            "net method without --model is a usage error"
        );
        assert_eq!(
            run_cli(&[
                "ngransac", "eval", "--input", "x.txt", "--solver", "7pt", "--kind", "essential"
            ]),
            1
        );
        // Missing input file is a runtime failure, not a usage error.
        assert_eq!(run_cli(&["ngransac", "eval", "--input", "definitely-missing.txt"]), 2);
    }

    fn strip_wall(text: &str) -> String {
        text.lines()
            .map(|line| {
                if line.starts_with('#') || line.is_empty() {
                    line.to_string()
                } else {
                    line.rsplit_once(',').map(|(p, _)| p.to_string()).unwrap_or_else(|| line.into())
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    #[test]
    fn bench_is_deterministic_apart_from_wall_clock() {
        let dir = tempdir().unwrap();
        let out1 = dir.path().join("a.csv");
        let out2 = dir.path().join("b.csv");
        let base = [
            "ngransac", "bench", "--methods", "uniform,ratio", "--budgets", "4,8",
            "--rates", "0.4", "--trials", "2", "--n", "40", "--seed", "3",
        ];
        let mut args1: Vec<&str> = base.to_vec();
        args1.extend(["--out", out1.to_str().unwrap()]);
        let mut args2: Vec<&str> = base.to_vec();
        args2.extend(["--jobs", "3", "--out", out2.to_str().unwrap()]);
        assert_eq!(run_cli(&args1), 0);
        assert_eq!(run_cli(&args2), 0);
        let a = fs::read_to_string(&out1).unwrap();
        let b = fs::read_to_string(&out2).unwrap();
        assert_eq!(strip_wall(&a), strip_wall(&b));
        // Weak budgets may fail on some cells; every cell still leaves
        // exactly one line — a row or an error comment.
        let rows = read_csv(&a).unwrap();
        let errors = a.lines().filter(|l| l.starts_with("# error")).count();
        assert_eq!(rows.len() + errors, 2 * 2 * 1 * 2);
        assert!(rows.len() >= 6);
        assert!(a.contains("# command = bench"));
        assert!(a.contains("# seed = 3"));
    }

    #[test]
    fn train_writes_model_and_loss_curve() {
        let dir = tempdir().unwrap();
        let model = dir.path().join("model.net");
        let code = run_cli(&[
            "ngransac", "train", "--objective", "inliers", "--iters", "2", "--scenes", "4",
            "--n", "30", "--batch", "2", "--k", "2", "--m", "4", "--seed", "11",
            "--out", model.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let net = GuidanceNet::deserialize(&fs::read(&model).unwrap()).unwrap();
        assert_eq!(net.spec.input_dim, 5);
        let curve = fs::read_to_string(model.with_extension("losses.csv")).unwrap();
        assert!(curve.contains("# objective = inliers"));
        assert!(curve.contains("iteration,loss,kl,wall_seconds"));
        // Two expected-loss iterations, no KL phase.
        assert_eq!(curve.lines().filter(|l| !l.starts_with('#')).count(), 1 + 2);
    }

    #[test]
    fn train_checkpoints_at_the_requested_interval() {
        let dir = tempdir().unwrap();
        let model = dir.path().join("model.net");
        let code = run_cli(&[
            "ngransac", "train", "--objective", "line", "--iters", "4", "--scenes", "2",
            "--batch", "2", "--k", "2", "--m", "4", "--checkpoint-every", "2",
            "--out", model.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        assert!(model.with_extension("iter00002").exists());
        assert!(model.with_extension("iter00004").exists());
        let net = GuidanceNet::deserialize(&fs::read(&model).unwrap()).unwrap();
        assert_eq!(net.spec.heads, HeadKind::PointsAndWeights);
    }

    #[test]
    fn config_file_fills_in_and_flags_override() {
        let dir = tempdir().unwrap();
        let config = dir.path().join("cfg.toml");
        fs::write(&config, "seed = 21\n[synth]\ncount = 1\nn = 25\n").unwrap();
        let scenes = dir.path().join("scenes");

        // File values apply when flags are absent...
        let code = run_cli(&[
            "ngransac", "synth", "--config", config.to_str().unwrap(),
            "--out", scenes.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let text = fs::read_to_string(scenes.join("scene_0000.txt")).unwrap();
        assert!(text.contains("# n = 25"));
        assert!(text.contains("# seed = 21"));

        // ...and explicit flags win over the file.
        let code = run_cli(&[
            "ngransac", "synth", "--config", config.to_str().unwrap(), "--n", "30",
            "--seed", "5", "--out", scenes.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let text = fs::read_to_string(scenes.join("scene_0000.txt")).unwrap();
        assert!(text.contains("# n = 30"));
        assert!(text.contains("# seed = 5"));

        let code = run_with_env(
            ["ngransac", "synth", "--count", "1", "--n", "40", "--out", scenes.to_str().unwrap()],
            Some("77"),
        );
        assert_eq!(code, 0);
        let text = fs::read_to_string(scenes.join("scene_0000.txt")).unwrap();
        assert!(text.contains("# seed = 77"), "environment seed fills the default");

        // The config file outranks the environment seed.
        let code = run_with_env(
            [
                "ngransac", "synth", "--config", config.to_str().unwrap(),
                "--out", scenes.to_str().unwrap(),
            ],
            Some("77"),
        );
        assert_eq!(code, 0);
        let text = fs::read_to_string(scenes.join("scene_0000.txt")).unwrap();
        assert!(text.contains("# seed = 21"));

        assert_eq!(run_with_env(["ngransac", "gradcheck"], Some("not-a-number")), 1);
        let missing = dir.path().join("missing.toml");
        let args = ["ngransac", "synth", "--config", missing.to_str().unwrap(), "--out", "x"];
        assert_eq!(run_cli(&args), 1);
    }
}
