mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode as ProcessExit;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dcmnet::inspect::{layer_table, render_table};
use dcmnet::model::{load_checkpoint, save_checkpoint, Dcmnet, Modality, ModelConfig};
use dcmnet::preprocessing::{
    generate_synthetic, load_dataset, nearest_prototype_oa, save_dataset, PrototypeFeatures,
    SceneCube, Split,
};
use dcmnet::routing::{AttentionKind, Block, RouterMode};
use dcmnet::training::{
    ablation_csv, evaluate, run_ablation, train, write_ablation_csv, write_json, OptimizerKind,
    PreparedData, RunReport, Suite, TraceReport, TrainConfig,
};
use serde::Serialize;

use config::{
    check_input, check_output, classify, fail, output_path, preset_config, require_path,
    scene_dims, CliResult, ExitCode, Preset, RunConfig, EXIT_CHECKPOINT, EXIT_CONFIG, EXIT_DATA,
};

/// Dynamic cross-modal routing network for joint hyperspectral and LiDAR
/// patch classification.
///
/// Exit codes: 0 ok, 2 configuration error, 3 data error, 4 checkpoint error.
#[derive(Parser)]
#[command(name = "dcmnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scene as a DYNF dataset.
    Synth(SynthArgs),
    /// Train a network and write a DYNM checkpoint plus its loss history.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split, optionally exporting routes.
    Eval(EvalArgs),
    /// Train and score every variant of an ablation suite.
    Ablate(AblateArgs),
    /// Print the layer table with parameter and FLOP totals.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// JSON run configuration; flags override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Output DYNF path [default: `dataset` from the config file].
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Generator seed [default: 7].
    #[arg(long)]
    seed: Option<u64>,
    /// Number of classes [default: 6].
    #[arg(long)]
    classes: Option<usize>,
    /// Scene height in pixels [default: 64].
    #[arg(long)]
    height: Option<usize>,
    /// Scene width in pixels [default: 64].
    #[arg(long)]
    width: Option<usize>,
    /// Spectral bands [default: 20].
    #[arg(long)]
    bands: Option<usize>,
    /// LiDAR channels [default: 1].
    #[arg(long)]
    lidar_channels: Option<usize>,
    /// Class tile edge in pixels [default: 16].
    #[arg(long)]
    tile: Option<usize>,
    /// Training pixels per class [default: 100].
    #[arg(long)]
    train_per_class: Option<usize>,
    /// Spectral noise std [default: 0.03].
    #[arg(long)]
    spectral_noise: Option<f64>,
    /// Elevation noise std in meters [default: 0.8].
    #[arg(long)]
    height_noise: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttentionArg {
    Bilinear,
    #[value(name = "self")]
    SelfAttention,
}

#[derive(Clone, Copy, ValueEnum)]
enum RouterArg {
    Soft,
    #[value(alias = "uniform_average")]
    UniformAverage,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Args)]
struct ModelArgs {
    /// Architecture preset [default: `model` from the config file, else desk].
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Routing layers, 1 to 3 [default: preset].
    #[arg(long)]
    layers: Option<usize>,
    /// Enabled blocks, e.g. BSAB,ICB [default: all three].
    #[arg(long, value_parser = parse_blocks)]
    blocks: Option<Vec<Block>>,
    /// Attention values [default: bilinear].
    #[arg(long, value_enum)]
    attention: Option<AttentionArg>,
    /// Router mode [default: soft].
    #[arg(long, value_enum)]
    router: Option<RouterArg>,
}

#[derive(Args)]
struct TrainFlags {
    /// Training epochs [default: 200].
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size [default: 64].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Learning rate [default: 0.001].
    #[arg(long)]
    lr: Option<f64>,
    /// Optimizer [default: adam].
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    /// Seed for initialization, shuffling and augmentation [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Input streams: HL, H or L [default: HL].
    #[arg(long)]
    modality: Option<Modality>,
    /// Disable flip and noise augmentation.
    #[arg(long)]
    no_augment: bool,
    /// Augmentation noise std [default: 0.05].
    #[arg(long)]
    noise_sigma: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// DYNF dataset [default: `dataset` from the config file].
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// Output DYNM checkpoint [default: `checkpoint` from the config file].
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Loss history JSON [default: <report_dir>/loss_history.json, else next to the checkpoint].
    #[arg(long, value_name = "FILE")]
    history: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// DYNF dataset [default: `dataset` from the config file].
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// DYNM checkpoint [default: `checkpoint` from the config file].
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Split to score.
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Report JSON [default: <report_dir>/eval_<split>.json, else next to the checkpoint].
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    /// Also write per-sample gate traces and active edges to this JSON file.
    #[arg(long, value_name = "FILE")]
    routes: Option<PathBuf>,
    /// Gate weight at or above which an edge counts as active.
    #[arg(long, default_value_t = 0.3)]
    route_threshold: f64,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// DYNF dataset [default: `dataset` from the config file].
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// Suite: blocks, router, attention, layers or modality.
    #[arg(long)]
    suite: Suite,
    /// Summary CSV [default: <report_dir>/ablation_<suite>.csv, else ./ablation_<suite>.csv].
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
    /// Full JSON rows [default: the CSV path with a .json extension].
    #[arg(long, value_name = "FILE")]
    json: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Inspect this checkpoint instead of a configuration.
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Spectral bands for the desk preset.
    #[arg(long, default_value_t = 20)]
    bands: usize,
    /// LiDAR channels for the desk preset.
    #[arg(long, default_value_t = 1)]
    lidar_channels: usize,
    /// Classes for the desk preset.
    #[arg(long, default_value_t = 6)]
    classes: usize,
    /// Print the rows as JSON.
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    model: ModelArgs,
}

fn parse_blocks(s: &str) -> Result<Vec<Block>, String> {
    s.split([',', '+'])
        .map(|b| match b.trim().to_ascii_uppercase().as_str() {
            "BSAB" => Ok(Block::Bsab),
            "BCAB" => Ok(Block::Bcab),
            "ICB" => Ok(Block::Icb),
            other => Err(format!(
                "unknown block {other:?}; expected BSAB, BCAB or ICB"
            )),
        })
        .collect()
}

impl ModelArgs {
    fn apply(&self, cfg: &mut ModelConfig) {
        let r = &mut cfg.routing;
        if let Some(l) = self.layers {
            r.layers = l;
        }
        if let Some(b) = &self.blocks {
            r.enabled_blocks = b.clone();
        }
        if let Some(a) = self.attention {
            r.attention = match a {
                AttentionArg::Bilinear => AttentionKind::Bilinear,
                AttentionArg::SelfAttention => AttentionKind::SelfAttention,
            };
        }
        if let Some(m) = self.router {
            r.router = match m {
                RouterArg::Soft => RouterMode::Soft,
                RouterArg::UniformAverage => RouterMode::UniformAverage,
                RouterArg::Off => RouterMode::Off,
            };
        }
    }

    fn resolve(&self, run: &RunConfig, dims: (usize, usize, usize)) -> CliResult<ModelConfig> {
        let mut cfg = run.model_for(self.preset, dims);
        self.apply(&mut cfg);
        cfg.validate().map_err(classify)?;
        Ok(cfg)
    }
}

impl TrainFlags {
    fn resolve(&self, file: &TrainConfig) -> CliResult<TrainConfig> {
        let mut cfg = file.clone();
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.optimizer {
            cfg.optimizer = match v {
                OptimizerArg::Adam => OptimizerKind::Adam,
                OptimizerArg::Sgd => OptimizerKind::Sgd,
            };
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.modality {
            cfg.modality = v;
        }
        if self.no_augment {
            cfg.augment = false;
        }
        if let Some(v) = self.noise_sigma {
            cfg.noise_sigma = v;
        }
        cfg.validate().map_err(classify)?;
        Ok(cfg)
    }
}

fn load_scene(path: &Path) -> CliResult<SceneCube> {
    load_dataset(path).code(EXIT_DATA)
}

fn prepare(cube: &SceneCube, model: &ModelConfig, mismatch: u8) -> CliResult<PreparedData> {
    PreparedData::new(cube, model).map_err(|e| match e {
        dcmnet::Error::Data(_) => config::Failure {
            code: mismatch,
            error: e.into(),
        },
        other => classify(other),
    })
}

fn synth(args: SynthArgs) -> CliResult<()> {
    let run = RunConfig::load(args.config.config.as_deref())?;
    let out = require_path(args.out, &run.dataset, "out")?;
    check_output(&out)?;
    let mut spec = run.synthetic.clone();
    let set = |dst: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut spec.classes, args.classes);
    set(&mut spec.height, args.height);
    set(&mut spec.width, args.width);
    set(&mut spec.bands, args.bands);
    set(&mut spec.lidar_channels, args.lidar_channels);
    set(&mut spec.tile, args.tile);
    set(&mut spec.train_per_class, args.train_per_class);
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    if let Some(v) = args.spectral_noise {
        spec.spectral_noise = v;
    }
    if let Some(v) = args.height_noise {
        spec.height_noise = v;
    }
    let cube = generate_synthetic(&spec).code(EXIT_CONFIG)?;
    save_dataset(&cube, &out).code(EXIT_DATA)?;

    println!(
        "wrote {} ({}x{} pixels, {} bands, {} LiDAR channels)",
        out.display(),
        cube.height(),
        cube.width(),
        cube.bands(),
        cube.lidar_channels()
    );
    println!("{:>5} {:>8} {:>8}", "class", "train", "test");
    let counts = cube.class_counts();
    for (i, (tr, te)) in counts.iter().enumerate() {
        println!("{:>5} {tr:>8} {te:>8}", i + 1);
    }
    let (tr, te): (usize, usize) = counts.iter().fold((0, 0), |a, c| (a.0 + c.0, a.1 + c.1));
    println!("{:>5} {tr:>8} {te:>8}", "total");
    let oa = |f| nearest_prototype_oa(&cube, f).code(EXIT_DATA);
    let (spectral, elevation, joint) = (
        oa(PrototypeFeatures::Spectral)?,
        oa(PrototypeFeatures::Elevation)?,
        oa(PrototypeFeatures::Joint)?,
    );
    let verdict = if spectral < joint {
        "ok"
    } else {
        "WARNING: spectra alone suffice"
    };
    println!(
        "prototype test OA: HSI {spectral:.4}, LiDAR {elevation:.4}, joint {joint:.4} ({verdict})"
    );
    Ok(())
}

#[derive(Serialize)]
struct LossLog<'a> {
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    steps: u64,
    loss_history: &'a [f64],
}

fn train_cmd(args: TrainArgs) -> CliResult<()> {
    let run = RunConfig::load(args.config.config.as_deref())?;
    let tc = args.train.resolve(&run.train)?;
    let data_path = require_path(args.data, &run.dataset, "data")?;
    let ckpt = require_path(args.checkpoint, &run.checkpoint, "checkpoint")?;
    let history = output_path(
        args.history,
        &run.report_dir,
        "loss_history.json",
        ckpt.with_extension("loss.json"),
    );
    check_input(&data_path, EXIT_DATA, "dataset")?;
    check_output(&ckpt)?;
    check_output(&history)?;

    let cube = load_scene(&data_path)?;
    let model_cfg = args.model.resolve(&run, scene_dims(&cube))?;
    let data = prepare(&cube, &model_cfg, EXIT_DATA)?;
    let mut model = Dcmnet::new(model_cfg, tc.seed).map_err(classify)?;
    let outcome = train(&mut model, &data.train, &tc).map_err(classify)?;
    save_checkpoint(&model, &ckpt).code(EXIT_CHECKPOINT)?;
    write_json(
        &LossLog {
            model: &model.config,
            train: &tc,
            steps: outcome.steps,
            loss_history: &outcome.loss_history,
        },
        &history,
    )
    .map_err(classify)?;

    let cost = model.cost();
    println!(
        "trained {} epochs ({} steps) on {} samples, {} parameters",
        tc.epochs,
        outcome.steps,
        data.train.len(),
        cost.params
    );
    if let (Some(first), Some(last)) = (outcome.loss_history.first(), outcome.loss_history.last()) {
        println!("loss {first:.4} -> {last:.4}");
    }
    println!("checkpoint {}", ckpt.display());
    println!("history {}", history.display());
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> CliResult<()> {
    let run = RunConfig::load(args.config.config.as_deref())?;
    if !(0.0..=1.0).contains(&args.route_threshold) {
        return fail(
            EXIT_CONFIG,
            format!("route threshold {} outside [0, 1]", args.route_threshold),
        );
    }
    let data_path = require_path(args.data, &run.dataset, "data")?;
    let ckpt = require_path(args.checkpoint, &run.checkpoint, "checkpoint")?;
    let split = match args.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let name = if split == Split::Train {
        "train"
    } else {
        "test"
    };
    let report_path = output_path(
        args.report,
        &run.report_dir,
        &format!("eval_{name}.json"),
        ckpt.with_extension(format!("eval_{name}.json")),
    );
    check_input(&data_path, EXIT_DATA, "dataset")?;
    check_input(&ckpt, EXIT_CHECKPOINT, "checkpoint")?;
    check_output(&report_path)?;
    if let Some(r) = &args.routes {
        check_output(r)?;
    }

    let cube = load_scene(&data_path)?;
    let model = load_checkpoint(&ckpt).code(EXIT_CHECKPOINT)?;
    let data = prepare(&cube, &model.config, EXIT_CHECKPOINT)?;
    let samples = data.split(split);
    if samples.is_empty() {
        return fail(EXIT_DATA, format!("the {name} split is empty"));
    }
    let evaluation = evaluate(&model, samples).map_err(classify)?;
    let report = RunReport {
        split: name.into(),
        config: model.config.clone(),
        cost: model.cost(),
        evaluation: evaluation.report.clone(),
    };
    write_json(&report, &report_path).map_err(classify)?;

    let m = &evaluation.report.metrics;
    println!("{name} split, {} samples", evaluation.report.samples);
    println!("OA {:.4}  AA {:.4}  Kappa {:.4}", m.oa, m.aa, m.kappa);
    for (i, acc) in m.per_class_accuracy.iter().enumerate() {
        match acc {
            Some(a) => println!("  class {:>3}: {a:.4}", i + 1),
            None => println!("  class {:>3}: no samples", i + 1),
        }
    }
    println!("report {}", report_path.display());
    if let Some(routes) = &args.routes {
        let trace = TraceReport::from_evaluation(&evaluation, args.route_threshold);
        write_json(&trace, routes).map_err(classify)?;
        println!(
            "routes {} (threshold {})",
            routes.display(),
            args.route_threshold
        );
    }
    Ok(())
}

fn ablate_cmd(args: AblateArgs) -> CliResult<()> {
    let run = RunConfig::load(args.config.config.as_deref())?;
    let tc = args.train.resolve(&run.train)?;
    let data_path = require_path(args.data, &run.dataset, "data")?;
    let suite_name = serde_json::to_value(args.suite)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default();
    let csv = output_path(
        args.csv,
        &run.report_dir,
        &format!("ablation_{suite_name}.csv"),
        PathBuf::from(format!("ablation_{suite_name}.csv")),
    );
    let json = args.json.unwrap_or_else(|| csv.with_extension("json"));
    check_input(&data_path, EXIT_DATA, "dataset")?;
    check_output(&csv)?;
    check_output(&json)?;

    let cube = load_scene(&data_path)?;
    let base = args.model.resolve(&run, scene_dims(&cube))?;
    let data = prepare(&cube, &base, EXIT_DATA)?;
    let rows = run_ablation(args.suite, &base, &tc, &data).map_err(classify)?;
    write_ablation_csv(&rows, &csv).map_err(classify)?;
    write_json(&rows, &json).map_err(classify)?;
    let table = ablation_csv(&rows).map_err(classify)?;
    print!("{}", String::from_utf8_lossy(&table));
    println!("csv {}", csv.display());
    println!("json {}", json.display());
    Ok(())
}

fn inspect_cmd(args: InspectArgs) -> CliResult<()> {
    let model = match &args.checkpoint {
        Some(path) => {
            check_input(path, EXIT_CHECKPOINT, "checkpoint")?;
            load_checkpoint(path).code(EXIT_CHECKPOINT)?
        }
        None => {
            let run = RunConfig::load(args.config.config.as_deref())?;
            let dims = (args.bands, args.lidar_channels, args.classes);
            let mut cfg = match (args.model.preset, &run.model, run.preset) {
                (Some(p), _, _) => preset_config(p, dims),
                (None, Some(m), _) => m.clone(),
                (None, None, p) => preset_config(p.unwrap_or(Preset::Houston2013), dims),
            };
            args.model.apply(&mut cfg);
            Dcmnet::new(cfg, 0).map_err(classify)?
        }
    };
    let rows = layer_table(&model);
    if args.json {
        let text = serde_json::to_string_pretty(&rows).code(1)?;
        println!("{text}");
    } else {
        print!("{}", render_table(&rows, &model.cost()));
    }
    Ok(())
}

fn main() -> ProcessExit {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
        Command::Inspect(a) => inspect_cmd(a),
    };
    match result {
        Ok(()) => ProcessExit::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ProcessExit::from(f.code)
        }
    }
}
