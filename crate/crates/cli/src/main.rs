//! `editp23` — command-line pipeline over multi-view grids: render a
//! synthetic dataset with ground-truth edits, train the toy conditional flow
//! network, propagate a single-view edit across a source grid, and benchmark
//! edit methods against ground truth.
//!
//! Exit codes: 0 success; 2 usage error (bad flags, bad config file);
//! 3 data error (missing or corrupt files); 4 numerical failure (non-finite
//! velocity or loss).

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use editp23_core::editor::{derive_cond_seed, editp23, EditConfig, EditRequest};
use editp23_core::metrics::{evaluate_benchmark, write_report_csv, write_report_json, Method};
use editp23_core::mvgrid::{read_grid_png, read_view_png, write_grid_png};
use editp23_core::synth::{load_dataset, make_dataset};
use editp23_core::trainer::{train, write_loss_csv, Optimizer, TrainConfig};
use editp23_core::velocity::{TinyArch, TinyFlowNet};
use editp23_core::Error as CoreError;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "editp23",
    version,
    about = "Propagate single-view edits across multi-view grids",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset: scenes, edits, grids, and a manifest.
    Render(RenderArgs),
    /// Train the toy conditional flow network on a rendered dataset.
    Train(TrainArgs),
    /// Propagate a single-view edit across a source grid.
    Edit(EditArgs),
    /// Score edit methods against ground-truth edited grids.
    Eval(EvalArgs),
}

#[derive(Args)]
struct RenderArgs {
    /// Number of scenes to generate (at least 1).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    scenes: u64,
    /// Dataset seed; every scene, edit, and image derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tile size in pixels; grids are 2x3 tiles of this size.
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(8..=256))]
    tile: u64,
    /// Output directory for images and manifest.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (from `render`); falls back to the config file's
    /// `data_dir`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Path of the final checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// JSON run config supplying defaults (see README for the schema).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Examples per optimizer step.
    #[arg(long)]
    batch: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// `adam` or `sgd`.
    #[arg(long)]
    optimizer: Option<String>,
    /// Batch-sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Parameter-initialization seed.
    #[arg(long)]
    init_seed: Option<u64>,
    /// Hidden channels per conv layer.
    #[arg(long)]
    hidden: Option<usize>,
    /// Total conv layers (including the output head).
    #[arg(long)]
    layers: Option<usize>,
    /// Conv kernel size (odd).
    #[arg(long)]
    kernel: Option<usize>,
    /// Sinusoidal time-embedding channels (even).
    #[arg(long)]
    time_dim: Option<usize>,
    /// Also write a checkpoint every N epochs next to `--out` (0 = never).
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Loss-curve CSV path (default: `--out` with extension `loss.csv`).
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args)]
struct EditArgs {
    /// Trained checkpoint; falls back to the config file's `model_path`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Source grid PNG.
    #[arg(long)]
    src_grid: PathBuf,
    /// The view the source grid was generated from.
    #[arg(long)]
    src_view: PathBuf,
    /// The user-edited version of that view.
    #[arg(long)]
    tar_view: PathBuf,
    /// Output PNG for the edited grid.
    #[arg(long)]
    out: PathBuf,
    /// Trace JSON path (default: `--out` with extension `trace.json`).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    edit_opts: EditOpts,
}

/// Edit-configuration flags shared by `edit` and `eval`. Resolution order:
/// `--preset` flag, else the config file's `edit` section, else its
/// `preset_name`, else built-in defaults; individual flags override fields of
/// that base. `--seed` re-derives the condition seed unless `--seed-cond`
/// pins it.
#[derive(Args)]
struct EditOpts {
    /// JSON run config supplying defaults (see README for the schema).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named strength preset: mild-texture, appearance, local-geometry, or
    /// large-geometry.
    #[arg(long)]
    preset: Option<String>,
    /// Total schedule steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Active (highest-noise) steps to integrate.
    #[arg(long)]
    nmax: Option<usize>,
    /// Guidance weight of the target branch.
    #[arg(long)]
    cfg_tar: Option<f64>,
    /// Guidance weight of the source branch.
    #[arg(long)]
    cfg_src: Option<f64>,
    /// Grid-noise seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Condition-noise seed (default: derived from `--seed`).
    #[arg(long)]
    seed_cond: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained checkpoint; falls back to the config file's `model_path`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset directory; falls back to the config file's `data_dir`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// `all` or a comma-separated subset of
    /// editp23,sdedit,flowedit_coupling,naive.
    #[arg(long, default_value = "all")]
    methods: String,
    /// Report JSON path; a CSV with the same stem is written alongside.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    edit_opts: EditOpts,
}

/// Optional JSON document supplying defaults for the pipeline commands.
/// Sections use the exact serialized forms of the underlying config types,
/// so unknown or misspelled keys anywhere are rejected.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunConfigFile {
    /// Complete edit configuration (mutually exclusive with `preset_name`).
    edit: Option<EditConfig>,
    /// Complete training configuration.
    train: Option<TrainConfig>,
    /// Network architecture for `train`.
    arch: Option<TinyArch>,
    /// Dataset directory for `train`/`eval` when `--data` is not given.
    data_dir: Option<PathBuf>,
    /// Checkpoint path for `edit`/`eval` when `--model` is not given.
    model_path: Option<PathBuf>,
    /// Named preset for `edit`/`eval` when `--preset` is not given.
    preset_name: Option<String>,
}

enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match &e {
            CoreError::InvalidConfig(_)
            | CoreError::UnknownPreset(_)
            | CoreError::OutOfRange { .. } => CliError::Usage(e.to_string()),
            CoreError::NonFiniteVelocity { .. }
            | CoreError::NonFiniteLoss { .. }
            | CoreError::DegeneratePosterior
            | CoreError::NoUnconditionalSupport { .. } => CliError::Numeric(e.to_string()),
            CoreError::ShapeMismatch { .. }
            | CoreError::EmptyDataset
            | CoreError::UndefinedMetric(_)
            | CoreError::EditNotApplicable(_)
            | CoreError::Io { .. }
            | CoreError::Image { .. }
            | CoreError::Format(_) => CliError::Data(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version arrive here too and must exit 0.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Render(args) => run_render(args),
        Command::Train(args) => run_train(args),
        Command::Edit(args) => run_edit(args),
        Command::Eval(args) => run_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfigFile, CliError> {
    let Some(path) = path else {
        return Ok(RunConfigFile::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let file: RunConfigFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))?;
    if file.edit.is_some() && file.preset_name.is_some() {
        return Err(CliError::Usage(format!(
            "config {} supplies both an `edit` section and `preset_name`; keep one",
            path.display()
        )));
    }
    Ok(file)
}

fn require_path(
    flag: Option<PathBuf>,
    fallback: Option<PathBuf>,
    what: &str,
    flag_name: &str,
) -> Result<PathBuf, CliError> {
    let path = flag
        .or(fallback)
        .ok_or_else(|| CliError::Usage(format!("{what}: pass {flag_name} or set it in --config")))?;
    if !path.exists() {
        return Err(CliError::Data(format!(
            "{what} not found: {}",
            path.display()
        )));
    }
    Ok(path)
}

fn ensure_parent_dir(path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| {
            CliError::Data(format!("cannot create {}: {e}", parent.display()))
        })?;
    }
    Ok(())
}

fn resolve_edit_config(opts: &EditOpts) -> Result<EditConfig, CliError> {
    let file = load_run_config(opts.config.as_deref())?;
    let mut cfg = if let Some(name) = &opts.preset {
        EditConfig::preset(name, 0)?
    } else if let Some(edit) = file.edit {
        edit
    } else if let Some(name) = &file.preset_name {
        EditConfig::preset(name, 0)?
    } else {
        EditConfig::default()
    };
    if let Some(steps) = opts.steps {
        cfg.total_steps = steps;
    }
    if let Some(nmax) = opts.nmax {
        cfg.active_steps = nmax;
    }
    if let Some(w) = opts.cfg_tar {
        cfg.guidance.cfg_tar = w;
    }
    if let Some(w) = opts.cfg_src {
        cfg.guidance.cfg_src = w;
    }
    if let Some(seed) = opts.seed {
        cfg.seed_grid = seed;
        cfg.seed_cond = opts.seed_cond.unwrap_or_else(|| derive_cond_seed(seed));
    } else if let Some(seed_cond) = opts.seed_cond {
        cfg.seed_cond = seed_cond;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_render(args: RenderArgs) -> Result<(), CliError> {
    let manifest = make_dataset(
        args.scenes as usize,
        args.seed,
        args.tile as usize,
        &args.out,
    )?;
    println!(
        "wrote {} scenes (tile {}) to {} (manifest: {})",
        manifest.records.len(),
        manifest.tile_size,
        args.out.display(),
        args.out.join("manifest.json").display()
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<(), CliError> {
    let file = load_run_config(args.config.as_deref())?;
    let data_dir = require_path(args.data, file.data_dir, "dataset directory", "--data")?;
    ensure_parent_dir(&args.out)?;

    let mut cfg = file.train.unwrap_or_default();
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.learning_rate = v;
    }
    if let Some(name) = &args.optimizer {
        cfg.optimizer = match name.as_str() {
            "adam" => Optimizer::Adam,
            "sgd" => Optimizer::Sgd,
            other => {
                return Err(CliError::Usage(format!(
                    "unknown optimizer {other:?} (expected adam or sgd)"
                )))
            }
        };
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.checkpoint_every {
        cfg.checkpoint_every = v;
    }

    let mut arch = file.arch.unwrap_or_default();
    if let Some(v) = args.hidden {
        arch.hidden = v;
    }
    if let Some(v) = args.layers {
        arch.layers = v;
    }
    if let Some(v) = args.kernel {
        arch.kernel = v;
    }
    if let Some(v) = args.time_dim {
        arch.time_dim = v;
    }

    let dataset = load_dataset(&data_dir)?;
    let model = TinyFlowNet::new(arch, args.init_seed.unwrap_or(0))?;
    let checkpoint_dir = if cfg.checkpoint_every > 0 {
        Some(
            args.out
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .unwrap_or(Path::new("."))
                .to_path_buf(),
        )
    } else {
        None
    };
    let outcome = train(model, &dataset, &cfg, checkpoint_dir.as_deref())?;
    outcome
        .model
        .save_checkpoint(&args.out, dataset.tile_size() as u32)?;
    let curve_path = args
        .curve
        .clone()
        .unwrap_or_else(|| args.out.with_extension("loss.csv"));
    ensure_parent_dir(&curve_path)?;
    write_loss_csv(&outcome.curve, &curve_path)?;

    println!(
        "trained {} epochs on {} ({} parameters)",
        cfg.epochs,
        data_dir.display(),
        outcome.model.param_count()
    );
    match (outcome.curve.first(), outcome.curve.last()) {
        (Some(first), Some(last)) => println!(
            "mean loss: {:?} (epoch 0) -> {:?} (epoch {})",
            first.mean_loss, last.mean_loss, last.epoch
        ),
        _ => println!("no epochs run; checkpoint holds the initialization"),
    }
    println!("checkpoint -> {}", args.out.display());
    println!("loss curve -> {}", curve_path.display());
    Ok(())
}

fn run_edit(args: EditArgs) -> Result<(), CliError> {
    let file = load_run_config(args.edit_opts.config.as_deref())?;
    let model_path = require_path(args.model, file.model_path, "model checkpoint", "--model")?;
    for (path, what) in [
        (&args.src_grid, "source grid"),
        (&args.src_view, "source view"),
        (&args.tar_view, "edited view"),
    ] {
        if !path.exists() {
            return Err(CliError::Data(format!(
                "{what} not found: {}",
                path.display()
            )));
        }
    }
    let cfg = resolve_edit_config(&args.edit_opts)?;
    ensure_parent_dir(&args.out)?;

    let (model, _header) = TinyFlowNet::load_checkpoint(&model_path)?;
    let x_src = read_grid_png(&args.src_grid)?;
    let cond_src = read_view_png(&args.src_view)?;
    let cond_tar = read_view_png(&args.tar_view)?;
    let req = EditRequest {
        x_src: &x_src,
        cond_src: &cond_src,
        cond_tar: &cond_tar,
    };
    let (edited, trace) = editp23(&model, &req, &cfg)?;
    write_grid_png(&edited, &args.out)?;

    let trace_path = args
        .trace
        .clone()
        .unwrap_or_else(|| args.out.with_extension("trace.json"));
    ensure_parent_dir(&trace_path)?;
    let trace_json = serde_json::to_string_pretty(&trace)
        .map_err(|e| CliError::Data(format!("cannot serialize trace: {e}")))?;
    std::fs::write(&trace_path, trace_json)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", trace_path.display())))?;

    println!(
        "edited grid ({} active of {} steps, cfg_tar {}, cfg_src {}) -> {}",
        cfg.active_steps,
        cfg.total_steps,
        cfg.guidance.cfg_tar,
        cfg.guidance.cfg_src,
        args.out.display()
    );
    println!("trace -> {}", trace_path.display());
    Ok(())
}

fn parse_methods(selector: &str) -> Result<Vec<Method>, CliError> {
    if selector.trim() == "all" {
        return Ok(Method::ALL.to_vec());
    }
    selector
        .split(',')
        .map(|name| Method::parse(name.trim()).map_err(CliError::from))
        .collect()
}

fn run_eval(args: EvalArgs) -> Result<(), CliError> {
    let file = load_run_config(args.edit_opts.config.as_deref())?;
    let model_path = require_path(args.model, file.model_path, "model checkpoint", "--model")?;
    let data_dir = require_path(args.data, file.data_dir, "dataset directory", "--data")?;
    let methods = parse_methods(&args.methods)?;
    let cfg = resolve_edit_config(&args.edit_opts)?;
    ensure_parent_dir(&args.out)?;

    let (model, _header) = TinyFlowNet::load_checkpoint(&model_path)?;
    let dataset = load_dataset(&data_dir)?;
    let report = evaluate_benchmark(&model, &dataset, &methods, &cfg)?;
    write_report_json(&report, &args.out)?;
    let csv_path = args.out.with_extension("csv");
    write_report_csv(&report, &csv_path)?;

    println!(
        "scored {} methods on {} scenes",
        report.methods.len(),
        dataset.records.len()
    );
    for agg in &report.aggregates {
        println!(
            "  {:<18} mse {:.6}  psnr {:.2} dB  preservation {:.6}  cosine {:.4}",
            agg.method.name(),
            agg.mean_mse_vs_gt,
            agg.mean_psnr_vs_gt,
            agg.mean_preservation,
            agg.mean_direction_cosine
        );
    }
    for rate in &report.win_rates {
        println!(
            "  {} beats {} on {} in {}/{} scenes",
            rate.winner.name(),
            rate.against.name(),
            rate.metric,
            rate.wins,
            rate.total
        );
    }
    println!("report -> {}", args.out.display());
    println!("rows   -> {}", csv_path.display());
    Ok(())
}
