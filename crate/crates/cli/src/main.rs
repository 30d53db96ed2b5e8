//! Single command-line entry point wiring environment generation, dataset
//! collection, training, planning, benchmarking and figure emission.
//!
//! Exit codes: 0 on success, 1 on runtime/I-O failures (the message names
//! the offending path), 2 on usage errors (the message names the offending
//! option). All randomness flows from explicit `--seed` values, so every
//! subcommand is reproducible.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use flowplan::bench::{
    emit_conditioning_gallery, emit_plots, run_experiment, ExperimentSpec, SamplerKind,
};
use flowplan::dataset::{build_dataset, Dataset, DatasetSpec};
use flowplan::env::{generate_environment, Config, Environment, RobotKind};
use flowplan::flow::FlowModel;
use flowplan::planner::{plan, validate_trajectory, PlannerKind, PlannerRun, Sampler};
use flowplan::trainer::{train, TrainConfig};

#[derive(Parser)]
#[command(
    name = "flowplan",
    about = "Motion planning with a learned flow-based sampling distribution",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum RobotArg {
    Point2,
    Arm4,
}

impl From<RobotArg> for RobotKind {
    fn from(r: RobotArg) -> Self {
        match r {
            RobotArg::Point2 => RobotKind::PointRobot2,
            RobotArg::Arm4 => RobotKind::PlanarArm4,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PlannerArg {
    RrtStar,
    BiRrtStar,
    InformedRrtStar,
}

impl From<PlannerArg> for PlannerKind {
    fn from(p: PlannerArg) -> Self {
        match p {
            PlannerArg::RrtStar => PlannerKind::RrtStar,
            PlannerArg::BiRrtStar => PlannerKind::BiRrtStar,
            PlannerArg::InformedRrtStar => PlannerKind::InformedRrtStar,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerArg {
    Uniform,
    Flow,
}

#[derive(Subcommand)]
enum Command {
    /// Procedurally generate one environment file.
    GenEnv(GenEnvArgs),
    /// Collect an expert demonstration dataset.
    GenData(GenDataArgs),
    /// Train a flow checkpoint on a dataset.
    Train(TrainArgs),
    /// Solve one planning problem and record metrics.
    Plan(PlanArgs),
    /// Run the planner x sampler benchmark grid.
    Bench(BenchArgs),
    /// Render conditioning-gallery figures for a trained model.
    Gallery(GalleryArgs),
    /// Print a checkpoint summary (read-only).
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenEnvArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "point2")]
    robot: RobotArg,
    #[arg(long, default_value_t = 0.3)]
    obs_ratio: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "point2")]
    robot: RobotArg,
    /// Environment count (desk scale).
    #[arg(long, default_value_t = 20)]
    envs: usize,
    /// Endpoint pairs per environment (desk scale).
    #[arg(long, default_value_t = 30)]
    pairs: usize,
    /// Expert planner node budget per demonstration.
    #[arg(long, default_value_t = 10_000)]
    budget: usize,
    /// Worker threads (defaults to the available cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Protocol scale: 100 environments x 200 pairs.
    #[arg(long, default_value_t = false)]
    paper_scale: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset file produced by gen-data.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training epochs (desk scale; overrides --paper-scale).
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    step_size: f64,
    /// Weight-prior variance.
    #[arg(long, default_value_t = 1.0)]
    sigma_sq: f64,
    /// Protocol scale: 1500 epochs.
    #[arg(long, default_value_t = false)]
    paper_scale: bool,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-epoch report CSV.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    /// Environment file.
    #[arg(long)]
    env: PathBuf,
    /// Start configuration, comma-separated coordinates in [0,1].
    #[arg(long)]
    init: String,
    /// Target configuration, comma-separated coordinates in [0,1].
    #[arg(long)]
    target: String,
    #[arg(long, value_enum, default_value = "rrt-star")]
    planner: PlannerArg,
    #[arg(long, value_enum, default_value = "uniform")]
    sampler: SamplerArg,
    /// Flow checkpoint (required for --sampler flow).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Uniform share of the flow mixture.
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 10_000)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Metrics CSV output path.
    #[arg(long, default_value = "metrics.csv")]
    metrics: PathBuf,
    /// Optional trajectory JSON output path.
    #[arg(long)]
    trajectory: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value = "point2")]
    robot: RobotArg,
    /// Flow checkpoint (required when flow sampling is benchmarked).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    envs: usize,
    #[arg(long, default_value_t = 3)]
    pairs: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 10_000)]
    budget: usize,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = vec![PlannerArg::RrtStar])]
    planners: Vec<PlannerArg>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = vec![SamplerArg::Uniform, SamplerArg::Flow])]
    samplers: Vec<SamplerArg>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GalleryArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Environment file; omit to generate one from --env-seed.
    #[arg(long)]
    env: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    env_seed: u64,
    #[arg(long, default_value_t = 0.3)]
    obs_ratio: f64,
    #[arg(long)]
    init: String,
    #[arg(long)]
    target: String,
    /// Samples per panel.
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    /// Checkpoint file to summarize.
    checkpoint: PathBuf,
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<flowplan::Error> for CliError {
    fn from(e: flowplan::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult = Result<(), CliError>;

fn parse_config(option: &str, raw: &str, dim: usize) -> Result<Config, CliError> {
    let coords: Result<Vec<f64>, _> = raw.split(',').map(|p| p.trim().parse::<f64>()).collect();
    let coords = coords.map_err(|e| {
        CliError::Usage(format!("--{option}: cannot parse '{raw}' as coordinates: {e}"))
    })?;
    if coords.len() != dim {
        return Err(CliError::Usage(format!(
            "--{option}: expected {dim} coordinates, got {}",
            coords.len()
        )));
    }
    if coords.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(CliError::Usage(format!(
            "--{option}: coordinates must lie in [0,1]"
        )));
    }
    Ok(Config::new(coords))
}

fn load_model(path: &Path) -> Result<FlowModel, CliError> {
    Ok(FlowModel::load(path)?)
}

fn gen_env(args: GenEnvArgs) -> CliResult {
    let env = generate_environment(args.seed, args.robot.into(), args.obs_ratio)?;
    env.save(&args.out)?;
    println!(
        "wrote {} ({} obstacles, ratio {:.3})",
        args.out.display(),
        env.obstacles.len(),
        env.obs_ratio
    );
    Ok(())
}

fn gen_data(args: GenDataArgs) -> CliResult {
    if let Some(jobs) = args.jobs {
        flowplan::set_worker_threads(jobs);
    }
    let mut spec = if args.paper_scale {
        DatasetSpec::paper_scale(args.robot.into(), args.seed)
    } else {
        DatasetSpec::new(args.envs, args.pairs, args.robot.into(), args.seed)
    };
    spec.budget = args.budget;
    let dataset = build_dataset(&spec)?;
    dataset.save(&args.out)?;
    let rows = dataset.training_rows().len();
    println!(
        "wrote {} ({} environments, {} demonstrations, {} training rows)",
        args.out.display(),
        dataset.environments.len(),
        dataset.demonstrations.len(),
        rows
    );
    Ok(())
}

fn train_cmd(args: TrainArgs) -> CliResult {
    let dataset = Dataset::load(&args.data)?;
    let mut config = if args.paper_scale {
        TrainConfig::paper_scale(args.seed)
    } else {
        TrainConfig::desk(args.seed)
    };
    if let Some(epochs) = args.epochs {
        config.epochs = epochs;
    }
    config.batch_size = args.batch_size;
    config.step_size = args.step_size;
    config.weight_prior_variance = args.sigma_sq;
    let (model, report) = train(&dataset, &config)?;
    model.save(&args.out)?;
    if let Some(report_path) = &args.report {
        report.write_csv(report_path)?;
    }
    match (report.epochs.first(), report.epochs.last()) {
        (Some(first), Some(last)) => println!(
            "wrote {} (epochs {}, val NLL {:.4} -> best {:.4})",
            args.out.display(),
            config.epochs,
            first.val_nll,
            model.meta.best_val_nll.unwrap_or(last.val_nll)
        ),
        _ => println!("wrote {} (identity checkpoint, 0 epochs)", args.out.display()),
    }
    Ok(())
}

fn plan_cmd(args: PlanArgs) -> CliResult {
    let env = Environment::load(&args.env)?;
    let dim = env.robot.dim();
    let q_init = parse_config("init", &args.init, dim)?;
    let q_target = parse_config("target", &args.target, dim)?;
    let run = PlannerRun::new(
        env.clone(),
        q_init.clone(),
        q_target.clone(),
        args.budget,
        args.planner.into(),
    );

    let model;
    let mut sampler = match args.sampler {
        SamplerArg::Uniform => Sampler::uniform(dim, args.seed),
        SamplerArg::Flow => {
            let path = args.checkpoint.as_ref().ok_or_else(|| {
                CliError::Usage("--checkpoint is required with --sampler flow".into())
            })?;
            model = load_model(path)?;
            if model.dim() != dim {
                return Err(CliError::Usage(format!(
                    "--checkpoint: model dimensionality {} does not match the environment robot {}",
                    model.dim(),
                    env.robot.name()
                )));
            }
            let ctx = flowplan::flow::ConditioningContext::new(
                &flowplan::env::encode_workspace(&env),
                Some(q_init.clone()),
                Some(q_target.clone()),
            );
            // Leak-free borrow: the sampler borrows `model`, which lives in
            // this frame until the run completes.
            Sampler::mixture(&model, &ctx, args.epsilon, args.seed)
        }
    };

    let (trajectory, metrics) = plan(&run, &mut sampler);
    metrics.write_csv(&args.metrics)?;
    match &trajectory {
        Some(t) => {
            debug_assert!(validate_trajectory(t, &env, &q_init, &q_target));
            println!(
                "solved: cost {:.6}, {} waypoints, {} nodes, {} samples",
                t.cost,
                t.waypoints.len(),
                metrics.nodes_added,
                metrics.total_samples
            );
            if let Some(path) = &args.trajectory {
                let waypoints: Vec<&[f64]> =
                    t.waypoints.iter().map(|w| w.coords()).collect();
                let json = serde_json::json!({"cost": t.cost, "waypoints": waypoints});
                std::fs::write(path, serde_json::to_string_pretty(&json).unwrap())
                    .map_err(|e| CliError::Runtime(format!("i/o error on {}: {e}", path.display())))?;
            }
        }
        None => println!(
            "no solution within {} nodes ({} samples)",
            run.budget, metrics.total_samples
        ),
    }
    println!("metrics: {}", args.metrics.display());
    Ok(())
}

fn bench_cmd(args: BenchArgs) -> CliResult {
    if let Some(jobs) = args.jobs {
        flowplan::set_worker_threads(jobs);
    }
    let robot: RobotKind = args.robot.into();
    let mut spec = ExperimentSpec::desk(robot, args.seed);
    spec.n_envs = args.envs;
    spec.pairs_per_env = args.pairs;
    spec.repeats = args.repeats;
    spec.budget = args.budget;
    spec.epsilon = args.epsilon;
    spec.planners = args.planners.iter().map(|p| (*p).into()).collect();
    spec.samplers = args
        .samplers
        .iter()
        .map(|s| match s {
            SamplerArg::Uniform => SamplerKind::Uniform,
            SamplerArg::Flow => SamplerKind::Flow,
        })
        .collect();

    let model = match (&args.checkpoint, spec.samplers.contains(&SamplerKind::Flow)) {
        (Some(path), _) => Some(load_model(path)?),
        (None, true) => {
            return Err(CliError::Usage(
                "--checkpoint is required when the sampler list includes flow".into(),
            ))
        }
        (None, false) => None,
    };

    let result = run_experiment(&spec, model.as_ref())?;
    result.write_to(&args.out_dir)?;
    emit_plots(&result, &args.out_dir)?;

    for planner in &spec.planners {
        for sampler in &spec.samplers {
            let totals = result.cell_mean(*planner, *sampler, |r| {
                Some(r.metrics.total_samples as f64)
            });
            let first_cost =
                result.cell_mean(*planner, *sampler, |r| r.metrics.first_solution_cost);
            let solved = result
                .runs
                .iter()
                .filter(|r| r.planner == *planner && r.sampler == *sampler && r.solved)
                .count();
            println!(
                "{} / {}: mean total samples {:.1}, mean first-solution cost {}, solved {}/{}",
                planner.name(),
                sampler.name(),
                totals.unwrap_or(f64::NAN),
                first_cost
                    .map(|c| format!("{c:.4}"))
                    .unwrap_or_else(|| "n/a".into()),
                solved,
                result.runs.len() / (spec.planners.len() * spec.samplers.len())
            );
        }
    }
    println!("results: {}", args.out_dir.display());
    Ok(())
}

fn gallery_cmd(args: GalleryArgs) -> CliResult {
    let model = load_model(&args.checkpoint)?;
    let env = match &args.env {
        Some(path) => Environment::load(path)?,
        None => {
            let robot = match model.dim() {
                2 => RobotKind::PointRobot2,
                4 => RobotKind::PlanarArm4,
                d => {
                    return Err(CliError::Runtime(format!(
                        "checkpoint has unsupported dimensionality {d}"
                    )))
                }
            };
            generate_environment(args.env_seed, robot, args.obs_ratio)?
        }
    };
    if env.robot.dim() != model.dim() {
        return Err(CliError::Usage(
            "--env: environment robot does not match the checkpoint dimensionality".into(),
        ));
    }
    let q_init = parse_config("init", &args.init, env.robot.dim())?;
    let q_target = parse_config("target", &args.target, env.robot.dim())?;
    let (gallery, files) = emit_conditioning_gallery(
        &model,
        &env,
        &q_init,
        &q_target,
        args.n,
        args.seed,
        &args.out_dir,
    )?;
    for panel in &gallery.panels {
        let var = flowplan::bench::gallery::per_coordinate_variance(&panel.samples);
        let formatted: Vec<String> = var.iter().map(|v| format!("{v:.4}")).collect();
        println!("panel {:<12} variance [{}]", panel.label, formatted.join(", "));
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn inspect_cmd(args: InspectArgs) -> CliResult {
    let model = load_model(&args.checkpoint)?;
    let layout = model.layout();
    println!("checkpoint: {}", args.checkpoint.display());
    println!("dimensionality: {}", layout.dim);
    println!("coupling blocks: {}", layout.blocks);
    println!("conditioner hidden layers: {:?}", layout.hidden);
    println!("context length: {}", layout.ctx_len);
    println!("scale clamp: {}", layout.scale_clamp);
    println!("boundary epsilon: {}", layout.boundary_eps);
    println!("parameter count: {}", model.param_count());
    println!("identity-initialized outputs: {}", model.is_identity_init());
    println!(
        "robot: {}",
        model
            .meta
            .robot
            .map(|r| r.name().to_string())
            .unwrap_or_else(|| "unspecified".into())
    );
    println!(
        "epochs trained: {}",
        model
            .meta
            .epochs_trained
            .map(|e| e.to_string())
            .unwrap_or_else(|| "unspecified".into())
    );
    println!(
        "best validation NLL: {}",
        model
            .meta
            .best_val_nll
            .map(|v| format!("{v:.6}"))
            .unwrap_or_else(|| "unspecified".into())
    );
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult {
    match cli.command {
        Command::GenEnv(args) => gen_env(args),
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => train_cmd(args),
        Command::Plan(args) => plan_cmd(args),
        Command::Bench(args) => bench_cmd(args),
        Command::Gallery(args) => gallery_cmd(args),
        Command::Inspect(args) => inspect_cmd(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
