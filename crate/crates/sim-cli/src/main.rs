//! `sim` — dataset generation, training, evaluation, ablation, gradient
//! checking, and gate export for the gated message-passing model.
//!
//! Exit codes: 0 success, 1 gradient-check tolerance exceeded, 2 usage or
//! validation error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use sim_core::ablate::{ablation_rows, run_ablation, AblationConfig};
use sim_core::gradcheck::finite_diff_oracle;
use sim_core::graph::{Dims, FrameInstance};
use sim_core::inference::forward;
use sim_core::io::{
    load_checkpoint, load_dataset, save_checkpoint, save_dataset, write_gate_export,
    write_metrics, Checkpoint, DatasetRecord, GateExportRow, MetricsRow,
};
use sim_core::params::{init_params, WeightMode};
use sim_core::reference;
use sim_core::synth::{generate, random_instance, SynthConfig};
use sim_core::train::{
    evaluate, train_from, train_two_phase_with_eval, Phase, TrainConfig, TrainOutcome,
};

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "sim",
    about = "Gated recurrent message passing over scene-plus-persons graphs",
    version
)]
struct Cli {
    /// Cap worker threads (results are identical for any thread count)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset
    Generate(GenerateArgs),
    /// Train a model and write a checkpoint plus metrics
    Train(TrainArgs),
    /// Evaluate a checkpoint per timestep
    Eval(EvalArgs),
    /// Train and compare tied/untied x gated/ungated variants
    Ablate(AblateArgs),
    /// Compare analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
    /// Dump per-edge gate values with relevance categories
    ExportGates(ExportGatesArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Tied,
    Untied,
}

impl From<ModeArg> for WeightMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Tied => WeightMode::Tied,
            ModeArg::Untied => WeightMode::Untied,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum ScheduleArg {
    /// Single phase, all parameter groups train together
    Joint,
    /// Predictors-only (ungated) first, then gates-only on frozen predictors
    TwoPhase,
}

#[derive(Args)]
struct GenerateArgs {
    /// Output dataset path
    #[arg(long)]
    out: PathBuf,
    /// Optional second output receiving the held-out tail of the run
    #[arg(long)]
    test_out: Option<PathBuf>,
    /// Instances written to --out [default: 2000]
    #[arg(long)]
    count: Option<usize>,
    /// Instances written to --test-out [default: 500]
    #[arg(long)]
    test_count: Option<usize>,
    /// Individual action classes [default: 5]
    #[arg(long)]
    actions: Option<usize>,
    /// Scene activity classes [default: 5]
    #[arg(long)]
    scenes: Option<usize>,
    /// Minimum persons per frame [default: 4]
    #[arg(long)]
    persons_min: Option<usize>,
    /// Maximum persons per frame [default: 8]
    #[arg(long)]
    persons_max: Option<usize>,
    /// Probability a person is irrelevant to the activity [default: 0.3]
    #[arg(long)]
    distractor_rate: Option<f64>,
    /// Probability a relevant person performs the scene action [default: 0.9]
    #[arg(long)]
    correlation: Option<f64>,
    /// Unary sharpness concentration [default: 3]
    #[arg(long)]
    noise: Option<f64>,
    /// RNG seed [default: 7]
    #[arg(long)]
    seed: Option<u64>,
}

/// Overridable training hyperparameters shared by `train` and `ablate`.
#[derive(Args, Debug)]
struct TrainHyperArgs {
    /// Message-passing steps per forward pass [default: 3]
    #[arg(long)]
    steps: Option<usize>,
    /// L1 coefficient on gate values [default: 0.01]
    #[arg(long)]
    lambda: Option<f64>,
    /// Learning rate [default: 0.05]
    #[arg(long)]
    lr: Option<f64>,
    /// Momentum in [0,1) [default: 0.9]
    #[arg(long)]
    momentum: Option<f64>,
    /// Epochs per phase [default: 15]
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size [default: 32]
    #[arg(long)]
    batch: Option<usize>,
    /// RNG seed for init and shuffling [default: 7]
    #[arg(long)]
    seed: Option<u64>,
    /// JSON preset supplying defaults for any flag not given explicitly
    #[arg(long)]
    preset: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset
    #[arg(long)]
    data: PathBuf,
    /// Optional validation dataset for per-epoch metrics
    #[arg(long)]
    val: Option<PathBuf>,
    /// Where to write the trained checkpoint
    #[arg(long)]
    out_checkpoint: PathBuf,
    /// Where to write per-epoch metrics
    #[arg(long)]
    out_metrics: Option<PathBuf>,
    /// Weight sharing across steps [default: tied]
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Enable edge gating (implied by --phase two-phase)
    #[arg(long)]
    gated: bool,
    /// Training schedule [default: joint]
    #[arg(long, value_enum)]
    phase: Option<ScheduleArg>,
    #[command(flatten)]
    hyper: TrainHyperArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset to evaluate on
    #[arg(long)]
    data: PathBuf,
    /// Trained checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Steps to unroll [default: the checkpoint's step count]
    #[arg(long)]
    steps: Option<usize>,
    /// Where to write per-timestep metrics
    #[arg(long)]
    out_metrics: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Training dataset
    #[arg(long)]
    data: PathBuf,
    /// Held-out dataset for the comparison table
    #[arg(long)]
    val: PathBuf,
    /// Where to write the 4-variant metrics table
    #[arg(long)]
    out_metrics: Option<PathBuf>,
    #[command(flatten)]
    hyper: TrainHyperArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Action classes [default: 5]
    #[arg(long)]
    actions: Option<usize>,
    /// Scene classes [default: 4]
    #[arg(long)]
    scenes: Option<usize>,
    /// Comma-separated person counts [default: 1,2,4]
    #[arg(long, value_delimiter = ',')]
    persons: Option<Vec<usize>>,
    /// Comma-separated step counts [default: 1,3]
    #[arg(long, value_delimiter = ',')]
    steps: Option<Vec<usize>>,
    /// Weight modes to check (tied, untied, or both) [default: both]
    #[arg(long)]
    mode: Option<String>,
    /// Gating settings to check (true, false, or both) [default: both]
    #[arg(long)]
    gated: Option<String>,
    /// L1 coefficient used in the checked loss [default: 0.01]
    #[arg(long)]
    lambda: Option<f64>,
    /// RNG seed [default: 7]
    #[arg(long)]
    seed: Option<u64>,
    /// Finite-difference step [default: 1e-5]
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Args)]
struct ExportGatesArgs {
    /// Dataset to run inference on
    #[arg(long)]
    data: PathBuf,
    /// Trained checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Steps to unroll [default: the checkpoint's step count]
    #[arg(long)]
    steps: Option<usize>,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        // Ignore the error if a pool already exists (tests call run twice).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::ExportGates(args) => cmd_export_gates(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

type CliResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn print_config<T: Serialize>(label: &str, config: &T) {
    println!(
        "resolved {label} configuration:\n{}",
        serde_json::to_string_pretty(config).expect("config serializes")
    );
}

// ---------------------------------------------------------------------------
// generate

fn cmd_generate(args: GenerateArgs) -> CliResult {
    let dims = Dims::new(
        args.actions.unwrap_or(reference::ACTIONS),
        args.scenes.unwrap_or(reference::SCENES),
    )?;
    let count = args.count.unwrap_or(reference::TRAIN_COUNT);
    let test_count = match (&args.test_out, args.test_count) {
        (Some(_), n) => n.unwrap_or(reference::TEST_COUNT),
        (None, Some(_)) => {
            return Err("--test-count requires --test-out".into());
        }
        (None, None) => 0,
    };
    let config = SynthConfig {
        dims,
        persons_min: args.persons_min.unwrap_or(reference::PERSONS_MIN),
        persons_max: args.persons_max.unwrap_or(reference::PERSONS_MAX),
        distractor_rate: args.distractor_rate.unwrap_or(reference::DISTRACTOR_RATE),
        unary_noise: args.noise.unwrap_or(reference::UNARY_NOISE),
        correlation: args.correlation.unwrap_or(reference::CORRELATION),
        seed: args.seed.unwrap_or(reference::SEED),
        count: count + test_count,
    };
    print_config("generate", &config);

    let mut instances = generate(&config)?;
    let test: Vec<DatasetRecord> = instances
        .split_off(count)
        .into_iter()
        .map(DatasetRecord::from)
        .collect();
    let train: Vec<DatasetRecord> = instances.into_iter().map(DatasetRecord::from).collect();
    save_dataset(&args.out, &dims, &train)?;
    println!("wrote {} instances to {}", train.len(), args.out.display());
    if let Some(test_path) = &args.test_out {
        save_dataset(test_path, &dims, &test)?;
        println!("wrote {} instances to {}", test.len(), test_path.display());
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Default, Deserialize)]
struct Preset {
    steps: Option<usize>,
    mode: Option<ModeArg>,
    gated: Option<bool>,
    lambda: Option<f64>,
    learning_rate: Option<f64>,
    momentum: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    phase: Option<ScheduleArg>,
}

fn load_preset(path: Option<&Path>) -> Result<Preset, Box<dyn std::error::Error>> {
    match path {
        None => Ok(Preset::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

struct ResolvedTrain {
    config: TrainConfig,
    schedule: ScheduleArg,
}

fn resolve_train_config(
    hyper: &TrainHyperArgs,
    mode: Option<ModeArg>,
    gated_flag: bool,
    phase: Option<ScheduleArg>,
) -> Result<ResolvedTrain, Box<dyn std::error::Error>> {
    let preset = load_preset(hyper.preset.as_deref())?;
    let schedule = phase
        .or(preset.phase)
        .unwrap_or(ScheduleArg::Joint);
    let gated = gated_flag || preset.gated.unwrap_or(false) || schedule == ScheduleArg::TwoPhase;
    let config = TrainConfig {
        steps: hyper.steps.or(preset.steps).unwrap_or(reference::STEPS),
        mode: mode.or(preset.mode).unwrap_or(ModeArg::Tied).into(),
        gated,
        lambda: hyper.lambda.or(preset.lambda).unwrap_or(reference::LAMBDA),
        learning_rate: hyper
            .lr
            .or(preset.learning_rate)
            .unwrap_or(reference::LEARNING_RATE),
        momentum: hyper
            .momentum
            .or(preset.momentum)
            .unwrap_or(reference::MOMENTUM),
        epochs: hyper.epochs.or(preset.epochs).unwrap_or(reference::EPOCHS),
        batch_size: hyper.batch.or(preset.batch_size).unwrap_or(reference::BATCH_SIZE),
        seed: hyper.seed.or(preset.seed).unwrap_or(reference::SEED),
        phase: Phase::Joint,
    };
    config.validate()?;
    Ok(ResolvedTrain { config, schedule })
}

fn frames(records: Vec<DatasetRecord>) -> Vec<FrameInstance> {
    records.into_iter().map(|r| r.frame).collect()
}

fn variant_name(mode: WeightMode, gated: bool) -> String {
    format!("{}{}", if gated { "gated-" } else { "" }, mode)
}

fn epoch_rows(variant: &str, outcome: &TrainOutcome) -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    for epoch in &outcome.metrics {
        for (idx, step) in epoch.eval.per_step.iter().enumerate() {
            rows.push(MetricsRow {
                variant: variant.to_string(),
                phase: epoch.phase.to_string(),
                epoch: epoch.epoch,
                timestep: idx + 1,
                scene_accuracy: step.scene_accuracy,
                person_accuracy: step.person_accuracy,
                loss_total: epoch.train_loss.total,
                loss_ce_scene: epoch.train_loss.ce_scene,
                loss_ce_person: epoch.train_loss.ce_person,
                loss_gate_l1: epoch.train_loss.gate_l1,
                mean_gate_pp: step.mean_gate_pp,
                mean_gate_ps: step.mean_gate_ps,
            });
        }
    }
    rows
}

fn print_epochs(outcome: &TrainOutcome) {
    for epoch in &outcome.metrics {
        let accs: Vec<String> = epoch
            .eval
            .per_step
            .iter()
            .enumerate()
            .map(|(t, s)| format!("t{}: scene {:.4} person {:.4}", t + 1, s.scene_accuracy, s.person_accuracy))
            .collect();
        println!(
            "[{} epoch {:>3}] loss {:.4} (scene {:.4}, person {:.4}, gates {:.4}) | {}",
            epoch.phase,
            epoch.epoch,
            epoch.train_loss.total,
            epoch.train_loss.ce_scene,
            epoch.train_loss.ce_person,
            epoch.train_loss.gate_l1,
            accs.join(" | ")
        );
    }
}

fn cmd_train(args: TrainArgs) -> CliResult {
    let resolved = resolve_train_config(&args.hyper, args.mode, args.gated, args.phase)?;

    #[derive(Serialize)]
    struct Echo<'a> {
        data: String,
        val: Option<String>,
        out_checkpoint: String,
        out_metrics: Option<String>,
        schedule: ScheduleArg,
        #[serde(flatten)]
        config: &'a TrainConfig,
    }
    print_config(
        "train",
        &Echo {
            data: args.data.display().to_string(),
            val: args.val.as_ref().map(|p| p.display().to_string()),
            out_checkpoint: args.out_checkpoint.display().to_string(),
            out_metrics: args.out_metrics.as_ref().map(|p| p.display().to_string()),
            schedule: resolved.schedule,
            config: &resolved.config,
        },
    );

    let (dims, train_records) = load_dataset(&args.data)?;
    let train_set = frames(train_records);
    let val_set = match &args.val {
        Some(path) => {
            let (val_dims, records) = load_dataset(path)?;
            if val_dims != dims {
                return Err(format!(
                    "validation dims {val_dims:?} do not match training dims {dims:?}"
                )
                .into());
            }
            Some(frames(records))
        }
        None => None,
    };

    let config = resolved.config;
    let outcome = match resolved.schedule {
        ScheduleArg::TwoPhase => {
            train_two_phase_with_eval(&train_set, &config, val_set.as_deref())?
        }
        ScheduleArg::Joint => {
            let params = init_params(&dims, config.steps, config.mode, config.gated, config.seed)?;
            train_from(params, &train_set, &config, val_set.as_deref())?
        }
    };
    print_epochs(&outcome);

    let checkpoint = Checkpoint::new(
        &outcome.params,
        config.steps,
        Some(&outcome.velocity),
        Some(&config),
        config.seed,
    );
    save_checkpoint(&args.out_checkpoint, &checkpoint)?;
    println!("checkpoint written to {}", args.out_checkpoint.display());

    if let Some(metrics_path) = &args.out_metrics {
        let variant = variant_name(config.mode, config.gated);
        write_metrics(metrics_path, &epoch_rows(&variant, &outcome))?;
        println!("metrics written to {}", metrics_path.display());
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// eval

fn cmd_eval(args: EvalArgs) -> CliResult {
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let steps = args.steps.unwrap_or(checkpoint.steps);
    let (params, _) = checkpoint.into_params()?;
    if let Some(max) = params.max_steps() {
        if steps > max {
            eprintln!("error: untied checkpoint supports T={max}, requested {steps}");
            return Ok(ExitCode::from(2));
        }
    }

    #[derive(Serialize)]
    struct Echo {
        data: String,
        checkpoint: String,
        steps: usize,
        mode: WeightMode,
        gated: bool,
    }
    print_config(
        "eval",
        &Echo {
            data: args.data.display().to_string(),
            checkpoint: args.checkpoint.display().to_string(),
            steps,
            mode: params.mode,
            gated: params.gated,
        },
    );

    let (dims, records) = load_dataset(&args.data)?;
    if dims != params.dims {
        return Err(format!(
            "dataset dims {dims:?} do not match checkpoint dims {:?}",
            params.dims
        )
        .into());
    }
    let dataset = frames(records);
    let metrics = evaluate(&params, &dataset, steps)?;
    let variant = variant_name(params.mode, params.gated);
    let mut rows = Vec::new();
    for (idx, step) in metrics.per_step.iter().enumerate() {
        println!(
            "t={} scene_accuracy={:.4} person_accuracy={:.4} mean_gate_pp={:.4} mean_gate_ps={:.4}",
            idx + 1,
            step.scene_accuracy,
            step.person_accuracy,
            step.mean_gate_pp,
            step.mean_gate_ps
        );
        rows.push(MetricsRow {
            variant: variant.clone(),
            phase: "eval".to_string(),
            epoch: 0,
            timestep: idx + 1,
            scene_accuracy: step.scene_accuracy,
            person_accuracy: step.person_accuracy,
            loss_total: 0.0,
            loss_ce_scene: 0.0,
            loss_ce_person: 0.0,
            loss_gate_l1: 0.0,
            mean_gate_pp: step.mean_gate_pp,
            mean_gate_ps: step.mean_gate_ps,
        });
    }
    if let Some(path) = &args.out_metrics {
        write_metrics(path, &rows)?;
        println!("metrics written to {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// ablate

fn cmd_ablate(args: AblateArgs) -> CliResult {
    let resolved = resolve_train_config(&args.hyper, None, false, None)?;
    let config = AblationConfig {
        steps: resolved.config.steps,
        lambda: resolved.config.lambda,
        learning_rate: resolved.config.learning_rate,
        momentum: resolved.config.momentum,
        epochs: resolved.config.epochs,
        batch_size: resolved.config.batch_size,
        seed: resolved.config.seed,
    };

    #[derive(Serialize)]
    struct Echo<'a> {
        data: String,
        val: String,
        out_metrics: Option<String>,
        #[serde(flatten)]
        config: &'a AblationConfig,
    }
    print_config(
        "ablate",
        &Echo {
            data: args.data.display().to_string(),
            val: args.val.display().to_string(),
            out_metrics: args.out_metrics.as_ref().map(|p| p.display().to_string()),
            config: &config,
        },
    );

    let (dims, train_records) = load_dataset(&args.data)?;
    let (val_dims, val_records) = load_dataset(&args.val)?;
    if dims != val_dims {
        return Err(format!("dims {dims:?} vs {val_dims:?} differ between datasets").into());
    }
    let train_set = frames(train_records);
    let val_set = frames(val_records);

    let results = run_ablation(&train_set, &val_set, &config)?;
    let rows = ablation_rows(&results, config.epochs);

    println!(
        "{:<14} {}",
        "variant",
        (1..=config.steps)
            .map(|t| format!("t={t} scene/person    "))
            .collect::<String>()
    );
    for result in &results {
        let cells: Vec<String> = result
            .eval
            .per_step
            .iter()
            .map(|s| format!("{:.4}/{:.4}      ", s.scene_accuracy, s.person_accuracy))
            .collect();
        println!("{:<14} {}", result.name, cells.join(""));
    }

    if let Some(path) = &args.out_metrics {
        write_metrics(path, &rows)?;
        println!("metrics written to {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// gradcheck

fn parse_modes(spec: &str) -> Result<Vec<WeightMode>, Box<dyn std::error::Error>> {
    match spec {
        "tied" => Ok(vec![WeightMode::Tied]),
        "untied" => Ok(vec![WeightMode::Untied]),
        "both" => Ok(vec![WeightMode::Tied, WeightMode::Untied]),
        other => Err(format!("unknown mode {other:?} (expected tied, untied, or both)").into()),
    }
}

fn parse_gated(spec: &str) -> Result<Vec<bool>, Box<dyn std::error::Error>> {
    match spec {
        "true" => Ok(vec![true]),
        "false" => Ok(vec![false]),
        "both" => Ok(vec![false, true]),
        other => Err(format!("unknown gated {other:?} (expected true, false, or both)").into()),
    }
}

fn cmd_gradcheck(args: GradcheckArgs) -> CliResult {
    let dims = Dims::new(args.actions.unwrap_or(5), args.scenes.unwrap_or(4))?;
    let persons = args.persons.unwrap_or_else(|| vec![1, 2, 4]);
    let steps = args.steps.unwrap_or_else(|| vec![1, 3]);
    let modes = parse_modes(args.mode.as_deref().unwrap_or("both"))?;
    let gatings = parse_gated(args.gated.as_deref().unwrap_or("both"))?;
    let lambda = args.lambda.unwrap_or(0.01);
    let seed = args.seed.unwrap_or(reference::SEED);
    let epsilon = args.epsilon.unwrap_or(1e-5);

    #[derive(Serialize)]
    struct Echo {
        dims: Dims,
        persons: Vec<usize>,
        steps: Vec<usize>,
        modes: Vec<WeightMode>,
        gated: Vec<bool>,
        lambda: f64,
        seed: u64,
        epsilon: f64,
        tolerance: f64,
    }
    print_config(
        "gradcheck",
        &Echo {
            dims,
            persons: persons.clone(),
            steps: steps.clone(),
            modes: modes.clone(),
            gated: gatings.clone(),
            lambda,
            seed,
            epsilon,
            tolerance: GRADCHECK_TOLERANCE,
        },
    );

    let mut all_ok = true;
    for &mode in &modes {
        for &gated in &gatings {
            for &t in &steps {
                for &m in &persons {
                    let params = init_params(&dims, t, mode, gated, seed)?;
                    let inst = random_instance(&dims, m, seed ^ (m as u64) << 8 ^ (t as u64));
                    let config = TrainConfig {
                        steps: t,
                        mode,
                        gated,
                        lambda,
                        learning_rate: 0.0,
                        momentum: 0.0,
                        epochs: 1,
                        batch_size: 1,
                        seed,
                        phase: Phase::Joint,
                    };
                    let err = finite_diff_oracle(&params, &inst, &config, epsilon)?;
                    let ok = err < GRADCHECK_TOLERANCE;
                    all_ok &= ok;
                    println!(
                        "mode={mode} gated={gated} T={t} M={m} max_rel_err={err:.3e} {}",
                        if ok { "PASS" } else { "FAIL" }
                    );
                }
            }
        }
    }
    Ok(if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

// ---------------------------------------------------------------------------
// export-gates

fn cmd_export_gates(args: ExportGatesArgs) -> CliResult {
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let steps = args.steps.unwrap_or(checkpoint.steps);
    let (params, _) = checkpoint.into_params()?;
    if let Some(max) = params.max_steps() {
        if steps > max {
            eprintln!("error: untied checkpoint supports T={max}, requested {steps}");
            return Ok(ExitCode::from(2));
        }
    }

    #[derive(Serialize)]
    struct Echo {
        data: String,
        checkpoint: String,
        steps: usize,
        out: String,
    }
    print_config(
        "export-gates",
        &Echo {
            data: args.data.display().to_string(),
            checkpoint: args.checkpoint.display().to_string(),
            steps,
            out: args.out.display().to_string(),
        },
    );

    let (dims, records) = load_dataset(&args.data)?;
    if dims != params.dims {
        return Err(format!(
            "dataset dims {dims:?} do not match checkpoint dims {:?}",
            params.dims
        )
        .into());
    }

    let mut rows = Vec::new();
    for (idx, record) in records.iter().enumerate() {
        let trace = forward(&params, &record.frame, steps)?;
        let m = record.frame.num_persons();
        for (t, state) in trace.states.iter().enumerate() {
            for i in 0..m {
                for j in (i + 1)..m {
                    rows.push(GateExportRow {
                        instance: idx,
                        timestep: t + 1,
                        edge: format!("p{i}-p{j}"),
                        gate: state.gate_pp[i][j],
                    });
                }
            }
            for i in 0..m {
                rows.push(GateExportRow {
                    instance: idx,
                    timestep: t + 1,
                    edge: format!("s-p{i}"),
                    gate: state.gate_ps[i],
                });
            }
        }
    }
    write_gate_export(&args.out, &rows)?;
    println!("wrote {} gate rows to {}", rows.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}
