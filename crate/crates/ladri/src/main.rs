//! Command-line surface for the risk-indicator pipeline: simulate scenarios,
//! generate labeled datasets, train and evaluate the classifier, and run
//! inline assessment against the labeling oracle.
//!
//! Exit codes: 0 success, 1 runtime error, 2 config/usage error. Nonzero
//! exits leave a single machine-parsable `error[kind]: message` line on
//! stderr; stdout carries only data and reports.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use ladri::dataset::{generate_dataset, read_csv, split_dataset, write_csv, DatasetRow, SweepConfig};
use ladri::error::{LadriError, Result};
use ladri::eval::{cross_validate, evaluate, CvSummary, Metrics};
use ladri::features::build_feature_vector;
use ladri::hara::{label_trace, time_to_stage, HaraConfig, Stage};
use ladri::model::{
    load_model, save_model, train, train_baseline, EpochStats, ModelWeights, NetworkSpec,
    Predictor, Sample, TrainConfig,
};
use ladri::scenario::{run_scenario, ScenarioConfig, SimulationTrace, TerminalEvent};
use ladri::sensor::{sample_sensors, subject_truth};

#[derive(Parser)]
#[command(name = "ladri", version, about = "Learning-based dynamic risk indicator pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write the labeled per-step trace CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a scenario sweep and write the labeled dataset CSV.
    Generate {
        #[arg(long)]
        sweep: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the risk classifier on a dataset CSV.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained model on a dataset, optionally with k-fold
    /// cross-validation and a logistic-baseline comparison.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        kfold: Option<usize>,
        #[arg(long)]
        baseline: bool,
    },
    /// Run a scenario with inline inference and compare against the oracle.
    Assess {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Errors routed to their exit codes.
enum AppError {
    /// Exit 2: bad flags, unreadable or invalid configuration/input files.
    Config(LadriError),
    /// Exit 1: failures while doing the work.
    Runtime(LadriError),
}

type AppResult<T> = std::result::Result<T, AppError>;

trait Classify<T> {
    fn or_config(self) -> AppResult<T>;
    fn or_runtime(self) -> AppResult<T>;
}

impl<T> Classify<T> for Result<T> {
    fn or_config(self) -> AppResult<T> {
        self.map_err(AppError::Config)
    }
    fn or_runtime(self) -> AppResult<T> {
        self.map_err(AppError::Runtime)
    }
}

impl<T> Classify<T> for std::io::Result<T> {
    fn or_config(self) -> AppResult<T> {
        self.map_err(|e| AppError::Config(e.into()))
    }
    fn or_runtime(self) -> AppResult<T> {
        self.map_err(|e| AppError::Runtime(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Config(e)) => {
            eprintln!("error[config]: {e}");
            ExitCode::from(2)
        }
        Err(AppError::Runtime(e)) => {
            eprintln!("error[runtime]: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> AppResult<()> {
    match command {
        Command::Simulate { config, out } => cmd_simulate(&config, &out),
        Command::Generate { sweep, out } => cmd_generate(&sweep, &out),
        Command::Train { data, spec, out } => cmd_train(&data, &spec, &out),
        Command::Evaluate {
            data,
            model,
            kfold,
            baseline,
        } => cmd_evaluate(&data, &model, kfold, baseline),
        Command::Assess { config, model, out } => cmd_assess(&config, &model, &out),
    }
}

/// Optional seed override from the environment.
fn env_seed() -> AppResult<Option<u64>> {
    match std::env::var("LADRI_SEED") {
        Ok(text) => text.trim().parse::<u64>().map(Some).map_err(|_| {
            AppError::Config(LadriError::config(
                "LADRI_SEED",
                format!("must be an unsigned 64-bit integer, got `{text}`"),
            ))
        }),
        Err(_) => Ok(None),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Scenario file for `simulate` and `assess`: the scenario itself plus the
/// risk-grading thresholds and the labeled subject (defaults to the ego).
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunConfig {
    #[serde(flatten)]
    scenario: ScenarioConfig,
    #[serde(default)]
    hara: HaraConfig,
    #[serde(default)]
    subject: Option<usize>,
}

impl RunConfig {
    fn load(path: &Path, seed_override: Option<u64>) -> AppResult<(ScenarioConfig, HaraConfig, usize)> {
        let mut run: RunConfig = read_json(path).or_config()?;
        if let Some(seed) = seed_override {
            run.scenario.seed = seed;
        }
        run.scenario.validate().or_config()?;
        run.hara.validate().or_config()?;
        let subject = run
            .subject
            .unwrap_or_else(|| run.scenario.ego_index().expect("validated: ego present"));
        if subject >= run.scenario.vehicles.len() {
            return Err(AppError::Config(LadriError::config(
                "subject",
                format!(
                    "index {subject} out of range for {} vehicles",
                    run.scenario.vehicles.len()
                ),
            )));
        }
        Ok((run.scenario, run.hara, subject))
    }
}

fn fmt_option_time(t: Option<f64>) -> String {
    t.map_or_else(|| "none".to_string(), |v| format!("{v}"))
}

fn write_trace_csv(path: &Path, trace: &SimulationTrace, labels: &[ladri::hara::RiskLabel]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    let n_vehicles = trace.records.first().map_or(0, |r| r.vehicles.len());
    let mut header = String::from("time");
    for i in 0..n_vehicles {
        header.push_str(&format!(",pos_{i},speed_{i},accel_{i}"));
    }
    header.push_str(",accel_cmd,accel_eff,fault_active,s_level,c_level,stage");
    writeln!(out, "{header}")?;
    for (rec, label) in trace.records.iter().zip(labels) {
        let mut line = format!("{}", rec.time);
        for v in &rec.vehicles {
            line.push_str(&format!(",{},{},{}", v.position, v.speed, v.accel));
        }
        line.push_str(&format!(
            ",{},{},{},{},{},{}",
            rec.accel_cmd,
            rec.accel_eff,
            u8::from(rec.fault_active),
            label.severity.index(),
            label.controllability.index(),
            label.stage.index()
        ));
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_simulate(config_path: &Path, out: &Path) -> AppResult<()> {
    let (scenario, hara, subject) = RunConfig::load(config_path, env_seed()?)?;
    let trace = run_scenario(&scenario).or_runtime()?;
    let labels = label_trace(&trace, subject, &hara).or_runtime()?;
    write_trace_csv(out, &trace, &labels).or_runtime()?;

    for (i, v) in scenario.vehicles.iter().enumerate() {
        println!("vehicle_{i}={:?}", v.role);
    }
    println!("subject={subject}");
    println!("records={}", trace.records.len());
    match trace.terminal {
        TerminalEvent::Completed => println!("terminal=completed"),
        TerminalEvent::Collision { time } => println!("terminal=collision time={time}"),
    }
    for stage in [Stage::Warning, Stage::Hazardous, Stage::Critical] {
        println!(
            "time_to_{}={}",
            stage.name(),
            fmt_option_time(time_to_stage(&trace, &labels, stage))
        );
    }
    Ok(())
}

fn cmd_generate(sweep_path: &Path, out: &Path) -> AppResult<()> {
    let mut sweep: SweepConfig = read_json(sweep_path).or_config()?;
    if let Some(seed) = env_seed()? {
        sweep.master_seed = seed;
    }
    sweep.validate().or_config()?;
    let (rows, meta) = generate_dataset(&sweep).or_runtime()?;
    write_csv(&rows, out).or_runtime()?;
    println!("scenarios={}", meta.scenarios);
    println!("rows={}", meta.rows);
    for (stage, count) in Stage::all().iter().zip(meta.class_counts) {
        println!("rows_{}={count}", stage.name());
    }
    let collisions = meta
        .terminals
        .iter()
        .filter(|(_, t)| matches!(t, TerminalEvent::Collision { .. }))
        .count();
    println!("collisions={collisions}");
    Ok(())
}

/// Training file for `train`: network shape, optimizer settings, and the
/// seed for the scenario-grouped dataset split.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct TrainSpecFile {
    network: NetworkSpec,
    train: TrainConfig,
    split_seed: Option<u64>,
}

fn to_samples(rows: &[DatasetRow]) -> Vec<Sample> {
    rows.iter().map(|r| r.sample()).collect()
}

fn write_history_csv(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "epoch,train_loss,train_accuracy,val_loss,val_accuracy")?;
    for e in history {
        writeln!(
            out,
            "{},{},{},{},{}",
            e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy
        )?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_train(data: &Path, spec_path: &Path, out: &Path) -> AppResult<()> {
    let mut spec: TrainSpecFile = read_json(spec_path).or_config()?;
    if let Some(seed) = env_seed()? {
        spec.train.seed = seed;
    }
    spec.train.validate().or_config()?;
    let rows = read_csv(data).or_config()?;
    let split_seed = spec.split_seed.unwrap_or(spec.train.seed);
    let (train_rows, val_rows, test_rows) =
        split_dataset(&rows, (0.70, 0.15, 0.15), split_seed).or_runtime()?;
    let (model, history) = train(
        &spec.network,
        &spec.train,
        &to_samples(&train_rows),
        &to_samples(&val_rows),
    )
    .or_runtime()?;
    save_model(&model, out).or_runtime()?;
    let history_path = out.with_extension("history.csv");
    write_history_csv(&history_path, &history).or_runtime()?;

    let best = history
        .iter()
        .min_by(|a, b| a.val_loss.partial_cmp(&b.val_loss).expect("finite losses"))
        .expect("at least one epoch");
    println!("rows={}", rows.len());
    println!("train_rows={}", train_rows.len());
    println!("val_rows={}", val_rows.len());
    println!("test_rows={}", test_rows.len());
    println!("epochs={}", history.len());
    println!("best_epoch={}", best.epoch);
    println!("best_val_loss={}", best.val_loss);
    println!("best_val_accuracy={}", best.val_accuracy);
    println!("model={}", out.display());
    println!("history={}", history_path.display());
    Ok(())
}

/// Timed predictions over dataset rows: predicted stages plus mean seconds
/// per frame.
fn timed_predictions(model: &ModelWeights, rows: &[DatasetRow]) -> Result<(Vec<Stage>, f64)> {
    let mut predictor = Predictor::new(model)?;
    let mut preds = Vec::with_capacity(rows.len());
    let start = Instant::now();
    for row in rows {
        let (stage, _) = predictor.predict(&row.features);
        preds.push(stage);
    }
    let mean_latency = start.elapsed().as_secs_f64() / rows.len().max(1) as f64;
    Ok((preds, mean_latency))
}

fn print_metrics_block(name: &str, metrics: &Metrics) {
    println!("== {name} ==");
    println!(
        "accuracy={} macro_f1={} mean_latency_s={}",
        metrics.accuracy,
        metrics.macro_f1,
        metrics
            .mean_inference_latency
            .map_or_else(|| "n/a".into(), |l| format!("{l}"))
    );
    for (stage, m) in Stage::all().iter().zip(&metrics.per_class) {
        println!(
            "class_{}: precision={} recall={} f1={}",
            stage.name(),
            m.precision,
            m.recall,
            m.f1
        );
    }
    println!("confusion (rows=oracle, cols=predicted):");
    for row in &metrics.confusion {
        println!(
            "  {}",
            row.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")
        );
    }
}

fn metrics_csv_header() -> String {
    let mut header = String::from("model,accuracy,macro_f1");
    for stage in Stage::all() {
        header.push_str(&format!(",precision_{0},recall_{0},f1_{0}", stage.name()));
    }
    header.push_str(",mean_latency_s");
    header
}

fn metrics_csv_line(name: &str, metrics: &Metrics) -> String {
    let mut line = format!("{name},{},{}", metrics.accuracy, metrics.macro_f1);
    for m in &metrics.per_class {
        line.push_str(&format!(",{},{},{}", m.precision, m.recall, m.f1));
    }
    line.push_str(&format!(
        ",{}",
        metrics
            .mean_inference_latency
            .map_or_else(String::new, |l| l.to_string())
    ));
    line
}

fn cmd_evaluate(data: &Path, model_path: &Path, kfold: Option<usize>, baseline: bool) -> AppResult<()> {
    let model = load_model_classified(model_path)?;
    let rows = read_csv(data).or_config()?;
    if rows.is_empty() {
        return Err(AppError::Config(LadriError::Data("dataset is empty".into())));
    }
    let labels: Vec<Stage> = rows
        .iter()
        .map(|r| Stage::from_index(r.stage as usize).expect("validated on read"))
        .collect();

    let (preds, latency) = timed_predictions(&model, &rows).or_runtime()?;
    let metrics = evaluate(&preds, &labels, Some(latency)).or_runtime()?;
    println!("rows={}", rows.len());
    print_metrics_block("model", &metrics);

    let mut csv_lines = vec![metrics_csv_header(), metrics_csv_line("ladri", &metrics)];
    let seed = env_seed()?.unwrap_or(TrainConfig::default().seed);

    if baseline {
        let (train_rows, val_rows, test_rows) =
            split_dataset(&rows, (0.70, 0.15, 0.15), seed).or_runtime()?;
        let config = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let (base_model, _) =
            train_baseline(&config, &to_samples(&train_rows), &to_samples(&val_rows)).or_runtime()?;
        let test_labels: Vec<Stage> = test_rows
            .iter()
            .map(|r| Stage::from_index(r.stage as usize).expect("validated on read"))
            .collect();
        let (base_preds, base_latency) = timed_predictions(&base_model, &test_rows).or_runtime()?;
        let base_metrics = evaluate(&base_preds, &test_labels, Some(base_latency)).or_runtime()?;
        let (model_preds, model_latency) = timed_predictions(&model, &test_rows).or_runtime()?;
        let model_metrics = evaluate(&model_preds, &test_labels, Some(model_latency)).or_runtime()?;
        println!("baseline_test_rows={}", test_rows.len());
        print_metrics_block("model on held-out test", &model_metrics);
        print_metrics_block("logistic baseline on held-out test", &base_metrics);
        csv_lines.push(metrics_csv_line("ladri_test", &model_metrics));
        csv_lines.push(metrics_csv_line("baseline_test", &base_metrics));
    }

    if let Some(k) = kfold {
        let config = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let summary: CvSummary =
            cross_validate(&model.spec, &config, &to_samples(&rows), k).or_runtime()?;
        println!("== {k}-fold cross-validation ==");
        for (i, fold) in summary.folds.iter().enumerate() {
            println!("fold_{i}: accuracy={} macro_f1={}", fold.accuracy, fold.macro_f1);
        }
        println!(
            "cv_mean_accuracy={} cv_std_accuracy={} cv_mean_macro_f1={} cv_std_macro_f1={}",
            summary.mean_accuracy, summary.std_accuracy, summary.mean_macro_f1, summary.std_macro_f1
        );
    }

    println!();
    for line in csv_lines {
        println!("{line}");
    }
    Ok(())
}

/// Model loading with the spec'd exit semantics: version or feature-contract
/// mismatch is a runtime error (exit 1); unreadable or malformed files are
/// config errors (exit 2).
fn load_model_classified(path: &Path) -> AppResult<ModelWeights> {
    load_model(path).map_err(|e| match e {
        LadriError::Version(_) => AppError::Runtime(e),
        other => AppError::Config(other),
    })
}

fn cmd_assess(config_path: &Path, model_path: &Path, out: &Path) -> AppResult<()> {
    let (scenario, hara, subject) = RunConfig::load(config_path, env_seed()?)?;
    let model = load_model_classified(model_path)?;
    let trace = run_scenario(&scenario).or_runtime()?;
    let labels = label_trace(&trace, subject, &hara).or_runtime()?;
    let mut predictor = Predictor::new(&model).or_runtime()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);

    let mut file = BufWriter::new(std::fs::File::create(out).or_runtime()?);
    writeln!(
        file,
        "time,oracle_stage,predicted_stage,p_safe,p_warning,p_hazardous,p_critical,inference_latency"
    )
    .or_runtime()?;

    let mut agree = 0usize;
    let mut total_latency = 0.0;
    let detection_range = scenario.acc_params.detection_range;
    for (record, label) in trace.records.iter().zip(&labels) {
        let truth = subject_truth(record, subject, detection_range).or_runtime()?;
        let frame = sample_sensors(&truth, &scenario.noise, &scenario.limits, &mut rng).or_runtime()?;
        let features = build_feature_vector(&frame, None, detection_range);
        let start = Instant::now();
        let (stage, probs) = predictor.predict(&features);
        let latency = start.elapsed().as_secs_f64();
        total_latency += latency;
        if stage == label.stage {
            agree += 1;
        }
        writeln!(
            file,
            "{},{},{},{},{},{},{},{}",
            record.time,
            label.stage.index(),
            stage.index(),
            probs[0],
            probs[1],
            probs[2],
            probs[3],
            latency
        )
        .or_runtime()?;
    }
    file.flush().or_runtime()?;

    let n = trace.records.len();
    println!("records={n}");
    match trace.terminal {
        TerminalEvent::Completed => println!("terminal=completed"),
        TerminalEvent::Collision { time } => println!("terminal=collision time={time}"),
    }
    println!("agreement={}", agree as f64 / n.max(1) as f64);
    println!("mean_latency_s={}", total_latency / n.max(1) as f64);
    Ok(())
}
