//! Command implementations.

use std::fs;
use std::path::{Path, PathBuf};

use msgaf_core::config::RunConfig;
use msgaf_core::dataset::{
    read_jsonl, read_topology, split_by_time, TopologySidecar, WindowSample,
};
use msgaf_core::encoding::ServiceGraph;
use msgaf_core::error::Error as CoreError;
use msgaf_core::evalkit::{
    compute_metrics, evaluate_on_test, render_table, run_ablation, run_level_sweep, MetricReport,
};
use msgaf_core::model::{predict_one, ModelParams, Variant};
use msgaf_core::simkit::{
    generate_dataset, write_dataset, GenerateSpec, OracleKind, ScenarioMix, TopologyTemplate,
    TraceShape,
};
use msgaf_core::training::checkpoint::Checkpoint;
use msgaf_core::training::{prepare_features, train as train_model, TrainResult};

use crate::{EvaluateArgs, GenerateArgs, GridArgs, PredictArgs, SweepArgs, TrainArgs};

/// Errors split by exit code: usage/config problems exit 1, runtime
/// failures exit 2.
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(_) | CoreError::Dataset(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

type CliResult = Result<(), CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

pub fn generate(args: GenerateArgs) -> CliResult {
    let template = TopologyTemplate::parse(&args.template, args.nodes)?;
    let mut spec = GenerateSpec::new(template, args.windows, args.seed);
    if let Some(mix) = &args.scenario_mix {
        spec.mix = ScenarioMix::parse(mix)?;
    }
    spec.trace_shape = TraceShape::parse(&args.trace)?;
    spec.base_rps = args.base_rps;
    spec.oracle = OracleKind::parse(&args.oracle)?;
    spec.headroom = (args.headroom_min, args.headroom_max);

    let data = generate_dataset(&spec)?;
    let dir = PathBuf::from(&args.out);
    let paths = write_dataset(&dir, &data)?;
    println!(
        "wrote {} windows to {}",
        data.samples.len(),
        paths.dataset.display()
    );
    println!("topology {} ({} services)", data.meta.template, data.topology.graph.n());
    let mix: Vec<String> = data
        .meta
        .scenario_counts
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    println!("scenario mix: {}", mix.join(", "));
    if !data.meta.saturated_windows.is_empty() {
        println!("saturated windows: {}", data.meta.saturated_windows.len());
    }
    Ok(())
}

/// dataset.jsonl + topology.json from a dataset directory.
fn load_dataset(dir: &str) -> Result<(ServiceGraph, TopologySidecar, Vec<WindowSample>), CliError> {
    let dir = Path::new(dir);
    let samples = read_jsonl(&dir.join("dataset.jsonl"))?;
    let sidecar = read_topology(&dir.join("topology.json"))?;
    let graph = sidecar.to_graph()?;
    for s in &samples {
        if s.n() != graph.n() {
            return Err(usage(format!(
                "window {} has {} services, topology has {}",
                s.window_id,
                s.n(),
                graph.n()
            )));
        }
    }
    Ok((graph, sidecar, samples))
}

fn load_config(path: &Option<String>) -> Result<RunConfig, CliError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| usage(format!("cannot read config {p}: {e}")))?;
            Ok(RunConfig::from_json(&text)?)
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| runtime(format!("serialize {}: {e}", path.display())))?;
    fs::write(path, text).map_err(|e| runtime(format!("write {}: {e}", path.display())))
}

#[derive(serde::Serialize)]
struct TrainSummary {
    seed: u64,
    percentile: u8,
    variant: String,
    best_epoch: usize,
    epochs_run: usize,
    val_mse_scaled: f64,
    target_scale: f64,
    test: MetricReport,
}

pub fn train(args: TrainArgs) -> CliResult {
    let mut config = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(p) = args.percentile {
        config.percentile = p;
    }
    if let Some(v) = &args.variant {
        config.variant = v.parse::<Variant>()?;
    }
    config.validate()?;
    config.data_dir = Some(args.data.clone());
    config.out_dir = Some(args.out.clone());

    let (graph, _, samples) = load_dataset(&args.data)?;
    let out_dir = PathBuf::from(&args.out);
    fs::create_dir_all(&out_dir).map_err(|e| runtime(format!("create {}: {e}", args.out)))?;

    let outcome = train_model(&graph, &samples, &config)?;
    let report = evaluate_on_test(&graph, &samples, &outcome, config.percentile)?;

    // effective config echo makes the run reproducible from its directory
    fs::write(out_dir.join("effective_config.json"), config.to_json())
        .map_err(|e| runtime(format!("write config echo: {e}")))?;

    let mut log_text = String::new();
    for line in &outcome.log {
        log_text.push_str(&serde_json::to_string(line).expect("log line serializes"));
        log_text.push('\n');
    }
    fs::write(out_dir.join("train_log.jsonl"), log_text)
        .map_err(|e| runtime(format!("write train log: {e}")))?;

    let ckpt = checkpoint_from(&outcome, &config, graph.n());
    ckpt.save(&out_dir.join("checkpoint.bin"))?;

    let summary = TrainSummary {
        seed: config.seed,
        percentile: config.percentile,
        variant: config.variant.to_string(),
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.epochs_run,
        val_mse_scaled: outcome.best_val_mse,
        target_scale: outcome.target_scale,
        test: report,
    };
    write_json(&out_dir.join("train_summary.json"), &summary)?;
    println!(
        "trained {} (seed {}, P{}): best epoch {}, val MSE {:.6}",
        summary.variant, summary.seed, summary.percentile, summary.best_epoch, summary.val_mse_scaled
    );
    println!(
        "test: MAE {:.3} ms, RMSE {:.3} ms, MAPE {:.2}%",
        summary.test.mae, summary.test.rmse, summary.test.mape
    );
    Ok(())
}

fn checkpoint_from(outcome: &TrainResult, config: &RunConfig, n_nodes: usize) -> Checkpoint {
    Checkpoint {
        config_hash: config.schema_hash(n_nodes),
        seed: config.seed,
        best_epoch: outcome.best_epoch as u32,
        val_loss: outcome.best_val_mse,
        target_scale: outcome.target_scale,
        percentile: config.percentile,
        normalizer: outcome.normalizer.clone(),
        tensors: outcome
            .params
            .tensors()
            .into_iter()
            .map(|(n, m)| (n, m.clone()))
            .collect(),
    }
}

struct LoadedRun {
    checkpoint: Checkpoint,
    params: ModelParams,
}

fn load_run(run_dir: &str, config_override: &Option<String>, n_nodes: usize) -> Result<LoadedRun, CliError> {
    let dir = Path::new(run_dir);
    let config = match config_override {
        Some(_) => load_config(config_override)?,
        None => {
            let text = fs::read_to_string(dir.join("effective_config.json"))
                .map_err(|e| usage(format!("cannot read run config in {run_dir}: {e}")))?;
            RunConfig::from_json(&text)?
        }
    };
    let checkpoint = Checkpoint::load(&dir.join("checkpoint.bin"))?;
    if checkpoint.config_hash != config.schema_hash(n_nodes) {
        return Err(usage(
            "checkpoint/config hash mismatch: the checkpoint was trained under a different \
             schema (architecture, variant, percentile, or topology size)",
        ));
    }
    let params = checkpoint.restore_params(&config.model_config(n_nodes))?;
    Ok(LoadedRun { checkpoint, params })
}

#[derive(serde::Serialize)]
struct EvalLogLine<'a> {
    window_id: u64,
    scenario_kind: &'a str,
    target_ms: f64,
    prediction_ms: f64,
    beta: &'a [f64],
    omega: &'a [f64],
    expert_outputs: &'a [f64],
}

pub fn evaluate(args: EvaluateArgs) -> CliResult {
    let (graph, _, samples) = load_dataset(&args.data)?;
    let run = load_run(&args.run, &args.config, graph.n())?;
    let percentile = run.checkpoint.percentile;

    let (_, _, test) = split_by_time(&samples);
    if test.is_empty() {
        return Err(usage("test split is empty"));
    }
    let feats = prepare_features(test, &run.checkpoint.normalizer)?;

    let mut log_lines = String::new();
    let mut preds = Vec::with_capacity(test.len());
    let mut targets = Vec::with_capacity(test.len());
    for (sample, x) in test.iter().zip(&feats) {
        let p = predict_one(&run.params, x, graph.adjacency());
        let prediction_ms = p.l_hat * run.checkpoint.target_scale;
        let target_ms = sample.target(percentile)?;
        let kind = sample.scenario_kind.to_string();
        let experts_ms: Vec<f64> = p
            .expert_outputs
            .iter()
            .map(|e| e * run.checkpoint.target_scale)
            .collect();
        let line = EvalLogLine {
            window_id: sample.window_id,
            scenario_kind: &kind,
            target_ms,
            prediction_ms,
            beta: &p.beta,
            omega: &p.omega,
            expert_outputs: &experts_ms,
        };
        log_lines.push_str(&serde_json::to_string(&line).expect("log line serializes"));
        log_lines.push('\n');
        preds.push(prediction_ms);
        targets.push(target_ms);
    }
    let report = compute_metrics(&preds, &targets, percentile)?;

    let run_dir = Path::new(&args.run);
    fs::write(run_dir.join("eval_log.jsonl"), log_lines)
        .map_err(|e| runtime(format!("write eval log: {e}")))?;
    write_json(&run_dir.join("metrics.json"), &report)?;
    println!(
        "P{} test metrics over {} samples: MAE {:.3} ms, RMSE {:.3} ms, MAPE {:.2}%",
        report.percentile, report.n_samples, report.mae, report.rmse, report.mape
    );
    Ok(())
}

pub fn predict(args: PredictArgs) -> CliResult {
    let record_path = PathBuf::from(&args.record);
    let text = fs::read_to_string(&record_path)
        .map_err(|e| usage(format!("cannot read record {}: {e}", record_path.display())))?;
    let sample: WindowSample = serde_json::from_str(text.trim())
        .map_err(|e| usage(format!("record does not match the window schema: {e}")))?;

    let topology_path = match &args.topology {
        Some(p) => PathBuf::from(p),
        None => record_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("topology.json"),
    };
    let sidecar = read_topology(&topology_path)?;
    let graph = sidecar.to_graph()?;
    if sample.n() != graph.n() {
        return Err(usage(format!(
            "record has {} services, topology has {}",
            sample.n(),
            graph.n()
        )));
    }

    let run = load_run(&args.run, &None, graph.n())?;
    let x = run.checkpoint.normalizer.apply(&sample.features()?);
    let p = predict_one(&run.params, &x, graph.adjacency());
    let prediction_ms = p.l_hat * run.checkpoint.target_scale;

    let experts_ms: Vec<f64> = p
        .expert_outputs
        .iter()
        .map(|e| e * run.checkpoint.target_scale)
        .collect();
    let out = serde_json::json!({
        "window_id": sample.window_id,
        "prediction_ms": prediction_ms,
        "percentile": run.checkpoint.percentile,
        "beta": p.beta,
        "omega": p.omega,
        "expert_outputs_ms": experts_ms,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("serializes"));
    Ok(())
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| usage(format!("bad seed '{s}'")))
        })
        .collect()
}

pub fn ablate(args: GridArgs) -> CliResult {
    let mut config = load_config(&args.config)?;
    if let Some(p) = args.percentile {
        config.percentile = p;
    }
    config.validate()?;
    let seeds = parse_seeds(&args.seeds)?;
    let variants = args
        .variants
        .split(',')
        .map(|v| v.trim().parse::<Variant>().map_err(CliError::from))
        .collect::<Result<Vec<_>, _>>()?;

    let (graph, _, samples) = load_dataset(&args.data)?;
    let result = run_ablation(&graph, &samples, &config, &variants, &seeds)?;

    let out_dir = PathBuf::from(&args.out);
    fs::create_dir_all(&out_dir).map_err(|e| runtime(format!("create {}: {e}", args.out)))?;
    write_json(&out_dir.join("results.json"), &result.rows)?;
    write_json(&out_dir.join("summary.json"), &result)?;
    print!("{}", render_table(&result));
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

pub fn sweep(args: SweepArgs) -> CliResult {
    let mut config = load_config(&args.config)?;
    if let Some(p) = args.percentile {
        config.percentile = p;
    }
    config.validate()?;
    let seeds = parse_seeds(&args.seeds)?;
    let levels = args
        .levels
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| usage(format!("bad level '{s}'")))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let (graph, _, samples) = load_dataset(&args.data)?;
    let result = run_level_sweep(&graph, &samples, &config, &levels, &seeds)?;

    let out_dir = PathBuf::from(&args.out);
    fs::create_dir_all(&out_dir).map_err(|e| runtime(format!("create {}: {e}", args.out)))?;
    write_json(&out_dir.join("results.json"), &result.rows)?;
    write_json(&out_dir.join("summary.json"), &result)?;
    print!("{}", render_table(&result));
    Ok(())
}
