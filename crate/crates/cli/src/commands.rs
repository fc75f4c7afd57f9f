use std::fs;
use std::path::Path;
use std::time::Instant;

use serde_json::{json, Value};
use tpc_core::analysis::{
    aggregate_attributions, attribute_cohort, estimates_at, fit_baseline, reliability_grid,
    simulate_icu, write_attributions, write_reliability, write_simulation, BaselineKind,
    SIMULATION_START_HOUR,
};
use tpc_core::ehr::{load_dataset, preprocess, read_raw, synthesize, Dataset, GenConfig, PreprocessConfig, Split};
use tpc_core::model::Checkpoint;
use tpc_core::objectives::{evaluate_predictions, PredictionSet};
use tpc_core::trainer::{collect_predictions, predict_split, train, write_history};

use crate::config::{read_config, validate_config, RunConfig};
use crate::manifest::{manifest_path, RunManifest};
use crate::{
    AttributeArgs, BaselineArgs, Cli, Command, EvalArgs, Failure, PredictorArgs, PreprocessArgs,
    ReliabilityArgs, SimulateArgs, SourceArgs, SynthArgs, TrainArgs, ValidateConfigArgs, EXIT_RUNTIME,
};

type Outcome = Result<(), Failure>;

pub fn dispatch(cli: &Cli, argv: &[String]) -> Outcome {
    let name = argv.get(1).map(String::as_str).unwrap_or("");
    let mut manifest = RunManifest::new(name, argv, cli.threads);
    let start = Instant::now();
    let manifest_file = match &cli.command {
        Command::Synth(a) => synth(a, &mut manifest)?,
        Command::Preprocess(a) => preprocess_cmd(a, &mut manifest)?,
        Command::Train(a) => train_cmd(a, &mut manifest)?,
        Command::Eval(a) => eval(a, &mut manifest)?,
        Command::Attribute(a) => attribute(a, &mut manifest)?,
        Command::Reliability(a) => reliability(a, &mut manifest)?,
        Command::Simulate(a) => simulate(a, &mut manifest)?,
        Command::Baseline(a) => baseline(a, &mut manifest)?,
        Command::ValidateConfig(a) => validate(a, &mut manifest)?,
    };
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    manifest.write(&manifest_file)?;
    Ok(())
}

fn parse<T: std::str::FromStr<Err = tpc_core::Error>>(s: &str) -> Result<T, Failure> {
    s.parse().map_err(Failure::from)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(tpc_core::Error::from)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn load(path: &Path, manifest: &mut RunManifest) -> Result<Dataset, Failure> {
    manifest.input(path)?;
    Ok(load_dataset(path)?)
}

fn synth(a: &SynthArgs, m: &mut RunManifest) -> Result<std::path::PathBuf, Failure> {
    let gen = match &a.gen_config {
        Some(p) => {
            m.input(p)?;
            let text = fs::read_to_string(p)?;
            serde_json::from_str::<GenConfig>(&text).map_err(|e| Failure::validation(format!("{}: {e}", p.display())))?
        }
        None => GenConfig::default(),
    };
    gen.validate()?;
    if a.patients == 0 {
        return Err(Failure::validation("--patients must be at least 1"));
    }
    let pcfg = PreprocessConfig {
        split_seed: a.split_seed.unwrap_or(a.seed),
        ..PreprocessConfig::default()
    };
    fs::create_dir_all(&a.out)?;
    let data = synthesize(&a.out, a.patients, a.seed, &gen, &pcfg)?;
    log::info!("wrote {} stays to {}", data.stays.len(), a.out.display());
    m.config = json!({ "generator": gen, "preprocess": pcfg, "patients": a.patients });
    m.seeds.insert("seed".into(), a.seed);
    m.seeds.insert("split_seed".into(), pcfg.split_seed);
    m.output(&a.out)?;
    Ok(manifest_path(&a.out))
}

fn preprocess_cmd(a: &PreprocessArgs, m: &mut RunManifest) -> Result<std::path::PathBuf, Failure> {
    m.input(&a.raw)?;
    let raw = read_raw(&a.raw)?;
    let pcfg = PreprocessConfig {
        split_seed: a.split_seed,
        ..PreprocessConfig::default()
    };
    let data = preprocess(&raw, &pcfg, None)?;
    fs::create_dir_all(&a.out)?;
    tpc_core::ehr::save_dataset(&a.out, &data)?;
    m.config = json!({ "preprocess": pcfg });
    m.seeds.insert("split_seed".into(), a.split_seed);
    m.output(&a.out)?;
    Ok(manifest_path(&a.out))
}

/// Config file merged with command-line overrides, then validated.
fn run_config(a: &TrainArgs, m: &mut RunManifest) -> Result<RunConfig, Failure> {
    if let Some(p) = &a.config {
        m.input(p)?;
    }
    let mut doc = read_config(a.config.as_deref()).map_err(Failure::validation)?;
    let Value::Object(map) = &mut doc else {
        return Err(Failure::validation("config must be a JSON object"));
    };
    let mut set = |k: &str, v: Value| {
        map.insert(k.to_string(), v);
    };
    if let Some(v) = a.seed {
        set("seed", json!(v));
    }
    if let Some(v) = &a.variant {
        set("variant", json!(v));
    }
    if let Some(v) = a.epochs {
        set("epochs", json!(v));
    }
    if let Some(v) = a.batch_size {
        set("batch_size", json!(v));
    }
    if let Some(v) = a.learning_rate {
        set("learning_rate", json!(v));
    }
    if let Some(v) = &a.loss {
        set("loss", json!(v));
    }
    if a.multitask {
        set("multitask", json!(true));
    }
    if let Some(v) = a.alpha {
        set("alpha", json!(v));
    }
    if let Some(v) = a.train_fraction {
        set("train_fraction", json!(v));
    }
    if let Some(v) = &a.feature_subset {
        set("feature_subset", json!(v));
    }
    validate_config(&doc).map_err(|errs| Failure::validation(format!("invalid config:\n  {}", errs.join("\n  "))))
}

fn train_cmd(a: &TrainArgs, m: &mut RunManifest) -> Result<std::path::PathBuf, Failure> {
    let cfg = run_config(a, m)?;
    let data = load(&a.data, m)?;
    fs::create_dir_all(&a.out)?;
    let outcome = train(&data, &cfg.model, &cfg.train)?;
    let ckpt = a.out.join("checkpoint.json");
    outcome.checkpoint.save(&ckpt)?;
    write_history(&a.out.join("history.csv"), &outcome.history)?;
    write_json(&a.out.join("config.json"), &cfg.to_flat())?;
    m.config = serde_json::to_value(&cfg).map_err(tpc_core::Error::from)?;
    m.seeds.insert("seed".into(), cfg.train.seed);
    m.output(&a.out)?;
    let path = manifest_path(&a.out);
    if let Some(msg) = outcome.diverged {
        m.wall_seconds = 0.0;
        m.write(&path)?;
        return Err(Failure {
            code: EXIT_RUNTIME,
            message: format!(
                "training diverged ({msg}); kept the checkpoint from epoch {}",
                outcome.checkpoint.epoch
            ),
        });
    }
    Ok(path)
}

fn split_of(s: &SourceArgs) -> Result<Split, Failure> {
    parse(&s.split)
}

fn checkpoint(path: &Path, m: &mut RunManifest) -> Result<Checkpoint, Failure> {
    m.input(path)?;
    Ok(Checkpoint::load(path)?)
}

fn eval(a: &EvalArgs, m: &mut RunManifest) -> Result<std::path::PathBuf, Failure> {
    let split = split_of(&a.source)?;
    let ckpt = checkpoint(&a.checkpoint, m)?;
    let data = load(&a.source.data, m)?;
    let report = evaluate_predictions(&predict_split(&ckpt, &data, split, 32)?)?;
    write_json(&a.source.out, &report)?;
    m.config = json!({ "split": split.name() });
    m.output(&a.source.out)?;
    Ok(manifest_path(&a.source.out))
}

fn attribute(a: &AttributeArgs, m: &mut RunManifest) -> Result<std::path::PathBuf, Failure> {
    let split = split_of(&a.source)?;
    let ckpt = checkpoint(&a.checkpoint, m)?;
    let full = load(&a.source.data, m)?;
    let data = full.select_features(ckpt.feature_subset)?;
    ckpt.check_dataset(&data.meta.feature_order_hash())?;
    let model = ckpt.model()?;
    let mut stays: Vec<_> = data.split(split).into_iter().filter(|s| s.hours() >= a.hour).collect();
    if let Some(k) = a.max_stays {
        stays.truncate(k);
    }
    let per_stay = attribute_cohort(&model, &stays, &data.meta.fill, a.steps, a.hour)?;
    let result = aggregate_attributions(&data.meta.feature_names(), &per_stay)?;
    write_attributions(&a.source.out, &result)?;
    m.config = json!({ "split": split.name(), "steps": a.steps, "hour": a.hour, "stays": per_stay.len() });
    m.output(&a.source.out)?;
    Ok(manifest_path(&a.source.out))
}

fn predictions(p: &PredictorArgs, source: &SourceArgs, m: &mut RunManifest) -> Result<(PredictionSet, Value), Failure> {
    let split = split_of(source)?;
    let data = load(&source.data, m)?;
    match (&p.checkpoint, &p.baseline) {
        (Some(c), _) => {
            let ckpt = checkpoint(c, m)?;
            Ok((predict_split(&ckpt, &data, split, 32)?, json!({ "split": split.name() })))
        }
        (None, Some(kind)) => {
            let kind: BaselineKind = parse(kind)?;
            let pred = fit_baseline(kind, &data.split(Split::Train), tpc_core::ehr::FIRST_LABELLED_HOUR)?;
            let set = collect_predictions(&pred, &data.split(split), tpc_core::ehr::FIRST_LABELLED_HOUR, 64)?;
            Ok((set, json!({ "split": split.name(), "baseline": pred })))
        }
        (None, None) => Err(Failure::validation("give --checkpoint or --baseline")),
    }
}

fn reliability(a: &ReliabilityArgs, m: &mut RunManifest) -> Result<std::path::PathBuf, Failure> {
    let (set, config) = predictions(&a.predictor, &a.source, m)?;
    write_reliability(&a.source.out, &reliability_grid(&set))?;
    m.config = config;
    m.output(&a.source.out)?;
    Ok(manifest_path(&a.source.out))
}

fn simulate(a: &SimulateArgs, m: &mut RunManifest) -> Result<std::path::PathBuf, Failure> {
    let (set, mut config) = predictions(&a.predictor, &a.source, m)?;
    let est = estimates_at(&set, SIMULATION_START_HOUR);
    let sim = simulate_icu(&est, a.runs, a.cohort, a.seed)?;
    write_simulation(&a.source.out, &sim.curve)?;
    if let Value::Object(map) = &mut config {
        map.insert("runs".into(), json!(a.runs));
        map.insert("cohort".into(), json!(a.cohort));
    }
    m.config = config;
    m.seeds.insert("seed".into(), a.seed);
    m.output(&a.source.out)?;
    Ok(manifest_path(&a.source.out))
}

fn baseline(a: &BaselineArgs, m: &mut RunManifest) -> Result<std::path::PathBuf, Failure> {
    let predictor = PredictorArgs {
        checkpoint: None,
        baseline: Some(a.kind.clone()),
    };
    let (set, config) = predictions(&predictor, &a.source, m)?;
    write_json(&a.source.out, &evaluate_predictions(&set)?)?;
    m.config = config;
    m.output(&a.source.out)?;
    Ok(manifest_path(&a.source.out))
}

fn validate(a: &ValidateConfigArgs, m: &mut RunManifest) -> Result<std::path::PathBuf, Failure> {
    if let Some(p) = &a.config {
        m.input(p)?;
    }
    let doc = read_config(a.config.as_deref()).map_err(Failure::validation)?;
    let cfg = validate_config(&doc).map_err(|errs| Failure::validation(format!("invalid config:\n  {}", errs.join("\n  "))))?;
    let flat = cfg.to_flat();
    write_json(&a.out, &flat)?;
    m.config = Value::Object(flat);
    m.output(&a.out)?;
    Ok(manifest_path(&a.out))
}
