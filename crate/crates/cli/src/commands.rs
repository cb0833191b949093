use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use aact_core::counterfactual::EngineParams;
use aact_core::dataset::{self, SplitOptions, DEFAULT_BINS};
use aact_core::metrics::{intervention_only, learning_report, reliance, LearningReport, RelianceReport, TaskOutcome};
use aact_core::model::{self, Evaluation, TrainingConfig};
use aact_core::study::Study;
use aact_core::workflow::{Clock, Mode, Transcript};
use aact_core::{Argument, Critique, Engine, FeatureSchema, Instance};
use aact_service::client::RouterClient;
use aact_service::simulate::{simulate, HumanModel, Policy, SimulationConfig};
use aact_service::{router, ServiceConfig, SessionStore};
use serde::{Deserialize, Serialize};

use crate::args::{AnalyzeArgs, Command, EvaluateArgs, Format, ScoreArgs, ServeArgs, SimulateArgs, TrainArgs};
use crate::report::{num, opt, render, Table};
use crate::settings::FileConfig;
use crate::{runtime, Cli, CliError};

/// Runs one parsed command and returns what it prints on stdout.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Train(args) => train(&file, args),
        Command::Evaluate(args) => evaluate(&file, args),
        Command::Analyze(args) => analyze(&file, args),
        Command::Serve(args) => serve(&file, args).map(|_| String::new()),
        Command::Simulate(args) => simulate_command(&file, args),
        Command::Score(args) => score(&file, args),
    }
}

/// The stderr line naming the command and every value that shapes its
/// output.
pub fn header(command: &str, seed: u64, params: &EngineParams) -> String {
    format!(
        "# aact {command} seed={seed} epsilon={} k={} L={} mu={}",
        params.epsilon, params.k, params.l, params.mu
    )
}

fn name_of<T: Serialize>(value: &T) -> String {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

fn load_study(file: &FileConfig, model: &crate::args::ModelArgs) -> Result<Study, CliError> {
    let (model, data) = file.model_paths(model)?;
    Study::load(&model, &data).map_err(runtime)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub model: PathBuf,
    pub split: SplitOptions,
    pub bins: usize,
    pub train_rows: usize,
    pub iterations: usize,
    pub evaluation: Evaluation,
}

fn evaluation_table(eval: &Evaluation) -> Table {
    let mut table = Table::new(["metric", "value"]);
    table.push(["rows".to_string(), eval.rows.to_string()]);
    table.push(["accuracy".to_string(), num(eval.accuracy)]);
    table.push(["balanced_accuracy".to_string(), num(eval.balanced_accuracy)]);
    for s in &eval.f1 {
        table.push([format!("f1:{}", s.class), num(s.value)]);
    }
    for s in &eval.recall {
        table.push([format!("recall:{}", s.class), num(s.value)]);
    }
    table
}

pub fn train(file: &FileConfig, args: &TrainArgs) -> Result<String, CliError> {
    let data_path = file.data(&args.data)?;
    let schema_path = file.schema(&args.data, &data_path);
    let split = SplitOptions {
        ratio: args.split.or(file.split).unwrap_or(0.8),
        seed: file.seed(args.seed),
        stratify: args.stratify,
    };
    if !(split.ratio > 0.0 && split.ratio < 1.0) {
        return Err(CliError::Validation(format!("--split {} outside (0, 1)", split.ratio)));
    }
    let bins = args.bins.or(file.bins).unwrap_or(DEFAULT_BINS);
    if bins == 0 {
        return Err(CliError::Validation("--bins must be at least 1".into()));
    }
    let out = args
        .out
        .clone()
        .or_else(|| file.model.clone())
        .unwrap_or_else(|| PathBuf::from("model.json"));
    eprintln!(
        "# aact train seed={} split={} stratify={} bins={} data={}",
        split.seed,
        split.ratio,
        split.stratify,
        bins,
        data_path.display()
    );

    let schema = FeatureSchema::from_toml_file(&schema_path).map_err(runtime)?;
    let data = dataset::load_dataset(&data_path, &schema).map_err(runtime)?;
    let (train_set, test) = dataset::prepare(&data, &split, bins).map_err(runtime)?;
    let config = TrainingConfig {
        seed: split.seed,
        ..TrainingConfig::default()
    };
    let mut classifier = model::train(&train_set, &config).map_err(runtime)?;
    classifier.set_split(split, bins);
    classifier.save(&out).map_err(runtime)?;
    let evaluation = model::evaluate(&classifier, &test).map_err(runtime)?;
    tracing::info!(path = %out.display(), "model saved");

    let report = TrainReport {
        model: out,
        split,
        bins,
        train_rows: train_set.len(),
        iterations: classifier.training_meta().map_or(0, |m| m.iterations),
        evaluation,
    };
    render(args.format, &evaluation_table(&report.evaluation), &report)
}

pub fn evaluate(file: &FileConfig, args: &EvaluateArgs) -> Result<String, CliError> {
    let study = load_study(file, &args.model)?;
    let split = study.split();
    eprintln!("# aact evaluate seed={} split={}", split.seed, split.ratio);
    let eval = model::evaluate(study.engine.classifier(), &study.test).map_err(runtime)?;
    render(args.format, &evaluation_table(&eval), &eval)
}

/// One line of `aact analyze --records`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeRecord {
    pub task_id: String,
    pub decision: String,
    #[serde(default)]
    pub argument: Vec<String>,
}

/// Importance-based strongest argument next to the exhaustive one, for one
/// alternative decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub alt_decision: String,
    pub importance_argument: Option<Vec<String>>,
    pub importance_confidence: Option<f64>,
    pub exact_argument: Vec<String>,
    pub exact_confidence: f64,
    /// `exact_confidence - importance_confidence`; absent when no feature
    /// passed the importance threshold.
    pub gap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeResult {
    pub task_id: String,
    pub critique: Critique,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<Vec<OracleRow>>,
}

pub fn oracle_rows(
    engine: &Engine,
    task: &Instance,
    decision: usize,
    params: &EngineParams,
) -> Result<Vec<OracleRow>, CliError> {
    let schema = engine.schema();
    let mut rows = Vec::new();
    for alt in (0..schema.num_classes()).filter(|&c| c != decision) {
        let (exact, exact_confidence) = engine.exact_strongest_argument(task, alt, params).map_err(runtime)?;
        let heuristic = engine.strongest_argument(task, alt, params).map_err(runtime)?;
        let importance_confidence = match &heuristic {
            Some(arg) => Some(engine.marginal_confidence(task, alt, arg, params).map_err(runtime)?),
            None => None,
        };
        rows.push(OracleRow {
            alt_decision: schema.class_name(alt).to_string(),
            importance_argument: heuristic.map(|a| a.names(schema)),
            importance_confidence,
            exact_argument: exact.names(schema),
            exact_confidence,
            gap: importance_confidence.map(|c| exact_confidence - c),
        });
    }
    Ok(rows)
}

/// Critiques each record against the task with the same id in `tasks`.
pub fn analyze_records(
    engine: &Engine,
    tasks: &[&[Instance]],
    records: &[AnalyzeRecord],
    params: &EngineParams,
    exact_oracle: bool,
) -> Result<Vec<AnalyzeResult>, CliError> {
    let schema = engine.schema();
    records
        .iter()
        .enumerate()
        .map(|(line, record)| {
            let at = |msg: String| CliError::Runtime(format!("record {}: {msg}", line + 1));
            let task = tasks
                .iter()
                .find_map(|rows| rows.iter().find(|r| r.id == record.task_id))
                .ok_or_else(|| at(format!("unknown task `{}`", record.task_id)))?;
            let decision = schema
                .class_index(&record.decision)
                .ok_or_else(|| at(format!("unknown class `{}`", record.decision)))?;
            let argument = Argument::from_names(schema, &record.argument).map_err(|e| at(e.to_string()))?;
            let critique = engine
                .identify_issues(task, decision, &argument, params)
                .map_err(|e| at(e.to_string()))?;
            let oracle = if exact_oracle {
                Some(oracle_rows(engine, task, decision, params)?)
            } else {
                None
            };
            Ok(AnalyzeResult {
                task_id: record.task_id.clone(),
                critique,
                oracle,
            })
        })
        .collect()
}

pub fn read_records(reader: impl BufRead) -> Result<Vec<AnalyzeRecord>, CliError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(runtime)?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| CliError::Validation(format!("records line {}: {e}", i + 1)))?;
        records.push(record);
    }
    Ok(records)
}

pub fn analyze(file: &FileConfig, args: &AnalyzeArgs) -> Result<String, CliError> {
    let params = file.params(&args.params)?;
    let records = match &args.records {
        Some(path) if path != Path::new("-") => {
            let f = std::fs::File::open(path)
                .map_err(|e| CliError::Runtime(format!("cannot open {}: {e}", path.display())))?;
            read_records(std::io::BufReader::new(f))?
        }
        _ => read_records(std::io::stdin().lock())?,
    };
    let study = load_study(file, &args.model)?;
    eprintln!("{}", header("analyze", params.seed, &params));
    let results = analyze_records(
        &study.engine,
        &[study.test.rows(), study.engine.train().rows()],
        &records,
        &params,
        args.exact_oracle,
    )?;

    if args.format == Format::Json {
        let mut out = String::new();
        for r in &results {
            out.push_str(&serde_json::to_string(r).map_err(runtime)?);
            out.push('\n');
        }
        return Ok(out);
    }
    let mut table = Table::new([
        "task_id",
        "decision",
        "p_m",
        "reliable",
        "missing",
        "unreliable",
        "conflicts",
        "max_gap",
    ]);
    let names = |flags: &[aact_core::counterfactual::IssueFlag]| {
        flags.iter().map(|f| f.feature.as_str()).collect::<Vec<_>>().join("; ")
    };
    for r in &results {
        let c = &r.critique;
        let gap = r
            .oracle
            .as_ref()
            .and_then(|rows| rows.iter().filter_map(|o| o.gap).reduce(f64::max));
        table.push([
            r.task_id.clone(),
            c.decision.clone(),
            num(c.p_m),
            names(&c.agreement),
            names(&c.incompleteness),
            names(&c.unreliability),
            c.conflicts.iter().map(|k| k.alt_decision.as_str()).collect::<Vec<_>>().join("; "),
            opt(gap),
        ]);
    }
    render(args.format, &table, &results)
}

pub fn service_config(file: &FileConfig, args: &ServeArgs) -> Result<ServiceConfig, CliError> {
    let (model, data) = file.model_paths(&args.model)?;
    let defaults = ServiceConfig::default();
    Ok(ServiceConfig {
        model,
        data,
        host: args.host.clone().or_else(|| file.host.clone()).unwrap_or(defaults.host),
        port: args.port.or(file.port).unwrap_or(defaults.port),
        params: file.params(&args.params)?,
        transcripts: args.transcripts.clone().or_else(|| file.transcripts.clone()).or(defaults.transcripts),
        static_dir: args.static_dir.clone(),
        logical_clock: args.logical_clock,
    })
}

pub fn serve(file: &FileConfig, args: &ServeArgs) -> Result<(), CliError> {
    let config = service_config(file, args)?;
    eprintln!("{} port={}", header("serve", config.params.seed, &config.params), config.port);
    let runtime_ = tokio::runtime::Runtime::new().map_err(runtime)?;
    runtime_.block_on(aact_service::serve(config)).map_err(runtime)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationReport {
    pub mode: Mode,
    pub policy: String,
    pub participants: usize,
    pub seed: u64,
    pub sessions: usize,
    pub reliance: RelianceReport,
    pub learning: LearningReport,
}

fn ratio_rows(table: &mut Table, name: &str, r: &aact_core::metrics::Ratio) {
    table.push([
        name.to_string(),
        opt(r.value),
        r.numerator.to_string(),
        r.denominator.to_string(),
    ]);
}

fn reliance_rows(table: &mut Table, report: &RelianceReport) {
    ratio_rows(table, "agreement", &report.agreement);
    ratio_rows(table, "switch", &report.switch);
    ratio_rows(table, "over_reliance", &report.over_reliance);
    ratio_rows(table, "under_reliance", &report.under_reliance);
}

fn learning_rows(table: &mut Table, report: &LearningReport) {
    ratio_rows(table, "pre_test_accuracy", &report.pre_test);
    ratio_rows(table, "intervention_accuracy", &report.intervention);
    ratio_rows(table, "post_test_accuracy", &report.post_test);
    table.push(["learning_during".to_string(), num(report.during), String::new(), String::new()]);
    table.push(["learning_after".to_string(), num(report.after), String::new(), String::new()]);
}

pub fn simulate_command(file: &FileConfig, args: &SimulateArgs) -> Result<String, CliError> {
    let params = file.params(&args.params)?;
    let policy: Policy = args.policy.parse().map_err(|e| CliError::Validation(format!("{e}")))?;
    let mode: Mode = args.mode.parse().map_err(|e| CliError::Validation(format!("{e}")))?;
    if !(0.0..=1.0).contains(&args.human_accuracy) {
        return Err(CliError::Validation(format!("--human-accuracy {} outside [0, 1]", args.human_accuracy)));
    }
    if args.participants == 0 {
        return Err(CliError::Validation("--participants must be at least 1".into()));
    }
    let seed = file.seed(args.seed);
    let study = load_study(file, &args.model)?;
    eprintln!("{} policy={policy} mode={mode} participants={}", header("simulate", seed, &params), args.participants);

    let pool = study.test.rows().to_vec();
    let engine = Arc::new(study.engine);
    let mut store = SessionStore::new(engine.clone(), pool.clone(), params).with_clock(Clock::Logical);
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).map_err(runtime)?;
        store = store.with_sink(dir);
    }
    let store = Arc::new(store);
    let config = SimulationConfig {
        mode,
        policy,
        participants: args.participants,
        seed,
        human: HumanModel {
            accuracy: args.human_accuracy,
            ..HumanModel::default()
        },
        params: None,
    };
    let ids = if args.http {
        let mut client = RouterClient::new(router(store.clone())).map_err(runtime)?;
        simulate(&mut client, &engine, &pool, &config)
    } else {
        let mut backend = store.as_ref();
        simulate(&mut backend, &engine, &pool, &config)
    }
    .map_err(runtime)?;

    let outcomes = ids
        .iter()
        .map(|id| {
            let t = store.transcript(id).map_err(runtime)?;
            TaskOutcome::from_transcript(&t).map_err(runtime)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let report = SimulationReport {
        mode,
        policy: policy.to_string(),
        participants: args.participants,
        seed,
        sessions: ids.len(),
        reliance: reliance(&intervention_only(&outcomes)).map_err(runtime)?,
        learning: learning_report(&outcomes).map_err(runtime)?,
    };
    let mut table = Table::new(["metric", "value", "numerator", "denominator"]);
    reliance_rows(&mut table, &report.reliance);
    learning_rows(&mut table, &report.learning);
    render(args.format, &table, &report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreReport {
    pub outcomes: Vec<TaskOutcome>,
    /// Transcripts that could not be scored, with the reason.
    pub skipped: Vec<(String, String)>,
    /// Over intervention (and untagged) tasks.
    pub reliance: Option<RelianceReport>,
    /// Present when pre-test, intervention and post-test tasks all occur.
    pub learning: Option<LearningReport>,
}

/// Every `*.jsonl` transcript in `dir`, in file-name order.
pub fn score_dir(dir: &Path) -> Result<ScoreReport, CliError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    let mut outcomes = Vec::new();
    let mut skipped = Vec::new();
    for path in paths {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let outcome = Transcript::read_jsonl(&path)
            .map_err(|e| e.to_string())
            .and_then(|t| TaskOutcome::from_transcript(&t).map_err(|e| e.to_string()));
        match outcome {
            Ok(o) => outcomes.push(o),
            Err(reason) => {
                tracing::warn!(file = %name, %reason, "skipping transcript");
                skipped.push((name, reason));
            }
        }
    }
    let reliance = reliance(&intervention_only(&outcomes)).ok();
    let learning = learning_report(&outcomes).ok();
    Ok(ScoreReport {
        outcomes,
        skipped,
        reliance,
        learning,
    })
}

/// One row per session, then `ALL` rows carrying the aggregate measures.
pub fn score_table(report: &ScoreReport) -> Table {
    let mut table = Table::new([
        "session_id",
        "participant",
        "mode",
        "stage",
        "task_id",
        "ai_prediction",
        "ground_truth",
        "human_initial",
        "human_final",
        "value",
    ]);
    for o in &report.outcomes {
        table.push([
            o.session_id.clone().unwrap_or_default(),
            o.participant.clone().unwrap_or_default(),
            o.mode.map(|m| m.to_string()).unwrap_or_default(),
            o.stage_tag.map(|t| name_of(&t)).unwrap_or_default(),
            o.task_id.clone(),
            o.ai_prediction.clone(),
            o.ground_truth.clone(),
            o.human_initial.clone(),
            o.human_final.clone(),
            String::new(),
        ]);
    }
    let mut aggregate = |metric: &str, value: String| {
        let mut row = vec![String::new(); 10];
        row[0] = "ALL".into();
        row[4] = metric.into();
        row[9] = value;
        table.push(row);
    };
    if let Some(r) = &report.reliance {
        for (name, ratio) in [
            ("agreement", &r.agreement),
            ("switch", &r.switch),
            ("over_reliance", &r.over_reliance),
            ("under_reliance", &r.under_reliance),
        ] {
            aggregate(name, opt(ratio.value));
        }
    }
    if let Some(l) = &report.learning {
        aggregate("learning_during", num(l.during));
        aggregate("learning_after", num(l.after));
    }
    table
}

pub fn score(file: &FileConfig, args: &ScoreArgs) -> Result<String, CliError> {
    let dir = args
        .transcripts
        .clone()
        .or_else(|| file.transcripts.clone())
        .unwrap_or_else(|| PathBuf::from("transcripts"));
    eprintln!("# aact score transcripts={}", dir.display());
    let report = score_dir(&dir)?;
    let table = score_table(&report);
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).map_err(runtime)?;
        std::fs::write(out.join("metrics.csv"), table.to_csv()?).map_err(runtime)?;
        std::fs::write(out.join("metrics.json"), render(Format::Json, &table, &report)?).map_err(runtime)?;
    }
    render(args.format, &table, &report)
}
