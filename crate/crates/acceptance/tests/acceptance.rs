//! The acceptance criteria, one line each. Run with
//! `cargo test -p acceptance --test acceptance`.

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use aact_core::counterfactual::{Critique, EngineParams, IssueKind};
use aact_core::dataset::{empirical_confidence, load_dataset, prepare, SamplingMode, SplitOptions, DEFAULT_BINS};
use aact_core::metrics::{normalized_change, reliance, TaskOutcome};
use aact_core::model::{evaluate, train, TrainingConfig};
use aact_core::study::Study;
use aact_core::synthetic::{binary_engine, binary_engine_with_rows, binary_instance, factorial};
use aact_core::template::{self, join_features, percent, Slots};
use aact_core::workflow::{
    audit, replay, Clock, Event, ExpectedInput, HumanState, MessagePayload, Mode, ReflectionTarget, Session,
    SessionOptions, StageTag, Step, Transcript, UpdateRequest, NOT_AVAILABLE,
};
use aact_core::{Argument, Engine, FeatureSchema, Instance};
use aact_service::client::RouterClient;
use aact_service::simulate::{run_session, Backend, HumanModel, Policy};
use aact_service::store::CreateSession;
use aact_service::{router, SessionStore};
use acceptance::{run, verdict, Verdict};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn ames_data() -> aact_core::Dataset {
    let schema = FeatureSchema::from_toml_file(data_dir().join("ames_schema.toml")).unwrap();
    load_dataset(data_dir().join("ames.csv"), &schema).unwrap()
}

/// The Ames engine on the default split and its held-out rows.
fn ames() -> (Arc<Engine>, Vec<Instance>) {
    static CELL: OnceLock<(Arc<Engine>, Vec<Instance>)> = OnceLock::new();
    CELL.get_or_init(|| {
        let data = ames_data();
        let split = SplitOptions::default();
        let (train_set, _) = prepare(&data, &split, DEFAULT_BINS).unwrap();
        let mut model = train(&train_set, &TrainingConfig::default()).unwrap();
        model.set_split(split, DEFAULT_BINS);
        let study = Study::from_parts(model, &data).unwrap();
        (Arc::new(study.engine), study.test.rows().to_vec())
    })
    .clone()
}

/// Fifty held-out rows drawn with a fixed seed.
fn ames_sample() -> Vec<Instance> {
    let (_, test) = ames();
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mut idx = rand::seq::index::sample(&mut rng, test.len(), 50).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| test[i].clone()).collect()
}

fn exhaustive() -> EngineParams {
    EngineParams {
        sampling_mode: SamplingMode::Exhaustive,
        ..EngineParams::default()
    }
}

// ---------------------------------------------------------------------------
// Independent oracles for binary synthetic models.

fn softmax_prob(effects: &[Vec<f64>], intercepts: &[f64], bits: &[i64], class: usize) -> f64 {
    let scores: Vec<f64> = effects
        .iter()
        .zip(intercepts)
        .map(|(row, b)| b + row.iter().zip(bits).map(|(w, &x)| w * x as f64).sum::<f64>())
        .collect();
    let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - top).exp()).sum();
    (scores[class] - top).exp() / z
}

/// Average model probability over all 2^n completions of the free features.
fn enumerate(effects: &[Vec<f64>], intercepts: &[f64], task: &[i64], argument: &Argument, class: usize) -> f64 {
    let n = task.len();
    let mut total = 0.0;
    for m in 0..1u64 << n {
        let bits: Vec<i64> = (0..n)
            .map(|j| if argument.contains(j) { task[j] } else { ((m >> j) & 1) as i64 })
            .collect();
        total += softmax_prob(effects, intercepts, &bits, class);
    }
    total / (1u64 << n) as f64
}

fn subsets(n: usize) -> impl Iterator<Item = Argument> {
    (0..1u32 << n).map(move |m| (0..n).filter(|j| m & (1 << j) != 0).collect())
}

// ---------------------------------------------------------------------------

fn classifier_reproduction() -> Verdict {
    let start = Instant::now();
    let data = ames_data();
    let (train_set, test) = prepare(&data, &SplitOptions::default(), DEFAULT_BINS).unwrap();
    let model = train(&train_set, &TrainingConfig::default()).unwrap();
    let eval = evaluate(&model, &test).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let mut problems = Vec::new();
    if !(0.85..=0.90).contains(&eval.accuracy) {
        problems.push("accuracy");
    }
    if !(0.76..=0.83).contains(&eval.balanced_accuracy) {
        problems.push("balanced accuracy");
    }
    let reference = [("Low", 0.694), ("Medium", 0.902), ("High", 0.851)];
    let mut f1 = Vec::new();
    for (class, want) in reference {
        let got = eval.f1_of(class).unwrap_or(f64::NAN);
        if got.is_nan() || (got - want).abs() > 0.04 {
            problems.push(class);
        }
        f1.push(format!("{class} {got:.4}"));
    }
    if elapsed >= 30.0 {
        problems.push("runtime");
    }
    verdict(
        problems.is_empty(),
        format!(
            "accuracy {:.4}, balanced {:.4}, F1 [{}], {elapsed:.1}s{}",
            eval.accuracy,
            eval.balanced_accuracy,
            f1.join(", "),
            if problems.is_empty() {
                String::new()
            } else {
                format!("; out of band: {}", problems.join(", "))
            }
        ),
    )
}

fn marginalization_identity() -> Verdict {
    let (engine, _) = ames();
    let full = Argument::full(engine.schema().arity());
    let params = EngineParams::default();
    let mut mismatches = 0;
    let sample = ames_sample();
    for task in &sample {
        let dist = engine.classifier().predict_proba(task).unwrap();
        for class in 0..engine.schema().num_classes() {
            let got = engine.marginal_confidence(task, class, &full, &params).unwrap();
            if got.to_bits() != dist.get(class).to_bits() {
                mismatches += 1;
            }
        }
    }
    verdict(
        mismatches == 0,
        format!("{} instances x 3 classes, {mismatches} bitwise mismatches", sample.len()),
    )
}

fn monte_carlo_accuracy() -> Verdict {
    let start = Instant::now();
    let effects = vec![
        vec![1.5, -0.8, 0.6, 0.2],
        vec![-0.4, 1.1, -0.3, 1.4],
        vec![0.2, 0.3, -1.2, -0.9],
    ];
    let intercepts = [0.2, -0.1, 0.0];
    let engine = binary_engine(&["A", "B", "C"], &effects, &intercepts).unwrap();
    let sampled = EngineParams::default();
    let mut worst_mc: f64 = 0.0;
    let mut worst_exact: f64 = 0.0;
    let mut pairs = 0;
    for task_bits in [[1, 0, 1, 1], [0, 1, 1, 0]] {
        let task = binary_instance("mc", &task_bits, None);
        for argument in subsets(4) {
            for class in 0..3 {
                let want = enumerate(&effects, &intercepts, &task_bits, &argument, class);
                let mc = engine.marginal_confidence(&task, class, &argument, &sampled).unwrap();
                let exact = engine.marginal_confidence(&task, class, &argument, &exhaustive()).unwrap();
                worst_mc = worst_mc.max((mc - want).abs());
                worst_exact = worst_exact.max((exact - want).abs());
                pairs += 1;
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        worst_mc <= 0.02 && worst_exact <= 1e-12 && elapsed < 60.0,
        format!(
            "{pairs} (task, class, argument) pairs, max |MC - exact| {worst_mc:.4} (L = {}), max |exhaustive - exact| {worst_exact:.1e}",
            sampled.l
        ),
    )
}

/// Recomputes a critique from the enumeration oracle and lists every rule
/// it breaks.
fn critique_violations(
    effects: &[Vec<f64>],
    intercepts: &[f64],
    task: &[i64],
    c: &Critique,
    params: &EngineParams,
) -> Vec<String> {
    let mut out = Vec::new();
    let arg = &c.argument;
    let d = c.decision_index;
    let eps = params.epsilon;
    let base = enumerate(effects, intercepts, task, arg, d);
    if (c.p_m - base).abs() > 1e-12 {
        out.push(format!("p_m {} vs {base}", c.p_m));
    }
    let mut seen = vec![0usize; task.len()];
    let lists = [
        (&c.agreement, "agreement"),
        (&c.incompleteness, "incompleteness"),
        (&c.unreliability, "unreliability"),
        (&c.suppressed, "suppressed"),
    ];
    for (flags, list) in lists {
        for f in flags.iter() {
            let j = f.feature_index;
            seen[j] += 1;
            let inside = arg.contains(j);
            let moved = if inside { arg.without(j) } else { arg.with(j) };
            let delta = enumerate(effects, intercepts, task, &moved, d) - base;
            if (delta - f.delta).abs() > 1e-12 {
                out.push(format!("{}: delta {} vs {delta}", f.feature, f.delta));
            }
            let rule_holds = match f.kind {
                IssueKind::MissingSupporting => !inside && delta > eps && list == "incompleteness",
                IssueKind::MissingOpposing => !inside && delta < -eps && list == "incompleteness",
                IssueKind::Unreliable => inside && delta > eps && list == "unreliability",
                IssueKind::Reliable => inside && delta < -eps && list == "agreement",
                IssueKind::Irrelevant => inside && delta.abs() <= eps && list == "suppressed",
            };
            if !rule_holds {
                out.push(format!("{}: {:?} in {list} with delta {delta}", f.feature, f.kind));
            }
        }
    }
    for (j, count) in seen.iter().enumerate() {
        let moved = if arg.contains(j) { arg.without(j) } else { arg.with(j) };
        let delta = enumerate(effects, intercepts, task, &moved, d) - base;
        let expected = if arg.contains(j) { 1 } else { usize::from(delta.abs() > eps) };
        if *count != expected {
            out.push(format!("feature {j} flagged {count} times, expected {expected}"));
        }
    }
    let chance = 1.0 / effects.len() as f64;
    if c.conflicts.len() > params.k {
        out.push(format!("{} conflicts with k = {}", c.conflicts.len(), params.k));
    }
    for pair in c.conflicts.windows(2) {
        if pair[0].confidence < pair[1].confidence {
            out.push("conflicts not in descending order".into());
        }
    }
    for k in &c.conflicts {
        let p = enumerate(effects, intercepts, task, &k.argument, k.alt_index);
        if k.alt_index == d || k.argument.is_empty() || (p - k.confidence).abs() > 1e-12 || p <= chance {
            out.push(format!("conflict {} at {} (oracle {p})", k.alt_decision, k.confidence));
        }
    }
    out
}

fn table3_soundness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = Vec::new();
    let (mut flags, mut conflicts) = (0, 0);
    for i in 0..50 {
        let classes = if i % 2 == 0 { vec!["A", "B", "C"] } else { vec!["A", "B"] };
        let n = rng.random_range(2..=5);
        let effects: Vec<Vec<f64>> = classes
            .iter()
            .map(|_| (0..n).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let intercepts: Vec<f64> = classes.iter().map(|_| rng.random_range(-0.5..0.5)).collect();
        let engine = binary_engine(&classes, &effects, &intercepts).unwrap();
        let task: Vec<i64> = (0..n).map(|_| rng.random_range(0..=1)).collect();
        let argument: Argument = (0..n).filter(|_| rng.random_bool(0.5)).collect();
        let decision = rng.random_range(0..classes.len());
        let params = EngineParams {
            k: rng.random_range(1..=2),
            ..exhaustive()
        };
        let critique = engine
            .identify_issues(&binary_instance("t", &task, None), decision, &argument, &params)
            .unwrap();
        flags += critique.flags().count();
        conflicts += critique.conflicts.len();
        violations.extend(
            critique_violations(&effects, &intercepts, &task, &critique, &params)
                .into_iter()
                .map(|v| format!("critique {i}: {v}")),
        );
    }
    verdict(
        violations.is_empty(),
        format!(
            "50 critiques, {flags} flags and {conflicts} conflicts recomputed, {} violations{}",
            violations.len(),
            violations.first().map(|v| format!(" (first: {v})")).unwrap_or_default()
        ),
    )
}

fn argument_search_oracle() -> Verdict {
    let (engine, _) = ames();
    let params = EngineParams::default();
    let n = engine.schema().arity();
    let mut dominance_failures = 0;
    let mut oracle_mismatches = 0;
    let mut empty_heuristic = 0;
    let mut gaps = Vec::new();
    for task in ames_sample() {
        let predicted = engine.classifier().predict(&task).unwrap();
        let mut instance_gap: f64 = 0.0;
        for alt in (0..engine.schema().num_classes()).filter(|&c| c != predicted) {
            // enumeration oracle over all 2^n - 1 non-empty subsets
            let mut best: Option<(Argument, f64)> = None;
            for subset in subsets(n).filter(|s| !s.is_empty()) {
                let v = engine.marginal_confidence(&task, alt, &subset, &params).unwrap();
                let key = |a: &Argument| (a.len(), a.iter().collect::<Vec<_>>());
                let better = match &best {
                    None => true,
                    Some((b, bv)) => v > *bv || (v == *bv && key(&subset) < key(b)),
                };
                if better {
                    best = Some((subset, v));
                }
            }
            let (oracle_arg, oracle_value) = best.unwrap();
            let (exact_arg, exact_value) = engine.exact_strongest_argument(&task, alt, &params).unwrap();
            if exact_arg != oracle_arg || exact_value.to_bits() != oracle_value.to_bits() {
                oracle_mismatches += 1;
            }
            // with no feature above mu the search offers no argument, which
            // leaves the model at its no-evidence confidence
            let achieved = match engine.strongest_argument(&task, alt, &params).unwrap() {
                Some(arg) => {
                    let v = engine.marginal_confidence(&task, alt, &arg, &params).unwrap();
                    if exact_value < v {
                        dominance_failures += 1;
                    }
                    v
                }
                None => {
                    empty_heuristic += 1;
                    engine.marginal_confidence(&task, alt, &Argument::empty(), &params).unwrap()
                }
            };
            instance_gap = instance_gap.max(exact_value - achieved);
        }
        gaps.push(instance_gap);
    }
    gaps.sort_by(|a, b| a.total_cmp(b));
    let within = gaps.iter().filter(|g| **g <= 0.15).count();
    let share = within as f64 / gaps.len() as f64;
    let q = |p: f64| gaps[((gaps.len() - 1) as f64 * p).round() as usize];
    let detail = format!(
        "dominance failures {dominance_failures}, oracle mismatches {oracle_mismatches}; gap <= 0.15 on {within}/{} ({:.0}%, target >= 90%); gap quantiles min {:.3} p25 {:.3} p50 {:.3} p75 {:.3} p90 {:.3} max {:.3}; {empty_heuristic}/{} alternatives had no feature above mu",
        gaps.len(),
        share * 100.0,
        q(0.0),
        q(0.25),
        q(0.5),
        q(0.75),
        q(0.9),
        q(1.0),
        gaps.len() * 2,
    );
    verdict(dominance_failures == 0 && oracle_mismatches == 0 && share >= 0.9, detail)
}

// ---------------------------------------------------------------------------
// Workflow property suite.

struct Pool {
    store: SessionStore,
    engine: Arc<Engine>,
    tasks: Vec<Instance>,
    params: Option<EngineParams>,
}

fn synthetic_pool(classes: &[&str], effects: &[Vec<f64>], params: EngineParams, only: Option<&[i64]>) -> Pool {
    let engine = Arc::new(binary_engine(classes, effects, &vec![0.0; classes.len()]).unwrap());
    let tasks: Vec<Instance> = engine
        .train()
        .rows()
        .iter()
        .filter(|r| only.is_none_or(|bits| r.values == binary_instance("", bits, None).values))
        .cloned()
        .collect();
    Pool {
        store: SessionStore::new(engine.clone(), tasks.clone(), params.clone()).with_clock(Clock::Logical),
        engine,
        tasks,
        params: Some(params),
    }
}

fn workflow_properties() -> Verdict {
    let (ames_engine, ames_tasks) = ames();
    let ames_params = EngineParams {
        l: 1000,
        ..EngineParams::default()
    };
    let pools = [
        Pool {
            store: SessionStore::new(ames_engine.clone(), ames_tasks.clone(), ames_params.clone())
                .with_clock(Clock::Logical),
            engine: ames_engine,
            tasks: ames_tasks,
            params: None,
        },
        // every stage can be populated
        synthetic_pool(
            &["A", "B"],
            &[vec![3.0, -3.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 3.0]],
            exhaustive(),
            None,
        ),
        // a uniform model: every critique is empty
        synthetic_pool(&["A", "B", "C"], &[vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]], exhaustive(), None),
        // with epsilon 0.5 only the conflict survives
        synthetic_pool(
            &["A", "B"],
            &[vec![0.0], vec![3.0]],
            EngineParams {
                epsilon: 0.5,
                ..exhaustive()
            },
            Some(&[1]),
        ),
    ];
    let shares = [80, 40, 40, 40];
    let policies = [
        Policy::AlwaysKeep,
        Policy::AlwaysAdopt,
        Policy::Threshold(0.05),
        Policy::Threshold(0.2),
    ];
    let modes = [
        Mode::Aact,
        Mode::Aact,
        Mode::Aact,
        Mode::Aact,
        Mode::Aact,
        Mode::Aact,
        Mode::Aact,
        Mode::Recommender,
        Mode::Analyzer,
        Mode::HumanOnly,
    ];
    let mut violations = Vec::new();
    let (mut sessions, mut empty, mut conflict_only, mut visited) = (0, 0, 0, 0);
    for (pool, share) in pools.iter().zip(shares) {
        for i in 0..share {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + sessions as u64);
            let mut params = pool.params.clone();
            if i % 5 == 4 {
                let mut p = params.unwrap_or_else(|| ames_params.clone());
                p.k = 2;
                params = Some(p);
            }
            let request = CreateSession {
                mode: modes[i % modes.len()],
                include_agreement: Some(i % 3 != 2),
                participant: Some(format!("p{sessions}")),
                params,
                ..CreateSession::default()
            };
            let task = &pool.tasks[rng.random_range(0..pool.tasks.len())];
            let policy = policies[i % policies.len()];
            let mut backend = &pool.store;
            let id = run_session(&mut backend, &request, task, policy, &HumanModel::default(), &mut rng).unwrap();
            let t = pool.store.transcript(&id).unwrap();
            sessions += 1;

            if !t.is_complete() {
                violations.push(format!("{id}: not terminated"));
            }
            violations.extend(audit(&t).into_iter().map(|v| format!("{id}: {v:?}")));
            match replay(pool.engine.clone(), &t, Clock::Logical) {
                Ok(again) if again == t => {}
                Ok(_) => violations.push(format!("{id}: replay differs")),
                Err(e) => violations.push(format!("{id}: replay failed: {e}")),
            }
            let first = t.events().iter().find_map(|e| match &e.event {
                Event::Analysis(c) => Some(c.as_ref()),
                _ => None,
            });
            if let Some(c) = first {
                if c.is_empty() {
                    empty += 1;
                } else if !c.conflicts.is_empty()
                    && c.agreement.is_empty()
                    && c.incompleteness.is_empty()
                    && c.unreliability.is_empty()
                {
                    conflict_only += 1;
                }
            }
            visited += t
                .events()
                .iter()
                .filter(|e| matches!(e.event, Event::StageEntered { .. }))
                .count();
        }
    }
    let ok = violations.is_empty() && sessions == 200 && empty > 0 && conflict_only > 0;
    verdict(
        ok,
        format!(
            "{sessions} sessions ({empty} with empty critiques, {conflict_only} conflict-only, {visited} stages visited), {} violations{}",
            violations.len(),
            violations.first().map(|v| format!(" (first: {v})")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------------------

const INC_REFLECT: &str = "How would your confidence change if you added the feature {feature} to your argument?";
const UNR_REFLECT: &str = "How would your confidence change if you removed the feature {feature} from your argument?";
const CONF_REFLECT: &str =
    "What would be your confidence in the alternative prediction {alt} if you only considered the features in {features}?";

fn inc_suggest(feature: &str, points: i64) -> String {
    let (verb, dir) = if points >= 0 { ("strengthen", "increase") } else { ("weaken", "decrease") };
    format!(
        "I think {feature} would {verb} your prediction, because adding the feature to your current evidence would {dir} my confidence in your prediction by {} percentage points.",
        points.abs()
    )
}

fn unr_suggest(feature: &str, points: i64) -> String {
    format!(
        "I believe {feature} may not reliably support your prediction, because removing the feature from your current evidence would increase my confidence in your prediction by {points} percentage points."
    )
}

fn conf_suggest(alt: &str, features: &str, confidence: i64) -> String {
    format!(
        "I think the alternative prediction {alt} might be possible when considering only the features in {features}, as my confidence in {alt} is {confidence}% when focusing only on these features."
    )
}

/// Drives a session, keeping every answer, and returns its transcript.
fn keep_session(engine: Engine, bits: &[i64], decision: &str, argument: &[&str]) -> Transcript {
    let options = SessionOptions {
        mode: Mode::Aact,
        params: exhaustive(),
        clock: Clock::Logical,
        ..SessionOptions::default()
    };
    let mut session = Session::new("golden", Arc::new(engine), binary_instance("g", bits, None), options).unwrap();
    session
        .submit_initial(HumanState {
            decision: decision.into(),
            argument: argument.iter().map(|s| s.to_string()).collect(),
            confidence: 50,
        })
        .unwrap();
    while !session.is_final() {
        match session.awaiting().map(|m| m.expected_input) {
            Some(ExpectedInput::ConfidenceSlider) => session.submit_reflection(60).unwrap(),
            Some(ExpectedInput::UpdateForm) => session.submit_update(UpdateRequest::keep()).unwrap(),
            other => panic!("unexpected input {other:?}"),
        }
    }
    session.transcript().clone()
}

fn template_fidelity() -> Verdict {
    let mut checked = 0;
    let mut mismatches = Vec::new();
    let mut compare = |got: &str, want: String| {
        checked += 1;
        if got != want {
            mismatches.push(format!("{got:?} != {want:?}"));
        }
    };

    // catalog rendering against hand-filled wording
    let slots = |feature: &str, delta: f64| Slots::new().with("feature", feature).with_delta(delta);
    compare(
        &template::render(template::INC_REFLECT, &slots("kitchen quality", 0.0)).unwrap(),
        INC_REFLECT.replace("{feature}", "kitchen quality"),
    );
    compare(
        &template::render(template::INC_SUGGEST, &slots("overall quality", 0.08)).unwrap(),
        inc_suggest("overall quality", 8),
    );
    compare(
        &template::render(template::INC_SUGGEST, &slots("central air", -0.123)).unwrap(),
        inc_suggest("central air", -12),
    );
    compare(
        &template::render(template::UNR_REFLECT, &slots("living area", 0.0)).unwrap(),
        UNR_REFLECT.replace("{feature}", "living area"),
    );
    compare(&template::render(template::UNR_SUGGEST, &slots("X", 0.12)).unwrap(), unr_suggest("X", 12));
    let features = join_features(&["overall quality", "living area"]);
    let conflict = Slots::new()
        .with("alt", "High")
        .with("features", features.clone())
        .with("confidence", percent(0.734).to_string());
    compare(
        &template::render(template::CONF_REFLECT, &conflict).unwrap(),
        CONF_REFLECT.replace("{alt}", "High").replace("{features}", &features),
    );
    compare(
        &template::render(template::CONF_SUGGEST, &conflict).unwrap(),
        conf_suggest("High", &features, 73),
    );

    // and inside live sessions covering every issue type
    let every_stage = keep_session(
        binary_engine(&["A", "B"], &[vec![3.0, -3.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 3.0]], &[0.0, 0.0]).unwrap(),
        &[1, 1, 1, 1],
        "A",
        &["x1", "x2"],
    );
    let supporting = keep_session(
        binary_engine(&["A", "B"], &[vec![0.0, 4.0, 0.0], vec![0.0; 3]], &[0.0, 0.0]).unwrap(),
        &[1, 1, 0],
        "A",
        &["x1"],
    );
    let mut kinds = std::collections::BTreeSet::new();
    for t in [&every_stage, &supporting] {
        for m in t.messages() {
            match (&m.step, &m.payload) {
                (Step::Reflect, MessagePayload::Question { target, .. }) => {
                    let want = match target {
                        ReflectionTarget::Add { feature } => INC_REFLECT.replace("{feature}", feature),
                        ReflectionTarget::Remove { feature } => UNR_REFLECT.replace("{feature}", feature),
                        ReflectionTarget::Alternative { alt, features } => CONF_REFLECT
                            .replace("{alt}", alt)
                            .replace("{features}", &features.join(", ")),
                    };
                    compare(&m.text, want);
                }
                (Step::Suggest, MessagePayload::Flag { flag, .. }) => {
                    let points = (flag.delta * 100.0).round() as i64;
                    let want = match flag.kind {
                        IssueKind::MissingSupporting | IssueKind::MissingOpposing => inc_suggest(&flag.feature, points),
                        IssueKind::Unreliable => unr_suggest(&flag.feature, points),
                        other => format!("no suggestion expected for {other:?}"),
                    };
                    kinds.insert(format!("{:?}", flag.kind));
                    compare(&m.text, want);
                }
                (Step::Suggest, MessagePayload::Conflict { candidate, .. }) => {
                    let confidence = (candidate.confidence * 100.0).round() as i64;
                    kinds.insert("Conflict".into());
                    compare(&m.text, conf_suggest(&candidate.alt_decision, &candidate.features.join(", "), confidence));
                }
                _ => {}
            }
        }
    }
    let all_kinds = kinds.len() == 4;
    verdict(
        mismatches.is_empty() && all_kinds,
        format!(
            "{checked} messages compared, suggestion kinds seen {kinds:?}, {} mismatches{}",
            mismatches.len(),
            mismatches.first().map(|m| format!(" (first: {m})")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------------------

/// (ai, truth, initial, final) for ten intervention tasks.
const FIXTURE: [(&str, &str, &str, &str); 10] = [
    ("M", "M", "M", "M"),
    ("M", "M", "M", "M"),
    ("H", "H", "H", "H"),
    ("L", "L", "L", "L"),
    ("M", "M", "M", "M"),
    ("H", "H", "M", "H"),
    ("M", "L", "L", "M"),
    ("H", "H", "L", "L"),
    ("L", "M", "M", "M"),
    ("M", "M", "M", "H"),
];

fn metrics_fixture() -> Verdict {
    const CLASSES: [&str; 3] = ["L", "M", "H"];
    let class = |name: &str| CLASSES.iter().position(|c| *c == name).unwrap();
    let effects = vec![vec![5.0, 0.0, 0.0], vec![0.0, 5.0, 0.0], vec![0.0, 0.0, 5.0]];
    let engine = Arc::new(binary_engine(&CLASSES, &effects, &[0.0; 3]).unwrap());
    let outcomes: Vec<TaskOutcome> = FIXTURE
        .iter()
        .enumerate()
        .map(|(i, &(ai, truth, initial, last))| {
            let mut bits = [0i64; 3];
            bits[class(ai)] = 1;
            let options = SessionOptions {
                mode: Mode::Recommender,
                stage_tag: Some(StageTag::Intervention),
                clock: Clock::Logical,
                ..SessionOptions::default()
            };
            let task = binary_instance(format!("task-{i}"), &bits, Some(class(truth)));
            let mut session = Session::new(format!("m{i}"), engine.clone(), task, options).unwrap();
            session
                .submit_initial(HumanState {
                    decision: initial.into(),
                    argument: vec![],
                    confidence: 50,
                })
                .unwrap();
            let request = UpdateRequest {
                decision: (initial != last).then(|| last.to_string()),
                ..UpdateRequest::default()
            };
            session.submit_update(request).unwrap();
            TaskOutcome::from_transcript(session.transcript()).unwrap()
        })
        .collect();
    let report = reliance(&outcomes).unwrap();

    // the same ratios counted straight off the fixture
    let follows = FIXTURE.iter().filter(|(ai, _, _, f)| f == ai).count();
    let (mut switch_n, mut switch_d, mut over_n, mut over_d) = (0, 0, 0, 0);
    for (ai, truth, initial, last) in FIXTURE {
        if initial != ai {
            switch_d += 1;
            switch_n += usize::from(last == ai);
        }
        if ai != truth {
            over_d += 1;
            over_n += usize::from(last == ai);
        }
    }
    let counted = (
        follows as f64 / 10.0,
        switch_n as f64 / switch_d as f64,
        over_n as f64 / over_d as f64,
    );
    let got = (
        report.agreement.value.unwrap(),
        report.switch.value.unwrap(),
        report.over_reliance.value.unwrap(),
    );
    let changes = [
        normalized_change(0.6, 0.8).unwrap(),
        normalized_change(0.8, 0.6).unwrap(),
        normalized_change(0.5, 0.5).unwrap(),
    ];
    let ok = got == counted
        && got == (0.7, 0.5, 0.5)
        && (changes[0] - 0.5).abs() <= 1e-12
        && (changes[1] + 0.25).abs() <= 1e-12
        && changes[2] == 0.0;
    verdict(
        ok,
        format!(
            "agreement {}, switch {}, over-reliance {}; normalized change 0.6->0.8 {:.4}, 0.8->0.6 {:.4}, equal {}",
            got.0, got.1, got.2, changes[0], changes[1], changes[2]
        ),
    )
}

/// (x1, x2, rows labeled A, rows labeled B)
const TABLE: [(i64, i64, usize, usize); 4] = [(1, 0, 4, 3), (1, 1, 4, 1), (0, 0, 1, 5), (0, 1, 3, 2)];

fn triangulation_gating() -> Verdict {
    let mut rows = Vec::new();
    for (x1, x2, a, b) in TABLE {
        rows.extend(std::iter::repeat_n((vec![x1, x2], 0), a));
        rows.extend(std::iter::repeat_n((vec![x1, x2], 1), b));
    }
    let engine =
        Arc::new(binary_engine_with_rows(&["A", "B"], &[vec![0.0, 4.0], vec![0.0, 0.0]], &[0.0, 0.0], &rows).unwrap());
    let mut problems = Vec::new();
    let mut cases = 0;
    for task_bits in factorial(2) {
        let task = binary_instance("t", &task_bits, None);
        for argument in subsets(2) {
            for class in 0..2 {
                let (mut hits, mut total) = (0, 0);
                for (x1, x2, a, b) in TABLE {
                    let row = [x1, x2];
                    if argument.iter().all(|f| row[f] == task_bits[f]) {
                        hits += if class == 0 { a } else { b };
                        total += a + b;
                    }
                }
                let est = empirical_confidence(engine.train(), &task, class, &argument, 10).unwrap();
                let want = (total >= 10).then(|| hits as f64 / total as f64);
                cases += 1;
                if est.support != total || est.probability != want {
                    problems.push(format!("{task_bits:?} {argument:?} class {class}"));
                }
            }
        }
    }

    // the rendered table: {x1} has 12 supporting rows, {x1, x2} only 5
    let options = SessionOptions {
        mode: Mode::Aact,
        params: exhaustive(),
        clock: Clock::Logical,
        ..SessionOptions::default()
    };
    let mut session = Session::new("tri", engine, binary_instance("t", &[1, 1], None), options).unwrap();
    session
        .submit_initial(HumanState {
            decision: "A".into(),
            argument: vec!["x1".into()],
            confidence: 55,
        })
        .unwrap();
    session.submit_reflection(70).unwrap();
    let table = session.drain_prompts().into_iter().find_map(|m| match m.payload {
        MessagePayload::Triangulation(t) if m.step == Step::Triangulate => Some(t),
        _ => None,
    });
    let cells = table.as_ref().map(|t| t.rows[2].cells.clone()).unwrap_or_default();
    if cells != ["67%", NOT_AVAILABLE, NOT_AVAILABLE] {
        problems.push(format!("data row {cells:?}"));
    }
    verdict(
        problems.is_empty(),
        format!(
            "{cases} estimates against direct counts, data row {cells:?}, {} mismatches",
            problems.len()
        ),
    )
}

// ---------------------------------------------------------------------------

fn service_equivalence() -> Verdict {
    let (engine, tasks) = ames();
    let params = EngineParams {
        l: 1000,
        ..EngineParams::default()
    };
    let store = || SessionStore::new(engine.clone(), tasks.clone(), params.clone()).with_clock(Clock::Logical);
    let remote_store = Arc::new(store());
    let mut remote = RouterClient::new(router(remote_store.clone())).unwrap();
    let local_store = store();
    let mut local = &local_store;
    let anonymized = |t: &Transcript| t.to_jsonl().replace(t.info().unwrap().session_id.as_str(), "SESSION");

    let modes = [Mode::Aact, Mode::Aact, Mode::Recommender, Mode::Aact, Mode::Analyzer];
    let policies = [Policy::AlwaysKeep, Policy::AlwaysAdopt, Policy::Threshold(0.1)];
    let mut problems = Vec::new();
    for i in 0..20usize {
        let request = CreateSession {
            mode: if i == 19 { Mode::HumanOnly } else { modes[i % modes.len()] },
            include_agreement: Some(i % 7 != 3),
            participant: Some(format!("p{i}")),
            ..CreateSession::default()
        };
        let task = &tasks[(i * 29) % tasks.len()];
        let policy = policies[i % policies.len()];
        let human = HumanModel::default();
        let remote_id =
            run_session(&mut remote, &request, task, policy, &human, &mut ChaCha8Rng::seed_from_u64(i as u64)).unwrap();
        let local_id =
            run_session(&mut local, &request, task, policy, &human, &mut ChaCha8Rng::seed_from_u64(i as u64)).unwrap();
        let over_http = remote.transcript(&remote_id).unwrap();
        let in_process = local_store.transcript(&local_id).unwrap();
        if anonymized(&over_http) != anonymized(&in_process) {
            problems.push(format!("session {i}: transcripts differ"));
        }
        if replay(engine.clone(), &over_http, Clock::Logical).ok().as_ref() != Some(&over_http) {
            problems.push(format!("session {i}: replay differs"));
        }
    }

    let concurrent_store = Arc::new(store());
    let client = RouterClient::new(router(concurrent_store.clone())).unwrap();
    let handles: Vec<_> = (0..100u64)
        .map(|i| {
            let mut client = client.clone();
            let task = tasks[(i as usize * 5) % tasks.len()].clone();
            std::thread::spawn(move || {
                let request = CreateSession {
                    mode: if i % 4 == 0 { Mode::Recommender } else { Mode::Aact },
                    participant: Some(format!("c{i}")),
                    ..CreateSession::default()
                };
                let policy = [Policy::AlwaysKeep, Policy::AlwaysAdopt, Policy::Threshold(0.05)][i as usize % 3];
                let mut rng = ChaCha8Rng::seed_from_u64(i);
                let id = run_session(&mut client, &request, &task, policy, &HumanModel::default(), &mut rng);
                (i, task.id, id)
            })
        })
        .collect();
    let mut ids = std::collections::HashSet::new();
    for handle in handles {
        let (i, task_id, id) = handle.join().unwrap();
        let id = match id {
            Ok(id) => id,
            Err(e) => {
                problems.push(format!("concurrent {i}: {e}"));
                continue;
            }
        };
        ids.insert(id.clone());
        let t = concurrent_store.transcript(&id).unwrap();
        let info = t.info().unwrap();
        let own = info.session_id == id
            && info.task.id == task_id
            && info.participant.as_deref() == Some(format!("c{i}").as_str());
        if !own || !t.is_complete() || !audit(&t).is_empty() {
            problems.push(format!("concurrent {i}: contaminated or incomplete"));
        }
        if replay(engine.clone(), &t, Clock::Logical).ok().as_ref() != Some(&t) {
            problems.push(format!("concurrent {i}: replay differs"));
        }
    }
    if ids.len() != 100 || concurrent_store.len() != 100 {
        problems.push(format!("{} distinct ids, {} stored", ids.len(), concurrent_store.len()));
    }
    verdict(
        problems.is_empty(),
        format!(
            "20 scripted sessions HTTP vs in-process, 100 concurrent sessions; {} problems{}",
            problems.len(),
            problems.first().map(|p| format!(" (first: {p})")).unwrap_or_default()
        ),
    )
}

fn main() {
    // criteria report their own failures; keep panic noise off the output
    std::panic::set_hook(Box::new(|_| {}));
    let outcomes = [
        run("1 classifier reproduction", classifier_reproduction),
        run("2 marginalization identity", marginalization_identity),
        run("3 Monte Carlo accuracy", monte_carlo_accuracy),
        run("4 critique rule soundness", table3_soundness),
        run("5 argument-search oracle", argument_search_oracle),
        run("6 workflow property suite", workflow_properties),
        run("7 template fidelity", template_fidelity),
        run("8 metrics fixtures", metrics_fixture),
        run("9 triangulation gating", triangulation_gating),
        run("10 service equivalence", service_equivalence),
    ];
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        outcomes.len() - failed.len(),
        failed.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(" ({})", failed.join("; "))
        }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
