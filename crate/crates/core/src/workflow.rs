//! The critique-and-correction dialogue.
//!
//! A [`Session`] walks the fixed stage sequence agreement, incompleteness,
//! unreliability, conflict, skipping stages whose critique list is empty.
//! Each flagged item runs reflect, suggest, triangulate; each visited stage
//! closes with one update prompt, after which the critique is recomputed on
//! the updated human state and the next unvisited stage is entered.
//!
//! Messages are generated eagerly: every state change renders and logs all
//! messages up to the next one that needs input, so the transcript never
//! depends on how often a client polls [`Session::next_prompt`].

use std::collections::VecDeque;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::argument::{Argument, ArgumentError};
use crate::assistance::{self, HypothesisEvidence, Recommendation};
use crate::counterfactual::{ConflictCandidate, Critique, Engine, EngineError, EngineParams, IssueFlag, IssueKind};
use crate::dataset::{self, DatasetError, EmpiricalEstimate, Instance};
use crate::template::{self, Slots, TemplateError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Aact,
    Recommender,
    Analyzer,
    HumanOnly,
}

impl FromStr for Mode {
    type Err = WorkflowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "aact" => Ok(Mode::Aact),
            "recommender" => Ok(Mode::Recommender),
            "analyzer" => Ok(Mode::Analyzer),
            "human_only" => Ok(Mode::HumanOnly),
            other => Err(WorkflowError::UnknownMode(other.to_string())),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Aact => "aact",
            Mode::Recommender => "recommender",
            Mode::Analyzer => "analyzer",
            Mode::HumanOnly => "human_only",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    AwaitInitial,
    Agreement,
    Incompleteness,
    Unreliability,
    Conflict,
    /// The single assistance step of the recommender and analyzer modes.
    Assist,
    Final,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = serde_json::to_value(self).expect("stage serializes");
        f.write_str(text.as_str().unwrap_or("?"))
    }
}

/// The critique stages in dialogue order.
pub const CRITIQUE_STAGES: [Stage; 4] = [Stage::Agreement, Stage::Incompleteness, Stage::Unreliability, Stage::Conflict];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Inform,
    Reflect,
    Suggest,
    Triangulate,
    UpdatePrompt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedInput {
    None,
    ConfidenceSlider,
    UpdateForm,
}

impl fmt::Display for ExpectedInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExpectedInput::None => "none",
            ExpectedInput::ConfidenceSlider => "confidence_slider",
            ExpectedInput::UpdateForm => "update_form",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateStrategy {
    /// Recompute the critique and move on to the next unvisited stage.
    #[default]
    Continue,
    /// Start over from the first stage. Accepted by the parser, rejected
    /// when a session is created.
    Restart,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageTag {
    PreTest,
    Intervention,
    PostTest,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    /// Milliseconds since the Unix epoch.
    #[default]
    System,
    /// The event's sequence number; makes transcripts byte-reproducible.
    Logical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionOptions {
    pub mode: Mode,
    pub params: EngineParams,
    pub include_agreement: bool,
    pub update_strategy: UpdateStrategy,
    pub stage_tag: Option<StageTag>,
    pub participant: Option<String>,
    #[serde(skip)]
    pub clock: Clock,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self {
            mode: Mode::Aact,
            params: EngineParams::default(),
            include_agreement: true,
            update_strategy: UpdateStrategy::Continue,
            stage_tag: None,
            participant: None,
            clock: Clock::System,
        }
    }
}

/// Decision, argument (feature names, schema order) and integer percent
/// confidence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanState {
    pub decision: String,
    pub argument: Vec<String>,
    pub confidence: u32,
}

/// Fields left out keep their current value.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UpdateRequest {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decision: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub argument: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<u32>,
}

impl UpdateRequest {
    pub fn keep() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.decision.is_none() && self.argument.is_none() && self.confidence.is_none()
    }
}

/// What a reflection question asks the human to imagine.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ReflectionTarget {
    Add { feature: String },
    Remove { feature: String },
    Alternative { alt: String, features: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionAnswer {
    pub stage: Stage,
    pub item: usize,
    pub target: ReflectionTarget,
    pub reported_confidence: u32,
    pub current_confidence: u32,
    /// `reported - current` for add/remove questions; absent for
    /// alternatives, whose answers are absolute.
    pub derived_delta: Option<i64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Human,
    Ai,
    Data,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriangulationRow {
    pub source: Source,
    pub before: Option<f64>,
    pub after: Option<f64>,
    pub change: Option<f64>,
    /// Matching training rows behind the data cells.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub support: Option<[usize; 2]>,
    /// Display text for the before, after and change cells.
    pub cells: [String; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriangulationTable {
    pub columns: [String; 3],
    pub rows: Vec<TriangulationRow>,
}

pub const NOT_AVAILABLE: &str = "not available";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MessagePayload {
    None,
    Agreement { flags: Vec<IssueFlag> },
    Question { target: ReflectionTarget, current_confidence: u32 },
    Flag { flag: IssueFlag, delta_points: i64 },
    Conflict { candidate: ConflictCandidate, confidence_percent: i64 },
    Triangulation(TriangulationTable),
    Recommendation(Recommendation),
    Evidence(HypothesisEvidence),
    Update { current: HumanState },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogueMessage {
    pub template_id: String,
    pub text: String,
    pub expected_input: ExpectedInput,
    pub stage: Stage,
    pub step: Step,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub item: Option<usize>,
    pub payload: MessagePayload,
}

/// One unit of work inside a stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StageItem {
    Flag(IssueFlag),
    Conflict(ConflictCandidate),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    Empty,
    Disabled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub task: Instance,
    pub mode: Mode,
    /// The model's prediction on the full task, recorded for every mode
    /// (and shown only by the recommender).
    pub ai_prediction: String,
    pub ground_truth: Option<String>,
    pub params: EngineParams,
    pub include_agreement: bool,
    pub update_strategy: UpdateStrategy,
    pub stage_tag: Option<StageTag>,
    pub participant: Option<String>,
}

impl SessionInfo {
    pub fn options(&self, clock: Clock) -> SessionOptions {
        SessionOptions {
            mode: self.mode,
            params: self.params.clone(),
            include_agreement: self.include_agreement,
            update_strategy: self.update_strategy,
            stage_tag: self.stage_tag,
            participant: self.participant.clone(),
            clock,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Event {
    SessionStarted(Box<SessionInfo>),
    Initial(HumanState),
    Analysis(Box<Critique>),
    StageEntered { stage: Stage, items: Vec<StageItem> },
    StageSkipped { stage: Stage, items: usize, reason: SkipReason },
    Message(Box<DialogueMessage>),
    Reflection(ReflectionAnswer),
    Update { request: UpdateRequest, state: HumanState },
    Skipped { stage: Stage },
    Final(HumanState),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEvent {
    pub seq: u64,
    pub timestamp: u64,
    #[serde(flatten)]
    pub event: Event,
}

/// A human input, as recorded in a transcript and replayable against a
/// fresh session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Answer {
    Initial(HumanState),
    Reflection { reported_confidence: u32 },
    Update(UpdateRequest),
    Skip,
}

#[derive(Debug, thiserror::Error)]
pub enum WorkflowError {
    #[error("unknown mode `{0}`")]
    UnknownMode(String),
    #[error("{action} not expected: session is in stage {stage} awaiting {awaiting}")]
    UnexpectedStep {
        action: &'static str,
        stage: Stage,
        awaiting: ExpectedInput,
    },
    #[error("no prompt available in stage {0}")]
    NoPrompt(Stage),
    #[error("unknown decision `{0}`")]
    InvalidDecision(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(#[from] ArgumentError),
    #[error("confidence {0} outside 0..=100")]
    ConfidenceRange(u32),
    #[error("task does not match the schema: {0}")]
    TaskMismatch(String),
    #[error("not implemented: {0}")]
    NotImplemented(String),
    #[error("transcript has no session start event")]
    MissingStart,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

impl WorkflowError {
    /// Errors caused by calling an operation at the wrong point in the
    /// dialogue.
    pub fn is_step_error(&self) -> bool {
        matches!(self, WorkflowError::UnexpectedStep { .. } | WorkflowError::NoPrompt(_))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TranscriptError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
}

/// Append-only event log of one session.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Transcript {
    events: Vec<TranscriptEvent>,
}

impl Transcript {
    pub fn events(&self) -> &[TranscriptEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn info(&self) -> Option<&SessionInfo> {
        self.events.iter().find_map(|e| match &e.event {
            Event::SessionStarted(info) => Some(info.as_ref()),
            _ => None,
        })
    }

    pub fn initial(&self) -> Option<&HumanState> {
        self.events.iter().find_map(|e| match &e.event {
            Event::Initial(state) => Some(state),
            _ => None,
        })
    }

    pub fn final_state(&self) -> Option<&HumanState> {
        self.events.iter().rev().find_map(|e| match &e.event {
            Event::Final(state) => Some(state),
            _ => None,
        })
    }

    pub fn is_complete(&self) -> bool {
        self.final_state().is_some()
    }

    pub fn messages(&self) -> impl Iterator<Item = &DialogueMessage> {
        self.events.iter().filter_map(|e| match &e.event {
            Event::Message(m) => Some(m.as_ref()),
            _ => None,
        })
    }

    /// The human inputs in submission order.
    pub fn answers(&self) -> Vec<Answer> {
        self.events
            .iter()
            .filter_map(|e| match &e.event {
                Event::Initial(state) => Some(Answer::Initial(state.clone())),
                Event::Reflection(r) => Some(Answer::Reflection {
                    reported_confidence: r.reported_confidence,
                }),
                Event::Update { request, .. } => Some(Answer::Update(request.clone())),
                Event::Skipped { .. } => Some(Answer::Skip),
                _ => None,
            })
            .collect()
    }

    /// Equality on sequence numbers and event contents, ignoring
    /// timestamps.
    pub fn same_events(&self, other: &Transcript) -> bool {
        self.events.len() == other.events.len()
            && self
                .events
                .iter()
                .zip(&other.events)
                .all(|(a, b)| a.seq == b.seq && a.event == b.event)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for event in &self.events {
            out.push_str(&serde_json::to_string(event).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TranscriptError> {
        Self::read_lines(text.as_bytes())
    }

    pub fn read_lines<R: BufRead>(reader: R) -> Result<Self, TranscriptError> {
        let mut events = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let event = serde_json::from_str(&line).map_err(|source| TranscriptError::Json { line: n + 1, source })?;
            events.push(event);
        }
        Ok(Self { events })
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<(), TranscriptError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(self.to_jsonl().as_bytes())?;
        file.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self, TranscriptError> {
        Self::read_lines(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn check_confidence(value: u32) -> Result<u32, WorkflowError> {
    if value > 100 {
        return Err(WorkflowError::ConfidenceRange(value));
    }
    Ok(value)
}

fn cell(p: Option<f64>) -> String {
    match p {
        Some(p) => format!("{}%", template::percent(p)),
        None => NOT_AVAILABLE.to_string(),
    }
}

fn change_cell(change: Option<f64>) -> String {
    match change.map(template::percentage_points) {
        Some(0) => "0 points".to_string(),
        Some(points) => format!("{points:+} points"),
        None => NOT_AVAILABLE.to_string(),
    }
}

fn row(source: Source, before: Option<f64>, after: Option<f64>, change: Option<f64>) -> TriangulationRow {
    TriangulationRow {
        source,
        before,
        after,
        change,
        support: None,
        cells: [cell(before), cell(after), change_cell(change)],
    }
}

fn data_row(before: EmpiricalEstimate, after: EmpiricalEstimate) -> TriangulationRow {
    let change = before.probability.zip(after.probability).map(|(b, a)| a - b);
    TriangulationRow {
        support: Some([before.support, after.support]),
        ..row(Source::Data, before.probability, after.probability, change)
    }
}

pub struct Session {
    id: String,
    engine: Arc<Engine>,
    task: Instance,
    options: SessionOptions,
    stage: Stage,
    items: Vec<StageItem>,
    item: usize,
    history: Vec<HumanState>,
    critique: Option<Critique>,
    visited: Vec<Stage>,
    outbox: VecDeque<DialogueMessage>,
    awaiting: Option<DialogueMessage>,
    info: SessionInfo,
    transcript: Transcript,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.id)
            .field("task", &self.task.id)
            .field("mode", &self.options.mode)
            .field("stage", &self.stage)
            .field("item", &self.item)
            .field("events", &self.transcript.len())
            .finish()
    }
}

impl Session {
    pub fn new(
        id: impl Into<String>,
        engine: Arc<Engine>,
        task: Instance,
        options: SessionOptions,
    ) -> Result<Self, WorkflowError> {
        options.params.validate()?;
        if options.update_strategy == UpdateStrategy::Restart {
            return Err(WorkflowError::NotImplemented("update strategy `restart`".into()));
        }
        let schema = engine.schema();
        if task.values.len() != schema.arity() {
            return Err(WorkflowError::TaskMismatch(format!(
                "{} values for {} features",
                task.values.len(),
                schema.arity()
            )));
        }
        if let Some(label) = task.label {
            if label >= schema.num_classes() {
                return Err(WorkflowError::TaskMismatch(format!("label index {label}")));
            }
        }
        let ai_prediction = schema
            .class_name(engine.classifier().predict(&task).map_err(EngineError::from)?)
            .to_string();
        let id = id.into();
        let info = SessionInfo {
            session_id: id.clone(),
            ground_truth: task.label.map(|l| schema.class_name(l).to_string()),
            task: task.clone(),
            mode: options.mode,
            ai_prediction,
            params: options.params.clone(),
            include_agreement: options.include_agreement,
            update_strategy: options.update_strategy,
            stage_tag: options.stage_tag,
            participant: options.participant.clone(),
        };
        Ok(Self {
            id,
            engine,
            task,
            options,
            stage: Stage::AwaitInitial,
            items: Vec::new(),
            item: 0,
            history: Vec::new(),
            critique: None,
            visited: Vec::new(),
            outbox: VecDeque::new(),
            awaiting: None,
            info,
            transcript: Transcript::default(),
        })
    }

    /// The start record, logged as the first event once the initial
    /// decision arrives.
    pub fn info(&self) -> &SessionInfo {
        &self.info
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn task(&self) -> &Instance {
        &self.task
    }

    pub fn mode(&self) -> Mode {
        self.options.mode
    }

    pub fn options(&self) -> &SessionOptions {
        &self.options
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn is_final(&self) -> bool {
        self.stage == Stage::Final
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }

    /// Initial state first, then one entry per update.
    pub fn history(&self) -> &[HumanState] {
        &self.history
    }

    pub fn current(&self) -> Option<&HumanState> {
        self.history.last()
    }

    pub fn critique(&self) -> Option<&Critique> {
        self.critique.as_ref()
    }

    /// The input-bearing message the session is waiting on, if any.
    pub fn awaiting(&self) -> Option<&DialogueMessage> {
        self.awaiting.as_ref()
    }

    pub fn visited(&self) -> &[Stage] {
        &self.visited
    }

    /// Pops the next undelivered message. Once the queue is drained the
    /// pending input message is returned again on every call.
    pub fn next_prompt(&mut self) -> Result<DialogueMessage, WorkflowError> {
        if let Some(message) = self.outbox.pop_front() {
            return Ok(message);
        }
        self.awaiting.clone().ok_or(WorkflowError::NoPrompt(self.stage))
    }

    /// Drains every undelivered message.
    pub fn drain_prompts(&mut self) -> Vec<DialogueMessage> {
        self.outbox.drain(..).collect()
    }

    pub fn apply(&mut self, answer: &Answer) -> Result<(), WorkflowError> {
        match answer {
            Answer::Initial(state) => self.submit_initial(state.clone()),
            Answer::Reflection { reported_confidence } => self.submit_reflection(*reported_confidence),
            Answer::Update(request) => self.submit_update(request.clone()),
            Answer::Skip => self.skip(),
        }
    }

    fn log(&mut self, event: Event) {
        let seq = self.transcript.events.len() as u64;
        let timestamp = match self.options.clock {
            Clock::Logical => seq,
            Clock::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        };
        self.transcript.events.push(TranscriptEvent { seq, timestamp, event });
    }

    fn emit(&mut self, message: DialogueMessage) {
        self.log(Event::Message(Box::new(message.clone())));
        if message.expected_input != ExpectedInput::None {
            self.awaiting = Some(message.clone());
        }
        self.outbox.push_back(message);
    }

    fn expect(&self, action: &'static str, input: ExpectedInput) -> Result<(), WorkflowError> {
        let awaiting = self.awaiting.as_ref().map_or(ExpectedInput::None, |m| m.expected_input);
        if awaiting != input {
            return Err(WorkflowError::UnexpectedStep {
                action,
                stage: self.stage,
                awaiting,
            });
        }
        Ok(())
    }

    /// Resolves a state against the task schema and puts it in canonical
    /// form (argument in schema order).
    fn resolve(&self, state: &HumanState) -> Result<(HumanState, usize, Argument), WorkflowError> {
        let schema = self.engine.schema();
        let decision = schema
            .class_index(&state.decision)
            .ok_or_else(|| WorkflowError::InvalidDecision(state.decision.clone()))?;
        let argument = Argument::from_names(schema, &state.argument)?;
        let confidence = check_confidence(state.confidence)?;
        let canonical = HumanState {
            decision: schema.class_name(decision).to_string(),
            argument: argument.names(schema),
            confidence,
        };
        Ok((canonical, decision, argument))
    }

    pub fn submit_initial(&mut self, state: HumanState) -> Result<(), WorkflowError> {
        if self.stage != Stage::AwaitInitial {
            return Err(WorkflowError::UnexpectedStep {
                action: "initial decision",
                stage: self.stage,
                awaiting: self.awaiting.as_ref().map_or(ExpectedInput::None, |m| m.expected_input),
            });
        }
        let (state, _, _) = self.resolve(&state)?;
        // compute everything fallible before logging anything
        let assist = match self.options.mode {
            Mode::Recommender => Some(self.recommendation_message()?),
            Mode::Analyzer => Some(self.evidence_message()?),
            Mode::Aact | Mode::HumanOnly => None,
        };
        let critique = match self.options.mode {
            Mode::Aact => Some(self.compute_critique(&state)?),
            _ => None,
        };
        self.log(Event::SessionStarted(Box::new(self.info.clone())));
        self.log(Event::Initial(state.clone()));
        self.history.push(state);
        match self.options.mode {
            Mode::HumanOnly => self.finish(),
            Mode::Recommender | Mode::Analyzer => {
                self.stage = Stage::Assist;
                self.emit(assist.expect("assist message computed"));
                self.emit_update_prompt()?;
            }
            Mode::Aact => {
                self.record_critique(critique.expect("critique computed"));
                self.advance(None)?;
            }
        }
        Ok(())
    }

    pub fn submit_reflection(&mut self, reported_confidence: u32) -> Result<(), WorkflowError> {
        self.expect("reflection", ExpectedInput::ConfidenceSlider)?;
        let reported = check_confidence(reported_confidence)?;
        let current = self.current().expect("initial state recorded").confidence;
        let target = self.reflection_target(self.item);
        let derived_delta = match target {
            ReflectionTarget::Alternative { .. } => None,
            _ => Some(reported as i64 - current as i64),
        };
        let answer = ReflectionAnswer {
            stage: self.stage,
            item: self.item,
            target,
            reported_confidence: reported,
            current_confidence: current,
            derived_delta,
        };
        let suggest = self.suggest_message(self.item)?;
        let triangulate = self.triangulate_message(self.item, &answer)?;
        self.awaiting = None;
        self.log(Event::Reflection(answer));
        self.emit(suggest);
        self.emit(triangulate);
        self.item += 1;
        if self.item < self.items.len() {
            let reflect = self.reflect_message(self.item)?;
            self.emit(reflect);
        } else {
            self.emit_update_prompt()?;
        }
        Ok(())
    }

    pub fn submit_update(&mut self, request: UpdateRequest) -> Result<(), WorkflowError> {
        self.expect("update", ExpectedInput::UpdateForm)?;
        let current = self.current().expect("initial state recorded").clone();
        let merged = HumanState {
            decision: request.decision.clone().unwrap_or(current.decision),
            argument: request.argument.clone().unwrap_or(current.argument),
            confidence: request.confidence.unwrap_or(current.confidence),
        };
        let (state, _, _) = self.resolve(&merged)?;
        let remaining = self.stage != Stage::Assist
            && CRITIQUE_STAGES.iter().any(|s| *s > self.stage);
        let critique = if remaining {
            Some(self.compute_critique(&state)?)
        } else {
            None
        };
        self.awaiting = None;
        self.log(Event::Update {
            request,
            state: state.clone(),
        });
        self.history.push(state);
        match critique {
            Some(critique) => {
                self.record_critique(critique);
                self.advance(Some(self.stage))?;
            }
            None => self.finish(),
        }
        Ok(())
    }

    /// Abandons the remaining stages and finalizes with the current state.
    pub fn skip(&mut self) -> Result<(), WorkflowError> {
        if matches!(self.stage, Stage::AwaitInitial | Stage::Final) {
            return Err(WorkflowError::UnexpectedStep {
                action: "skip",
                stage: self.stage,
                awaiting: ExpectedInput::None,
            });
        }
        let notice = self.notice(template::SKIP)?;
        self.log(Event::Skipped { stage: self.stage });
        self.awaiting = None;
        self.outbox.clear();
        self.stage = Stage::Final;
        self.emit(notice);
        self.finish();
        Ok(())
    }

    fn finish(&mut self) {
        self.stage = Stage::Final;
        self.awaiting = None;
        let state = self.current().expect("initial state recorded").clone();
        self.log(Event::Final(state));
    }

    fn compute_critique(&self, state: &HumanState) -> Result<Critique, WorkflowError> {
        let (_, decision, argument) = self.resolve(state)?;
        Ok(self
            .engine
            .identify_issues(&self.task, decision, &argument, &self.options.params)?)
    }

    fn record_critique(&mut self, critique: Critique) {
        self.log(Event::Analysis(Box::new(critique.clone())));
        self.critique = Some(critique);
    }

    fn stage_items(&self, stage: Stage) -> Vec<StageItem> {
        let Some(critique) = &self.critique else {
            return Vec::new();
        };
        match stage {
            Stage::Agreement => critique.agreement.iter().cloned().map(StageItem::Flag).collect(),
            Stage::Incompleteness => critique.incompleteness.iter().cloned().map(StageItem::Flag).collect(),
            Stage::Unreliability => critique.unreliability.iter().cloned().map(StageItem::Flag).collect(),
            Stage::Conflict => critique.conflicts.iter().cloned().map(StageItem::Conflict).collect(),
            _ => Vec::new(),
        }
    }

    /// Enters the first non-empty critique stage after `after`, or
    /// finalizes when none is left.
    fn advance(&mut self, after: Option<Stage>) -> Result<(), WorkflowError> {
        for stage in CRITIQUE_STAGES {
            if after.is_some_and(|a| stage <= a) {
                continue;
            }
            let items = self.stage_items(stage);
            if stage == Stage::Agreement && !self.options.include_agreement {
                self.log(Event::StageSkipped {
                    stage,
                    items: items.len(),
                    reason: SkipReason::Disabled,
                });
                continue;
            }
            if items.is_empty() {
                self.log(Event::StageSkipped {
                    stage,
                    items: 0,
                    reason: SkipReason::Empty,
                });
                continue;
            }
            self.log(Event::StageEntered {
                stage,
                items: items.clone(),
            });
            self.stage = stage;
            self.items = items;
            self.item = 0;
            self.visited.push(stage);
            if stage == Stage::Agreement {
                let message = self.agreement_message()?;
                self.emit(message);
                self.emit_update_prompt()?;
            } else {
                let message = self.reflect_message(0)?;
                self.emit(message);
            }
            return Ok(());
        }
        if self.visited.is_empty() {
            let notice = self.notice(template::NO_ISSUES)?;
            self.stage = Stage::Final;
            self.emit(notice);
        }
        self.finish();
        Ok(())
    }

    fn message(
        &self,
        template_id: &str,
        slots: &Slots,
        step: Step,
        item: Option<usize>,
        expected_input: ExpectedInput,
        payload: MessagePayload,
    ) -> Result<DialogueMessage, WorkflowError> {
        Ok(DialogueMessage {
            template_id: template_id.to_string(),
            text: template::render(template_id, slots)?,
            expected_input,
            stage: self.stage,
            step,
            item,
            payload,
        })
    }

    fn notice(&self, template_id: &str) -> Result<DialogueMessage, WorkflowError> {
        Ok(DialogueMessage {
            template_id: template_id.to_string(),
            text: template::render(template_id, &Slots::new())?,
            expected_input: ExpectedInput::None,
            stage: Stage::Final,
            step: Step::Inform,
            item: None,
            payload: MessagePayload::None,
        })
    }

    fn emit_update_prompt(&mut self) -> Result<(), WorkflowError> {
        let current = self.current().expect("initial state recorded").clone();
        let message = self.message(
            template::UPDATE,
            &Slots::new(),
            Step::UpdatePrompt,
            None,
            ExpectedInput::UpdateForm,
            MessagePayload::Update { current },
        )?;
        self.emit(message);
        Ok(())
    }

    fn agreement_message(&self) -> Result<DialogueMessage, WorkflowError> {
        let flags: Vec<IssueFlag> = self
            .items
            .iter()
            .filter_map(|i| match i {
                StageItem::Flag(f) => Some(f.clone()),
                StageItem::Conflict(_) => None,
            })
            .collect();
        let names: Vec<&str> = flags.iter().map(|f| f.feature.as_str()).collect();
        let slots = Slots::new().with("features", template::join_features(&names));
        self.message(
            template::AGREE,
            &slots,
            Step::Inform,
            None,
            ExpectedInput::None,
            MessagePayload::Agreement { flags },
        )
    }

    fn recommendation_message(&self) -> Result<DialogueMessage, WorkflowError> {
        let rec = assistance::recommender_payload(&self.engine, &self.task, &self.options.params)?;
        let slots = Slots::new()
            .with("prediction", rec.prediction.clone())
            .with("confidence", template::percent(rec.confidence).to_string());
        let mut message = self.message(
            template::RECOMMEND,
            &slots,
            Step::Inform,
            None,
            ExpectedInput::None,
            MessagePayload::Recommendation(rec),
        )?;
        message.stage = Stage::Assist;
        Ok(message)
    }

    fn evidence_message(&self) -> Result<DialogueMessage, WorkflowError> {
        let evidence = assistance::analyzer_payload(&self.engine, &self.task, &self.options.params)?;
        let mut message = self.message(
            template::ANALYZE,
            &Slots::new(),
            Step::Inform,
            None,
            ExpectedInput::None,
            MessagePayload::Evidence(evidence),
        )?;
        message.stage = Stage::Assist;
        Ok(message)
    }

    fn reflection_target(&self, item: usize) -> ReflectionTarget {
        match &self.items[item] {
            StageItem::Flag(flag) if flag.kind.is_addition() => ReflectionTarget::Add {
                feature: flag.feature.clone(),
            },
            StageItem::Flag(flag) => ReflectionTarget::Remove {
                feature: flag.feature.clone(),
            },
            StageItem::Conflict(c) => ReflectionTarget::Alternative {
                alt: c.alt_decision.clone(),
                features: c.features.clone(),
            },
        }
    }

    fn reflect_message(&self, item: usize) -> Result<DialogueMessage, WorkflowError> {
        let target = self.reflection_target(item);
        let (id, slots) = match &target {
            ReflectionTarget::Add { feature } => (template::INC_REFLECT, Slots::new().with("feature", feature.clone())),
            ReflectionTarget::Remove { feature } => (template::UNR_REFLECT, Slots::new().with("feature", feature.clone())),
            ReflectionTarget::Alternative { alt, features } => (
                template::CONF_REFLECT,
                Slots::new()
                    .with("alt", alt.clone())
                    .with("features", template::join_features(features)),
            ),
        };
        let current_confidence = self.current().expect("initial state recorded").confidence;
        self.message(
            id,
            &slots,
            Step::Reflect,
            Some(item),
            ExpectedInput::ConfidenceSlider,
            MessagePayload::Question {
                target,
                current_confidence,
            },
        )
    }

    fn suggest_message(&self, item: usize) -> Result<DialogueMessage, WorkflowError> {
        match &self.items[item] {
            StageItem::Flag(flag) => {
                let id = if flag.kind.is_addition() {
                    template::INC_SUGGEST
                } else {
                    template::UNR_SUGGEST
                };
                let slots = Slots::new().with("feature", flag.feature.clone()).with_delta(flag.delta);
                self.message(
                    id,
                    &slots,
                    Step::Suggest,
                    Some(item),
                    ExpectedInput::None,
                    MessagePayload::Flag {
                        flag: flag.clone(),
                        delta_points: template::percentage_points(flag.delta),
                    },
                )
            }
            StageItem::Conflict(candidate) => {
                let slots = Slots::new()
                    .with("alt", candidate.alt_decision.clone())
                    .with("features", template::join_features(&candidate.features))
                    .with("confidence", template::percent(candidate.confidence).to_string());
                self.message(
                    template::CONF_SUGGEST,
                    &slots,
                    Step::Suggest,
                    Some(item),
                    ExpectedInput::None,
                    MessagePayload::Conflict {
                        candidate: candidate.clone(),
                        confidence_percent: template::percent(candidate.confidence),
                    },
                )
            }
        }
    }

    fn triangulate_message(&self, item: usize, answer: &ReflectionAnswer) -> Result<DialogueMessage, WorkflowError> {
        let critique = self.critique.as_ref().expect("critique stage has a critique");
        let train = self.engine.train();
        let min_support = self.options.params.min_support;
        let decision = critique.decision_index;
        let base = &critique.argument;
        let human_before = answer.current_confidence as f64 / 100.0;
        let human_after = answer.reported_confidence as f64 / 100.0;
        let empirical = |class: usize, argument: &Argument| {
            dataset::empirical_confidence(train, &self.task, class, argument, min_support)
        };
        let data_before = empirical(decision, base)?;

        let (id, slots, columns, ai, data) = match &self.items[item] {
            StageItem::Flag(flag) => {
                let (id, moved, column) = if flag.kind.is_addition() {
                    (
                        template::INC_TRIANGULATE,
                        base.with(flag.feature_index),
                        format!("with {}", flag.feature),
                    )
                } else {
                    (
                        template::UNR_TRIANGULATE,
                        base.without(flag.feature_index),
                        format!("without {}", flag.feature),
                    )
                };
                let slots = Slots::new()
                    .with("feature", flag.feature.clone())
                    .with("decision", critique.decision.clone());
                let ai = row(
                    Source::Ai,
                    Some(flag.base_confidence),
                    Some(flag.base_confidence + flag.delta),
                    Some(flag.delta),
                );
                let data = data_row(data_before, empirical(decision, &moved)?);
                (id, slots, ["current evidence".to_string(), column, "change".to_string()], ai, data)
            }
            StageItem::Conflict(c) => {
                let slots = Slots::new()
                    .with("decision", critique.decision.clone())
                    .with("alt", c.alt_decision.clone())
                    .with("features", template::join_features(&c.features));
                let ai = row(
                    Source::Ai,
                    Some(critique.p_m),
                    Some(c.confidence),
                    Some(c.confidence - critique.p_m),
                );
                let data = data_row(data_before, empirical(c.alt_index, &c.argument)?);
                let columns = [
                    format!("{} with your evidence", critique.decision),
                    format!("{} with {}", c.alt_decision, template::join_features(&c.features)),
                    "difference".to_string(),
                ];
                (template::CONF_TRIANGULATE, slots, columns, ai, data)
            }
        };
        let human = row(
            Source::Human,
            Some(human_before),
            Some(human_after),
            Some(human_after - human_before),
        );
        self.message(
            id,
            &slots,
            Step::Triangulate,
            Some(item),
            ExpectedInput::None,
            MessagePayload::Triangulation(TriangulationTable {
                columns,
                rows: vec![human, ai, data],
            }),
        )
    }
}

/// Re-runs a transcript's recorded answers against a fresh session built
/// from its start event.
pub fn replay(engine: Arc<Engine>, transcript: &Transcript, clock: Clock) -> Result<Transcript, WorkflowError> {
    let info = transcript.info().ok_or(WorkflowError::MissingStart)?;
    let mut session = Session::new(info.session_id.clone(), engine, info.task.clone(), info.options(clock))?;
    for answer in transcript.answers() {
        session.apply(&answer)?;
    }
    Ok(session.into_transcript())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Sequence,
    StageOrder,
    StepOrder,
    Suppression,
    ConflictCap,
    Termination,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    pub seq: Option<u64>,
    pub detail: String,
}

/// One observed dialogue step, used to compare a stage's history with
/// the step sequence its items require.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Token {
    Message(Step, Option<usize>),
    Reflection(usize),
    Update,
}

fn expected_tokens(stage: Stage, items: usize) -> Vec<Token> {
    let mut tokens = Vec::new();
    match stage {
        Stage::Agreement | Stage::Assist => tokens.push(Token::Message(Step::Inform, None)),
        _ => {
            for i in 0..items {
                tokens.push(Token::Message(Step::Reflect, Some(i)));
                tokens.push(Token::Reflection(i));
                tokens.push(Token::Message(Step::Suggest, Some(i)));
                tokens.push(Token::Message(Step::Triangulate, Some(i)));
            }
        }
    }
    tokens.push(Token::Message(Step::UpdatePrompt, None));
    tokens.push(Token::Update);
    tokens
}

struct OpenStage {
    stage: Stage,
    items: Vec<StageItem>,
    tokens: Vec<Token>,
    start: u64,
}

/// Checks a completed transcript against the dialogue invariants: stage
/// order and skip justification, per-item step order, one update prompt
/// per visited stage, suggestion values equal to the analysis, no
/// suppressed flag in any message, at most `k` conflicts, and termination.
pub fn audit(transcript: &Transcript) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut flag = |rule, seq: Option<u64>, detail: String| out.push(Violation { rule, seq, detail });
    let events = transcript.events();

    for (i, e) in events.iter().enumerate() {
        if e.seq != i as u64 {
            flag(Rule::Sequence, Some(e.seq), format!("event {i} carries seq {}", e.seq));
        }
        if i > 0 && e.timestamp < events[i - 1].timestamp {
            flag(Rule::Sequence, Some(e.seq), "timestamp decreases".into());
        }
    }
    let Some(info) = transcript.info() else {
        flag(Rule::Sequence, None, "no session start".into());
        return out;
    };
    if !matches!(events.first().map(|e| &e.event), Some(Event::SessionStarted(_))) {
        flag(Rule::Sequence, Some(0), "first event is not the session start".into());
    }
    let finals = events.iter().filter(|e| matches!(e.event, Event::Final(_))).count();
    if finals != 1 || !matches!(events.last().map(|e| &e.event), Some(Event::Final(_))) {
        flag(Rule::Termination, None, format!("{finals} final events, last event must be final"));
    }

    let k = info.params.k;
    let mut analysis: Option<&Critique> = None;
    let mut last_stage: Option<Stage> = None;
    let mut open: Option<OpenStage> = None;
    let mut flagged_items = 0usize;
    let mut submissions = 0usize;
    let mut skipped = false;

    let close = |open: Option<OpenStage>, truncated: bool, flag: &mut dyn FnMut(Rule, Option<u64>, String)| {
        if let Some(o) = open {
            let expected = expected_tokens(o.stage, o.items.len());
            let ok = if truncated {
                expected.starts_with(&o.tokens)
            } else {
                expected == o.tokens
            };
            if !ok {
                flag(
                    Rule::StepOrder,
                    Some(o.start),
                    format!("stage {} steps {:?}, expected {:?}", o.stage, o.tokens, expected),
                );
            }
        }
    };

    for e in events {
        let seq = Some(e.seq);
        match &e.event {
            Event::SessionStarted(_) => {}
            Event::Initial(_) => {
                submissions += 1;
                if info.mode == Mode::Recommender || info.mode == Mode::Analyzer {
                    open = Some(OpenStage {
                        stage: Stage::Assist,
                        items: Vec::new(),
                        tokens: Vec::new(),
                        start: e.seq,
                    });
                }
            }
            Event::Analysis(c) => {
                if c.conflicts.len() > k {
                    flag(Rule::ConflictCap, seq, format!("{} conflicts with k = {k}", c.conflicts.len()));
                }
                if let Some(bad) = c.suppressed.iter().find(|f| f.kind != IssueKind::Irrelevant) {
                    flag(Rule::Suppression, seq, format!("{} suppressed as {:?}", bad.feature, bad.kind));
                }
                analysis = Some(c);
            }
            Event::StageEntered { stage, .. } | Event::StageSkipped { stage, .. }
                if !CRITIQUE_STAGES.contains(stage) =>
            {
                flag(Rule::StageOrder, seq, format!("{stage} is not a critique stage"));
            }
            Event::StageEntered { stage, items } => {
                close(open.take(), false, &mut flag);
                if last_stage.is_some_and(|l| *stage <= l) {
                    flag(Rule::StageOrder, seq, format!("{stage} after {}", last_stage.unwrap()));
                }
                last_stage = Some(*stage);
                let expected = analysis.map(|c| stage_list(c, *stage));
                if expected.as_ref() != Some(items) {
                    flag(Rule::StageOrder, seq, format!("{stage} items differ from the latest analysis"));
                }
                if items.is_empty() {
                    flag(Rule::StageOrder, seq, format!("{stage} entered with no items"));
                }
                if *stage == Stage::Conflict && items.len() > k {
                    flag(Rule::ConflictCap, seq, format!("{} conflict items with k = {k}", items.len()));
                }
                if *stage != Stage::Agreement {
                    flagged_items += items.len();
                }
                open = Some(OpenStage {
                    stage: *stage,
                    items: items.clone(),
                    tokens: Vec::new(),
                    start: e.seq,
                });
            }
            Event::StageSkipped { stage, items, reason } => {
                close(open.take(), false, &mut flag);
                if last_stage.is_some_and(|l| *stage <= l) {
                    flag(Rule::StageOrder, seq, format!("{stage} after {}", last_stage.unwrap()));
                }
                last_stage = Some(*stage);
                match reason {
                    SkipReason::Empty => {
                        let actual = analysis.map(|c| stage_list(c, *stage).len());
                        if *items != 0 || actual != Some(0) {
                            flag(Rule::StageOrder, seq, format!("{stage} skipped as empty with items"));
                        }
                    }
                    SkipReason::Disabled => {
                        if *stage != Stage::Agreement || info.include_agreement {
                            flag(Rule::StageOrder, seq, format!("{stage} skipped as disabled"));
                        }
                    }
                }
            }
            Event::Message(m) => {
                let suppressed: Vec<&str> = analysis
                    .map(|c| c.suppressed.iter().map(|f| f.feature.as_str()).collect())
                    .unwrap_or_default();
                for feature in referenced_features(m) {
                    if suppressed.contains(&feature.as_str()) {
                        flag(Rule::Suppression, seq, format!("message references irrelevant feature {feature}"));
                    }
                }
                if let MessagePayload::Flag { flag: f, .. } = &m.payload {
                    if f.kind == IssueKind::Irrelevant {
                        flag(Rule::Suppression, seq, format!("message carries irrelevant flag {}", f.feature));
                    }
                }
                if m.stage == Stage::Final {
                    if m.template_id != template::NO_ISSUES && m.template_id != template::SKIP {
                        flag(Rule::StepOrder, seq, format!("{} sent after the dialogue ended", m.template_id));
                    }
                    continue;
                }
                match open.as_mut() {
                    Some(o) if o.stage == m.stage => {
                        o.tokens.push(Token::Message(m.step, m.item));
                        if m.step == Step::Suggest {
                            let matches = match (&m.payload, m.item.and_then(|i| o.items.get(i))) {
                                (MessagePayload::Flag { flag: f, .. }, Some(StageItem::Flag(item))) => f == item,
                                (MessagePayload::Conflict { candidate, .. }, Some(StageItem::Conflict(item))) => {
                                    candidate == item
                                }
                                _ => false,
                            };
                            if !matches {
                                flag(Rule::StepOrder, seq, "suggestion differs from the analyzed item".into());
                            }
                        }
                    }
                    _ => flag(Rule::StepOrder, seq, format!("{} message outside its stage", m.stage)),
                }
            }
            Event::Reflection(r) => {
                submissions += 1;
                match open.as_mut() {
                    Some(o) if o.stage == r.stage => o.tokens.push(Token::Reflection(r.item)),
                    _ => flag(Rule::StepOrder, seq, "reflection outside its stage".into()),
                }
            }
            Event::Update { .. } => {
                submissions += 1;
                match open.as_mut() {
                    Some(o) => o.tokens.push(Token::Update),
                    None => flag(Rule::StepOrder, seq, "update outside a stage".into()),
                }
            }
            Event::Skipped { .. } => {
                submissions += 1;
                skipped = true;
                close(open.take(), true, &mut flag);
            }
            Event::Final(_) => {
                close(open.take(), false, &mut flag);
            }
        }
    }
    let bound = 1 + flagged_items * 3 + 4 + usize::from(skipped);
    if submissions > bound {
        flag(Rule::Termination, None, format!("{submissions} submissions exceed bound {bound}"));
    }
    out
}

fn stage_list(critique: &Critique, stage: Stage) -> Vec<StageItem> {
    match stage {
        Stage::Agreement => critique.agreement.iter().cloned().map(StageItem::Flag).collect(),
        Stage::Incompleteness => critique.incompleteness.iter().cloned().map(StageItem::Flag).collect(),
        Stage::Unreliability => critique.unreliability.iter().cloned().map(StageItem::Flag).collect(),
        Stage::Conflict => critique.conflicts.iter().cloned().map(StageItem::Conflict).collect(),
        _ => Vec::new(),
    }
}

fn referenced_features(message: &DialogueMessage) -> Vec<String> {
    match &message.payload {
        MessagePayload::Agreement { flags } => flags.iter().map(|f| f.feature.clone()).collect(),
        MessagePayload::Flag { flag, .. } => vec![flag.feature.clone()],
        MessagePayload::Question { target, .. } => match target {
            ReflectionTarget::Add { feature } | ReflectionTarget::Remove { feature } => vec![feature.clone()],
            ReflectionTarget::Alternative { .. } => Vec::new(),
        },
        _ => Vec::new(),
    }
}
