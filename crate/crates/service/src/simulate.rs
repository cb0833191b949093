//! Scripted participants that drive sessions end to end.
//!
//! A participant answers every prompt through a [`Backend`], which is the
//! in-process [`SessionStore`] or anything that speaks the HTTP API. Its
//! update behaviour is set by a [`Policy`]; initial decisions come from a
//! [`HumanModel`] that is right with a fixed probability.

use std::fmt;
use std::str::FromStr;

use aact_core::workflow::{
    Answer, DialogueMessage, ExpectedInput, HumanState, MessagePayload, Mode, ReflectionTarget, StageTag, Step,
    Transcript, UpdateRequest, WorkflowError,
};
use aact_core::counterfactual::IssueKind;
use aact_core::{Engine, EngineParams, Instance};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::store::{CreateSession, Created, SessionStore, StepState};

#[derive(Debug, thiserror::Error)]
pub enum SimulationError {
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("remote call failed with {status} {code}: {message}")]
    Remote { status: u16, code: String, message: String },
    #[error("policy has no answer for a prompt expecting {0}")]
    UndefinedPolicy(ExpectedInput),
    #[error("unknown policy `{0}` (expected always_keep, always_adopt or threshold:<p>)")]
    UnknownPolicy(String),
    #[error("task pool has {correct} AI-correct and {wrong} AI-wrong tasks; a participant needs 16 and 4")]
    ThinPool { correct: usize, wrong: usize },
    #[error("task `{0}` has no ground-truth label")]
    Unlabeled(String),
}

/// Session operations as seen by a client.
pub trait Backend {
    fn create(&mut self, request: &CreateSession) -> Result<Created, SimulationError>;
    fn apply(&mut self, session: &str, answer: &Answer) -> Result<StepState, SimulationError>;
    /// The next prompt, or `None` once nothing is left to show.
    fn prompt(&mut self, session: &str) -> Result<Option<DialogueMessage>, SimulationError>;
    fn transcript(&mut self, session: &str) -> Result<Transcript, SimulationError>;
}

impl Backend for &SessionStore {
    fn create(&mut self, request: &CreateSession) -> Result<Created, SimulationError> {
        Ok(SessionStore::create(self, request)?)
    }

    fn apply(&mut self, session: &str, answer: &Answer) -> Result<StepState, SimulationError> {
        Ok(SessionStore::apply(self, session, answer)?)
    }

    fn prompt(&mut self, session: &str) -> Result<Option<DialogueMessage>, SimulationError> {
        match SessionStore::prompt(self, session) {
            Ok(message) => Ok(Some(message)),
            Err(ServiceError::Workflow(WorkflowError::NoPrompt(_))) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn transcript(&mut self, session: &str) -> Result<Transcript, SimulationError> {
        Ok(SessionStore::transcript(self, session)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Never changes anything and reports unchanged confidence.
    AlwaysKeep,
    /// Makes the change every suggestion implies.
    AlwaysAdopt,
    /// Makes a suggested change only when the AI-reported shift is at least
    /// this large.
    Threshold(f64),
}

impl FromStr for Policy {
    type Err = SimulationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "always_keep" => return Ok(Policy::AlwaysKeep),
            "always_adopt" => return Ok(Policy::AlwaysAdopt),
            _ => {}
        }
        let p = s
            .strip_prefix("threshold:")
            .or_else(|| s.strip_prefix("threshold(").and_then(|r| r.strip_suffix(')')))
            .and_then(|p| p.trim().parse::<f64>().ok())
            .filter(|p| (0.0..=1.0).contains(p))
            .ok_or_else(|| SimulationError::UnknownPolicy(s.to_string()))?;
        Ok(Policy::Threshold(p))
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::AlwaysKeep => f.write_str("always_keep"),
            Policy::AlwaysAdopt => f.write_str("always_adopt"),
            Policy::Threshold(p) => write!(f, "threshold:{p}"),
        }
    }
}

/// A change implied by one message, with the AI-reported shift behind it.
struct Suggestion {
    shift: f64,
    apply: Box<dyn Fn(&mut HumanState)>,
}

fn suggestions(messages: &[DialogueMessage], current: &HumanState) -> Vec<Suggestion> {
    let mut out = Vec::new();
    for message in messages {
        match &message.payload {
            MessagePayload::Flag { flag, .. } if message.step == Step::Suggest => {
                let feature = flag.feature.clone();
                let apply: Box<dyn Fn(&mut HumanState)> = match flag.kind {
                    IssueKind::MissingSupporting | IssueKind::MissingOpposing => Box::new(move |s: &mut HumanState| {
                        if !s.argument.contains(&feature) {
                            s.argument.push(feature.clone());
                        }
                    }),
                    IssueKind::Unreliable => Box::new(move |s: &mut HumanState| s.argument.retain(|f| *f != feature)),
                    _ => continue,
                };
                out.push(Suggestion {
                    shift: flag.delta,
                    apply,
                });
            }
            MessagePayload::Conflict { candidate, .. } if message.step == Step::Suggest => {
                // the triangulation table for the same item carries the
                // confidence gap between the two hypotheses
                let shift = messages
                    .iter()
                    .find(|m| m.step == Step::Triangulate && m.item == message.item)
                    .and_then(|m| match &m.payload {
                        MessagePayload::Triangulation(table) => table.rows.get(1).and_then(|r| r.change),
                        _ => None,
                    })
                    .unwrap_or(candidate.confidence);
                let (alt, features) = (candidate.alt_decision.clone(), candidate.features.clone());
                out.push(Suggestion {
                    shift,
                    apply: Box::new(move |s: &mut HumanState| {
                        s.decision = alt.clone();
                        s.argument = features.clone();
                    }),
                });
            }
            MessagePayload::Recommendation(rec) => {
                let prediction = rec.prediction.clone();
                out.push(Suggestion {
                    shift: rec.confidence - current.confidence as f64 / 100.0,
                    apply: Box::new(move |s: &mut HumanState| s.decision = prediction.clone()),
                });
            }
            _ => {}
        }
    }
    out
}

impl Policy {
    /// The answer to `awaiting`, given the messages shown since the last
    /// update.
    pub fn answer(
        &self,
        current: &HumanState,
        awaiting: &DialogueMessage,
        shown: &[DialogueMessage],
        rng: &mut impl Rng,
    ) -> Result<Answer, SimulationError> {
        match awaiting.expected_input {
            ExpectedInput::ConfidenceSlider => {
                let reported = match (self, &awaiting.payload) {
                    (Policy::AlwaysKeep, _) => current.confidence,
                    (
                        _,
                        MessagePayload::Question {
                            target: ReflectionTarget::Alternative { .. },
                            ..
                        },
                    ) => rng.random_range(10..=60),
                    _ => {
                        let shift: i64 = rng.random_range(-20..=20);
                        (current.confidence as i64 + shift).clamp(0, 100) as u32
                    }
                };
                Ok(Answer::Reflection {
                    reported_confidence: reported,
                })
            }
            ExpectedInput::UpdateForm => {
                let threshold = match self {
                    Policy::AlwaysKeep => return Ok(Answer::Update(UpdateRequest::keep())),
                    Policy::AlwaysAdopt => 0.0,
                    Policy::Threshold(p) => *p,
                };
                let mut next = current.clone();
                for s in suggestions(shown, current) {
                    if s.shift.abs() >= threshold {
                        (s.apply)(&mut next);
                    }
                }
                Ok(Answer::Update(UpdateRequest {
                    decision: (next.decision != current.decision).then_some(next.decision),
                    argument: (next.argument != current.argument).then_some(next.argument),
                    confidence: None,
                }))
            }
            ExpectedInput::None => Err(SimulationError::UndefinedPolicy(ExpectedInput::None)),
        }
    }
}

/// How simulated participants form their initial decision.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanModel {
    /// Chance the initial decision equals the ground truth.
    pub accuracy: f64,
    pub max_argument: usize,
}

impl Default for HumanModel {
    fn default() -> Self {
        Self {
            accuracy: 0.6,
            max_argument: 3,
        }
    }
}

impl HumanModel {
    pub fn initial(&self, classes: &[String], features: &[String], truth: usize, rng: &mut impl Rng) -> HumanState {
        let decision = if rng.random_bool(self.accuracy.clamp(0.0, 1.0)) {
            truth
        } else {
            let others: Vec<usize> = (0..classes.len()).filter(|&c| c != truth).collect();
            *others.choose(rng).unwrap_or(&truth)
        };
        let size = rng.random_range(1..=self.max_argument.clamp(1, features.len().max(1)));
        let argument = features.choose_multiple(rng, size).cloned().collect();
        HumanState {
            decision: classes[decision].clone(),
            argument,
            confidence: rng.random_range(40..=90),
        }
    }
}

/// Drives one session to its end and returns its id.
pub fn run_session<B: Backend>(
    backend: &mut B,
    request: &CreateSession,
    task: &Instance,
    policy: Policy,
    human: &HumanModel,
    rng: &mut impl Rng,
) -> Result<String, SimulationError> {
    let truth = task.label.ok_or_else(|| SimulationError::Unlabeled(task.id.clone()))?;
    let request = CreateSession {
        task_id: Some(task.id.clone()),
        ..request.clone()
    };
    let created = backend.create(&request)?;
    let id = created.session_id;
    let features: Vec<String> = created.task.features.iter().map(|f| f.name.clone()).collect();
    let mut current = human.initial(&created.task.classes, &features, truth, rng);
    backend.apply(&id, &Answer::Initial(current.clone()))?;
    let mut shown = Vec::new();
    while let Some(message) = backend.prompt(&id)? {
        if message.expected_input == ExpectedInput::None {
            shown.push(message);
            continue;
        }
        let answer = policy.answer(&current, &message, &shown, rng)?;
        if let Answer::Update(update) = &answer {
            current = HumanState {
                decision: update.decision.clone().unwrap_or(current.decision),
                argument: update.argument.clone().unwrap_or(current.argument),
                confidence: update.confidence.unwrap_or(current.confidence),
            };
            shown.clear();
        }
        backend.apply(&id, &answer)?;
    }
    Ok(id)
}

/// The twenty tasks of one participant: five pre-test, ten intervention
/// and five post-test, with the AI right on four fifths of each block.
pub fn participant_tasks(
    engine: &Engine,
    pool: &[Instance],
    rng: &mut impl Rng,
) -> Result<Vec<(Instance, StageTag)>, SimulationError> {
    let mut correct = Vec::new();
    let mut wrong = Vec::new();
    for task in pool {
        let truth = task.label.ok_or_else(|| SimulationError::Unlabeled(task.id.clone()))?;
        let predicted = engine
            .classifier()
            .predict(task)
            .map_err(|e| ServiceError::Workflow(WorkflowError::Engine(e.into())))?;
        if predicted == truth {
            correct.push(task);
        } else {
            wrong.push(task);
        }
    }
    if correct.len() < 16 || wrong.len() < 4 {
        return Err(SimulationError::ThinPool {
            correct: correct.len(),
            wrong: wrong.len(),
        });
    }
    let mut correct: Vec<&Instance> = correct.choose_multiple(rng, 16).copied().collect();
    let mut wrong: Vec<&Instance> = wrong.choose_multiple(rng, 4).copied().collect();
    let mut out = Vec::with_capacity(20);
    for (tag, right, missed) in [
        (StageTag::PreTest, 4, 1),
        (StageTag::Intervention, 8, 2),
        (StageTag::PostTest, 4, 1),
    ] {
        let mut block: Vec<&Instance> = correct.drain(..right).chain(wrong.drain(..missed)).collect();
        block.shuffle(rng);
        out.extend(block.into_iter().map(|t| (t.clone(), tag)));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// Assistance used on intervention tasks; pre- and post-test tasks
    /// always run without assistance.
    pub mode: Mode,
    pub policy: Policy,
    pub participants: usize,
    pub seed: u64,
    pub human: HumanModel,
    pub params: Option<EngineParams>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Aact,
            policy: Policy::AlwaysKeep,
            participants: 1,
            seed: 0,
            human: HumanModel::default(),
            params: None,
        }
    }
}

/// Runs every participant's twenty tasks and returns the session ids in
/// order.
pub fn simulate<B: Backend>(
    backend: &mut B,
    engine: &Engine,
    pool: &[Instance],
    config: &SimulationConfig,
) -> Result<Vec<String>, SimulationError> {
    let mut ids = Vec::new();
    for p in 0..config.participants {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(p as u64);
        let participant = format!("p{:03}", p + 1);
        for (task, tag) in participant_tasks(engine, pool, &mut rng)? {
            let mode = if tag == StageTag::Intervention {
                config.mode
            } else {
                Mode::HumanOnly
            };
            let request = CreateSession {
                mode,
                participant: Some(participant.clone()),
                stage_tag: Some(tag),
                params: config.params.clone(),
                ..CreateSession::default()
            };
            ids.push(run_session(backend, &request, &task, config.policy, &config.human, &mut rng)?);
        }
    }
    Ok(ids)
}
