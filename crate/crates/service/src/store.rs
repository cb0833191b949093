//! In-memory session registry.
//!
//! The map lock is held only to look up or insert an entry; each session
//! has its own lock, so engine work for different sessions runs in
//! parallel while actions on one session are serialized.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use aact_core::workflow::{
    Answer, Clock, DialogueMessage, ExpectedInput, Mode, Session, SessionOptions, Stage, StageTag, Transcript,
    UpdateStrategy,
};
use aact_core::{Engine, EngineParams, Instance, Value};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub mode: Mode,
    /// A task from the held-out pool; assigned round-robin when absent.
    #[serde(default)]
    pub task_id: Option<String>,
    #[serde(default)]
    pub participant: Option<String>,
    #[serde(default)]
    pub stage_tag: Option<StageTag>,
    #[serde(default)]
    pub include_agreement: Option<bool>,
    #[serde(default)]
    pub update_strategy: Option<UpdateStrategy>,
    /// Overrides the service-wide engine parameters for this session.
    #[serde(default)]
    pub params: Option<EngineParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureValue {
    pub name: String,
    pub value: Value,
}

/// What a participant sees of a task; never includes the label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub task_id: String,
    pub features: Vec<FeatureValue>,
    pub classes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub mode: Mode,
    pub task: TaskView,
}

/// Returned by every mutating call; the messages themselves are fetched
/// from the prompt endpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepState {
    pub session_id: String,
    pub stage: Stage,
    pub is_final: bool,
    pub awaiting: ExpectedInput,
}

struct Entry {
    session: Session,
    persisted: bool,
}

pub struct SessionStore {
    engine: Arc<Engine>,
    tasks: Vec<Instance>,
    params: EngineParams,
    clock: Clock,
    sink: Option<PathBuf>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Entry>>>>,
    cursor: AtomicUsize,
}

impl SessionStore {
    pub fn new(engine: Arc<Engine>, tasks: Vec<Instance>, params: EngineParams) -> Self {
        Self {
            engine,
            tasks,
            params,
            clock: Clock::System,
            sink: None,
            sessions: Mutex::new(HashMap::new()),
            cursor: AtomicUsize::new(0),
        }
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    /// Completed transcripts are written to `dir/<session id>.jsonl`.
    pub fn with_sink(mut self, dir: impl Into<PathBuf>) -> Self {
        self.sink = Some(dir.into());
        self
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn tasks(&self) -> &[Instance] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task_view(&self, task: &Instance) -> TaskView {
        let schema = self.engine.schema();
        TaskView {
            task_id: task.id.clone(),
            features: schema
                .features
                .iter()
                .zip(&task.values)
                .map(|(spec, value)| FeatureValue {
                    name: spec.name.clone(),
                    value: value.clone(),
                })
                .collect(),
            classes: schema.classes.clone(),
        }
    }

    fn pick_task(&self, task_id: Option<&str>) -> Result<Instance, ServiceError> {
        match task_id {
            Some(id) => self
                .tasks
                .iter()
                .find(|t| t.id == id)
                .cloned()
                .ok_or_else(|| ServiceError::TaskNotFound(id.to_string())),
            None if self.tasks.is_empty() => Err(ServiceError::NoTasks),
            None => {
                let n = self.cursor.fetch_add(1, Ordering::Relaxed);
                Ok(self.tasks[n % self.tasks.len()].clone())
            }
        }
    }

    pub fn create(&self, request: &CreateSession) -> Result<Created, ServiceError> {
        let task = self.pick_task(request.task_id.as_deref())?;
        let defaults = SessionOptions::default();
        let options = SessionOptions {
            mode: request.mode,
            params: request.params.clone().unwrap_or_else(|| self.params.clone()),
            include_agreement: request.include_agreement.unwrap_or(defaults.include_agreement),
            update_strategy: request.update_strategy.unwrap_or(defaults.update_strategy),
            stage_tag: request.stage_tag,
            participant: request.participant.clone(),
            clock: self.clock,
        };
        let id = uuid::Uuid::new_v4().simple().to_string();
        let view = self.task_view(&task);
        let session = Session::new(id.clone(), self.engine.clone(), task, options)?;
        let entry = Arc::new(Mutex::new(Entry {
            session,
            persisted: false,
        }));
        self.sessions.lock().insert(id.clone(), entry);
        tracing::info!(session = %id, mode = %request.mode, task = %view.task_id, "session created");
        Ok(Created {
            session_id: id,
            mode: request.mode,
            task: view,
        })
    }

    fn entry(&self, id: &str) -> Result<Arc<Mutex<Entry>>, ServiceError> {
        self.sessions
            .lock()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::SessionNotFound(id.to_string()))
    }

    pub fn task(&self, id: &str) -> Result<TaskView, ServiceError> {
        let entry = self.entry(id)?;
        let guard = entry.lock();
        Ok(self.task_view(guard.session.task()))
    }

    pub fn apply(&self, id: &str, answer: &Answer) -> Result<StepState, ServiceError> {
        let entry = self.entry(id)?;
        let mut guard = entry.lock();
        guard.session.apply(answer)?;
        if guard.session.is_final() && !guard.persisted {
            if let Some(dir) = &self.sink {
                std::fs::create_dir_all(dir).map_err(aact_core::workflow::TranscriptError::from)?;
                guard.session.transcript().write_jsonl(dir.join(format!("{id}.jsonl")))?;
                tracing::info!(session = %id, "transcript persisted");
            }
            guard.persisted = true;
        }
        let session = &guard.session;
        Ok(StepState {
            session_id: id.to_string(),
            stage: session.stage(),
            is_final: session.is_final(),
            awaiting: session.awaiting().map_or(ExpectedInput::None, |m| m.expected_input),
        })
    }

    pub fn prompt(&self, id: &str) -> Result<DialogueMessage, ServiceError> {
        let entry = self.entry(id)?;
        let mut guard = entry.lock();
        Ok(guard.session.next_prompt()?)
    }

    pub fn transcript(&self, id: &str) -> Result<Transcript, ServiceError> {
        let entry = self.entry(id)?;
        let guard = entry.lock();
        Ok(guard.session.transcript().clone())
    }

    /// True once the session is final and its transcript has been handed
    /// to the sink.
    pub fn is_persisted(&self, id: &str) -> Result<bool, ServiceError> {
        Ok(self.entry(id)?.lock().persisted)
    }
}
