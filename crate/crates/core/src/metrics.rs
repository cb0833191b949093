//! Reliance and learning measures over completed sessions.

use serde::{Deserialize, Serialize};

use crate::workflow::{Mode, StageTag, Transcript};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("no task outcomes")]
    Empty,
    #[error("session {0} has not reached its final decision")]
    Incomplete(String),
    #[error("task {0} has no ground-truth label")]
    MissingGroundTruth(String),
    #[error("transcript has no session start event")]
    MissingStart,
    #[error("no {0:?} tasks")]
    EmptyStage(StageTag),
    #[error("accuracy {0} outside [0, 1]")]
    OutOfRange(f64),
}

/// One finished task, with the AI prediction recorded whether or not it
/// was shown.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_id: String,
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub participant: Option<String>,
    #[serde(default)]
    pub mode: Option<Mode>,
    pub ai_prediction: String,
    pub ground_truth: String,
    pub human_initial: String,
    pub human_final: String,
    #[serde(default)]
    pub stage_tag: Option<StageTag>,
}

impl TaskOutcome {
    pub fn ai_correct(&self) -> bool {
        self.ai_prediction == self.ground_truth
    }

    pub fn from_transcript(transcript: &Transcript) -> Result<Self, MetricsError> {
        let info = transcript.info().ok_or(MetricsError::MissingStart)?;
        let incomplete = || MetricsError::Incomplete(info.session_id.clone());
        let initial = transcript.initial().ok_or_else(incomplete)?;
        let last = transcript.final_state().ok_or_else(incomplete)?;
        Ok(Self {
            task_id: info.task.id.clone(),
            session_id: Some(info.session_id.clone()),
            participant: info.participant.clone(),
            mode: Some(info.mode),
            ai_prediction: info.ai_prediction.clone(),
            ground_truth: info
                .ground_truth
                .clone()
                .ok_or_else(|| MetricsError::MissingGroundTruth(info.task.id.clone()))?,
            human_initial: initial.decision.clone(),
            human_final: last.decision.clone(),
            stage_tag: info.stage_tag,
        })
    }
}

/// `numerator / denominator`, absent when the denominator is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: Option<f64>,
    pub numerator: usize,
    pub denominator: usize,
}

impl Ratio {
    pub fn new(numerator: usize, denominator: usize) -> Self {
        Self {
            value: (denominator > 0).then(|| numerator as f64 / denominator as f64),
            numerator,
            denominator,
        }
    }

    fn count<'a, T: 'a>(items: impl IntoIterator<Item = &'a T>, within: impl Fn(&T) -> bool, hit: impl Fn(&T) -> bool) -> Self {
        let (mut numerator, mut denominator) = (0, 0);
        for item in items {
            if within(item) {
                denominator += 1;
                if hit(item) {
                    numerator += 1;
                }
            }
        }
        Self::new(numerator, denominator)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelianceReport {
    pub tasks: usize,
    /// Finals matching the AI, over all tasks.
    pub agreement: Ratio,
    /// Finals matching the AI, over tasks whose initial decision differed.
    pub switch: Ratio,
    /// Finals matching the AI, over tasks where the AI was wrong.
    pub over_reliance: Ratio,
    /// Finals differing from the AI, over tasks where the AI was right.
    pub under_reliance: Ratio,
}

/// Reliance over the given outcomes. Callers restrict these to
/// intervention tasks (see [`intervention_only`]).
pub fn reliance(outcomes: &[TaskOutcome]) -> Result<RelianceReport, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::Empty);
    }
    let follows = |o: &TaskOutcome| o.human_final == o.ai_prediction;
    Ok(RelianceReport {
        tasks: outcomes.len(),
        agreement: Ratio::count(outcomes, |_| true, follows),
        switch: Ratio::count(outcomes, |o| o.human_initial != o.ai_prediction, follows),
        over_reliance: Ratio::count(outcomes, |o| !o.ai_correct(), follows),
        under_reliance: Ratio::count(outcomes, TaskOutcome::ai_correct, |o| !follows(o)),
    })
}

/// Outcomes tagged as intervention tasks, plus untagged ones.
pub fn intervention_only(outcomes: &[TaskOutcome]) -> Vec<TaskOutcome> {
    outcomes
        .iter()
        .filter(|o| matches!(o.stage_tag, None | Some(StageTag::Intervention)))
        .cloned()
        .collect()
}

/// Gain-scaled accuracy change: improvements are scaled by the room left
/// above `before`, declines by `before` itself.
pub fn normalized_change(before: f64, after: f64) -> Result<f64, MetricsError> {
    for v in [before, after] {
        if !(0.0..=1.0).contains(&v) {
            return Err(MetricsError::OutOfRange(v));
        }
    }
    Ok(if after > before {
        (after - before) / (1.0 - before)
    } else if after < before {
        (after - before) / before
    } else {
        0.0
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningReport {
    pub pre_test: Ratio,
    /// Accuracy of initial decisions during the intervention.
    pub intervention: Ratio,
    pub post_test: Ratio,
    /// Intervention versus pre-test.
    pub during: f64,
    /// Post-test versus pre-test.
    pub after: f64,
}

pub fn learning_report(outcomes: &[TaskOutcome]) -> Result<LearningReport, MetricsError> {
    let accuracy = |tag: StageTag, use_initial: bool| {
        let ratio = Ratio::count(
            outcomes,
            |o| o.stage_tag == Some(tag),
            |o| {
                let decision = if use_initial { &o.human_initial } else { &o.human_final };
                *decision == o.ground_truth
            },
        );
        match ratio.value {
            Some(v) => Ok((ratio, v)),
            None => Err(MetricsError::EmptyStage(tag)),
        }
    };
    let (pre_test, pre) = accuracy(StageTag::PreTest, false)?;
    let (intervention, during) = accuracy(StageTag::Intervention, true)?;
    let (post_test, post) = accuracy(StageTag::PostTest, false)?;
    Ok(LearningReport {
        pre_test,
        intervention,
        post_test,
        during: normalized_change(pre, during)?,
        after: normalized_change(pre, post)?,
    })
}
