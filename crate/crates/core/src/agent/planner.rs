//! One planning step: prompt, parse, filter, decompose, retry.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::SimObservation;

use super::action::{parse_action, ActionSpace, HighLevelAction, ParseFailure};
use super::backend::{BackendError, PlannerBackend, PlannerRequest};
use super::decompose::{decompose, Decomposition};
use super::prompt::{build_prompt, with_feedback, PromptBundle, SYSTEM_PROMPT};

pub const DEFAULT_MAX_RETRIES: usize = 3;

/// One backend call as it goes to the episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub prompt: String,
    pub completion: Option<String>,
    pub raw: Option<String>,
    /// Why the reply was rejected, or the transport error.
    pub rejected: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("no valid action after {attempts} attempts; last: {last}")]
    RetriesExhausted { attempts: usize, last: ParseFailure },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedAction {
    pub action: HighLevelAction,
    pub decomposition: Decomposition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanStep {
    pub result: Result<PlannedAction, PlanError>,
    pub exchanges: Vec<Exchange>,
}

impl PlanStep {
    pub fn calls(&self) -> usize {
        self.exchanges.len()
    }
}

/// Episode-level fields of a planner request.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub task_id: &'a str,
    pub iteration: usize,
    pub step_index: usize,
}

/// Asks `backend` for the next action, at most `1 + max_retries` times.
/// Replies that fail to parse or decompose are fed back with the reason.
/// A transport error ends the step at once.
pub fn plan_step(
    backend: &mut dyn PlannerBackend,
    bundle: &PromptBundle,
    space: &ActionSpace,
    observation: &SimObservation,
    context: StepContext<'_>,
    max_retries: usize,
) -> PlanStep {
    let base = build_prompt(bundle);
    let mut reasons: Vec<String> = Vec::new();
    let mut exchanges = Vec::new();
    let mut last = None;
    for attempt in 0..=max_retries {
        let prompt = with_feedback(&base, &reasons);
        let request = PlannerRequest {
            task_id: context.task_id,
            goal: &bundle.goal_instruction,
            iteration: context.iteration,
            step_index: context.step_index,
            attempt,
            system: SYSTEM_PROMPT,
            prompt: &prompt,
            experiences: &bundle.experiences,
            observation,
        };
        let completion = match backend.complete(&request) {
            Ok(c) => c,
            Err(e) => {
                exchanges.push(Exchange {
                    prompt,
                    completion: None,
                    raw: None,
                    rejected: Some(e.to_string()),
                });
                return PlanStep {
                    result: Err(e.into()),
                    exchanges,
                };
            }
        };
        let outcome = parse_action(&completion.text, space)
            .and_then(|a| decompose(&a, observation).map(|d| (a, d)));
        exchanges.push(Exchange {
            prompt,
            completion: Some(completion.text),
            raw: completion.raw,
            rejected: outcome.as_ref().err().map(ToString::to_string),
        });
        match outcome {
            Ok((action, decomposition)) => {
                return PlanStep {
                    result: Ok(PlannedAction { action, decomposition }),
                    exchanges,
                }
            }
            Err(failure) => {
                reasons.push(failure.to_string());
                last = Some(failure);
            }
        }
    }
    PlanStep {
        result: Err(PlanError::RetriesExhausted {
            attempts: max_retries + 1,
            last: last.expect("at least one attempt"),
        }),
        exchanges,
    }
}
