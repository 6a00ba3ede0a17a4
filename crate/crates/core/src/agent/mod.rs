//! The planning agent: prompt assembly, backends, reply filtering and
//! decomposition into simulator primitives.

pub mod action;
pub mod backend;
pub mod decompose;
pub mod planner;
pub mod prompt;

pub use action::{parse_action, ActionSpace, FailureKind, HighLevelAction, ParseFailure, Target, Verb};
pub use backend::{
    BackendConfig, BackendError, BackendFactory, Completion, PlannerBackend, PlannerRequest, RemoteChatBackend,
    ReplayOracle, ScriptedBackend, SeededExplorer,
};
pub use decompose::{approach, decompose, Decomposition};
pub use planner::{plan_step, Exchange, PlanError, PlanStep, PlannedAction, StepContext, DEFAULT_MAX_RETRIES};
pub use prompt::{build_prompt, Experience, PromptBundle, DEFAULT_HISTORY_LIMIT, OUTPUT_INSTRUCTION, SYSTEM_PROMPT};
