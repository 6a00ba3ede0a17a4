//! The four-channel planner prompt.

use serde::{Deserialize, Serialize};

use crate::trajectory_db::{RetrievalHit, Step};

pub const DEFAULT_HISTORY_LIMIT: usize = 20;

pub const OUTPUT_INSTRUCTION: &str = "respond with exactly one line: Action: <verb>(<argument>)";

pub const SYSTEM_PROMPT: &str = "You control a household robot in a grid world. \
Choose the next high-level action that makes progress toward the goal.";

/// One retrieved past episode as shown to the planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub task_id: String,
    pub score: f64,
    pub goal_text: String,
    /// Scene graph of the best-matching stored step.
    pub scene_graph: String,
    /// Full history; truncated only when rendered.
    pub history: Vec<Step>,
    pub done: bool,
}

impl Experience {
    pub fn from_hit(hit: &RetrievalHit<'_>) -> Self {
        let record = hit.record;
        Self {
            task_id: record.task_id.clone(),
            score: hit.score,
            goal_text: record.goal_text.clone(),
            scene_graph: record
                .scene_graphs
                .get(hit.best_step)
                .cloned()
                .unwrap_or_default(),
            history: record.history.clone(),
            done: record.done,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub goal_instruction: String,
    /// Pose and inventory line.
    pub agent_state: String,
    pub scene_graph_text: String,
    pub action_space_text: String,
    /// Highest score first.
    pub experiences: Vec<Experience>,
    pub history_limit: usize,
}

fn or_placeholder(text: &str, placeholder: &str) -> String {
    if text.trim().is_empty() {
        placeholder.to_string()
    } else {
        text.trim_end().to_string()
    }
}

/// Renders the prompt: GOAL, OBSERVATION, ACTIONS, EXPERIENCES, then the
/// output instruction. Experiences keep their given order; only the last
/// `history_limit` steps of each history are shown.
pub fn build_prompt(bundle: &PromptBundle) -> String {
    let mut out = String::new();
    out.push_str("GOAL\n");
    out.push_str(bundle.goal_instruction.trim());
    out.push_str("\n\nOBSERVATION\n");
    out.push_str(&bundle.agent_state);
    out.push('\n');
    out.push_str(&or_placeholder(&bundle.scene_graph_text, "(no relations)"));
    out.push_str("\n\nACTIONS\n");
    out.push_str(bundle.action_space_text.trim_end());
    out.push_str("\n\nEXPERIENCES\n");
    if bundle.experiences.is_empty() {
        out.push_str("(none)\n");
    }
    for (n, e) in bundle.experiences.iter().enumerate() {
        out.push_str(&format!(
            "[{}] score={:.6} done={}\ngoal: {}\nscene graph:\n{}\nhistory:\n",
            n + 1,
            e.score,
            e.done,
            e.goal_text,
            or_placeholder(&e.scene_graph, "(no relations)")
        ));
        let skip = e.history.len().saturating_sub(bundle.history_limit);
        if skip > 0 {
            out.push_str(&format!("({skip} earlier steps omitted)\n"));
        }
        for (i, step) in e.history.iter().enumerate().skip(skip) {
            out.push_str(&format!("{}. {} -> {}\n", i + 1, step.action, step.observation));
        }
    }
    out.push('\n');
    out.push_str(OUTPUT_INSTRUCTION);
    out.push('\n');
    out
}

/// Prompt for a retry: the original plus the rejection reasons so far.
pub fn with_feedback(prompt: &str, reasons: &[String]) -> String {
    let mut out = prompt.to_string();
    for r in reasons {
        out.push_str(&format!("previous reply rejected ({r}); try again\n"));
    }
    out
}
