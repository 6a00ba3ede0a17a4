//! Planner backends: a remote chat-completion client and offline mocks.

use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{fnv1a64, tokenize};
use crate::geometry::Cell;
use crate::gridworld::SimObservation;

use super::action::{HighLevelAction, Verb};
use super::decompose::decompose;
use super::prompt::Experience;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Response(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

/// Everything a backend may look at for one planning call.
#[derive(Debug, Clone, Copy)]
pub struct PlannerRequest<'a> {
    pub task_id: &'a str,
    pub goal: &'a str,
    pub iteration: usize,
    /// High-level actions already executed this episode.
    pub step_index: usize,
    /// 0 on the first try, then one per retry.
    pub attempt: usize,
    pub system: &'a str,
    pub prompt: &'a str,
    pub experiences: &'a [Experience],
    pub observation: &'a SimObservation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    /// Raw response body, when there is one.
    pub raw: Option<String>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            raw: None,
        }
    }
}

pub trait PlannerBackend: Send {
    fn complete(&mut self, request: &PlannerRequest<'_>) -> Result<Completion, BackendError>;
}

/// Creates one backend session per episode.
pub trait BackendFactory: Send + Sync {
    fn create(&self, task_id: &str, iteration: usize) -> Result<Box<dyn PlannerBackend>, BackendError>;
}

impl<F> BackendFactory for F
where
    F: Fn(&str, usize) -> Result<Box<dyn PlannerBackend>, BackendError> + Send + Sync,
{
    fn create(&self, task_id: &str, iteration: usize) -> Result<Box<dyn PlannerBackend>, BackendError> {
        self(task_id, iteration)
    }
}

/// Replies from a fixed list; the last reply repeats once the list runs out.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    replies: Vec<String>,
    calls: usize,
}

impl ScriptedBackend {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self {
            replies: replies.into_iter().map(Into::into).collect(),
            calls: 0,
        }
    }

    pub fn calls(&self) -> usize {
        self.calls
    }
}

impl PlannerBackend for ScriptedBackend {
    fn complete(&mut self, _request: &PlannerRequest<'_>) -> Result<Completion, BackendError> {
        let reply = self
            .replies
            .get(self.calls)
            .or(self.replies.last())
            .cloned()
            .unwrap_or_default();
        self.calls += 1;
        Ok(Completion::text(reply))
    }
}

/// Probability of restricting a draw to goal-related objects.
const GOAL_BIAS: f64 = 0.75;

/// Random but feasible actions, seeded per (seed, task, iteration).
///
/// Candidates are the manipulations that decompose cleanly in the current
/// observation. With probability 0.75 the draw is limited to actions on
/// objects whose kind appears in the goal instruction. Never says `done`.
#[derive(Debug, Clone)]
pub struct SeededExplorer {
    seed: u64,
    rng: Option<ChaCha8Rng>,
}

impl SeededExplorer {
    pub fn new(seed: u64) -> Self {
        Self { seed, rng: None }
    }

    fn rng(&mut self, task_id: &str, iteration: usize) -> &mut ChaCha8Rng {
        let seed = self.seed ^ fnv1a64(task_id.as_bytes()) ^ (iteration as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        self.rng.get_or_insert_with(|| ChaCha8Rng::seed_from_u64(seed))
    }

    /// Feasible candidate actions, each flagged as goal-related or not.
    pub fn candidates(observation: &SimObservation, goal: &str) -> Vec<(HighLevelAction, bool)> {
        let world = observation.world();
        let words: Vec<String> = tokenize(goal).filter(|w| w.len() >= 3).collect();
        let related = |i: usize| {
            let kind = &world.info(i).kind;
            words.iter().any(|w| w.contains(kind.as_str()) || kind.contains(w.as_str()))
        };
        let mut out = Vec::new();
        let held = world.held();
        for i in 0..world.object_count() {
            let label = world.info(i).label.clone();
            let verbs: &[Verb] = if held.is_some() {
                &[Verb::Drop, Verb::Toggle, Verb::Open, Verb::Close]
            } else {
                &[Verb::Pickup, Verb::Toggle, Verb::Open, Verb::Close]
            };
            for &verb in verbs {
                out.push((HighLevelAction::on_object(verb, label.clone()), related(i)));
            }
        }
        if held.is_some() {
            // Free floor around landmarks, for when a landmark's cell is full.
            let mut cells: Vec<(Cell, bool)> = Vec::new();
            for i in (0..world.object_count()).filter(|&i| world.info(i).landmark) {
                let Some(c) = world.object_cell(i) else { continue };
                for y in c.y.saturating_sub(1)..=c.y + 1 {
                    for x in c.x.saturating_sub(1)..=c.x + 1 {
                        let n = Cell::new(x, y);
                        if world.in_bounds(n) && world.is_navigable(n) && n != world.agent().cell {
                            match cells.iter_mut().find(|(k, _)| *k == n) {
                                Some(entry) => entry.1 |= related(i),
                                None => cells.push((n, related(i))),
                            }
                        }
                    }
                }
            }
            cells.sort_by_key(|(c, _)| (c.y, c.x));
            out.extend(cells.into_iter().map(|(c, r)| (HighLevelAction::on_cell(Verb::Drop, c), r)));
        }
        out.retain(|(a, _)| decompose(a, observation).is_ok());
        out
    }

    /// Next exploratory action for `request`.
    pub fn next_action(&mut self, request: &PlannerRequest<'_>) -> HighLevelAction {
        let candidates = Self::candidates(request.observation, request.goal);
        let rng = self.rng(request.task_id, request.iteration);
        let focused: Vec<&HighLevelAction> = candidates.iter().filter(|(_, r)| *r).map(|(a, _)| a).collect();
        let pool: Vec<&HighLevelAction> = if !focused.is_empty() && rng.gen_bool(GOAL_BIAS) {
            focused
        } else {
            candidates.iter().map(|(a, _)| a).collect()
        };
        match pool.choose(rng) {
            Some(a) => (*a).clone(),
            None => HighLevelAction::done(),
        }
    }
}

impl PlannerBackend for SeededExplorer {
    fn complete(&mut self, request: &PlannerRequest<'_>) -> Result<Completion, BackendError> {
        Ok(Completion::text(self.next_action(request).to_reply()))
    }
}

/// Replays the top retrieved trajectory when it is a success on the same
/// goal; otherwise explores.
#[derive(Debug, Clone)]
pub struct ReplayOracle {
    explorer: SeededExplorer,
}

impl ReplayOracle {
    pub fn new(seed: u64) -> Self {
        Self {
            explorer: SeededExplorer::new(seed),
        }
    }
}

impl PlannerBackend for ReplayOracle {
    fn complete(&mut self, request: &PlannerRequest<'_>) -> Result<Completion, BackendError> {
        match request.experiences.first() {
            Some(top) if top.done && top.goal_text == request.goal => {
                let text = match top.history.get(request.step_index) {
                    Some(step) => format!("Action: {}", step.action),
                    None => HighLevelAction::done().to_reply(),
                };
                Ok(Completion::text(text))
            }
            _ => self.explorer.complete(request),
        }
    }
}

/// Chat-completion client: POSTs `{base_url}/chat/completions` with a system
/// and a user message and reads `choices[0].message.content`.
pub struct RemoteChatBackend {
    url: String,
    model: String,
    api_key: Option<String>,
    temperature: f64,
    client: reqwest::blocking::Client,
}

impl RemoteChatBackend {
    pub fn new(
        base_url: &str,
        model: impl Into<String>,
        api_key: Option<String>,
        temperature: f64,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.into(),
            api_key,
            temperature,
            client,
        })
    }
}

impl PlannerBackend for RemoteChatBackend {
    fn complete(&mut self, request: &PlannerRequest<'_>) -> Result<Completion, BackendError> {
        let payload = serde_json::json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.prompt},
            ],
        });
        let mut http = self.client.post(&self.url).json(&payload);
        if let Some(key) = &self.api_key {
            http = http.bearer_auth(key);
        }
        let response = http.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status();
        let raw = response.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Transport(format!("HTTP status {status}: {raw}")));
        }
        let body: serde_json::Value =
            serde_json::from_str(&raw).map_err(|e| BackendError::Response(e.to_string()))?;
        let text = body
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| BackendError::Response("no choices[0].message.content".into()))?;
        Ok(Completion {
            text: text.to_string(),
            raw: Some(raw),
        })
    }
}

fn default_api_key_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_timeout_secs() -> u64 {
    60
}

/// Backend selection as it appears in run configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackendConfig {
    ReplayOracle,
    SeededExplorer,
    RemoteChat {
        base_url: String,
        model: String,
        /// Environment variable holding the API key; unset means no key.
        #[serde(default = "default_api_key_env")]
        api_key_env: String,
        #[serde(default)]
        temperature: f64,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self::ReplayOracle
    }
}

impl BackendConfig {
    /// Factory whose mock sessions are seeded with `seed`.
    pub fn factory(&self, seed: u64) -> Box<dyn BackendFactory> {
        let config = self.clone();
        Box::new(move |_task: &str, _iteration: usize| config.create(seed))
    }

    pub fn create(&self, seed: u64) -> Result<Box<dyn PlannerBackend>, BackendError> {
        Ok(match self {
            Self::ReplayOracle => Box::new(ReplayOracle::new(seed)),
            Self::SeededExplorer => Box::new(SeededExplorer::new(seed)),
            Self::RemoteChat {
                base_url,
                model,
                api_key_env,
                temperature,
                timeout_secs,
            } => Box::new(RemoteChatBackend::new(
                base_url,
                model.clone(),
                std::env::var(api_key_env).ok(),
                *temperature,
                Duration::from_secs(*timeout_secs),
            )?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::action::{parse_action, ActionSpace};
    use crate::gridworld::bundled_tasks;
    use crate::trajectory_db::Step;

    fn observation(id: &str) -> SimObservation {
        let t = bundled_tasks().into_iter().find(|t| t.id == id).unwrap();
        SimObservation::from_world(t.initial_world.clone(), 0)
    }

    fn request<'a>(obs: &'a SimObservation, experiences: &'a [Experience], step_index: usize) -> PlannerRequest<'a> {
        PlannerRequest {
            task_id: "move_mug_to_table",
            goal: "Move the mug from the counter to the table",
            iteration: 1,
            step_index,
            attempt: 0,
            system: "",
            prompt: "",
            experiences,
            observation: obs,
        }
    }

    fn experience(goal: &str, done: bool) -> Experience {
        Experience {
            task_id: "move_mug_to_table".into(),
            score: 2.0,
            goal_text: goal.into(),
            scene_graph: String::new(),
            history: vec![
                Step {
                    action: "pickup(mug_1)".into(),
                    observation: "x".into(),
                },
                Step {
                    action: "drop(table_1)".into(),
                    observation: "y".into(),
                },
            ],
            done,
        }
    }

    #[test]
    fn scripted_repeats_last() {
        let obs = observation("move_mug_to_table");
        let mut b = ScriptedBackend::new(["a", "b"]);
        let texts: Vec<String> = (0..4).map(|_| b.complete(&request(&obs, &[], 0)).unwrap().text).collect();
        assert_eq!(texts, ["a", "b", "b", "b"]);
        assert_eq!(b.calls(), 4);
    }

    #[test]
    fn explorer_is_seeded_and_feasible() {
        let obs = observation("move_mug_to_table");
        let space = ActionSpace::from_observation(&obs);
        let draw = |seed| {
            let mut e = SeededExplorer::new(seed);
            (0..20)
                .map(|_| e.complete(&request(&obs, &[], 0)).unwrap().text)
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        for text in draw(5) {
            let a = parse_action(&text, &space).unwrap();
            assert!(decompose(&a, &obs).is_ok(), "{a}");
            assert_ne!(a.verb, Verb::Done);
        }
    }

    #[test]
    fn explorer_candidates_respect_inventory() {
        let obs = observation("move_mug_to_table");
        let c = SeededExplorer::candidates(&obs, "Move the mug from the counter to the table");
        assert!(c.iter().all(|(a, _)| a.verb != Verb::Drop));
        assert!(c.contains(&(HighLevelAction::on_object(Verb::Pickup, "mug_1"), true)));
        assert!(c.contains(&(HighLevelAction::on_object(Verb::Pickup, "plate_1"), false)));
    }

    #[test]
    fn replay_follows_successful_same_goal_hit() {
        let obs = observation("move_mug_to_table");
        let hits = [experience("Move the mug from the counter to the table", true)];
        let mut o = ReplayOracle::new(0);
        assert_eq!(o.complete(&request(&obs, &hits, 0)).unwrap().text, "Action: pickup(mug_1)");
        assert_eq!(o.complete(&request(&obs, &hits, 1)).unwrap().text, "Action: drop(table_1)");
        assert_eq!(o.complete(&request(&obs, &hits, 2)).unwrap().text, "Action: done()");
    }

    #[test]
    fn replay_explores_otherwise() {
        let obs = observation("move_mug_to_table");
        let explore = |hits: &[Experience]| {
            let mut o = ReplayOracle::new(3);
            o.complete(&request(&obs, hits, 0)).unwrap().text
        };
        let mut plain = SeededExplorer::new(3);
        let expected = plain.complete(&request(&obs, &[], 0)).unwrap().text;
        assert_eq!(explore(&[]), expected);
        assert_eq!(explore(&[experience("Move the mug from the counter to the table", false)]), expected);
        assert_eq!(explore(&[experience("Put the book on the shelf", true)]), expected);
    }

    #[test]
    fn config_parses_from_toml() {
        let c: BackendConfig = toml::from_str("kind = \"remote-chat\"\nbase_url = \"http://x\"\nmodel = \"m\"").unwrap();
        assert_eq!(
            c,
            BackendConfig::RemoteChat {
                base_url: "http://x".into(),
                model: "m".into(),
                api_key_env: "OPENAI_API_KEY".into(),
                temperature: 0.0,
                timeout_secs: 60,
            }
        );
        let c: BackendConfig = toml::from_str("kind = \"seeded-explorer\"").unwrap();
        assert_eq!(c, BackendConfig::SeededExplorer);
    }
}
