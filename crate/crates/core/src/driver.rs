//! The progressive iteration loop, run configuration and run outputs.
//!
//! Each iteration runs one episode per task against a database frozen for
//! the whole iteration; the records of the round are merged at the barrier.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    plan_step, ActionSpace, BackendConfig, BackendFactory, Decomposition, Exchange, Experience,
    PromptBundle, StepContext, DEFAULT_HISTORY_LIMIT, DEFAULT_MAX_RETRIES,
};
use crate::embedding::{Encoder, EncoderBackend, EncoderError};
use crate::gridworld::{bundled_tasks, load_task_dir, EpisodeResult, SearchError, Simulator, StepEffect, Task, TaskError};
use crate::metrics::{summary_table, transition_report, IterationReport, TransitionReport};
use crate::scene_graph::{extract, render_text};
use crate::trajectory_db::{DbError, RetrievalQuery, Step, TaskRecord, TrajectoryDb, DEFAULT_TOP_K};

pub const DEFAULT_ITERATIONS: usize = 6;

/// History step recorded when planning fails.
pub const PLANNER_FAILURE_ACTION: &str = "(planner failure)";

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("encoder: {0}")]
    Encoder(#[from] EncoderError),
    #[error("database: {0}")]
    Db(#[from] DbError),
    #[error("task {task}: {source}")]
    Search { task: String, source: SearchError },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> DriverError + '_ {
    move |source| DriverError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Iterate on the training tasks, then one frozen pass on the eval tasks.
    TrainEval,
    /// Iterate directly on the task set.
    #[default]
    SelfIter,
}

/// `"bundled"` or a directory of task TOML files.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum TaskSource {
    #[default]
    Bundled,
    Dir(PathBuf),
}

impl From<String> for TaskSource {
    fn from(s: String) -> Self {
        if s == "bundled" {
            Self::Bundled
        } else {
            Self::Dir(PathBuf::from(s))
        }
    }
}

impl From<TaskSource> for String {
    fn from(s: TaskSource) -> Self {
        match s {
            TaskSource::Bundled => "bundled".into(),
            TaskSource::Dir(p) => p.display().to_string(),
        }
    }
}

impl TaskSource {
    pub fn load(&self) -> Result<Vec<Task>, TaskError> {
        match self {
            Self::Bundled => Ok(bundled_tasks()),
            Self::Dir(dir) => load_task_dir(dir),
        }
    }
}

fn default_iterations() -> usize {
    DEFAULT_ITERATIONS
}
fn default_k() -> usize {
    DEFAULT_TOP_K
}
fn default_max_retries() -> usize {
    DEFAULT_MAX_RETRIES
}
fn default_history_limit() -> usize {
    DEFAULT_HISTORY_LIMIT
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub tasks: TaskSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_tasks: Option<TaskSource>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: usize,
    /// Overrides every task's step budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    /// History steps shown per retrieved experience.
    #[serde(default = "default_history_limit")]
    pub history_limit: usize,
    /// Stop once two consecutive iterations have the same done vector.
    #[serde(default = "default_true")]
    pub early_stop: bool,
    /// Episodes run in parallel within an iteration; defaults to the core count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub encoder: EncoderBackend,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, DriverError> {
        let config: Self = toml::from_str(text).map_err(|e| DriverError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, DriverError> {
        let text = fs::read_to_string(path).map_err(io_error(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            DriverError::Config(m) => DriverError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), DriverError> {
        let fail = |m: &str| Err(DriverError::Config(m.to_string()));
        if self.iterations == 0 {
            return fail("iterations must be at least 1");
        }
        if self.k == 0 {
            return fail("k must be at least 1");
        }
        if self.max_steps == Some(0) {
            return fail("max_steps must be positive");
        }
        if self.workers == Some(0) {
            return fail("workers must be positive");
        }
        if self.encoder.dimension() == 0 {
            return fail("encoder dimension must be positive");
        }
        if self.mode == Mode::TrainEval && self.eval_tasks.is_none() {
            return fail("train-eval mode needs eval_tasks");
        }
        Ok(())
    }

    fn prepare(&self, tasks: Vec<Task>) -> Vec<Task> {
        match self.max_steps {
            Some(m) => tasks.iter().map(|t| t.with_max_steps(m)).collect(),
            None => tasks,
        }
    }

    pub fn load_tasks(&self) -> Result<Vec<Task>, DriverError> {
        Ok(self.prepare(self.tasks.load()?))
    }

    /// Eval tasks, falling back to the main task set.
    pub fn load_eval_tasks(&self) -> Result<Vec<Task>, DriverError> {
        let source = self.eval_tasks.as_ref().unwrap_or(&self.tasks);
        Ok(self.prepare(source.load()?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedLog {
    pub task_id: String,
    pub iteration: usize,
    pub score: f64,
    pub done: bool,
}

/// One planning step of an episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningLog {
    pub step_index: usize,
    pub agent_state: String,
    pub scene_graph: String,
    pub retrieved: Vec<RetrievedLog>,
    pub exchanges: Vec<Exchange>,
    pub action: Option<String>,
    pub primitives: Vec<String>,
    pub observation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub task_id: String,
    pub iteration: usize,
    pub instruction: String,
    pub success: bool,
    pub steps: usize,
    pub shortest: usize,
    pub failure: Option<String>,
    pub planning: Vec<PlanningLog>,
}

#[derive(Debug, Clone)]
pub struct EpisodeRun {
    pub result: EpisodeResult,
    /// Missing only when the goal could not be encoded.
    pub record: Option<TaskRecord>,
    pub log: EpisodeLog,
    pub retrieval_calls: usize,
    pub backend_calls: usize,
    pub planner_failure: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub reports: Vec<IterationReport>,
    pub eval: Option<IterationReport>,
    pub transitions: TransitionReport,
    pub db: TrajectoryDb,
}

/// Runs episodes and iterations with a fixed encoder and backend factory.
pub struct Runner {
    config: RunConfig,
    encoder: Box<dyn Encoder>,
    factory: Box<dyn BackendFactory>,
    output: Option<PathBuf>,
}

impl Runner {
    /// Builds the encoder and backends named in `config`.
    pub fn from_config(config: RunConfig) -> Result<Self, DriverError> {
        config.validate()?;
        let encoder = config.encoder.build()?;
        let factory = config.backend.factory(config.seed);
        let output = config.output_dir.clone();
        Ok(Self {
            config,
            encoder,
            factory,
            output,
        })
    }

    pub fn with_parts(config: RunConfig, encoder: Box<dyn Encoder>, factory: Box<dyn BackendFactory>) -> Self {
        Self {
            output: config.output_dir.clone(),
            config,
            encoder,
            factory,
        }
    }

    pub fn with_output(mut self, dir: Option<PathBuf>) -> Self {
        self.output = dir;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn empty_db(&self) -> TrajectoryDb {
        TrajectoryDb::new(self.encoder.dimension())
    }

    /// One episode of `task` in `iteration`, retrieving from `db` at every
    /// planning step unless it is empty.
    pub fn run_episode(&self, task: &Task, iteration: usize, db: &TrajectoryDb) -> Result<EpisodeRun, DriverError> {
        let shortest = task.shortest_solution_steps().map_err(|source| DriverError::Search {
            task: task.id.clone(),
            source,
        })?;
        let mut sim = Simulator::new(task);
        let mut observation = sim.reset(self.config.seed);
        let mut log = EpisodeLog {
            task_id: task.id.clone(),
            iteration,
            instruction: task.instruction.clone(),
            success: false,
            steps: 0,
            shortest,
            failure: None,
            planning: Vec::new(),
        };
        let mut retrieval_calls = 0;
        let mut backend_calls = 0;
        let mut planner_failure = false;
        let mut history: Vec<Step> = Vec::new();
        let mut obs_embeddings = Vec::new();
        let mut scene_graphs = Vec::new();

        let goal_embedding = match self.encoder.encode(&task.instruction) {
            Ok(e) => Some(e),
            Err(e) => {
                log.failure = Some(format!("encoding the goal failed: {e}"));
                None
            }
        };
        let mut backend = match self.factory.create(&task.id, iteration) {
            Ok(b) => Some(b),
            Err(e) => {
                log.failure = Some(e.to_string());
                planner_failure = true;
                None
            }
        };

        let mut step_index = 0;
        while let (Some(goal_embedding), Some(backend)) = (&goal_embedding, backend.as_mut()) {
            if sim.is_finished() || step_index >= task.max_steps {
                break;
            }
            let graph_text = render_text(&extract(&observation));
            let obs_embedding = match self.encoder.encode(&graph_text) {
                Ok(e) => e,
                Err(e) => {
                    log.failure = Some(format!("encoding the observation failed: {e}"));
                    break;
                }
            };
            let hits = if db.is_empty() {
                Vec::new()
            } else {
                retrieval_calls += 1;
                let query = RetrievalQuery {
                    goal_embedding: goal_embedding.clone(),
                    obs_embedding: obs_embedding.clone(),
                };
                db.retrieve_top_k(&query, self.config.k)?
            };
            let experiences: Vec<Experience> = hits.iter().map(Experience::from_hit).collect();
            let space = ActionSpace::from_observation(&observation);
            let bundle = PromptBundle {
                goal_instruction: task.instruction.clone(),
                agent_state: observation.summary(),
                scene_graph_text: graph_text.clone(),
                action_space_text: space.render(),
                experiences,
                history_limit: self.config.history_limit,
            };
            let context = StepContext {
                task_id: &task.id,
                iteration,
                step_index,
            };
            let plan = plan_step(
                backend.as_mut(),
                &bundle,
                &space,
                &observation,
                context,
                self.config.max_retries,
            );
            backend_calls += plan.calls();
            let mut entry = PlanningLog {
                step_index,
                agent_state: bundle.agent_state.clone(),
                scene_graph: graph_text.clone(),
                retrieved: hits
                    .iter()
                    .map(|h| RetrievedLog {
                        task_id: h.record.task_id.clone(),
                        iteration: h.record.iteration,
                        score: h.score,
                        done: h.record.done,
                    })
                    .collect(),
                exchanges: plan.exchanges,
                action: None,
                primitives: Vec::new(),
                observation: String::new(),
            };
            obs_embeddings.push(obs_embedding);
            scene_graphs.push(graph_text);
            let planned = match plan.result {
                Ok(p) => p,
                Err(e) => {
                    planner_failure = true;
                    tracing::warn!(task = %task.id, iteration, "planner failure: {e}");
                    log.failure = Some(e.to_string());
                    entry.observation = e.to_string();
                    history.push(Step {
                        action: PLANNER_FAILURE_ACTION.into(),
                        observation: e.to_string(),
                    });
                    log.planning.push(entry);
                    break;
                }
            };
            entry.action = Some(planned.action.to_string());
            let stop = match planned.decomposition {
                Decomposition::Stop => true,
                Decomposition::Primitives(primitives) => {
                    for p in primitives {
                        entry.primitives.push(p.name().to_string());
                        let out = sim.step(p).expect("episode is running");
                        // The planner sees the new observation and plans again.
                        if out.done || out.effect == StepEffect::Blocked {
                            break;
                        }
                    }
                    false
                }
            };
            observation = sim.observe();
            entry.observation = observation.summary();
            history.push(Step {
                action: planned.action.to_string(),
                observation: entry.observation.clone(),
            });
            log.planning.push(entry);
            step_index += 1;
            if stop {
                break;
            }
        }

        let success = sim.goal_reached();
        log.success = success;
        log.steps = sim.step_count();
        let record = match goal_embedding {
            Some(goal_embedding) if !history.is_empty() => Some(TaskRecord {
                task_id: task.id.clone(),
                iteration,
                goal_text: task.instruction.clone(),
                goal_embedding,
                obs_embeddings,
                scene_graphs,
                history,
                done: success,
            }),
            _ => None,
        };
        Ok(EpisodeRun {
            result: EpisodeResult {
                task_id: task.id.clone(),
                success,
                steps: sim.step_count(),
                shortest,
            },
            record,
            log,
            retrieval_calls,
            backend_calls,
            planner_failure,
        })
    }

    fn workers(&self, jobs: usize) -> usize {
        let default = std::thread::available_parallelism().map_or(1, |n| n.get());
        self.config.workers.unwrap_or(default).clamp(1, jobs.max(1))
    }

    /// Runs every task once against the frozen `db`, in task order.
    pub fn run_episodes(&self, tasks: &[Task], iteration: usize, db: &TrajectoryDb) -> Result<Vec<EpisodeRun>, DriverError> {
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<EpisodeRun, DriverError>>>> =
            tasks.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..self.workers(tasks.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(task) = tasks.get(i) else { break };
                    let run = self.run_episode(task, iteration, db);
                    *slots[i].lock().expect("slot lock") = Some(run);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().expect("slot lock").expect("every task ran"))
            .collect()
    }

    fn report(iteration: usize, runs: &[EpisodeRun]) -> IterationReport {
        let mut report = IterationReport::new(iteration, runs.iter().map(|r| r.result.clone()).collect());
        report.retrieval_calls = runs.iter().map(|r| r.retrieval_calls).sum();
        report.backend_calls = runs.iter().map(|r| r.backend_calls).sum();
        report.planner_failures = runs.iter().filter(|r| r.planner_failure).count();
        report
    }

    /// One iteration: episodes against the frozen `db`, then the barrier
    /// update. Writes `iter_XX/` when an output directory is set.
    pub fn run_iteration(&self, tasks: &[Task], iteration: usize, db: &mut TrajectoryDb) -> Result<IterationReport, DriverError> {
        let runs = self.run_episodes(tasks, iteration, db)?;
        let report = Self::report(iteration, &runs);
        let batch: Vec<TaskRecord> = runs.iter().filter_map(|r| r.record.clone()).collect();
        db.update_after_iteration(batch)?;
        if let Some(out) = &self.output {
            let dir = out.join(iteration_dir(iteration));
            write_episodes(&dir, &runs)?;
            write_json(&dir.join("report.json"), &report)?;
            db.save(&dir.join("db.jsonl"))?;
        }
        tracing::info!(
            iteration,
            total_sr = report.total_sr,
            task_sr = report.task_sr,
            spl = report.spl,
            "iteration finished"
        );
        Ok(report)
    }

    /// Iterations `start..=config.iterations` starting from `db`.
    pub fn run_progressive(
        &self,
        tasks: &[Task],
        start: usize,
        mut db: TrajectoryDb,
    ) -> Result<(Vec<IterationReport>, TrajectoryDb), DriverError> {
        if db.dimension() != self.encoder.dimension() {
            return Err(DbError::DimensionMismatch {
                expected: self.encoder.dimension(),
                actual: db.dimension(),
            }
            .into());
        }
        let mut reports: Vec<IterationReport> = Vec::new();
        for iteration in start.max(1)..=self.config.iterations {
            let report = self.run_iteration(tasks, iteration, &mut db)?;
            let saturated = reports
                .last()
                .is_some_and(|prev| prev.done_by_task() == report.done_by_task());
            reports.push(report);
            if self.config.early_stop && saturated {
                tracing::info!(iteration, "done vector unchanged; stopping early");
                break;
            }
        }
        Ok((reports, db))
    }

    /// Frozen-database pass; writes `eval/` when an output directory is set.
    pub fn evaluate(&self, tasks: &[Task], iteration: usize, db: &TrajectoryDb) -> Result<IterationReport, DriverError> {
        let runs = self.run_episodes(tasks, iteration, db)?;
        let report = Self::report(iteration, &runs);
        if let Some(out) = &self.output {
            let dir = out.join("eval");
            write_episodes(&dir, &runs)?;
            write_json(&dir.join("report.json"), &report)?;
        }
        Ok(report)
    }

    /// The configured run: progressive iterations, then the eval pass in
    /// train-eval mode.
    pub fn run(&self) -> Result<RunOutcome, DriverError> {
        let tasks = self.config.load_tasks()?;
        if let Some(out) = &self.output {
            fs::create_dir_all(out).map_err(io_error(out))?;
            let path = out.join("config.toml");
            fs::write(&path, self.config.to_toml()).map_err(io_error(&path))?;
        }
        let (reports, db) = self.run_progressive(&tasks, 1, self.empty_db())?;
        let eval = match self.config.mode {
            Mode::SelfIter => None,
            Mode::TrainEval => {
                let eval_tasks = self.config.load_eval_tasks()?;
                let iteration = reports.last().map_or(1, |r| r.iteration + 1);
                Some(self.evaluate(&eval_tasks, iteration, &db)?)
            }
        };
        let transitions = transition_report(&reports);
        if let Some(out) = &self.output {
            let path = out.join("summary.txt");
            fs::write(&path, render_summary(&reports, eval.as_ref(), &transitions)).map_err(io_error(&path))?;
        }
        Ok(RunOutcome {
            reports,
            eval,
            transitions,
            db,
        })
    }
}

/// Runs `config` end to end.
pub fn run_iterations(config: &RunConfig) -> Result<RunOutcome, DriverError> {
    Runner::from_config(config.clone())?.run()
}

pub fn iteration_dir(iteration: usize) -> String {
    format!("iter_{iteration:02}")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DriverError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_error(parent))?;
    }
    let text = serde_json::to_string_pretty(value).expect("log types serialize");
    fs::write(path, text + "\n").map_err(io_error(path))
}

fn write_episodes(dir: &Path, runs: &[EpisodeRun]) -> Result<(), DriverError> {
    for run in runs {
        write_json(&dir.join("episodes").join(format!("{}.json", run.log.task_id)), &run.log)?;
    }
    Ok(())
}

/// Human-readable run summary.
pub fn render_summary(reports: &[IterationReport], eval: Option<&IterationReport>, transitions: &TransitionReport) -> String {
    let mut out = summary_table(reports);
    if let Some(e) = eval {
        out.push_str(&format!(
            "\neval (frozen database): total_sr {:.3}, task_sr {:.3}, spl {:.3} over {} episodes\n",
            e.total_sr,
            e.task_sr,
            e.spl,
            e.results.len()
        ));
    }
    if !transitions.transitions.is_empty() {
        out.push_str("\ntask status transitions\n");
        out.push_str(&transitions.to_string());
    }
    out
}

/// Reads `iter_XX/report.json` files of a run directory in iteration order.
pub fn load_reports(run_dir: &Path) -> Result<Vec<IterationReport>, DriverError> {
    let entries = fs::read_dir(run_dir).map_err(io_error(run_dir))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("iter_"))
        })
        .collect();
    dirs.sort();
    let mut reports = Vec::new();
    for dir in dirs {
        let path = dir.join("report.json");
        let text = fs::read_to_string(&path).map_err(io_error(&path))?;
        let report: IterationReport = serde_json::from_str(&text).map_err(|e| DriverError::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        reports.push(report);
    }
    reports.sort_by_key(|r| r.iteration);
    Ok(reports)
}
