//! Success rates, SPL and cross-iteration transition tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::gridworld::EpisodeResult;

/// Successful episodes over all episodes; 0 for no episodes.
pub fn total_sr(results: &[EpisodeResult]) -> f64 {
    if results.is_empty() {
        tracing::warn!("total_sr of an empty result set is taken as 0");
        return 0.0;
    }
    results.iter().filter(|r| r.success).count() as f64 / results.len() as f64
}

/// Fraction of task ids with at least one success; 0 for no episodes.
pub fn task_sr(results: &[EpisodeResult]) -> f64 {
    if results.is_empty() {
        tracing::warn!("task_sr of an empty result set is taken as 0");
        return 0.0;
    }
    let mut tasks: BTreeMap<&str, bool> = BTreeMap::new();
    for r in results {
        *tasks.entry(r.task_id.as_str()).or_default() |= r.success;
    }
    tasks.values().filter(|&&s| s).count() as f64 / tasks.len() as f64
}

/// Success weighted by path length: mean of `S * P / max(L, P)` with `L`
/// the steps taken and `P` the shortest solution.
pub fn spl(results: &[EpisodeResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let sum: f64 = results
        .iter()
        .filter(|r| r.success)
        .map(|r| {
            let p = r.shortest.max(1) as f64;
            p / (r.steps as f64).max(p)
        })
        .sum();
    sum / results.len() as f64
}

/// Outcome of one iteration over a task set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub results: Vec<EpisodeResult>,
    pub total_sr: f64,
    pub task_sr: f64,
    pub spl: f64,
    pub retrieval_calls: usize,
    pub backend_calls: usize,
    pub planner_failures: usize,
}

impl IterationReport {
    pub fn new(iteration: usize, results: Vec<EpisodeResult>) -> Self {
        Self {
            iteration,
            total_sr: total_sr(&results),
            task_sr: task_sr(&results),
            spl: spl(&results),
            results,
            retrieval_calls: 0,
            backend_calls: 0,
            planner_failures: 0,
        }
    }

    /// Success per task id; a task counts as done if any episode succeeded.
    pub fn done_by_task(&self) -> BTreeMap<String, bool> {
        let mut out: BTreeMap<String, bool> = BTreeMap::new();
        for r in &self.results {
            *out.entry(r.task_id.clone()).or_default() |= r.success;
        }
        out
    }

    pub fn successful_tasks(&self) -> BTreeSet<String> {
        self.done_by_task()
            .into_iter()
            .filter_map(|(t, d)| d.then_some(t))
            .collect()
    }
}

/// Retention rates from iteration `from` to iteration `to`. A rate is `None`
/// when no task started in that state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    pub true_count: usize,
    pub false_count: usize,
    pub true_to_true: Option<f64>,
    pub true_to_false: Option<f64>,
    pub false_to_true: Option<f64>,
    pub false_to_false: Option<f64>,
}

/// Compares done flags of tasks present in both maps.
pub fn transition(from: usize, a: &BTreeMap<String, bool>, to: usize, b: &BTreeMap<String, bool>) -> Transition {
    let mut counts = [[0usize; 2]; 2];
    for (task, &was) in a {
        if let Some(&now) = b.get(task) {
            counts[usize::from(was)][usize::from(now)] += 1;
        }
    }
    let rate = |n: usize, d: usize| (d > 0).then(|| n as f64 / d as f64);
    let t = counts[1][0] + counts[1][1];
    let f = counts[0][0] + counts[0][1];
    Transition {
        from,
        to,
        true_count: t,
        false_count: f,
        true_to_true: rate(counts[1][1], t),
        true_to_false: rate(counts[1][0], t),
        false_to_true: rate(counts[0][1], f),
        false_to_false: rate(counts[0][0], f),
    }
}

/// Every ordered pair of iterations `(i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    pub transitions: Vec<Transition>,
}

pub fn transition_report(reports: &[IterationReport]) -> TransitionReport {
    let done: Vec<(usize, BTreeMap<String, bool>)> =
        reports.iter().map(|r| (r.iteration, r.done_by_task())).collect();
    let mut transitions = Vec::new();
    for (i, (from, a)) in done.iter().enumerate() {
        for (to, b) in &done[i + 1..] {
            transitions.push(transition(*from, a, *to, b));
        }
    }
    TransitionReport { transitions }
}

impl TransitionReport {
    pub fn get(&self, from: usize, to: usize) -> Option<&Transition> {
        self.transitions.iter().find(|t| t.from == from && t.to == to)
    }
}

fn pct(rate: Option<f64>) -> String {
    rate.map_or_else(|| "-".to_string(), |r| format!("{:.1}%", 100.0 * r))
}

impl fmt::Display for TransitionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<10} {:>5} {:>5} {:>8} {:>8} {:>8} {:>8}",
            "iter", "#T", "#F", "T->T", "T->F", "F->T", "F->F"
        )?;
        for t in &self.transitions {
            writeln!(
                f,
                "{:<10} {:>5} {:>5} {:>8} {:>8} {:>8} {:>8}",
                format!("{} -> {}", t.from, t.to),
                t.true_count,
                t.false_count,
                pct(t.true_to_true),
                pct(t.true_to_false),
                pct(t.false_to_true),
                pct(t.false_to_false)
            )?;
        }
        Ok(())
    }
}

/// Per-iteration metrics table.
pub fn summary_table(reports: &[IterationReport]) -> String {
    let mut out = format!(
        "{:<6} {:>6} {:>9} {:>8} {:>7} {:>10} {:>9} {:>9}\n",
        "iter", "tasks", "total_sr", "task_sr", "spl", "retrievals", "llm_calls", "failures"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<6} {:>6} {:>9.3} {:>8.3} {:>7.3} {:>10} {:>9} {:>9}\n",
            r.iteration,
            r.results.len(),
            r.total_sr,
            r.task_sr,
            r.spl,
            r.retrieval_calls,
            r.backend_calls,
            r.planner_failures
        ));
    }
    out
}
