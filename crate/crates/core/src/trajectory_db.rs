//! Progressive trajectory database: one record per task, exact top-k
//! retrieval, and a line-delimited JSON file format.
//!
//! A record is scored against a query as
//! `cos(q_goal, k_goal) + max_t cos(q_obs, k_obs[t])`.
//!
//! File layout: a header line
//! `{"format":"prag-trajectory-db","version":1,"dimension":D}` followed by one
//! JSON [`TaskRecord`] per line.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine, Embedding};

pub const FORMAT_NAME: &str = "prag-trajectory-db";
pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_TOP_K: usize = 3;

#[derive(Debug, Error)]
pub enum DbError {
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("record `{0}` is malformed: {1}")]
    InvalidRecord(String, String),
    #[error("batch mixes iterations {0} and {1}")]
    MixedIterations(usize, usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One `(action, observation)` step of a trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub action: String,
    pub observation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub iteration: usize,
    pub goal_text: String,
    pub goal_embedding: Embedding,
    /// Scene-graph embedding of the observation each step was planned from.
    pub obs_embeddings: Vec<Embedding>,
    /// Scene-graph text matching each entry of `obs_embeddings`.
    pub scene_graphs: Vec<String>,
    pub history: Vec<Step>,
    pub done: bool,
}

impl TaskRecord {
    pub fn dimension(&self) -> usize {
        self.goal_embedding.dimension()
    }

    pub fn validate(&self, dimension: usize) -> Result<(), DbError> {
        let invalid = |why: &str| DbError::InvalidRecord(self.task_id.clone(), why.to_string());
        if self.history.is_empty() {
            return Err(invalid("history is empty"));
        }
        if self.obs_embeddings.len() != self.history.len() {
            return Err(invalid("observation embeddings and history differ in length"));
        }
        if self.scene_graphs.len() != self.history.len() {
            return Err(invalid("scene graphs and history differ in length"));
        }
        for e in std::iter::once(&self.goal_embedding).chain(&self.obs_embeddings) {
            if e.dimension() != dimension {
                return Err(DbError::DimensionMismatch {
                    expected: dimension,
                    actual: e.dimension(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalQuery {
    pub goal_embedding: Embedding,
    pub obs_embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalHit<'a> {
    pub score: f64,
    /// Step whose observation matched the query best.
    pub best_step: usize,
    pub record: &'a TaskRecord,
}

fn check_dims(query: &RetrievalQuery, dimension: usize) -> Result<(), DbError> {
    for e in [&query.goal_embedding, &query.obs_embedding] {
        if e.dimension() != dimension {
            return Err(DbError::DimensionMismatch {
                expected: dimension,
                actual: e.dimension(),
            });
        }
    }
    Ok(())
}

/// Score and arg-max step of `record` for `query`.
pub fn score_with_step(query: &RetrievalQuery, record: &TaskRecord) -> Result<(f64, usize), DbError> {
    check_dims(query, record.dimension())?;
    let goal = cosine(&query.goal_embedding, &record.goal_embedding);
    let mut best = (f64::NEG_INFINITY, 0);
    for (t, key) in record.obs_embeddings.iter().enumerate() {
        if key.dimension() != record.dimension() {
            return Err(DbError::DimensionMismatch {
                expected: record.dimension(),
                actual: key.dimension(),
            });
        }
        let sim = cosine(&query.obs_embedding, key);
        if sim > best.0 {
            best = (sim, t);
        }
    }
    if record.obs_embeddings.is_empty() {
        return Err(DbError::InvalidRecord(record.task_id.clone(), "no observations".into()));
    }
    Ok((goal + best.0, best.1))
}

pub fn score(query: &RetrievalQuery, record: &TaskRecord) -> Result<f64, DbError> {
    score_with_step(query, record).map(|(s, _)| s)
}

/// Ranking order: score descending, then newer iteration, then task id.
pub fn rank_order(a: (f64, &TaskRecord), b: (f64, &TaskRecord)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then_with(|| b.1.iteration.cmp(&a.1.iteration))
        .then_with(|| a.1.task_id.cmp(&b.1.task_id))
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dimension: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDb {
    dimension: usize,
    records: BTreeMap<String, TaskRecord>,
}

impl TrajectoryDb {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            records: BTreeMap::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, task_id: &str) -> Option<&TaskRecord> {
        self.records.get(task_id)
    }

    /// Records in task-id order.
    pub fn records(&self) -> impl Iterator<Item = &TaskRecord> {
        self.records.values()
    }

    /// Exact scan: every record is scored and the best `k` returned.
    pub fn retrieve_top_k(&self, query: &RetrievalQuery, k: usize) -> Result<Vec<RetrievalHit<'_>>, DbError> {
        check_dims(query, self.dimension)?;
        let mut hits = self
            .records
            .values()
            .map(|record| {
                let (score, best_step) = score_with_step(query, record)?;
                Ok(RetrievalHit {
                    score,
                    best_step,
                    record,
                })
            })
            .collect::<Result<Vec<_>, DbError>>()?;
        hits.sort_by(|a, b| rank_order((a.score, a.record), (b.score, b.record)));
        hits.truncate(k);
        Ok(hits)
    }

    /// Merges one iteration's records. A stored successful record is never
    /// replaced by a failed one; otherwise the newer record wins. Tasks not
    /// in the batch are untouched.
    pub fn update_after_iteration(&mut self, batch: Vec<TaskRecord>) -> Result<(), DbError> {
        if let Some(first) = batch.first() {
            if let Some(other) = batch.iter().find(|r| r.iteration != first.iteration) {
                return Err(DbError::MixedIterations(first.iteration, other.iteration));
            }
        }
        for record in &batch {
            record.validate(self.dimension)?;
        }
        for record in batch {
            let keep_stored = self
                .records
                .get(&record.task_id)
                .is_some_and(|stored| stored.done && !record.done);
            if !keep_stored {
                self.records.insert(record.task_id.clone(), record);
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DbError> {
        let mut out = BufWriter::new(File::create(path)?);
        let header = Header {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            dimension: self.dimension,
        };
        serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        for record in self.records.values() {
            serde_json::to_writer(&mut out, record).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DbError> {
        Self::read(BufReader::new(File::open(path)?))
    }

    pub fn read(reader: impl BufRead) -> Result<Self, DbError> {
        let mut lines = reader.lines();
        let parse_err = |line: usize, message: String| DbError::Parse { line, message };
        let header_line = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header line".into()))??;
        let header: Header =
            serde_json::from_str(&header_line).map_err(|e| parse_err(1, format!("bad header: {e}")))?;
        if header.format != FORMAT_NAME {
            return Err(parse_err(1, format!("unknown format `{}`", header.format)));
        }
        if header.version != FORMAT_VERSION {
            return Err(parse_err(1, format!("unsupported version {}", header.version)));
        }
        let mut db = Self::new(header.dimension);
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: TaskRecord =
                serde_json::from_str(&line).map_err(|e| parse_err(line_no, e.to_string()))?;
            record
                .validate(db.dimension)
                .map_err(|e| parse_err(line_no, e.to_string()))?;
            if db.records.contains_key(&record.task_id) {
                return Err(parse_err(line_no, format!("duplicate task `{}`", record.task_id)));
            }
            db.records.insert(record.task_id.clone(), record);
        }
        Ok(db)
    }
}
