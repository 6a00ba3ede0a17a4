//! Progressive retrieval-augmented planning for household tasks in a
//! symbolic grid world.

pub mod agent;
pub mod driver;
pub mod embedding;
pub mod geometry;
pub mod gridworld;
pub mod metrics;
pub mod nav;
pub mod scene_graph;
pub mod trajectory_db;

pub use agent::{BackendConfig, HighLevelAction, PlannerBackend, PromptBundle};
pub use driver::{run_iterations, RunConfig, RunOutcome, Runner};
pub use embedding::{cosine, Embedding, Encoder, EncoderBackend, HashEncoder};
pub use geometry::{Cell, Heading};
pub use gridworld::{EpisodeResult, LowLevelAction, SimObservation, Simulator, Task};
pub use metrics::{spl, task_sr, total_sr, transition_report, IterationReport, TransitionReport};
pub use scene_graph::{SceneGraph, Triple};
pub use trajectory_db::{RetrievalHit, RetrievalQuery, TaskRecord, TrajectoryDb};
