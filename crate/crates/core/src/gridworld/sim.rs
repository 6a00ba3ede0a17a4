use super::{AgentPose, LowLevelAction, SimError, StepEffect, Task, World};
use crate::scene_graph::Relation;

/// Full-observability snapshot of the world after a step.
#[derive(Debug, Clone, PartialEq)]
pub struct SimObservation {
    world: World,
    step_count: usize,
}

impl SimObservation {
    pub fn from_world(world: World, step_count: usize) -> Self {
        Self { world, step_count }
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn agent(&self) -> AgentPose {
        self.world.agent()
    }

    pub fn visible_labels(&self) -> Vec<&str> {
        self.world.labels().collect()
    }

    pub fn is_visible(&self, label: &str) -> bool {
        self.world.index_of(label).is_some()
    }

    pub fn relation(&self, a: &str, b: &str, rel: Relation) -> Result<bool, SimError> {
        self.world.relation(a, b, rel)
    }

    /// One-line pose/inventory summary used in trajectory histories.
    pub fn summary(&self) -> String {
        let agent = self.agent();
        let holding = self
            .world
            .held()
            .map_or("nothing", |i| self.world.info(i).label.as_str());
        format!(
            "agent at {} facing {}, holding {holding}",
            agent.cell, agent.heading
        )
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: SimObservation,
    pub done: bool,
    pub effect: StepEffect,
}

/// One episode of one task.
#[derive(Debug, Clone)]
pub struct Simulator {
    task: Task,
    world: World,
    step_count: usize,
    finished: bool,
    seed: u64,
}

impl Simulator {
    pub fn new(task: &Task) -> Self {
        Self {
            task: task.clone(),
            world: task.initial_world.clone(),
            step_count: 0,
            finished: false,
            seed: 0,
        }
    }

    /// Restores the initial world. Bundled tasks are deterministic; the seed
    /// is kept for randomized task variants.
    pub fn reset(&mut self, seed: u64) -> SimObservation {
        self.world = self.task.initial_world.clone();
        self.step_count = 0;
        self.finished = false;
        self.seed = seed;
        self.observe()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn goal_reached(&self) -> bool {
        self.task.goal.is_satisfied(&self.world)
    }

    pub fn observe(&self) -> SimObservation {
        SimObservation {
            world: self.world.clone(),
            step_count: self.step_count,
        }
    }

    /// Executes one primitive. `done` is set once the goal holds or the step
    /// budget is spent; stepping afterwards is an error.
    pub fn step(&mut self, action: LowLevelAction) -> Result<StepOutcome, SimError> {
        if self.finished {
            return Err(SimError::EpisodeFinished);
        }
        let effect = self.world.apply(action);
        self.step_count += 1;
        let done = self.goal_reached() || self.step_count >= self.task.max_steps;
        self.finished = done;
        Ok(StepOutcome {
            observation: self.observe(),
            done,
            effect,
        })
    }
}
