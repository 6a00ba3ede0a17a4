//! Deterministic household grid world.
//!
//! Fixtures (tables, sinks, cabinets) and movable items live in cells. Items
//! in one cell form a stack ordered by `layer`; a cell holds at most
//! [`CELL_CAPACITY`] objects. The agent walks on empty floor cells and acts on
//! the cell it faces.

mod search;
mod sim;
mod task;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Cell, Heading};
use crate::nav::NavGrid;
use crate::scene_graph::Relation;

pub use search::{shortest_solution_steps_uncached, SearchError};
pub use sim::{SimObservation, Simulator, StepOutcome};
pub use task::{bundled_tasks, load_task_dir, EpisodeResult, Goal, GoalAtom, Task, TaskError};

pub const CELL_CAPACITY: usize = 3;
pub const DEFAULT_MAX_STEPS: usize = 60;
/// Label standing for the agent in `held_by` relations.
pub const AGENT_LABEL: &str = "agent";

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("unknown object label `{0}`")]
    UnknownLabel(String),
    #[error("episode already finished")]
    EpisodeFinished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowLevelAction {
    TurnLeft,
    TurnRight,
    Forward,
    Pickup,
    Drop,
    Toggle,
    Open,
    Close,
}

impl LowLevelAction {
    pub const ALL: [LowLevelAction; 8] = [
        LowLevelAction::TurnLeft,
        LowLevelAction::TurnRight,
        LowLevelAction::Forward,
        LowLevelAction::Pickup,
        LowLevelAction::Drop,
        LowLevelAction::Toggle,
        LowLevelAction::Open,
        LowLevelAction::Close,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LowLevelAction::TurnLeft => "turn_left",
            LowLevelAction::TurnRight => "turn_right",
            LowLevelAction::Forward => "forward",
            LowLevelAction::Pickup => "pickup",
            LowLevelAction::Drop => "drop",
            LowLevelAction::Toggle => "toggle",
            LowLevelAction::Open => "open",
            LowLevelAction::Close => "close",
        }
    }
}

impl fmt::Display for LowLevelAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LowLevelAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown low-level action `{s}`"))
    }
}

/// Static properties of an object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectInfo {
    pub label: String,
    pub kind: String,
    pub landmark: bool,
    pub movable: bool,
    pub surface: bool,
    pub container: bool,
    pub toggleable: bool,
    pub openable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Location {
    At { cell: Cell, layer: u8 },
    Held,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ObjectState {
    pub location: Location,
    pub toggled: bool,
    pub open: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AgentPose {
    pub cell: Cell,
    pub heading: Heading,
}

#[derive(Debug, PartialEq, Eq)]
pub struct Layout {
    width: usize,
    height: usize,
    walls: Vec<bool>,
    objects: Vec<ObjectInfo>,
}

impl Layout {
    pub fn new(
        width: usize,
        height: usize,
        walls: Vec<bool>,
        objects: Vec<ObjectInfo>,
    ) -> Result<Self, String> {
        if width == 0 || height == 0 {
            return Err("grid must be non-empty".into());
        }
        if walls.len() != width * height {
            return Err("wall mask does not match grid size".into());
        }
        for (i, o) in objects.iter().enumerate() {
            if !valid_label(&o.label) {
                return Err(format!("invalid object label `{}`", o.label));
            }
            if objects[..i].iter().any(|p| p.label == o.label) {
                return Err(format!("duplicate object label `{}`", o.label));
            }
        }
        Ok(Self {
            width,
            height,
            walls,
            objects,
        })
    }
}

pub(crate) fn valid_label(label: &str) -> bool {
    !label.is_empty()
        && label != AGENT_LABEL
        && label
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// What a single low-level action did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepEffect {
    Turned(Heading),
    Moved(Cell),
    Blocked,
    PickedUp(String),
    Dropped(String, Cell),
    Toggled(String, bool),
    Opened(String),
    Closed(String),
    NoEffect,
}

impl fmt::Display for StepEffect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepEffect::Turned(h) => write!(f, "now facing {h}"),
            StepEffect::Moved(c) => write!(f, "moved to {c}"),
            StepEffect::Blocked => f.write_str("path blocked"),
            StepEffect::PickedUp(l) => write!(f, "picked up {l}"),
            StepEffect::Dropped(l, c) => write!(f, "dropped {l} at {c}"),
            StepEffect::Toggled(l, on) => {
                write!(f, "toggled {l} {}", if *on { "on" } else { "off" })
            }
            StepEffect::Opened(l) => write!(f, "opened {l}"),
            StepEffect::Closed(l) => write!(f, "closed {l}"),
            StepEffect::NoEffect => f.write_str("nothing happened"),
        }
    }
}

/// A world state: shared static layout plus per-object dynamic state.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    layout: Arc<Layout>,
    agent: AgentPose,
    objects: Vec<ObjectState>,
}

impl World {
    /// Builds a world and checks every structural invariant.
    pub fn new(layout: Layout, agent: AgentPose, objects: Vec<ObjectState>) -> Result<Self, String> {
        if objects.len() != layout.objects.len() {
            return Err("object state count does not match layout".into());
        }
        let world = Self {
            layout: Arc::new(layout),
            agent,
            objects,
        };
        world.check_invariants()?;
        Ok(world)
    }

    pub fn width(&self) -> usize {
        self.layout.width
    }

    pub fn height(&self) -> usize {
        self.layout.height
    }

    pub fn agent(&self) -> AgentPose {
        self.agent
    }

    pub fn object_count(&self) -> usize {
        self.objects.len()
    }

    pub fn info(&self, idx: usize) -> &ObjectInfo {
        &self.layout.objects[idx]
    }

    pub fn state(&self, idx: usize) -> &ObjectState {
        &self.objects[idx]
    }

    #[cfg(test)]
    pub(crate) fn states(&self) -> &[ObjectState] {
        &self.objects
    }

    pub(crate) fn states_mut(&mut self) -> &mut Vec<ObjectState> {
        &mut self.objects
    }

    pub(crate) fn set_agent(&mut self, agent: AgentPose) {
        self.agent = agent;
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.layout.objects.iter().map(|o| o.label.as_str())
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.layout.objects.iter().position(|o| o.label == label)
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.x < self.width() && cell.y < self.height()
    }

    pub fn is_wall(&self, cell: Cell) -> bool {
        !self.in_bounds(cell) || self.layout.walls[cell.y * self.width() + cell.x]
    }

    pub fn object_cell(&self, idx: usize) -> Option<Cell> {
        match self.objects[idx].location {
            Location::At { cell, .. } => Some(cell),
            Location::Held => None,
        }
    }

    /// Objects in `cell`, bottom of the stack first.
    pub fn occupants(&self, cell: Cell) -> Vec<usize> {
        let mut found: Vec<(u8, usize)> = self
            .objects
            .iter()
            .enumerate()
            .filter_map(|(i, s)| match s.location {
                Location::At { cell: c, layer } if c == cell => Some((layer, i)),
                _ => None,
            })
            .collect();
        found.sort_unstable();
        found.into_iter().map(|(_, i)| i).collect()
    }

    pub fn count_at(&self, cell: Cell) -> usize {
        self.objects
            .iter()
            .filter(|s| matches!(s.location, Location::At { cell: c, .. } if c == cell))
            .count()
    }

    pub fn held(&self) -> Option<usize> {
        self.objects
            .iter()
            .position(|s| s.location == Location::Held)
    }

    /// Floor cell the agent may stand on: in bounds, not a wall, no objects.
    pub fn is_navigable(&self, cell: Cell) -> bool {
        !self.is_wall(cell) && self.count_at(cell) == 0
    }

    pub fn nav_grid(&self) -> NavGrid {
        let mut open = Vec::with_capacity(self.width() * self.height());
        for y in 0..self.height() {
            for x in 0..self.width() {
                open.push(self.is_navigable(Cell::new(x, y)));
            }
        }
        NavGrid::new(self.width(), self.height(), open).expect("grid dimensions are consistent")
    }

    pub fn faced_cell(&self) -> Option<Cell> {
        self.agent
            .cell
            .step(self.agent.heading, self.width(), self.height())
    }

    fn closed_container_at(&self, cell: Cell) -> bool {
        self.occupants(cell).into_iter().any(|i| {
            let info = self.info(i);
            info.container && info.openable && !self.objects[i].open
        })
    }

    /// The object `pickup` would take from `cell`: the top of the stack, if it
    /// is movable and not shut inside a closed container.
    pub fn pickable_at(&self, cell: Cell) -> Option<usize> {
        let top = *self.occupants(cell).last()?;
        if !self.info(top).movable || self.closed_container_at(cell) {
            return None;
        }
        Some(top)
    }

    /// Whether `drop` into `cell` would succeed (ignoring inventory).
    pub fn can_drop_into(&self, cell: Cell) -> bool {
        !self.is_wall(cell)
            && self.count_at(cell) < CELL_CAPACITY
            && !self.closed_container_at(cell)
    }

    /// Applies one low-level action. Inapplicable actions are no-ops.
    pub fn apply(&mut self, action: LowLevelAction) -> StepEffect {
        match action {
            LowLevelAction::TurnLeft => {
                self.agent.heading = self.agent.heading.left();
                StepEffect::Turned(self.agent.heading)
            }
            LowLevelAction::TurnRight => {
                self.agent.heading = self.agent.heading.right();
                StepEffect::Turned(self.agent.heading)
            }
            LowLevelAction::Forward => match self.faced_cell() {
                Some(next) if self.is_navigable(next) => {
                    self.agent.cell = next;
                    StepEffect::Moved(next)
                }
                _ => StepEffect::Blocked,
            },
            LowLevelAction::Pickup => {
                if self.held().is_some() {
                    return StepEffect::NoEffect;
                }
                match self.faced_cell().and_then(|c| self.pickable_at(c)) {
                    Some(i) => {
                        self.objects[i].location = Location::Held;
                        StepEffect::PickedUp(self.info(i).label.clone())
                    }
                    None => StepEffect::NoEffect,
                }
            }
            LowLevelAction::Drop => {
                let (Some(i), Some(cell)) = (self.held(), self.faced_cell()) else {
                    return StepEffect::NoEffect;
                };
                if !self.can_drop_into(cell) {
                    return StepEffect::NoEffect;
                }
                let layer = self.count_at(cell) as u8;
                self.objects[i].location = Location::At { cell, layer };
                StepEffect::Dropped(self.info(i).label.clone(), cell)
            }
            LowLevelAction::Toggle => {
                let target = self
                    .faced_cell()
                    .and_then(|c| self.occupants(c).into_iter().find(|&i| self.info(i).toggleable));
                match target {
                    Some(i) => {
                        self.objects[i].toggled = !self.objects[i].toggled;
                        StepEffect::Toggled(self.info(i).label.clone(), self.objects[i].toggled)
                    }
                    None => StepEffect::NoEffect,
                }
            }
            LowLevelAction::Open | LowLevelAction::Close => {
                let opening = action == LowLevelAction::Open;
                let target = self.faced_cell().and_then(|c| {
                    self.occupants(c)
                        .into_iter()
                        .find(|&i| self.info(i).openable && self.objects[i].open != opening)
                });
                match target {
                    Some(i) => {
                        self.objects[i].open = opening;
                        let label = self.info(i).label.clone();
                        if opening {
                            StepEffect::Opened(label)
                        } else {
                            StepEffect::Closed(label)
                        }
                    }
                    None => StepEffect::NoEffect,
                }
            }
        }
    }

    /// Decides `rel(a, b)` from geometry and object state. `b` may be
    /// [`AGENT_LABEL`] for `held_by`. State relations (`toggled_on`,
    /// `is_open`) are reflexive: they hold only for `a == b`.
    pub fn relation(&self, a: &str, b: &str, rel: Relation) -> Result<bool, SimError> {
        let resolve = |label: &str| -> Result<Option<usize>, SimError> {
            if label == AGENT_LABEL {
                return Ok(None);
            }
            self.index_of(label)
                .map(Some)
                .ok_or_else(|| SimError::UnknownLabel(label.to_string()))
        };
        let a = resolve(a)?;
        let b = resolve(b)?;
        Ok(match a {
            Some(a) => self.relation_idx(a, b, rel),
            None => false,
        })
    }

    /// Index form of [`World::relation`]; `None` for `b` is the agent.
    pub fn relation_idx(&self, a: usize, b: Option<usize>, rel: Relation) -> bool {
        let sa = &self.objects[a];
        let Some(b) = b else {
            return rel == Relation::HeldBy && sa.location == Location::Held;
        };
        let sb = &self.objects[b];
        let stacked_above = || match (sa.location, sb.location) {
            (Location::At { cell: ca, layer: la }, Location::At { cell: cb, layer: lb }) => {
                ca == cb && la > lb
            }
            _ => false,
        };
        match rel {
            Relation::OnTopOf => a != b && self.info(b).surface && stacked_above(),
            Relation::InsideOf => a != b && self.info(b).container && stacked_above(),
            Relation::NextTo => {
                a != b
                    && match (self.object_cell(a), self.object_cell(b)) {
                        (Some(ca), Some(cb)) => ca.chebyshev(cb) <= 1,
                        _ => false,
                    }
            }
            Relation::HeldBy => false,
            Relation::ToggledOn => a == b && sa.toggled,
            Relation::IsOpen => a == b && sa.open,
        }
    }

    /// Structural invariants: capacity, wall exclusion, single inventory slot,
    /// agent on free floor, contiguous stacks.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.is_wall(self.agent.cell) {
            return Err(format!("agent on wall at {}", self.agent.cell));
        }
        if self.count_at(self.agent.cell) != 0 {
            return Err(format!("agent shares cell {} with an object", self.agent.cell));
        }
        let held = self
            .objects
            .iter()
            .filter(|s| s.location == Location::Held)
            .count();
        if held > 1 {
            return Err(format!("inventory holds {held} objects"));
        }
        for (i, s) in self.objects.iter().enumerate() {
            let info = self.info(i);
            match s.location {
                Location::Held if !info.movable => {
                    return Err(format!("fixture {} is held", info.label))
                }
                Location::Held => {}
                Location::At { cell, .. } => {
                    if self.is_wall(cell) {
                        return Err(format!("{} on wall at {cell}", info.label));
                    }
                    let stack = self.occupants(cell);
                    if stack.len() > CELL_CAPACITY {
                        return Err(format!("cell {cell} holds {} objects", stack.len()));
                    }
                    for (expected, &j) in stack.iter().enumerate() {
                        if !matches!(self.objects[j].location, Location::At { layer, .. } if usize::from(layer) == expected)
                        {
                            return Err(format!("stack at {cell} is not contiguous"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// ASCII dump for logs: `#` wall, `.` floor, agent arrow, and the first
    /// letter of the bottom object in occupied cells.
    pub fn render_ascii(&self) -> String {
        let mut out = String::new();
        for y in 0..self.height() {
            for x in 0..self.width() {
                let cell = Cell::new(x, y);
                let c = if self.agent.cell == cell {
                    self.agent.heading.symbol()
                } else if self.is_wall(cell) {
                    '#'
                } else if let Some(&i) = self.occupants(cell).first() {
                    self.info(i).label.chars().next().unwrap_or('?')
                } else {
                    '.'
                };
                out.push(c);
            }
            out.push('\n');
        }
        out
    }
}
