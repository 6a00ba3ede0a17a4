//! Exact breadth-first search for the shortest low-level solution of a task.
//!
//! A search state is the agent pose plus the location of every movable object
//! and the toggle/open flags of stateful objects, packed into a `u128`.

use std::collections::VecDeque;

use rustc_hash::FxHashSet;
use thiserror::Error;

use super::{AgentPose, Location, LowLevelAction, Task, World};
use crate::geometry::{Cell, Heading};

/// Upper bound on distinct states visited before giving up.
const STATE_LIMIT: usize = 30_000_000;
const HELD: u128 = 0xff;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SearchError {
    #[error("task `{0}` is unsolvable")]
    Unsolvable(String),
    #[error("task `{0}` is too large for exact search: {1}")]
    TooLarge(String, String),
}

struct Packer {
    width: usize,
    movable: Vec<usize>,
    stateful: Vec<usize>,
}

impl Packer {
    fn new(task: &Task) -> Result<Self, SearchError> {
        let world = &task.initial_world;
        let too_large = |why: &str| SearchError::TooLarge(task.id.clone(), why.to_string());
        if world.width() * world.height() >= HELD as usize {
            return Err(too_large("grid has more than 254 cells"));
        }
        let movable: Vec<usize> = (0..world.object_count())
            .filter(|&i| world.info(i).movable)
            .collect();
        let stateful: Vec<usize> = (0..world.object_count())
            .filter(|&i| world.info(i).toggleable || world.info(i).openable)
            .collect();
        if 10 + movable.len() * 10 + stateful.len() * 2 > 128 {
            return Err(too_large("too many movable or stateful objects"));
        }
        Ok(Self {
            width: world.width(),
            movable,
            stateful,
        })
    }

    fn pack(&self, world: &World) -> u128 {
        let agent = world.agent();
        let mut key = (agent.cell.y * self.width + agent.cell.x) as u128;
        key = key << 2 | u128::from(agent.heading.index());
        for &i in &self.movable {
            let field = match world.state(i).location {
                Location::At { cell, layer } => {
                    ((cell.y * self.width + cell.x) as u128) << 2 | u128::from(layer & 3)
                }
                Location::Held => HELD << 2,
            };
            key = key << 10 | field;
        }
        for &i in &self.stateful {
            let s = world.state(i);
            key = key << 2 | u128::from(s.toggled) << 1 | u128::from(s.open);
        }
        key
    }

    fn unpack(&self, mut key: u128, world: &mut World) {
        let states = world.states_mut();
        for &i in self.stateful.iter().rev() {
            states[i].open = key & 1 == 1;
            states[i].toggled = key >> 1 & 1 == 1;
            key >>= 2;
        }
        for &i in self.movable.iter().rev() {
            let field = key & 0x3ff;
            key >>= 10;
            let index = (field >> 2) as usize;
            states[i].location = if field >> 2 == HELD {
                Location::Held
            } else {
                Location::At {
                    cell: Cell::new(index % self.width, index / self.width),
                    layer: (field & 3) as u8,
                }
            };
        }
        let heading = Heading::from_index((key & 3) as u8);
        let index = (key >> 2) as usize;
        world.set_agent(AgentPose {
            cell: Cell::new(index % self.width, index / self.width),
            heading,
        });
    }
}

/// Breadth-first search over low-level actions. Prefer
/// [`Task::shortest_solution_steps`], which memoizes this.
pub fn shortest_solution_steps_uncached(task: &Task) -> Result<usize, SearchError> {
    let packer = Packer::new(task)?;
    let start = &task.initial_world;
    if task.goal.is_satisfied(start) {
        return Ok(0);
    }
    let mut visited = FxHashSet::default();
    let start_key = packer.pack(start);
    visited.insert(start_key);
    let mut frontier = VecDeque::from([(start_key, 0usize)]);
    let mut current = start.clone();
    let mut trial = start.clone();
    while let Some((key, depth)) = frontier.pop_front() {
        packer.unpack(key, &mut current);
        for action in LowLevelAction::ALL {
            trial.clone_from(&current);
            trial.apply(action);
            if task.goal.is_satisfied(&trial) {
                return Ok(depth + 1);
            }
            let next = packer.pack(&trial);
            if visited.insert(next) {
                if visited.len() > STATE_LIMIT {
                    return Err(SearchError::TooLarge(
                        task.id.clone(),
                        format!("more than {STATE_LIMIT} reachable states"),
                    ));
                }
                frontier.push_back((next, depth + 1));
            }
        }
    }
    Err(SearchError::Unsolvable(task.id.clone()))
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::super::{Goal, GoalAtom, ObjectInfo};
    use super::*;

    fn task_from(world: World, atoms: &[&str]) -> Task {
        let atoms: Vec<GoalAtom> = atoms.iter().map(|a| a.parse().unwrap()).collect();
        let goal = Goal::new(atoms, &world).unwrap();
        Task::new("t", "test", world, goal, 60).unwrap()
    }

    /// Exhaustive depth-limited DFS: the smallest depth at which some action
    /// sequence reaches the goal.
    fn dfs_oracle(task: &Task, limit: usize) -> Option<usize> {
        fn reaches(world: &World, task: &Task, depth: usize) -> bool {
            if task.goal.is_satisfied(world) {
                return true;
            }
            if depth == 0 {
                return false;
            }
            LowLevelAction::ALL.into_iter().any(|a| {
                let mut next = world.clone();
                next.apply(a);
                reaches(&next, task, depth - 1)
            })
        }
        (0..=limit).find(|&d| reaches(&task.initial_world, task, d))
    }

    #[test]
    fn pack_roundtrip() {
        let sink = ObjectInfo {
            container: true,
            toggleable: true,
            ..fixture("sink_1", "sink")
        };
        let mut w = room(
            5,
            5,
            vec![(sink, at(3, 3, 0)), (info("cup_1", "cup"), at(3, 3, 1)), (info("cup_2", "cup"), at(1, 3, 0))],
            pose(2, 2, Heading::West),
        );
        let task = task_from(w.clone(), &["toggled_on(sink_1)"]);
        let packer = Packer::new(&task).unwrap();
        w.states_mut()[2].location = Location::Held;
        w.states_mut()[0].toggled = true;
        let key = packer.pack(&w);
        let mut restored = task.initial_world.clone();
        packer.unpack(key, &mut restored);
        assert_eq!(restored, w);
    }

    #[test]
    fn adjacent_pickup_matches_hand_count() {
        // Cup is directly east of the agent who faces north: turn_right, pickup.
        let w = room(4, 4, vec![(info("cup_1", "cup"), at(2, 1, 0))], pose(1, 1, Heading::North));
        let task = task_from(w, &["held_by(cup_1)"]);
        assert_eq!(shortest_solution_steps_uncached(&task), Ok(2));
    }

    #[test]
    fn bfs_agrees_with_exhaustive_dfs_on_4x4() {
        let table = ObjectInfo {
            surface: true,
            ..fixture("table_1", "table")
        };
        let cases: Vec<(World, Vec<&str>)> = vec![
            (
                room(4, 4, vec![(info("cup_1", "cup"), at(2, 2, 0))], pose(1, 1, Heading::North)),
                vec!["held_by(cup_1)"],
            ),
            (
                room(
                    4,
                    4,
                    vec![(table, at(2, 1, 0)), (info("cup_1", "cup"), at(1, 2, 0))],
                    pose(2, 2, Heading::East),
                ),
                vec!["on_top_of(cup_1, table_1)"],
            ),
        ];
        for (world, goal) in cases {
            let task = task_from(world, &goal);
            let bfs = shortest_solution_steps_uncached(&task).unwrap();
            assert_eq!(Some(bfs), dfs_oracle(&task, 7), "goal {goal:?}");
        }
    }

    #[test]
    fn unsolvable_is_reported() {
        // A cup cannot be toggled.
        let w = room(5, 5, vec![(info("cup_1", "cup"), at(3, 3, 0))], pose(1, 1, Heading::North));
        let task = task_from(w, &["toggled_on(cup_1)"]);
        assert_eq!(
            shortest_solution_steps_uncached(&task),
            Err(SearchError::Unsolvable("t".into()))
        );
    }
}
