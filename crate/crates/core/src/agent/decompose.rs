//! High-level action to primitive sequence.

use crate::geometry::{Cell, Heading};
use crate::gridworld::{LowLevelAction, SimObservation, World};
use crate::nav::{backtrack_path, distance_field, path_to_actions, turns_between};

use super::action::{FailureKind, HighLevelAction, ParseFailure, Target, Verb};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decomposition {
    Primitives(Vec<LowLevelAction>),
    /// `done()`: end the episode.
    Stop,
}

fn infeasible(reason: impl Into<String>) -> ParseFailure {
    ParseFailure::new(FailureKind::Infeasible, reason)
}

/// Walks to the navigable 4-neighbor of `target` closest to the agent and
/// turns to face `target`.
pub fn approach(world: &World, target: Cell) -> Result<Vec<LowLevelAction>, ParseFailure> {
    let agent = world.agent();
    let field = distance_field(&world.nav_grid(), agent.cell)
        .map_err(|e| infeasible(format!("agent cannot move: {e}")))?;
    let best = Heading::ALL
        .into_iter()
        .filter_map(|h| target.step(h, world.width(), world.height()))
        .filter(|&c| c == agent.cell || world.is_navigable(c))
        .map(|c| (field.get(c), c))
        .filter(|(d, _)| d.is_finite())
        .fold(None, |best: Option<(f64, Cell)>, (d, c)| match best {
            Some((bd, _)) if bd <= d => best,
            _ => Some((d, c)),
        });
    let Some((_, stand)) = best else {
        return Err(infeasible(format!("{target} cannot be reached")));
    };
    let path = backtrack_path(&field, stand).map_err(|e| infeasible(e.to_string()))?;
    let mut actions = path_to_actions(&path, agent.heading).map_err(|e| infeasible(e.to_string()))?;
    let heading = path
        .windows(2)
        .last()
        .and_then(|w| w[0].heading_to(w[1]))
        .unwrap_or(agent.heading);
    let face = stand.heading_to(target).expect("stand cell neighbors the target");
    actions.extend(turns_between(heading, face));
    Ok(actions)
}

/// Walks onto a free floor cell.
fn walk_onto(world: &World, target: Cell) -> Result<Vec<LowLevelAction>, ParseFailure> {
    let agent = world.agent();
    let field = distance_field(&world.nav_grid(), agent.cell)
        .map_err(|e| infeasible(format!("agent cannot move: {e}")))?;
    let path = backtrack_path(&field, target).map_err(|_| infeasible(format!("{target} cannot be reached")))?;
    path_to_actions(&path, agent.heading).map_err(|e| infeasible(e.to_string()))
}

fn object_index(world: &World, label: &str) -> Result<usize, ParseFailure> {
    world
        .index_of(label)
        .ok_or_else(|| ParseFailure::new(FailureKind::InvalidArgument, format!("`{label}` is not a visible object")))
}

/// Cell of the target; errors if it is the held object.
fn target_cell(world: &World, target: &Target) -> Result<Cell, ParseFailure> {
    match target {
        Target::Cell(c) if world.in_bounds(*c) => Ok(*c),
        Target::Cell(c) => Err(ParseFailure::new(FailureKind::InvalidArgument, format!("cell {c} is outside the grid"))),
        Target::Object(label) => {
            let i = object_index(world, label)?;
            world
                .object_cell(i)
                .ok_or_else(|| infeasible(format!("{label} is held by the agent")))
        }
    }
}

fn target_object(world: &World, action: &HighLevelAction) -> Result<usize, ParseFailure> {
    match &action.target {
        Some(Target::Object(label)) => object_index(world, label),
        _ => Err(ParseFailure::new(
            FailureKind::InvalidArgument,
            format!("{} needs an object", action.verb),
        )),
    }
}

/// Primitive plan for `action` from the current observation. Manipulation
/// verbs first walk next to the target and face it.
pub fn decompose(action: &HighLevelAction, observation: &SimObservation) -> Result<Decomposition, ParseFailure> {
    let world = observation.world();
    let prims = |mut walk: Vec<LowLevelAction>, last: LowLevelAction| {
        walk.push(last);
        Ok(Decomposition::Primitives(walk))
    };
    match action.verb {
        Verb::Done => Ok(Decomposition::Stop),
        Verb::Navigate => {
            let target = action.target.as_ref().ok_or_else(|| {
                ParseFailure::new(FailureKind::InvalidArgument, "navigate needs an argument")
            })?;
            let cell = target_cell(world, target)?;
            let walk = match target {
                Target::Cell(c) if world.is_navigable(*c) || *c == world.agent().cell => walk_onto(world, *c)?,
                _ => approach(world, cell)?,
            };
            Ok(Decomposition::Primitives(walk))
        }
        Verb::Pickup => {
            let i = target_object(world, action)?;
            let info = world.info(i);
            if let Some(h) = world.held() {
                return Err(infeasible(format!("already holding {}", world.info(h).label)));
            }
            if !info.movable {
                return Err(infeasible(format!("{} cannot be moved", info.label)));
            }
            let cell = world.object_cell(i).expect("not held");
            match world.pickable_at(cell) {
                Some(top) if top == i => prims(approach(world, cell)?, LowLevelAction::Pickup),
                Some(top) => Err(infeasible(format!(
                    "{} is under {}",
                    info.label,
                    world.info(top).label
                ))),
                None => Err(infeasible(format!("{} is inside a closed container", info.label))),
            }
        }
        Verb::Drop => {
            let Some(h) = world.held() else {
                return Err(infeasible("not holding anything"));
            };
            let target = action.target.as_ref().ok_or_else(|| {
                ParseFailure::new(FailureKind::InvalidArgument, "drop needs an argument")
            })?;
            let cell = target_cell(world, target)?;
            if !world.can_drop_into(cell) {
                return Err(infeasible(format!(
                    "{} cannot be put at {target}: full, closed or a wall",
                    world.info(h).label
                )));
            }
            prims(approach(world, cell)?, LowLevelAction::Drop)
        }
        Verb::Toggle | Verb::Open | Verb::Close => {
            let i = target_object(world, action)?;
            let info = world.info(i);
            let state = world.state(i);
            let (ok, primitive) = match action.verb {
                Verb::Toggle => (info.toggleable, LowLevelAction::Toggle),
                Verb::Open => (info.openable, LowLevelAction::Open),
                _ => (info.openable, LowLevelAction::Close),
            };
            if !ok {
                return Err(infeasible(format!("{} does not support {}", info.label, action.verb)));
            }
            if action.verb == Verb::Open && state.open {
                return Err(infeasible(format!("{} is already open", info.label)));
            }
            if action.verb == Verb::Close && !state.open {
                return Err(infeasible(format!("{} is already closed", info.label)));
            }
            let cell = target_cell(world, action.target.as_ref().expect("object target"))?;
            prims(approach(world, cell)?, primitive)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::fixtures::{at, fixture, info, pose, room};
    use crate::gridworld::{bundled_tasks, ObjectInfo, ObjectState, Simulator};
    use crate::scene_graph::Relation;
    use LowLevelAction::*;

    fn obs(world: World) -> SimObservation {
        SimObservation::from_world(world, 0)
    }

    fn run(world: &World, actions: &[LowLevelAction]) -> World {
        let mut w = world.clone();
        for &a in actions {
            w.apply(a);
        }
        w
    }

    fn primitives(d: Decomposition) -> Vec<LowLevelAction> {
        match d {
            Decomposition::Primitives(p) => p,
            Decomposition::Stop => panic!("unexpected stop"),
        }
    }

    fn movable(label: &str, cell: (usize, usize), layer: u8) -> (ObjectInfo, ObjectState) {
        (info(label, "cup"), at(cell.0, cell.1, layer))
    }

    #[test]
    fn pickup_in_faced_cell_is_single_primitive() {
        let w = room(5, 5, vec![movable("cup_1", (2, 1), 0)], pose(2, 2, Heading::North));
        let d = decompose(&HighLevelAction::on_object(Verb::Pickup, "cup_1"), &obs(w)).unwrap();
        assert_eq!(d, Decomposition::Primitives(vec![Pickup]));
    }

    #[test]
    fn navigate_three_east_facing_north() {
        // Object at (5,2); the agent at (1,2) faces north.
        let w = room(7, 5, vec![movable("cup_1", (5, 2), 0)], pose(1, 2, Heading::North));
        let acts = primitives(decompose(&HighLevelAction::on_object(Verb::Navigate, "cup_1"), &obs(w.clone())).unwrap());
        assert_eq!(&acts[..4], &[TurnRight, Forward, Forward, Forward]);
        let end = run(&w, &acts);
        assert_eq!(end.agent().cell, Cell::new(4, 2));
        assert_eq!(end.faced_cell(), Some(Cell::new(5, 2)));
    }

    #[test]
    fn walled_off_object_is_unreachable() {
        // The cup sits in a corner with rocks on its two open sides.
        let mut objects = vec![movable("cup_1", (5, 5), 0)];
        for (i, (x, y)) in [(4, 5), (5, 4)].into_iter().enumerate() {
            objects.push((fixture(&format!("rock_{i}"), "rock"), at(x, y, 0)));
        }
        let w = room(7, 7, objects, pose(1, 1, Heading::North));
        let err = decompose(&HighLevelAction::on_object(Verb::Navigate, "cup_1"), &obs(w)).unwrap_err();
        assert_eq!(err.kind, FailureKind::Infeasible);
        assert!(err.reason.contains("cannot be reached"));
    }

    #[test]
    fn done_stops() {
        let w = room(4, 4, vec![], pose(1, 1, Heading::North));
        assert_eq!(decompose(&HighLevelAction::done(), &obs(w)).unwrap(), Decomposition::Stop);
    }

    #[test]
    fn navigate_onto_cell() {
        let w = room(6, 6, vec![], pose(1, 1, Heading::East));
        let acts = primitives(decompose(&HighLevelAction::on_cell(Verb::Navigate, Cell::new(4, 3)), &obs(w.clone())).unwrap());
        assert_eq!(run(&w, &acts).agent().cell, Cell::new(4, 3));
        let here = decompose(&HighLevelAction::on_cell(Verb::Navigate, Cell::new(1, 1)), &obs(w)).unwrap();
        assert_eq!(here, Decomposition::Primitives(vec![]));
    }

    #[test]
    fn infeasible_manipulations() {
        let table = (
            ObjectInfo {
                surface: true,
                ..fixture("table_1", "table")
            },
            at(2, 2, 0),
        );
        let w = room(6, 6, vec![table, movable("cup_1", (2, 2), 1), movable("cup_2", (2, 2), 2)], pose(1, 1, Heading::North));
        let o = obs(w.clone());
        let reason = |a: HighLevelAction| decompose(&a, &o).unwrap_err().reason;
        assert!(reason(HighLevelAction::on_object(Verb::Pickup, "table_1")).contains("cannot be moved"));
        assert!(reason(HighLevelAction::on_object(Verb::Pickup, "cup_1")).contains("under cup_2"));
        assert!(reason(HighLevelAction::on_object(Verb::Toggle, "cup_1")).contains("does not support toggle"));
        assert!(reason(HighLevelAction::on_object(Verb::Drop, "table_1")).contains("not holding"));
        // Full cell refuses drops once the agent holds something else.
        let mut held = run(&w, &[]);
        held.apply(TurnRight);
        let acts = primitives(decompose(&HighLevelAction::on_object(Verb::Pickup, "cup_2"), &obs(held.clone())).unwrap());
        let held = run(&held, &acts);
        assert_eq!(held.held(), held.index_of("cup_2"));
        let o = obs(held);
        assert!(decompose(&HighLevelAction::on_object(Verb::Pickup, "cup_1"), &o)
            .unwrap_err()
            .reason
            .contains("already holding"));
        assert!(decompose(&HighLevelAction::on_object(Verb::Drop, "table_1"), &o).is_ok());
    }

    #[test]
    fn closed_container_blocks_pickup_until_opened() {
        let task = bundled_tasks()
            .into_iter()
            .find(|t| t.id == "fetch_bowl_from_cabinet")
            .unwrap();
        let mut sim = Simulator::new(&task);
        let o = sim.reset(0);
        let pick = HighLevelAction::on_object(Verb::Pickup, "bowl_1");
        assert!(decompose(&pick, &o).unwrap_err().reason.contains("closed container"));
        for a in [HighLevelAction::on_object(Verb::Open, "cabinet_1"), pick] {
            let acts = primitives(decompose(&a, &sim.observe()).unwrap());
            for p in acts {
                sim.step(p).unwrap();
            }
        }
        assert!(sim.goal_reached());
    }

    /// Every manipulation leaves the agent facing the target cell.
    #[test]
    fn manipulation_ends_facing_target() {
        for task in bundled_tasks() {
            let o = SimObservation::from_world(task.initial_world.clone(), 0);
            let w = o.world();
            for label in w.labels() {
                let a = HighLevelAction::on_object(Verb::Navigate, label);
                let acts = primitives(decompose(&a, &o).unwrap());
                let end = run(w, &acts);
                let target = w.object_cell(w.index_of(label).unwrap()).unwrap();
                assert_eq!(end.faced_cell(), Some(target), "{} {label}", task.id);
            }
        }
    }

    /// Carries each plant to the sink, then runs the water.
    #[test]
    fn water_houseplants_by_high_level_actions() {
        let task = bundled_tasks()
            .into_iter()
            .find(|t| t.id == "water_houseplants")
            .unwrap();
        let mut sim = Simulator::new(&task);
        sim.reset(0);
        let plan = [
            HighLevelAction::on_object(Verb::Pickup, "plant_1"),
            HighLevelAction::on_object(Verb::Drop, "sink_1"),
            HighLevelAction::on_object(Verb::Pickup, "plant_2"),
            HighLevelAction::on_object(Verb::Drop, "sink_1"),
            HighLevelAction::on_object(Verb::Pickup, "plant_3"),
            HighLevelAction::on_cell(Verb::Drop, Cell::new(2, 5)),
            HighLevelAction::on_object(Verb::Toggle, "sink_1"),
        ];
        let mut all = Vec::new();
        for a in &plan {
            let acts = primitives(decompose(a, &sim.observe()).unwrap());
            for p in acts {
                all.push(p);
                sim.step(p).unwrap();
            }
        }
        assert!(sim.goal_reached());
        assert!(sim.world().relation("plant_3", "sink_1", Relation::NextTo).unwrap());
        let script: Vec<&str> = all.iter().map(|a| a.name()).collect();
        let fixture = include_str!("../../tests/fixtures/water_houseplants_solution.txt");
        assert_eq!(fixture.split_whitespace().collect::<Vec<_>>(), script);
    }
}
