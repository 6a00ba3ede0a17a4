use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::search::{shortest_solution_steps_uncached, SearchError};
use super::{AgentPose, Layout, Location, ObjectInfo, ObjectState, World, AGENT_LABEL, DEFAULT_MAX_STEPS};
use crate::geometry::{Cell, Heading};
use crate::scene_graph::Relation;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("task file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("task file syntax: {0}")]
    Syntax(String),
    #[error("task `{id}`: {message}")]
    Invalid { id: String, message: String },
}

/// One condition of a goal; state relations use the same label twice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoalAtom {
    pub relation: Relation,
    pub subject: String,
    pub object: String,
    pub negated: bool,
}

impl FromStr for GoalAtom {
    type Err = String;

    /// Parses `rel(a, b)`, `rel(a)` for state relations, `held_by(a)`, with
    /// an optional leading `!`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (negated, s) = match s.strip_prefix('!') {
            Some(rest) => (true, rest.trim()),
            None => (false, s),
        };
        let open = s.find('(').ok_or_else(|| format!("expected `rel(args)`, got `{s}`"))?;
        let args = s[open + 1..]
            .strip_suffix(')')
            .ok_or_else(|| format!("missing `)` in `{s}`"))?;
        let relation: Relation = s[..open].trim().parse()?;
        let args: Vec<&str> = args.split(',').map(str::trim).collect();
        let (subject, object) = match (relation, args.as_slice()) {
            (Relation::HeldBy, [a]) => (*a, AGENT_LABEL),
            (Relation::ToggledOn | Relation::IsOpen, [a]) => (*a, *a),
            (_, [a, b]) => (*a, *b),
            _ => return Err(format!("wrong number of arguments in `{s}`")),
        };
        if subject.is_empty() || object.is_empty() {
            return Err(format!("empty argument in `{s}`"));
        }
        Ok(GoalAtom {
            relation,
            subject: subject.to_string(),
            object: object.to_string(),
            negated,
        })
    }
}

impl fmt::Display for GoalAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            f.write_str("!")?;
        }
        write!(f, "{}({}, {})", self.relation, self.subject, self.object)
    }
}

/// Conjunction of relation atoms over a world.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Goal {
    atoms: Vec<GoalAtom>,
    resolved: Vec<(usize, Option<usize>)>,
}

impl Goal {
    pub fn new(atoms: Vec<GoalAtom>, world: &World) -> Result<Self, String> {
        if atoms.is_empty() {
            return Err("goal has no conditions".into());
        }
        let resolve = |label: &str| -> Result<Option<usize>, String> {
            if label == AGENT_LABEL {
                return Ok(None);
            }
            world
                .index_of(label)
                .map(Some)
                .ok_or_else(|| format!("goal references unknown object `{label}`"))
        };
        let resolved = atoms
            .iter()
            .map(|a| {
                let s = resolve(&a.subject)?.ok_or("goal subject cannot be the agent")?;
                Ok((s, resolve(&a.object)?))
            })
            .collect::<Result<Vec<_>, String>>()?;
        Ok(Self { atoms, resolved })
    }

    pub fn atoms(&self) -> &[GoalAtom] {
        &self.atoms
    }

    pub fn is_satisfied(&self, world: &World) -> bool {
        self.atoms
            .iter()
            .zip(&self.resolved)
            .all(|(atom, &(a, b))| world.relation_idx(a, b, atom.relation) != atom.negated)
    }
}

/// A household task: instruction, start state, and success predicate.
#[derive(Debug, Clone)]
pub struct Task {
    pub id: String,
    pub instruction: String,
    pub initial_world: World,
    pub goal: Goal,
    pub max_steps: usize,
    shortest: Arc<OnceLock<Result<usize, SearchError>>>,
}

impl Task {
    pub fn new(
        id: impl Into<String>,
        instruction: impl Into<String>,
        initial_world: World,
        goal: Goal,
        max_steps: usize,
    ) -> Result<Self, TaskError> {
        let id = id.into();
        let invalid = |message: &str| TaskError::Invalid {
            id: id.clone(),
            message: message.to_string(),
        };
        if max_steps == 0 {
            return Err(invalid("max_steps must be positive"));
        }
        if goal.is_satisfied(&initial_world) {
            return Err(invalid("goal already holds in the initial world"));
        }
        Ok(Self {
            id,
            instruction: instruction.into(),
            initial_world,
            goal,
            max_steps,
            shortest: Arc::default(),
        })
    }

    /// Copy of this task with a different step budget.
    pub fn with_max_steps(&self, max_steps: usize) -> Self {
        Self {
            max_steps: max_steps.max(1),
            ..self.clone()
        }
    }

    /// Exact minimal number of low-level steps that reaches the goal,
    /// memoized per task.
    pub fn shortest_solution_steps(&self) -> Result<usize, SearchError> {
        self.shortest
            .get_or_init(|| shortest_solution_steps_uncached(self))
            .clone()
    }

    pub fn from_toml(text: &str) -> Result<Self, TaskError> {
        let file: TaskFile = toml::from_str(text).map_err(|e| TaskError::Syntax(e.to_string()))?;
        file.build()
    }

    pub fn from_file(path: &Path) -> Result<Self, TaskError> {
        let text = std::fs::read_to_string(path).map_err(|source| TaskError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }
}

/// Per-episode outcome used by the success-rate and SPL metrics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub task_id: String,
    pub success: bool,
    /// Low-level steps used.
    pub steps: usize,
    /// Shortest possible low-level step count.
    pub shortest: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskFile {
    id: String,
    instruction: String,
    #[serde(default)]
    max_steps: Option<usize>,
    grid: Vec<String>,
    goal: Vec<String>,
    #[serde(default)]
    objects: Vec<ObjectDecl>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectDecl {
    label: String,
    kind: String,
    #[serde(default)]
    at: Option<[usize; 2]>,
    #[serde(default)]
    held: bool,
    #[serde(default)]
    landmark: bool,
    #[serde(default)]
    movable: Option<bool>,
    #[serde(default)]
    surface: bool,
    #[serde(default)]
    container: bool,
    #[serde(default)]
    toggleable: bool,
    #[serde(default)]
    openable: bool,
    #[serde(default)]
    toggled: bool,
    #[serde(default)]
    open: bool,
}

impl TaskFile {
    fn build(self) -> Result<Task, TaskError> {
        let id = self.id.clone();
        let invalid = |message: String| TaskError::Invalid {
            id: id.clone(),
            message,
        };
        let height = self.grid.len();
        let width = self.grid.first().map_or(0, |r| r.chars().count());
        let mut walls = Vec::with_capacity(width * height);
        let mut agent = None;
        for (y, row) in self.grid.iter().enumerate() {
            if row.chars().count() != width {
                return Err(invalid(format!("grid row {y} has a different width")));
            }
            for (x, c) in row.chars().enumerate() {
                match c {
                    '#' => walls.push(true),
                    '.' => walls.push(false),
                    _ => match Heading::from_symbol(c) {
                        Some(heading) if agent.is_none() => {
                            agent = Some(AgentPose {
                                cell: Cell::new(x, y),
                                heading,
                            });
                            walls.push(false);
                        }
                        Some(_) => return Err(invalid("more than one agent marker".into())),
                        None => {
                            return Err(invalid(format!("unexpected grid character `{c}` at {x},{y}")))
                        }
                    },
                }
            }
        }
        let agent = agent.ok_or_else(|| invalid("grid has no agent marker (^ > v <)".into()))?;

        let mut infos = Vec::new();
        let mut states: Vec<ObjectState> = Vec::new();
        for decl in self.objects {
            let movable = decl.movable.unwrap_or(!decl.landmark);
            let location = match (decl.at, decl.held) {
                (Some([x, y]), false) => {
                    let cell = Cell::new(x, y);
                    let below = states
                        .iter()
                        .enumerate()
                        .filter(|(_, s)| matches!(s.location, Location::At { cell: c, .. } if c == cell))
                        .map(|(i, _)| i)
                        .collect::<Vec<_>>();
                    if !movable && !below.is_empty() {
                        return Err(invalid(format!(
                            "fixture `{}` must be declared before items in its cell",
                            decl.label
                        )));
                    }
                    Location::At {
                        cell,
                        layer: below.len().min(u8::MAX as usize) as u8,
                    }
                }
                (None, true) => Location::Held,
                _ => {
                    return Err(invalid(format!(
                        "object `{}` needs exactly one of `at` or `held`",
                        decl.label
                    )))
                }
            };
            infos.push(ObjectInfo {
                label: decl.label,
                kind: decl.kind,
                landmark: decl.landmark,
                movable,
                surface: decl.surface,
                container: decl.container,
                toggleable: decl.toggleable,
                openable: decl.openable,
            });
            states.push(ObjectState {
                location,
                toggled: decl.toggled,
                open: decl.open,
            });
        }
        let layout = Layout::new(width, height, walls, infos).map_err(&invalid)?;
        let world = World::new(layout, agent, states).map_err(&invalid)?;
        let atoms = self
            .goal
            .iter()
            .map(|g| g.parse::<GoalAtom>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(&invalid)?;
        let goal = Goal::new(atoms, &world).map_err(&invalid)?;
        Task::new(
            self.id,
            self.instruction,
            world,
            goal,
            self.max_steps.unwrap_or(DEFAULT_MAX_STEPS),
        )
    }
}

const BUNDLED: [&str; 6] = [
    include_str!("../../tasks/water_houseplants.toml"),
    include_str!("../../tasks/wash_mug.toml"),
    include_str!("../../tasks/move_mug_to_table.toml"),
    include_str!("../../tasks/shelve_book.toml"),
    include_str!("../../tasks/fetch_bowl_from_cabinet.toml"),
    include_str!("../../tasks/fetch_apple_from_fridge.toml"),
];

/// The bundled six-task suite.
pub fn bundled_tasks() -> Vec<Task> {
    BUNDLED
        .iter()
        .map(|text| Task::from_toml(text).expect("bundled task files are valid"))
        .collect()
}

/// Loads every `*.toml` file in `dir`, sorted by file name.
pub fn load_task_dir(dir: &Path) -> Result<Vec<Task>, TaskError> {
    let io = |source| TaskError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut paths = std::fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(io)?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "toml"));
    paths.sort();
    paths.iter().map(|p| Task::from_file(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = r######"
id = "tiny"
instruction = "Pick up the cup"
grid = [
  "#####",
  "#...#",
  "#.^.#",
  "#####",
]
goal = ["held_by(cup_1)"]

[[objects]]
label = "cup_1"
kind = "cup"
at = [2, 1]
"######;

    #[test]
    fn parses_tiny_task() {
        let task = Task::from_toml(TINY).unwrap();
        assert_eq!(task.id, "tiny");
        assert_eq!(task.max_steps, DEFAULT_MAX_STEPS);
        assert_eq!(task.initial_world.width(), 5);
        assert_eq!(task.initial_world.agent().heading, Heading::North);
        assert_eq!(task.goal.atoms()[0].object, AGENT_LABEL);
    }

    #[test]
    fn one_action_task_has_shortest_one() {
        let task = Task::from_toml(TINY).unwrap();
        assert_eq!(task.shortest_solution_steps(), Ok(1));
    }

    #[test]
    fn rejects_bad_files() {
        let no_agent = TINY.replace("#.^.#", "#...#");
        assert!(matches!(Task::from_toml(&no_agent), Err(TaskError::Invalid { .. })));
        let bad_goal = TINY.replace("held_by(cup_1)", "held_by(mug_9)");
        assert!(Task::from_toml(&bad_goal).is_err());
        let bad_rel = TINY.replace("held_by(cup_1)", "cooked(cup_1)");
        assert!(Task::from_toml(&bad_rel).is_err());
        let satisfied = TINY.replace("held_by(cup_1)", "!held_by(cup_1)");
        assert!(Task::from_toml(&satisfied).is_err());
        let on_wall = TINY.replace("at = [2, 1]", "at = [0, 0]");
        assert!(Task::from_toml(&on_wall).is_err());
        assert!(matches!(Task::from_toml("id = 3"), Err(TaskError::Syntax(_))));
    }

    #[test]
    fn goal_atom_syntax() {
        let a: GoalAtom = "next_to(plant_1, sink_1)".parse().unwrap();
        assert_eq!(a.relation, Relation::NextTo);
        assert_eq!(a.to_string(), "next_to(plant_1, sink_1)");
        let b: GoalAtom = "!toggled_on(sink_1)".parse().unwrap();
        assert!(b.negated);
        assert_eq!(b.object, "sink_1");
        assert!("next_to(a)".parse::<GoalAtom>().is_err());
        assert!("next_to a b".parse::<GoalAtom>().is_err());
    }

    #[test]
    fn bundled_suite_is_valid() {
        let tasks = bundled_tasks();
        assert_eq!(tasks.len(), 6);
        let mut ids: Vec<_> = tasks.iter().map(|t| t.id.as_str()).collect();
        ids.dedup();
        assert_eq!(ids.len(), 6);
        for t in &tasks {
            assert!(!t.goal.is_satisfied(&t.initial_world), "{}", t.id);
            let shortest = t.shortest_solution_steps().unwrap();
            assert!(shortest <= t.max_steps, "{} needs {shortest} steps", t.id);
        }
        let water = tasks.iter().find(|t| t.id == "water_houseplants").unwrap();
        assert_eq!((water.shortest_solution_steps(), water.max_steps), (Ok(53), 100));
    }

    #[test]
    fn task_dir_loading() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("b.toml"), TINY).unwrap();
        std::fs::write(dir.path().join("a.toml"), TINY.replace("\"tiny\"", "\"tiny_a\"")).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let tasks = load_task_dir(dir.path()).unwrap();
        assert_eq!(
            tasks.iter().map(|t| t.id.as_str()).collect::<Vec<_>>(),
            ["tiny_a", "tiny"]
        );
    }
}
