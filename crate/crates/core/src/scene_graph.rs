//! Scene-graph extraction from simulator observations and its canonical text
//! form.
//!
//! The text form has one line per true relation,
//! `subject/object/relation: True`, lines sorted lexicographically. False
//! pairs are never written. State relations (`toggled_on`, `is_open`) are
//! written on the diagonal, e.g. `sink_1/sink_1/toggled_on: True`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{SimObservation, AGENT_LABEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    OnTopOf,
    InsideOf,
    NextTo,
    HeldBy,
    ToggledOn,
    IsOpen,
}

impl Relation {
    pub const ALL: [Relation; 6] = [
        Relation::OnTopOf,
        Relation::InsideOf,
        Relation::NextTo,
        Relation::HeldBy,
        Relation::ToggledOn,
        Relation::IsOpen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Relation::OnTopOf => "on_top_of",
            Relation::InsideOf => "inside_of",
            Relation::NextTo => "next_to",
            Relation::HeldBy => "held_by",
            Relation::ToggledOn => "toggled_on",
            Relation::IsOpen => "is_open",
        }
    }

    /// Relations over a single object's state rather than a pair.
    pub fn is_state(self) -> bool {
        matches!(self, Relation::ToggledOn | Relation::IsOpen)
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Relation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Relation::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown relation `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub relation: Relation,
    pub object: String,
}

impl Triple {
    pub fn new(subject: impl Into<String>, relation: Relation, object: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            relation,
            object: object.into(),
        }
    }

    fn line(&self) -> String {
        format!("{}/{}/{}: True", self.subject, self.object, self.relation)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SceneGraphError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("relation references `{0}`, which is not a node")]
    DanglingLabel(String),
    #[error("duplicate triple {0:?}")]
    Duplicate(Triple),
}

/// Landmark-first node list plus the true relation triples.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub nodes: Vec<String>,
    pub relations: Vec<Triple>,
}

impl SceneGraph {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() && self.relations.is_empty()
    }

    /// Every relation label is a node and no triple repeats.
    pub fn validate(&self) -> Result<(), SceneGraphError> {
        let mut seen = BTreeSet::new();
        for t in &self.relations {
            for label in [&t.subject, &t.object] {
                if !self.nodes.contains(label) {
                    return Err(SceneGraphError::DanglingLabel(label.clone()));
                }
            }
            if !seen.insert(t) {
                return Err(SceneGraphError::Duplicate(t.clone()));
            }
        }
        Ok(())
    }

    pub fn triple_set(&self) -> BTreeSet<Triple> {
        self.relations.iter().cloned().collect()
    }
}

/// Builds the scene graph of an observation by querying every relation for
/// every ordered object pair (state relations on the diagonal). The agent
/// becomes a node only when it holds something.
pub fn extract(observation: &SimObservation) -> SceneGraph {
    let world = observation.world();
    let n = world.object_count();
    let mut relations = Vec::new();
    for a in 0..n {
        for b in 0..n {
            for rel in Relation::ALL {
                let applies = match rel {
                    Relation::HeldBy => false,
                    r if r.is_state() => a == b,
                    _ => a != b,
                };
                if applies && world.relation_idx(a, Some(b), rel) {
                    relations.push(Triple::new(
                        world.info(a).label.clone(),
                        rel,
                        world.info(b).label.clone(),
                    ));
                }
            }
        }
        if world.relation_idx(a, None, Relation::HeldBy) {
            relations.push(Triple::new(
                world.info(a).label.clone(),
                Relation::HeldBy,
                AGENT_LABEL,
            ));
        }
    }
    let labels: Vec<String> = world.labels().map(str::to_string).collect();
    let landmarks: BTreeSet<String> = (0..n)
        .filter(|&i| world.info(i).landmark)
        .map(|i| world.info(i).label.clone())
        .collect();
    let mut nodes = order_landmark_first(&labels, &landmarks);
    if world.held().is_some() {
        nodes.push(AGENT_LABEL.to_string());
    }
    SceneGraph { nodes, relations }
}

/// Stable partition: landmarks first, relative order kept on both sides.
pub fn order_landmark_first(labels: &[String], landmarks: &BTreeSet<String>) -> Vec<String> {
    let (mut first, rest): (Vec<String>, Vec<String>) =
        labels.iter().cloned().partition(|l| landmarks.contains(l));
    first.extend(rest);
    first
}

pub fn render_text(graph: &SceneGraph) -> String {
    let mut lines: Vec<String> = graph.relations.iter().map(Triple::line).collect();
    lines.sort_unstable();
    lines.join("\n")
}

/// Inverse of [`render_text`]: returns the triples in line order.
pub fn parse_text(text: &str) -> Result<Vec<Triple>, SceneGraphError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let err = |message: &str| SceneGraphError::Parse {
                line: i + 1,
                message: message.to_string(),
            };
            let body = l
                .trim()
                .strip_suffix(": True")
                .ok_or_else(|| err("expected `subject/object/relation: True`"))?;
            let parts: Vec<&str> = body.split('/').collect();
            let [subject, object, relation] = parts.as_slice() else {
                return Err(err("expected three `/`-separated fields"));
            };
            if subject.is_empty() || object.is_empty() {
                return Err(err("empty label"));
            }
            let relation = relation.parse().map_err(|e: String| err(&e))?;
            Ok(Triple::new(*subject, relation, *object))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Cell, Heading};
    use crate::gridworld::fixtures::*;
    use crate::gridworld::{LowLevelAction, ObjectInfo, World};

    fn observe(world: World) -> SimObservation {
        SimObservation::from_world(world, 0)
    }

    fn table() -> ObjectInfo {
        ObjectInfo {
            surface: true,
            ..fixture("table_1", "table")
        }
    }

    #[test]
    fn empty_observation_gives_empty_graph() {
        let g = extract(&observe(room(4, 4, vec![], pose(1, 1, Heading::North))));
        assert_eq!(g, SceneGraph::default());
        assert_eq!(render_text(&g), "");
    }

    #[test]
    fn mug_on_table() {
        let world = room(
            5,
            5,
            vec![(info("mug_1", "mug"), at(2, 1, 1)), (table(), at(2, 1, 0))],
            pose(2, 3, Heading::North),
        );
        let g = extract(&observe(world));
        g.validate().unwrap();
        let on_top: Vec<&Triple> = g
            .relations
            .iter()
            .filter(|t| t.relation == Relation::OnTopOf)
            .collect();
        assert_eq!(on_top, [&Triple::new("mug_1", Relation::OnTopOf, "table_1")]);
        assert_eq!(g.nodes, ["table_1", "mug_1"]);
    }

    #[test]
    fn held_plant() {
        let sink = ObjectInfo {
            container: true,
            toggleable: true,
            ..fixture("sink_1", "sink")
        };
        let world = room(
            7,
            7,
            vec![
                (table(), at(1, 1, 0)),
                (info("plant_1", "plant"), at(1, 1, 1)),
                (info("plant_2", "plant"), at(3, 1, 0)),
                (info("plant_3", "plant"), at(5, 1, 0)),
                (sink, at(5, 5, 0)),
            ],
            pose(1, 2, Heading::North),
        );
        let mut obs = observe(world);
        let before = extract(&obs);
        assert!(before
            .relations
            .contains(&Triple::new("plant_1", Relation::OnTopOf, "table_1")));
        let mut w = obs.world().clone();
        w.apply(LowLevelAction::Pickup);
        obs = observe(w);
        let g = extract(&obs);
        g.validate().unwrap();
        assert!(g
            .relations
            .contains(&Triple::new("plant_1", Relation::HeldBy, AGENT_LABEL)));
        assert!(!g
            .relations
            .iter()
            .any(|t| t.relation == Relation::OnTopOf && t.subject == "plant_1"));
        assert!(!g
            .relations
            .iter()
            .any(|t| t.relation != Relation::HeldBy && (t.subject == "plant_1" || t.object == "plant_1")));
        assert_eq!(g.nodes.first().map(String::as_str), Some("table_1"));
        assert_eq!(g.nodes.last().map(String::as_str), Some(AGENT_LABEL));
    }

    #[test]
    fn extract_is_deterministic() {
        let world = room(
            5,
            5,
            vec![(table(), at(2, 1, 0)), (info("mug_1", "mug"), at(2, 1, 1))],
            pose(2, 3, Heading::North),
        );
        let obs = observe(world);
        assert_eq!(extract(&obs), extract(&obs));
        assert_eq!(obs.world().agent().cell, Cell::new(2, 3));
    }

    #[test]
    fn render_single_triple() {
        let g = SceneGraph {
            nodes: vec!["table_1".into(), "mug_1".into()],
            relations: vec![Triple::new("mug_1", Relation::OnTopOf, "table_1")],
        };
        assert_eq!(render_text(&g), "mug_1/table_1/on_top_of: True");
    }

    #[test]
    fn render_sorts_lines() {
        let g = SceneGraph {
            nodes: vec!["table_1".into(), "mug_1".into()],
            relations: vec![
                Triple::new("table_1", Relation::NextTo, "mug_1"),
                Triple::new("mug_1", Relation::OnTopOf, "table_1"),
            ],
        };
        let text = render_text(&g);
        assert_eq!(
            text,
            "mug_1/table_1/on_top_of: True\ntable_1/mug_1/next_to: True"
        );
        assert!(!text.contains("False"));
    }

    #[test]
    fn landmark_ordering() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let set = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<BTreeSet<_>>();
        assert!(order_landmark_first(&[], &set(&["sink"])).is_empty());
        assert_eq!(
            order_landmark_first(&s(&["mug", "sink", "plant"]), &set(&["sink"])),
            s(&["sink", "mug", "plant"])
        );
        assert_eq!(order_landmark_first(&s(&["a", "b", "c"]), &set(&[])), s(&["a", "b", "c"]));
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            parse_text("mug_1/table_1/on_top_of: False"),
            Err(SceneGraphError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_text("a/b/on_top_of: True\na/b/floats: True"),
            Err(SceneGraphError::Parse { line: 2, .. })
        ));
        assert!(parse_text("a/b: True").is_err());
        assert_eq!(parse_text("").unwrap(), vec![]);
    }

    #[test]
    fn validate_catches_bad_graphs() {
        let dangling = SceneGraph {
            nodes: vec!["a".into()],
            relations: vec![Triple::new("a", Relation::NextTo, "b")],
        };
        assert_eq!(dangling.validate(), Err(SceneGraphError::DanglingLabel("b".into())));
        let t = Triple::new("a", Relation::NextTo, "b");
        let dup = SceneGraph {
            nodes: vec!["a".into(), "b".into()],
            relations: vec![t.clone(), t],
        };
        assert!(matches!(dup.validate(), Err(SceneGraphError::Duplicate(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        pub(crate) fn graph() -> impl Strategy<Value = SceneGraph> {
            let label = "[a-z]{1,6}_[0-9]";
            (prop::collection::btree_set(label, 1..8)).prop_flat_map(|labels| {
                let labels: Vec<String> = labels.into_iter().collect();
                let n = labels.len();
                prop::collection::btree_set((0..n, 0..6usize, 0..n), 0..20).prop_map(move |set| {
                    SceneGraph {
                        nodes: labels.clone(),
                        relations: set
                            .into_iter()
                            .map(|(a, r, b)| Triple::new(labels[a].clone(), Relation::ALL[r], labels[b].clone()))
                            .collect(),
                    }
                })
            })
        }

        proptest! {
            #[test]
            fn render_roundtrips(g in graph()) {
                let text = render_text(&g);
                let parsed: BTreeSet<Triple> = parse_text(&text).unwrap().into_iter().collect();
                prop_assert_eq!(parsed, g.triple_set());
                prop_assert_eq!(text.lines().count(), g.relations.len());
            }
        }
    }
}
