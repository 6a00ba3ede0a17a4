//! High-level action grammar and the reply parser.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::geometry::Cell;
use crate::gridworld::SimObservation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Navigate,
    Pickup,
    Drop,
    Toggle,
    Open,
    Close,
    Done,
}

impl Verb {
    pub const ALL: [Verb; 7] = [
        Verb::Navigate,
        Verb::Pickup,
        Verb::Drop,
        Verb::Toggle,
        Verb::Open,
        Verb::Close,
        Verb::Done,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Verb::Navigate => "navigate",
            Verb::Pickup => "pickup",
            Verb::Drop => "drop",
            Verb::Toggle => "toggle",
            Verb::Open => "open",
            Verb::Close => "close",
            Verb::Done => "done",
        }
    }

    /// Whether the verb also accepts a cell (`x,y`) argument.
    pub fn accepts_cell(self) -> bool {
        matches!(self, Verb::Navigate | Verb::Drop)
    }

    pub fn takes_argument(self) -> bool {
        self != Verb::Done
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Verb {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Verb::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown verb `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Target {
    Object(String),
    Cell(Cell),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Object(label) => f.write_str(label),
            Target::Cell(cell) => write!(f, "{cell}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HighLevelAction {
    pub verb: Verb,
    pub target: Option<Target>,
}

impl HighLevelAction {
    pub fn on_object(verb: Verb, label: impl Into<String>) -> Self {
        Self {
            verb,
            target: Some(Target::Object(label.into())),
        }
    }

    pub fn on_cell(verb: Verb, cell: Cell) -> Self {
        Self {
            verb,
            target: Some(Target::Cell(cell)),
        }
    }

    pub fn done() -> Self {
        Self {
            verb: Verb::Done,
            target: None,
        }
    }

    /// The reply line that parses back to this action.
    pub fn to_reply(&self) -> String {
        format!("Action: {self}")
    }
}

/// `verb(argument)`; `done()` has an empty argument.
impl fmt::Display for HighLevelAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.target {
            Some(t) => write!(f, "{}({t})", self.verb),
            None => write!(f, "{}()", self.verb),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    BadFormat,
    UnknownVerb,
    InvalidArgument,
    /// The action parsed but could not be turned into primitives.
    Infeasible,
}

impl FailureKind {
    pub fn name(self) -> &'static str {
        match self {
            FailureKind::BadFormat => "bad-format",
            FailureKind::UnknownVerb => "unknown-verb",
            FailureKind::InvalidArgument => "invalid-argument",
            FailureKind::Infeasible => "infeasible",
        }
    }
}

/// Why a reply was rejected. Fed back to the planner on retry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseFailure {
    pub kind: FailureKind,
    pub reason: String,
}

impl ParseFailure {
    pub fn new(kind: FailureKind, reason: impl Into<String>) -> Self {
        Self {
            kind,
            reason: reason.into(),
        }
    }
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.name(), self.reason)
    }
}

impl std::error::Error for ParseFailure {}

/// Verbs plus the argument vocabulary of the current observation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSpace {
    pub verbs: Vec<Verb>,
    /// Visible object labels, landmarks first.
    pub objects: Vec<String>,
    pub width: usize,
    pub height: usize,
}

impl ActionSpace {
    pub fn from_observation(observation: &SimObservation) -> Self {
        let world = observation.world();
        let mut objects: Vec<String> = (0..world.object_count())
            .filter(|&i| world.info(i).landmark)
            .map(|i| world.info(i).label.clone())
            .collect();
        objects.extend(
            (0..world.object_count())
                .filter(|&i| !world.info(i).landmark)
                .map(|i| world.info(i).label.clone()),
        );
        Self {
            verbs: Verb::ALL.to_vec(),
            objects,
            width: world.width(),
            height: world.height(),
        }
    }

    /// Grammar listing for the ACTIONS section of the prompt.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for verb in &self.verbs {
            let arg = match verb {
                Verb::Done => "",
                v if v.accepts_cell() => "<object> | <x,y>",
                _ => "<object>",
            };
            out.push_str(&format!("{verb}({arg})\n"));
        }
        out.push_str(&format!("objects: {}\n", self.objects.join(", ")));
        out.push_str(&format!(
            "cells: x in 0..{}, y in 0..{}, y grows southward",
            self.width, self.height
        ));
        out
    }
}

fn action_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"Action:\s*([A-Za-z_]+)\s*\(([^()\n]*)\)").expect("valid regex"))
}

fn parse_cell(arg: &str) -> Option<Cell> {
    let (x, y) = arg.split_once(',')?;
    Some(Cell::new(x.trim().parse().ok()?, y.trim().parse().ok()?))
}

/// Extracts the first `Action: verb(argument)` in `text` and checks it
/// against `space`.
pub fn parse_action(text: &str, space: &ActionSpace) -> Result<HighLevelAction, ParseFailure> {
    let caps = action_regex().captures(text).ok_or_else(|| {
        ParseFailure::new(FailureKind::BadFormat, "no line of the form `Action: <verb>(<argument>)`")
    })?;
    let verb_text = caps[1].to_ascii_lowercase();
    let verb = verb_text
        .parse::<Verb>()
        .ok()
        .filter(|v| space.verbs.contains(v))
        .ok_or_else(|| ParseFailure::new(FailureKind::UnknownVerb, format!("`{verb_text}` is not an available action")))?;
    let arg = caps[2].trim();
    let invalid = |why: String| ParseFailure::new(FailureKind::InvalidArgument, why);
    if !verb.takes_argument() {
        if !arg.is_empty() {
            return Err(invalid(format!("{verb} takes no argument")));
        }
        return Ok(HighLevelAction::done());
    }
    if arg.is_empty() {
        return Err(invalid(format!("{verb} needs an argument")));
    }
    if let Some(cell) = parse_cell(arg) {
        if !verb.accepts_cell() {
            return Err(invalid(format!("{verb} needs an object, not a cell")));
        }
        if cell.x >= space.width || cell.y >= space.height {
            return Err(invalid(format!("cell {cell} is outside the {}x{} grid", space.width, space.height)));
        }
        return Ok(HighLevelAction::on_cell(verb, cell));
    }
    if space.objects.iter().any(|o| o == arg) {
        Ok(HighLevelAction::on_object(verb, arg))
    } else {
        Err(invalid(format!("`{arg}` is not a visible object")))
    }
}
