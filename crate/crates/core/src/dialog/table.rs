//! Transition relation of the dialog automaton, loaded from data.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ControlState {
    Start,
    Intro,
    /// Agent asks; transient dispatch state.
    PhaseAskerAgent,
    AwaitAnswer,
    GuessPending,
    /// Agent answers; transient dispatch state.
    PhaseAnswererAgent,
    AwaitQuestion,
    GameEnd,
}

impl ControlState {
    pub const ALL: [ControlState; 8] = [
        ControlState::Start,
        ControlState::Intro,
        ControlState::PhaseAskerAgent,
        ControlState::AwaitAnswer,
        ControlState::GuessPending,
        ControlState::PhaseAnswererAgent,
        ControlState::AwaitQuestion,
        ControlState::GameEnd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ControlState::Start => "Start",
            ControlState::Intro => "Intro",
            ControlState::PhaseAskerAgent => "PhaseAskerAgent",
            ControlState::AwaitAnswer => "AwaitAnswer",
            ControlState::GuessPending => "GuessPending",
            ControlState::PhaseAnswererAgent => "PhaseAnswererAgent",
            ControlState::AwaitQuestion => "AwaitQuestion",
            ControlState::GameEnd => "GameEnd",
        }
    }
}

impl fmt::Display for ControlState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventClass {
    SessionStart,
    UserUtterance,
    Timeout,
    SessionEnd,
    /// Taken immediately on entering a state, without input.
    Epsilon,
}

impl fmt::Display for EventClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EventClass::SessionStart => "session_start",
            EventClass::UserUtterance => "user_utterance",
            EventClass::Timeout => "timeout",
            EventClass::SessionEnd => "session_end",
            EventClass::Epsilon => "epsilon",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandlerId {
    Greet,
    Idle,
    BeginGame,
    AskerTurn,
    RecordAnswer,
    ResolveGuess,
    AnswererTurn,
    AnswerQuestion,
    Reprompt,
    EndSession,
    Noop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: ControlState,
    pub on: EventClass,
    pub handler: HandlerId,
    /// States the handler may move to.
    pub to: Vec<ControlState>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TableError {
    #[error("malformed transition table: {0}")]
    Parse(String),
    #[error("duplicate edge for ({0}, {1})")]
    Duplicate(ControlState, EventClass),
    #[error("state {0} has an epsilon edge and input edges")]
    MixedEpsilon(ControlState),
    #[error("state {0} is a target but has no outgoing edges")]
    Dangling(ControlState),
    #[error("edge ({0}, {1}) has no targets")]
    NoTargets(ControlState, EventClass),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TableFile {
    initial: ControlState,
    edges: Vec<Edge>,
}

#[derive(Debug, Clone)]
pub struct TransitionTable {
    initial: ControlState,
    edges: Vec<Edge>,
    index: HashMap<(ControlState, EventClass), usize>,
}

impl Default for TransitionTable {
    fn default() -> Self {
        Self::from_json_str(include_str!("../../data/transitions.json")).expect("bundled transition table")
    }
}

impl TransitionTable {
    pub fn from_json_str(s: &str) -> Result<Self, TableError> {
        let file: TableFile = serde_json::from_str(s).map_err(|e| TableError::Parse(e.to_string()))?;
        Self::new(file.initial, file.edges)
    }

    pub fn new(initial: ControlState, edges: Vec<Edge>) -> Result<Self, TableError> {
        let mut index = HashMap::new();
        for (i, e) in edges.iter().enumerate() {
            if e.to.is_empty() {
                return Err(TableError::NoTargets(e.from, e.on));
            }
            if index.insert((e.from, e.on), i).is_some() {
                return Err(TableError::Duplicate(e.from, e.on));
            }
        }
        for e in &edges {
            let has_eps = index.contains_key(&(e.from, EventClass::Epsilon));
            if has_eps && e.on != EventClass::Epsilon {
                return Err(TableError::MixedEpsilon(e.from));
            }
            for t in &e.to {
                if !edges.iter().any(|x| x.from == *t) {
                    return Err(TableError::Dangling(*t));
                }
            }
        }
        Ok(Self { initial, edges, index })
    }

    pub fn initial(&self) -> ControlState {
        self.initial
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn lookup(&self, state: ControlState, on: EventClass) -> Option<&Edge> {
        self.index.get(&(state, on)).map(|&i| &self.edges[i])
    }

    pub fn accepts(&self, state: ControlState, on: EventClass) -> bool {
        self.index.contains_key(&(state, on))
    }

    /// States the machine can rest in between events (no epsilon edge).
    pub fn resting_states(&self) -> BTreeSet<ControlState> {
        self.states()
            .into_iter()
            .filter(|&s| !self.accepts(s, EventClass::Epsilon))
            .collect()
    }

    pub fn states(&self) -> BTreeSet<ControlState> {
        self.edges
            .iter()
            .flat_map(|e| std::iter::once(e.from).chain(e.to.iter().copied()))
            .collect()
    }

    pub fn successors(&self, state: ControlState) -> BTreeSet<ControlState> {
        self.edges
            .iter()
            .filter(|e| e.from == state)
            .flat_map(|e| e.to.iter().copied())
            .collect()
    }

    pub fn reachable_from(&self, start: ControlState) -> BTreeSet<ControlState> {
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(s) = queue.pop_front() {
            for t in self.successors(s) {
                if seen.insert(t) {
                    queue.push_back(t);
                }
            }
        }
        seen
    }

    /// Every edge out of `state` leads back to `state`.
    pub fn is_absorbing(&self, state: ControlState) -> bool {
        self.successors(state).iter().all(|&t| t == state)
    }
}
