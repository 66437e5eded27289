//! Pushdown dialog manager.
//!
//! Finite control follows the data-driven [`TransitionTable`]; the stack holds
//! the asking phase's working memory: one `QaRecord` per answered turn and a
//! `GuessFrame` while a guess awaits confirmation. A session plays the
//! configured phases in order (by default the agent asks first, then answers).
//!
//! [`DialogMachine::step`] is pure: it returns a new machine. After the
//! event-labelled transition the machine follows epsilon edges until it
//! reaches a state that waits for input, so a single step may pass through
//! several control states; each one is recorded in the transcript.

pub mod table;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use table::{ControlState, Edge, EventClass, HandlerId, TableError, TransitionTable};

use crate::answerer::{AnswerClassifier, Answerer, AnswererState};
use crate::asker::{self, AskerAction, AskerConfig, AskerState};
use crate::kb::QaKnowledgeBase;
use crate::model::{AnswerCategory, QaEvent};
use crate::nlu::Nlu;
use crate::templates::{render, Templates};

/// Bound on epsilon moves per step; the bundled table needs at most four.
const MAX_EPSILON_MOVES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    /// The agent asks, the user answers.
    AgentAsks,
    /// The user asks, the agent answers.
    AgentAnswers,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::AgentAsks => "agent-asks",
            Phase::AgentAnswers => "agent-answers",
        }
    }

    fn entry_state(self) -> ControlState {
        match self {
            Phase::AgentAsks => ControlState::PhaseAskerAgent,
            Phase::AgentAnswers => ControlState::PhaseAnswererAgent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown phase order {0:?} (expected asker-first, answerer-first, asker-only or answerer-only)")]
pub struct PhaseOrderError(pub String);

/// Which phases a session plays, in order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PhaseOrder {
    #[default]
    AskerFirst,
    AnswererFirst,
    AskerOnly,
    AnswererOnly,
}

impl PhaseOrder {
    pub fn phases(&self) -> &'static [Phase] {
        match self {
            PhaseOrder::AskerFirst => &[Phase::AgentAsks, Phase::AgentAnswers],
            PhaseOrder::AnswererFirst => &[Phase::AgentAnswers, Phase::AgentAsks],
            PhaseOrder::AskerOnly => &[Phase::AgentAsks],
            PhaseOrder::AnswererOnly => &[Phase::AgentAnswers],
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PhaseOrder::AskerFirst => "asker-first",
            PhaseOrder::AnswererFirst => "answerer-first",
            PhaseOrder::AskerOnly => "asker-only",
            PhaseOrder::AnswererOnly => "answerer-only",
        }
    }
}

impl fmt::Display for PhaseOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PhaseOrder {
    type Err = PhaseOrderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "asker-first" => Ok(PhaseOrder::AskerFirst),
            "answerer-first" => Ok(PhaseOrder::AnswererFirst),
            "asker-only" => Ok(PhaseOrder::AskerOnly),
            "answerer-only" => Ok(PhaseOrder::AnswererOnly),
            other => Err(PhaseOrderError(other.to_string())),
        }
    }
}

impl TryFrom<String> for PhaseOrder {
    type Error = PhaseOrderError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<PhaseOrder> for String {
    fn from(p: PhaseOrder) -> Self {
        p.as_str().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum StackSymbol {
    Bottom,
    QaRecord(QaEvent),
    GuessFrame(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "text", rename_all = "snake_case")]
pub enum DialogEvent {
    SessionStart,
    UserUtterance(String),
    Timeout,
    SessionEnd,
}

impl DialogEvent {
    pub fn class(&self) -> EventClass {
        match self {
            DialogEvent::SessionStart => EventClass::SessionStart,
            DialogEvent::UserUtterance(_) => EventClass::UserUtterance,
            DialogEvent::Timeout => EventClass::Timeout,
            DialogEvent::SessionEnd => EventClass::SessionEnd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DialogError {
    #[error("protocol violation: {event} is not accepted in state {state}")]
    ProtocolViolation { state: ControlState, event: EventClass },
    #[error("handler {handler:?} moved {from} to undeclared state {to}")]
    UndeclaredTarget {
        from: ControlState,
        handler: HandlerId,
        to: ControlState,
    },
    #[error("epsilon moves did not settle after leaving {0}")]
    EpsilonLoop(ControlState),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogConfig {
    pub phase_order: PhaseOrder,
    pub asker: AskerConfig,
    /// Consecutive timeouts after which the session is closed.
    pub max_consecutive_timeouts: u32,
}

impl Default for DialogConfig {
    fn default() -> Self {
        Self {
            phase_order: PhaseOrder::default(),
            asker: AskerConfig::default(),
            max_consecutive_timeouts: 3,
        }
    }
}

/// Read-only parts shared by every machine of a service.
pub struct DialogContext {
    kb: Arc<QaKnowledgeBase>,
    nlu: Arc<Nlu>,
    templates: Arc<Templates>,
    table: Arc<TransitionTable>,
    answerer: Answerer,
    config: DialogConfig,
}

impl fmt::Debug for DialogContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DialogContext")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl DialogContext {
    /// Bundled NLU tables, templates, transition table and KB classifier.
    pub fn new(kb: Arc<QaKnowledgeBase>, config: DialogConfig) -> Self {
        Self::with_parts(
            kb,
            Arc::new(Nlu::default()),
            Arc::new(Templates::default()),
            Arc::new(TransitionTable::default()),
            None,
            config,
        )
    }

    pub fn with_parts(
        kb: Arc<QaKnowledgeBase>,
        nlu: Arc<Nlu>,
        templates: Arc<Templates>,
        table: Arc<TransitionTable>,
        classifier: Option<Arc<dyn AnswerClassifier>>,
        config: DialogConfig,
    ) -> Self {
        let answerer = match classifier {
            Some(c) => Answerer::new(Arc::clone(&kb), Arc::clone(&nlu), c, Arc::clone(&templates)),
            None => {
                let c = Arc::new(crate::answerer::KbClassifier::new(Arc::clone(&kb), Arc::clone(&nlu)));
                Answerer::new(Arc::clone(&kb), Arc::clone(&nlu), c, Arc::clone(&templates))
            }
        }
        .with_max_turns(config.asker.max_turns);
        Self {
            kb,
            nlu,
            templates,
            table,
            answerer,
            config,
        }
    }

    pub fn kb(&self) -> &Arc<QaKnowledgeBase> {
        &self.kb
    }

    pub fn nlu(&self) -> &Arc<Nlu> {
        &self.nlu
    }

    pub fn table(&self) -> &TransitionTable {
        &self.table
    }

    pub fn config(&self) -> &DialogConfig {
        &self.config
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub from: ControlState,
    pub on: EventClass,
    pub handler: HandlerId,
    pub to: ControlState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub event: DialogEvent,
    pub transitions: Vec<Transition>,
    pub utterances: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct DialogMachine {
    ctx: Arc<DialogContext>,
    seed: u64,
    state: ControlState,
    phase_index: usize,
    phase_started: bool,
    stack: Vec<StackSymbol>,
    asker: AskerState,
    answerer: AnswererState,
    pending_question: Option<String>,
    last_prompt: Option<String>,
    consecutive_timeouts: u32,
    transcript: Vec<TranscriptEntry>,
}

/// Machine with the bundled NLU tables, templates, table and KB classifier.
pub fn new_machine(kb: Arc<QaKnowledgeBase>, seed: u64, config: DialogConfig) -> DialogMachine {
    DialogMachine::new(Arc::new(DialogContext::new(kb, config)), seed)
}

impl DialogMachine {
    pub fn new(ctx: Arc<DialogContext>, seed: u64) -> Self {
        let asker = AskerState::new(&ctx.kb);
        let answerer = ctx.answerer.start(seed);
        Self {
            state: ctx.table.initial(),
            ctx,
            seed,
            phase_index: 0,
            phase_started: false,
            stack: vec![StackSymbol::Bottom],
            asker,
            answerer,
            pending_question: None,
            last_prompt: None,
            consecutive_timeouts: 0,
            transcript: Vec::new(),
        }
    }

    pub fn context(&self) -> &Arc<DialogContext> {
        &self.ctx
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state(&self) -> ControlState {
        self.state
    }

    pub fn stack(&self) -> &[StackSymbol] {
        &self.stack
    }

    pub fn asker(&self) -> &AskerState {
        &self.asker
    }

    pub fn answerer(&self) -> &AnswererState {
        &self.answerer
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    pub fn is_over(&self) -> bool {
        self.state == ControlState::GameEnd
    }

    pub fn phase_order(&self) -> &PhaseOrder {
        &self.ctx.config.phase_order
    }

    pub fn current_phase(&self) -> Option<Phase> {
        self.phase_order().phases().get(self.phase_index).copied()
    }

    /// "intro" before the first phase, "end" after the last.
    pub fn phase_label(&self) -> &'static str {
        match self.state {
            ControlState::Start | ControlState::Intro => "intro",
            ControlState::GameEnd => "end",
            _ => self.current_phase().map_or("end", Phase::as_str),
        }
    }

    /// QA records currently on the stack, oldest first.
    pub fn working_memory(&self) -> Vec<&QaEvent> {
        self.stack
            .iter()
            .filter_map(|s| match s {
                StackSymbol::QaRecord(ev) => Some(ev),
                _ => None,
            })
            .collect()
    }

    pub fn open_guess(&self) -> Option<&str> {
        match self.stack.last() {
            Some(StackSymbol::GuessFrame(w)) => Some(w),
            _ => None,
        }
    }

    /// Checks the stack discipline: one `Bottom` at the base, one `GuessFrame`
    /// exactly while a guess is pending, and one `QaRecord` per answered turn
    /// of an asking phase in progress.
    pub fn check_stack(&self) -> Result<(), String> {
        if self.stack.first() != Some(&StackSymbol::Bottom) {
            return Err("stack base is not Bottom".into());
        }
        let bottoms = self.stack.iter().filter(|s| matches!(s, StackSymbol::Bottom)).count();
        let frames = self
            .stack
            .iter()
            .filter(|s| matches!(s, StackSymbol::GuessFrame(_)))
            .count();
        let records = self.working_memory().len();
        if bottoms != 1 {
            return Err(format!("{bottoms} Bottom symbols"));
        }
        let expect_frames = usize::from(self.state == ControlState::GuessPending);
        if frames != expect_frames {
            return Err(format!("{frames} guess frames in state {}", self.state));
        }
        let asking = self.phase_started && self.current_phase() == Some(Phase::AgentAsks) && !self.is_over();
        let expect_records = if asking { self.asker.history.len() } else { 0 };
        if records != expect_records {
            return Err(format!("{records} QA records, expected {expect_records}"));
        }
        if self.stack.len() != 1 + records + frames {
            return Err("unexpected symbols on the stack".into());
        }
        Ok(())
    }

    pub fn step(&self, event: &DialogEvent) -> Result<(DialogMachine, Vec<String>), DialogError> {
        let mut m = self.clone();
        let mut out = Vec::new();
        let mut transitions = Vec::new();

        let edge = m
            .ctx
            .table
            .lookup(m.state, event.class())
            .cloned()
            .ok_or(DialogError::ProtocolViolation {
                state: m.state,
                event: event.class(),
            })?;
        m.fire(&edge, Some(event), &mut out, &mut transitions)?;

        let mut moves = 0;
        while let Some(edge) = m.ctx.table.lookup(m.state, EventClass::Epsilon).cloned() {
            if moves == MAX_EPSILON_MOVES {
                return Err(DialogError::EpsilonLoop(m.state));
            }
            m.fire(&edge, None, &mut out, &mut transitions)?;
            moves += 1;
        }

        m.transcript.push(TranscriptEntry {
            event: event.clone(),
            transitions,
            utterances: out.clone(),
        });
        Ok((m, out))
    }

    fn fire(
        &mut self,
        edge: &Edge,
        event: Option<&DialogEvent>,
        out: &mut Vec<String>,
        transitions: &mut Vec<Transition>,
    ) -> Result<(), DialogError> {
        let from = self.state;
        let to = self.run_handler(edge.handler, event, out);
        if !edge.to.contains(&to) {
            return Err(DialogError::UndeclaredTarget {
                from,
                handler: edge.handler,
                to,
            });
        }
        transitions.push(Transition {
            from,
            on: edge.on,
            handler: edge.handler,
            to,
        });
        self.state = to;
        Ok(())
    }

    fn run_handler(&mut self, handler: HandlerId, event: Option<&DialogEvent>, out: &mut Vec<String>) -> ControlState {
        let text = match event {
            Some(DialogEvent::UserUtterance(t)) => {
                self.consecutive_timeouts = 0;
                t.as_str()
            }
            _ => "",
        };
        let ctx = Arc::clone(&self.ctx);
        let t = &ctx.templates;
        match handler {
            HandlerId::Greet => {
                out.extend(t.greeting.iter().cloned());
                ControlState::Intro
            }
            HandlerId::Idle => self.state,
            HandlerId::BeginGame => {
                self.phase_index = 0;
                self.phase_started = false;
                self.phase_entry()
            }
            HandlerId::AskerTurn => self.asker_turn(out),
            HandlerId::RecordAnswer => {
                let Some(q) = self.pending_question.take() else {
                    // nothing was asked; go back and ask
                    return ControlState::PhaseAskerAgent;
                };
                let action = AskerAction::AskQuestion(q);
                let prompt = self.last_prompt.clone().unwrap_or_default();
                let category = ctx.nlu.bucket_answer(text);
                self.asker = asker::observe_category(&self.asker, &ctx.kb, &action, category, &prompt, text);
                self.push_last_record();
                ControlState::PhaseAskerAgent
            }
            HandlerId::ResolveGuess => {
                let Some(guess) = self.open_guess().map(str::to_string) else {
                    return ControlState::PhaseAskerAgent;
                };
                let category = ctx.nlu.bucket_answer(text);
                if category == AnswerCategory::Other {
                    let prompt = render(&t.guess_reprompt, &[("emotion", &guess)]);
                    out.push(prompt.clone());
                    self.last_prompt = Some(prompt);
                    return ControlState::GuessPending;
                }
                self.stack.pop();
                let action = AskerAction::MakeGuess(guess.clone());
                let question = render(&t.guess, &[("emotion", &guess)]);
                self.asker = asker::observe_category(&self.asker, &ctx.kb, &action, category, &question, text);
                self.push_last_record();
                if category == AnswerCategory::Yes {
                    let turns = self.asker.turns_used.to_string();
                    out.push(render(&t.asker_win, &[("turns", &turns)]));
                } else {
                    out.push(render(&t.guess_wrong, &[("emotion", &guess)]));
                }
                ControlState::PhaseAskerAgent
            }
            HandlerId::AnswererTurn => {
                if self.answerer.is_finished() {
                    return self.finish_phase(out);
                }
                if !self.phase_started {
                    self.phase_started = true;
                    out.push(t.answerer_intro.clone());
                }
                self.last_prompt = Some(t.answerer_prompt.clone());
                ControlState::AwaitQuestion
            }
            HandlerId::AnswerQuestion => {
                let (next, reply) = ctx.answerer.respond(&self.answerer, text);
                self.answerer = next;
                out.push(reply.text);
                if reply.terminal {
                    ControlState::PhaseAnswererAgent
                } else {
                    ControlState::AwaitQuestion
                }
            }
            HandlerId::Reprompt => {
                self.consecutive_timeouts += 1;
                if self.consecutive_timeouts >= ctx.config.max_consecutive_timeouts {
                    out.push(t.timeout_give_up.clone());
                    self.stack.truncate(1);
                    return ControlState::GameEnd;
                }
                let prompt = self.last_prompt.clone().unwrap_or_default();
                out.push(render(&t.timeout_reprompt, &[("prompt", &prompt)]));
                self.state
            }
            HandlerId::EndSession | HandlerId::Noop => {
                self.stack.truncate(1);
                self.pending_question = None;
                ControlState::GameEnd
            }
        }
    }

    fn asker_turn(&mut self, out: &mut Vec<String>) -> ControlState {
        let ctx = Arc::clone(&self.ctx);
        let t = &ctx.templates;
        if self.asker.is_finished() {
            return self.finish_phase(out);
        }
        if !self.phase_started {
            self.phase_started = true;
            out.push(t.asker_intro.clone());
        }
        match asker::decide_action(&self.asker, &ctx.kb, &ctx.config.asker) {
            AskerAction::AskQuestion(q) => {
                let prompt = ctx.kb.question(&q).map(|c| c.prompt()).unwrap_or_else(|| q.clone());
                out.push(prompt.clone());
                self.last_prompt = Some(prompt);
                self.pending_question = Some(q);
                ControlState::AwaitAnswer
            }
            AskerAction::MakeGuess(w) => {
                let prompt = render(&t.guess, &[("emotion", &w)]);
                out.push(prompt.clone());
                self.last_prompt = Some(prompt);
                self.stack.push(StackSymbol::GuessFrame(w));
                ControlState::GuessPending
            }
            AskerAction::Concede => {
                let turns = self.asker.turns_used.to_string();
                let max_turns = ctx.config.asker.max_turns.to_string();
                out.push(render(
                    &t.asker_concede,
                    &[("turns", &turns), ("max_turns", &max_turns)],
                ));
                self.asker = asker::observe_category(
                    &self.asker,
                    &ctx.kb,
                    &AskerAction::Concede,
                    AnswerCategory::Other,
                    "",
                    "",
                );
                ControlState::PhaseAskerAgent
            }
        }
    }

    fn push_last_record(&mut self) {
        if let Some(ev) = self.asker.history.last() {
            if self.working_memory().len() < self.asker.history.len() {
                self.stack.push(StackSymbol::QaRecord(ev.clone()));
            }
        }
    }

    /// Clears the phase's working memory and moves to the next phase or ends.
    fn finish_phase(&mut self, out: &mut Vec<String>) -> ControlState {
        self.stack.truncate(1);
        self.pending_question = None;
        self.phase_index += 1;
        self.phase_started = false;
        match self.current_phase() {
            Some(_) => self.phase_entry(),
            None => {
                out.push(self.ctx.templates.goodbye.clone());
                ControlState::GameEnd
            }
        }
    }

    fn phase_entry(&self) -> ControlState {
        self.current_phase().map_or(ControlState::GameEnd, Phase::entry_state)
    }

    pub fn snapshot(&self) -> TraceEntry {
        TraceEntry {
            index: None,
            event: None,
            transitions: Vec::new(),
            state: self.state,
            phase: self.phase_label().to_string(),
            stack: self.stack.clone(),
            asker_turns: self.asker.turns_used,
            answerer_turns: self.answerer.turns_used,
            utterances: Vec::new(),
        }
    }
}

/// One row of a replay trace. The first row of a trace is the initial machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub index: Option<usize>,
    pub event: Option<DialogEvent>,
    pub transitions: Vec<Transition>,
    pub state: ControlState,
    pub phase: String,
    pub stack: Vec<StackSymbol>,
    pub asker_turns: u32,
    pub answerer_turns: u32,
    pub utterances: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub seed: u64,
    pub phase_order: PhaseOrder,
    pub entries: Vec<TraceEntry>,
}

impl Trace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    /// Agent utterances in order, across all steps.
    pub fn agent_lines(&self) -> Vec<&str> {
        self.entries
            .iter()
            .flat_map(|e| e.utterances.iter().map(String::as_str))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("event #{index}: {source}")]
pub struct ReplayError {
    pub index: usize,
    #[source]
    pub source: DialogError,
}

/// Folds `step` over `events` from a fresh machine built with the bundled parts.
pub fn replay(
    kb: Arc<QaKnowledgeBase>,
    seed: u64,
    config: DialogConfig,
    events: &[DialogEvent],
) -> Result<Trace, ReplayError> {
    replay_from(&new_machine(kb, seed, config), events)
}

pub fn replay_from(machine: &DialogMachine, events: &[DialogEvent]) -> Result<Trace, ReplayError> {
    let mut entries = vec![machine.snapshot()];
    let mut m = machine.clone();
    for (index, ev) in events.iter().enumerate() {
        let (next, utterances) = m.step(ev).map_err(|source| ReplayError { index, source })?;
        let mut entry = next.snapshot();
        entry.index = Some(index);
        entry.event = Some(ev.clone());
        entry.transitions = next
            .transcript
            .last()
            .map(|t| t.transitions.clone())
            .unwrap_or_default();
        entry.utterances = utterances;
        entries.push(entry);
        m = next;
    }
    Ok(Trace {
        seed: machine.seed,
        phase_order: machine.phase_order().clone(),
        entries,
    })
}
