//! The question-asking agent.
//!
//! Keeps a posterior over emotion words, asks the unasked question with the
//! largest expected entropy reduction, and guesses once the leading word is
//! likely enough or the turn budget is nearly spent.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::kb::{LookupError, QaKnowledgeBase};
use crate::model::{AnswerCategory, QaEvent};
use crate::nlu::Nlu;
use crate::posterior::{entropy_bits, Posterior, PosteriorError};
use crate::MAX_TURNS;

/// Information gains closer than this are treated as equal.
pub const IG_TIE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AskerConfig {
    /// Guess as soon as the leading word has at least this much mass.
    pub guess_threshold: f64,
    /// Guess unconditionally once this many turns or fewer remain.
    pub guard_turns: u32,
    pub max_turns: u32,
}

impl Default for AskerConfig {
    fn default() -> Self {
        Self {
            guess_threshold: 0.5,
            guard_turns: 2,
            max_turns: MAX_TURNS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", content = "value", rename_all = "snake_case")]
pub enum AskerAction {
    AskQuestion(String),
    MakeGuess(String),
    Concede,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AskerOutcome {
    Won,
    Conceded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AskerState {
    pub posterior: Posterior,
    pub asked: BTreeSet<String>,
    pub rejected_guesses: BTreeSet<String>,
    /// Turns consumed so far (0..=max_turns). The current turn is `turns_used + 1`.
    pub turns_used: u32,
    pub outcome: Option<AskerOutcome>,
    pub history: Vec<QaEvent>,
}

impl AskerState {
    pub fn new(kb: &QaKnowledgeBase) -> Self {
        Self {
            posterior: Posterior::uniform(kb.lexicon()),
            asked: BTreeSet::new(),
            rejected_guesses: BTreeSet::new(),
            turns_used: 0,
            outcome: None,
            history: Vec::new(),
        }
    }

    pub fn turn(&self) -> u32 {
        self.turns_used + 1
    }

    pub fn is_finished(&self) -> bool {
        self.outcome.is_some()
    }
}

/// `H(p) − Σ_a P(a|q) · H(p | q, a)`, clamped at zero.
pub fn expected_information_gain(p: &Posterior, kb: &QaKnowledgeBase, question: &str) -> Result<f64, LookupError> {
    let q = kb
        .question_index(question)
        .ok_or_else(|| LookupError::UnknownQuestion(question.to_string()))?;
    let probs = p.probs();
    let mut expected_posterior_entropy = 0.0;
    let mut joint = vec![0.0; probs.len()];
    for a in AnswerCategory::ALL {
        for (e, (j, &pe)) in joint.iter_mut().zip(probs).enumerate() {
            *j = pe * kb.conditional_at(e, q, a);
        }
        let p_answer: f64 = joint.iter().sum();
        if p_answer <= 0.0 {
            continue;
        }
        for j in &mut joint {
            *j /= p_answer;
        }
        expected_posterior_entropy += p_answer * entropy_bits(&joint);
    }
    Ok((p.entropy() - expected_posterior_entropy).max(0.0))
}

/// Unasked question with the largest information gain; ties go to the
/// lexicographically smallest id.
pub fn select_question(st: &AskerState, kb: &QaKnowledgeBase) -> Option<String> {
    let mut ids: Vec<&str> = kb
        .questions()
        .iter()
        .map(|q| q.id.as_str())
        .filter(|id| !st.asked.contains(*id))
        .collect();
    ids.sort_unstable();
    let mut best: Option<(&str, f64)> = None;
    for id in ids {
        let ig = expected_information_gain(&st.posterior, kb, id).unwrap_or(0.0);
        match best {
            Some((_, b)) if ig <= b + IG_TIE_EPSILON => {}
            _ => best = Some((id, ig)),
        }
    }
    best.map(|(id, _)| id.to_string())
}

pub fn decide_action(st: &AskerState, kb: &QaKnowledgeBase, config: &AskerConfig) -> AskerAction {
    if st.is_finished() || st.turns_used >= config.max_turns {
        return AskerAction::Concede;
    }
    let Some((leader, mass)) = leading_candidate(st) else {
        return AskerAction::Concede;
    };
    let remaining = config.max_turns - st.turns_used;
    if mass >= config.guess_threshold || remaining <= config.guard_turns {
        return AskerAction::MakeGuess(leader.to_string());
    }
    match select_question(st, kb) {
        Some(q) => AskerAction::AskQuestion(q),
        None => AskerAction::MakeGuess(leader.to_string()),
    }
}

/// Most probable word not yet rejected; ties go to the smallest word.
pub fn leading_candidate(st: &AskerState) -> Option<(&str, f64)> {
    st.posterior
        .iter()
        .filter(|(w, _)| !st.rejected_guesses.contains(*w) && !st.posterior.is_excluded(w))
        .fold(None, |best: Option<(&str, f64)>, (w, p)| match best {
            Some((bw, bp)) if bp > p || (bp == p && bw <= w) => Some((bw, bp)),
            _ => Some((w, p)),
        })
}

/// Folds the user's free-text reply to `action` into the state.
pub fn observe(st: &AskerState, kb: &QaKnowledgeBase, nlu: &Nlu, action: &AskerAction, reply: &str) -> AskerState {
    let question_text = match action {
        AskerAction::AskQuestion(q) => kb.question(q).map(|q| q.prompt()).unwrap_or_else(|| q.clone()),
        AskerAction::MakeGuess(w) => format!("Is it {w}?"),
        AskerAction::Concede => String::new(),
    };
    observe_category(st, kb, action, nlu.bucket_answer(reply), &question_text, reply)
}

/// Same as [`observe`] with the reply already bucketed.
///
/// A question consumes a turn whatever the answer. A guess consumes a turn on a
/// yes or a no; an unclear reply to a guess leaves the state untouched so the
/// guess can be asked again.
pub fn observe_category(
    st: &AskerState,
    kb: &QaKnowledgeBase,
    action: &AskerAction,
    answer: AnswerCategory,
    question_text: &str,
    reply: &str,
) -> AskerState {
    let mut next = st.clone();
    if next.is_finished() {
        return next;
    }
    let event = |question_id: Option<String>, guess: Option<String>| QaEvent {
        question_id,
        guess,
        answer,
        raw_question_text: question_text.to_string(),
        raw_answer_text: reply.to_string(),
        turn: st.turn(),
    };
    match action {
        AskerAction::AskQuestion(q) => {
            match st.posterior.update(kb, q, answer) {
                Ok(p) => next.posterior = p,
                Err(e) => tracing::warn!(question = %q, error = %e, "posterior update skipped"),
            }
            next.asked.insert(q.clone());
            next.turns_used += 1;
            next.history.push(event(Some(q.clone()), None));
        }
        AskerAction::MakeGuess(w) => match answer {
            AnswerCategory::Yes => {
                next.turns_used += 1;
                next.outcome = Some(AskerOutcome::Won);
                next.history.push(event(None, Some(w.clone())));
            }
            AnswerCategory::No => {
                match st.posterior.zero_out(w) {
                    Ok(p) => next.posterior = p,
                    // every word rejected: nothing left to renormalize, decide_action concedes
                    Err(PosteriorError::Exhausted) => {}
                    Err(e) => tracing::warn!(guess = %w, error = %e, "zero-out skipped"),
                }
                next.rejected_guesses.insert(w.clone());
                next.turns_used += 1;
                next.history.push(event(None, Some(w.clone())));
            }
            AnswerCategory::Other => {}
        },
        AskerAction::Concede => next.outcome = Some(AskerOutcome::Conceded),
    }
    next
}
