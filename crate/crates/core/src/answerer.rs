//! The question-answering agent.
//!
//! Picks a secret emotion, answers free-text questions through an
//! [`AnswerClassifier`] and adjudicates guesses. The bundled classifier looks
//! answers up in the knowledge base; [`external::ExternalClassifier`] talks to a
//! separate model process.

pub mod external;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kb::QaKnowledgeBase;
use crate::model::{AnswerCategory, EmotionLexicon, QaEvent};
use crate::nlu::Nlu;
use crate::templates::{render, Templates};
use crate::MAX_TURNS;

/// Maps an (emotion, free-text question) pair to an answer category.
///
/// Implementations must be total and deterministic for a fixed configuration,
/// and shareable across sessions.
pub trait AnswerClassifier: Send + Sync {
    fn classify(&self, emotion: &str, question: &str) -> AnswerCategory;
}

/// Majority answer from the knowledge base for the best-matching canonical
/// question. Unmatched questions and ties answer `Other`.
pub fn kb_answer(kb: &QaKnowledgeBase, nlu: &Nlu, emotion: &str, question: &str) -> AnswerCategory {
    let Some(q) = nlu.match_question(question, kb).question_id else {
        return AnswerCategory::Other;
    };
    let (Some(e), Some(qi)) = (kb.lexicon().index_of(emotion), kb.question_index(&q)) else {
        return AnswerCategory::Other;
    };
    majority(kb, e, qi)
}

pub(crate) fn majority(kb: &QaKnowledgeBase, e: usize, q: usize) -> AnswerCategory {
    let scored = AnswerCategory::ALL.map(|a| (a, kb.conditional_at(e, q, a)));
    let best = scored.iter().map(|&(_, p)| p).fold(f64::NEG_INFINITY, f64::max);
    let mut winners = scored.iter().filter(|&&(_, p)| p == best);
    match (winners.next(), winners.next()) {
        (Some(&(a, _)), None) => a,
        _ => AnswerCategory::Other,
    }
}

#[derive(Debug, Clone)]
pub struct KbClassifier {
    kb: Arc<QaKnowledgeBase>,
    nlu: Arc<Nlu>,
}

impl KbClassifier {
    pub fn new(kb: Arc<QaKnowledgeBase>, nlu: Arc<Nlu>) -> Self {
        Self { kb, nlu }
    }
}

impl AnswerClassifier for KbClassifier {
    fn classify(&self, emotion: &str, question: &str) -> AnswerCategory {
        kb_answer(&self.kb, &self.nlu, emotion, question)
    }
}

/// Uniform seeded draw from the lexicon.
pub fn pick_secret(lexicon: &EmotionLexicon, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lexicon.word(rng.gen_range(0..lexicon.len())).to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswererOutcome {
    /// The user named the secret.
    UserGuessed,
    /// The budget ran out and the secret was revealed.
    Revealed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnswererState {
    pub secret: String,
    pub answered: Vec<QaEvent>,
    /// Turns consumed so far, guesses included.
    pub turns_used: u32,
    pub outcome: Option<AnswererOutcome>,
}

impl AnswererState {
    pub fn new(secret: impl Into<String>) -> Self {
        Self {
            secret: secret.into(),
            answered: Vec::new(),
            turns_used: 0,
            outcome: None,
        }
    }

    pub fn turn(&self) -> u32 {
        self.turns_used + 1
    }

    pub fn is_finished(&self) -> bool {
        self.outcome.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnswererReply {
    pub text: String,
    /// Category given to an attribute question; `None` for guesses.
    pub category: Option<AnswerCategory>,
    /// Emotion the user guessed, if the turn was a guess.
    pub guess: Option<String>,
    pub terminal: bool,
}

#[derive(Clone)]
pub struct Answerer {
    kb: Arc<QaKnowledgeBase>,
    nlu: Arc<Nlu>,
    classifier: Arc<dyn AnswerClassifier>,
    templates: Arc<Templates>,
    max_turns: u32,
}

impl std::fmt::Debug for Answerer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Answerer")
            .field("max_turns", &self.max_turns)
            .finish_non_exhaustive()
    }
}

impl Answerer {
    pub fn new(
        kb: Arc<QaKnowledgeBase>,
        nlu: Arc<Nlu>,
        classifier: Arc<dyn AnswerClassifier>,
        templates: Arc<Templates>,
    ) -> Self {
        Self {
            kb,
            nlu,
            classifier,
            templates,
            max_turns: MAX_TURNS,
        }
    }

    /// KB-lookup classifier and bundled templates.
    pub fn with_kb(kb: Arc<QaKnowledgeBase>, nlu: Arc<Nlu>) -> Self {
        let classifier = Arc::new(KbClassifier::new(Arc::clone(&kb), Arc::clone(&nlu)));
        Self::new(kb, nlu, classifier, Arc::new(Templates::default()))
    }

    pub fn with_max_turns(mut self, max_turns: u32) -> Self {
        self.max_turns = max_turns;
        self
    }

    pub fn start(&self, seed: u64) -> AnswererState {
        AnswererState::new(pick_secret(self.kb.lexicon(), seed))
    }

    pub fn respond(&self, st: &AnswererState, text: &str) -> (AnswererState, AnswererReply) {
        let mut next = st.clone();
        if st.is_finished() {
            let reply = AnswererReply {
                text: String::new(),
                category: None,
                guess: None,
                terminal: true,
            };
            return (next, reply);
        }
        let turn = st.turn();
        next.turns_used += 1;
        let turns = next.turns_used.to_string();
        let max_turns = self.max_turns.to_string();

        if let Some(guess) = self.nlu.detect_guess(text, self.kb.lexicon()) {
            let correct = guess == st.secret;
            let answer = if correct {
                AnswerCategory::Yes
            } else {
                AnswerCategory::No
            };
            next.answered.push(QaEvent {
                question_id: None,
                guess: Some(guess.clone()),
                answer,
                raw_question_text: text.to_string(),
                raw_answer_text: String::new(),
                turn,
            });
            let mut reply_text = if correct {
                next.outcome = Some(AnswererOutcome::UserGuessed);
                render(
                    &self.templates.user_correct_guess,
                    &[("emotion", &st.secret), ("turns", &turns)],
                )
            } else {
                self.templates.wrong_guess.clone()
            };
            if !correct && next.turns_used >= self.max_turns {
                next.outcome = Some(AnswererOutcome::Revealed);
                reply_text.push(' ');
                reply_text.push_str(&render(
                    &self.templates.reveal,
                    &[("emotion", &st.secret), ("max_turns", &max_turns)],
                ));
            }
            if let Some(ev) = next.answered.last_mut() {
                ev.raw_answer_text = reply_text.clone();
            }
            let terminal = next.is_finished();
            return (
                next,
                AnswererReply {
                    text: reply_text,
                    category: None,
                    guess: Some(guess),
                    terminal,
                },
            );
        }

        let category = self.classifier.classify(&st.secret, text);
        let question_id = self.nlu.match_question(text, &self.kb).question_id;
        let mut reply_text = self.templates.answer(category).to_string();
        if next.turns_used >= self.max_turns {
            next.outcome = Some(AnswererOutcome::Revealed);
            reply_text.push(' ');
            reply_text.push_str(&render(
                &self.templates.reveal,
                &[("emotion", &st.secret), ("max_turns", &max_turns)],
            ));
        }
        next.answered.push(QaEvent {
            question_id,
            guess: None,
            answer: category,
            raw_question_text: text.to_string(),
            raw_answer_text: reply_text.clone(),
            turn,
        });
        let terminal = next.is_finished();
        (
            next,
            AnswererReply {
                text: reply_text,
                category: Some(category),
                guess: None,
                terminal,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::seed_kb;

    fn small_kb(counts: &str) -> QaKnowledgeBase {
        QaKnowledgeBase::from_json_str(&format!(
            r#"{{"version":1,"alpha":1,"emotions":["happiness","anger"],
                "questions":[{{"id":"valence.positive","gloss":"is it a positive emotion"}}],
                "counts":{counts}}}"#
        ))
        .unwrap()
    }

    #[test]
    fn majority_lookup() {
        let kb = small_kb(r#"[{"emotion":"happiness","question":"valence.positive","answer":"yes","count":5}]"#);
        let nlu = Nlu::default();
        assert_eq!(
            kb_answer(&kb, &nlu, "happiness", "is it a positive emotion?"),
            AnswerCategory::Yes
        );
        // anger has no counts: three-way tie
        assert_eq!(
            kb_answer(&kb, &nlu, "anger", "is it a positive emotion?"),
            AnswerCategory::Other
        );
    }

    #[test]
    fn unmatched_question_answers_other() {
        let kb = seed_kb();
        let nlu = Nlu::default();
        assert_eq!(kb_answer(&kb, &nlu, "joy", "do penguins dream?"), AnswerCategory::Other);
    }

    #[test]
    fn yes_no_tie_answers_other() {
        let kb = small_kb(
            r#"[{"emotion":"anger","question":"valence.positive","answer":"yes","count":2},
                {"emotion":"anger","question":"valence.positive","answer":"no","count":2}]"#,
        );
        assert_eq!(
            kb_answer(&kb, &Nlu::default(), "anger", "is it a positive emotion"),
            AnswerCategory::Other
        );
    }

    #[test]
    fn pick_secret_is_seeded() {
        let lex = EmotionLexicon::new(["awe"]).unwrap();
        assert_eq!(pick_secret(&lex, 99), "awe");
        let kb = seed_kb();
        assert_eq!(pick_secret(kb.lexicon(), 42), pick_secret(kb.lexicon(), 42));
    }

    #[test]
    fn pick_secret_is_roughly_uniform() {
        let lex = EmotionLexicon::new(["a", "b", "c", "d"]).unwrap();
        let n = 10_000u64;
        let mut freq = [0u64; 4];
        for seed in 0..n {
            freq[lex.index_of(&pick_secret(&lex, seed)).unwrap()] += 1;
        }
        // binomial(n, 1/4): sigma = sqrt(n p (1-p))
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for f in freq {
            assert!((f as f64 - n as f64 * 0.25).abs() <= 4.0 * sigma, "{freq:?}");
        }
    }

    fn answerer() -> Answerer {
        let kb = Arc::new(seed_kb());
        Answerer::with_kb(kb, Arc::new(Nlu::default()))
    }

    #[test]
    fn correct_guess_ends_the_phase() {
        let a = answerer();
        let st = AnswererState::new("happiness");
        let (next, reply) = a.respond(&st, "is it happiness?");
        assert!(reply.terminal);
        assert_eq!(next.outcome, Some(AnswererOutcome::UserGuessed));
        assert!(reply.text.contains("happiness"));
        assert_eq!(next.turns_used, 1);
    }

    #[test]
    fn wrong_guess_costs_a_turn() {
        let a = answerer();
        let st = AnswererState::new("happiness");
        let (next, reply) = a.respond(&st, "is it fear?");
        assert_eq!(reply.text, "no.");
        assert!(!reply.terminal);
        assert_eq!(next.turns_used, 1);
        assert_eq!(next.answered[0].guess.as_deref(), Some("fear"));
    }

    #[test]
    fn attribute_question_uses_classifier() {
        let a = answerer();
        let kb = seed_kb();
        let st = AnswererState::new("happiness");
        let (next, reply) = a.respond(&st, "is it a positive emotion?");
        let expected = kb_answer(&kb, &Nlu::default(), "happiness", "is it a positive emotion?");
        assert_eq!(reply.category, Some(expected));
        assert_eq!(reply.text, Templates::default().answer(expected));
        assert_eq!(next.answered[0].question_id.as_deref(), Some("valence.positive"));
    }

    #[test]
    fn budget_exhaustion_reveals_secret() {
        let a = answerer();
        let mut st = AnswererState::new("happiness");
        for i in 0..20 {
            let (next, reply) = a.respond(&st, "is it calm?");
            st = next;
            assert_eq!(reply.terminal, i == 19);
        }
        assert_eq!(st.outcome, Some(AnswererOutcome::Revealed));
        assert!(st.answered.last().unwrap().raw_answer_text.contains("happiness"));
        assert_eq!(st.turns_used, 20);
    }

    struct Always(AnswerCategory);

    impl AnswerClassifier for Always {
        fn classify(&self, _: &str, _: &str) -> AnswerCategory {
            self.0
        }
    }

    #[test]
    fn custom_classifier_is_used() {
        let kb = Arc::new(seed_kb());
        let a = Answerer::new(
            kb,
            Arc::new(Nlu::default()),
            Arc::new(Always(AnswerCategory::No)),
            Arc::new(Templates::default()),
        );
        let (_, reply) = a.respond(&AnswererState::new("joy"), "do penguins dream?");
        assert_eq!(reply.category, Some(AnswerCategory::No));
    }
}
