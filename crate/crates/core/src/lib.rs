//! Emotion twenty questions.
//!
//! One player picks an emotion word; the other tries to identify it with
//! yes/no questions in at most twenty turns. This crate holds everything the
//! agent needs to play either side:
//!
//! - [`kb`], [`posterior`], [`model`]: the answer-count knowledge base, smoothed
//!   conditionals and the posterior over emotion words.
//! - [`nlu`]: answer bucketing, question matching and guess detection.
//! - [`asker`]: the question-asking agent (information-gain question choice,
//!   sequential Bayesian updates, guess policy).
//! - [`answerer`]: the question-answering agent behind a pluggable classifier.
//! - [`dialog`]: a pushdown automaton that runs both phases of a session.
//! - [`selfplay`]: agent-vs-agent evaluation.

pub mod answerer;
pub mod asker;
pub mod dialog;
pub mod kb;
pub mod model;
pub mod nlu;
pub mod posterior;
pub mod selfplay;
pub mod templates;

pub use answerer::{AnswerClassifier, Answerer, AnswererState, KbClassifier};
pub use asker::{AskerAction, AskerConfig, AskerState};
pub use dialog::{DialogConfig, DialogEvent, DialogMachine, PhaseOrder};
pub use kb::{KbError, QaKnowledgeBase};
pub use model::{AnswerCategory, EmotionLexicon, QaEvent};
pub use nlu::Nlu;
pub use posterior::Posterior;

/// Number of turns the asking player gets.
pub const MAX_TURNS: u32 = 20;

/// Derives a child seed from a master seed and a counter (splitmix64 finalizer).
pub fn derive_seed(master: u64, counter: u64) -> u64 {
    let mut z = master
        .wrapping_add(counter.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
