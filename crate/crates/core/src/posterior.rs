//! Posterior over emotion words.
//!
//! Weights are kept as normalized log-probabilities so that long update chains
//! with small likelihoods do not underflow; linear probabilities are derived
//! after each operation. Every operation returns a new value.

use std::sync::Arc;

use thiserror::Error;

use crate::kb::{LookupError, QaKnowledgeBase};
use crate::model::{AnswerCategory, EmotionLexicon};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PosteriorError {
    #[error(transparent)]
    Lookup(#[from] LookupError),
    #[error("posterior has no mass left to normalize")]
    Degenerate,
    #[error("every word in the lexicon has been excluded")]
    Exhausted,
    #[error("posterior and knowledge base use different lexicons")]
    LexiconMismatch,
    #[error("invalid probabilities: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    words: Arc<[String]>,
    log_probs: Vec<f64>,
    probs: Vec<f64>,
    /// Words removed by [`Posterior::zero_out`]; they never regain mass.
    excluded: Vec<bool>,
}

impl Posterior {
    pub fn uniform(lexicon: &EmotionLexicon) -> Self {
        let n = lexicon.len();
        let p = 1.0 / n as f64;
        Self {
            words: lexicon.shared_words(),
            log_probs: vec![p.ln(); n],
            probs: vec![p; n],
            excluded: vec![false; n],
        }
    }

    /// Builds a posterior from explicit probabilities (aligned with the lexicon).
    /// Values must be non-negative and sum to one within 1e-9.
    pub fn from_probs(lexicon: &EmotionLexicon, probs: &[f64]) -> Result<Self, PosteriorError> {
        if probs.len() != lexicon.len() {
            return Err(PosteriorError::Invalid(format!(
                "expected {} values, got {}",
                lexicon.len(),
                probs.len()
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(PosteriorError::Invalid("negative or non-finite value".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(PosteriorError::Invalid(format!("values sum to {sum}")));
        }
        let log_probs: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        Self::normalized(lexicon.shared_words(), log_probs, vec![false; probs.len()])
    }

    fn normalized(words: Arc<[String]>, mut log_probs: Vec<f64>, excluded: Vec<bool>) -> Result<Self, PosteriorError> {
        for (lp, &ex) in log_probs.iter_mut().zip(&excluded) {
            if ex {
                *lp = f64::NEG_INFINITY;
            }
        }
        let lse = log_sum_exp(&log_probs).ok_or(PosteriorError::Degenerate)?;
        for lp in &mut log_probs {
            *lp -= lse;
        }
        let probs = log_probs.iter().map(|lp| lp.exp()).collect();
        Ok(Self {
            words,
            log_probs,
            probs,
            excluded,
        })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Linear-scale probabilities aligned with the lexicon order.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn prob(&self, word: &str) -> Option<f64> {
        self.position(word).map(|i| self.probs[i])
    }

    pub fn is_excluded(&self, word: &str) -> bool {
        self.position(word).is_some_and(|i| self.excluded[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.words.iter().map(String::as_str).zip(self.probs.iter().copied())
    }

    /// Highest-probability word; ties go to the lexicographically smallest word.
    pub fn argmax(&self) -> Option<(&str, f64)> {
        self.iter()
            .zip(&self.excluded)
            .filter(|(_, &ex)| !ex)
            .map(|(wp, _)| wp)
            .fold(None, |best: Option<(&str, f64)>, (w, p)| match best {
                Some((bw, bp)) if bp > p || (bp == p && bw <= w) => Some((bw, bp)),
                _ => Some((w, p)),
            })
    }

    fn position(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|w| w == word)
    }

    fn check_lexicon(&self, kb: &QaKnowledgeBase) -> Result<(), PosteriorError> {
        let words = kb.lexicon().words();
        if std::ptr::eq(words.as_ptr(), self.words.as_ptr()) || *words == *self.words {
            Ok(())
        } else {
            Err(PosteriorError::LexiconMismatch)
        }
    }

    /// `p'(e) ∝ p(e) · P(a | e, q)`.
    pub fn update(&self, kb: &QaKnowledgeBase, question: &str, answer: AnswerCategory) -> Result<Self, PosteriorError> {
        self.check_lexicon(kb)?;
        let q = kb
            .question_index(question)
            .ok_or_else(|| LookupError::UnknownQuestion(question.to_string()))?;
        let log_probs = self
            .log_probs
            .iter()
            .enumerate()
            .map(|(e, lp)| lp + kb.conditional_at(e, q, answer).ln())
            .collect();
        Self::normalized(Arc::clone(&self.words), log_probs, self.excluded.clone())
    }

    /// Entropy in bits, with `0 · log 0 = 0`.
    pub fn entropy(&self) -> f64 {
        entropy_bits(&self.probs)
    }

    /// Removes `word` from the support and renormalizes. If it held all the
    /// mass, the result is uniform over the words that were never removed.
    pub fn zero_out(&self, word: &str) -> Result<Self, PosteriorError> {
        let i = self
            .position(word)
            .ok_or_else(|| LookupError::UnknownEmotion(word.to_string()))?;
        let mut excluded = self.excluded.clone();
        excluded[i] = true;
        match Self::normalized(Arc::clone(&self.words), self.log_probs.clone(), excluded.clone()) {
            Ok(p) => Ok(p),
            Err(PosteriorError::Degenerate) => {
                let live = excluded.iter().filter(|&&x| !x).count();
                if live == 0 {
                    return Err(PosteriorError::Exhausted);
                }
                let log_probs = vec![-(live as f64).ln(); excluded.len()];
                Self::normalized(Arc::clone(&self.words), log_probs, excluded)
            }
            Err(e) => Err(e),
        }
    }
}

pub fn uniform_prior(lexicon: &EmotionLexicon) -> Posterior {
    Posterior::uniform(lexicon)
}

pub fn bayes_update(
    p: &Posterior,
    kb: &QaKnowledgeBase,
    question: &str,
    answer: AnswerCategory,
) -> Result<Posterior, PosteriorError> {
    p.update(kb, question, answer)
}

pub fn entropy(p: &Posterior) -> f64 {
    p.entropy()
}

pub fn zero_out(p: &Posterior, word: &str) -> Result<Posterior, PosteriorError> {
    p.zero_out(word)
}

pub(crate) fn entropy_bits(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.log2()).sum::<f64>()
}

/// `ln Σ exp(x)`, or `None` when every term is `-inf`.
fn log_sum_exp(xs: &[f64]) -> Option<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    Some(max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln())
}
