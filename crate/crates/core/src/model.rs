use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bucketed answer to a yes/no question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerCategory {
    Yes,
    No,
    /// Anything that is not a clear yes or no. A classifier's "maybe" lands here.
    #[serde(alias = "maybe")]
    Other,
}

impl AnswerCategory {
    pub const ALL: [AnswerCategory; 3] = [AnswerCategory::Yes, AnswerCategory::No, AnswerCategory::Other];

    pub fn index(self) -> usize {
        match self {
            AnswerCategory::Yes => 0,
            AnswerCategory::No => 1,
            AnswerCategory::Other => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AnswerCategory::Yes => "yes",
            AnswerCategory::No => "no",
            AnswerCategory::Other => "other",
        }
    }
}

impl fmt::Display for AnswerCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown answer category {0:?} (expected yes, no, other or maybe)")]
pub struct ParseCategoryError(pub String);

impl FromStr for AnswerCategory {
    type Err = ParseCategoryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "yes" => Ok(AnswerCategory::Yes),
            "no" => Ok(AnswerCategory::No),
            "other" | "maybe" => Ok(AnswerCategory::Other),
            _ => Err(ParseCategoryError(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LexiconError {
    #[error("emotion lexicon is empty")]
    Empty,
    #[error("emotion word {0:?} must be lowercase, trimmed and non-empty")]
    NotNormalized(String),
    #[error("duplicate emotion word {0:?}")]
    Duplicate(String),
}

/// The closed, ordered set of guessable emotion words.
///
/// Cloning is cheap; posteriors keep a handle to the same word list.
#[derive(Debug, Clone)]
pub struct EmotionLexicon {
    words: Arc<[String]>,
    index: Arc<HashMap<String, usize>>,
}

impl EmotionLexicon {
    pub fn new<I, S>(words: I) -> Result<Self, LexiconError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let words: Vec<String> = words.into_iter().map(Into::into).collect();
        if words.is_empty() {
            return Err(LexiconError::Empty);
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || w.trim() != w || w.to_lowercase() != *w {
                return Err(LexiconError::NotNormalized(w.clone()));
            }
            if index.insert(w.clone(), i).is_some() {
                return Err(LexiconError::Duplicate(w.clone()));
            }
        }
        Ok(Self {
            words: words.into(),
            index: Arc::new(index),
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub(crate) fn shared_words(&self) -> Arc<[String]> {
        Arc::clone(&self.words)
    }
}

impl PartialEq for EmotionLexicon {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.words, &other.words) || self.words == other.words
    }
}

/// One question-answer exchange in a game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaEvent {
    /// Canonical question id; `None` for guesses and unmatched free-text questions.
    pub question_id: Option<String>,
    /// Emotion word when this exchange was a guess.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guess: Option<String>,
    pub answer: AnswerCategory,
    pub raw_question_text: String,
    pub raw_answer_text: String,
    pub turn: u32,
}
