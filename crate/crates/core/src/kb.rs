//! Answer-count knowledge base.
//!
//! Holds counts `c(e, q, a)` of how often answer `a` was given to question `q`
//! when the secret was emotion `e`, and turns them into additively smoothed
//! conditionals `P(a | e, q)`. The same table drives the asker's likelihoods and
//! the reference answerer.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AnswerCategory, EmotionLexicon, LexiconError};

pub const KB_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed KB JSON at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid KB: {0}")]
    Validation(String),
}

impl From<LexiconError> for KbError {
    fn from(e: LexiconError) -> Self {
        KbError::Validation(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LookupError {
    #[error("unknown emotion {0:?}")]
    UnknownEmotion(String),
    #[error("unknown question id {0:?}")]
    UnknownQuestion(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalQuestion {
    pub id: String,
    pub gloss: String,
    #[serde(default)]
    pub paraphrases: Vec<String>,
}

impl CanonicalQuestion {
    /// Gloss first, then paraphrases.
    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.gloss.as_str()).chain(self.paraphrases.iter().map(String::as_str))
    }

    /// The gloss as a sentence: capitalized, with a question mark.
    pub fn prompt(&self) -> String {
        let mut chars = self.gloss.trim().chars();
        let mut out: String = match chars.next() {
            Some(c) => c.to_uppercase().chain(chars).collect(),
            None => String::new(),
        };
        if !out.ends_with('?') {
            out.push('?');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountEntry {
    pub emotion: String,
    pub question: String,
    pub answer: String,
    pub count: u64,
}

/// On-disk KB layout. Unknown fields are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbFile {
    pub version: u32,
    pub alpha: f64,
    pub emotions: Vec<String>,
    pub questions: Vec<CanonicalQuestion>,
    #[serde(default)]
    pub counts: Vec<CountEntry>,
}

#[derive(Debug, Clone)]
pub struct QaKnowledgeBase {
    version: u32,
    alpha: f64,
    lexicon: EmotionLexicon,
    questions: Vec<CanonicalQuestion>,
    question_index: HashMap<String, usize>,
    /// Row-major by emotion, then question; one slot per answer category.
    counts: Vec<[u64; 3]>,
}

impl QaKnowledgeBase {
    pub fn from_file(file: KbFile) -> Result<Self, KbError> {
        if file.version != KB_FORMAT_VERSION {
            return Err(KbError::Validation(format!(
                "unsupported version {} (expected {KB_FORMAT_VERSION})",
                file.version
            )));
        }
        if !(file.alpha.is_finite() && file.alpha > 0.0) {
            return Err(KbError::Validation(format!("alpha must be > 0, got {}", file.alpha)));
        }
        let lexicon = EmotionLexicon::new(file.emotions)?;

        let mut question_index = HashMap::with_capacity(file.questions.len());
        for (i, q) in file.questions.iter().enumerate() {
            if q.id.trim().is_empty() {
                return Err(KbError::Validation(format!("question #{i} has an empty id")));
            }
            if q.gloss.trim().is_empty() {
                return Err(KbError::Validation(format!("question {:?} has an empty gloss", q.id)));
            }
            if question_index.insert(q.id.clone(), i).is_some() {
                return Err(KbError::Validation(format!("duplicate question id {:?}", q.id)));
            }
        }

        let nq = file.questions.len();
        let mut counts = vec![[0u64; 3]; lexicon.len() * nq];
        for (i, c) in file.counts.iter().enumerate() {
            let e = lexicon
                .index_of(&c.emotion)
                .ok_or_else(|| KbError::Validation(format!("count #{i} references unknown emotion {:?}", c.emotion)))?;
            let q = *question_index.get(&c.question).ok_or_else(|| {
                KbError::Validation(format!("count #{i} references unknown question {:?}", c.question))
            })?;
            let a: AnswerCategory = c.answer.parse().map_err(|_| {
                KbError::Validation(format!("count #{i} references unknown answer category {:?}", c.answer))
            })?;
            // repeated triples accumulate
            let slot = &mut counts[e * nq + q][a.index()];
            *slot = slot.checked_add(c.count).ok_or_else(|| {
                KbError::Validation(format!("count overflow for ({}, {}, {a})", c.emotion, c.question))
            })?;
        }

        Ok(Self {
            version: file.version,
            alpha: file.alpha,
            lexicon,
            questions: file.questions,
            question_index,
            counts,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self, KbError> {
        let file: KbFile = serde_json::from_str(s).map_err(|e| KbError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::from_file(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KbError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| KbError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    /// Back to the file layout; absent triples stay absent.
    pub fn to_file(&self) -> KbFile {
        let nq = self.questions.len();
        let mut counts = Vec::new();
        for (e, word) in self.lexicon.words().iter().enumerate() {
            for (q, question) in self.questions.iter().enumerate() {
                for a in AnswerCategory::ALL {
                    let c = self.counts[e * nq + q][a.index()];
                    if c > 0 {
                        counts.push(CountEntry {
                            emotion: word.clone(),
                            question: question.id.clone(),
                            answer: a.as_str().to_string(),
                            count: c,
                        });
                    }
                }
            }
        }
        KbFile {
            version: self.version,
            alpha: self.alpha,
            emotions: self.lexicon.words().to_vec(),
            questions: self.questions.clone(),
            counts,
        }
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lexicon(&self) -> &EmotionLexicon {
        &self.lexicon
    }

    pub fn questions(&self) -> &[CanonicalQuestion] {
        &self.questions
    }

    pub fn question(&self, id: &str) -> Option<&CanonicalQuestion> {
        self.question_index.get(id).map(|&i| &self.questions[i])
    }

    pub fn question_index(&self, id: &str) -> Option<usize> {
        self.question_index.get(id).copied()
    }

    pub fn counts(&self, emotion: &str, question: &str) -> Result<[u64; 3], LookupError> {
        let (e, q) = self.resolve(emotion, question)?;
        Ok(self.counts_at(e, q))
    }

    pub fn counts_at(&self, e: usize, q: usize) -> [u64; 3] {
        self.counts[e * self.questions.len() + q]
    }

    /// Smoothed `P(a | e, q) = (c(e,q,a) + α) / (Σ c(e,q,·) + 3α)`.
    pub fn answer_conditional(
        &self,
        emotion: &str,
        question: &str,
        answer: AnswerCategory,
    ) -> Result<f64, LookupError> {
        let (e, q) = self.resolve(emotion, question)?;
        Ok(self.conditional_at(e, q, answer))
    }

    pub fn conditional_at(&self, e: usize, q: usize, answer: AnswerCategory) -> f64 {
        let c = self.counts_at(e, q);
        let total = (c[0] + c[1] + c[2]) as f64;
        (c[answer.index()] as f64 + self.alpha) / (total + 3.0 * self.alpha)
    }

    fn resolve(&self, emotion: &str, question: &str) -> Result<(usize, usize), LookupError> {
        let e = self
            .lexicon
            .index_of(emotion)
            .ok_or_else(|| LookupError::UnknownEmotion(emotion.to_string()))?;
        let q = self
            .question_index(question)
            .ok_or_else(|| LookupError::UnknownQuestion(question.to_string()))?;
        Ok((e, q))
    }

    pub fn stats(&self) -> KbStats {
        let nq = self.questions.len();
        let mut per_question = Vec::with_capacity(nq);
        let mut total = 0;
        for (q, question) in self.questions.iter().enumerate() {
            let mut m = [0u64; 3];
            for e in 0..self.lexicon.len() {
                let c = self.counts_at(e, q);
                for a in 0..3 {
                    m[a] += c[a];
                }
            }
            total += m.iter().sum::<u64>();
            per_question.push(QuestionMarginal {
                id: question.id.clone(),
                yes: m[0],
                no: m[1],
                other: m[2],
            });
        }
        let uncovered = (0..self.lexicon.len())
            .flat_map(|e| (0..nq).map(move |q| (e, q)))
            .filter(|&(e, q)| self.counts_at(e, q).iter().all(|&c| c == 0))
            .count();
        KbStats {
            version: self.version,
            alpha: self.alpha,
            emotions: self.lexicon.len(),
            questions: nq,
            total_count: total,
            uncovered_pairs: uncovered,
            per_question,
        }
    }
}

pub fn load_kb(path: impl AsRef<Path>) -> Result<QaKnowledgeBase, KbError> {
    QaKnowledgeBase::load(path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuestionMarginal {
    pub id: String,
    pub yes: u64,
    pub no: u64,
    pub other: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KbStats {
    pub version: u32,
    pub alpha: f64,
    pub emotions: usize,
    pub questions: usize,
    pub total_count: u64,
    /// (emotion, question) pairs with no observations at all.
    pub uncovered_pairs: usize,
    pub per_question: Vec<QuestionMarginal>,
}

/// The seed KB shipped with the crate (48 emotion words, 18 questions).
pub fn seed_kb() -> QaKnowledgeBase {
    QaKnowledgeBase::from_json_str(include_str!("../data/emo20q_seed.json")).expect("bundled seed KB is valid")
}

/// Synthetic 32-emotion KB where five questions partition the lexicon into
/// unique bit patterns and five more are answered "yes" for every emotion.
pub fn separable_kb() -> QaKnowledgeBase {
    QaKnowledgeBase::from_json_str(include_str!("../data/separable32.json")).expect("bundled separable KB is valid")
}
