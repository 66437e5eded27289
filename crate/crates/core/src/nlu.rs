//! Free-text handling: answer bucketing, question matching and guess detection.
//!
//! Everything here is a pure function of the input string and the loaded word
//! tables. Cue words and stopwords are data files so they can be swapped.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::QaKnowledgeBase;
use crate::model::{AnswerCategory, EmotionLexicon};

pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.5;

/// Negation words survive stopword removal no matter what the list says.
const PROTECTED: [&str; 2] = ["not", "no"];

/// Token prefixes that turn a bare emotion word into a guess.
const GUESS_PREFIXES: &[&[&str]] = &[
    &[],
    &["is", "it"],
    &["it", "is"],
    &["its"],
    &["is", "the", "emotion"],
    &["is", "your", "emotion"],
    &["is", "the", "word"],
    &["is", "your", "word"],
    &["is", "it", "the", "emotion"],
    &["are", "you", "thinking", "of"],
    &["are", "you", "feeling"],
    &["my", "guess", "is"],
    &["i", "guess"],
];

#[derive(Debug, Error)]
pub enum NluError {
    #[error("failed to read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed cue lexicon: {0}")]
    Cues(#[from] serde_json::Error),
    #[error("match threshold must be within [0, 1], got {0}")]
    Threshold(f64),
}

/// Cue lexicon file layout.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CueLexicon {
    pub yes: Vec<String>,
    pub no: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    /// Present iff `score >= threshold`.
    pub question_id: Option<String>,
    pub score: f64,
    pub matched_surface: String,
}

#[derive(Debug, Clone)]
pub struct Nlu {
    stopwords: HashSet<String>,
    yes_cues: HashSet<String>,
    no_cues: HashSet<String>,
    threshold: f64,
}

impl Default for Nlu {
    fn default() -> Self {
        let cues: CueLexicon = serde_json::from_str(include_str!("../data/cues.json")).expect("bundled cue lexicon");
        Self::new(parse_stopwords(include_str!("../data/stopwords.txt")), cues)
    }
}

impl Nlu {
    pub fn new<I, S>(stopwords: I, cues: CueLexicon) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let norm = |w: String| w.trim().to_lowercase();
        Self {
            stopwords: stopwords
                .into_iter()
                .map(|s| norm(s.into()))
                .filter(|w| !w.is_empty() && !PROTECTED.contains(&w.as_str()))
                .collect(),
            yes_cues: cues.yes.into_iter().map(norm).collect(),
            no_cues: cues.no.into_iter().map(norm).collect(),
            threshold: DEFAULT_MATCH_THRESHOLD,
        }
    }

    pub fn from_files(stopwords: impl AsRef<Path>, cues: impl AsRef<Path>) -> Result<Self, NluError> {
        let read = |p: &Path| {
            fs::read_to_string(p).map_err(|source| NluError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        let stop = read(stopwords.as_ref())?;
        let cues: CueLexicon = serde_json::from_str(&read(cues.as_ref())?)?;
        Ok(Self::new(parse_stopwords(&stop), cues))
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self, NluError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(NluError::Threshold(threshold));
        }
        self.threshold = threshold;
        Ok(self)
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn is_stopword(&self, w: &str) -> bool {
        self.stopwords.contains(w)
    }

    pub fn yes_cues(&self) -> &HashSet<String> {
        &self.yes_cues
    }

    pub fn no_cues(&self) -> &HashSet<String> {
        &self.no_cues
    }

    /// Lowercase, strip punctuation, split on whitespace, drop stopwords.
    pub fn normalize_text(&self, s: &str) -> Vec<String> {
        tokenize(s)
            .into_iter()
            .filter(|t| !self.stopwords.contains(t))
            .collect()
    }

    /// No-cues win over yes-cues; anything without a cue is `Other`.
    pub fn bucket_answer(&self, s: &str) -> AnswerCategory {
        let tokens = self.normalize_text(s);
        if tokens.iter().any(|t| self.no_cues.contains(t)) {
            AnswerCategory::No
        } else if tokens.iter().any(|t| self.yes_cues.contains(t)) {
            AnswerCategory::Yes
        } else {
            AnswerCategory::Other
        }
    }

    /// Best Jaccard overlap against every gloss and paraphrase in the KB.
    /// Ties go to the lexicographically smallest question id.
    pub fn match_question(&self, s: &str, kb: &QaKnowledgeBase) -> MatchResult {
        let query = self.normalize_text(s);
        let mut best = MatchResult {
            question_id: None,
            score: 0.0,
            matched_surface: String::new(),
        };
        if query.is_empty() {
            return best;
        }
        let mut questions: Vec<_> = kb.questions().iter().collect();
        questions.sort_by(|a, b| a.id.cmp(&b.id));

        let mut best_id: Option<&str> = None;
        for q in questions {
            for surface in q.surfaces() {
                let score = jaccard(&query, &self.normalize_text(surface));
                if best_id.is_none() || score > best.score {
                    best_id = Some(&q.id);
                    best.score = score;
                    best.matched_surface = surface.to_string();
                }
            }
        }
        if best.score >= self.threshold {
            best.question_id = best_id.map(str::to_string);
        }
        best
    }

    /// Returns the guessed word if the utterance is a guess template around a
    /// lexicon word ("is it X", "X?", bare "X", ...).
    pub fn detect_guess(&self, s: &str, lexicon: &EmotionLexicon) -> Option<String> {
        let tokens = tokenize(s);
        if tokens.is_empty() {
            return None;
        }
        GUESS_PREFIXES.iter().find_map(|prefix| {
            if tokens.len() <= prefix.len() || !tokens.iter().zip(prefix.iter()).all(|(t, p)| t == p) {
                return None;
            }
            let rest = tokens[prefix.len()..].join(" ");
            lexicon.contains(&rest).then_some(rest)
        })
    }
}

pub fn parse_stopwords(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// Lowercased alphanumeric tokens. Apostrophes are dropped ("isn't" → "isnt"),
/// any other punctuation separates tokens.
pub fn tokenize(s: &str) -> Vec<String> {
    let mut cleaned = String::with_capacity(s.len());
    for c in s.chars().flat_map(char::to_lowercase) {
        if matches!(c, '\'' | '\u{2019}' | '\u{2018}' | '`') {
            continue;
        }
        cleaned.push(if c.is_alphanumeric() { c } else { ' ' });
    }
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// `|A ∩ B| / |A ∪ B|` over token sets; two empty sets count as identical.
pub fn jaccard(a: &[String], b: &[String]) -> f64 {
    let a: HashSet<&str> = a.iter().map(String::as_str).collect();
    let b: HashSet<&str> = b.iter().map(String::as_str).collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}
