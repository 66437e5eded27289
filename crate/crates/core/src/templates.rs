//! Agent utterance templates. Placeholders are `{name}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::AnswerCategory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerTemplates {
    pub yes: String,
    pub no: String,
    pub other: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Templates {
    pub answers: AnswerTemplates,
    pub greeting: Vec<String>,
    pub asker_intro: String,
    pub answerer_intro: String,
    pub answerer_prompt: String,
    pub guess: String,
    pub guess_reprompt: String,
    pub guess_wrong: String,
    pub asker_win: String,
    pub asker_concede: String,
    pub user_correct_guess: String,
    pub wrong_guess: String,
    pub reveal: String,
    pub timeout_reprompt: String,
    pub timeout_give_up: String,
    pub goodbye: String,
}

impl Default for Templates {
    fn default() -> Self {
        serde_json::from_str(include_str!("../data/templates.json")).expect("bundled templates")
    }
}

impl Templates {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, std::io::Error> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn answer(&self, category: AnswerCategory) -> &str {
        match category {
            AnswerCategory::Yes => &self.answers.yes,
            AnswerCategory::No => &self.answers.no,
            AnswerCategory::Other => &self.answers.other,
        }
    }
}

pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}
