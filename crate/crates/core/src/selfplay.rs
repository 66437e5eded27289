//! Agent-vs-agent evaluation: the asker plays against the knowledge-base answerer.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answerer::{pick_secret, AnswerClassifier, KbClassifier};
use crate::asker::{self, AskerAction, AskerConfig, AskerOutcome, AskerState};
use crate::derive_seed;
use crate::kb::QaKnowledgeBase;
use crate::model::AnswerCategory;
use crate::nlu::Nlu;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelfPlayError {
    #[error("noise must be a probability in [0, 1], got {0}")]
    InvalidNoise(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionOutcome {
    pub games: u32,
    pub wins: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameRecord {
    pub index: u32,
    pub secret: String,
    pub won: bool,
    pub turns: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfPlayReport {
    pub games: u32,
    pub wins: u32,
    pub win_rate: f64,
    /// Mean asker turns over won games; `None` when no game was won.
    pub mean_turns_to_win: Option<f64>,
    pub noise_rate: f64,
    pub seed: u64,
    /// Win probability of an asker that only makes distinct uniform guesses.
    pub guess_only_baseline: f64,
    pub per_emotion: BTreeMap<String, EmotionOutcome>,
    pub game_records: Vec<GameRecord>,
}

impl SelfPlayReport {
    pub fn from_records(mut records: Vec<GameRecord>, noise: f64, seed: u64, baseline: f64) -> Self {
        records.sort_by_key(|r| r.index);
        let games = records.len() as u32;
        let won: Vec<&GameRecord> = records.iter().filter(|r| r.won).collect();
        let wins = won.len() as u32;
        let mean_turns_to_win =
            (!won.is_empty()).then(|| won.iter().map(|r| f64::from(r.turns)).sum::<f64>() / won.len() as f64);
        let mut per_emotion: BTreeMap<String, EmotionOutcome> = BTreeMap::new();
        for r in &records {
            let o = per_emotion
                .entry(r.secret.clone())
                .or_insert(EmotionOutcome { games: 0, wins: 0 });
            o.games += 1;
            o.wins += u32::from(r.won);
        }
        Self {
            games,
            wins,
            win_rate: if games == 0 {
                0.0
            } else {
                f64::from(wins) / f64::from(games)
            },
            mean_turns_to_win,
            noise_rate: noise,
            seed,
            guess_only_baseline: baseline,
            per_emotion,
            game_records: records,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text summary followed by the per-emotion table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("games           {}\n", self.games));
        s.push_str(&format!("wins            {}\n", self.wins));
        s.push_str(&format!("win rate        {:.4}\n", self.win_rate));
        match self.mean_turns_to_win {
            Some(m) => s.push_str(&format!("mean turns/win  {m:.3}\n")),
            None => s.push_str("mean turns/win  -\n"),
        }
        s.push_str(&format!("noise           {}\n", self.noise_rate));
        s.push_str(&format!("seed            {}\n", self.seed));
        s.push_str(&format!("guess-only      {:.4}\n", self.guess_only_baseline));
        let width = self.per_emotion.keys().map(String::len).max().unwrap_or(7).max(7);
        s.push_str(&format!("\n{:<width$}  games  wins\n", "emotion"));
        for (e, o) in &self.per_emotion {
            s.push_str(&format!("{e:<width$}  {:>5}  {:>4}\n", o.games, o.wins));
        }
        s
    }
}

/// `min(max_turns, n) / n`: chance that distinct uniform guesses hit the secret.
pub fn guess_only_baseline(emotions: usize, max_turns: u32) -> f64 {
    if emotions == 0 {
        return 0.0;
    }
    (max_turns as usize).min(emotions) as f64 / emotions as f64
}

/// Replaces `truth` by a uniformly chosen different category with probability
/// `noise`. Always consumes two draws so streams stay aligned across noise levels.
pub fn corrupt(truth: AnswerCategory, noise: f64, rng: &mut impl Rng) -> AnswerCategory {
    let flip = rng.gen::<f64>() < noise;
    let pick = rng.gen_range(0..2usize);
    if !flip {
        return truth;
    }
    let others: Vec<AnswerCategory> = AnswerCategory::ALL.into_iter().filter(|&c| c != truth).collect();
    others[pick]
}

/// Plays one game against `secret` and returns the final asker state.
///
/// Questions go to `classifier` as their prompt text; guesses are adjudicated
/// exactly and never corrupted.
pub fn play_game(
    kb: &QaKnowledgeBase,
    classifier: &dyn AnswerClassifier,
    config: &AskerConfig,
    secret: &str,
    noise: f64,
    rng: &mut impl Rng,
) -> AskerState {
    let mut st = AskerState::new(kb);
    // each iteration consumes a turn or finishes the game
    while !st.is_finished() {
        let action = asker::decide_action(&st, kb, config);
        let (answer, question_text) = match &action {
            AskerAction::AskQuestion(q) => {
                let text = kb.question(q).map(|c| c.prompt()).unwrap_or_else(|| q.clone());
                (corrupt(classifier.classify(secret, &text), noise, rng), text)
            }
            AskerAction::MakeGuess(w) => {
                let a = if w == secret {
                    AnswerCategory::Yes
                } else {
                    AnswerCategory::No
                };
                (a, format!("Is it {w}?"))
            }
            AskerAction::Concede => (AnswerCategory::Other, String::new()),
        };
        st = asker::observe_category(&st, kb, &action, answer, &question_text, answer.as_str());
    }
    st
}

fn record(index: u32, secret: String, st: &AskerState) -> GameRecord {
    GameRecord {
        index,
        secret,
        won: st.outcome == Some(AskerOutcome::Won),
        turns: st.turns_used,
    }
}

fn check_noise(noise: f64) -> Result<(), SelfPlayError> {
    if (0.0..=1.0).contains(&noise) {
        Ok(())
    } else {
        Err(SelfPlayError::InvalidNoise(noise))
    }
}

/// Game `i` draws its secret and noise stream from `derive_seed(seed, i)`.
pub fn run_selfplay(kb: &QaKnowledgeBase, games: u32, noise: f64, seed: u64) -> Result<SelfPlayReport, SelfPlayError> {
    check_noise(noise)?;
    let kb = Arc::new(kb.clone());
    let nlu = Arc::new(Nlu::default());
    let classifier = KbClassifier::new(Arc::clone(&kb), nlu);
    let config = AskerConfig::default();

    let workers = thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(games.max(1) as usize);
    let records: Vec<GameRecord> = thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let (kb, classifier, config) = (&kb, &classifier, &config);
                scope.spawn(move || {
                    (0..games)
                        .filter(|i| *i as usize % workers == w)
                        .map(|i| {
                            let game_seed = derive_seed(seed, u64::from(i));
                            let secret = pick_secret(kb.lexicon(), game_seed);
                            let mut rng = ChaCha8Rng::seed_from_u64(game_seed);
                            let st = play_game(kb, classifier, config, &secret, noise, &mut rng);
                            record(i, secret, &st)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("self-play worker"))
            .collect()
    });

    let baseline = guess_only_baseline(kb.lexicon().len(), config.max_turns);
    Ok(SelfPlayReport::from_records(records, noise, seed, baseline))
}

/// One game per emotion, each word as the secret once, in lexicon order.
pub fn run_exhaustive(kb: &QaKnowledgeBase, noise: f64, seed: u64) -> Result<SelfPlayReport, SelfPlayError> {
    check_noise(noise)?;
    let kb_arc = Arc::new(kb.clone());
    let classifier = KbClassifier::new(Arc::clone(&kb_arc), Arc::new(Nlu::default()));
    let config = AskerConfig::default();
    let records = kb
        .lexicon()
        .words()
        .iter()
        .enumerate()
        .map(|(i, secret)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let st = play_game(kb, &classifier, &config, secret, noise, &mut rng);
            record(i as u32, secret.to_string(), &st)
        })
        .collect();
    let baseline = guess_only_baseline(kb.lexicon().len(), config.max_turns);
    Ok(SelfPlayReport::from_records(records, noise, seed, baseline))
}
