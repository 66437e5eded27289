//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if any criterion fails.
//!
//! Tolerances are fixed here and nowhere else.

mod common;

use std::fmt::Write as _;
use std::fs;
use std::sync::Arc;
use std::time::{Duration, Instant};

use emo20q_core::answerer::{kb_answer, Answerer};
use emo20q_core::asker::{self, select_question, AskerAction, AskerConfig, AskerOutcome, AskerState};
use emo20q_core::dialog::{new_machine, replay, DialogConfig, DialogEvent, PhaseOrder};
use emo20q_core::kb::{seed_kb, separable_kb, CanonicalQuestion, CountEntry, KbFile, QaKnowledgeBase};
use emo20q_core::posterior::{bayes_update, uniform_prior};
use emo20q_core::selfplay::{run_exhaustive, run_selfplay};
use emo20q_core::{AnswerCategory, Nlu};
use emo20q_service::protocol::{MessageType, WireMessage};
use emo20q_service::server::ServerOptions;
use emo20q_service::transcript::{check_schema, Transcript};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PROB_TOL: f64 = 1e-9;
const ORACLE_RUNTIME: Duration = Duration::from_secs(5);
const NOISY_MIN_WIN_RATE: f64 = 0.70;
const MONOTONE_SLACK: f64 = 0.02;
const TURN_BUDGET: u32 = 20;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------- random knowledge bases ----------

const NE: usize = 5;
const NQ: usize = 6;

fn random_kb(rng: &mut ChaCha8Rng, max_count: u64, alpha: f64) -> QaKnowledgeBase {
    let emotions: Vec<String> = (0..NE).map(|i| format!("e{i}")).collect();
    let questions = (0..NQ)
        .map(|j| CanonicalQuestion {
            id: format!("q{j}"),
            gloss: format!("question {j}"),
            paraphrases: vec![],
        })
        .collect();
    let mut counts = Vec::new();
    for e in &emotions {
        for j in 0..NQ {
            for a in AnswerCategory::ALL {
                counts.push(CountEntry {
                    emotion: e.clone(),
                    question: format!("q{j}"),
                    answer: a.as_str().into(),
                    count: rng.gen_range(0..=max_count),
                });
            }
        }
    }
    QaKnowledgeBase::from_file(KbFile {
        version: 1,
        alpha,
        emotions,
        questions,
        counts,
    })
    .unwrap()
}

fn random_answers(rng: &mut ChaCha8Rng, k: usize) -> Vec<(usize, AnswerCategory)> {
    (0..k)
        .map(|_| (rng.gen_range(0..NQ), AnswerCategory::ALL[rng.gen_range(0..3)]))
        .collect()
}

fn smoothed(kb: &QaKnowledgeBase, e: usize, q: usize, a: AnswerCategory) -> f64 {
    let c = kb.counts(&format!("e{e}"), &format!("q{q}")).unwrap();
    let n: u64 = c.iter().sum();
    (c[a.index()] as f64 + kb.alpha()) / (n as f64 + 3.0 * kb.alpha())
}

/// Prior times the product of all likelihoods, normalized once.
fn brute_posterior(kb: &QaKnowledgeBase, answers: &[(usize, AnswerCategory)]) -> Vec<f64> {
    let mut w = vec![1.0 / NE as f64; NE];
    for (e, we) in w.iter_mut().enumerate() {
        for &(q, a) in answers {
            *we *= smoothed(kb, e, q, a);
        }
    }
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

fn sequential(kb: &QaKnowledgeBase, answers: &[(usize, AnswerCategory)]) -> Vec<f64> {
    answers
        .iter()
        .fold(uniform_prior(kb.lexicon()), |p, &(q, a)| {
            bayes_update(&p, kb, &format!("q{q}"), a).unwrap()
        })
        .probs()
        .to_vec()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn bits(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.log2()).sum::<f64>()
}

// ---------- criteria ----------

fn bayes_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let kb = random_kb(&mut rng, 10, 1.0);
        let k = rng.gen_range(0..=10);
        let answers = random_answers(&mut rng, k);
        worst = worst.max(max_abs_diff(
            &sequential(&kb, &answers),
            &brute_posterior(&kb, &answers),
        ));
    }
    let elapsed = started.elapsed();
    ensure(worst <= PROB_TOL, || format!("max deviation {worst:e} > {PROB_TOL:e}"))?;
    ensure(elapsed < ORACLE_RUNTIME, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "1000 KBs, max deviation {worst:.1e}, {} ms",
        elapsed.as_millis()
    ))
}

fn commutativity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let kb = random_kb(&mut rng, 10, 1.0);
        let k = rng.gen_range(2..=10);
        let answers = random_answers(&mut rng, k);
        let mut permuted = answers.clone();
        permuted.shuffle(&mut rng);
        worst = worst.max(max_abs_diff(&sequential(&kb, &answers), &sequential(&kb, &permuted)));
    }
    ensure(worst <= PROB_TOL, || format!("max deviation {worst:e}"))?;
    Ok(format!("500 permutations, max deviation {worst:.1e}"))
}

/// Brute-force choice: largest expected entropy reduction, near-ties to the smallest id.
fn oracle_question(kb: &QaKnowledgeBase, prior: &[f64], asked: &[usize]) -> Option<String> {
    let gains: Vec<(String, f64)> = (0..NQ)
        .filter(|q| !asked.contains(q))
        .map(|q| {
            let mut remaining = 0.0;
            for a in AnswerCategory::ALL {
                let joint: Vec<f64> = (0..NE).map(|e| prior[e] * smoothed(kb, e, q, a)).collect();
                let pa: f64 = joint.iter().sum();
                if pa > 0.0 {
                    let post: Vec<f64> = joint.iter().map(|j| j / pa).collect();
                    remaining += pa * bits(&post);
                }
            }
            (format!("q{q}"), bits(prior) - remaining)
        })
        .collect();
    let best = gains.iter().map(|g| g.1).fold(f64::NEG_INFINITY, f64::max);
    gains.into_iter().filter(|g| g.1 >= best - 1e-12).map(|g| g.0).min()
}

fn symmetric_kb(ids: &[&str]) -> QaKnowledgeBase {
    let emotions = vec!["alpha".to_string(), "beta".to_string()];
    let questions = ids
        .iter()
        .map(|id| CanonicalQuestion {
            id: id.to_string(),
            gloss: format!("question {id}"),
            paraphrases: vec![],
        })
        .collect();
    let mut counts = Vec::new();
    for id in ids {
        counts.push(CountEntry {
            emotion: "alpha".into(),
            question: id.to_string(),
            answer: "yes".into(),
            count: 5,
        });
        counts.push(CountEntry {
            emotion: "beta".into(),
            question: id.to_string(),
            answer: "no".into(),
            count: 5,
        });
    }
    QaKnowledgeBase::from_file(KbFile {
        version: 1,
        alpha: 1.0,
        emotions,
        questions,
        counts,
    })
    .unwrap()
}

fn ig_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..200 {
        let kb = random_kb(&mut rng, 10, 1.0);
        let k = rng.gen_range(0..=4);
        let answers = random_answers(&mut rng, k);
        let mut st = AskerState::new(&kb);
        let mut asked = Vec::new();
        for &(q, a) in &answers {
            st = asker::observe_category(&st, &kb, &AskerAction::AskQuestion(format!("q{q}")), a, "", "");
            asked.push(q);
        }
        let want = oracle_question(&kb, st.posterior.probs(), &asked);
        let got = select_question(&st, &kb);
        ensure(got == want, || format!("case {case}: chose {got:?}, oracle {want:?}"))?;
    }
    for ids in [vec!["q.b", "q.a"], vec!["zeta", "eta", "theta", "beta"]] {
        let kb = symmetric_kb(&ids);
        let got = select_question(&AskerState::new(&kb), &kb);
        let want = ids.iter().min().map(|s| s.to_string());
        ensure(got == want, || format!("symmetric {ids:?}: chose {got:?}"))?;
    }
    Ok("200 random KBs match brute force; symmetric ties pick the smallest id".into())
}

fn selfplay_criterion() -> Outcome {
    let kb = separable_kb();
    let exhaustive = run_exhaustive(&kb, 0.0, 0).map_err(|e| e.to_string())?;
    ensure(exhaustive.games == 32 && exhaustive.wins == 32, || {
        format!("noise-free: {}/{}", exhaustive.wins, exhaustive.games)
    })?;
    let over = exhaustive.game_records.iter().filter(|g| g.turns > TURN_BUDGET).count();
    ensure(over == 0, || format!("{over} games exceeded {TURN_BUDGET} turns"))?;

    let mut rates = Vec::new();
    for noise in [0.0, 0.1, 0.3, 0.5] {
        let r = run_selfplay(&kb, 200, noise, 2024).map_err(|e| e.to_string())?;
        rates.push((noise, r.win_rate));
    }
    let noisy = rates[1].1;
    ensure(noisy >= NOISY_MIN_WIN_RATE, || format!("noise 0.1 win rate {noisy:.3}"))?;
    for w in rates.windows(2) {
        ensure(w[1].1 <= w[0].1 + MONOTONE_SLACK, || {
            format!("win rate rose: {rates:?}")
        })?;
    }
    let shown: Vec<String> = rates.iter().map(|(n, r)| format!("{n}:{r:.3}")).collect();
    Ok(format!("32/32 noise-free; win rates {}", shown.join(" ")))
}

fn game_rules() -> Outcome {
    let kb = Arc::new(seed_kb());
    // random dialogs never exceed the budget in either phase
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let replies = ["yes", "no", "maybe", "is it anger?", "is it a positive emotion?", "hmm"];
    for game in 0..50u64 {
        let mut m = new_machine(Arc::clone(&kb), game, DialogConfig::default());
        m = m.step(&DialogEvent::SessionStart).map_err(|e| e.to_string())?.0;
        while !m.is_over() {
            let reply = replies[rng.gen_range(0..replies.len())];
            m = m
                .step(&DialogEvent::UserUtterance(reply.into()))
                .map_err(|e| e.to_string())?
                .0;
            ensure(
                m.asker().turns_used <= TURN_BUDGET && m.answerer().turns_used <= TURN_BUDGET,
                || format!("game {game} exceeded the budget"),
            )?;
        }
    }

    // rejected guesses cost a turn; an uninformative user exhausts the asker
    let config = AskerConfig::default();
    let mut st = AskerState::new(&kb);
    while !st.is_finished() {
        let action = asker::decide_action(&st, &kb, &config);
        let before = st.turns_used;
        let answer = match action {
            AskerAction::MakeGuess(_) => AnswerCategory::No,
            _ => AnswerCategory::Other,
        };
        st = asker::observe_category(&st, &kb, &action, answer, "", "");
        if matches!(action, AskerAction::MakeGuess(_)) {
            ensure(st.turns_used == before + 1, || "guess did not consume a turn".into())?;
        }
    }
    ensure(
        st.outcome == Some(AskerOutcome::Conceded) && st.turns_used == TURN_BUDGET,
        || format!("asker ended {:?} after {} turns", st.outcome, st.turns_used),
    )?;

    // the answerer reveals its word once the user runs out of turns
    let answerer = Answerer::with_kb(Arc::clone(&kb), Arc::new(Nlu::default()));
    let mut a = answerer.start(9);
    let mut last = None;
    for _ in 0..TURN_BUDGET {
        let (next, reply) = answerer.respond(&a, "is it a positive emotion?");
        a = next;
        last = Some(reply);
    }
    let last = last.unwrap();
    ensure(last.terminal && last.text.contains(&a.secret), || {
        format!("no reveal: {:?}", last.text)
    })?;
    Ok("50 random dialogs within 20 turns per phase; guesses counted; concede and reveal at exhaustion".into())
}

fn golden_events() -> Vec<DialogEvent> {
    let u = |s: &str| DialogEvent::UserUtterance(s.into());
    vec![
        DialogEvent::SessionStart,
        u("yes"),
        DialogEvent::Timeout,
        u("no"),
        u("hmm"),
        u("nope"),
        u("yes, that's it"),
        u("is it a positive emotion?"),
        u("does it make you energetic"),
        u("is it anger?"),
        u("sadness"),
        DialogEvent::SessionEnd,
    ]
}

fn gpda() -> Outcome {
    let kb = common::fixture_kb();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let texts = [
        "yes",
        "no",
        "maybe",
        "",
        "is it anger",
        "sadness",
        "is it a positive emotion",
        "penguins",
    ];
    for case in 0..100u64 {
        let order = [PhaseOrder::AskerFirst, PhaseOrder::AnswererFirst][case as usize % 2].clone();
        let config = DialogConfig {
            phase_order: order,
            ..DialogConfig::default()
        };
        let mut m = new_machine(Arc::clone(&kb), case, config.clone());
        let mut events = vec![DialogEvent::SessionStart];
        m = m.step(&events[0]).map_err(|e| e.to_string())?.0;
        for _ in 0..rng.gen_range(0..60) {
            if m.is_over() {
                break;
            }
            let ev = match rng.gen_range(0..10) {
                0 => DialogEvent::Timeout,
                _ => DialogEvent::UserUtterance(texts[rng.gen_range(0..texts.len())].into()),
            };
            m = m.step(&ev).map_err(|e| format!("case {case}: {e}"))?.0;
            m.check_stack().map_err(|e| format!("case {case}: {e}"))?;
            events.push(ev);
        }
        let a = replay(Arc::clone(&kb), case, config.clone(), &events).map_err(|e| e.to_string())?;
        let b = replay(Arc::clone(&kb), case, config, &events).map_err(|e| e.to_string())?;
        ensure(a.to_json() == b.to_json(), || format!("case {case} replays differ"))?;
    }
    let golden_path = format!(
        "{}/../core/tests/fixtures/golden_trace.json",
        env!("CARGO_MANIFEST_DIR")
    );
    let golden = fs::read_to_string(&golden_path).map_err(|e| e.to_string())?;
    let trace = replay(kb, 20, DialogConfig::default(), &golden_events()).map_err(|e| e.to_string())?;
    ensure(trace.to_json() + "\n" == golden, || "golden trace differs".into())?;
    Ok("100 random sequences replay identically with a valid stack; golden trace matches".into())
}

fn brute_majority(kb: &QaKnowledgeBase, emotion: &str, qid: &str) -> AnswerCategory {
    let c = kb.counts(emotion, qid).unwrap();
    let n: u64 = c.iter().sum();
    let p: Vec<f64> = c
        .iter()
        .map(|&x| (x as f64 + kb.alpha()) / (n as f64 + 3.0 * kb.alpha()))
        .collect();
    let best = p.iter().cloned().fold(f64::MIN, f64::max);
    let top: Vec<usize> = (0..3).filter(|&i| p[i] == best).collect();
    if top.len() == 1 {
        AnswerCategory::ALL[top[0]]
    } else {
        AnswerCategory::Other
    }
}

fn answerer_oracle() -> Outcome {
    let nlu = Nlu::default();
    let mut checked = 0;
    for kb in [seed_kb(), (*common::fixture_kb()).clone()] {
        for e in kb.lexicon().words() {
            for q in kb.questions() {
                for surface in q.surfaces() {
                    let got = kb_answer(&kb, &nlu, e, surface);
                    let want = brute_majority(&kb, e, &q.id);
                    ensure(got == want, || format!("{e} / {surface:?}: {got:?} vs {want:?}"))?;
                    checked += 1;
                }
            }
        }
        for junk in ["penguins", "", "what time is it", "zzz qqq", "tell me a story"] {
            for e in kb.lexicon().words() {
                let got = kb_answer(&kb, &nlu, e, junk);
                ensure(got == AnswerCategory::Other, || format!("{junk:?} answered {got:?}"))?;
            }
        }
    }
    Ok(format!(
        "{checked} (emotion, surface) pairs agree; unmatched questions answer other"
    ))
}

fn random_message(rng: &mut ChaCha8Rng) -> WireMessage {
    use chrono::TimeZone;
    let len = rng.gen_range(0..40);
    let text: String = (0..len)
        .map(|_| char::from_u32(rng.gen_range(0x20..0x2FFF)).unwrap_or('?'))
        .collect();
    WireMessage {
        kind: MessageType::ALL[rng.gen_range(0..6)],
        session_id: hex_id(rng),
        turn: rng.gen(),
        text,
        phase: ["intro", "agent-asks", "agent-answers", "end"][rng.gen_range(0..4)].into(),
        ts: chrono::Utc
            .timestamp_opt(rng.gen_range(0..4_000_000_000), rng.gen_range(0..1_000_000_000))
            .unwrap(),
    }
}

fn hex_id(rng: &mut ChaCha8Rng) -> String {
    (0..32)
        .map(|_| char::from_digit(rng.gen_range(0..16), 16).unwrap())
        .collect()
}

async fn protocol(dir: &std::path::Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..1000 {
        let m = random_message(&mut rng);
        let back = WireMessage::decode(&m.encode()).map_err(|e| format!("message {i}: {e}"))?;
        ensure(back == m, || format!("message {i} changed in transit"))?;
    }
    let options = ServerOptions {
        master_seed: 77,
        ..ServerOptions::default()
    };
    let live = common::start(common::fixture_kb(), Some(dir), options, PhaseOrder::AskerFirst).await;
    let mut sessions = Vec::new();
    for _ in 0..3 {
        let mut c = common::Client::connect(live.addr).await;
        common::play_scripted(&mut c, &live.kb).await;
        sessions.push(c);
    }
    let mut lines = 0;
    for c in &sessions {
        let t = Transcript::read(dir.join(format!("{}.jsonl", c.session_id))).map_err(|e| e.to_string())?;
        let sent: Vec<&str> = c
            .received
            .iter()
            .filter(|m| m.kind == MessageType::AgentUtterance)
            .map(|m| m.text.as_str())
            .collect();
        ensure(t.agent_lines() == sent, || {
            "transcript differs from what the client saw".into()
        })?;
        lines += t
            .verify_replay(Arc::clone(&live.kb), DialogConfig::default())
            .map_err(|e| e.to_string())?;
    }
    Ok(format!(
        "1000 round trips; 3 live games, {lines} agent lines reproduced by replay"
    ))
}

fn transcript_hygiene(dir: &std::path::Path) -> Outcome {
    let mut files = 0;
    let mut lines = 0;
    for entry in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        lines += check_schema(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        files += 1;
    }
    ensure(files > 0, || "no transcripts were written".into())?;
    Ok(format!("{files} transcripts, {lines} lines, only schema keys"))
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .unwrap();

    let results: Vec<(&str, Outcome)> = vec![
        ("bayes-oracle", bayes_oracle()),
        ("update-commutativity", commutativity()),
        ("ig-oracle", ig_oracle()),
        ("selfplay", selfplay_criterion()),
        ("game-rules", game_rules()),
        ("gpda-determinism", gpda()),
        ("answerer-oracle", answerer_oracle()),
        ("protocol", rt.block_on(protocol(dir.path()))),
        ("transcript-hygiene", transcript_hygiene(dir.path())),
    ];

    let mut report = String::new();
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => writeln!(report, "PASS {name}: {detail}").unwrap(),
            Err(why) => writeln!(report, "FAIL {name}: {why}").unwrap(),
        }
    }
    print!("{report}");
    let failed: Vec<&str> = results.iter().filter(|r| r.1.is_err()).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
