//! Python bindings for the emo20q engine.

use std::sync::Arc;

use emo20q_core::asker::{self, AskerAction, AskerConfig, AskerOutcome, AskerState};
use emo20q_core::dialog::{self, DialogConfig, DialogEvent, PhaseOrder};
use emo20q_core::kb::{self, QaKnowledgeBase};
use emo20q_core::posterior::Posterior as CorePosterior;
use emo20q_core::{selfplay, AnswerCategory};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn category(s: &str) -> PyResult<AnswerCategory> {
    s.parse().map_err(value_err)
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "KnowledgeBase", module = "emo20q", frozen)]
struct PyKnowledgeBase {
    inner: Arc<QaKnowledgeBase>,
}

#[pymethods]
impl PyKnowledgeBase {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = kb::load_kb(path).map_err(value_err)?;
        Ok(Self { inner: Arc::new(inner) })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = QaKnowledgeBase::from_json_str(text).map_err(value_err)?;
        Ok(Self { inner: Arc::new(inner) })
    }

    /// The bundled 48-emotion knowledge base.
    #[staticmethod]
    fn seed() -> Self {
        Self {
            inner: Arc::new(kb::seed_kb()),
        }
    }

    /// The bundled 32-emotion knowledge base with perfectly separating questions.
    #[staticmethod]
    fn separable() -> Self {
        Self {
            inner: Arc::new(kb::separable_kb()),
        }
    }

    #[getter]
    fn emotions(&self) -> Vec<String> {
        self.inner.lexicon().words().to_vec()
    }

    #[getter]
    fn question_ids(&self) -> Vec<String> {
        self.inner.questions().iter().map(|q| q.id.clone()).collect()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    fn counts(&self, emotion: &str, question: &str) -> PyResult<(u64, u64, u64)> {
        let c = self.inner.counts(emotion, question).map_err(value_err)?;
        Ok((c[0], c[1], c[2]))
    }

    /// Smoothed P(answer | emotion, question).
    fn conditional(&self, emotion: &str, question: &str, answer: &str) -> PyResult<f64> {
        self.inner
            .answer_conditional(emotion, question, category(answer)?)
            .map_err(value_err)
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let text = serde_json::to_string(&self.inner.stats()).map_err(value_err)?;
        json_to_py(py, &text)
    }

    fn __len__(&self) -> usize {
        self.inner.lexicon().len()
    }

    fn __repr__(&self) -> String {
        format!(
            "KnowledgeBase(emotions={}, questions={}, alpha={})",
            self.inner.lexicon().len(),
            self.inner.questions().len(),
            self.inner.alpha()
        )
    }
}

#[pyclass(name = "Posterior", module = "emo20q", frozen)]
struct PyPosterior {
    inner: CorePosterior,
}

#[pymethods]
impl PyPosterior {
    #[staticmethod]
    fn uniform(kb: &PyKnowledgeBase) -> Self {
        Self {
            inner: CorePosterior::uniform(kb.inner.lexicon()),
        }
    }

    fn update(&self, kb: &PyKnowledgeBase, question: &str, answer: &str) -> PyResult<Self> {
        let inner = self
            .inner
            .update(&kb.inner, question, category(answer)?)
            .map_err(value_err)?;
        Ok(Self { inner })
    }

    fn zero_out(&self, word: &str) -> PyResult<Self> {
        let inner = self.inner.zero_out(word).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Entropy in bits.
    fn entropy(&self) -> f64 {
        self.inner.entropy()
    }

    fn argmax(&self) -> Option<(String, f64)> {
        self.inner.argmax().map(|(w, p)| (w.to_string(), p))
    }

    fn prob(&self, word: &str) -> Option<f64> {
        self.inner.prob(word)
    }

    fn to_dict(&self) -> Vec<(String, f64)> {
        self.inner.iter().map(|(w, p)| (w.to_string(), p)).collect()
    }
}

#[pyclass(name = "Nlu", module = "emo20q", frozen)]
struct PyNlu {
    inner: Arc<emo20q_core::Nlu>,
}

#[pymethods]
impl PyNlu {
    #[new]
    #[pyo3(signature = (threshold = None))]
    fn new(threshold: Option<f64>) -> PyResult<Self> {
        let mut nlu = emo20q_core::Nlu::default();
        if let Some(t) = threshold {
            nlu = nlu.with_threshold(t).map_err(value_err)?;
        }
        Ok(Self { inner: Arc::new(nlu) })
    }

    fn normalize(&self, text: &str) -> Vec<String> {
        self.inner.normalize_text(text)
    }

    /// "yes", "no" or "other".
    fn bucket_answer(&self, text: &str) -> &'static str {
        self.inner.bucket_answer(text).as_str()
    }

    /// (question id or None, score).
    fn match_question(&self, text: &str, kb: &PyKnowledgeBase) -> (Option<String>, f64) {
        let m = self.inner.match_question(text, &kb.inner);
        (m.question_id, m.score)
    }

    fn detect_guess(&self, text: &str, kb: &PyKnowledgeBase) -> Option<String> {
        self.inner.detect_guess(text, kb.inner.lexicon())
    }

    fn kb_answer(&self, kb: &PyKnowledgeBase, emotion: &str, question: &str) -> &'static str {
        emo20q_core::answerer::kb_answer(&kb.inner, &self.inner, emotion, question).as_str()
    }
}

/// The question-asking agent, driven one action at a time.
#[pyclass(name = "Asker", module = "emo20q")]
struct PyAsker {
    kb: Arc<QaKnowledgeBase>,
    config: AskerConfig,
    state: AskerState,
    pending: Option<AskerAction>,
}

#[pymethods]
impl PyAsker {
    #[new]
    fn new(kb: &PyKnowledgeBase) -> Self {
        Self {
            state: AskerState::new(&kb.inner),
            kb: Arc::clone(&kb.inner),
            config: AskerConfig::default(),
            pending: None,
        }
    }

    /// ("ask", question_id), ("guess", word) or ("concede", None).
    fn next_action(&mut self) -> (&'static str, Option<String>) {
        let action = asker::decide_action(&self.state, &self.kb, &self.config);
        self.pending = Some(action.clone());
        match action {
            AskerAction::AskQuestion(q) => ("ask", Some(q)),
            AskerAction::MakeGuess(w) => ("guess", Some(w)),
            AskerAction::Concede => ("concede", None),
        }
    }

    /// Records the answer ("yes", "no", "other") to the last action.
    fn observe(&mut self, answer: &str) -> PyResult<()> {
        let action = self
            .pending
            .take()
            .ok_or_else(|| PyValueError::new_err("call next_action() first"))?;
        let a = category(answer)?;
        self.state = asker::observe_category(&self.state, &self.kb, &action, a, "", answer);
        Ok(())
    }

    fn expected_information_gain(&self, question: &str) -> PyResult<f64> {
        asker::expected_information_gain(&self.state.posterior, &self.kb, question).map_err(value_err)
    }

    #[getter]
    fn turns_used(&self) -> u32 {
        self.state.turns_used
    }

    #[getter]
    fn finished(&self) -> bool {
        self.state.is_finished()
    }

    /// "won", "conceded" or None while the game is running.
    #[getter]
    fn outcome(&self) -> Option<&'static str> {
        self.state.outcome.map(|o| match o {
            AskerOutcome::Won => "won",
            AskerOutcome::Conceded => "conceded",
        })
    }

    #[getter]
    fn posterior(&self) -> PyPosterior {
        PyPosterior {
            inner: self.state.posterior.clone(),
        }
    }
}

/// A dialog session. `step` advances it in place and returns the agent's lines.
#[pyclass(name = "DialogMachine", module = "emo20q")]
struct PyDialogMachine {
    inner: dialog::DialogMachine,
}

#[pymethods]
impl PyDialogMachine {
    #[new]
    #[pyo3(signature = (kb, seed = 0, phase_order = "asker-first"))]
    fn new(kb: &PyKnowledgeBase, seed: u64, phase_order: &str) -> PyResult<Self> {
        let config = DialogConfig {
            phase_order: phase_order.parse::<PhaseOrder>().map_err(value_err)?,
            ..DialogConfig::default()
        };
        Ok(Self {
            inner: dialog::new_machine(Arc::clone(&kb.inner), seed, config),
        })
    }

    /// `event` is one of "session_start", "user_utterance", "timeout", "session_end".
    #[pyo3(signature = (event, text = None))]
    fn step(&mut self, event: &str, text: Option<String>) -> PyResult<Vec<String>> {
        let ev = match event {
            "session_start" => DialogEvent::SessionStart,
            "user_utterance" => DialogEvent::UserUtterance(text.unwrap_or_default()),
            "timeout" => DialogEvent::Timeout,
            "session_end" => DialogEvent::SessionEnd,
            other => return Err(PyValueError::new_err(format!("unknown event {other:?}"))),
        };
        let (next, out) = self.inner.step(&ev).map_err(value_err)?;
        self.inner = next;
        Ok(out)
    }

    fn say(&mut self, text: String) -> PyResult<Vec<String>> {
        self.step("user_utterance", Some(text))
    }

    #[getter]
    fn state(&self) -> &'static str {
        self.inner.state().as_str()
    }

    #[getter]
    fn phase(&self) -> &'static str {
        self.inner.phase_label()
    }

    #[getter]
    fn is_over(&self) -> bool {
        self.inner.is_over()
    }

    #[getter]
    fn stack_depth(&self) -> usize {
        self.inner.stack().len()
    }

    #[getter]
    fn asker_turns(&self) -> u32 {
        self.inner.asker().turns_used
    }

    #[getter]
    fn answerer_turns(&self) -> u32 {
        self.inner.answerer().turns_used
    }
}

/// Agent-vs-agent games; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (kb, games = 100, noise = 0.0, seed = 0))]
fn run_selfplay<'py>(
    py: Python<'py>,
    kb: &PyKnowledgeBase,
    games: u32,
    noise: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let report = selfplay::run_selfplay(&kb.inner, games, noise, seed).map_err(value_err)?;
    json_to_py(py, &report.to_json())
}

#[pyfunction]
fn derive_seed(master: u64, counter: u64) -> u64 {
    emo20q_core::derive_seed(master, counter)
}

#[pymodule]
fn emo20q(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKnowledgeBase>()?;
    m.add_class::<PyPosterior>()?;
    m.add_class::<PyNlu>()?;
    m.add_class::<PyAsker>()?;
    m.add_class::<PyDialogMachine>()?;
    m.add_function(wrap_pyfunction!(run_selfplay, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    m.add("MAX_TURNS", emo20q_core::MAX_TURNS)?;
    Ok(())
}
