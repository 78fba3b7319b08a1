//! Python bindings: course loading, headless runs, interaction analysis and
//! survey/quiz evaluation. Structured results cross over as plain dicts and
//! lists.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::de::DeserializeOwned;
use serde::Serialize;

use classroom_core::backend::{ChatBackend, PolicyBackend, ScriptedBackend};
use classroom_core::evaluation::{self, QuizResult, SurveyResponse};
use classroom_core::fias::{self, EncodedSession, FiasMatrix, RuleLabeler};
use classroom_core::session::{run_session_with, ReplayEntry, ReplaySource, RunOptions};
use classroom_core::store::{SessionFilter, TranscriptStore};
use classroom_core::{apply_ablation, default_roster, load_course, Ablation, Course, SessionConfig, SessionRecord};

pyo3::create_exception!(classroom, ClassroomError, PyException);

fn fail(e: impl std::fmt::Display) -> PyErr {
    ClassroomError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(fail)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn ablation(name: &str) -> PyResult<Ablation> {
    name.parse().map_err(|e: classroom_core::roster::RosterError| PyValueError::new_err(e.to_string()))
}

/// A course: ordered slide pages with their teaching scripts.
#[pyclass(name = "Course", module = "classroom", frozen)]
struct PyCourse(Arc<Course>);

#[pymethods]
impl PyCourse {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyCourse(Arc::new(load_course(path).map_err(fail)?)))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyCourse(Arc::new(Course::from_json(text).map_err(fail)?)))
    }

    #[getter]
    fn id(&self) -> &str {
        &self.0.id
    }

    #[getter]
    fn title(&self) -> &str {
        &self.0.title
    }

    #[getter]
    fn page_count(&self) -> usize {
        self.0.page_count()
    }

    /// Page `index` (1-based) as a dict.
    fn page(&self, py: Python<'_>, index: usize) -> PyResult<Py<PyAny>> {
        let page = self
            .0
            .page(index)
            .ok_or_else(|| PyValueError::new_err(format!("no page {index}")))?;
        to_py(py, page)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    fn __len__(&self) -> usize {
        self.0.page_count()
    }

    fn __repr__(&self) -> String {
        format!("Course(id={:?}, pages={})", self.0.id, self.0.page_count())
    }
}

/// The persisted transcript of one class.
#[pyclass(name = "SessionRecord", module = "classroom", frozen)]
struct PyRecord(SessionRecord);

#[pymethods]
impl PyRecord {
    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        Ok(PyRecord(SessionRecord::from_jsonl(text).map_err(fail)?))
    }

    fn to_jsonl(&self) -> String {
        self.0.to_jsonl()
    }

    #[getter]
    fn session_id(&self) -> &str {
        self.0.session_id()
    }

    #[getter]
    fn course_id(&self) -> &str {
        &self.0.header.course_id
    }

    #[getter]
    fn setting(&self) -> &'static str {
        self.0.header.setting.as_str()
    }

    #[getter]
    fn phase(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0.phase())
    }

    #[getter]
    fn is_closed(&self) -> bool {
        self.0.is_closed()
    }

    #[getter]
    fn events(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0.events)
    }

    #[getter]
    fn utterances(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0.utterances())
    }

    #[getter]
    fn survey(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0.survey)
    }

    #[getter]
    fn quiz(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0.quiz)
    }

    #[getter]
    fn fault(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0.fault)
    }

    /// One line per utterance: `[seq] pN speaker: text`.
    fn transcript(&self) -> String {
        self.0.to_string()
    }

    fn __len__(&self) -> usize {
        self.0.events.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "SessionRecord(id={:?}, setting={}, events={})",
            self.0.session_id(),
            self.0.header.setting,
            self.0.events.len()
        )
    }
}

/// 10x10 transition counts, row = preceding category.
#[pyclass(name = "FiasMatrix", module = "classroom", frozen)]
struct PyMatrix(FiasMatrix);

#[pymethods]
impl PyMatrix {
    #[staticmethod]
    fn zero() -> Self {
        PyMatrix(FiasMatrix::zero())
    }

    #[getter]
    fn cells(&self) -> Vec<Vec<u64>> {
        self.0.cells.iter().map(|r| r.to_vec()).collect()
    }

    #[getter]
    fn total(&self) -> u64 {
        self.0.total()
    }

    #[getter]
    fn tallies(&self) -> Vec<u64> {
        self.0.tallies().to_vec()
    }

    /// Count for the transition `src -> dst`, both in 1..=10.
    fn get(&self, src: u8, dst: u8) -> PyResult<u64> {
        if !(1..=10).contains(&src) || !(1..=10).contains(&dst) {
            return Err(PyValueError::new_err("categories are 1..=10"));
        }
        Ok(self.0.at(src, dst))
    }

    fn metrics(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &fias::compute_metrics(&self.0).map_err(fail)?)
    }

    fn report(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let metrics = fias::compute_metrics(&self.0).map_err(fail)?;
        to_py(py, &fias::report(&self.0, &metrics))
    }

    fn __add__(&self, other: &Self) -> Self {
        PyMatrix(self.0 + other.0)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("FiasMatrix(total={})", self.0.total())
    }
}

#[pyfunction]
fn build_matrix(codes: Vec<u8>) -> PyResult<PyMatrix> {
    let encoded = EncodedSession::from_codes("python", &codes).map_err(fail)?;
    Ok(PyMatrix(fias::build_matrix(&encoded).map_err(fail)?))
}

#[pyfunction]
fn sum_matrices(matrices: Vec<PyRef<'_, PyMatrix>>) -> PyMatrix {
    PyMatrix(fias::sum_matrices(matrices.iter().map(|m| &m.0)))
}

#[pyfunction]
fn compute_metrics(py: Python<'_>, matrix: &PyMatrix) -> PyResult<Py<PyAny>> {
    matrix.metrics(py)
}

/// Rule-based category codes for a record; silence is inserted for gaps of
/// at least `silence_gap_s` (default: the record's idle window).
#[pyfunction]
#[pyo3(signature = (record, silence_gap_s=None))]
fn label_session(record: &PyRecord, silence_gap_s: Option<f64>) -> PyResult<Vec<u8>> {
    let labeler = match silence_gap_s {
        Some(s) if s >= 0.0 => RuleLabeler::with_silence_gap(std::time::Duration::from_secs_f64(s)),
        Some(_) => return Err(PyValueError::new_err("silence_gap_s must be >= 0")),
        None => RuleLabeler::for_record(&record.0),
    };
    let enc = fias::label_utterances(&record.0, &labeler).map_err(fail)?;
    Ok(enc.sequence.iter().map(|c| c.code()).collect())
}

/// Labels every record and reports on the summed matrix.
#[pyfunction]
fn fias_report(py: Python<'_>, records: Vec<PyRef<'_, PyRecord>>) -> PyResult<Py<PyAny>> {
    let mut matrices = Vec::with_capacity(records.len());
    for r in &records {
        let enc = fias::label_utterances(&r.0, &RuleLabeler::for_record(&r.0)).map_err(fail)?;
        matrices.push(fias::build_matrix(&enc).map_err(fail)?);
    }
    let total = fias::sum_matrices(&matrices);
    let metrics = fias::compute_metrics(&total).map_err(fail)?;
    to_py(py, &fias::report(&total, &metrics))
}

#[pyfunction]
#[pyo3(signature = (ablation="full"))]
fn roster(py: Python<'_>, ablation: &str) -> PyResult<Py<PyAny>> {
    to_py(py, &apply_ablation(&default_roster(), self::ablation(ablation)?))
}

/// Runs a class with no waiting between actions and returns its record.
///
/// `fixture` is a scripted-backend fixture as JSON text; without one an
/// offline policy drives the class. `replay` is a list of
/// `(after_seq, text)` participant messages.
#[pyfunction]
#[pyo3(signature = (course, ablation="full", fixture=None, replay=None, closing_windows=1, interactions_per_page=2, session_id=None))]
#[allow(clippy::too_many_arguments)]
fn run_headless(
    py: Python<'_>,
    course: &PyCourse,
    ablation: &str,
    fixture: Option<&str>,
    replay: Option<Vec<(u64, String)>>,
    closing_windows: u32,
    interactions_per_page: usize,
    session_id: Option<String>,
) -> PyResult<PyRecord> {
    let roster = apply_ablation(&default_roster(), self::ablation(ablation)?);
    let backend: Arc<dyn ChatBackend> = match fixture {
        Some(text) => Arc::new(ScriptedBackend::from_json(text).map_err(fail)?),
        None => Arc::new(PolicyBackend::new(interactions_per_page)),
    };
    let config = SessionConfig {
        closing_windows,
        ..SessionConfig::headless()
    };
    let mut source = ReplaySource::new(
        replay
            .unwrap_or_default()
            .into_iter()
            .map(|(after_seq, text)| ReplayEntry { after_seq, text }),
    );
    let course = course.0.clone();
    let mut options = RunOptions::for_course(&course, &roster);
    if let Some(id) = session_id {
        options.session_id = id;
    }
    let record = py
        .detach(move || run_session_with(course, roster, config, &mut source, backend, options))
        .map_err(fail)?;
    Ok(PyRecord(record))
}

#[pyfunction]
fn load_session(store_dir: &str, session_id: &str) -> PyResult<PyRecord> {
    let store = TranscriptStore::open(store_dir).map_err(fail)?;
    Ok(PyRecord(store.load_session(session_id).map_err(fail)?))
}

#[pyfunction]
fn list_sessions(py: Python<'_>, store_dir: &str) -> PyResult<Py<PyAny>> {
    let store = TranscriptStore::open(store_dir).map_err(fail)?;
    to_py(py, &store.list_sessions(&SessionFilter::default()).map_err(fail)?)
}

/// Exact-set scoring. `answers` and `key` map question ids to selected labels.
#[pyfunction]
#[pyo3(signature = (answers, key, participant_id="participant"))]
fn score_quiz(
    py: Python<'_>,
    answers: BTreeMap<String, Vec<String>>,
    key: BTreeMap<String, Vec<String>>,
    participant_id: &str,
) -> PyResult<Py<PyAny>> {
    let sets = |m: BTreeMap<String, Vec<String>>| -> BTreeMap<String, BTreeSet<String>> {
        m.into_iter().map(|(q, v)| (q, v.into_iter().collect())).collect()
    };
    let (answers, key) = (sets(answers), sets(key));
    let result = evaluation::score_quiz(participant_id, &answers, &key).map_err(fail)?;
    to_py(py, &result)
}

/// Participants whose score is strictly above `threshold`.
#[pyfunction]
#[pyo3(signature = (scores, threshold=evaluation::DEFAULT_GATE_THRESHOLD))]
fn gate_participants(scores: BTreeMap<String, f64>, threshold: f64) -> Vec<String> {
    let results: Vec<QuizResult> = scores
        .into_iter()
        .map(|(participant_id, score)| QuizResult {
            participant_id,
            answers: BTreeMap::new(),
            correct: BTreeMap::new(),
            score,
        })
        .collect();
    evaluation::gate_participants(&results, threshold).into_iter().collect()
}

/// Mean and standard error per presence over `responses` (dicts with
/// participant_id, cognitive, teaching, social) from `included` participants.
#[pyfunction]
fn aggregate_survey(py: Python<'_>, responses: &Bound<'_, PyAny>, included: Vec<String>) -> PyResult<Py<PyAny>> {
    let responses: Vec<SurveyResponse> = from_py(responses)?;
    let included: HashSet<String> = included.into_iter().collect();
    to_py(py, &evaluation::aggregate_survey(&responses, &included).map_err(fail)?)
}

#[pyfunction]
fn word_count(text: &str) -> usize {
    evaluation::word_count(text)
}

/// Average words per utterance by role, grouped by course and setting.
#[pyfunction]
fn length_table(py: Python<'_>, records: Vec<PyRef<'_, PyRecord>>) -> PyResult<Py<PyAny>> {
    let records: Vec<SessionRecord> = records.iter().map(|r| r.0.clone()).collect();
    to_py(py, &evaluation::word_count_stats(&records))
}

#[pymodule]
fn classroom(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ClassroomError", m.py().get_type::<ClassroomError>())?;
    m.add_class::<PyCourse>()?;
    m.add_class::<PyRecord>()?;
    m.add_class::<PyMatrix>()?;
    m.add_function(wrap_pyfunction!(build_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(sum_matrices, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(label_session, m)?)?;
    m.add_function(wrap_pyfunction!(fias_report, m)?)?;
    m.add_function(wrap_pyfunction!(roster, m)?)?;
    m.add_function(wrap_pyfunction!(run_headless, m)?)?;
    m.add_function(wrap_pyfunction!(load_session, m)?)?;
    m.add_function(wrap_pyfunction!(list_sessions, m)?)?;
    m.add_function(wrap_pyfunction!(score_quiz, m)?)?;
    m.add_function(wrap_pyfunction!(gate_participants, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_survey, m)?)?;
    m.add_function(wrap_pyfunction!(word_count, m)?)?;
    m.add_function(wrap_pyfunction!(length_table, m)?)?;
    Ok(())
}
