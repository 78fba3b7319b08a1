//! Post-class evaluation: CoI survey, quiz gate and output-length statistics.

pub mod lengths;
pub mod quiz;
pub mod survey;

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lengths::{word_count, word_count_stats, LengthRow, LengthTable, RoleColumn, WordTally};
pub use quiz::{
    gate_participants, score_quiz, QuizAnswers, QuizDefinition, QuizQuestion, QuizResult, DEFAULT_GATE_THRESHOLD,
};
pub use survey::{
    aggregate_survey, mean_stderr, survey_definition, Presence, PresenceSummary, SurveyDefinition, SurveyResponse,
    SURVEY_QUESTIONS,
};

use crate::roster::Ablation;
use crate::store::SessionRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{dimension} rating {value} is outside 0..=2")]
    RatingOutOfRange { dimension: String, value: u8 },
    #[error("no included survey responses")]
    NoResponses,
    #[error("unknown question `{0}`")]
    UnknownQuestion(String),
    #[error("no answer for question `{0}`")]
    MissingAnswer(String),
    #[error("io: {0}")]
    Io(String),
    #[error("parse: {0}")]
    Parse(String),
}

/// Presence summaries for one (course, setting) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoiGroup {
    pub course_id: String,
    pub setting: Ablation,
    pub respondents: usize,
    pub included: usize,
    /// Empty when every respondent was gated out.
    pub summaries: Vec<PresenceSummary>,
}

struct Respondent<'a> {
    record: &'a SessionRecord,
    survey: &'a SurveyResponse,
    included: bool,
}

fn respondents(records: &[SessionRecord], threshold: f64) -> Vec<Respondent<'_>> {
    let quizzes: Vec<QuizResult> = records.iter().filter_map(|r| r.quiz.clone()).collect();
    let passed = gate_participants(&quizzes, threshold);
    records
        .iter()
        .filter_map(|record| {
            let survey = record.survey.as_ref()?;
            // A respondent without a quiz cannot pass the gate.
            let included = record.quiz.is_some() && passed.contains(&survey.participant_id);
            Some(Respondent {
                record,
                survey,
                included,
            })
        })
        .collect()
}

/// Gates respondents on their quiz and aggregates the survey per course and setting.
pub fn coi_report(records: &[SessionRecord], threshold: f64) -> Vec<CoiGroup> {
    let mut groups: BTreeMap<(String, Ablation), Vec<Respondent<'_>>> = BTreeMap::new();
    for r in respondents(records, threshold) {
        groups
            .entry((r.record.header.course_id.clone(), r.record.header.setting))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((course_id, setting), members)| {
            let responses: Vec<SurveyResponse> = members.iter().map(|m| m.survey.clone()).collect();
            let included: HashSet<String> = members
                .iter()
                .filter(|m| m.included)
                .map(|m| m.survey.participant_id.clone())
                .collect();
            CoiGroup {
                course_id,
                setting,
                respondents: members.len(),
                included: included.len(),
                summaries: aggregate_survey(&responses, &included).unwrap_or_default(),
            }
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct ResultRow<'a> {
    participant: &'a str,
    setting: &'static str,
    course: &'a str,
    dimension: Presence,
    rating: u8,
    quiz_score: Option<f64>,
    gated: bool,
}

/// One CSV row per respondent and presence; `gated` marks excluded respondents.
pub fn export_results_csv<W: Write>(records: &[SessionRecord], threshold: f64, out: W) -> Result<(), EvalError> {
    // Header written by hand so an empty export still has one.
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["participant", "setting", "course", "dimension", "rating", "quiz_score", "gated"])
        .map_err(|e| EvalError::Io(e.to_string()))?;
    for r in respondents(records, threshold) {
        for dimension in Presence::ALL {
            w.serialize(ResultRow {
                participant: &r.survey.participant_id,
                setting: r.record.header.setting.as_str(),
                course: &r.record.header.course_id,
                dimension,
                rating: r.survey.rating(dimension),
                quiz_score: r.record.quiz.as_ref().map(|q| q.score),
                gated: !r.included,
            })
            .map_err(|e| EvalError::Io(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| EvalError::Io(e.to_string()))
}
