//! Community-of-Inquiry survey: three presences rated 0, 1 or 2.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::EvalError;

const SURVEY_DEFINITION: &str = include_str!("../../data/coi_survey.json");

/// Questions shown when the class closes, in dimension order.
pub const SURVEY_QUESTIONS: [&str; 3] = [
    "Cognitive Presence: Does the platform help students to understand concepts and master the corresponding knowledge?",
    "Teaching Presence: Does the class as a whole serve a specific instructional goal, aligning with the course design and direction?",
    "Social Presence: Can the responses create a credible and engaging interactive environment in the classroom, encouraging students to participate in interactive learning?",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Presence {
    Cognitive,
    Teaching,
    Social,
}

impl Presence {
    pub const ALL: [Presence; 3] = [Presence::Cognitive, Presence::Teaching, Presence::Social];
}

impl fmt::Display for Presence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Presence::Cognitive => "cognitive",
            Presence::Teaching => "teaching",
            Presence::Social => "social",
        })
    }
}

/// Survey instrument with the rating guideline text for each score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyDefinition {
    pub preamble: String,
    pub scale: Vec<u8>,
    pub dimensions: Vec<SurveyDimension>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyDimension {
    pub dimension: Presence,
    pub title: String,
    pub question: String,
    pub guidelines: BTreeMap<String, String>,
}

pub fn survey_definition() -> SurveyDefinition {
    serde_json::from_str(SURVEY_DEFINITION).expect("bundled survey parses")
}

#[derive(Deserialize)]
struct RawResponse {
    participant_id: String,
    cognitive: u8,
    teaching: u8,
    social: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawResponse")]
pub struct SurveyResponse {
    pub participant_id: String,
    pub cognitive: u8,
    pub teaching: u8,
    pub social: u8,
}

impl TryFrom<RawResponse> for SurveyResponse {
    type Error = EvalError;

    fn try_from(r: RawResponse) -> Result<Self, Self::Error> {
        SurveyResponse::new(r.participant_id, r.cognitive, r.teaching, r.social)
    }
}

impl SurveyResponse {
    pub fn new(participant_id: impl Into<String>, cognitive: u8, teaching: u8, social: u8) -> Result<Self, EvalError> {
        for (d, v) in [("cognitive", cognitive), ("teaching", teaching), ("social", social)] {
            if v > 2 {
                return Err(EvalError::RatingOutOfRange {
                    dimension: d.into(),
                    value: v,
                });
            }
        }
        Ok(SurveyResponse {
            participant_id: participant_id.into(),
            cognitive,
            teaching,
            social,
        })
    }

    pub fn rating(&self, dimension: Presence) -> u8 {
        match dimension {
            Presence::Cognitive => self.cognitive,
            Presence::Teaching => self.teaching,
            Presence::Social => self.social,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresenceSummary {
    pub dimension: Presence,
    pub mean: f64,
    /// Standard error of the mean, from the sample (n - 1) standard deviation.
    pub stderr: f64,
    pub n: usize,
}

/// Mean and standard error of `values`. A single value has stderr 0.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-presence mean and standard error over the included participants.
pub fn aggregate_survey(
    responses: &[SurveyResponse],
    included: &HashSet<String>,
) -> Result<Vec<PresenceSummary>, EvalError> {
    let kept: Vec<&SurveyResponse> = responses
        .iter()
        .filter(|r| included.contains(&r.participant_id))
        .collect();
    if kept.is_empty() {
        return Err(EvalError::NoResponses);
    }
    Ok(Presence::ALL
        .into_iter()
        .map(|dimension| {
            let values: Vec<f64> = kept.iter().map(|r| f64::from(r.rating(dimension))).collect();
            let (mean, stderr) = mean_stderr(&values);
            PresenceSummary {
                dimension,
                mean,
                stderr,
                n: values.len(),
            }
        })
        .collect())
}
