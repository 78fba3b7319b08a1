//! Flanders interaction analysis: category sequences, transition matrices and
//! the talk ratios derived from them.

mod label;
mod report;

use std::fmt;
use std::fs;
use std::ops::RangeInclusive;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use label::{label_utterances, CategoryLabeler, LabelError, LlmLabeler, RuleLabeler, PRAISE_MARKERS};
pub use report::{report, FiasReport, Quadrants};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FiasError {
    #[error("session `{0}` has an empty sequence")]
    EmptySequence(String),
    #[error("matrix has no tallies")]
    EmptyMatrix,
    #[error("transcript `{0}` has no utterances")]
    EmptyTranscript(String),
    #[error("category {0} is outside 1..=10")]
    InvalidCategory(u8),
    #[error("io: {0}")]
    Io(String),
    #[error("parse: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
#[repr(u8)]
pub enum FiasCategory {
    AcceptFeelings = 1,
    Praise = 2,
    AcceptIdeas = 3,
    AskQuestions = 4,
    Lecturing = 5,
    GivingDirection = 6,
    Criticizing = 7,
    StudentResponse = 8,
    StudentInitiation = 9,
    Silence = 10,
}

impl FiasCategory {
    pub const ALL: [FiasCategory; 10] = [
        FiasCategory::AcceptFeelings,
        FiasCategory::Praise,
        FiasCategory::AcceptIdeas,
        FiasCategory::AskQuestions,
        FiasCategory::Lecturing,
        FiasCategory::GivingDirection,
        FiasCategory::Criticizing,
        FiasCategory::StudentResponse,
        FiasCategory::StudentInitiation,
        FiasCategory::Silence,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            FiasCategory::AcceptFeelings => "Accept Feelings",
            FiasCategory::Praise => "Praises or Encourages",
            FiasCategory::AcceptIdeas => "Accept Ideas",
            FiasCategory::AskQuestions => "Ask Questions",
            FiasCategory::Lecturing => "Lecturing",
            FiasCategory::GivingDirection => "Giving Direction",
            FiasCategory::Criticizing => "Criticizing",
            FiasCategory::StudentResponse => "Student Response",
            FiasCategory::StudentInitiation => "Student Initiation",
            FiasCategory::Silence => "Silence or Confusion",
        }
    }

    pub fn is_teacher(self) -> bool {
        self.code() <= 7
    }

    pub fn is_student(self) -> bool {
        matches!(self.code(), 8 | 9)
    }

    fn index(self) -> usize {
        self.code() as usize - 1
    }
}

impl TryFrom<u8> for FiasCategory {
    type Error = FiasError;

    fn try_from(code: u8) -> Result<Self, Self::Error> {
        match code {
            1..=10 => Ok(FiasCategory::ALL[code as usize - 1]),
            other => Err(FiasError::InvalidCategory(other)),
        }
    }
}

impl From<FiasCategory> for u8 {
    fn from(c: FiasCategory) -> u8 {
        c.code()
    }
}

impl fmt::Display for FiasCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}. {}", self.code(), self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedSession {
    pub session_id: String,
    pub sequence: Vec<FiasCategory>,
    /// Positions whose label was defaulted after a labeler failure.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flagged: Vec<usize>,
}

impl EncodedSession {
    pub fn new(session_id: impl Into<String>, sequence: Vec<FiasCategory>) -> Self {
        EncodedSession {
            session_id: session_id.into(),
            sequence,
            flagged: Vec::new(),
        }
    }

    pub fn from_codes(session_id: impl Into<String>, codes: &[u8]) -> Result<Self, FiasError> {
        let sequence = codes.iter().map(|c| FiasCategory::try_from(*c)).collect::<Result<_, _>>()?;
        Ok(EncodedSession::new(session_id, sequence))
    }
}

/// Reads encoded sessions, one JSON object per line.
pub fn load_encoded(path: impl AsRef<Path>) -> Result<Vec<EncodedSession>, FiasError> {
    let text = fs::read_to_string(path).map_err(|e| FiasError::Io(e.to_string()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| FiasError::Parse(format!("line {}: {e}", n + 1))))
        .collect()
}

pub fn encoded_to_jsonl(sessions: &[EncodedSession]) -> String {
    sessions
        .iter()
        .map(|s| serde_json::to_string(s).expect("encoded session serializes") + "\n")
        .collect()
}

/// Transition tallies: `cells[x-1][y-1]` counts steps from category x to y.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiasMatrix {
    pub cells: [[u64; 10]; 10],
}

impl FiasMatrix {
    pub fn zero() -> Self {
        FiasMatrix::default()
    }

    pub fn get(&self, from: FiasCategory, to: FiasCategory) -> u64 {
        self.cells[from.index()][to.index()]
    }

    /// Cell by 1-based category codes.
    pub fn at(&self, from: u8, to: u8) -> u64 {
        self.cells[from as usize - 1][to as usize - 1]
    }

    pub fn increment(&mut self, from: FiasCategory, to: FiasCategory) {
        self.cells[from.index()][to.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    pub fn row_sum(&self, category: FiasCategory) -> u64 {
        self.cells[category.index()].iter().sum()
    }

    pub fn col_sum(&self, category: FiasCategory) -> u64 {
        self.cells.iter().map(|row| row[category.index()]).sum()
    }

    /// Row sums for every category, indexed by code - 1.
    pub fn tallies(&self) -> [u64; 10] {
        FiasCategory::ALL.map(|c| self.row_sum(c))
    }

    /// Sum of cells with `from` in `rows` and `to` in `cols` (1-based, inclusive).
    pub fn block_sum(&self, rows: RangeInclusive<u8>, cols: RangeInclusive<u8>) -> u64 {
        let mut sum = 0;
        for x in rows {
            for y in cols.clone() {
                sum += self.at(x, y);
            }
        }
        sum
    }
}

impl std::ops::Add for FiasMatrix {
    type Output = FiasMatrix;

    fn add(mut self, rhs: FiasMatrix) -> FiasMatrix {
        for (row, other) in self.cells.iter_mut().zip(rhs.cells.iter()) {
            for (a, b) in row.iter_mut().zip(other) {
                *a += b;
            }
        }
        self
    }
}

/// Pads the sequence with silence on both ends and tallies each adjacent pair.
pub fn build_matrix(encoded: &EncodedSession) -> Result<FiasMatrix, FiasError> {
    if encoded.sequence.is_empty() {
        return Err(FiasError::EmptySequence(encoded.session_id.clone()));
    }
    let mut m = FiasMatrix::zero();
    let mut prev = FiasCategory::Silence;
    for &c in encoded.sequence.iter().chain([&FiasCategory::Silence]) {
        m.increment(prev, c);
        prev = c;
    }
    Ok(m)
}

pub fn sum_matrices<'a>(matrices: impl IntoIterator<Item = &'a FiasMatrix>) -> FiasMatrix {
    matrices.into_iter().fold(FiasMatrix::zero(), |acc, m| acc + *m)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricFlags {
    /// No direct-influence tallies, so IDR has no value.
    pub idr_undefined: bool,
    /// No student tallies; SIR reported as 0.
    pub sir_degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiasMetrics {
    /// Row-sum tallies per category, indexed by code - 1.
    pub tallies: [u64; 10],
    pub tt: f64,
    pub st: f64,
    pub silence: f64,
    /// Teacher share of non-silence tallies; `None` without any talk.
    pub tt_excluding_silence: Option<f64>,
    pub st_excluding_silence: Option<f64>,
    pub idr: Option<f64>,
    pub sir: f64,
    pub flags: MetricFlags,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn compute_metrics(matrix: &FiasMatrix) -> Result<FiasMetrics, FiasError> {
    let t = matrix.tallies();
    let sum = |r: RangeInclusive<usize>| -> u64 { t[r.start() - 1..*r.end()].iter().sum() };
    let total = sum(1..=10);
    if total == 0 {
        return Err(FiasError::EmptyMatrix);
    }
    let teacher = sum(1..=7);
    let student = sum(8..=9);
    let total_f = total as f64;
    let idr = ratio(sum(1..=4), sum(5..=7));
    let sir = ratio(t[8], student);
    Ok(FiasMetrics {
        tallies: t,
        tt: teacher as f64 / total_f,
        st: student as f64 / total_f,
        silence: t[9] as f64 / total_f,
        tt_excluding_silence: ratio(teacher, teacher + student),
        st_excluding_silence: ratio(student, teacher + student),
        idr,
        sir: sir.unwrap_or(0.0),
        flags: MetricFlags {
            idr_undefined: idr.is_none(),
            sir_degenerate: sir.is_none(),
        },
    })
}

#[cfg(test)]
mod tests;
