//! Append-only session transcripts: one JSONL file per session plus an index.

mod dir;

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dir::{Durability, SessionFilter, SessionSummary, SessionWriter, TranscriptStore};

use crate::evaluation::{QuizResult, SurveyResponse};
use crate::event::{ts_millis, SessionEvent, Utterance};
use crate::roster::{Ablation, Roster};
use crate::session::{Phase, SessionConfig};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("session `{0}` already exists")]
    Exists(String),
    #[error("invalid session id `{0}`")]
    InvalidId(String),
    #[error("duplicate seq {0}")]
    DuplicateSeq(u64),
    #[error("seq {got} after {last}")]
    OutOfOrder { last: u64, got: u64 },
    #[error("session is closed")]
    Closed,
    #[error("{0} can only be attached once the class is closing")]
    NotClosed(&'static str),
    #[error("{0} already attached")]
    AlreadyAttached(&'static str),
    #[error("line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("missing header line")]
    MissingHeader,
}

/// Failure marker: the class ended abnormally after `after_seq`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub message: String,
    #[serde(with = "ts_millis")]
    pub at: DateTime<Utc>,
    pub after_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub session_id: String,
    pub course_id: String,
    pub setting: Ablation,
    #[serde(with = "ts_millis")]
    pub created_at: DateTime<Utc>,
    pub roster: Roster,
    pub config: SessionConfig,
}

/// One line of a session file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StoreLine {
    Header(SessionHeader),
    Event(SessionEvent),
    Survey(SurveyResponse),
    Quiz(QuizResult),
    Fault(Fault),
}

impl StoreLine {
    pub(crate) fn kind(&self) -> &'static str {
        match self {
            StoreLine::Header(_) => "header",
            StoreLine::Event(_) => "event",
            StoreLine::Survey(_) => "survey",
            StoreLine::Quiz(_) => "quiz",
            StoreLine::Fault(_) => "fault",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub header: SessionHeader,
    pub events: Vec<SessionEvent>,
    pub survey: Option<SurveyResponse>,
    pub quiz: Option<QuizResult>,
    pub fault: Option<Fault>,
}

impl SessionRecord {
    pub fn session_id(&self) -> &str {
        &self.header.session_id
    }

    pub fn utterances(&self) -> Vec<Utterance> {
        self.events
            .iter()
            .filter_map(|e| e.to_utterance(&self.header.session_id))
            .collect()
    }

    pub fn is_closed(&self) -> bool {
        self.events.last().is_some_and(SessionEvent::is_terminal)
    }

    pub fn last_seq(&self) -> u64 {
        self.events.last().map_or(0, |e| e.seq)
    }

    /// Phase reached by the event log.
    pub fn phase(&self) -> Phase {
        use crate::event::EventBody;
        self.events
            .iter()
            .rev()
            .find_map(|e| match e.body {
                EventBody::PhaseChange { to, .. } => Some(to),
                _ => None,
            })
            .unwrap_or(Phase::Init)
    }

    /// Builds a record from parsed lines, enforcing the append rules.
    pub fn from_lines(lines: impl IntoIterator<Item = StoreLine>) -> Result<Self, StoreError> {
        let mut lines = lines.into_iter();
        let header = match lines.next() {
            Some(StoreLine::Header(h)) => h,
            _ => return Err(StoreError::MissingHeader),
        };
        let mut record = SessionRecord {
            header,
            events: Vec::new(),
            survey: None,
            quiz: None,
            fault: None,
        };
        for line in lines {
            record.push(line)?;
        }
        Ok(record)
    }

    /// Checks `line` against the append rules without applying it.
    pub(crate) fn check(&self, line: &StoreLine) -> Result<(), StoreError> {
        match line {
            StoreLine::Header(_) => Err(StoreError::Exists(self.header.session_id.clone())),
            StoreLine::Event(e) => {
                if self.is_closed() {
                    return Err(StoreError::Closed);
                }
                let last = self.last_seq();
                if e.seq == last && last > 0 {
                    Err(StoreError::DuplicateSeq(e.seq))
                } else if e.seq <= last {
                    Err(StoreError::OutOfOrder { last, got: e.seq })
                } else {
                    Ok(())
                }
            }
            StoreLine::Survey(_) | StoreLine::Quiz(_) => {
                let kind = line.kind();
                if !matches!(self.phase(), Phase::Closing | Phase::Closed) {
                    return Err(StoreError::NotClosed(kind));
                }
                let taken = match line {
                    StoreLine::Survey(_) => self.survey.is_some(),
                    _ => self.quiz.is_some(),
                };
                if taken {
                    Err(StoreError::AlreadyAttached(kind))
                } else {
                    Ok(())
                }
            }
            StoreLine::Fault(_) => {
                if self.fault.is_some() {
                    Err(StoreError::AlreadyAttached("fault"))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub(crate) fn push(&mut self, line: StoreLine) -> Result<(), StoreError> {
        self.check(&line)?;
        match line {
            StoreLine::Header(_) => unreachable!("rejected by check"),
            StoreLine::Event(e) => self.events.push(e),
            StoreLine::Survey(s) => self.survey = Some(s),
            StoreLine::Quiz(q) => self.quiz = Some(q),
            StoreLine::Fault(f) => self.fault = Some(f),
        }
        Ok(())
    }

    pub fn to_lines(&self) -> Vec<StoreLine> {
        let mut out = vec![StoreLine::Header(self.header.clone())];
        out.extend(self.events.iter().cloned().map(StoreLine::Event));
        out.extend(self.fault.clone().map(StoreLine::Fault));
        out.extend(self.survey.clone().map(StoreLine::Survey));
        out.extend(self.quiz.clone().map(StoreLine::Quiz));
        out
    }

    /// The JSONL interchange form.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for line in self.to_lines() {
            s.push_str(&serde_json::to_string(&line).expect("store lines serialize"));
            s.push('\n');
        }
        s
    }

    /// Parses the interchange form. A final line without a newline is a torn
    /// write and is dropped.
    pub fn from_jsonl(text: &str) -> Result<Self, StoreError> {
        Self::from_lines(parse_lines(text)?.0)
    }
}

impl fmt::Display for SessionRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for u in self.utterances() {
            writeln!(f, "[{}] p{} {}: {}", u.seq, u.page, u.speaker_id, u.text)?;
        }
        Ok(())
    }
}

/// Parsed lines plus the byte length of the intact prefix.
pub(crate) fn parse_lines(text: &str) -> Result<(Vec<StoreLine>, usize), StoreError> {
    let mut out = Vec::new();
    let mut offset = 0;
    for (n, raw) in text.split_inclusive('\n').enumerate() {
        let complete = raw.ends_with('\n');
        let body = raw.trim_end();
        if body.is_empty() {
            offset += raw.len();
            continue;
        }
        if !complete {
            // Unterminated final line: the write never completed.
            break;
        }
        let line = serde_json::from_str::<StoreLine>(body).map_err(|e| StoreError::Corrupt {
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(line);
        offset += raw.len();
    }
    Ok((out, offset))
}

#[cfg(test)]
mod tests;
