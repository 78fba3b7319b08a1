use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{parse_lines, SessionHeader, SessionRecord, StoreError, StoreLine};
use crate::evaluation::{QuizResult, SurveyResponse};
use crate::event::{ts_millis, SessionEvent};
use crate::roster::Ablation;
use crate::session::EventSink;

const INDEX_FILE: &str = "index.jsonl";

/// When an append is acknowledged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Durability {
    /// After the write reaches the OS; survives a process crash.
    #[default]
    Flush,
    /// After `fsync`; survives power loss.
    Sync,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub course_id: String,
    pub setting: Ablation,
    #[serde(with = "ts_millis")]
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SessionFilter {
    pub course_id: Option<String>,
    pub setting: Option<Ablation>,
}

impl SessionFilter {
    fn matches(&self, s: &SessionSummary) -> bool {
        self.course_id.as_ref().is_none_or(|c| *c == s.course_id) && self.setting.is_none_or(|a| a == s.setting)
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id != "index"
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// A directory of session files.
#[derive(Debug, Clone)]
pub struct TranscriptStore {
    root: PathBuf,
    durability: Durability,
}

impl TranscriptStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(TranscriptStore {
            root,
            durability: Durability::default(),
        })
    }

    pub fn with_durability(mut self, durability: Durability) -> Self {
        self.durability = durability;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_of(&self, session_id: &str) -> Result<PathBuf, StoreError> {
        if !valid_id(session_id) {
            return Err(StoreError::InvalidId(session_id.to_string()));
        }
        Ok(self.root.join(format!("{session_id}.jsonl")))
    }

    pub fn contains(&self, session_id: &str) -> bool {
        self.path_of(session_id).is_ok_and(|p| p.exists())
    }

    /// Starts a new session file with `header` as its first line.
    pub fn create(&self, header: &SessionHeader) -> Result<SessionWriter, StoreError> {
        let path = self.path_of(&header.session_id)?;
        let mut file = match OpenOptions::new().append(true).create_new(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(StoreError::Exists(header.session_id.clone()))
            }
            Err(e) => return Err(e.into()),
        };
        let line = StoreLine::Header(header.clone());
        write_line(&mut file, &line, self.durability)?;
        let summary = SessionSummary {
            session_id: header.session_id.clone(),
            course_id: header.course_id.clone(),
            setting: header.setting,
            created_at: header.created_at,
        };
        let mut index = OpenOptions::new()
            .append(true)
            .create(true)
            .open(self.root.join(INDEX_FILE))?;
        let mut text = serde_json::to_string(&summary).expect("summary serializes");
        text.push('\n');
        index.write_all(text.as_bytes())?;
        index.flush()?;
        Ok(SessionWriter {
            file,
            record: SessionRecord::from_lines([line])?,
            durability: self.durability,
        })
    }

    /// Reopens an existing session for appending, cutting off a torn final line.
    pub fn writer(&self, session_id: &str) -> Result<SessionWriter, StoreError> {
        let path = self.path_of(session_id)?;
        let text = read_existing(&path, session_id)?;
        let (lines, intact) = parse_lines(&text)?;
        let record = SessionRecord::from_lines(lines)?;
        let file = OpenOptions::new().append(true).open(&path)?;
        if intact < text.len() {
            log::warn!("session {session_id}: dropping {} torn bytes", text.len() - intact);
            file.set_len(intact as u64)?;
        }
        Ok(SessionWriter {
            file,
            record,
            durability: self.durability,
        })
    }

    pub fn load_session(&self, session_id: &str) -> Result<SessionRecord, StoreError> {
        let path = self.path_of(session_id)?;
        SessionRecord::from_jsonl(&read_existing(&path, session_id)?)
    }

    /// Sessions recorded in the index, oldest first.
    pub fn list_sessions(&self, filter: &SessionFilter) -> Result<Vec<SessionSummary>, StoreError> {
        let text = match fs::read_to_string(self.root.join(INDEX_FILE)) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut seen = BTreeMap::new();
        let mut out = Vec::new();
        for line in text.lines() {
            let Ok(s) = serde_json::from_str::<SessionSummary>(line) else {
                continue;
            };
            if seen.insert(s.session_id.clone(), ()).is_none() && filter.matches(&s) && self.contains(&s.session_id)
            {
                out.push(s);
            }
        }
        Ok(out)
    }

    /// Writes the session's JSONL interchange form to `dest`.
    pub fn export(&self, session_id: &str, dest: impl AsRef<Path>) -> Result<(), StoreError> {
        let record = self.load_session(session_id)?;
        fs::write(dest, record.to_jsonl())?;
        Ok(())
    }

    /// Adds a session from its interchange form; the id must be new.
    pub fn import(&self, src: impl AsRef<Path>) -> Result<SessionRecord, StoreError> {
        let record = SessionRecord::from_jsonl(&fs::read_to_string(src)?)?;
        let mut lines = record.to_lines().into_iter();
        let Some(StoreLine::Header(header)) = lines.next() else {
            return Err(StoreError::MissingHeader);
        };
        let mut writer = self.create(&header)?;
        for line in lines {
            writer.append(line)?;
        }
        Ok(writer.record)
    }

    pub fn attach_survey(&self, session_id: &str, survey: SurveyResponse) -> Result<(), StoreError> {
        self.writer(session_id)?.append(StoreLine::Survey(survey))
    }

    pub fn attach_quiz(&self, session_id: &str, quiz: QuizResult) -> Result<(), StoreError> {
        self.writer(session_id)?.append(StoreLine::Quiz(quiz))
    }
}

fn read_existing(path: &Path, session_id: &str) -> Result<String, StoreError> {
    match fs::read_to_string(path) {
        Ok(t) => Ok(t),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(StoreError::UnknownSession(session_id.to_string())),
        Err(e) => Err(e.into()),
    }
}

fn write_line(file: &mut File, line: &StoreLine, durability: Durability) -> Result<(), StoreError> {
    let mut text = serde_json::to_string(line).expect("store lines serialize");
    text.push('\n');
    file.write_all(text.as_bytes())?;
    file.flush()?;
    if durability == Durability::Sync {
        file.sync_data()?;
    }
    Ok(())
}

/// The single writer of one session file.
#[derive(Debug)]
pub struct SessionWriter {
    file: File,
    record: SessionRecord,
    durability: Durability,
}

impl SessionWriter {
    /// Appends `line`; returns once it is durable per the store's policy.
    pub fn append(&mut self, line: StoreLine) -> Result<(), StoreError> {
        self.record.check(&line)?;
        write_line(&mut self.file, &line, self.durability)?;
        self.record.push(line)
    }

    pub fn append_event(&mut self, event: &SessionEvent) -> Result<(), StoreError> {
        self.append(StoreLine::Event(event.clone()))
    }

    /// Everything acknowledged so far.
    pub fn record(&self) -> &SessionRecord {
        &self.record
    }
}

impl EventSink for SessionWriter {
    fn emit(&mut self, event: &SessionEvent) -> Result<(), String> {
        self.append_event(event).map_err(|e| e.to_string())
    }
}
