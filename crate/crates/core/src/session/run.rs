//! Headless driver: runs a class from initialization to closure.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use super::controller::{ClassroomSession, Clock, EventSink, ManualClock, SessionError, SessionSetup};
use super::state::{ClassState, Phase, SessionConfig};
use crate::backend::ChatBackend;
use crate::course::Course;
use crate::roster::Roster;
use crate::store::SessionRecord;

/// Pull-based source of participant messages.
pub trait UserSource {
    /// A message to deliver now, if any.
    fn poll(&mut self, state: &ClassState) -> Option<String>;
}

/// A participant who never speaks.
#[derive(Debug, Default, Clone, Copy)]
pub struct Silent;

impl UserSource for Silent {
    fn poll(&mut self, _state: &ClassState) -> Option<String> {
        None
    }
}

/// One line of a user replay file: deliver `text` once the event log has
/// reached `after_seq`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub after_seq: u64,
    pub text: String,
}

/// Replays scripted participant messages in order.
#[derive(Debug, Clone, Default)]
pub struct ReplaySource {
    entries: VecDeque<ReplayEntry>,
}

impl ReplaySource {
    pub fn new(entries: impl IntoIterator<Item = ReplayEntry>) -> Self {
        ReplaySource {
            entries: entries.into_iter().collect(),
        }
    }

    /// Reads a JSONL replay file (blank lines ignored).
    pub fn load(path: impl AsRef<Path>) -> Result<Self, String> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| e.to_string())?;
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(line).map_err(|e| format!("line {}: {e}", n + 1))?);
        }
        Ok(ReplaySource::new(entries))
    }

    pub fn remaining(&self) -> usize {
        self.entries.len()
    }
}

impl UserSource for ReplaySource {
    fn poll(&mut self, state: &ClassState) -> Option<String> {
        if self.entries.front()?.after_seq <= state.last_seq {
            self.entries.pop_front().map(|e| e.text)
        } else {
            None
        }
    }
}

impl<F: FnMut(&ClassState) -> Option<String>> UserSource for F {
    fn poll(&mut self, state: &ClassState) -> Option<String> {
        self(state)
    }
}

pub struct RunOptions {
    pub session_id: String,
    /// Timestamp of the first event; the clock then advances by tau per idle window.
    pub start: DateTime<Utc>,
    pub sinks: Vec<Box<dyn EventSink>>,
}

impl RunOptions {
    pub fn for_course(course: &Course, roster: &Roster) -> Self {
        RunOptions {
            session_id: format!("{}-{}", course.id, roster.ablation()),
            start: Utc.with_ymd_and_hms(2024, 1, 1, 9, 0, 0).unwrap(),
            sinks: Vec::new(),
        }
    }
}

/// Drives a class to `Closed` on a manual clock. Precondition failures are
/// returned as errors; failures during the class end it with a fault marker
/// in the returned record.
pub fn run_session(
    course: Arc<Course>,
    roster: Roster,
    config: SessionConfig,
    user_source: &mut dyn UserSource,
    backend: Arc<dyn ChatBackend>,
) -> Result<SessionRecord, SessionError> {
    let options = RunOptions::for_course(&course, &roster);
    run_session_with(course, roster, config, user_source, backend, options)
}

pub fn run_session_with(
    course: Arc<Course>,
    roster: Roster,
    config: SessionConfig,
    user_source: &mut dyn UserSource,
    backend: Arc<dyn ChatBackend>,
    options: RunOptions,
) -> Result<SessionRecord, SessionError> {
    let clock = ManualClock::new(options.start);
    let setup = SessionSetup::new(options.session_id, course, roster, config);
    let mut session = ClassroomSession::new(setup, backend, Box::new(clock.clone()))?;
    for sink in options.sinks {
        session.add_sink(sink);
    }
    if let Err(e) = drive(&mut session, user_source, &clock) {
        session.fail(&e);
    }
    Ok(session.record())
}

/// Upper bound on idle-window expiries a well-formed class can need.
fn expiry_bound(session: &ClassroomSession) -> usize {
    let cfg = session.config();
    (session.state().page_count + cfg.closing_windows as usize + 1) * (cfg.max_actions_per_page + 2)
}

fn drive(session: &mut ClassroomSession, user_source: &mut dyn UserSource, clock: &ManualClock) -> Result<(), SessionError> {
    session.initialize()?;
    let bound = expiry_bound(session);
    let mut expiries = 0usize;
    while session.state().phase != Phase::Closed {
        if let Some(text) = user_source.poll(session.state()) {
            match session.handle_user_utterance(&text) {
                Ok(_) => continue,
                Err(SessionError::InteractionsDisabled | SessionError::EmptyUtterance) => {
                    log::info!("replayed user input rejected");
                    continue;
                }
                Err(e) => return Err(e),
            }
        }
        expiries += 1;
        if expiries > bound {
            return Err(SessionError::Config(format!(
                "class did not close within {bound} idle windows"
            )));
        }
        clock.advance(session.config().tau);
        session.tick(clock.now())?;
    }
    Ok(())
}
