//! Session event log entries. The same JSON shape is written to the session
//! store and pushed to live stream subscribers.

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};

use crate::roster::AgentKind;
use crate::session::Phase;

/// Current UTC time truncated to whole milliseconds, the store's precision.
pub fn now_millis() -> DateTime<Utc> {
    Utc::now().trunc_subsecs(3)
}

pub(crate) mod ts_millis {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Millis, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeakerKind {
    Teacher,
    Assistant,
    Classmate,
    User,
}

impl SpeakerKind {
    pub fn from_agent(kind: AgentKind) -> Option<Self> {
        match kind {
            AgentKind::Teacher => Some(SpeakerKind::Teacher),
            AgentKind::Assistant => Some(SpeakerKind::Assistant),
            AgentKind::Classmate => Some(SpeakerKind::Classmate),
            AgentKind::Manager => None,
        }
    }

    pub fn is_teaching_side(self) -> bool {
        matches!(self, SpeakerKind::Teacher | SpeakerKind::Assistant)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerCause {
    UserSpoke,
    TauExpired,
}

/// Function id recorded on utterances produced from user input.
pub const USER_INPUT_FUNCTION: &str = "user_input";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventBody {
    Utterance {
        speaker_id: String,
        speaker_kind: SpeakerKind,
        function_id: String,
        page: usize,
        text: String,
    },
    PageChange {
        page: usize,
    },
    PhaseChange {
        from: Phase,
        to: Phase,
    },
    Decision {
        agent_id: String,
        function_id: String,
        /// Manager calls spent on this decision, including corrective retries.
        attempts: u32,
        fallback: bool,
    },
    Trigger {
        cause: TriggerCause,
    },
    SurveyPrompt {
        questions: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    #[serde(with = "ts_millis")]
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub body: EventBody,
}

/// A single turn in the class: one agent's or the user's contribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub session_id: String,
    pub seq: u64,
    #[serde(with = "ts_millis")]
    pub wall_time: DateTime<Utc>,
    pub speaker_id: String,
    pub speaker_kind: SpeakerKind,
    pub function_id: String,
    pub page: usize,
    pub text: String,
}

impl SessionEvent {
    pub fn kind(&self) -> &'static str {
        match self.body {
            EventBody::Utterance { .. } => "utterance",
            EventBody::PageChange { .. } => "page_change",
            EventBody::PhaseChange { .. } => "phase_change",
            EventBody::Decision { .. } => "decision",
            EventBody::Trigger { .. } => "trigger",
            EventBody::SurveyPrompt { .. } => "survey_prompt",
        }
    }

    pub fn to_utterance(&self, session_id: &str) -> Option<Utterance> {
        match &self.body {
            EventBody::Utterance {
                speaker_id,
                speaker_kind,
                function_id,
                page,
                text,
            } => Some(Utterance {
                session_id: session_id.to_string(),
                seq: self.seq,
                wall_time: self.at,
                speaker_id: speaker_id.clone(),
                speaker_kind: *speaker_kind,
                function_id: function_id.clone(),
                page: *page,
                text: text.clone(),
            }),
            _ => None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self.body, EventBody::PhaseChange { to: Phase::Closed, .. })
    }
}
