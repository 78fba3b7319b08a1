use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use super::{EncodedSession, FiasCategory, FiasError};
use crate::backend::{ChatBackend, ChatMessage, ChatRequest, OutputConstraint, RequestTask};
use crate::event::{SpeakerKind, Utterance};
use crate::session::TEACH;
use crate::store::SessionRecord;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{0}")]
pub struct LabelError(pub String);

/// Assigns one category to an utterance given what was said before it.
pub trait CategoryLabeler {
    fn label(&self, utterance: &Utterance, previous: &[Utterance]) -> Result<FiasCategory, LabelError>;

    /// Gap between utterances that counts as one unit of silence.
    fn silence_gap(&self) -> Option<Duration> {
        None
    }
}

/// Encodes a transcript: one category per utterance in order, with a silence
/// unit before any utterance that follows a gap of at least the labeler's
/// silence gap. Labeler failures become flagged silence.
pub fn label_utterances(record: &SessionRecord, labeler: &dyn CategoryLabeler) -> Result<EncodedSession, FiasError> {
    let utterances = record.utterances();
    if utterances.is_empty() {
        return Err(FiasError::EmptyTranscript(record.session_id().to_string()));
    }
    let gap = labeler.silence_gap().filter(|g| !g.is_zero());
    let mut out = EncodedSession::new(record.session_id(), Vec::with_capacity(utterances.len()));
    for (i, u) in utterances.iter().enumerate() {
        if let (Some(gap), Some(prev)) = (gap, i.checked_sub(1).map(|j| &utterances[j])) {
            let elapsed = (u.wall_time - prev.wall_time).to_std().unwrap_or_default();
            if elapsed >= gap {
                out.sequence.push(FiasCategory::Silence);
            }
        }
        match labeler.label(u, &utterances[..i]) {
            Ok(c) => out.sequence.push(c),
            Err(e) => {
                log::warn!("{}: seq {} unlabeled: {e}", record.session_id(), u.seq);
                out.flagged.push(out.sequence.len());
                out.sequence.push(FiasCategory::Silence);
            }
        }
    }
    Ok(out)
}

pub const PRAISE_MARKERS: &[&str] = &[
    "good job",
    "well done",
    "great question",
    "good question",
    "great point",
    "good point",
    "excellent",
    "exactly right",
    "nice work",
    "great job",
    "很好",
    "真棒",
];

fn is_question(text: &str) -> bool {
    text.contains('?') || text.contains('？')
}

fn has_praise(text: &str) -> bool {
    let lower = text.to_lowercase();
    PRAISE_MARKERS.iter().any(|m| lower.contains(m))
}

/// Deterministic keyword rules. Teaching-side speakers: page delivery 5,
/// praise 2, a question 4, a reply to a student 3, otherwise 5. Students:
/// answering a question 8, otherwise 9.
#[derive(Debug, Clone, Default)]
pub struct RuleLabeler {
    silence_gap: Option<Duration>,
}

impl RuleLabeler {
    pub fn new() -> Self {
        RuleLabeler::default()
    }

    pub fn with_silence_gap(gap: Duration) -> Self {
        RuleLabeler {
            silence_gap: Some(gap),
        }
    }

    /// Uses the session's idle window as the silence gap.
    pub fn for_record(record: &SessionRecord) -> Self {
        RuleLabeler::with_silence_gap(record.header.config.tau)
    }
}

impl CategoryLabeler for RuleLabeler {
    fn label(&self, u: &Utterance, previous: &[Utterance]) -> Result<FiasCategory, LabelError> {
        let prev = previous.last();
        if u.speaker_kind.is_teaching_side() {
            let after_student = prev.is_some_and(|p| !p.speaker_kind.is_teaching_side());
            return Ok(if u.function_id == TEACH {
                FiasCategory::Lecturing
            } else if has_praise(&u.text) {
                FiasCategory::Praise
            } else if is_question(&u.text) {
                FiasCategory::AskQuestions
            } else if after_student {
                FiasCategory::AcceptIdeas
            } else {
                FiasCategory::Lecturing
            });
        }
        let answering = prev.is_some_and(|p| p.speaker_id != u.speaker_id && is_question(&p.text));
        Ok(if answering {
            FiasCategory::StudentResponse
        } else {
            FiasCategory::StudentInitiation
        })
    }

    fn silence_gap(&self) -> Option<Duration> {
        self.silence_gap
    }
}

const RUBRIC: &str = "You label classroom utterances with Flanders interaction categories.\n\
1 Accept Feelings: the teacher acknowledges a student's feelings.\n\
2 Praises or Encourages: the teacher praises or encourages a student.\n\
3 Accept Ideas: the teacher clarifies, builds on or uses a student's idea.\n\
4 Ask Questions: the teacher asks a question expecting a student answer.\n\
5 Lecturing: the teacher presents content or facts.\n\
6 Giving Direction: the teacher gives an instruction or command.\n\
7 Criticizing: the teacher criticizes or justifies authority.\n\
8 Student Response: a student answers the teacher or a peer.\n\
9 Student Initiation: a student raises a new idea or question.\n\
10 Silence or Confusion: no meaningful communication.\n\
Teachers and assistants are teaching-side; classmates and the user are students.\n\
Reply with the category number only.";

/// Labels through a chat backend using the ten-category rubric.
pub struct LlmLabeler {
    backend: Arc<dyn ChatBackend>,
    context: usize,
    silence_gap: Option<Duration>,
}

impl LlmLabeler {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        LlmLabeler {
            backend,
            context: 6,
            silence_gap: None,
        }
    }

    pub fn with_silence_gap(mut self, gap: Duration) -> Self {
        self.silence_gap = Some(gap);
        self
    }

    pub fn request(&self, u: &Utterance, previous: &[Utterance]) -> ChatRequest {
        let mut req = ChatRequest::new("labeler", RequestTask::Label, RUBRIC);
        req.page = Some(u.page);
        req.temperature = 0.0;
        req.constraint = Some(OutputConstraint::Category);
        let start = previous.len().saturating_sub(self.context);
        for p in &previous[start..] {
            req.history
                .push(ChatMessage::system(format!("[{} {}]: {}", role(p.speaker_kind), p.speaker_id, p.text)));
        }
        req.history.push(ChatMessage::system(format!(
            "Label this utterance.\n[{} {}]: {}",
            role(u.speaker_kind),
            u.speaker_id,
            u.text
        )));
        req
    }
}

fn role(kind: SpeakerKind) -> &'static str {
    match kind {
        SpeakerKind::Teacher => "teacher",
        SpeakerKind::Assistant => "assistant",
        SpeakerKind::Classmate => "classmate",
        SpeakerKind::User => "student",
    }
}

/// First integer in `text` if it is a category code.
fn parse_category(text: &str) -> Option<FiasCategory> {
    let digits: String = text
        .chars()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(char::is_ascii_digit)
        .collect();
    FiasCategory::try_from(digits.parse::<u8>().ok()?).ok()
}

impl CategoryLabeler for LlmLabeler {
    fn label(&self, u: &Utterance, previous: &[Utterance]) -> Result<FiasCategory, LabelError> {
        let reply = self
            .backend
            .complete(&self.request(u, previous))
            .map_err(|e| LabelError(e.to_string()))?;
        parse_category(&reply).ok_or_else(|| LabelError(format!("unusable label `{}`", reply.trim())))
    }

    fn silence_gap(&self) -> Option<Duration> {
        self.silence_gap
    }
}
