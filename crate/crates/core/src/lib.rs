//! Multi-agent classroom simulation: course material, role agents, the
//! manager-driven session loop, transcripts, and interaction analysis.

pub mod agent;
pub mod backend;
pub mod course;
pub mod evaluation;
pub mod event;
pub mod fias;
pub mod roster;
pub mod session;
pub mod store;

pub use agent::{instantiate_agent, Agent, AgentError};
pub use course::{load_course, validate_course, Course, CourseError, ScriptPage, Slide};
pub use event::{EventBody, SessionEvent, SpeakerKind, Utterance};
pub use roster::{apply_ablation, default_roster, Ablation, AgentKind, AgentSpec, RoleBehavior, Roster};
pub use session::{run_session, ClassroomSession, Phase, SessionConfig, SessionError};
pub use store::{SessionRecord, TranscriptStore};
