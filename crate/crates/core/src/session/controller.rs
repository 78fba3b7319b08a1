use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use log::{debug, warn};
use thiserror::Error;

use super::decision::{fallback_decision, legal_options, parse_decision, ManagerDecision};
use super::function::{ClassFunction, FunctionRegistry, INTERACT};
use super::state::{ClassState, Phase, SessionConfig};
use crate::agent::{instantiate_agent, Agent, AgentError, PromptContext};
use crate::backend::{BackendError, ChatBackend, ChatMessage};
use crate::course::Course;
use crate::evaluation::survey::SURVEY_QUESTIONS;
use crate::event::{now_millis, EventBody, SessionEvent, SpeakerKind, TriggerCause, Utterance, USER_INPUT_FUNCTION};
use crate::roster::{Roster, RosterError};
use crate::store::{Fault, SessionHeader, SessionRecord};

/// Speaker id used for the human participant.
pub const USER_ID: &str = "user";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    Config(String),
    #[error(transparent)]
    Roster(#[from] RosterError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("operation not allowed in phase {0:?}")]
    Phase(Phase),
    #[error("interactions are disabled in this class")]
    InteractionsDisabled,
    #[error("empty utterance")]
    EmptyUtterance,
    #[error("illegal decision: {0}")]
    IllegalDecision(String),
    #[error("event sink failed: {0}")]
    Sink(String),
}

impl SessionError {
    /// Stable machine-readable code for API error frames.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::Config(_) => "invalid_config",
            SessionError::Roster(_) => "invalid_roster",
            SessionError::Agent(_) => "backend_failure",
            SessionError::Phase(Phase::Closed) => "session_closed",
            SessionError::Phase(_) => "wrong_phase",
            SessionError::InteractionsDisabled => "interactions_disabled",
            SessionError::EmptyUtterance => "empty_utterance",
            SessionError::IllegalDecision(_) => "illegal_decision",
            SessionError::Sink(_) => "store_failure",
        }
    }
}

pub trait Clock: Send {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        now_millis()
    }
}

/// Clock moved explicitly; headless runs use it for reproducible timestamps.
#[derive(Debug, Clone)]
pub struct ManualClock(Arc<Mutex<DateTime<Utc>>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        ManualClock(Arc::new(Mutex::new(start)))
    }

    pub fn advance(&self, by: Duration) {
        let mut t = self.0.lock().unwrap();
        *t += chrono::Duration::from_std(by).expect("duration in range");
    }

    pub fn set(&self, to: DateTime<Utc>) {
        *self.0.lock().unwrap() = to;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().unwrap()
    }
}

/// Receives every event as it is emitted (store writer, broadcast channel).
pub trait EventSink: Send {
    fn emit(&mut self, event: &SessionEvent) -> Result<(), String>;
}

impl<F> EventSink for F
where
    F: FnMut(&SessionEvent) -> Result<(), String> + Send,
{
    fn emit(&mut self, event: &SessionEvent) -> Result<(), String> {
        self(event)
    }
}

pub struct SessionSetup {
    pub session_id: String,
    pub course: Arc<Course>,
    pub roster: Roster,
    pub config: SessionConfig,
    pub registry: FunctionRegistry,
}

impl SessionSetup {
    pub fn new(session_id: impl Into<String>, course: Arc<Course>, roster: Roster, config: SessionConfig) -> Self {
        SessionSetup {
            session_id: session_id.into(),
            course,
            roster,
            config,
            registry: FunctionRegistry::default(),
        }
    }
}

/// Outcome of asking the manager.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionOutcome {
    pub decision: Option<ManagerDecision>,
    pub attempts: u32,
    pub fallback: bool,
}

/// Single-writer classroom state machine. All mutation goes through its
/// methods; every change is emitted as an event with a fresh sequence number.
pub struct ClassroomSession {
    session_id: String,
    created_at: DateTime<Utc>,
    course: Arc<Course>,
    config: SessionConfig,
    registry: FunctionRegistry,
    agents: HashMap<String, Agent>,
    manager: Agent,
    state: ClassState,
    events: Vec<SessionEvent>,
    sinks: Vec<Box<dyn EventSink>>,
    clock: Box<dyn Clock>,
    fault: Option<Fault>,
}

impl ClassroomSession {
    pub fn new(setup: SessionSetup, backend: Arc<dyn ChatBackend>, clock: Box<dyn Clock>) -> Result<Self, SessionError> {
        setup.config.validate().map_err(SessionError::Config)?;
        setup.roster.validate()?;
        if setup.course.pages.is_empty() {
            return Err(SessionError::Config("course has no pages".into()));
        }
        let mut agents = HashMap::new();
        for spec in setup.roster.speakers() {
            agents.insert(spec.id.clone(), instantiate_agent(spec.clone(), backend.clone())?);
        }
        let manager = instantiate_agent(setup.roster.manager().clone(), backend)?;
        let now = clock.now();
        let state = ClassState {
            course_id: setup.course.id.clone(),
            page_count: setup.course.page_count(),
            taught_upto: 0,
            history: Vec::new(),
            roster: setup.roster,
            phase: Phase::Init,
            last_action_at: now,
            actions_on_page: 0,
            closing_budget: setup.config.closing_windows,
            last_seq: 0,
        };
        Ok(ClassroomSession {
            session_id: setup.session_id,
            created_at: now,
            course: setup.course,
            config: setup.config,
            registry: setup.registry,
            agents,
            manager,
            state,
            events: Vec::new(),
            sinks: Vec::new(),
            clock,
            fault: None,
        })
    }

    pub fn add_sink(&mut self, sink: Box<dyn EventSink>) {
        self.sinks.push(sink);
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn state(&self) -> &ClassState {
        &self.state
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn course(&self) -> &Course {
        &self.course
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn fault(&self) -> Option<&Fault> {
        self.fault.as_ref()
    }

    pub fn header(&self) -> SessionHeader {
        SessionHeader {
            session_id: self.session_id.clone(),
            course_id: self.course.id.clone(),
            setting: self.state.roster.ablation(),
            created_at: self.created_at,
            roster: self.state.roster.clone(),
            config: self.config.clone(),
        }
    }

    /// Snapshot as a persisted record (no survey or quiz yet).
    pub fn record(&self) -> SessionRecord {
        SessionRecord {
            header: self.header(),
            events: self.events.clone(),
            survey: None,
            quiz: None,
            fault: self.fault.clone(),
        }
    }

    fn emit(&mut self, body: EventBody) -> Result<(), SessionError> {
        let event = SessionEvent {
            seq: self.state.last_seq + 1,
            at: self.clock.now(),
            body,
        };
        self.state.last_seq = event.seq;
        if let Some(u) = event.to_utterance(&self.session_id) {
            self.state.history.push(u);
        }
        let mut failure = None;
        for sink in &mut self.sinks {
            if let Err(e) = sink.emit(&event) {
                failure = Some(e);
            }
        }
        self.events.push(event);
        failure.map_or(Ok(()), |e| Err(SessionError::Sink(e)))
    }

    fn set_phase(&mut self, to: Phase) -> Result<(), SessionError> {
        let from = self.state.phase;
        assert!(from.can_advance_to(to), "illegal phase transition {from:?} -> {to:?}");
        self.state.phase = to;
        self.emit(EventBody::PhaseChange { from, to })
    }

    fn prompt_context(&self) -> PromptContext<'_> {
        PromptContext {
            course: &self.course,
            roster: &self.state.roster,
            phase: self.state.phase,
            taught_upto: self.state.taught_upto,
            history: self.state.recent_history(self.config.history_window),
        }
    }

    fn utter(&mut self, agent_id: &str, function_id: &str, text: String) -> Result<Utterance, SessionError> {
        let kind = self
            .state
            .roster
            .get(agent_id)
            .and_then(|s| SpeakerKind::from_agent(s.kind))
            .expect("speaker is a visible roster agent");
        self.emit(EventBody::Utterance {
            speaker_id: agent_id.to_string(),
            speaker_kind: kind,
            function_id: function_id.to_string(),
            page: self.state.taught_upto,
            text,
        })?;
        Ok(self.state.history.last().cloned().expect("utterance recorded"))
    }

    fn teach_current(&mut self, function_id: &str) -> Result<Utterance, SessionError> {
        let teacher_id = self.state.roster.teacher().id.clone();
        let page = self
            .course
            .page(self.state.taught_upto)
            .expect("taught_upto within course")
            .clone();
        let text = self.agents[&teacher_id].teach(&self.prompt_context(), &page)?;
        self.utter(&teacher_id, function_id, text)
    }

    /// Teaches page 1 and starts the class.
    pub fn initialize(&mut self) -> Result<(), SessionError> {
        if self.state.phase != Phase::Init {
            return Err(SessionError::Phase(self.state.phase));
        }
        self.state.taught_upto = 1;
        self.emit(EventBody::PageChange { page: 1 })?;
        self.teach_current(super::function::TEACH)?;
        self.state.actions_on_page = 0;
        self.set_phase(Phase::Running)?;
        self.state.last_action_at = self.clock.now();
        Ok(())
    }

    /// Asks the manager for the next `(agent, function)`. Invalid replies are
    /// answered with a corrective message, up to `max_decision_retries`
    /// times; after that the deterministic fallback is used.
    pub fn decide_next(&mut self) -> Result<DecisionOutcome, SessionError> {
        if !self.state.phase.is_active() {
            return Err(SessionError::Phase(self.state.phase));
        }
        let options = legal_options(&self.state, &self.registry, &self.config);
        if options.is_empty() {
            return Ok(DecisionOutcome {
                decision: None,
                attempts: 0,
                fallback: false,
            });
        }
        let registry = &self.registry;
        let mut request = self.manager.decide_request(&self.prompt_context(), &options, |id| {
            registry.get(id).map(|d| d.description.clone()).unwrap_or_default()
        });
        let max_attempts = self.config.max_decision_retries + 1;
        for attempt in 1..=max_attempts {
            let raw = match self.manager.send(request.clone()) {
                Ok(raw) => raw,
                // An empty reply is a malformed decision, not a transport failure.
                Err(AgentError::Backend {
                    source: BackendError::EmptyCompletion,
                    ..
                }) => String::new(),
                Err(e) => return Err(e.into()),
            };
            match parse_decision(&raw, &self.state, &self.registry, &self.config) {
                Ok(decision) => {
                    return Ok(DecisionOutcome {
                        decision: Some(decision),
                        attempts: attempt,
                        fallback: false,
                    })
                }
                Err(e) => {
                    debug!("manager reply rejected (attempt {attempt}/{max_attempts}): {e}");
                    request.history.push(ChatMessage::agent(self.manager.id(), raw));
                    request.history.push(ChatMessage::system(format!(
                        "That reply is invalid: {e}. Answer again with exactly one JSON object \
                         {{\"agent\": \"<id>\", \"function\": \"<id>\"}} taken from the legal options."
                    )));
                }
            }
        }
        warn!("manager gave no valid decision after {max_attempts} attempts; using fallback");
        Ok(DecisionOutcome {
            decision: fallback_decision(&self.state),
            attempts: max_attempts,
            fallback: true,
        })
    }

    fn check_legal(&self, decision: &ManagerDecision) -> Result<(), SessionError> {
        let illegal = |why: &str| Err(SessionError::IllegalDecision(format!("{}: {why}", decision.function)));
        let legal = legal_options(&self.state, &self.registry, &self.config);
        if !legal
            .iter()
            .any(|o| o.agent == decision.agent_id && o.function == decision.function.id())
        {
            return illegal("not among the legal options");
        }
        match &decision.function {
            ClassFunction::Teach { page } if *page != self.state.taught_upto => illegal("not the current page"),
            ClassFunction::Interact { agent_id } | ClassFunction::Custom { agent_id, .. }
                if *agent_id != decision.agent_id =>
            {
                illegal("performer differs from chosen agent")
            }
            _ => Ok(()),
        }
    }

    /// Runs a validated decision and returns the utterances it produced.
    /// `next_page` on the final page starts the closing phase instead.
    pub fn execute_function(&mut self, decision: &ManagerDecision) -> Result<Vec<Utterance>, SessionError> {
        self.check_legal(decision)?;
        let mut out = Vec::new();
        match &decision.function {
            ClassFunction::Teach { .. } => {
                out.push(self.teach_current(super::function::TEACH)?);
                self.state.actions_on_page += 1;
            }
            ClassFunction::NextPage => {
                if self.state.taught_upto >= self.state.page_count {
                    self.begin_closing()?;
                } else {
                    self.state.taught_upto += 1;
                    self.state.actions_on_page = 0;
                    self.emit(EventBody::PageChange {
                        page: self.state.taught_upto,
                    })?;
                    out.push(self.teach_current(super::function::TEACH)?);
                }
            }
            ClassFunction::Interact { agent_id } | ClassFunction::Custom { agent_id, .. } => {
                let function_id = decision.function.id().to_string();
                let desc = self
                    .registry
                    .get(&function_id)
                    .or_else(|| self.registry.get(INTERACT))
                    .expect("registered function")
                    .clone();
                let text = self.agents[agent_id].interact(&self.prompt_context(), &desc)?;
                out.push(self.utter(agent_id, &function_id, text)?);
                self.state.actions_on_page += 1;
            }
        }
        Ok(out)
    }

    fn begin_closing(&mut self) -> Result<(), SessionError> {
        self.set_phase(Phase::Closing)?;
        self.state.closing_budget = self.config.closing_windows;
        if self.state.closing_budget == 0 {
            self.close()?;
        }
        Ok(())
    }

    fn close(&mut self) -> Result<(), SessionError> {
        self.emit(EventBody::SurveyPrompt {
            questions: SURVEY_QUESTIONS.iter().map(|q| q.to_string()).collect(),
        })?;
        self.set_phase(Phase::Closed)
    }

    /// Trigger -> decision -> execution, then restart the idle window.
    fn trigger(&mut self, cause: TriggerCause) -> Result<Option<ManagerDecision>, SessionError> {
        self.emit(EventBody::Trigger { cause })?;
        let outcome = self.decide_next()?;
        if let Some(decision) = &outcome.decision {
            self.emit(EventBody::Decision {
                agent_id: decision.agent_id.clone(),
                function_id: decision.function.id().to_string(),
                attempts: outcome.attempts,
                fallback: outcome.fallback,
            })?;
            self.execute_function(decision)?;
        }
        self.state.last_action_at = self.clock.now();
        Ok(outcome.decision)
    }

    /// Appends the participant's message and immediately asks the manager,
    /// without waiting for the idle window.
    pub fn handle_user_utterance(&mut self, text: &str) -> Result<Option<ManagerDecision>, SessionError> {
        if !self.state.phase.is_active() {
            return Err(SessionError::Phase(self.state.phase));
        }
        if !self.state.roster.interactions_enabled() {
            return Err(SessionError::InteractionsDisabled);
        }
        let text = text.trim();
        if text.is_empty() {
            return Err(SessionError::EmptyUtterance);
        }
        self.emit(EventBody::Utterance {
            speaker_id: USER_ID.into(),
            speaker_kind: SpeakerKind::User,
            function_id: USER_INPUT_FUNCTION.into(),
            page: self.state.taught_upto,
            text: text.to_string(),
        })?;
        self.trigger(TriggerCause::UserSpoke)
    }

    /// Time until the idle window expires, measured from `now`.
    pub fn time_until_expiry(&self, now: DateTime<Utc>) -> Duration {
        let elapsed = (now - self.state.last_action_at).to_std().unwrap_or(Duration::ZERO);
        self.config.tau.saturating_sub(elapsed)
    }

    /// Fires the manager when the idle window has elapsed. While closing,
    /// each expiry consumes one window of the closing budget and the class
    /// closes when none remain.
    pub fn tick(&mut self, now: DateTime<Utc>) -> Result<Option<ManagerDecision>, SessionError> {
        if !self.state.phase.is_active() {
            return Err(SessionError::Phase(self.state.phase));
        }
        let elapsed = (now - self.state.last_action_at).to_std().unwrap_or(Duration::ZERO);
        if elapsed < self.config.tau {
            return Ok(None);
        }
        if self.state.phase == Phase::Closing {
            self.state.closing_budget = self.state.closing_budget.saturating_sub(1);
            if self.state.closing_budget == 0 {
                self.close()?;
                return Ok(None);
            }
            if !self.state.roster.interactions_enabled() {
                self.state.last_action_at = now;
                return Ok(None);
            }
        }
        self.trigger(TriggerCause::TauExpired)
    }

    /// Ends the class after an unrecoverable error, keeping the transcript.
    pub fn fail(&mut self, error: &SessionError) -> Fault {
        let fault = Fault {
            message: error.to_string(),
            at: self.clock.now(),
            after_seq: self.state.last_seq,
        };
        self.fault = Some(fault.clone());
        // Sink failures are ignored here: the session is already failing.
        if self.state.phase == Phase::Init {
            self.state.phase = Phase::Running;
            let _ = self.emit(EventBody::PhaseChange {
                from: Phase::Init,
                to: Phase::Running,
            });
        }
        if self.state.phase == Phase::Running {
            let _ = self.set_phase(Phase::Closing);
        }
        if self.state.phase == Phase::Closing {
            let _ = self.set_phase(Phase::Closed);
        }
        fault
    }
}

/// Builds a session and teaches page 1.
pub fn initialize_session(
    setup: SessionSetup,
    backend: Arc<dyn ChatBackend>,
    clock: Box<dyn Clock>,
) -> Result<ClassroomSession, SessionError> {
    let mut session = ClassroomSession::new(setup, backend, clock)?;
    session.initialize()?;
    Ok(session)
}
