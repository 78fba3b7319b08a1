//! Binding a role spec to a chat backend and composing its prompts.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatMessage, ChatRequest, DecisionOption, OutputConstraint, RequestTask};
use crate::course::{Course, ScriptPage};
use crate::event::{SpeakerKind, Utterance};
use crate::roster::{AgentKind, AgentSpec, Roster, RosterError};
use crate::session::{FunctionDescriptor, Phase};

pub const ROLE_TEMPERATURE: f32 = 0.7;
pub const MANAGER_TEMPERATURE: f32 = 0.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error(transparent)]
    Spec(#[from] RosterError),
    #[error("agent `{agent_id}`: {source}")]
    Backend {
        agent_id: String,
        #[source]
        source: BackendError,
    },
}

/// What an agent sees of the class when asked to act.
pub struct PromptContext<'a> {
    pub course: &'a Course,
    pub roster: &'a Roster,
    pub phase: Phase,
    pub taught_upto: usize,
    /// Already truncated to the history window.
    pub history: &'a [Utterance],
}

impl PromptContext<'_> {
    fn current_page(&self) -> Option<&ScriptPage> {
        self.course.page(self.taught_upto)
    }

    fn roster_lines(&self) -> String {
        let mut out = String::new();
        for a in self.roster.speakers() {
            out.push_str(&format!(
                "- {} (id `{}`, {}, behaviors: {})\n",
                a.display_name,
                a.id,
                a.kind,
                a.behavior_acronyms()
            ));
        }
        out.push_str("- the human student (id `user`)\n");
        out
    }

    fn history_messages(&self) -> Vec<ChatMessage> {
        self.history
            .iter()
            .map(|u| match u.speaker_kind {
                SpeakerKind::User => ChatMessage::user(&u.speaker_id, &u.text),
                _ => ChatMessage::agent(&u.speaker_id, &u.text),
            })
            .collect()
    }
}

pub struct Agent {
    spec: AgentSpec,
    backend: Arc<dyn ChatBackend>,
    temperature: f32,
}

impl fmt::Debug for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Agent")
            .field("id", &self.spec.id)
            .field("backend", &self.backend.name())
            .field("temperature", &self.temperature)
            .finish()
    }
}

/// Binds `spec` to `backend`. Role agents sample at 0.7, the manager at 0.
pub fn instantiate_agent(spec: AgentSpec, backend: Arc<dyn ChatBackend>) -> Result<Agent, AgentError> {
    spec.validate()?;
    let temperature = if spec.kind == AgentKind::Manager {
        MANAGER_TEMPERATURE
    } else {
        ROLE_TEMPERATURE
    };
    Ok(Agent {
        spec,
        backend,
        temperature,
    })
}

impl Agent {
    pub fn spec(&self) -> &AgentSpec {
        &self.spec
    }

    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn with_temperature(mut self, temperature: f32) -> Self {
        self.temperature = temperature;
        self
    }

    fn system_prompt(&self, ctx: &PromptContext<'_>) -> String {
        format!(
            "{persona}\n\nYou are {name} in the class \"{title}\". People in the room:\n{roster}\
             Write only your own words as {name}, without a name prefix.",
            persona = self.spec.persona.trim(),
            name = self.spec.display_name,
            title = ctx.course.title,
            roster = ctx.roster_lines(),
        )
    }

    fn call(&self, request: ChatRequest) -> Result<String, AgentError> {
        self.backend
            .complete(&request)
            .map(|t| t.trim().to_string())
            .and_then(|t| if t.is_empty() { Err(BackendError::EmptyCompletion) } else { Ok(t) })
            .map_err(|source| AgentError::Backend {
                agent_id: self.spec.id.clone(),
                source,
            })
    }

    fn request(&self, ctx: &PromptContext<'_>, task: RequestTask, instruction: String) -> ChatRequest {
        let mut request = ChatRequest::new(&self.spec.id, task, self.system_prompt(ctx));
        request.page = Some(ctx.taught_upto);
        request.history = ctx.history_messages();
        request.history.push(ChatMessage::system(instruction));
        request.temperature = self.temperature;
        request.material = ctx.current_page().map(|p| p.script.clone());
        request
    }

    /// Composes the request for delivering `page`; its script is included verbatim.
    pub fn teach_request(&self, ctx: &PromptContext<'_>, page: &ScriptPage) -> ChatRequest {
        let instruction = format!(
            "Teach page {} of {} now. Present the following teaching script to the class \
             faithfully and engagingly:\n\n{}",
            page.index,
            ctx.course.page_count(),
            page.script
        );
        let mut req = self.request(ctx, RequestTask::Teach, instruction);
        req.page = Some(page.index);
        req.material = Some(page.script.clone());
        req
    }

    pub fn teach(&self, ctx: &PromptContext<'_>, page: &ScriptPage) -> Result<String, AgentError> {
        self.call(self.teach_request(ctx, page))
    }

    pub fn interact_request(&self, ctx: &PromptContext<'_>, function: &FunctionDescriptor) -> ChatRequest {
        let page_note = match ctx.current_page() {
            Some(p) => format!(
                "The class is on page {} of {}. Its teaching script:\n{}\n\n",
                p.index,
                ctx.course.page_count(),
                p.script
            ),
            None => String::new(),
        };
        let phase_note = if ctx.phase == Phase::Closing {
            "All pages have been taught; this is the final discussion.\n"
        } else {
            ""
        };
        let instruction = format!("{page_note}{phase_note}{}", function.instruction);
        self.request(
            ctx,
            RequestTask::Interact {
                function_id: function.id.clone(),
            },
            instruction,
        )
    }

    pub fn interact(&self, ctx: &PromptContext<'_>, function: &FunctionDescriptor) -> Result<String, AgentError> {
        self.call(self.interact_request(ctx, function))
    }

    /// Manager prompt: class state plus the legal options, asking for a
    /// strict JSON object.
    pub fn decide_request(
        &self,
        ctx: &PromptContext<'_>,
        options: &[DecisionOption],
        describe: impl Fn(&str) -> String,
    ) -> ChatRequest {
        let page = ctx
            .current_page()
            .map(|p| format!("Current page {} of {}:\n{}\n", p.index, ctx.course.page_count(), p.script))
            .unwrap_or_default();
        let remaining = ctx.course.page_count().saturating_sub(ctx.taught_upto);
        let mut listing = String::new();
        for o in options {
            listing.push_str(&format!(
                "- {{\"agent\": \"{}\", \"function\": \"{}\"}}: {}\n",
                o.agent,
                o.function,
                describe(&o.function)
            ));
        }
        let instruction = format!(
            "Class phase: {phase:?}. {page}Pages remaining after this one: {remaining}.\n\n\
             Decide who acts next and what they do. Legal options:\n{listing}\n\
             Reply with exactly one JSON object of the form {{\"agent\": \"<id>\", \"function\": \"<id>\"}} \
             chosen from the options above, and nothing else.",
            phase = ctx.phase,
        );
        let mut req = self.request(ctx, RequestTask::Decide, instruction);
        req.constraint = Some(OutputConstraint::Decision {
            options: options.to_vec(),
        });
        req
    }

    /// Sends a prepared request; the manager's replies are returned raw.
    pub fn send(&self, request: ChatRequest) -> Result<String, AgentError> {
        self.call(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{FixtureKey, ScriptedBackend};
    use crate::course::fixtures::course;
    use crate::roster::default_roster;
    use crate::session::FunctionRegistry;

    fn ctx<'a>(course: &'a Course, roster: &'a Roster, page: usize) -> PromptContext<'a> {
        PromptContext {
            course,
            roster,
            phase: Phase::Running,
            taught_upto: page,
            history: &[],
        }
    }

    #[test]
    fn teacher_replays_mock_fixture() {
        let roster = default_roster();
        let c = course(3);
        let backend = Arc::new(ScriptedBackend::keyed([(FixtureKey::new("teacher", Some(1)), "Welcome!")]).unwrap());
        let teacher = instantiate_agent(roster.teacher().clone(), backend).unwrap();
        assert_eq!(teacher.teach(&ctx(&c, &roster, 1), c.page(1).unwrap()).unwrap(), "Welcome!");
    }

    #[test]
    fn teach_prompt_contains_script_verbatim() {
        let roster = default_roster();
        let mut c = course(3);
        c.pages[1].script = "Backpropagation adjusts the weights — layer by layer.".into();
        let backend = Arc::new(ScriptedBackend::ordered(["ok"]).unwrap());
        let teacher = instantiate_agent(roster.teacher().clone(), backend.clone()).unwrap();
        teacher.teach(&ctx(&c, &roster, 2), c.page(2).unwrap()).unwrap();
        let req = &backend.requests()[0];
        assert_eq!(req.page, Some(2));
        assert!(req.prompt_text().contains(&c.pages[1].script));
        assert!(req.system.contains(&roster.teacher().persona));
    }

    #[test]
    fn empty_persona_is_a_precondition_error() {
        let mut spec = default_roster().get("class_clown").unwrap().clone();
        spec.persona.clear();
        let backend = Arc::new(ScriptedBackend::ordered(["x"]).unwrap());
        assert!(matches!(instantiate_agent(spec, backend), Err(AgentError::Spec(_))));
    }

    #[test]
    fn backend_failure_names_agent() {
        let roster = default_roster();
        let c = course(1);
        let backend = Arc::new(ScriptedBackend::keyed([(FixtureKey::new("teacher", Some(9)), "x")]).unwrap());
        let agent = instantiate_agent(roster.get("assistant").unwrap().clone(), backend).unwrap();
        let reg = FunctionRegistry::default();
        let err = agent.interact(&ctx(&c, &roster, 1), reg.get("interact").unwrap()).unwrap_err();
        match err {
            AgentError::Backend { agent_id, .. } => assert_eq!(agent_id, "assistant"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn manager_runs_cold() {
        let roster = default_roster();
        let backend = Arc::new(ScriptedBackend::ordered(["x"]).unwrap());
        let m = instantiate_agent(roster.manager().clone(), backend).unwrap();
        let c = course(2);
        let req = m.decide_request(&ctx(&c, &roster, 1), &[], |_| String::new());
        assert_eq!(req.temperature, 0.0);
        assert!(req.prompt_text().contains("\"function\""));
    }
}
