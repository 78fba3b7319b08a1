//! Parsing and validating the manager's `(agent, function)` choice.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::function::{ClassFunction, FunctionCategory, FunctionRegistry, INTERACT, NEXT_PAGE, TEACH};
use super::state::{ClassState, Phase, SessionConfig};
use crate::backend::DecisionOption;
use crate::roster::AgentKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManagerDecision {
    pub agent_id: String,
    pub function: ClassFunction,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecisionError {
    #[error("no JSON object found in the reply")]
    NoJson,
    #[error("field `{0}` is missing or not a string")]
    MissingField(&'static str),
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("the manager cannot be chosen as a speaker")]
    ManagerChosen,
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("`{function}` cannot be performed by `{agent}`: {reason}")]
    Illegal {
        agent: String,
        function: String,
        reason: String,
    },
}

/// Every `(agent, function)` pair that is legal in `state`.
///
/// Running: tutoring functions for the teacher; interacting functions for
/// eligible agents unless interactions are disabled. Once the per-page action
/// budget is spent only `next_page` remains. Closing: interacting functions
/// only.
pub fn legal_options(state: &ClassState, registry: &FunctionRegistry, config: &SessionConfig) -> Vec<DecisionOption> {
    let mut out = Vec::new();
    if !state.phase.is_active() {
        return out;
    }
    let budget_spent = state.phase == Phase::Running && state.actions_on_page >= config.max_actions_per_page;
    for desc in registry.iter() {
        let allowed_here = match desc.category {
            FunctionCategory::Tutoring => {
                state.phase == Phase::Running && (!budget_spent || desc.id == NEXT_PAGE)
            }
            FunctionCategory::Interacting => state.roster.interactions_enabled() && !budget_spent,
        };
        if !allowed_here {
            continue;
        }
        for agent in state.roster.speakers().filter(|a| desc.allows(a.kind)) {
            out.push(DecisionOption {
                agent: agent.id.clone(),
                function: desc.id.clone(),
            });
        }
    }
    out
}

/// Finds the first JSON object embedded in `text`.
fn extract_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    text.match_indices('{').find_map(|(i, _)| {
        serde_json::Deserializer::from_str(&text[i..])
            .into_iter::<Value>()
            .next()
            .and_then(Result::ok)
            .and_then(|v| match v {
                Value::Object(m) => Some(m),
                _ => None,
            })
    })
}

/// Parses a raw manager reply and checks it against `state`.
pub fn parse_decision(
    text: &str,
    state: &ClassState,
    registry: &FunctionRegistry,
    config: &SessionConfig,
) -> Result<ManagerDecision, DecisionError> {
    let obj = extract_object(text).ok_or(DecisionError::NoJson)?;
    let field = |name: &'static str| {
        obj.get(name)
            .and_then(Value::as_str)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .ok_or(DecisionError::MissingField(name))
    };
    let agent_id = field("agent")?.to_string();
    let function_id = field("function")?.to_string();

    let spec = state
        .roster
        .get(&agent_id)
        .ok_or_else(|| DecisionError::UnknownAgent(agent_id.clone()))?;
    if spec.kind == AgentKind::Manager {
        return Err(DecisionError::ManagerChosen);
    }
    let desc = registry
        .get(&function_id)
        .ok_or_else(|| DecisionError::UnknownFunction(function_id.clone()))?;

    let illegal = |reason: &str| DecisionError::Illegal {
        agent: agent_id.clone(),
        function: function_id.clone(),
        reason: reason.to_string(),
    };
    if !desc.allows(spec.kind) {
        return Err(illegal(match desc.category {
            FunctionCategory::Tutoring => "tutoring functions can only be performed by the teacher",
            FunctionCategory::Interacting => "agent kind is not eligible for this function",
        }));
    }
    if desc.id == TEACH {
        if let Some(page) = obj.get("page") {
            if page.as_u64() != Some(state.taught_upto as u64) {
                return Err(illegal("only the current page can be taught"));
            }
        }
    }
    let legal = legal_options(state, registry, config);
    if !legal.iter().any(|o| o.agent == agent_id && o.function == function_id) {
        let reason = if desc.category == FunctionCategory::Interacting && !state.roster.interactions_enabled() {
            "interactions are disabled in this class"
        } else if desc.category == FunctionCategory::Tutoring && state.phase == Phase::Closing {
            "all pages have been taught"
        } else if state.actions_on_page >= config.max_actions_per_page {
            "the action budget for this page is spent; move to the next page"
        } else {
            "not allowed in the current class phase"
        };
        return Err(illegal(reason));
    }

    let function = match desc.id.as_str() {
        TEACH => ClassFunction::Teach {
            page: state.taught_upto,
        },
        NEXT_PAGE => ClassFunction::NextPage,
        INTERACT => ClassFunction::Interact {
            agent_id: agent_id.clone(),
        },
        other => ClassFunction::Custom {
            id: other.to_string(),
            agent_id: agent_id.clone(),
        },
    };
    Ok(ManagerDecision { agent_id, function })
}

/// Decision used when the manager fails to produce a valid one: advance
/// while the class is running, let the teacher respond while closing.
/// `None` when nothing is legal (closing with interactions disabled).
pub fn fallback_decision(state: &ClassState) -> Option<ManagerDecision> {
    let teacher = state.roster.teacher().id.clone();
    match state.phase {
        Phase::Running => Some(ManagerDecision {
            agent_id: teacher,
            function: ClassFunction::NextPage,
        }),
        Phase::Closing if state.roster.interactions_enabled() => Some(ManagerDecision {
            agent_id: teacher.clone(),
            function: ClassFunction::Interact { agent_id: teacher },
        }),
        _ => None,
    }
}
