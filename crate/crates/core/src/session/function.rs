use std::fmt;

use serde::{Deserialize, Serialize};

use crate::roster::AgentKind;

pub const TEACH: &str = "teach";
pub const NEXT_PAGE: &str = "next_page";
pub const INTERACT: &str = "interact";

/// Tutoring functions (X) belong to the teacher; interacting functions (Y)
/// can be performed by any visible agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FunctionCategory {
    #[serde(rename = "tutoring")]
    Tutoring,
    #[serde(rename = "interacting")]
    Interacting,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "function", rename_all = "snake_case")]
pub enum ClassFunction {
    /// Deliver the script of `page`.
    Teach { page: usize },
    /// Advance to the next page and teach it.
    NextPage,
    /// One contribution by `agent_id`, conditioned on history and current page.
    Interact { agent_id: String },
    /// A function added through [`FunctionRegistry::register`].
    Custom { id: String, agent_id: String },
}

impl ClassFunction {
    pub fn id(&self) -> &str {
        match self {
            ClassFunction::Teach { .. } => TEACH,
            ClassFunction::NextPage => NEXT_PAGE,
            ClassFunction::Interact { .. } => INTERACT,
            ClassFunction::Custom { id, .. } => id,
        }
    }
}

impl fmt::Display for ClassFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassFunction::Teach { page } => write!(f, "teach(page {page})"),
            ClassFunction::NextPage => f.write_str("next_page"),
            ClassFunction::Interact { agent_id } => write!(f, "interact({agent_id})"),
            ClassFunction::Custom { id, agent_id } => write!(f, "{id}({agent_id})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionDescriptor {
    pub id: String,
    pub category: FunctionCategory,
    pub eligible: Vec<AgentKind>,
    /// Shown to the manager when listing options.
    pub description: String,
    /// Task instruction given to the performing agent. Unused by `teach` and
    /// `next_page`, whose prompts are built from the page script.
    pub instruction: String,
}

impl FunctionDescriptor {
    pub fn allows(&self, kind: AgentKind) -> bool {
        self.eligible.contains(&kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("function `{0}` is already registered")]
    Duplicate(String),
    #[error("function `{id}`: {reason}")]
    Invalid { id: String, reason: String },
}

/// The set of functions the manager may choose from. Pluggable: extra
/// functions declare their category and which agent kinds may perform them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRegistry {
    functions: Vec<FunctionDescriptor>,
}

impl Default for FunctionRegistry {
    fn default() -> Self {
        FunctionRegistry {
            functions: vec![
                FunctionDescriptor {
                    id: TEACH.into(),
                    category: FunctionCategory::Tutoring,
                    eligible: vec![AgentKind::Teacher],
                    description: "teacher delivers the current page's script again".into(),
                    instruction: String::new(),
                },
                FunctionDescriptor {
                    id: NEXT_PAGE.into(),
                    category: FunctionCategory::Tutoring,
                    eligible: vec![AgentKind::Teacher],
                    description: "teacher moves to the next page and teaches it".into(),
                    instruction: String::new(),
                },
                FunctionDescriptor {
                    id: INTERACT.into(),
                    category: FunctionCategory::Interacting,
                    eligible: vec![AgentKind::Teacher, AgentKind::Assistant, AgentKind::Classmate],
                    description: "the chosen agent speaks once, responding to the discussion".into(),
                    instruction: "Contribute one turn to the class discussion in your role. \
                                  Respond to what was just said if it calls for it; keep it concise."
                        .into(),
                },
            ],
        }
    }
}

impl FunctionRegistry {
    pub fn register(&mut self, desc: FunctionDescriptor) -> Result<(), RegistryError> {
        let invalid = |reason: &str| RegistryError::Invalid {
            id: desc.id.clone(),
            reason: reason.into(),
        };
        if desc.id.trim().is_empty() || desc.id == crate::event::USER_INPUT_FUNCTION {
            return Err(invalid("reserved or empty id"));
        }
        if self.get(&desc.id).is_some() {
            return Err(RegistryError::Duplicate(desc.id));
        }
        if desc.eligible.is_empty() {
            return Err(invalid("no eligible agent kinds"));
        }
        if desc.eligible.contains(&AgentKind::Manager) {
            return Err(invalid("the manager never performs functions"));
        }
        if desc.category == FunctionCategory::Tutoring && desc.eligible != [AgentKind::Teacher] {
            return Err(invalid("tutoring functions are teacher-only"));
        }
        if desc.instruction.trim().is_empty() {
            return Err(invalid("empty instruction"));
        }
        self.functions.push(desc);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&FunctionDescriptor> {
        self.functions.iter().find(|f| f.id == id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &FunctionDescriptor> {
        self.functions.iter()
    }

    pub fn category_of(&self, function: &ClassFunction) -> Option<FunctionCategory> {
        self.get(function.id()).map(|d| d.category)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exercise(category: FunctionCategory, eligible: Vec<AgentKind>) -> FunctionDescriptor {
        FunctionDescriptor {
            id: "show_exercise".into(),
            category,
            eligible,
            description: "display an exercise".into(),
            instruction: "Pose a short exercise on the current page.".into(),
        }
    }

    #[test]
    fn builtins_have_expected_categories() {
        let r = FunctionRegistry::default();
        let cat = |f: &ClassFunction| r.category_of(f).unwrap();
        assert_eq!(cat(&ClassFunction::Teach { page: 1 }), FunctionCategory::Tutoring);
        assert_eq!(cat(&ClassFunction::NextPage), FunctionCategory::Tutoring);
        assert_eq!(
            cat(&ClassFunction::Interact { agent_id: "x".into() }),
            FunctionCategory::Interacting
        );
    }

    #[test]
    fn custom_function_registers() {
        let mut r = FunctionRegistry::default();
        r.register(exercise(FunctionCategory::Tutoring, vec![AgentKind::Teacher])).unwrap();
        assert!(r.get("show_exercise").unwrap().allows(AgentKind::Teacher));
        assert_eq!(
            r.register(exercise(FunctionCategory::Tutoring, vec![AgentKind::Teacher])),
            Err(RegistryError::Duplicate("show_exercise".into()))
        );
    }

    #[test]
    fn tutoring_function_for_classmates_is_rejected() {
        let mut r = FunctionRegistry::default();
        let err = r
            .register(exercise(FunctionCategory::Tutoring, vec![AgentKind::Teacher, AgentKind::Classmate]))
            .unwrap_err();
        assert!(matches!(err, RegistryError::Invalid { .. }));
        assert!(r
            .register(exercise(FunctionCategory::Interacting, vec![AgentKind::Manager]))
            .is_err());
    }
}
