//! Class roles, their behavior tags, and the default cast.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const DEFAULT_ROSTER: &str = include_str!("../data/default_roster.json");

/// The four classroom behaviors a role can cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RoleBehavior {
    /// Teaching and Initiation.
    #[serde(rename = "TI")]
    TeachingInitiation,
    /// In-depth Discussion.
    #[serde(rename = "ID")]
    InDepthDiscussion,
    /// Emotional Companionship.
    #[serde(rename = "EC")]
    EmotionalCompanionship,
    /// Classroom Management.
    #[serde(rename = "CM")]
    ClassroomManagement,
}

impl RoleBehavior {
    pub const ALL: [RoleBehavior; 4] = [
        RoleBehavior::TeachingInitiation,
        RoleBehavior::InDepthDiscussion,
        RoleBehavior::EmotionalCompanionship,
        RoleBehavior::ClassroomManagement,
    ];

    pub fn acronym(self) -> &'static str {
        match self {
            RoleBehavior::TeachingInitiation => "TI",
            RoleBehavior::InDepthDiscussion => "ID",
            RoleBehavior::EmotionalCompanionship => "EC",
            RoleBehavior::ClassroomManagement => "CM",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Teacher,
    Assistant,
    Classmate,
    Manager,
}

impl AgentKind {
    /// Kinds that may appear as a speaker in a transcript.
    pub fn is_visible(self) -> bool {
        !matches!(self, AgentKind::Manager)
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentKind::Teacher => "teacher",
            AgentKind::Assistant => "assistant",
            AgentKind::Classmate => "classmate",
            AgentKind::Manager => "manager",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: String,
    pub display_name: String,
    pub kind: AgentKind,
    #[serde(default)]
    pub behaviors: BTreeSet<RoleBehavior>,
    /// System prompt describing the role.
    #[serde(default)]
    pub persona: String,
    /// Display color for the classroom UI; not used by the engine.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
}

impl AgentSpec {
    pub fn behavior_acronyms(&self) -> String {
        self.behaviors
            .iter()
            .map(|b| b.acronym())
            .collect::<Vec<_>>()
            .join(", ")
    }

    pub fn validate(&self) -> Result<(), RosterError> {
        let fail = |reason: String| {
            Err(RosterError::InvalidSpec {
                id: self.id.clone(),
                reason,
            })
        };
        if self.id.trim().is_empty() {
            return fail("empty id".into());
        }
        let required: Option<BTreeSet<RoleBehavior>> = match self.kind {
            AgentKind::Teacher => Some(RoleBehavior::ALL.into_iter().collect()),
            AgentKind::Assistant => Some(
                [
                    RoleBehavior::InDepthDiscussion,
                    RoleBehavior::EmotionalCompanionship,
                    RoleBehavior::ClassroomManagement,
                ]
                .into_iter()
                .collect(),
            ),
            AgentKind::Manager => Some(BTreeSet::new()),
            AgentKind::Classmate => None,
        };
        if let Some(required) = required {
            if self.behaviors != required {
                return fail(format!(
                    "{} must have behaviors [{}]",
                    self.kind,
                    required.iter().map(|b| b.acronym()).collect::<Vec<_>>().join(", ")
                ));
            }
        }
        if self.kind != AgentKind::Manager && self.persona.trim().is_empty() {
            return fail("empty persona".into());
        }
        Ok(())
    }
}

/// Which of the three system settings a roster realizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// Classmate agents removed.
    NoClassmates,
    /// Classmates removed, user input rejected, manager limited to tutoring
    /// functions.
    NoInteractions,
}

impl Ablation {
    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoClassmates => "no_classmates",
            Ablation::NoInteractions => "no_interactions",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = RosterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").to_ascii_lowercase().as_str() {
            "full" => Ok(Ablation::Full),
            "no_classmates" | "wo_stu" => Ok(Ablation::NoClassmates),
            "no_interactions" | "wo_int" => Ok(Ablation::NoInteractions),
            other => Err(RosterError::UnknownAblation(other.to_string())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RosterError {
    #[error("agent `{id}`: {reason}")]
    InvalidSpec { id: String, reason: String },
    #[error("invalid roster: {0}")]
    Invalid(String),
    #[error("unknown ablation mode `{0}`")]
    UnknownAblation(String),
    #[error("failed to parse roster: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roster {
    agents: Vec<AgentSpec>,
    ablation: Ablation,
}

impl Roster {
    pub fn new(agents: Vec<AgentSpec>, ablation: Ablation) -> Result<Self, RosterError> {
        let roster = Roster { agents, ablation };
        roster.validate()?;
        Ok(roster)
    }

    pub fn validate(&self) -> Result<(), RosterError> {
        let mut ids = HashSet::new();
        for spec in &self.agents {
            spec.validate()?;
            if !ids.insert(spec.id.as_str()) {
                return Err(RosterError::Invalid(format!("duplicate agent id `{}`", spec.id)));
            }
        }
        let count = |kind| self.agents.iter().filter(|a| a.kind == kind).count();
        if count(AgentKind::Teacher) != 1 {
            return Err(RosterError::Invalid("exactly one teacher required".into()));
        }
        if count(AgentKind::Manager) != 1 {
            return Err(RosterError::Invalid("exactly one manager required".into()));
        }
        if count(AgentKind::Assistant) > 1 {
            return Err(RosterError::Invalid("at most one assistant allowed".into()));
        }
        if self.ablation != Ablation::Full && count(AgentKind::Classmate) > 0 {
            return Err(RosterError::Invalid(format!(
                "{} roster cannot contain classmates",
                self.ablation
            )));
        }
        Ok(())
    }

    pub fn agents(&self) -> &[AgentSpec] {
        &self.agents
    }

    pub fn ablation(&self) -> Ablation {
        self.ablation
    }

    /// False under `NoInteractions`: user input is rejected and only tutoring
    /// functions may be chosen.
    pub fn interactions_enabled(&self) -> bool {
        self.ablation != Ablation::NoInteractions
    }

    pub fn get(&self, id: &str) -> Option<&AgentSpec> {
        self.agents.iter().find(|a| a.id == id)
    }

    pub fn teacher(&self) -> &AgentSpec {
        self.agents
            .iter()
            .find(|a| a.kind == AgentKind::Teacher)
            .expect("validated roster has a teacher")
    }

    pub fn manager(&self) -> &AgentSpec {
        self.agents
            .iter()
            .find(|a| a.kind == AgentKind::Manager)
            .expect("validated roster has a manager")
    }

    /// Agents that may be chosen as speakers; never includes the manager.
    pub fn speakers(&self) -> impl Iterator<Item = &AgentSpec> {
        self.agents.iter().filter(|a| a.kind.is_visible())
    }

    /// Replaces specs with matching ids and appends new ones.
    pub fn merge_overrides(&self, overrides: Vec<AgentSpec>) -> Result<Roster, RosterError> {
        let mut agents = self.agents.clone();
        for spec in overrides {
            match agents.iter_mut().find(|a| a.id == spec.id) {
                Some(slot) => *slot = spec,
                None => agents.push(spec),
            }
        }
        Roster::new(agents, self.ablation)
    }

    pub fn parse_overrides(json: &str) -> Result<Vec<AgentSpec>, RosterError> {
        serde_json::from_str(json).map_err(|e| RosterError::Parse(e.to_string()))
    }
}

/// Teacher, assistant, four classmates and the hidden manager.
pub fn default_roster() -> Roster {
    let agents: Vec<AgentSpec> =
        serde_json::from_str(DEFAULT_ROSTER).expect("bundled roster parses");
    Roster::new(agents, Ablation::Full).expect("bundled roster is valid")
}

pub fn apply_ablation(roster: &Roster, mode: Ablation) -> Roster {
    let agents = match mode {
        Ablation::Full => roster.agents.clone(),
        Ablation::NoClassmates | Ablation::NoInteractions => roster
            .agents
            .iter()
            .filter(|a| a.kind != AgentKind::Classmate)
            .cloned()
            .collect(),
    };
    Roster {
        agents,
        ablation: mode,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use RoleBehavior::*;

    fn behaviors(list: &[RoleBehavior]) -> BTreeSet<RoleBehavior> {
        list.iter().copied().collect()
    }

    /// Role table the default cast must reproduce.
    fn expected_table() -> Vec<(&'static str, AgentKind, BTreeSet<RoleBehavior>)> {
        vec![
            ("teacher", AgentKind::Teacher, behaviors(&RoleBehavior::ALL)),
            (
                "assistant",
                AgentKind::Assistant,
                behaviors(&[InDepthDiscussion, EmotionalCompanionship, ClassroomManagement]),
            ),
            (
                "class_clown",
                AgentKind::Classmate,
                behaviors(&[TeachingInitiation, EmotionalCompanionship, ClassroomManagement]),
            ),
            (
                "deep_thinker",
                AgentKind::Classmate,
                behaviors(&[TeachingInitiation, InDepthDiscussion]),
            ),
            (
                "note_taker",
                AgentKind::Classmate,
                behaviors(&[TeachingInitiation, ClassroomManagement]),
            ),
            (
                "inquisitive_mind",
                AgentKind::Classmate,
                behaviors(&[TeachingInitiation, EmotionalCompanionship]),
            ),
            ("manager", AgentKind::Manager, BTreeSet::new()),
        ]
    }

    fn check_against_table(roster: &Roster) {
        for spec in roster.agents() {
            let (_, kind, expected) = expected_table()
                .into_iter()
                .find(|(id, _, _)| *id == spec.id)
                .unwrap_or_else(|| panic!("unexpected agent {}", spec.id));
            assert_eq!(spec.kind, kind);
            assert_eq!(spec.behaviors, expected, "{}", spec.id);
        }
    }

    #[test]
    fn default_roster_has_seven_specs_four_classmates() {
        let r = default_roster();
        assert_eq!(r.agents().len(), 7);
        assert_eq!(
            r.agents().iter().filter(|a| a.kind == AgentKind::Classmate).count(),
            4
        );
        check_against_table(&r);
        assert_eq!(r.get("deep_thinker").unwrap().behavior_acronyms(), "TI, ID");
    }

    #[test]
    fn manager_is_never_a_speaker() {
        let r = default_roster();
        assert!(r.get("manager").is_some());
        assert!(r.speakers().all(|a| a.kind != AgentKind::Manager));
        assert_eq!(r.speakers().count(), 6);
    }

    #[test]
    fn no_classmates_keeps_teaching_agents() {
        let r = apply_ablation(&default_roster(), Ablation::NoClassmates);
        let ids: Vec<_> = r.agents().iter().map(|a| a.id.as_str()).collect();
        assert_eq!(ids, ["teacher", "assistant", "manager"]);
        assert!(r.interactions_enabled());
        r.validate().unwrap();
    }

    #[test]
    fn no_interactions_matches_no_classmates_plus_flag() {
        let base = default_roster();
        let a = apply_ablation(&base, Ablation::NoClassmates);
        let b = apply_ablation(&base, Ablation::NoInteractions);
        assert_eq!(a.agents(), b.agents());
        assert!(!b.interactions_enabled());
    }

    #[test]
    fn full_ablation_is_identity() {
        let base = default_roster();
        assert_eq!(apply_ablation(&base, Ablation::Full), base);
    }

    #[test]
    fn classmate_with_empty_persona_is_invalid() {
        let mut spec = default_roster().get("note_taker").unwrap().clone();
        spec.persona = "  ".into();
        assert!(matches!(spec.validate(), Err(RosterError::InvalidSpec { .. })));
    }

    #[test]
    fn teacher_behaviors_are_fixed() {
        let mut spec = default_roster().teacher().clone();
        spec.behaviors.remove(&EmotionalCompanionship);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn overrides_merge_by_id() {
        let json = r#"[
            {"id":"deep_thinker","display_name":"Philosopher","kind":"classmate",
             "behaviors":["ID"],"persona":"You question everything."},
            {"id":"skeptic","display_name":"Skeptic","kind":"classmate",
             "behaviors":["ID","CM"],"persona":"You doubt claims politely."}
        ]"#;
        let merged = default_roster()
            .merge_overrides(Roster::parse_overrides(json).unwrap())
            .unwrap();
        assert_eq!(merged.agents().len(), 8);
        assert_eq!(merged.get("deep_thinker").unwrap().display_name, "Philosopher");
        assert!(merged.get("skeptic").is_some());
    }

    #[test]
    fn second_teacher_override_is_rejected() {
        let json = r#"[{"id":"t2","display_name":"T2","kind":"teacher",
            "behaviors":["TI","ID","EC","CM"],"persona":"p"}]"#;
        let err = default_roster()
            .merge_overrides(Roster::parse_overrides(json).unwrap())
            .unwrap_err();
        assert!(matches!(err, RosterError::Invalid(_)));
    }

    #[test]
    fn ablation_parses_cli_spellings() {
        assert_eq!("no-interactions".parse::<Ablation>().unwrap(), Ablation::NoInteractions);
        assert_eq!("no_classmates".parse::<Ablation>().unwrap(), Ablation::NoClassmates);
        assert!("none".parse::<Ablation>().is_err());
    }

    fn any_ablation() -> impl Strategy<Value = Ablation> {
        prop_oneof![
            Just(Ablation::Full),
            Just(Ablation::NoClassmates),
            Just(Ablation::NoInteractions)
        ]
    }

    proptest! {
        #[test]
        fn ablation_is_idempotent_and_preserves_table(
            modes in proptest::collection::vec(any_ablation(), 1..4)
        ) {
            let mut r = default_roster();
            for m in &modes {
                r = apply_ablation(&r, *m);
            }
            let last = *modes.last().unwrap();
            prop_assert_eq!(apply_ablation(&r, last), r.clone());
            prop_assert!(r.validate().is_ok());
            check_against_table(&r);
            let mut ids = HashSet::new();
            prop_assert!(r.agents().iter().all(|a| ids.insert(a.id.clone())));
        }
    }
}
