use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::event::{ts_millis, Utterance};
use crate::roster::Roster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Running,
    Closing,
    Closed,
}

impl Phase {
    pub fn can_advance_to(self, next: Phase) -> bool {
        matches!(
            (self, next),
            (Phase::Init, Phase::Running) | (Phase::Running, Phase::Closing) | (Phase::Closing, Phase::Closed)
        )
    }

    pub fn is_active(self) -> bool {
        matches!(self, Phase::Running | Phase::Closing)
    }
}

/// Everything the manager can observe: the taught prefix of the course, the
/// dialogue history and the roster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassState {
    pub course_id: String,
    pub page_count: usize,
    /// Pages `1..=taught_upto` have been taught.
    pub taught_upto: usize,
    pub history: Vec<Utterance>,
    pub roster: Roster,
    pub phase: Phase,
    #[serde(with = "ts_millis")]
    pub last_action_at: DateTime<Utc>,
    /// Non-advancing actions executed on the current page.
    pub actions_on_page: usize,
    /// Idle windows left before a closing class ends.
    pub closing_budget: u32,
    /// Seq of the last event emitted.
    pub last_seq: u64,
}

impl ClassState {
    pub fn pages_remaining(&self) -> usize {
        self.page_count - self.taught_upto
    }

    /// The most recent `window` utterances.
    pub fn recent_history(&self, window: usize) -> &[Utterance] {
        let start = self.history.len().saturating_sub(window);
        &self.history[start..]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Idle window after an action before the manager is triggered again.
    #[serde(rename = "tau_s", with = "secs_f64")]
    pub tau: Duration,
    /// Utterances serialized into prompts.
    pub history_window: usize,
    /// Idle windows of discussion allowed after the last page.
    pub closing_windows: u32,
    /// Corrective reprompts before falling back to a default decision.
    pub max_decision_retries: u32,
    /// Non-advancing actions (teach, interactions) allowed per page before
    /// only `next_page` remains legal.
    pub max_actions_per_page: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            tau: Duration::from_secs(30),
            history_window: 40,
            closing_windows: 1,
            max_decision_retries: 2,
            max_actions_per_page: 8,
        }
    }
}

impl SessionConfig {
    /// Scripted runs without a human: no waiting between actions.
    pub fn headless() -> Self {
        SessionConfig {
            tau: Duration::ZERO,
            ..SessionConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.history_window == 0 {
            return Err("history_window must be at least 1".into());
        }
        if self.max_actions_per_page == 0 {
            return Err("max_actions_per_page must be at least 1".into());
        }
        Ok(())
    }
}

mod secs_f64 {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phases_only_move_forward_one_step() {
        use Phase::*;
        assert!(Init.can_advance_to(Running));
        assert!(Running.can_advance_to(Closing));
        assert!(Closing.can_advance_to(Closed));
        assert!(!Init.can_advance_to(Closing));
        assert!(!Closed.can_advance_to(Running));
        assert!(!Running.can_advance_to(Running));
    }

    #[test]
    fn config_round_trips_with_seconds() {
        let cfg = SessionConfig {
            tau: Duration::from_millis(1500),
            ..SessionConfig::default()
        };
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"tau_s\":1.5"));
        assert_eq!(serde_json::from_str::<SessionConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn negative_tau_is_rejected() {
        assert!(serde_json::from_str::<SessionConfig>(r#"{"tau_s":-1}"#).is_err());
    }
}
