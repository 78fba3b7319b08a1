use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{TimeZone, Utc};

use super::*;
use crate::backend::{BackendError, ChatBackend, ChatRequest, FnBackend, PolicyBackend, RequestTask};
use crate::course::fixtures::course;
use crate::event::{EventBody, SessionEvent, SpeakerKind, TriggerCause};
use crate::roster::{apply_ablation, default_roster, Ablation, Roster};

const NEXT: &str = r#"{"agent":"teacher","function":"next_page"}"#;

/// Manager replies are taken from `decisions` (then `next_page`); every other
/// agent answers with a line naming itself and the page.
fn backend(decisions: &[&str]) -> Arc<dyn ChatBackend> {
    let queue = Mutex::new(decisions.iter().map(|s| s.to_string()).collect::<VecDeque<_>>());
    Arc::new(FnBackend::new(move |req: &ChatRequest| {
        Ok(match req.task {
            RequestTask::Decide => queue.lock().unwrap().pop_front().unwrap_or_else(|| NEXT.to_string()),
            _ => format!("{} on page {}", req.speaker_id, req.page.unwrap_or(0)),
        })
    }))
}

fn t0() -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 9, 0, 0).unwrap()
}

fn session(pages: usize, roster: Roster, config: SessionConfig, b: Arc<dyn ChatBackend>) -> (ClassroomSession, ManualClock) {
    let clock = ManualClock::new(t0());
    let setup = SessionSetup::new("s", Arc::new(course(pages)), roster, config);
    let s = ClassroomSession::new(setup, b, Box::new(clock.clone())).unwrap();
    (s, clock)
}

fn kinds(events: &[SessionEvent]) -> Vec<&'static str> {
    events.iter().map(SessionEvent::kind).collect()
}

fn secs(n: u64) -> chrono::DateTime<Utc> {
    t0() + chrono::Duration::seconds(n as i64)
}

#[test]
fn initialization_teaches_page_one() {
    let (mut s, _) = session(3, default_roster(), SessionConfig::default(), backend(&[]));
    s.initialize().unwrap();
    assert_eq!(s.state().taught_upto, 1);
    assert_eq!(s.state().phase, Phase::Running);
    assert_eq!(kinds(s.events()), ["page_change", "utterance", "phase_change"]);
    let u = &s.state().history[0];
    assert_eq!((u.speaker_id.as_str(), u.function_id.as_str(), u.page), ("teacher", "teach", 1));
    assert_eq!(u.seq, 2);
    assert!(matches!(s.initialize(), Err(SessionError::Phase(Phase::Running))));
}

#[test]
fn next_page_advances_by_one_and_teaches() {
    let (mut s, _) = session(3, default_roster(), SessionConfig::default(), backend(&[]));
    s.initialize().unwrap();
    let d = ManagerDecision {
        agent_id: "teacher".into(),
        function: ClassFunction::NextPage,
    };
    let out = s.execute_function(&d).unwrap();
    assert_eq!(s.state().taught_upto, 2);
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].text, "teacher on page 2");
    assert!(matches!(s.events()[3].body, EventBody::PageChange { page: 2 }));
}

#[test]
fn next_page_on_final_page_starts_closing() {
    let (mut s, _) = session(1, default_roster(), SessionConfig::default(), backend(&[]));
    s.initialize().unwrap();
    let d = ManagerDecision {
        agent_id: "teacher".into(),
        function: ClassFunction::NextPage,
    };
    assert!(s.execute_function(&d).unwrap().is_empty());
    assert_eq!(s.state().phase, Phase::Closing);
    assert_eq!(s.state().taught_upto, 1);
}

#[test]
fn idle_window_boundary() {
    let (mut s, clock) = session(3, default_roster(), SessionConfig::default(), backend(&[]));
    s.initialize().unwrap();
    let before = s.events().len();
    assert_eq!(s.time_until_expiry(secs(10)), Duration::from_secs(20));
    assert_eq!(s.tick(secs(29)).unwrap(), None);
    assert_eq!(s.events().len(), before);
    clock.set(secs(30));
    let d = s.tick(secs(30)).unwrap().unwrap();
    assert_eq!(d.function, ClassFunction::NextPage);
    assert!(matches!(
        s.events()[before].body,
        EventBody::Trigger {
            cause: TriggerCause::TauExpired
        }
    ));
    assert_eq!(s.state().last_action_at, secs(30));
}

#[test]
fn closing_with_one_window_closes_on_first_expiry() {
    let (mut s, _) = session(1, default_roster(), SessionConfig::default(), backend(&[]));
    s.initialize().unwrap();
    s.tick(secs(30)).unwrap();
    assert_eq!(s.state().phase, Phase::Closing);
    s.tick(secs(60)).unwrap();
    assert_eq!(s.state().phase, Phase::Closed);
    let tail = &s.events()[s.events().len() - 2..];
    assert_eq!(kinds(tail), ["survey_prompt", "phase_change"]);
    assert!(tail[1].is_terminal());
    assert!(matches!(s.tick(secs(90)), Err(SessionError::Phase(Phase::Closed))));
}

#[test]
fn zero_closing_windows_close_immediately() {
    let config = SessionConfig {
        closing_windows: 0,
        ..SessionConfig::default()
    };
    let (mut s, _) = session(1, default_roster(), config, backend(&[]));
    s.initialize().unwrap();
    s.tick(secs(30)).unwrap();
    assert_eq!(s.state().phase, Phase::Closed);
}

#[test]
fn closing_windows_allow_discussion() {
    let config = SessionConfig {
        closing_windows: 2,
        ..SessionConfig::default()
    };
    let talk = r#"{"agent":"class_clown","function":"interact"}"#;
    let (mut s, _) = session(1, default_roster(), config, backend(&[NEXT, talk]));
    s.initialize().unwrap();
    s.tick(secs(30)).unwrap();
    let d = s.tick(secs(60)).unwrap().unwrap();
    assert_eq!(d.agent_id, "class_clown");
    assert_eq!(s.state().phase, Phase::Closing);
    s.tick(secs(90)).unwrap();
    assert_eq!(s.state().phase, Phase::Closed);
}

#[test]
fn user_input_triggers_immediately() {
    let reply = r#"{"agent":"assistant","function":"interact"}"#;
    let (mut s, _) = session(3, default_roster(), SessionConfig::default(), backend(&[reply]));
    s.initialize().unwrap();
    let d = s.handle_user_utterance("  What is a gradient?  ").unwrap().unwrap();
    assert_eq!(d.agent_id, "assistant");
    let h = &s.state().history;
    assert_eq!(h[1].speaker_kind, SpeakerKind::User);
    assert_eq!(h[1].text, "What is a gradient?");
    assert_eq!(h[1].function_id, "user_input");
    assert_eq!(h[2].speaker_id, "assistant");
}

#[test]
fn user_input_rejections() {
    let (mut s, _) = session(
        2,
        apply_ablation(&default_roster(), Ablation::NoInteractions),
        SessionConfig::default(),
        backend(&[]),
    );
    s.initialize().unwrap();
    assert_eq!(s.handle_user_utterance("hi"), Err(SessionError::InteractionsDisabled));
    let (mut s, _) = session(2, default_roster(), SessionConfig::default(), backend(&[]));
    assert_eq!(s.handle_user_utterance("hi"), Err(SessionError::Phase(Phase::Init)));
    s.initialize().unwrap();
    assert_eq!(s.handle_user_utterance(" \n"), Err(SessionError::EmptyUtterance));
}

#[test]
fn malformed_replies_are_retried_then_accepted() {
    let (mut s, _) = session(
        3,
        default_roster(),
        SessionConfig::default(),
        backend(&["sure!", r#"{"agent":"manager","function":"interact"}"#, NEXT]),
    );
    s.initialize().unwrap();
    let out = s.decide_next().unwrap();
    assert_eq!(out.attempts, 3);
    assert!(!out.fallback);
}

#[test]
fn exhausted_retries_fall_back() {
    let bad = r#"{"agent":"teacher","function":"dance"}"#;
    let (mut s, _) = session(3, default_roster(), SessionConfig::default(), backend(&[bad, bad, bad]));
    s.initialize().unwrap();
    let out = s.decide_next().unwrap();
    assert_eq!(out.attempts, 3);
    assert!(out.fallback);
    assert_eq!(out.decision.unwrap().function, ClassFunction::NextPage);
}

#[test]
fn illegal_decisions_are_not_executed() {
    let (mut s, _) = session(3, apply_ablation(&default_roster(), Ablation::NoInteractions), SessionConfig::default(), backend(&[]));
    s.initialize().unwrap();
    let d = ManagerDecision {
        agent_id: "teacher".into(),
        function: ClassFunction::Interact {
            agent_id: "teacher".into(),
        },
    };
    assert!(matches!(s.execute_function(&d), Err(SessionError::IllegalDecision(_))));
    let d = ManagerDecision {
        agent_id: "teacher".into(),
        function: ClassFunction::Teach { page: 2 },
    };
    assert!(matches!(s.execute_function(&d), Err(SessionError::IllegalDecision(_))));
}

#[test]
fn action_budget_forces_progress() {
    let teach = r#"{"agent":"teacher","function":"teach"}"#;
    let config = SessionConfig {
        max_actions_per_page: 2,
        ..SessionConfig::headless()
    };
    let (mut s, _) = session(2, default_roster(), config, backend(&[teach, teach, teach, teach]));
    s.initialize().unwrap();
    s.tick(secs(0)).unwrap();
    s.tick(secs(0)).unwrap();
    assert_eq!(s.state().actions_on_page, 2);
    let opts = legal_options(s.state(), &FunctionRegistry::default(), s.config());
    assert_eq!(opts.len(), 1);
    assert_eq!(opts[0].function, "next_page");
}

#[test]
fn headless_no_interactions_is_pure_lecture() {
    let roster = apply_ablation(&default_roster(), Ablation::NoInteractions);
    let record = run_session(
        Arc::new(course(3)),
        roster,
        SessionConfig::headless(),
        &mut Silent,
        Arc::new(PolicyBackend::new(2)),
    )
    .unwrap();
    let us = record.utterances();
    let pages: Vec<usize> = us.iter().map(|u| u.page).collect();
    assert_eq!(pages, [1, 2, 3]);
    assert!(us.iter().all(|u| u.speaker_kind == SpeakerKind::Teacher && u.function_id == "teach"));
    assert!(record.is_closed());
    assert!(record.fault.is_none());
}

#[test]
fn replayed_user_messages_are_delivered_in_order() {
    let mut replay = ReplaySource::new([
        ReplayEntry {
            after_seq: 3,
            text: "Why does that work?".into(),
        },
        ReplayEntry {
            after_seq: 3,
            text: "Thanks!".into(),
        },
    ]);
    let record = run_session(
        Arc::new(course(2)),
        default_roster(),
        SessionConfig::default(),
        &mut replay,
        Arc::new(PolicyBackend::new(1)),
    )
    .unwrap();
    assert_eq!(replay.remaining(), 0);
    let user: Vec<String> = record
        .utterances()
        .into_iter()
        .filter(|u| u.speaker_kind == SpeakerKind::User)
        .map(|u| u.text)
        .collect();
    assert_eq!(user, ["Why does that work?", "Thanks!"]);
    assert_eq!(record.events[0].at, t0());
}

#[test]
fn backend_failure_faults_and_closes() {
    let b: Arc<dyn ChatBackend> = Arc::new(FnBackend::new(|req: &ChatRequest| match (&req.task, req.page) {
        (RequestTask::Teach, Some(2)) => Err(BackendError::Timeout),
        (RequestTask::Decide, _) => Ok(NEXT.to_string()),
        _ => Ok("fine".to_string()),
    }));
    let record = run_session(Arc::new(course(3)), default_roster(), SessionConfig::default(), &mut Silent, b).unwrap();
    let fault = record.fault.as_ref().expect("fault recorded");
    assert!(fault.message.contains("teacher"));
    assert_eq!(record.utterances().len(), 1);
    assert!(record.is_closed());
}

#[test]
fn sinks_see_every_event_in_order() {
    let seen = Arc::new(Mutex::new(Vec::new()));
    let (mut s, _) = session(2, default_roster(), SessionConfig::default(), backend(&[]));
    let sink = seen.clone();
    s.add_sink(Box::new(move |e: &SessionEvent| {
        sink.lock().unwrap().push(e.seq);
        Ok(())
    }));
    s.initialize().unwrap();
    s.tick(secs(30)).unwrap();
    let seqs = seen.lock().unwrap().clone();
    assert_eq!(seqs, (1..=seqs.len() as u64).collect::<Vec<_>>());
    assert_eq!(seqs.len(), s.events().len());
}

#[test]
fn invalid_config_is_rejected() {
    let config = SessionConfig {
        history_window: 0,
        ..SessionConfig::default()
    };
    let setup = SessionSetup::new("s", Arc::new(course(1)), default_roster(), config);
    assert!(matches!(
        ClassroomSession::new(setup, backend(&[]), Box::new(SystemClock)),
        Err(SessionError::Config(_))
    ));
}
