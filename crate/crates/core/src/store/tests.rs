use std::fs::OpenOptions;
use std::io::Write;

use chrono::{TimeZone, Utc};

use super::*;
use crate::event::{EventBody, SpeakerKind};
use crate::roster::{apply_ablation, default_roster};

fn header(id: &str, setting: Ablation) -> SessionHeader {
    SessionHeader {
        session_id: id.into(),
        course_id: "tagi".into(),
        setting,
        created_at: Utc.with_ymd_and_hms(2024, 5, 1, 10, 0, 0).unwrap(),
        roster: apply_ablation(&default_roster(), setting),
        config: SessionConfig::default(),
    }
}

fn utterance(seq: u64, text: &str) -> SessionEvent {
    SessionEvent {
        seq,
        at: Utc.timestamp_millis_opt(1_714_557_600_000 + seq as i64 * 1000).unwrap(),
        body: EventBody::Utterance {
            speaker_id: "teacher".into(),
            speaker_kind: SpeakerKind::Teacher,
            function_id: "teach".into(),
            page: 1,
            text: text.into(),
        },
    }
}

fn phase(seq: u64, from: Phase, to: Phase) -> SessionEvent {
    SessionEvent {
        seq,
        at: Utc.timestamp_millis_opt(1_714_557_600_000 + seq as i64 * 1000).unwrap(),
        body: EventBody::PhaseChange { from, to },
    }
}

fn survey() -> SurveyResponse {
    SurveyResponse::new("p1", 2, 1, 2).unwrap()
}

fn closed_session(store: &TranscriptStore, id: &str, setting: Ablation) -> SessionWriter {
    let mut w = store.create(&header(id, setting)).unwrap();
    w.append_event(&utterance(1, "Welcome.")).unwrap();
    w.append_event(&phase(2, Phase::Running, Phase::Closing)).unwrap();
    w.append_event(&phase(3, Phase::Closing, Phase::Closed)).unwrap();
    w
}

#[test]
fn appends_read_back_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let store = TranscriptStore::open(dir.path()).unwrap();
    let mut w = store.create(&header("s1", Ablation::Full)).unwrap();
    w.append_event(&utterance(1, "one")).unwrap();
    w.append_event(&utterance(2, "two")).unwrap();
    let rec = store.load_session("s1").unwrap();
    let texts: Vec<String> = rec.utterances().into_iter().map(|u| u.text).collect();
    assert_eq!(texts, ["one", "two"]);
    assert_eq!(&rec, w.record());
}

#[test]
fn duplicate_and_backwards_seq_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let store = TranscriptStore::open(dir.path()).unwrap();
    let mut w = store.create(&header("s1", Ablation::Full)).unwrap();
    w.append_event(&utterance(2, "two")).unwrap();
    assert!(matches!(w.append_event(&utterance(2, "again")), Err(StoreError::DuplicateSeq(2))));
    assert!(matches!(
        w.append_event(&utterance(1, "late")),
        Err(StoreError::OutOfOrder { last: 2, got: 1 })
    ));
    assert_eq!(store.load_session("s1").unwrap().events.len(), 1);
}

#[test]
fn closed_sessions_accept_only_attachments() {
    let dir = tempfile::tempdir().unwrap();
    let store = TranscriptStore::open(dir.path()).unwrap();
    let mut w = closed_session(&store, "s1", Ablation::Full);
    assert!(matches!(w.append_event(&utterance(4, "late")), Err(StoreError::Closed)));
    store.attach_survey("s1", survey()).unwrap();
    assert!(matches!(
        store.attach_survey("s1", survey()),
        Err(StoreError::AlreadyAttached("survey"))
    ));
    assert_eq!(store.load_session("s1").unwrap().survey, Some(survey()));
}

#[test]
fn survey_before_close_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let store = TranscriptStore::open(dir.path()).unwrap();
    let mut w = store.create(&header("s1", Ablation::Full)).unwrap();
    w.append_event(&utterance(1, "hi")).unwrap();
    assert!(matches!(
        store.attach_survey("s1", survey()),
        Err(StoreError::NotClosed("survey"))
    ));
}

#[test]
fn torn_tail_is_dropped_on_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let store = TranscriptStore::open(dir.path()).unwrap();
    let mut w = store.create(&header("s1", Ablation::Full)).unwrap();
    w.append_event(&utterance(1, "kept")).unwrap();
    drop(w);
    let path = store.path_of("s1").unwrap();
    OpenOptions::new()
        .append(true)
        .open(&path)
        .unwrap()
        .write_all(br#"{"type":"event","seq":2,"at":"2024-05"#)
        .unwrap();
    assert_eq!(store.load_session("s1").unwrap().events.len(), 1);
    let mut w = store.writer("s1").unwrap();
    w.append_event(&utterance(2, "after repair")).unwrap();
    let rec = store.load_session("s1").unwrap();
    assert_eq!(rec.events.len(), 2);
    assert_eq!(rec.utterances()[1].text, "after repair");
}

#[test]
fn corrupt_middle_line_is_an_error() {
    let text = format!(
        "{}\nnot json\n{}\n",
        serde_json::to_string(&StoreLine::Header(header("s1", Ablation::Full))).unwrap(),
        serde_json::to_string(&StoreLine::Event(utterance(1, "x"))).unwrap()
    );
    assert!(matches!(
        SessionRecord::from_jsonl(&text),
        Err(StoreError::Corrupt { line: 2, .. })
    ));
}

#[test]
fn export_import_round_trip() {
    let src = tempfile::tempdir().unwrap();
    let dst = tempfile::tempdir().unwrap();
    let a = TranscriptStore::open(src.path()).unwrap();
    closed_session(&a, "s1", Ablation::NoClassmates);
    a.attach_survey("s1", survey()).unwrap();
    let file = src.path().join("export.jsonl");
    a.export("s1", &file).unwrap();
    let b = TranscriptStore::open(dst.path()).unwrap();
    let imported = b.import(&file).unwrap();
    assert_eq!(imported, a.load_session("s1").unwrap());
    assert_eq!(b.load_session("s1").unwrap(), imported);
    assert!(matches!(b.import(&file), Err(StoreError::Exists(_))));
}

#[test]
fn list_filters_by_setting() {
    let dir = tempfile::tempdir().unwrap();
    let store = TranscriptStore::open(dir.path()).unwrap();
    store.create(&header("full-1", Ablation::Full)).unwrap();
    store.create(&header("nocl-1", Ablation::NoClassmates)).unwrap();
    store.create(&header("nocl-2", Ablation::NoClassmates)).unwrap();
    store.create(&header("noint-1", Ablation::NoInteractions)).unwrap();
    let filter = SessionFilter {
        setting: Some(Ablation::NoClassmates),
        ..Default::default()
    };
    let ids: Vec<String> = store
        .list_sessions(&filter)
        .unwrap()
        .into_iter()
        .map(|s| s.session_id)
        .collect();
    assert_eq!(ids, ["nocl-1", "nocl-2"]);
    assert_eq!(store.list_sessions(&SessionFilter::default()).unwrap().len(), 4);
}

#[test]
fn faulted_session_keeps_partial_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let store = TranscriptStore::open(dir.path()).unwrap();
    let mut w = store.create(&header("s1", Ablation::Full)).unwrap();
    w.append_event(&utterance(1, "page one")).unwrap();
    let fault = Fault {
        message: "agent `teacher`: timeout".into(),
        at: Utc.with_ymd_and_hms(2024, 5, 1, 10, 5, 0).unwrap(),
        after_seq: 1,
    };
    w.append(StoreLine::Fault(fault.clone())).unwrap();
    w.append_event(&phase(2, Phase::Running, Phase::Closing)).unwrap();
    w.append_event(&phase(3, Phase::Closing, Phase::Closed)).unwrap();
    let rec = store.load_session("s1").unwrap();
    assert_eq!(rec.fault, Some(fault));
    assert_eq!(rec.utterances().len(), 1);
    assert!(rec.is_closed());
}

#[test]
fn unsafe_ids_and_unknown_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let store = TranscriptStore::open(dir.path()).unwrap();
    for id in ["../x", "", ".hidden", "a/b", "index"] {
        assert!(matches!(store.create(&header(id, Ablation::Full)), Err(StoreError::InvalidId(_))));
    }
    assert!(matches!(store.load_session("nope"), Err(StoreError::UnknownSession(_))));
}

#[test]
fn header_line_shape() {
    let line = serde_json::to_value(StoreLine::Header(header("s1", Ablation::NoInteractions))).unwrap();
    assert_eq!(line["type"], "header");
    assert_eq!(line["setting"], "no_interactions");
    assert_eq!(line["created_at"], "2024-05-01T10:00:00.000Z");
    let ev = serde_json::to_value(StoreLine::Event(utterance(1, "x"))).unwrap();
    assert_eq!(ev["type"], "event");
    assert_eq!(ev["event"], "utterance");
}
