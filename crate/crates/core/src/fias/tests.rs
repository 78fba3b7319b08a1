use std::sync::Arc;
use std::time::Duration;

use chrono::{TimeZone, Utc};
use proptest::prelude::*;

use super::*;
use crate::backend::ScriptedBackend;
use crate::event::{EventBody, SessionEvent, SpeakerKind};
use crate::roster::{default_roster, Ablation};
use crate::session::SessionConfig;
use crate::store::{SessionHeader, SessionRecord};

fn seq(codes: &[u8]) -> EncodedSession {
    EncodedSession::from_codes("s", codes).unwrap()
}

/// Independent oracle: explicit padded vector and pairwise walk.
fn oracle(codes: &[u8]) -> ([[u64; 10]; 10], [u64; 10]) {
    let mut padded = vec![10u8];
    padded.extend_from_slice(codes);
    padded.push(10);
    let mut cells = [[0u64; 10]; 10];
    for w in padded.windows(2) {
        cells[w[0] as usize - 1][w[1] as usize - 1] += 1;
    }
    let mut tallies = [0u64; 10];
    for (i, row) in cells.iter().enumerate() {
        tallies[i] = row.iter().sum();
    }
    (cells, tallies)
}

#[test]
fn hand_enumerated_transitions() {
    let m = build_matrix(&seq(&[5, 5, 9])).unwrap();
    assert_eq!(m.at(10, 5), 1);
    assert_eq!(m.at(5, 5), 1);
    assert_eq!(m.at(5, 9), 1);
    assert_eq!(m.at(9, 10), 1);
    assert_eq!(m.total(), 4);
    let m = build_matrix(&seq(&[5])).unwrap();
    assert_eq!((m.at(10, 5), m.at(5, 10), m.total()), (1, 1, 2));
}

#[test]
fn empty_sequence_is_an_error() {
    assert_eq!(
        build_matrix(&seq(&[])),
        Err(FiasError::EmptySequence("s".into()))
    );
    assert_eq!(compute_metrics(&FiasMatrix::zero()), Err(FiasError::EmptyMatrix));
}

#[test]
fn metrics_from_row_sums() {
    // padded [10,5,5,9,10]: rows 10:1 5:2 9:1, four tallies
    let m = compute_metrics(&build_matrix(&seq(&[5, 5, 9])).unwrap()).unwrap();
    assert_eq!(m.tallies[4], 2);
    assert_eq!(m.tallies[8], 1);
    assert_eq!(m.tallies[9], 1);
    assert_eq!(m.tt, 0.5);
    assert_eq!(m.st, 0.25);
    assert_eq!(m.silence, 0.25);
    assert_eq!(m.idr, Some(0.0));
    assert_eq!(m.sir, 1.0);
    assert_eq!(m.tt_excluding_silence, Some(2.0 / 3.0));
    assert!(!m.flags.idr_undefined && !m.flags.sir_degenerate);
}

#[test]
fn teacher_only_sequence_has_no_student_talk() {
    let m = compute_metrics(&build_matrix(&seq(&[5, 5, 5, 5, 5])).unwrap()).unwrap();
    assert_eq!(m.st, 0.0);
    assert_eq!(m.sir, 0.0);
    assert!(m.flags.sir_degenerate);
}

#[test]
fn idr_undefined_without_direct_influence() {
    let m = compute_metrics(&build_matrix(&seq(&[2, 9])).unwrap()).unwrap();
    assert_eq!(m.idr, None);
    assert!(m.flags.idr_undefined);
}

#[test]
fn sum_identities() {
    let m = build_matrix(&seq(&[5, 9, 2])).unwrap();
    assert_eq!(sum_matrices(&[]), FiasMatrix::zero());
    assert_eq!(sum_matrices(&[m, FiasMatrix::zero()]), m);
    let a = build_matrix(&seq(&[5, 5])).unwrap();
    let b = build_matrix(&seq(&[5, 8])).unwrap();
    let s = sum_matrices(&[a, b]);
    assert_eq!(s.at(10, 5), 2);
    assert_eq!(s.at(5, 5), 1);
    assert_eq!(s.at(5, 10), 1);
    assert_eq!(s.at(5, 8), 1);
    assert_eq!(s.at(8, 10), 1);
    assert_eq!(s.total(), 6);
}

#[test]
fn quadrant_subtotals() {
    let mut m = FiasMatrix::zero();
    m.cells[4][4] = 4;
    let q = Quadrants::of(&m);
    assert_eq!((q.a, q.b, q.c, q.d), (4, 0, 0, 0));
    // [10, 5, 9, 3, 8, 8, 10]: 10->5 B, 5->9 C, 9->3 B, 3->8 C, 8->8 D, 8->10 D
    let m = build_matrix(&seq(&[5, 9, 3, 8, 8])).unwrap();
    let q = Quadrants::of(&m);
    assert_eq!((q.a, q.b, q.c, q.d), (0, 2, 2, 2));
}

#[test]
fn report_json_shape_and_round_trip() {
    let m = build_matrix(&seq(&[5, 5, 5])).unwrap();
    let r = report(&m, &compute_metrics(&m).unwrap());
    let v = serde_json::to_value(&r).unwrap();
    for key in ["matrix", "quadrants", "metrics", "flags"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    assert_eq!(v["flags"], serde_json::json!(["sir_degenerate"]));
    let back: FiasReport = serde_json::from_value(v).unwrap();
    assert_eq!(back, r);
    let text = r.to_text();
    assert!(text.contains("TT=0.750 ST=0.000"));
    assert!(text.contains("quadrants: A=2 B=1 C=1 D=0"));
}

#[test]
fn category_codes_serialize_as_integers() {
    let s = seq(&[5, 10, 9]);
    let line = serde_json::to_string(&s).unwrap();
    assert_eq!(line, r#"{"session_id":"s","sequence":[5,10,9]}"#);
    assert!(serde_json::from_str::<EncodedSession>(r#"{"session_id":"s","sequence":[11]}"#).is_err());
    assert_eq!(FiasCategory::Lecturing.to_string(), "5. Lecturing");
}

fn record(lines: &[(u32, SpeakerKind, &str, &str, &str)]) -> SessionRecord {
    let t0 = Utc.with_ymd_and_hms(2024, 1, 1, 9, 0, 0).unwrap();
    let events = lines
        .iter()
        .enumerate()
        .map(|(i, (secs, kind, speaker, function, text))| SessionEvent {
            seq: i as u64 + 1,
            at: t0 + chrono::Duration::seconds(i64::from(*secs)),
            body: EventBody::Utterance {
                speaker_id: speaker.to_string(),
                speaker_kind: *kind,
                function_id: function.to_string(),
                page: 1,
                text: text.to_string(),
            },
        })
        .collect();
    SessionRecord {
        header: SessionHeader {
            session_id: "golden".into(),
            course_id: "tagi".into(),
            setting: Ablation::Full,
            created_at: t0,
            roster: default_roster(),
            config: SessionConfig::default(),
        },
        events,
        survey: None,
        quiz: None,
        fault: None,
    }
}

fn golden() -> SessionRecord {
    use SpeakerKind::*;
    record(&[
        (0, Teacher, "teacher", "teach", "Today we look at how machines learn from data."),
        (5, Classmate, "inquisitive_mind", "interact", "How is that different from ordinary programming?"),
        (10, Teacher, "teacher", "interact", "Good question! The rules are learned, not written."),
        (40, User, "user", "user_input", "So the data decides the rules."),
        (45, Teacher, "teacher", "interact", "Right, the examples shape the model."),
        (50, Assistant, "assistant", "interact", "Can anyone give an example of such data?"),
        (55, Classmate, "deep_thinker", "interact", "Photos labelled with what they show."),
        (90, Teacher, "teacher", "teach", "Next, supervised learning."),
    ])
}

#[test]
fn rule_labeler_golden_sequence() {
    let enc = label_utterances(&golden(), &RuleLabeler::with_silence_gap(Duration::from_secs(30))).unwrap();
    let codes: Vec<u8> = enc.sequence.iter().map(|c| c.code()).collect();
    assert_eq!(codes, [5, 9, 2, 10, 9, 3, 4, 8, 10, 5]);
    assert!(enc.flagged.is_empty());
    let enc = label_utterances(&golden(), &RuleLabeler::new()).unwrap();
    assert_eq!(enc.sequence.len(), 8);
}

#[test]
fn llm_labeler_failures_are_flagged_silence() {
    let backend = Arc::new(ScriptedBackend::ordered(["5", "Category 9", "maybe?", "9", "3", "4", "8", "5"]).unwrap());
    let enc = label_utterances(&golden(), &LlmLabeler::new(backend.clone())).unwrap();
    let codes: Vec<u8> = enc.sequence.iter().map(|c| c.code()).collect();
    assert_eq!(codes, [5, 9, 10, 9, 3, 4, 8, 5]);
    assert_eq!(enc.flagged, [2]);
    let req = &backend.requests()[1];
    assert!(req.prompt_text().contains("How is that different"));
    assert_eq!(req.temperature, 0.0);
}

#[test]
fn empty_transcript_cannot_be_labeled() {
    let r = record(&[]);
    assert_eq!(
        label_utterances(&r, &RuleLabeler::new()),
        Err(FiasError::EmptyTranscript("golden".into()))
    );
}

fn codes() -> impl Strategy<Value = Vec<u8>> {
    proptest::collection::vec(1u8..=10, 1..=50)
}

proptest! {
    #[test]
    fn matches_oracle(s in codes()) {
        let m = build_matrix(&seq(&s)).unwrap();
        let (cells, tallies) = oracle(&s);
        prop_assert_eq!(m.cells, cells);
        let metrics = compute_metrics(&m).unwrap();
        prop_assert_eq!(metrics.tallies, tallies);
        let total: u64 = tallies.iter().sum();
        let teacher: u64 = tallies[..7].iter().sum();
        let student = tallies[7] + tallies[8];
        prop_assert!((metrics.tt - teacher as f64 / total as f64).abs() < 1e-12);
        prop_assert!((metrics.st - student as f64 / total as f64).abs() < 1e-12);
    }

    #[test]
    fn padding_balances_rows_and_columns(s in codes()) {
        let m = build_matrix(&seq(&s)).unwrap();
        for c in FiasCategory::ALL {
            prop_assert_eq!(m.row_sum(c), m.col_sum(c));
        }
        prop_assert_eq!(m.total(), s.len() as u64 + 1);
    }

    #[test]
    fn shares_partition_the_total(s in codes()) {
        let m = compute_metrics(&build_matrix(&seq(&s)).unwrap()).unwrap();
        prop_assert!((m.tt + m.st + m.silence - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&m.sir));
        prop_assert!(m.idr.is_none_or(|v| v >= 0.0));
    }

    #[test]
    fn summation_is_additive_and_order_free(a in codes(), b in codes(), c in codes()) {
        let ms: Vec<FiasMatrix> = [&a, &b, &c].iter().map(|s| build_matrix(&seq(s)).unwrap()).collect();
        let fwd = sum_matrices(&ms);
        let rev = sum_matrices(ms.iter().rev());
        prop_assert_eq!(fwd, rev);
        prop_assert_eq!(fwd.total(), (a.len() + b.len() + c.len() + 3) as u64);
    }
}
