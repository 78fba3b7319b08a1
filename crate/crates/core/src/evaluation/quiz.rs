//! Post-class quiz: multiple-answer questions scored all-or-nothing, and the
//! participant gate that drops low scorers.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Default gate: participants at or below this score are excluded.
pub const DEFAULT_GATE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizQuestion {
    pub id: String,
    pub prompt: String,
    pub options: BTreeMap<String, String>,
    /// Every correct option label.
    pub answer: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizDefinition {
    pub course_id: String,
    pub questions: Vec<QuizQuestion>,
}

impl QuizDefinition {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| EvalError::Io(e.to_string()))?;
        let def: QuizDefinition = serde_json::from_str(&text).map_err(|e| EvalError::Parse(e.to_string()))?;
        def.validate()?;
        Ok(def)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.questions.is_empty() {
            return Err(EvalError::Parse("quiz has no questions".into()));
        }
        let mut ids = HashSet::new();
        for q in &self.questions {
            if !ids.insert(q.id.as_str()) {
                return Err(EvalError::Parse(format!("duplicate question id `{}`", q.id)));
            }
            if q.answer.is_empty() || !q.answer.iter().all(|a| q.options.contains_key(a)) {
                return Err(EvalError::Parse(format!("question `{}` has an invalid key", q.id)));
            }
        }
        Ok(())
    }

    pub fn key(&self) -> BTreeMap<String, BTreeSet<String>> {
        self.questions.iter().map(|q| (q.id.clone(), q.answer.clone())).collect()
    }
}

pub type QuizAnswers = BTreeMap<String, BTreeSet<String>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuizResult {
    pub participant_id: String,
    pub answers: QuizAnswers,
    /// Per question: selected set equals the key exactly.
    pub correct: BTreeMap<String, bool>,
    /// Fraction of questions fully correct.
    pub score: f64,
}

impl QuizResult {
    pub fn correct_count(&self) -> usize {
        self.correct.values().filter(|c| **c).count()
    }
}

/// Scores `answers` against `key`. A question counts only when the selected
/// set equals the key set; partial overlap scores nothing.
pub fn score_quiz(
    participant_id: &str,
    answers: &QuizAnswers,
    key: &BTreeMap<String, BTreeSet<String>>,
) -> Result<QuizResult, EvalError> {
    if let Some(unknown) = answers.keys().find(|q| !key.contains_key(*q)) {
        return Err(EvalError::UnknownQuestion(unknown.clone()));
    }
    if let Some(missing) = key.keys().find(|q| !answers.contains_key(*q)) {
        return Err(EvalError::MissingAnswer(missing.clone()));
    }
    let correct: BTreeMap<String, bool> = key
        .iter()
        .map(|(q, expected)| (q.clone(), answers.get(q) == Some(expected)))
        .collect();
    let n_correct = correct.values().filter(|c| **c).count();
    Ok(QuizResult {
        participant_id: participant_id.to_string(),
        answers: answers.clone(),
        score: n_correct as f64 / key.len() as f64,
        correct,
    })
}

/// Participants whose score is strictly above `threshold`.
pub fn gate_participants(results: &[QuizResult], threshold: f64) -> BTreeSet<String> {
    results
        .iter()
        .filter(|r| r.score > threshold)
        .map(|r| r.participant_id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(labels: &[&str]) -> BTreeSet<String> {
        labels.iter().map(|s| s.to_string()).collect()
    }

    fn hsu_key() -> BTreeMap<String, BTreeSet<String>> {
        BTreeMap::from([
            ("q1".to_string(), set(&["A", "B", "C", "D"])),
            ("q2".to_string(), set(&["A", "B", "C", "D", "E"])),
            ("q3".to_string(), set(&["B", "C", "D"])),
            ("q4".to_string(), set(&["A", "B", "C"])),
        ])
    }

    fn result(id: &str, score: f64) -> QuizResult {
        QuizResult {
            participant_id: id.into(),
            answers: BTreeMap::new(),
            correct: BTreeMap::new(),
            score,
        }
    }

    #[test]
    fn exact_answers_score_one() {
        let r = score_quiz("p", &hsu_key(), &hsu_key()).unwrap();
        assert_eq!(r.score, 1.0);
        assert_eq!(r.correct_count(), 4);
    }

    #[test]
    fn multi_answer_question_needs_the_full_set() {
        let mut answers = hsu_key();
        assert_eq!(answers["q3"], set(&["B", "C", "D"]));
        answers.insert("q3".into(), set(&["B", "C"]));
        let r = score_quiz("p", &answers, &hsu_key()).unwrap();
        assert!(!r.correct["q3"]);
        assert_eq!(r.score, 0.75);
    }

    #[test]
    fn unknown_or_missing_questions_are_errors() {
        let mut answers = hsu_key();
        answers.insert("q9".into(), set(&["A"]));
        assert_eq!(score_quiz("p", &answers, &hsu_key()), Err(EvalError::UnknownQuestion("q9".into())));
        let mut answers = hsu_key();
        answers.remove("q2");
        assert_eq!(score_quiz("p", &answers, &hsu_key()), Err(EvalError::MissingAnswer("q2".into())));
    }

    #[test]
    fn gate_excludes_half_and_below() {
        let rs: Vec<_> = [0.25, 0.5, 0.75, 1.0]
            .iter()
            .enumerate()
            .map(|(i, s)| result(&format!("p{i}"), *s))
            .collect();
        assert_eq!(gate_participants(&rs, DEFAULT_GATE_THRESHOLD), set(&["p2", "p3"]));
        assert!(gate_participants(&[], 0.5).is_empty());
    }

    #[test]
    fn bundled_quiz_files_load() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/quizzes");
        let tagi = QuizDefinition::load(dir.join("tagi.json")).unwrap();
        assert_eq!(tagi.questions.len(), 4);
        assert_eq!(tagi.key()["q2"], set(&["D"]));
        let hsu = QuizDefinition::load(dir.join("hsu.json")).unwrap();
        assert_eq!(hsu.key(), hsu_key());
    }

    proptest! {
        #[test]
        fn gate_partitions_and_is_monotone(scores in proptest::collection::vec(0u8..=4, 0..30)) {
            let rs: Vec<_> = scores.iter().enumerate()
                .map(|(i, s)| result(&format!("p{i}"), f64::from(*s) / 4.0))
                .collect();
            let included = gate_participants(&rs, 0.5);
            let excluded: BTreeSet<String> = rs.iter()
                .map(|r| r.participant_id.clone())
                .filter(|p| !included.contains(p))
                .collect();
            prop_assert_eq!(included.len() + excluded.len(), rs.len());
            for a in &rs {
                for b in &rs {
                    if included.contains(&a.participant_id) && b.score >= a.score {
                        prop_assert!(included.contains(&b.participant_id));
                    }
                }
            }
        }
    }
}
