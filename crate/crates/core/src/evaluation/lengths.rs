//! Average output length per speaker role, in words.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::event::SpeakerKind;
use crate::roster::Ablation;
use crate::store::SessionRecord;

fn is_cjk(c: char) -> bool {
    matches!(c,
        '\u{3040}'..='\u{30FF}'   // kana
        | '\u{3400}'..='\u{4DBF}'
        | '\u{4E00}'..='\u{9FFF}'
        | '\u{F900}'..='\u{FAFF}'
        | '\u{20000}'..='\u{2FA1F}'
        | '\u{AC00}'..='\u{D7AF}') // hangul syllables
}

/// Whitespace-delimited tokens; inside a token every CJK character is its own
/// unit and each remaining run counts once if it holds a letter or digit.
pub fn word_count(text: &str) -> usize {
    let mut count = 0;
    for token in text.split_whitespace() {
        let mut run_has_word = false;
        for c in token.chars() {
            if is_cjk(c) {
                count += usize::from(run_has_word) + 1;
                run_has_word = false;
            } else if c.is_alphanumeric() {
                run_has_word = true;
            }
        }
        count += usize::from(run_has_word);
    }
    count
}

/// Table column a speaker falls under. Classmates are pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RoleColumn {
    Teacher,
    Assistant,
    Students,
    User,
}

impl RoleColumn {
    pub const ALL: [RoleColumn; 4] = [RoleColumn::Teacher, RoleColumn::Assistant, RoleColumn::Students, RoleColumn::User];

    pub fn of(kind: SpeakerKind) -> Self {
        match kind {
            SpeakerKind::Teacher => RoleColumn::Teacher,
            SpeakerKind::Assistant => RoleColumn::Assistant,
            SpeakerKind::Classmate => RoleColumn::Students,
            SpeakerKind::User => RoleColumn::User,
        }
    }
}

impl fmt::Display for RoleColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RoleColumn::Teacher => "Teacher",
            RoleColumn::Assistant => "Assistant",
            RoleColumn::Students => "Students",
            RoleColumn::User => "User",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordTally {
    pub words: usize,
    pub utterances: usize,
}

impl WordTally {
    pub fn average(&self) -> Option<f64> {
        (self.utterances > 0).then(|| self.words as f64 / self.utterances as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthRow {
    pub course_id: String,
    pub setting: Ablation,
    pub tallies: BTreeMap<RoleColumn, WordTally>,
}

impl LengthRow {
    /// Per-utterance average, `None` when the role never spoke.
    pub fn average(&self, column: RoleColumn) -> Option<f64> {
        self.tallies.get(&column).and_then(WordTally::average)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LengthTable {
    pub rows: Vec<LengthRow>,
}

impl LengthTable {
    pub fn total_words(&self) -> usize {
        self.rows.iter().flat_map(|r| r.tallies.values()).map(|t| t.words).sum()
    }

    pub fn total_utterances(&self) -> usize {
        self.rows.iter().flat_map(|r| r.tallies.values()).map(|t| t.utterances).sum()
    }
}

impl fmt::Display for LengthTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<12} {:<16}", "Course", "Setting")?;
        for c in RoleColumn::ALL {
            write!(f, " {:>9}", c.to_string())?;
        }
        writeln!(f)?;
        for row in &self.rows {
            write!(f, "{:<12} {:<16}", row.course_id, row.setting.as_str())?;
            for c in RoleColumn::ALL {
                match row.average(c) {
                    Some(v) => write!(f, " {v:>9.1}")?,
                    None => write!(f, " {:>9}", "-")?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Averages word counts per role, one row per (course, setting), pooling
/// every utterance of every matching record.
pub fn word_count_stats(records: &[SessionRecord]) -> LengthTable {
    let mut rows: BTreeMap<(String, Ablation), BTreeMap<RoleColumn, WordTally>> = BTreeMap::new();
    for record in records {
        let row = rows
            .entry((record.header.course_id.clone(), record.header.setting))
            .or_default();
        for u in record.utterances() {
            let tally = row.entry(RoleColumn::of(u.speaker_kind)).or_default();
            tally.words += word_count(&u.text);
            tally.utterances += 1;
        }
    }
    LengthTable {
        rows: rows
            .into_iter()
            .map(|((course_id, setting), tallies)| LengthRow {
                course_id,
                setting,
                tallies,
            })
            .collect(),
    }
}
