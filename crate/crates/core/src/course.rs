//! Course material: ordered slide pages, each paired with the teaching script
//! the teacher agent delivers for it.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CourseError {
    #[error("failed to read course file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse course: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid course: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

/// Slide body shown next to the chat. `kind` is closed: unknown kinds are
/// rejected at parse time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase", deny_unknown_fields)]
pub enum Slide {
    Markdown(String),
    /// Path relative to the course file.
    Image(String),
}

impl Slide {
    pub fn value(&self) -> &str {
        match self {
            Slide::Markdown(v) | Slide::Image(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptPage {
    /// 1-based position in the course.
    pub index: usize,
    pub slide: Slide,
    pub script: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Course {
    pub id: String,
    pub title: String,
    pub pages: Vec<ScriptPage>,
}

/// One broken course invariant, rendered as `page N: rule`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub page: Option<usize>,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.page {
            Some(p) => write!(f, "page {p}: {}", self.rule),
            None => write!(f, "course: {}", self.rule),
        }
    }
}

impl From<Violation> for String {
    fn from(v: Violation) -> Self {
        v.to_string()
    }
}

impl Course {
    pub fn page_count(&self) -> usize {
        self.pages.len()
    }

    /// Page by 1-based index. Only meaningful on a validated course, where
    /// `pages[i - 1].index == i`.
    pub fn page(&self, index: usize) -> Option<&ScriptPage> {
        index.checked_sub(1).and_then(|i| self.pages.get(i))
    }

    pub fn from_json(text: &str) -> Result<Self, CourseError> {
        let course: Course = serde_json::from_str(text)?;
        let violations = validate_course(&course);
        if violations.is_empty() {
            Ok(course)
        } else {
            Err(CourseError::Invalid(violations))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("course serializes")
    }
}

pub fn load_course(path: impl AsRef<Path>) -> Result<Course, CourseError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CourseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Course::from_json(&text)
}

/// Checks every course invariant. Returns an empty list iff the course is valid.
///
/// Page indices must be exactly `1..=N`; the first missing index in that range
/// is reported as a gap, repeated indices as duplicates.
pub fn validate_course(course: &Course) -> Vec<Violation> {
    let mut out = Vec::new();
    if course.pages.is_empty() {
        out.push(Violation {
            page: None,
            rule: "no pages".into(),
        });
        return out;
    }

    let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
    for page in &course.pages {
        if page.index == 0 {
            out.push(Violation {
                page: Some(0),
                rule: "index must be at least 1".into(),
            });
        }
        *seen.entry(page.index).or_default() += 1;
        if page.script.trim().is_empty() {
            out.push(Violation {
                page: Some(page.index),
                rule: "empty script".into(),
            });
        }
        if page.slide.value().trim().is_empty() {
            out.push(Violation {
                page: Some(page.index),
                rule: "empty slide".into(),
            });
        }
    }
    for (&index, &count) in &seen {
        if count > 1 {
            out.push(Violation {
                page: Some(index),
                rule: format!("duplicate index ({count} pages)"),
            });
        }
    }
    let n = course.pages.len();
    if let Some(missing) = (1..=n).find(|i| !seen.contains_key(i)) {
        out.push(Violation {
            page: Some(missing),
            rule: "missing index (gap)".into(),
        });
    }
    if let Some((&beyond, _)) = seen.range(n + 1..).next() {
        out.push(Violation {
            page: Some(beyond),
            rule: format!("index exceeds page count {n}"),
        });
    }
    // Ordering matters: serving page i reads pages[i - 1].
    if out.is_empty() {
        if let Some(p) = course.pages.iter().enumerate().find(|(i, p)| p.index != i + 1) {
            out.push(Violation {
                page: Some(p.1.index),
                rule: format!("out of order (found at position {})", p.0 + 1),
            });
        }
    }
    out
}


#[cfg(test)]
mod tests {
    use super::fixtures::course;
    use super::*;

    #[test]
    fn valid_course_has_no_violations() {
        assert!(validate_course(&course(3)).is_empty());
    }

    #[test]
    fn empty_script_is_reported_with_page() {
        let mut c = course(3);
        c.pages[1].script = String::new();
        let v: Vec<String> = validate_course(&c).into_iter().map(String::from).collect();
        assert_eq!(v, vec!["page 2: empty script"]);
    }

    #[test]
    fn duplicate_index_is_reported() {
        let mut c = course(3);
        c.pages[1].index = 1;
        let v: Vec<String> = validate_course(&c).into_iter().map(String::from).collect();
        assert!(v.iter().any(|s| s.starts_with("page 1: duplicate")), "{v:?}");
    }

    #[test]
    fn gap_names_first_missing_index() {
        let mut c = course(3);
        c.pages[2].index = 4;
        let v = validate_course(&c);
        let gap = v.iter().find(|v| v.rule.contains("gap")).unwrap();
        assert_eq!(gap.page, Some(3));
    }

    #[test]
    fn empty_course_is_invalid() {
        let err = Course::from_json(r#"{"id":"x","title":"x","pages":[]}"#).unwrap_err();
        assert!(matches!(err, CourseError::Invalid(_)));
    }

    #[test]
    fn unknown_slide_kind_is_rejected() {
        let text = r#"{"id":"x","title":"x","pages":[
            {"index":1,"slide":{"kind":"video","value":"a.mp4"},"script":"s"}]}"#;
        assert!(matches!(Course::from_json(text), Err(CourseError::Parse(_))));
    }

    #[test]
    fn utf8_scripts_are_kept_verbatim() {
        let mut c = course(1);
        c.pages[0].script = "人工智能的发展 — history of AI".into();
        let back = Course::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn page_lookup_is_one_based() {
        let c = course(2);
        assert!(c.page(0).is_none());
        assert_eq!(c.page(2).unwrap().script, "Script for page 2.");
        assert!(c.page(3).is_none());
    }
}
