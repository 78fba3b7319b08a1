//! Courses, quizzes and the chat backend the service and CLI run against.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use serde::Serialize;

use classroom_core::backend::{BackendConfig, ChatBackend, HttpBackend, PolicyBackend, ScriptedBackend};
use classroom_core::evaluation::QuizDefinition;
use classroom_core::{load_course, Course};

use crate::config::BackendKind;

/// Interactions per page the offline policy performs before moving on.
pub const POLICY_INTERACTIONS_PER_PAGE: usize = 2;

#[derive(Debug, Clone, Serialize)]
pub struct CourseSummary {
    pub id: String,
    pub title: String,
    pub page_count: usize,
    pub has_quiz: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Catalog {
    courses: BTreeMap<String, Arc<Course>>,
    quizzes: BTreeMap<String, Arc<QuizDefinition>>,
}

fn json_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if !dir.exists() {
        log::warn!("{} does not exist", dir.display());
        return Ok(out);
    }
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

impl Catalog {
    /// Loads every `*.json` course and quiz. A quiz is keyed by its `course_id`.
    pub fn load(courses_dir: &Path, quizzes_dir: &Path) -> anyhow::Result<Self> {
        let mut catalog = Catalog::default();
        for path in json_files(courses_dir)? {
            let course = load_course(&path).with_context(|| format!("loading {}", path.display()))?;
            if catalog.courses.contains_key(&course.id) {
                bail!("duplicate course id `{}` in {}", course.id, path.display());
            }
            catalog.courses.insert(course.id.clone(), Arc::new(course));
        }
        for path in json_files(quizzes_dir)? {
            let quiz = QuizDefinition::load(&path).with_context(|| format!("loading {}", path.display()))?;
            catalog.quizzes.insert(quiz.course_id.clone(), Arc::new(quiz));
        }
        Ok(catalog)
    }

    pub fn from_parts(courses: Vec<Course>, quizzes: Vec<QuizDefinition>) -> Self {
        Catalog {
            courses: courses.into_iter().map(|c| (c.id.clone(), Arc::new(c))).collect(),
            quizzes: quizzes.into_iter().map(|q| (q.course_id.clone(), Arc::new(q))).collect(),
        }
    }

    pub fn course(&self, id: &str) -> Option<Arc<Course>> {
        self.courses.get(id).cloned()
    }

    pub fn quiz(&self, course_id: &str) -> Option<Arc<QuizDefinition>> {
        self.quizzes.get(course_id).cloned()
    }

    pub fn summaries(&self) -> Vec<CourseSummary> {
        self.courses
            .values()
            .map(|c| CourseSummary {
                id: c.id.clone(),
                title: c.title.clone(),
                page_count: c.page_count(),
                has_quiz: self.quizzes.contains_key(&c.id),
            })
            .collect()
    }
}

/// Resolves `--course`: an existing file path, or an id looked up in `courses_dir`.
pub fn resolve_course(arg: &str, courses_dir: &Path) -> anyhow::Result<Course> {
    let direct = Path::new(arg);
    if direct.is_file() {
        return load_course(direct).with_context(|| format!("loading {arg}"));
    }
    let named = courses_dir.join(format!("{arg}.json"));
    if named.is_file() {
        return load_course(&named).with_context(|| format!("loading {}", named.display()));
    }
    for path in json_files(courses_dir)? {
        if let Ok(course) = load_course(&path) {
            if course.id == arg {
                return Ok(course);
            }
        }
    }
    bail!("no course file or id `{arg}` (looked in {})", courses_dir.display())
}

pub type BackendFactory = Arc<dyn Fn() -> anyhow::Result<Arc<dyn ChatBackend>> + Send + Sync>;

/// Validates the backend settings once, then builds a fresh backend per call.
pub fn backend_factory(
    kind: BackendKind,
    fixture: Option<&Path>,
    config: &BackendConfig,
) -> anyhow::Result<BackendFactory> {
    build_backend(kind, fixture, config)?;
    let fixture = fixture.map(Path::to_path_buf);
    let config = config.clone();
    Ok(Arc::new(move || build_backend(kind, fixture.as_deref(), &config)))
}

pub fn build_backend(
    kind: BackendKind,
    fixture: Option<&Path>,
    config: &BackendConfig,
) -> anyhow::Result<Arc<dyn ChatBackend>> {
    Ok(match (kind, fixture) {
        (BackendKind::Scripted, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Arc::new(ScriptedBackend::from_json(&text).with_context(|| format!("fixture {}", path.display()))?)
        }
        (BackendKind::Scripted, None) => Arc::new(PolicyBackend::new(POLICY_INTERACTIONS_PER_PAGE)),
        (BackendKind::Live, _) => Arc::new(HttpBackend::new(config.clone())?),
    })
}
