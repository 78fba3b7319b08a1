use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest};

/// Reply selector for keyed fixtures. `page: None` matches any page and is
/// consulted only when no exact `(speaker, page)` entry exists.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixtureKey {
    pub speaker_id: String,
    pub page: Option<usize>,
}

impl FixtureKey {
    pub fn new(speaker_id: impl Into<String>, page: Option<usize>) -> Self {
        FixtureKey {
            speaker_id: speaker_id.into(),
            page,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyedReplies {
    pub speaker: String,
    #[serde(default)]
    pub page: Option<usize>,
    pub replies: Vec<String>,
}

/// On-disk fixture format:
/// `{"ordered": ["..", ..]}` or `{"keyed": [{"speaker": "teacher", "page": 1, "replies": [".."]}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureSpec {
    Ordered(Vec<String>),
    Keyed(Vec<KeyedReplies>),
}

#[derive(Debug)]
enum Fixture {
    Ordered { replies: VecDeque<String>, served: usize },
    Keyed(HashMap<FixtureKey, VecDeque<String>>),
}

/// Replays a fixed set of replies. Never invents text: a missing or
/// exhausted entry is an error.
#[derive(Debug)]
pub struct ScriptedBackend {
    fixture: Mutex<Fixture>,
    requests: Mutex<Vec<ChatRequest>>,
}

pub fn scripted_backend(spec: FixtureSpec) -> Result<ScriptedBackend, BackendError> {
    let fixture = match spec {
        FixtureSpec::Ordered(replies) => {
            if replies.is_empty() {
                return Err(BackendError::Fixture("ordered fixture is empty".into()));
            }
            Fixture::Ordered {
                replies: replies.into(),
                served: 0,
            }
        }
        FixtureSpec::Keyed(entries) => {
            if entries.is_empty() {
                return Err(BackendError::Fixture("keyed fixture is empty".into()));
            }
            let mut map: HashMap<FixtureKey, VecDeque<String>> = HashMap::new();
            for e in entries {
                map.entry(FixtureKey::new(e.speaker, e.page))
                    .or_default()
                    .extend(e.replies);
            }
            Fixture::Keyed(map)
        }
    };
    Ok(ScriptedBackend {
        fixture: Mutex::new(fixture),
        requests: Mutex::new(Vec::new()),
    })
}

impl ScriptedBackend {
    pub fn ordered<I, S>(replies: I) -> Result<Self, BackendError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        scripted_backend(FixtureSpec::Ordered(replies.into_iter().map(Into::into).collect()))
    }

    pub fn keyed<I, S>(entries: I) -> Result<Self, BackendError>
    where
        I: IntoIterator<Item = (FixtureKey, S)>,
        S: Into<String>,
    {
        scripted_backend(FixtureSpec::Keyed(
            entries
                .into_iter()
                .map(|(k, v)| KeyedReplies {
                    speaker: k.speaker_id,
                    page: k.page,
                    replies: vec![v.into()],
                })
                .collect(),
        ))
    }

    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let spec: FixtureSpec =
            serde_json::from_str(text).map_err(|e| BackendError::Fixture(e.to_string()))?;
        scripted_backend(spec)
    }

    /// Every request received so far, in order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.requests.lock().unwrap().push(request.clone());
        let mut fixture = self.fixture.lock().unwrap();
        match &mut *fixture {
            Fixture::Ordered { replies, served } => match replies.pop_front() {
                Some(r) => {
                    *served += 1;
                    Ok(r)
                }
                None => Err(BackendError::FixtureExhausted { served: *served }),
            },
            Fixture::Keyed(map) => {
                let exact = FixtureKey::new(request.speaker_id.clone(), request.page);
                let any = FixtureKey::new(request.speaker_id.clone(), None);
                for key in [exact, any] {
                    if let Some(queue) = map.get_mut(&key) {
                        if let Some(r) = queue.pop_front() {
                            return Ok(r);
                        }
                    }
                }
                Err(BackendError::FixtureMiss {
                    speaker_id: request.speaker_id.clone(),
                    page: request.page,
                })
            }
        }
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

/// Backend driven by a closure; handy for fuzzing and randomized scenarios.
pub struct FnBackend<F> {
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        FnBackend { f }
    }
}

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (self.f)(request)
    }

    fn name(&self) -> &str {
        "fn"
    }
}
