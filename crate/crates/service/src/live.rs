//! Live sessions. Each class runs on its own thread, which is the only writer
//! of its state and its store file. Clients subscribe to an in-memory event
//! log plus a broadcast channel; a slow subscriber never blocks the class.

use std::collections::HashMap;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;

use tokio::sync::{broadcast, oneshot};

use classroom_core::session::{Clock, SystemClock};
use classroom_core::store::{SessionRecord, SessionWriter, StoreError, StoreLine};
use classroom_core::{ClassroomSession, Phase, SessionError, SessionEvent};

const CHANNEL_CAPACITY: usize = 256;

pub enum Command {
    UserUtterance {
        text: String,
        reply: oneshot::Sender<Result<(), SessionError>>,
    },
    Stop,
}

/// Events emitted so far plus the live fan-out channel.
pub struct EventLog {
    events: Vec<SessionEvent>,
    tx: broadcast::Sender<SessionEvent>,
}

impl EventLog {
    fn new() -> Self {
        EventLog {
            events: Vec::new(),
            tx: broadcast::channel(CHANNEL_CAPACITY).0,
        }
    }

    fn push(&mut self, event: &SessionEvent) {
        self.events.push(event.clone());
        // No receivers is fine.
        let _ = self.tx.send(event.clone());
    }

    pub fn since(&self, after_seq: u64) -> Vec<SessionEvent> {
        let start = self.events.partition_point(|e| e.seq <= after_seq);
        self.events[start..].to_vec()
    }
}

/// Handle to a running class, shared by the API handlers.
#[derive(Clone)]
pub struct LiveSession {
    pub session_id: String,
    pub created_at: chrono::DateTime<chrono::Utc>,
    input: mpsc::Sender<Command>,
    log: Arc<Mutex<EventLog>>,
    writer: Arc<Mutex<SessionWriter>>,
}

/// Catch-up events plus a receiver positioned right after them.
pub struct Subscription {
    pub backlog: Vec<SessionEvent>,
    pub live: broadcast::Receiver<SessionEvent>,
}

impl LiveSession {
    /// Snapshot and subscribe under one lock so nothing falls between them.
    pub fn subscribe(&self) -> Subscription {
        let log = self.log.lock().unwrap();
        Subscription {
            backlog: log.events.clone(),
            live: log.tx.subscribe(),
        }
    }

    pub fn events_since(&self, after_seq: u64) -> Vec<SessionEvent> {
        self.log.lock().unwrap().since(after_seq)
    }

    pub fn phase(&self) -> Phase {
        self.writer.lock().unwrap().record().phase()
    }

    pub fn record(&self) -> SessionRecord {
        self.writer.lock().unwrap().record().clone()
    }

    /// Appends a survey or quiz through the session's own writer.
    pub fn attach(&self, line: StoreLine) -> Result<(), StoreError> {
        self.writer.lock().unwrap().append(line)
    }

    pub async fn say(&self, text: String) -> Result<(), SessionError> {
        let (reply, rx) = oneshot::channel();
        if self.input.send(Command::UserUtterance { text, reply }).is_err() {
            return Err(SessionError::Phase(Phase::Closed));
        }
        rx.await.unwrap_or(Err(SessionError::Phase(Phase::Closed)))
    }

    pub fn stop(&self) {
        let _ = self.input.send(Command::Stop);
    }
}

struct SharedSink {
    log: Arc<Mutex<EventLog>>,
    writer: Arc<Mutex<SessionWriter>>,
}

impl classroom_core::session::EventSink for SharedSink {
    fn emit(&mut self, event: &SessionEvent) -> Result<(), String> {
        // Persist first: subscribers only see acknowledged events.
        self.writer.lock().unwrap().append_event(event).map_err(|e| e.to_string())?;
        self.log.lock().unwrap().push(event);
        Ok(())
    }
}

/// Attaches the store writer and event log to an uninitialized session,
/// teaches page 1 on the calling thread, then hands the class to its own
/// thread. Blocking: call from a blocking context.
pub fn launch(mut session: ClassroomSession, writer: SessionWriter) -> Result<LiveSession, SessionError> {
    let log = Arc::new(Mutex::new(EventLog::new()));
    let writer = Arc::new(Mutex::new(writer));
    session.add_sink(Box::new(SharedSink {
        log: log.clone(),
        writer: writer.clone(),
    }));
    if let Err(e) = session.initialize() {
        session.fail(&e);
        persist_fault(&session, &writer);
        return Err(e);
    }
    let (input, rx) = mpsc::channel();
    let handle = LiveSession {
        session_id: session.session_id().to_string(),
        created_at: session.header().created_at,
        input,
        log,
        writer: writer.clone(),
    };
    let name = format!("class-{}", handle.session_id);
    thread::Builder::new()
        .name(name)
        .spawn(move || run(session, rx, writer))
        .expect("spawn session thread");
    Ok(handle)
}

fn persist_fault(session: &ClassroomSession, writer: &Mutex<SessionWriter>) {
    if let Some(fault) = session.fault() {
        if let Err(e) = writer.lock().unwrap().append(StoreLine::Fault(fault.clone())) {
            log::error!("session {}: could not record fault: {e}", session.session_id());
        }
    }
}

fn run(mut session: ClassroomSession, rx: mpsc::Receiver<Command>, writer: Arc<Mutex<SessionWriter>>) {
    let clock = SystemClock;
    let id = session.session_id().to_string();
    while session.state().phase != Phase::Closed {
        let wait = session.time_until_expiry(clock.now());
        let result = match rx.recv_timeout(wait) {
            Ok(Command::UserUtterance { text, reply }) => {
                let r = session.handle_user_utterance(&text).map(|_| ());
                let fatal = matches!(&r, Err(e) if is_fatal(e));
                let _ = reply.send(r.clone());
                if fatal {
                    r
                } else {
                    Ok(())
                }
            }
            Ok(Command::Stop) | Err(RecvTimeoutError::Disconnected) => {
                Err(SessionError::Config("session stopped".into()))
            }
            Err(RecvTimeoutError::Timeout) => session.tick(clock.now()).map(|_| ()),
        };
        if let Err(e) = result {
            log::warn!("session {id} failed: {e}");
            session.fail(&e);
            persist_fault(&session, &writer);
            break;
        }
    }
    log::info!("session {id} closed after {} events", session.events().len());
}

/// Errors that end the class, as opposed to rejected input.
fn is_fatal(e: &SessionError) -> bool {
    !matches!(
        e,
        SessionError::InteractionsDisabled | SessionError::EmptyUtterance | SessionError::Phase(_)
    )
}

#[derive(Default, Clone)]
pub struct Registry(Arc<Mutex<HashMap<String, LiveSession>>>);

impl Registry {
    pub fn insert(&self, s: LiveSession) {
        self.0.lock().unwrap().insert(s.session_id.clone(), s);
    }

    pub fn get(&self, id: &str) -> Option<LiveSession> {
        self.0.lock().unwrap().get(id).cloned()
    }

    pub fn stop_all(&self) {
        for s in self.0.lock().unwrap().values() {
            s.stop();
        }
    }
}
