//! The classroom state machine: class state, the function hierarchy, the
//! manager decision loop and the idle-window timer.

mod controller;
mod decision;
mod function;
mod run;
mod state;

pub use controller::{
    initialize_session, ClassroomSession, Clock, DecisionOutcome, EventSink, ManualClock, SessionError, SessionSetup,
    SystemClock, USER_ID,
};
pub use decision::{fallback_decision, legal_options, parse_decision, DecisionError, ManagerDecision};
pub use function::{
    ClassFunction, FunctionCategory, FunctionDescriptor, FunctionRegistry, RegistryError, INTERACT, NEXT_PAGE, TEACH,
};
pub use run::{run_session, run_session_with, ReplayEntry, ReplaySource, RunOptions, Silent, UserSource};
pub use state::{ClassState, Phase, SessionConfig};

#[cfg(test)]
mod tests;
