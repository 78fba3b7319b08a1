use std::sync::Mutex;

use super::{BackendError, ChatBackend, ChatRequest, DecisionOption, MessageOrigin, OutputConstraint, RequestTask};

/// Offline stand-in for a model: teachers read the script, other agents say
/// short canned lines, and the manager follows a fixed round-robin policy
/// (a user turn is answered by the teacher, then up to `interactions_per_page`
/// interactions, then the next page). Deterministic for a given request
/// sequence.
#[derive(Debug)]
pub struct PolicyBackend {
    interactions_per_page: usize,
    state: Mutex<PolicyState>,
}

#[derive(Debug, Default)]
struct PolicyState {
    page: Option<usize>,
    interactions: usize,
    cursor: usize,
}

impl PolicyBackend {
    pub fn new(interactions_per_page: usize) -> Self {
        PolicyBackend {
            interactions_per_page,
            state: Mutex::new(PolicyState::default()),
        }
    }

    fn decide(&self, request: &ChatRequest, options: &[DecisionOption]) -> String {
        let mut st = self.state.lock().unwrap();
        if st.page != request.page {
            st.page = request.page;
            st.interactions = 0;
        }
        let find = |f: &str| options.iter().find(|o| o.function == f);
        let interacts: Vec<&DecisionOption> =
            options.iter().filter(|o| o.function == "interact").collect();
        let user_spoke = request
            .history
            .iter()
            .rev()
            .find(|m| m.origin != MessageOrigin::System)
            .is_some_and(|m| m.origin == MessageOrigin::User);

        let pick = if user_spoke && !interacts.is_empty() {
            // Answer the user with the first listed interact option (the teacher).
            Some(interacts[0])
        } else if st.interactions < self.interactions_per_page && !interacts.is_empty() {
            let o = interacts[st.cursor % interacts.len()];
            st.cursor += 1;
            Some(o)
        } else {
            find("next_page").or_else(|| find("teach")).or(interacts.first().copied())
        }
        .or(options.first());

        match pick {
            Some(o) => {
                if o.function == "interact" {
                    st.interactions += 1;
                }
                serde_json::json!({"agent": o.agent, "function": o.function}).to_string()
            }
            None => "{}".into(),
        }
    }
}

impl ChatBackend for PolicyBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let page = request.page.unwrap_or(0);
        match (&request.task, &request.constraint) {
            (RequestTask::Decide, Some(OutputConstraint::Decision { options })) => {
                Ok(self.decide(request, options))
            }
            (RequestTask::Decide, _) => Err(BackendError::InvalidRequest(
                "decision request without options".into(),
            )),
            (RequestTask::Teach, _) => Ok(request
                .material
                .clone()
                .unwrap_or_else(|| format!("Let us go through page {page}."))),
            (RequestTask::Interact { .. }, _) => Ok(canned_line(&request.speaker_id, page)),
            (RequestTask::Label, _) => Err(BackendError::InvalidRequest(
                "policy backend does not label".into(),
            )),
        }
    }

    fn name(&self) -> &str {
        "policy"
    }
}

fn canned_line(speaker: &str, page: usize) -> String {
    match speaker {
        "teacher" => format!("Good point. Let me add one more detail about page {page} before we move on."),
        "assistant" => format!("To summarize page {page}: keep the main idea in mind for the next part."),
        "class_clown" => format!("Page {page} would make a great meme, but honestly it makes sense to me now."),
        "deep_thinker" => format!("I think the idea on page {page} has limits worth discussing more carefully."),
        "note_taker" => format!("My notes for page {page}: the key points are the definition and the example."),
        "inquisitive_mind" => format!("Could you explain how page {page} connects to what we saw before?"),
        other => format!("{other} shares a thought about page {page}."),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decide_req(page: usize, options: &[(&str, &str)]) -> ChatRequest {
        let mut r = ChatRequest::new("manager", RequestTask::Decide, "sys");
        r.page = Some(page);
        r.constraint = Some(OutputConstraint::Decision {
            options: options
                .iter()
                .map(|(a, f)| DecisionOption {
                    agent: a.to_string(),
                    function: f.to_string(),
                })
                .collect(),
        });
        r
    }

    #[test]
    fn interacts_then_advances() {
        let b = PolicyBackend::new(2);
        let opts = [("teacher", "next_page"), ("teacher", "interact"), ("assistant", "interact")];
        let picks: Vec<String> = (0..3).map(|_| b.complete(&decide_req(1, &opts)).unwrap()).collect();
        assert!(picks[0].contains("\"interact\"") && picks[0].contains("teacher"));
        assert!(picks[1].contains("assistant"));
        assert!(picks[2].contains("next_page"));
        // new page resets the budget
        assert!(b.complete(&decide_req(2, &opts)).unwrap().contains("interact"));
    }

    #[test]
    fn tutoring_only_options_advance() {
        let b = PolicyBackend::new(3);
        let out = b.complete(&decide_req(1, &[("teacher", "teach"), ("teacher", "next_page")])).unwrap();
        assert_eq!(out, r#"{"agent":"teacher","function":"next_page"}"#);
    }

    #[test]
    fn teach_returns_material() {
        let b = PolicyBackend::new(1);
        let mut r = ChatRequest::new("teacher", RequestTask::Teach, "sys");
        r.material = Some("Script text.".into());
        assert_eq!(b.complete(&r).unwrap(), "Script text.");
    }
}
