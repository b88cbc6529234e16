//! Completion-endpoint adapter for free-form task decomposition.
//!
//! The deterministic planner covers the closed stage catalog; this adapter
//! exists for instructions outside that grammar. It renders the task-splitter
//! prompt, sends it to a completion endpoint, extracts the first JSON block
//! from the reply, and validates it like any other knowledge document,
//! retrying on malformed or semantically invalid replies.
//!
//! The HTTP protocol is minimal: POST the prompt as `{"prompt": …}` with an
//! optional bearer credential, and read the completion back either as the
//! raw response body or from a `{"completion": …}` JSON field. Endpoint and
//! credential come from `VICTOR_LLM_URL` / `VICTOR_LLM_KEY`. Tests use
//! [`MockCompletionClient`]; nothing here touches the network under test.

use std::collections::VecDeque;
use std::time::Duration;

use crate::catalog::{Catalog, StateMap};

use super::json::{extract_first_json_block, parse_lenient};
use super::prompt::render_prompt;
use super::{validate_knowledge, KnowledgeError, TaskKnowledge};

/// Environment key holding the completion endpoint URL.
pub const ENV_URL: &str = "VICTOR_LLM_URL";
/// Environment key holding the bearer credential (optional).
pub const ENV_KEY: &str = "VICTOR_LLM_KEY";

/// Replies retried on malformed or invalid documents before giving up.
pub const DEFAULT_RETRIES: usize = 2;

/// A text-completion backend.
pub trait CompletionClient {
    fn complete(&mut self, prompt: &str) -> Result<String, KnowledgeError>;
}

/// HTTP-backed completion client.
pub struct HttpCompletionClient {
    url: String,
    key: Option<String>,
    agent: ureq::Agent,
}

impl HttpCompletionClient {
    pub fn new(url: impl Into<String>, key: Option<String>) -> HttpCompletionClient {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build();
        HttpCompletionClient {
            url: url.into(),
            key,
            agent: config.new_agent(),
        }
    }

    /// Reads the endpoint URL (required) and credential (optional) from the
    /// environment.
    pub fn from_env() -> Result<HttpCompletionClient, KnowledgeError> {
        let url = std::env::var(ENV_URL).map_err(|_| KnowledgeError::MissingEnv(ENV_URL))?;
        let key = std::env::var(ENV_KEY).ok();
        Ok(HttpCompletionClient::new(url, key))
    }
}

impl CompletionClient for HttpCompletionClient {
    fn complete(&mut self, prompt: &str) -> Result<String, KnowledgeError> {
        let transport = |e: ureq::Error| KnowledgeError::Transport(e.to_string());
        let mut request = self.agent.post(&self.url);
        if let Some(key) = &self.key {
            request = request.header("authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(serde_json::json!({ "prompt": prompt }))
            .map_err(transport)?;
        let body = response.body_mut().read_to_string().map_err(transport)?;
        // Accept either a bare-text reply or a {"completion": …} envelope.
        if let Ok(serde_json::Value::Object(map)) = serde_json::from_str(&body) {
            if let Some(serde_json::Value::String(text)) = map.get("completion") {
                return Ok(text.clone());
            }
        }
        Ok(body)
    }
}

/// A canned reply for the mock client.
pub enum MockReply {
    Text(String),
    TransportFailure(String),
}

/// Scripted completion client for tests: replays canned replies in order and
/// records the prompts it was given.
#[derive(Default)]
pub struct MockCompletionClient {
    replies: VecDeque<MockReply>,
    pub prompts: Vec<String>,
}

impl MockCompletionClient {
    pub fn new(replies: impl IntoIterator<Item = MockReply>) -> MockCompletionClient {
        MockCompletionClient {
            replies: replies.into_iter().collect(),
            prompts: Vec::new(),
        }
    }

    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> MockCompletionClient {
        MockCompletionClient::new(texts.into_iter().map(|t| MockReply::Text(t.to_string())))
    }
}

impl CompletionClient for MockCompletionClient {
    fn complete(&mut self, prompt: &str) -> Result<String, KnowledgeError> {
        self.prompts.push(prompt.to_string());
        match self.replies.pop_front() {
            Some(MockReply::Text(text)) => Ok(text),
            Some(MockReply::TransportFailure(message)) => Err(KnowledgeError::Transport(message)),
            None => Err(KnowledgeError::Transport("mock has no replies left".to_string())),
        }
    }
}

/// Generates task knowledge through a completion endpoint.
///
/// Malformed or semantically invalid replies are retried up to `retries`
/// times with the same prompt; transport failures abort immediately. After
/// the final attempt the last extraction or validation error is reported
/// inside [`KnowledgeError::Exhausted`].
pub fn llm_generate(
    instruction: &str,
    initial_states: &StateMap,
    client: &mut dyn CompletionClient,
    catalog: &Catalog,
    retries: usize,
) -> Result<TaskKnowledge, KnowledgeError> {
    let prompt = render_prompt(instruction, initial_states, catalog)?;
    let attempts = retries + 1;
    let mut last: Option<KnowledgeError> = None;
    for _ in 0..attempts {
        let reply = client.complete(&prompt)?;
        let parsed = extract_first_json_block(&reply)
            .and_then(|block| parse_lenient(&block))
            .and_then(|doc| validate_knowledge(&doc, catalog));
        match parsed {
            Ok(knowledge) => return Ok(knowledge),
            Err(error) => last = Some(error),
        }
    }
    Err(KnowledgeError::Exhausted {
        attempts,
        last: Box::new(last.expect("at least one attempt was made")),
    })
}
