use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::provider::{HttpEndpoint, JsonClient, ProviderError};

use super::Prompt;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    /// The most deterministic setting: greedy decoding.
    fn default() -> Self {
        GenerationParams {
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

/// One completion request. `doc_id` and `indicator_id` identify the task
/// for providers that need it (the mock); HTTP providers send only the
/// messages and parameters.
#[derive(Debug, Clone)]
pub struct ChatRequest<'a> {
    pub doc_id: &'a str,
    pub indicator_id: &'a str,
    pub prompt: &'a Prompt,
    pub params: &'a GenerationParams,
}

/// A chat model. Implementations must tolerate concurrent calls.
pub trait ChatProvider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, req: &ChatRequest<'_>) -> Result<String, ProviderError>;
}

/// Reply the mock gives when it has nothing for a task.
pub const MOCK_REFUSAL: &str = "I cannot find this information in the reference content.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockReply {
    pub doc_id: String,
    pub indicator_id: String,
    pub reply: String,
    /// Strings that must all appear in the rendered prompt for `reply` to
    /// be given; models a model that can only answer from what it sees.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grounding: Vec<String>,
    /// Given instead of `reply` when grounding fails; defaults to a refusal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockFixture {
    #[serde(default = "default_mock_name")]
    pub name: String,
    pub replies: Vec<MockReply>,
}

fn default_mock_name() -> String {
    "mock".into()
}

/// Deterministic provider answering from a fixture keyed by
/// (doc_id, indicator_id). Generation parameters are ignored.
#[derive(Debug, Clone)]
pub struct MockProvider {
    name: String,
    replies: BTreeMap<(String, String), MockReply>,
}

impl MockProvider {
    pub fn new(fixture: MockFixture) -> Result<Self, String> {
        let mut replies = BTreeMap::new();
        for r in fixture.replies {
            let key = (r.doc_id.clone(), r.indicator_id.clone());
            if replies.insert(key, r).is_some() {
                return Err("duplicate (doc_id, indicator_id) in mock fixture".into());
            }
        }
        Ok(MockProvider {
            name: fixture.name,
            replies,
        })
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let fixture: MockFixture = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::new(fixture)
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

impl ChatProvider for MockProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, req: &ChatRequest<'_>) -> Result<String, ProviderError> {
        let key = (req.doc_id.to_string(), req.indicator_id.to_string());
        let Some(entry) = self.replies.get(&key) else {
            return Ok(MOCK_REFUSAL.to_string());
        };
        if entry.grounding.is_empty() {
            return Ok(entry.reply.clone());
        }
        let text = req.prompt.render();
        if entry.grounding.iter().all(|g| text.contains(g.as_str())) {
            Ok(entry.reply.clone())
        } else {
            Ok(entry.fallback.clone().unwrap_or_else(|| MOCK_REFUSAL.to_string()))
        }
    }
}

#[derive(Serialize)]
struct ChatBody<'a> {
    messages: Vec<Message>,
    params: &'a GenerationParams,
}

#[derive(Deserialize)]
struct ChatResponse {
    content: String,
}

/// Remote chat model: POST `{"messages": [...], "params": {...}}` →
/// `{"content": "..."}`.
#[derive(Debug, Clone)]
pub struct HttpChat {
    client: JsonClient,
}

impl HttpChat {
    /// Retries are handled by the caller, so the client makes one attempt.
    pub fn new(name: impl Into<String>, mut endpoint: HttpEndpoint) -> Self {
        endpoint.retries = 0;
        HttpChat {
            client: JsonClient::new(name, endpoint),
        }
    }
}

impl ChatProvider for HttpChat {
    fn name(&self) -> &str {
        self.client.name()
    }

    fn complete(&self, req: &ChatRequest<'_>) -> Result<String, ProviderError> {
        let body = ChatBody {
            messages: req.prompt.messages(),
            params: req.params,
        };
        let resp: ChatResponse = self.client.post(&body)?;
        Ok(resp.content)
    }
}
