//! Chat-completion client over HTTP.

use serde_json::Value;
use tuneplan_core::assistant::{chat_request, parse_chat_response, AssistantReply, ChatClient, ChatError};
use tuneplan_core::assistant::Turn;

pub const URL_ENV: &str = "TUNEPLAN_LLM_URL";
pub const MODEL_ENV: &str = "TUNEPLAN_LLM_MODEL";
pub const KEY_ENV: &str = "OPENAI_API_KEY";

pub struct HttpClient {
    url: String,
    model: String,
    key: Option<String>,
}

impl HttpClient {
    pub fn from_env() -> Self {
        Self {
            url: std::env::var(URL_ENV).unwrap_or_else(|_| "https://api.openai.com/v1/chat/completions".into()),
            model: std::env::var(MODEL_ENV).unwrap_or_else(|_| "gpt-4".into()),
            key: std::env::var(KEY_ENV).ok(),
        }
    }
}

impl ChatClient for HttpClient {
    fn complete(&mut self, transcript: &[Turn]) -> Result<AssistantReply, ChatError> {
        let body = chat_request(&self.model, transcript);
        let mut req = ureq::post(&self.url);
        if let Some(key) = &self.key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| ChatError::Transport(e.to_string()))?;
        let value: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ChatError::BadResponse(e.to_string()))?;
        parse_chat_response(&value)
    }
}

/// Stands in for a model when no endpoint is available: reads the
/// operator's own `key=value` lines as tool calls.
pub struct ManualClient {
    pending: Option<String>,
}

impl ManualClient {
    pub fn new() -> Self {
        Self { pending: None }
    }
}

impl ChatClient for ManualClient {
    fn complete(&mut self, transcript: &[Turn]) -> Result<AssistantReply, ChatError> {
        use tuneplan_core::assistant::{Role, ToolCall, TOOL_NAME};
        let last_user = transcript.iter().rev().find(|t| t.role == Role::User);
        let fresh = matches!(transcript.last(), Some(t) if t.role == Role::User);
        if !fresh {
            return Ok(AssistantReply {
                content: self.pending.take().or(Some("Noted.".into())),
                tool_calls: Vec::new(),
            });
        }
        let text = last_user.map(|t| t.content.as_str()).unwrap_or_default();
        let tool_calls: Vec<ToolCall> = text
            .split(';')
            .filter_map(|part| part.split_once('='))
            .enumerate()
            .map(|(i, (k, v))| ToolCall {
                id: format!("manual_{}_{i}", transcript.len()),
                name: TOOL_NAME.into(),
                key: k.trim().into(),
                value: v.trim().into(),
            })
            .collect();
        if tool_calls.is_empty() {
            return Ok(AssistantReply {
                content: Some("Use key=value pairs separated by ';', or /confirm when done.".into()),
                tool_calls,
            });
        }
        self.pending = Some(format!("Set {} key(s).", tool_calls.len()));
        Ok(AssistantReply { content: None, tool_calls })
    }
}
