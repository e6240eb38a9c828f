//! Chat-completion wire format with function calling, the client seam and
//! the session loop.

use std::collections::VecDeque;

use serde_json::{json, Value};
use thiserror::Error;

use super::{step, Effect, Event, EventLog, ConversationState, ProtocolError, Role, ToolCall, Turn, TOOL_NAME};
use crate::hardware::GpuInventory;

/// Model round trips allowed per user message.
pub const MAX_TOOL_ROUNDS: usize = 8;

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("chat request failed: {0}")]
    Transport(String),
    #[error("unexpected chat response: {0}")]
    BadResponse(String),
    #[error("recorded client has no more replies")]
    Exhausted,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssistantReply {
    pub content: Option<String>,
    pub tool_calls: Vec<ToolCall>,
}

pub trait ChatClient {
    fn complete(&mut self, transcript: &[Turn]) -> Result<AssistantReply, ChatError>;
}

/// Plays back canned replies in order; for tests and offline demos.
#[derive(Debug, Default)]
pub struct RecordedClient {
    replies: VecDeque<AssistantReply>,
    pub calls: usize,
}

impl RecordedClient {
    pub fn new(replies: impl IntoIterator<Item = AssistantReply>) -> Self {
        Self {
            replies: replies.into_iter().collect(),
            calls: 0,
        }
    }
}

impl ChatClient for RecordedClient {
    fn complete(&mut self, _transcript: &[Turn]) -> Result<AssistantReply, ChatError> {
        self.calls += 1;
        self.replies.pop_front().ok_or(ChatError::Exhausted)
    }
}

pub fn tool_schema() -> Value {
    json!({
        "type": "function",
        "function": {
            "name": TOOL_NAME,
            "description": "Set one training configuration key to a value.",
            "parameters": {
                "type": "object",
                "properties": {
                    "key": {"type": "string", "description": "configuration key, e.g. model or rope.scale"},
                    "value": {"type": "string", "description": "new value as text"}
                },
                "required": ["key", "value"]
            }
        }
    })
}

fn message(turn: &Turn) -> Value {
    match (turn.role, &turn.tool_call) {
        (Role::Assistant, Some(call)) => json!({
            "role": "assistant",
            "content": null,
            "tool_calls": [{
                "id": call.id,
                "type": "function",
                "function": {
                    "name": call.name,
                    "arguments": json!({"key": call.key, "value": call.value}).to_string(),
                }
            }]
        }),
        (Role::Tool, Some(call)) => json!({
            "role": "tool",
            "tool_call_id": call.id,
            "content": turn.content,
        }),
        (role, _) => json!({
            "role": role,
            "content": turn.content,
        }),
    }
}

/// Request body for a chat-completion endpoint.
pub fn chat_request(model: &str, transcript: &[Turn]) -> Value {
    json!({
        "model": model,
        "messages": transcript.iter().map(message).collect::<Vec<_>>(),
        "tools": [tool_schema()],
        "tool_choice": "auto",
    })
}

fn arg_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Null => None,
        other => Some(other.to_string()),
    }
}

pub fn parse_chat_response(body: &Value) -> Result<AssistantReply, ChatError> {
    let msg = body
        .pointer("/choices/0/message")
        .ok_or_else(|| ChatError::BadResponse("missing choices[0].message".into()))?;
    let content = msg
        .get("content")
        .and_then(Value::as_str)
        .filter(|s| !s.trim().is_empty())
        .map(str::to_string);
    let mut tool_calls = Vec::new();
    if let Some(calls) = msg.get("tool_calls").and_then(Value::as_array) {
        for c in calls {
            let id = c.get("id").and_then(Value::as_str).unwrap_or_default().to_string();
            let name = c
                .pointer("/function/name")
                .and_then(Value::as_str)
                .ok_or_else(|| ChatError::BadResponse("tool call without a function name".into()))?
                .to_string();
            let raw = c.pointer("/function/arguments").and_then(Value::as_str).unwrap_or("{}");
            let args: Value = serde_json::from_str(raw)
                .map_err(|e| ProtocolError::BadToolCall(format!("arguments are not JSON: {e}")))?;
            let key = args.get("key").and_then(arg_text);
            let value = args.get("value").and_then(arg_text);
            let (Some(key), Some(value)) = (key, value) else {
                return Err(ProtocolError::BadToolCall(format!("{name} needs key and value, got {raw}")).into());
            };
            tool_calls.push(ToolCall { id, name, key, value });
        }
    }
    Ok(AssistantReply { content, tool_calls })
}

/// One conversation: owns its state, its client and an optional log.
pub struct Session<C: ChatClient> {
    pub state: ConversationState,
    pub client: C,
    events: Vec<Event>,
    log: Option<EventLog>,
}

impl<C: ChatClient> Session<C> {
    pub fn new(inv: &GpuInventory, client: C) -> Self {
        Self {
            state: ConversationState::new(inv),
            client,
            events: Vec::new(),
            log: None,
        }
    }

    pub fn with_log(mut self, log: EventLog) -> Self {
        self.log = Some(log);
        self
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    fn apply(&mut self, event: Event) -> Result<Effect, ChatError> {
        let (next, effect) = step(&self.state, &event)?;
        self.state = next;
        if let Some(log) = &mut self.log {
            log.append(&event)?;
        }
        self.events.push(event);
        Ok(effect)
    }

    /// Sends a user message and runs model rounds until the model answers
    /// without tool calls. Returns the text replies and the last effect.
    pub fn user_says(&mut self, text: &str) -> Result<(Vec<String>, Effect), ChatError> {
        let mut effect = self.apply(Event::User(text.to_string()))?;
        let mut said = Vec::new();
        for _ in 0..MAX_TOOL_ROUNDS {
            let reply = self.client.complete(&self.state.transcript)?;
            let done = reply.tool_calls.is_empty();
            for call in reply.tool_calls {
                effect = self.apply(Event::ToolCall(call))?;
            }
            if let Some(content) = reply.content {
                effect = self.apply(Event::Assistant(content.clone()))?;
                said.push(content);
            }
            if done {
                break;
            }
        }
        Ok((said, effect))
    }

    pub fn confirm(&mut self) -> Result<Effect, ChatError> {
        self.apply(Event::Confirm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assistant::Phase;
    use crate::hardware::parse_layout;

    fn reply(content: Option<&str>, calls: &[(&str, &str)]) -> AssistantReply {
        AssistantReply {
            content: content.map(str::to_string),
            tool_calls: calls
                .iter()
                .enumerate()
                .map(|(i, (k, v))| ToolCall::set_args(&format!("call_{i}"), k, v))
                .collect(),
        }
    }

    #[test]
    fn request_shape() {
        let inv = parse_layout("2x48 GB").unwrap();
        let state = ConversationState::new(&inv);
        let (state, _) = step(&state, &Event::ToolCall(ToolCall::set_args("a1", "model", "Llama-7B"))).unwrap();
        let req = chat_request("gpt-4", &state.transcript);
        assert_eq!(req["tools"][0]["function"]["name"], "Set_ARGS");
        assert_eq!(req["tools"][0]["function"]["parameters"]["required"], json!(["key", "value"]));
        let msgs = req["messages"].as_array().unwrap();
        assert_eq!(msgs[0]["role"], "system");
        assert_eq!(msgs[1]["tool_calls"][0]["id"], "a1");
        assert_eq!(msgs[2]["role"], "tool");
        assert_eq!(msgs[2]["tool_call_id"], "a1");
        assert_eq!(msgs[2]["content"], "ok");
    }

    #[test]
    fn response_parsing() {
        let body = json!({"choices": [{"message": {
            "role": "assistant",
            "content": null,
            "tool_calls": [{"id": "x", "type": "function",
                "function": {"name": "Set_ARGS", "arguments": "{\"key\": \"epochs\", \"value\": 3}"}}]
        }}]});
        let r = parse_chat_response(&body).unwrap();
        assert_eq!(r.content, None);
        assert_eq!(r.tool_calls, vec![ToolCall::set_args("x", "epochs", "3")]);
        assert!(parse_chat_response(&json!({})).is_err());
        let bad = json!({"choices": [{"message": {"tool_calls": [{"function": {"name": "Set_ARGS", "arguments": "{}"}}]}}]});
        assert!(matches!(parse_chat_response(&bad), Err(ChatError::Protocol(_))));
    }

    #[test]
    fn session_with_recorded_client() {
        let inv = parse_layout("2x48 GB").unwrap();
        let client = RecordedClient::new([
            reply(Some("Which domain?"), &[]),
            reply(None, &[("model", "Llama-7B"), ("lora_rank", "0")]),
            reply(None, &[("dataset", "cmcqa")]),
            reply(Some("Llama-7B on cmcqa. Confirm?"), &[]),
        ]);
        let mut s = Session::new(&inv, client);
        let (said, eff) = s.user_says("hello").unwrap();
        assert_eq!(said, vec!["Which domain?"]);
        assert_eq!(eff, Effect::None);
        let (_, eff) = s.user_says("medical, english").unwrap();
        assert_eq!(eff, Effect::AwaitConfirmation);
        assert_eq!(s.state.phase, Phase::Confirming);
        assert!(matches!(s.confirm().unwrap(), Effect::EmitArgs(_)));
        assert_eq!(s.client.calls, 4);

        let (replayed, _) = crate::assistant::replay(&inv, s.events()).unwrap();
        assert_eq!(replayed, s.state);
        assert!(matches!(s.user_says("more"), Err(ChatError::Protocol(ProtocolError::Finalized))));
    }
}
