//! Configuration conversation: a tool-call state machine driven by an LLM,
//! plus an offline questionnaire that reaches the same finalized config.

mod questionnaire;
mod wire;

use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hardware::{summarize, GpuInventory};
use crate::memory::{GpuLayout, MethodKind};
use crate::planner::{set_arg, validate, TrainingConfig, CONFIG_SCHEMA};
use crate::registry::{list_datasets, list_models};

pub use questionnaire::{questionnaire_next, Finished, Question, QuestionnaireState, QuestionnaireStep, QUESTION_COUNT};
pub use wire::{
    chat_request, parse_chat_response, tool_schema, AssistantReply, ChatClient, ChatError, RecordedClient, Session,
    MAX_TOOL_ROUNDS,
};

pub const TOOL_NAME: &str = "Set_ARGS";

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("unregistered tool `{0}`; only {TOOL_NAME} is available")]
    UnknownTool(String),
    #[error("conversation is already finalized")]
    Finalized,
    #[error("malformed tool call: {0}")]
    BadToolCall(String),
    #[error("session log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    #[serde(default)]
    pub id: String,
    pub name: String,
    pub key: String,
    pub value: String,
}

impl ToolCall {
    pub fn set_args(id: &str, key: &str, value: &str) -> Self {
        Self {
            id: id.to_string(),
            name: TOOL_NAME.to_string(),
            key: key.to_string(),
            value: value.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ToolCall>,
}

impl Turn {
    fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            tool_call: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Gathering,
    Confirming,
    Finalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", content = "data", rename_all = "snake_case")]
pub enum Event {
    User(String),
    Assistant(String),
    ToolCall(ToolCall),
    /// The user accepts the configuration the assistant presented.
    Confirm,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    None,
    AwaitConfirmation,
    EmitArgs(Box<TrainingConfig>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationState {
    pub transcript: Vec<Turn>,
    pub pending_config: TrainingConfig,
    pub phase: Phase,
}

/// Starting config for a machine: defaults, with the world taken from the
/// detected devices when there are any.
pub fn initial_config(inv: &GpuInventory) -> TrainingConfig {
    let mut cfg = TrainingConfig::default();
    if let Some(min) = inv.devices.iter().map(|d| d.total_mem).min() {
        cfg.world = GpuLayout {
            count: inv.len() as u32,
            per_device_mem: min,
        };
    }
    cfg
}

impl ConversationState {
    pub fn new(inv: &GpuInventory) -> Self {
        Self {
            transcript: vec![Turn::new(Role::System, build_system_message(inv))],
            pending_config: initial_config(inv),
            phase: Phase::Gathering,
        }
    }
}

const FAQ: &str = "\
Q: Which method should I pick?
A: full16 trains every weight and gives the best quality when memory allows. lomo16 fuses the update into the backward pass and keeps only one layer of gradients. lora16 trains small adapters on a frozen base. lora8 and lora4 also quantize the frozen base.
Q: My GPUs are too small for the model I want.
A: Move down the method list (full16, lomo16, lora16, lora8, lora4) or choose a smaller model. The minimum layout for each model size and method is fixed; ask before guessing.
Q: I need longer inputs than the model was trained on.
A: Raise max_length and set rope.kind to linear, dynamic_linear, ntk_v1, dynamic_ntk, ntk_v2 or xpos with rope.scale = target / train_len.
Q: What does ZeRO do?
A: It shards optimizer state, gradients and, at stage 3, parameters across GPUs. Stage 2 is the usual choice for full-parameter training on several GPUs.
Q: How should my data look?
A: JSONL with keys input and output. For pretraining input is empty. For instruction data input starts with \"Human: \" and output with \" Assistant: \".
Q: What is persona_name?
A: It replaces the [MODEL NAME] placeholder in identity samples so the model answers with its own name.
";

/// Deterministic system prompt: GPUs, config schema, tool contract, FAQ.
pub fn build_system_message(inv: &GpuInventory) -> String {
    let defaults = serde_json::to_value(initial_config(inv)).expect("config serializes");
    let mut s = String::new();
    s.push_str("You are a training assistant. Work out a fine-tuning configuration with the user, ");
    s.push_str("one question at a time. Change configuration values only through the Set_ARGS tool. ");
    s.push_str("When every required value is set, summarize the configuration and ask the user to confirm.\n\n");

    s.push_str("## GPUs\n");
    s.push_str(&summarize(inv));
    s.push_str("\n\n## Configuration keys\n");
    for f in &CONFIG_SCHEMA {
        let default = match &defaults[f.key] {
            serde_json::Value::Null => "unset".to_string(),
            v => v.to_string(),
        };
        writeln!(s, "- {} ({}; allowed: {}; default: {}): {}", f.key, f.kind, f.allowed, default, f.description).unwrap();
    }
    s.push_str("\nModels: ");
    s.push_str(&list_models().iter().map(|m| m.name.as_str()).collect::<Vec<_>>().join(", "));
    s.push_str("\nMethods: ");
    s.push_str(&MethodKind::ALL.map(|m| m.as_str()).join(", "));
    s.push_str("\nDatasets: ");
    let ds: Vec<String> = list_datasets()
        .iter()
        .map(|d| format!("{} ({} {}, {} samples)", d.name, d.language, d.domain, d.sample_count))
        .collect();
    s.push_str(&ds.join(", "));

    s.push_str("\n\n## Tool\n");
    writeln!(
        s,
        "{TOOL_NAME}(key, value): set one configuration key. Both arguments are strings. \
Nested rope fields use dotted keys such as rope.scale. The result is \"ok\" or an error message; \
on error fix the value and call again."
    )
    .unwrap();
    s.push_str("\n## FAQ\n");
    s.push_str(FAQ);
    s
}

/// Advances the conversation by one event.
pub fn step(state: &ConversationState, event: &Event) -> Result<(ConversationState, Effect), ProtocolError> {
    if state.phase == Phase::Finalized {
        return Err(ProtocolError::Finalized);
    }
    let mut next = state.clone();
    let effect = match event {
        Event::User(text) => {
            next.transcript.push(Turn::new(Role::User, text.clone()));
            Effect::None
        }
        Event::Assistant(text) => {
            next.transcript.push(Turn::new(Role::Assistant, text.clone()));
            if validate(&next.pending_config).is_empty() {
                next.phase = Phase::Confirming;
                Effect::AwaitConfirmation
            } else {
                Effect::None
            }
        }
        Event::ToolCall(call) => {
            if call.name != TOOL_NAME {
                return Err(ProtocolError::UnknownTool(call.name.clone()));
            }
            let mut call = call.clone();
            if call.id.is_empty() {
                call.id = format!("call_{}", next.transcript.len());
            }
            let result = match set_arg(&next.pending_config, &call.key, &call.value) {
                Ok(cfg) => {
                    next.pending_config = cfg;
                    next.phase = Phase::Gathering;
                    "ok".to_string()
                }
                Err(e) => e.to_string(),
            };
            next.transcript.push(Turn {
                role: Role::Assistant,
                content: String::new(),
                tool_call: Some(call.clone()),
            });
            next.transcript.push(Turn {
                role: Role::Tool,
                content: result,
                tool_call: Some(call),
            });
            Effect::None
        }
        Event::Confirm => {
            let report = validate(&next.pending_config);
            if report.is_empty() && next.phase == Phase::Confirming {
                next.transcript.push(Turn::new(Role::User, "confirmed"));
                next.phase = Phase::Finalized;
                Effect::EmitArgs(Box::new(next.pending_config.clone()))
            } else {
                let why = if report.is_empty() {
                    "nothing has been presented for confirmation yet".to_string()
                } else {
                    format!("not ready: {report}")
                };
                next.transcript.push(Turn::new(Role::System, why));
                next.phase = Phase::Gathering;
                Effect::None
            }
        }
    };
    Ok((next, effect))
}

/// Replays events from a fresh state; the last effect is returned too.
pub fn replay(inv: &GpuInventory, events: &[Event]) -> Result<(ConversationState, Effect), ProtocolError> {
    let mut state = ConversationState::new(inv);
    let mut effect = Effect::None;
    for e in events {
        (state, effect) = step(&state, e)?;
    }
    Ok((state, effect))
}

/// Append-only session log, one event per line.
pub struct EventLog {
    file: File,
}

impl EventLog {
    pub fn open(path: &Path) -> Result<Self, ProtocolError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file })
    }

    pub fn append(&mut self, event: &Event) -> Result<(), ProtocolError> {
        let mut line = serde_json::to_string(event).expect("event serializes");
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        Ok(())
    }
}

pub fn read_events(path: &Path) -> Result<Vec<Event>, ProtocolError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ProtocolError::Log {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hardware::parse_layout;

    fn inv() -> GpuInventory {
        parse_layout("2x48 GB").unwrap()
    }

    fn call(key: &str, value: &str) -> Event {
        Event::ToolCall(ToolCall::set_args("c", key, value))
    }

    #[test]
    fn system_message_content() {
        let msg = build_system_message(&inv());
        assert!(msg.contains("Set_ARGS"));
        assert!(msg.contains("48 GiB"));
        assert_eq!(msg, build_system_message(&inv()));
        assert!(build_system_message(&GpuInventory::default()).contains("No GPUs detected"));
    }

    #[test]
    fn tool_calls_apply_or_report() {
        let s = ConversationState::new(&inv());
        assert_eq!(s.transcript[0].role, Role::System);
        let (s, _) = step(&s, &call("model", "Llama2-7B")).unwrap();
        assert_eq!(s.pending_config.model, "Llama2-7B");
        assert_eq!(s.transcript.last().unwrap().content, "ok");

        let before = s.pending_config.clone();
        let (s, eff) = step(&s, &call("lora_rank", "-1")).unwrap();
        assert_eq!(eff, Effect::None);
        assert_eq!(s.pending_config, before);
        let msg = &s.transcript.last().unwrap().content;
        assert!(msg.contains("lora_rank") && msg.contains("≥ 1"), "{msg}");

        let bad = Event::ToolCall(ToolCall {
            name: "Run_Shell".into(),
            ..ToolCall::set_args("x", "model", "y")
        });
        assert!(matches!(step(&s, &bad), Err(ProtocolError::UnknownTool(_))));
    }

    #[test]
    fn confirmation_finalizes() {
        let s = ConversationState::new(&inv());
        let (s, eff) = step(&s, &Event::Assistant("Anything else?".into())).unwrap();
        assert_eq!(eff, Effect::None, "dataset is still missing");
        let (s, eff) = step(&s, &Event::Confirm).unwrap();
        assert_eq!(eff, Effect::None);
        assert_eq!(s.phase, Phase::Gathering);

        let (s, _) = step(&s, &call("dataset", "cmcqa")).unwrap();
        let (s, eff) = step(&s, &Event::Assistant("Shall I save this?".into())).unwrap();
        assert_eq!(eff, Effect::AwaitConfirmation);
        let (s, eff) = step(&s, &Event::Confirm).unwrap();
        assert_eq!(s.phase, Phase::Finalized);
        match eff {
            Effect::EmitArgs(cfg) => assert!(validate(&cfg).is_empty()),
            other => panic!("{other:?}"),
        }
        assert!(matches!(step(&s, &Event::User("hi".into())), Err(ProtocolError::Finalized)));
    }

    #[test]
    fn log_replays_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("session.jsonl");
        let events = vec![
            Event::User("medical chatbot please".into()),
            call("model", "llama-7b"),
            call("epochs", "0"),
            call("dataset", "cmcqa"),
            Event::Assistant("Confirm?".into()),
            Event::Confirm,
        ];
        let mut log = EventLog::open(&path).unwrap();
        for e in &events {
            log.append(e).unwrap();
        }
        let read = read_events(&path).unwrap();
        assert_eq!(read, events);
        let (a, _) = replay(&inv(), &events).unwrap();
        let (b, eff) = replay(&inv(), &read).unwrap();
        assert_eq!(a, b);
        assert!(matches!(eff, Effect::EmitArgs(_)));
    }
}
