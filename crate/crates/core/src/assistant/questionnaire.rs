//! Ten fixed questions that fill a config without any model in the loop.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::hardware::GpuInventory;
use crate::planner::{recommend, set_arg, validate, Plan, Priority, Requirements, TrainingConfig};
use crate::registry::{default_dataset, find_dataset, list_datasets, list_models, resolve_model};

use super::initial_config;

pub const QUESTION_COUNT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Domain,
    Language,
    Model,
    TrainHere,
    Dataset,
    Persona,
    Preference,
    Context,
    Schedule,
    Tracking,
}

const SLOTS: [Slot; QUESTION_COUNT] = [
    Slot::Domain,
    Slot::Language,
    Slot::Model,
    Slot::TrainHere,
    Slot::Dataset,
    Slot::Persona,
    Slot::Preference,
    Slot::Context,
    Slot::Schedule,
    Slot::Tracking,
];

impl Slot {
    fn id(self) -> &'static str {
        match self {
            Slot::Domain => "domain",
            Slot::Language => "language",
            Slot::Model => "model",
            Slot::TrainHere => "train_here",
            Slot::Dataset => "dataset",
            Slot::Persona => "persona",
            Slot::Preference => "preference",
            Slot::Context => "context",
            Slot::Schedule => "schedule",
            Slot::Tracking => "tracking",
        }
    }

    fn prompt(self) -> &'static str {
        match self {
            Slot::Domain => "What domain is the model for?",
            Slot::Language => "Which language will it mostly see?",
            Slot::Model => "Which base model? Pick one or let the planner choose.",
            Slot::TrainHere => "Train on this machine? Answer no to get a setup readme instead.",
            Slot::Dataset => "Which dataset? A built-in name or a path to a local JSONL file.",
            Slot::Persona => "What name should the model call itself? It replaces [MODEL NAME] in the data.",
            Slot::Preference => "Method preference: best quality, least memory, or auto?",
            Slot::Context => "Target context length in tokens, or auto for the model default.",
            Slot::Schedule => "Epochs and learning rate, as \"epochs, lr\".",
            Slot::Tracking => "Log the run to external experiment tracking?",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Question {
    pub number: usize,
    pub total: usize,
    pub id: &'static str,
    pub prompt: String,
    pub choices: Vec<String>,
    pub default: String,
    /// Why the previous answer was rejected.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finished {
    pub config: TrainingConfig,
    pub plan: Plan,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum QuestionnaireStep {
    Ask(Question),
    Done(Box<Finished>),
}

#[derive(Debug, Clone)]
pub struct QuestionnaireState {
    pub question_index: usize,
    pub answers: BTreeMap<&'static str, String>,
    pub pending_config: TrainingConfig,
    pub requirements: Requirements,
    inventory: GpuInventory,
    hint: Option<String>,
    finished: Option<Finished>,
}

impl QuestionnaireState {
    pub fn new(inv: &GpuInventory) -> Self {
        let requirements = Requirements::default();
        let mut pending_config = initial_config(inv);
        pending_config.dataset = Some(default_dataset(&requirements.domain, &requirements.language).name);
        Self {
            question_index: 0,
            answers: BTreeMap::new(),
            pending_config,
            requirements,
            inventory: inv.clone(),
            hint: None,
            finished: None,
        }
    }

    /// Feeds answers in order and returns where that leaves the wizard.
    pub fn run<'a>(inv: &GpuInventory, answers: impl IntoIterator<Item = &'a str>) -> (Self, QuestionnaireStep) {
        let mut state = Self::new(inv);
        let mut last = questionnaire_next(&mut state, None);
        for a in answers {
            last = questionnaire_next(&mut state, Some(a));
        }
        (state, last)
    }

    fn choices(&self, slot: Slot) -> Vec<String> {
        let owned = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        match slot {
            Slot::Domain => owned(&["general", "medical"]),
            Slot::Language => owned(&["en", "zh"]),
            Slot::Model => std::iter::once("auto".to_string())
                .chain(list_models().into_iter().map(|m| m.name))
                .collect(),
            Slot::TrainHere | Slot::Tracking => owned(&["yes", "no"]),
            Slot::Dataset => list_datasets().into_iter().map(|d| d.name).collect(),
            Slot::Preference => owned(&["auto", "quality", "memory"]),
            Slot::Persona | Slot::Context | Slot::Schedule => Vec::new(),
        }
    }

    fn default_answer(&self, slot: Slot) -> String {
        match slot {
            Slot::Domain => "general".into(),
            Slot::Language => "en".into(),
            Slot::Model | Slot::Preference | Slot::Context => "auto".into(),
            Slot::TrainHere => "yes".into(),
            Slot::Dataset => default_dataset(&self.requirements.domain, &self.requirements.language).name,
            Slot::Persona => "none".into(),
            Slot::Schedule => format!("{}, {}", self.pending_config.epochs, self.pending_config.lr),
            Slot::Tracking => "no".into(),
        }
    }

    fn question(&self) -> Question {
        let slot = SLOTS[self.question_index];
        Question {
            number: self.question_index + 1,
            total: QUESTION_COUNT,
            id: slot.id(),
            prompt: slot.prompt().to_string(),
            choices: self.choices(slot),
            default: self.default_answer(slot),
            hint: self.hint.clone(),
        }
    }

    fn refresh_dataset_default(&mut self) {
        if self.requirements.dataset_choice.is_none() {
            let d = default_dataset(&self.requirements.domain, &self.requirements.language);
            self.pending_config.dataset = Some(d.name);
        }
    }

    fn accept(&mut self, slot: Slot, raw: &str) -> Result<String, String> {
        let mut answer = raw.trim().to_string();
        if answer.is_empty() {
            answer = self.default_answer(slot);
        }
        let choices = self.choices(slot);
        if !choices.is_empty() {
            if let Ok(n) = answer.parse::<usize>() {
                answer = choices
                    .get(n.wrapping_sub(1))
                    .cloned()
                    .ok_or_else(|| format!("choose a number from 1 to {}", choices.len()))?;
            }
        }
        let lower = answer.to_ascii_lowercase();
        let yes_no = |s: &str| match s {
            "yes" | "y" | "true" | "on" => Ok(true),
            "no" | "n" | "false" | "off" => Ok(false),
            _ => Err("answer yes or no".to_string()),
        };
        match slot {
            Slot::Domain => {
                if !choices.contains(&lower) {
                    return Err(format!("pick one of: {}", choices.join(", ")));
                }
                self.requirements.domain = lower.clone();
                self.refresh_dataset_default();
                Ok(lower)
            }
            Slot::Language => {
                let lang = match lower.as_str() {
                    "en" | "english" => "en",
                    "zh" | "chinese" => "zh",
                    _ => return Err("pick en or zh".into()),
                };
                self.requirements.language = lang.into();
                self.refresh_dataset_default();
                Ok(lang.into())
            }
            Slot::Model => {
                if lower == "auto" {
                    self.requirements.model_choice = None;
                    return Ok("auto".into());
                }
                let spec = resolve_model(&answer).map_err(|e| e.to_string())?;
                self.requirements.model_choice = Some(spec.name.clone());
                self.pending_config.model = spec.name.clone();
                Ok(spec.name)
            }
            Slot::TrainHere => {
                self.requirements.train_here = yes_no(&lower)?;
                Ok(lower)
            }
            Slot::Dataset => {
                let value = if let Some(d) = find_dataset(&answer) {
                    d.name
                } else if answer.ends_with(".jsonl") || answer.contains('/') || answer.contains('\\') {
                    answer.clone()
                } else {
                    return Err(format!(
                        "not a built-in dataset ({}); give a path ending in .jsonl for local data",
                        choices.join(", ")
                    ));
                };
                self.requirements.dataset_choice = Some(value.clone());
                self.pending_config.dataset = Some(value.clone());
                Ok(value)
            }
            Slot::Persona => {
                let cfg = set_arg(&self.pending_config, "persona_name", &answer).map_err(|e| e.to_string())?;
                self.requirements.persona_name = cfg.persona_name.clone();
                self.pending_config = cfg;
                Ok(answer)
            }
            Slot::Preference => {
                self.requirements.quality_vs_memory = match lower.as_str() {
                    "auto" | "quality" => Priority::QualityFirst,
                    "memory" => Priority::MemoryFirst,
                    _ => return Err("pick auto, quality or memory".into()),
                };
                Ok(lower)
            }
            Slot::Context => {
                if lower == "auto" {
                    self.requirements.context_target = None;
                    return Ok(lower);
                }
                match lower.parse::<u32>() {
                    Ok(n) if n >= 1 => {
                        self.requirements.context_target = Some(n);
                        Ok(n.to_string())
                    }
                    _ => Err("give a positive whole number of tokens, or auto".into()),
                }
            }
            Slot::Schedule => {
                let parts: Vec<&str> = answer
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .collect();
                let [epochs, lr] = parts[..] else {
                    return Err("give two values, e.g. \"3, 2e-4\"".into());
                };
                let cfg = set_arg(&self.pending_config, "epochs", epochs)
                    .and_then(|c| set_arg(&c, "lr", lr))
                    .map_err(|e| e.to_string())?;
                self.pending_config = cfg;
                Ok(format!("{epochs}, {lr}"))
            }
            Slot::Tracking => {
                self.pending_config.wandb = yes_no(&lower)?;
                Ok(lower)
            }
        }
    }

    fn finish(&mut self) -> Result<Finished, String> {
        let mut plan = recommend(&self.requirements, &self.inventory).map_err(|e| e.to_string())?;
        let mut cfg = plan.config.clone();
        cfg.epochs = self.pending_config.epochs;
        cfg.lr = self.pending_config.lr;
        cfg.wandb = self.pending_config.wandb;
        let report = validate(&cfg);
        if !report.is_empty() {
            return Err(report.to_string());
        }
        plan.config = cfg.clone();
        plan.refresh(&self.inventory);
        self.pending_config = cfg.clone();
        Ok(Finished { config: cfg, plan })
    }
}

/// Without an answer, repeats the current question. With one, records it
/// and moves on, or re-asks with a hint when it is not acceptable.
pub fn questionnaire_next(state: &mut QuestionnaireState, answer: Option<&str>) -> QuestionnaireStep {
    if let Some(done) = &state.finished {
        return QuestionnaireStep::Done(Box::new(done.clone()));
    }
    let Some(raw) = answer else {
        return QuestionnaireStep::Ask(state.question());
    };
    let slot = SLOTS[state.question_index];
    match state.accept(slot, raw) {
        Ok(value) => {
            state.answers.insert(slot.id(), value);
            state.hint = None;
            state.question_index = if state.answers.len() == QUESTION_COUNT {
                QUESTION_COUNT
            } else {
                state.question_index + 1
            };
        }
        Err(hint) => {
            state.hint = Some(hint);
            return QuestionnaireStep::Ask(state.question());
        }
    }
    if state.question_index < QUESTION_COUNT {
        return QuestionnaireStep::Ask(state.question());
    }
    match state.finish() {
        Ok(done) => {
            state.finished = Some(done.clone());
            QuestionnaireStep::Done(Box::new(done))
        }
        Err(why) => {
            // the pinned model cannot be planned; ask for another
            state.question_index = SLOTS.iter().position(|s| *s == Slot::Model).unwrap();
            state.hint = Some(why);
            QuestionnaireStep::Ask(state.question())
        }
    }
}
