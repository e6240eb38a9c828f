//! Planning and desk-scale training core for LLM fine-tuning runs.

pub mod assistant;
pub mod datasets;
pub mod emit;
pub mod hardware;
pub mod memory;
pub mod planner;
pub mod registry;
pub mod rope;
pub mod telemetry;
pub mod traincore;
