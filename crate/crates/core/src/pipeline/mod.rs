//! The outer learning loop and its scenarios, observations and evaluation.

mod evaluate;
mod learning;
mod observation;
mod scenario;

pub use evaluate::{evaluate, read_records, resimulate, write_records, EvalRow, Summary};
pub use learning::{
    force_concentration, forward_from_observation, run_learning, run_learning_from, IterationRecord, LearningConfig, LearningOutcome,
    LearningState, UpdateRecord,
};
pub use observation::{nested_vertex_map, restrict_trajectory, Observation};
pub use scenario::{default_observed, element_layers, Motion, Scenario};
