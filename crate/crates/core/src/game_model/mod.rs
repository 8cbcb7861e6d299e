//! Game data model: dimensions, evaluators, LQ games, trajectories,
//! stage combination, the unicycle driving family and scenario files.

mod combine;
mod dims;
mod eval;
mod lq;
mod trajectory;
mod scenario;
mod unicycle;
mod validate;

pub use combine::{
    combine_lq_stages, expand_trajectory, merge_multipliers, merge_trajectory, merged_dims, MergedModel,
    StageGroups,
};
pub use dims::Dimensions;
pub use eval::{compose, compose_scalar, evaluate_stage, GameModel, ScalarEval, StageEval, VecEval};
pub use lq::{LqGame, LqPlayerStage, LqStage};
pub use trajectory::{Multipliers, Trajectory};
pub use unicycle::{vehicle_paths, DrivingGame, DrivingParams};
pub use scenario::{
    driving_scenario, load_scenario, CoefficientTable, CustomLqParams, DimsSpec, GameSpec, ModelSpec, PlayerTable, RowCounts,
    Scenario, StageTable, TerminalTable,
};
pub use validate::{validate_lq, validate_model, ValidationReport};
