//! Plants, reference trajectories, fixed-step integration and the
//! closed-loop online-learning runner.

mod plant;
mod runner;
mod trajectory;

pub use plant::{integrate_step, measure, plant_deriv, PlantSpec};
pub use runner::{
    run_closed_loop, BudgetCheck, Forgetting, HyperPolicy, ModelSpec, RunConfig, RunFailure, Trace,
    TraceRow, TriggerMode,
};
pub use trajectory::{reference_eval, TrajectorySpec};
