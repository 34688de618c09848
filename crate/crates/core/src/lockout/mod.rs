//! The constrained step planner and the path driver.

mod path;
mod pipeline;
mod planner;

pub use path::{run_path, InitMode, LockoutConfig};
pub use pipeline::{fit_path, ForwardConfig, PathFit};
pub use planner::{
    apply_step, classify, plan_step, plan_with_slack, ApplyOutcome, LockoutState, Phase,
    StepClass, StepPlan,
};
