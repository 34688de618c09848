use serde::{Deserialize, Serialize};

use super::path::{run_path, InitMode, LockoutConfig};
use crate::net::{Batch, NetworkSpec};
use crate::optim::{Batching, ConvergenceRule, OptimizerKind, TrainResult, Trainer};
use crate::pathlog::PathLog;
use crate::Result;

/// Unconstrained phase that produces the path starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardConfig {
    pub optimizer: OptimizerKind,
    pub rule: ConvergenceRule,
    pub batching: Batching,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        ForwardConfig {
            optimizer: OptimizerKind::gradient_descent(5e-3),
            rule: ConvergenceRule::default(),
            batching: Batching::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathFit {
    /// The unconstrained run; its validation-minimum snapshot is the
    /// early-stopping solution.
    pub forward: TrainResult,
    /// Parameters the path started from.
    pub start: Vec<f64>,
    pub log: PathLog,
}

impl PathFit {
    /// Parameters at the validation minimum of the path.
    pub fn selected_params(&self) -> Option<&[f64]> {
        self.log.params_at(self.log.annotations.validation_min?)
    }

    pub fn sparse_params(&self) -> Option<&[f64]> {
        self.log.params_at(self.log.annotations.sparse_pick?)
    }
}

/// Trains to convergence from `init`, then runs the path from the converged
/// parameters or from the early-stopping snapshot, per `cfg.init_mode`.
pub fn fit_path(
    spec: &NetworkSpec,
    init: &[f64],
    train: &Batch,
    validation: &Batch,
    forward: &ForwardConfig,
    cfg: &LockoutConfig,
) -> Result<PathFit> {
    cfg.validate()?;
    let result = Trainer::new(spec, forward.optimizer)
        .batching(forward.batching)
        .to_convergence(init, train, Some(validation), &forward.rule)?;
    let start = match cfg.init_mode {
        InitMode::FromUnconstrained => result.params.clone(),
        InitMode::FromEarlyStopping => result.best_params.clone(),
    };
    let log = run_path(spec, &start, train, Some(validation), cfg)?;
    Ok(PathFit {
        forward: result,
        start,
        log,
    })
}
