use serde::{Deserialize, Serialize};

use super::planner::{apply_step, plan_step, LockoutState, Phase};
use crate::constraint::{penalty_value, Penalty, Selection};
use crate::net::{active_inputs, backward, evaluate_loss, Batch, NetworkSpec};
use crate::optim::{optimizer_step, OptimizerKind};
use crate::pathlog::{fingerprint, PathLog, PathPoint, SelectionKeeper};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Start from the converged solution and descend immediately.
    FromUnconstrained,
    /// Start from the early-stopping snapshot, hold its budget until the
    /// iterate settles, then descend.
    FromEarlyStopping,
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "from_unconstrained" => Ok(InitMode::FromUnconstrained),
            "from_early_stopping" => Ok(InitMode::FromEarlyStopping),
            other => Err(Error::Config(format!("unknown init mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockoutConfig {
    pub penalty: Penalty,
    pub selection: Selection,
    /// Base optimizer; the magnitude of its proposed delta is the per-step
    /// trust region `s`.
    pub optimizer: OptimizerKind,
    /// Guard in the ranking ratio `|g| / (p + eps)`.
    pub epsilon: f64,
    /// Budget decrement per descent step; default `(t* - t_floor) / (10 M)`.
    pub delta_t: Option<f64>,
    /// Planner steps in the descending phase; default enough decrements to
    /// reach `t_floor` plus a 10% tail.
    pub max_iterations: Option<usize>,
    pub init_mode: InitMode,
    /// Smallest budget; default the penalty with every selected parameter at 0.
    pub t_floor: Option<f64>,
    /// Step budget of the constant-budget phase (early-stopping start only).
    pub reach_iterations: usize,
    /// The constant-budget phase also ends once the planned step over the
    /// selection is shorter than this.
    pub reach_min_step: f64,
    /// Planner steps per budget decrement.
    pub inner_steps: usize,
    /// Validation loss is evaluated on every `validation_stride`-th point.
    pub validation_stride: usize,
    /// Parameter snapshot every k-th point; default keeps at most 200.
    pub snapshot_stride: Option<usize>,
    /// Tolerance of the sparse pick annotation.
    pub sparse_tolerance: f64,
}

impl LockoutConfig {
    /// Defaults around a penalty and a selection: gradient descent at 1e-2,
    /// descent from the unconstrained solution.
    pub fn new(penalty: Penalty, selection: Selection) -> Self {
        LockoutConfig {
            penalty,
            selection,
            optimizer: OptimizerKind::gradient_descent(1e-2),
            epsilon: 1e-8,
            delta_t: None,
            max_iterations: None,
            init_mode: InitMode::FromUnconstrained,
            t_floor: None,
            reach_iterations: 500,
            reach_min_step: 1e-8,
            inner_steps: 1,
            validation_stride: 1,
            snapshot_stride: None,
            sparse_tolerance: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.penalty.validate()?;
        self.optimizer.validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be > 0");
        }
        if let Some(dt) = self.delta_t {
            if !(dt >= 0.0 && dt.is_finite()) {
                return bad("delta_t must be >= 0");
            }
        }
        if let Some(f) = self.t_floor {
            if !f.is_finite() {
                return bad("t_floor must be finite");
            }
        }
        if !(self.reach_min_step >= 0.0) {
            return bad("reach_min_step must be >= 0");
        }
        if self.inner_steps == 0 {
            return bad("inner_steps must be >= 1");
        }
        if self.validation_stride == 0 {
            return bad("validation_stride must be >= 1");
        }
        if self.snapshot_stride == Some(0) {
            return bad("snapshot_stride must be >= 1");
        }
        if !(self.sparse_tolerance >= 0.0) {
            return bad("sparse_tolerance must be >= 0");
        }
        Ok(())
    }

    pub fn floor(&self) -> f64 {
        self.t_floor
            .unwrap_or_else(|| self.penalty.floor(self.selection.len()))
    }

    pub fn delta_t_for(&self, t_start: f64) -> f64 {
        self.delta_t.unwrap_or_else(|| {
            let m = self.selection.len().max(1) as f64;
            (t_start - self.floor()).max(0.0) / (10.0 * m)
        })
    }

    pub fn descent_steps_for(&self, t_start: f64) -> usize {
        self.max_iterations.unwrap_or_else(|| {
            let dt = self.delta_t_for(t_start);
            let range = (t_start - self.floor()).max(0.0);
            let decrements = if dt > 0.0 { (range / dt).ceil() as usize } else { 0 };
            self.inner_steps * (decrements + decrements / 10 + 10)
        })
    }
}

struct Recorder<'a> {
    spec: &'a NetworkSpec,
    train: &'a Batch,
    validation: Option<&'a Batch>,
    cfg: &'a LockoutConfig,
    snapshot_stride: usize,
    keeper: SelectionKeeper,
    log: PathLog,
}

impl Recorder<'_> {
    fn record(&mut self, state: &LockoutState, crossings: usize, last: bool) -> Result<()> {
        let index = self.log.points.len();
        let train_loss = evaluate_loss(self.spec, &state.params, self.train)?;
        let val_loss = match self.validation {
            Some(v) if last || index % self.cfg.validation_stride == 0 => {
                Some(evaluate_loss(self.spec, &state.params, v)?)
            }
            _ => None,
        };
        let nonzero_count = self.cfg.selection.nonzero(&state.params);
        if let Some(v) = val_loss {
            self.keeper.offer(index, v, nonzero_count, &state.params);
        }
        self.log.points.push(PathPoint {
            iteration: state.iteration,
            phase: state.phase,
            t: state.t,
            train_loss,
            val_loss,
            nonzero_count,
            active_features: active_inputs(self.spec, &state.params),
            penalty: state.penalty,
            crossings,
            params: (index % self.snapshot_stride == 0).then(|| state.params.clone()),
        });
        Ok(())
    }

    fn finish(mut self) -> PathLog {
        if self.log.annotate(self.cfg.sparse_tolerance).is_ok() {
            self.keeper.finish(&mut self.log);
        }
        self.log
    }
}

/// One planner step: gradient, base optimizer, plan, apply.
fn step(
    spec: &NetworkSpec,
    train: &Batch,
    cfg: &LockoutConfig,
    state: &mut LockoutState,
) -> Result<(usize, f64)> {
    let (_, grad) = backward(spec, &state.params, train.x.view(), &train.y)?;
    let delta = optimizer_step(&cfg.optimizer, &mut state.optimizer, &grad)?;
    let g: Vec<f64> = grad.iter().map(|v| -v).collect();
    let s: Vec<f64> = delta.iter().map(|v| v.abs()).collect();
    let plan = plan_step(state, cfg, &g, &s)?;
    let norm = plan.selection_step_norm();
    let outcome = apply_step(state, &plan, cfg)?;
    Ok((outcome.crossed.len(), norm))
}

/// Follows the constrained path from `start`.
///
/// The budget starts at `P(start)`. With [`InitMode::FromEarlyStopping`] it is
/// held there for up to `reach_iterations` steps first. Each descending step
/// lowers it by `delta_t` (never below the floor) and takes `inner_steps`
/// planner steps. The run ends after the step budget or once the floor is
/// reached with every selected parameter at zero.
///
/// Point 0 is the starting point. Non-finite values abort the run with
/// [`Error::PathDiverged`], which carries the points recorded so far.
pub fn run_path(
    spec: &NetworkSpec,
    start: &[f64],
    train: &Batch,
    validation: Option<&Batch>,
    cfg: &LockoutConfig,
) -> Result<PathLog> {
    spec.validate()?;
    cfg.validate()?;
    if start.len() != spec.num_params() {
        return Err(Error::Shape(format!(
            "start has {} parameters, network has {}",
            start.len(),
            spec.num_params()
        )));
    }
    cfg.selection.check(start.len())?;
    if cfg.selection.is_empty() {
        return Err(Error::Config("the regularized selection is empty".into()));
    }

    let t0 = penalty_value(&cfg.penalty, start, &cfg.selection)?;
    let floor = cfg.floor();
    let dt = cfg.delta_t_for(t0);
    let descent_steps = cfg.descent_steps_for(t0);
    let reach_steps = match cfg.init_mode {
        InitMode::FromUnconstrained => 0,
        InitMode::FromEarlyStopping => cfg.reach_iterations,
    };
    let expected_points = 1 + reach_steps + descent_steps;
    let snapshot_stride = cfg
        .snapshot_stride
        .unwrap_or_else(|| expected_points.div_ceil(200).max(1));

    let phase = if reach_steps > 0 {
        Phase::ReachingPath
    } else {
        Phase::Descending
    };
    let mut state = LockoutState::new(start.to_vec(), t0, phase, cfg)?;
    let mut rec = Recorder {
        spec,
        train,
        validation,
        cfg,
        snapshot_stride,
        keeper: SelectionKeeper::new(cfg.sparse_tolerance),
        log: PathLog {
            fingerprint: fingerprint(&(spec, cfg, start))?,
            ..PathLog::default()
        },
    };

    let outcome = drive(&mut rec, &mut state, reach_steps, descent_steps, dt, floor);
    match outcome {
        Ok(()) => Ok(rec.finish()),
        Err(Error::NonFinite { .. }) | Err(Error::Numeric(_)) => {
            let iteration = state.iteration;
            Err(Error::PathDiverged {
                iteration,
                partial: Box::new(rec.finish()),
            })
        }
        Err(e) => Err(e),
    }
}

fn drive(
    rec: &mut Recorder,
    state: &mut LockoutState,
    reach_steps: usize,
    descent_steps: usize,
    dt: f64,
    floor: f64,
) -> Result<()> {
    let (spec, train, cfg) = (rec.spec, rec.train, rec.cfg);
    rec.record(state, 0, reach_steps + descent_steps == 0)?;

    for k in 0..reach_steps {
        let (crossed, norm) = step(spec, train, cfg, state)?;
        let settled = norm < cfg.reach_min_step;
        let last = (settled || k + 1 == reach_steps) && descent_steps == 0;
        rec.record(state, crossed, last)?;
        if settled {
            break;
        }
    }

    state.phase = Phase::Descending;
    for k in 0..descent_steps {
        if k % cfg.inner_steps == 0 {
            state.t = (state.t - dt).max(floor);
        }
        let (crossed, _) = step(spec, train, cfg, state)?;
        let done = state.t <= floor && state.locked.len() == cfg.selection.len();
        rec.record(state, crossed, done || k + 1 == descent_steps)?;
        if done {
            break;
        }
    }
    Ok(())
}
