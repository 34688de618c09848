//! Base optimizers and the unconstrained training loops that produce the two
//! path starting points: the converged (unconstrained) solution and the
//! validation-minimum (early-stopping) snapshot.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::net::{backward, evaluate_loss, Batch, NetworkSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    GradientDescent {
        learning_rate: f64,
    },
    AdaptiveMoments {
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl OptimizerKind {
    pub fn gradient_descent(learning_rate: f64) -> Self {
        OptimizerKind::GradientDescent { learning_rate }
    }

    /// Adaptive moments with the usual `(0.9, 0.999, 1e-8)` defaults.
    pub fn adaptive_moments(learning_rate: f64) -> Self {
        OptimizerKind::AdaptiveMoments {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match *self {
            OptimizerKind::GradientDescent { learning_rate }
            | OptimizerKind::AdaptiveMoments { learning_rate, .. } => learning_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.learning_rate();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {lr}")));
        }
        if let OptimizerKind::AdaptiveMoments {
            beta1,
            beta2,
            epsilon,
            ..
        } = *self
        {
            for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
                if !(b > 0.0 && b < 1.0) {
                    return Err(Error::Config(format!("{name} must lie in (0, 1), got {b}")));
                }
            }
            if !(epsilon > 0.0) {
                return Err(Error::Config("adaptive epsilon must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Moment estimates and step counter carried between optimizer steps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        OptimizerState {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
        }
    }
}

/// Proposed parameter change for the raw loss gradient `grad`.
pub fn optimizer_step(
    kind: &OptimizerKind,
    state: &mut OptimizerState,
    grad: &[f64],
) -> Result<Vec<f64>> {
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient at index {i}")));
    }
    if state.first_moment.len() != grad.len() {
        *state = OptimizerState::new(grad.len());
    }
    state.step += 1;
    match *kind {
        OptimizerKind::GradientDescent { learning_rate } => {
            Ok(grad.iter().map(|g| -learning_rate * g).collect())
        }
        OptimizerKind::AdaptiveMoments {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } => {
            let t = state.step as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            let delta = grad
                .iter()
                .zip(state.first_moment.iter_mut())
                .zip(state.second_moment.iter_mut())
                .map(|((&g, m), v)| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    -learning_rate * m_hat / (v_hat.sqrt() + epsilon)
                })
                .collect();
            Ok(delta)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRule {
    pub tolerance: f64,
    pub patience: usize,
    pub max_iterations: usize,
}

impl Default for ConvergenceRule {
    fn default() -> Self {
        ConvergenceRule {
            tolerance: 1e-5,
            patience: 20,
            max_iterations: 100_000,
        }
    }
}

impl ConvergenceRule {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("convergence tolerance must be > 0".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("convergence patience must be >= 1".into()));
        }
        Ok(())
    }
}

/// How one training "iteration" is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Batching {
    /// One full-batch update per iteration.
    #[default]
    Full,
    /// One mini-batch update per iteration; losses and the convergence rule
    /// are tracked per epoch (epoch-mean training loss).
    MiniBatch { size: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub params: Vec<f64>,
    pub iterations: usize,
    pub stop: StopReason,
    /// Training loss at the starting parameters.
    pub initial_train_loss: f64,
    /// Training loss after each recorded iteration (each epoch in mini-batch mode).
    pub train_loss: Vec<f64>,
    /// Validation loss at the same points as `train_loss`, when a validation
    /// split was supplied.
    pub validation_loss: Vec<f64>,
    /// Update count at each recorded point.
    pub recorded_at: Vec<usize>,
    /// Position in the traces of the validation minimum (earliest on ties).
    pub best_index: Option<usize>,
    pub best_validation_loss: Option<f64>,
    /// Parameters at the validation minimum; the starting parameters when
    /// nothing was recorded.
    pub best_params: Vec<f64>,
}

impl TrainResult {
    pub fn best_iteration(&self) -> usize {
        self.best_index.map_or(0, |i| self.recorded_at[i])
    }
}

enum Stop {
    Convergence(ConvergenceRule),
    Budget(usize),
}

impl Stop {
    fn max_iterations(&self) -> usize {
        match self {
            Stop::Convergence(r) => r.max_iterations,
            Stop::Budget(n) => *n,
        }
    }
}

/// Unconstrained training driver.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    spec: &'a NetworkSpec,
    optimizer: OptimizerKind,
    batching: Batching,
}

impl<'a> Trainer<'a> {
    pub fn new(spec: &'a NetworkSpec, optimizer: OptimizerKind) -> Self {
        Trainer {
            spec,
            optimizer,
            batching: Batching::Full,
        }
    }

    pub fn batching(mut self, batching: Batching) -> Self {
        self.batching = batching;
        self
    }

    /// Trains until the training loss changes by less than the tolerance for
    /// `patience` consecutive iterations, or the iteration cap is hit. The
    /// validation minimum is tracked along the way when `validation` is given.
    pub fn to_convergence(
        &self,
        init: &[f64],
        train: &Batch,
        validation: Option<&Batch>,
        rule: &ConvergenceRule,
    ) -> Result<TrainResult> {
        rule.validate()?;
        self.run(init, train, validation, Stop::Convergence(*rule))
    }

    /// Trains for exactly `max_iterations` updates and keeps the parameters
    /// with the lowest validation loss (earliest on ties).
    pub fn with_early_stopping(
        &self,
        init: &[f64],
        train: &Batch,
        validation: &Batch,
        max_iterations: usize,
    ) -> Result<TrainResult> {
        self.run(init, train, Some(validation), Stop::Budget(max_iterations))
    }

    fn run(
        &self,
        init: &[f64],
        train: &Batch,
        validation: Option<&Batch>,
        stop: Stop,
    ) -> Result<TrainResult> {
        self.optimizer.validate()?;
        if train.is_empty() {
            return Err(Error::Argument("training split is empty".into()));
        }
        let spec = self.spec;
        let mut params = init.to_vec();
        let mut state = OptimizerState::new(params.len());
        let initial_train_loss = evaluate_loss(spec, &params, train)?;
        let mut rec = Recorder::new(init);
        let max_iterations = stop.max_iterations();

        let mut iteration = 0;
        let mut prev_loss = initial_train_loss;
        let mut calm = 0usize;
        let mut stop_reason = StopReason::MaxIterations;

        match self.batching {
            Batching::Full => {
                let (_, mut grad) = grad_at(spec, &params, train, 0)?;
                while iteration < max_iterations {
                    let delta = optimizer_step(&self.optimizer, &mut state, &grad)?;
                    apply(&mut params, &delta);
                    iteration += 1;
                    let (loss, next) = grad_at(spec, &params, train, iteration)?;
                    grad = next;
                    let val = validation_loss(spec, &params, validation, iteration)?;
                    rec.record(iteration, loss, val, &params);
                    if let Stop::Convergence(rule) = &stop {
                        calm = if (loss - prev_loss).abs() < rule.tolerance {
                            calm + 1
                        } else {
                            0
                        };
                        if calm >= rule.patience {
                            stop_reason = StopReason::Converged;
                            break;
                        }
                    }
                    prev_loss = loss;
                }
            }
            Batching::MiniBatch { size, seed } => {
                if size == 0 {
                    return Err(Error::Config("mini-batch size must be >= 1".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut order: Vec<usize> = (0..train.len()).collect();
                'epochs: while iteration < max_iterations {
                    order.shuffle(&mut rng);
                    let mut sum = 0.0;
                    let mut rows = 0usize;
                    for chunk in order.chunks(size) {
                        if iteration >= max_iterations {
                            break;
                        }
                        let mb = train.select_rows(chunk);
                        let (l, g) = grad_at(spec, &params, &mb, iteration)?;
                        sum += l * chunk.len() as f64;
                        rows += chunk.len();
                        let delta = optimizer_step(&self.optimizer, &mut state, &g)?;
                        apply(&mut params, &delta);
                        iteration += 1;
                    }
                    let epoch_loss = sum / rows as f64;
                    let val = validation_loss(spec, &params, validation, iteration)?;
                    rec.record(iteration, epoch_loss, val, &params);
                    if let Stop::Convergence(rule) = &stop {
                        calm = if (epoch_loss - prev_loss).abs() < rule.tolerance {
                            calm + 1
                        } else {
                            0
                        };
                        if calm >= rule.patience {
                            stop_reason = StopReason::Converged;
                            break 'epochs;
                        }
                    }
                    prev_loss = epoch_loss;
                }
            }
        }

        Ok(rec.finish(params, iteration, stop_reason, initial_train_loss))
    }
}

fn grad_at(
    spec: &NetworkSpec,
    params: &[f64],
    batch: &Batch,
    iteration: usize,
) -> Result<(f64, Vec<f64>)> {
    match backward(spec, params, batch.x.view(), &batch.y) {
        Ok(r) => Ok(r),
        Err(Error::NonFinite { .. }) => Err(Error::Diverged { iteration }),
        Err(e) => Err(e),
    }
}

fn validation_loss(
    spec: &NetworkSpec,
    params: &[f64],
    validation: Option<&Batch>,
    iteration: usize,
) -> Result<Option<f64>> {
    let Some(v) = validation else { return Ok(None) };
    let loss = evaluate_loss(spec, params, v)?;
    if !loss.is_finite() {
        return Err(Error::Diverged { iteration });
    }
    Ok(Some(loss))
}

fn apply(params: &mut [f64], delta: &[f64]) {
    for (w, d) in params.iter_mut().zip(delta) {
        *w += d;
    }
}

struct Recorder {
    train: Vec<f64>,
    validation: Vec<f64>,
    at: Vec<usize>,
    best: Option<(usize, f64)>,
    best_params: Vec<f64>,
}

impl Recorder {
    fn new(init: &[f64]) -> Self {
        Recorder {
            train: Vec::new(),
            validation: Vec::new(),
            at: Vec::new(),
            best: None,
            best_params: init.to_vec(),
        }
    }

    fn record(&mut self, iteration: usize, train: f64, val: Option<f64>, params: &[f64]) {
        let idx = self.train.len();
        self.train.push(train);
        self.at.push(iteration);
        if let Some(v) = val {
            self.validation.push(v);
            // strict: earliest point wins ties
            if self.best.is_none_or(|(_, b)| v < b) {
                self.best = Some((idx, v));
                self.best_params.copy_from_slice(params);
            }
        }
    }

    fn finish(
        self,
        params: Vec<f64>,
        iterations: usize,
        stop: StopReason,
        initial_train_loss: f64,
    ) -> TrainResult {
        TrainResult {
            params,
            iterations,
            stop,
            initial_train_loss,
            train_loss: self.train,
            validation_loss: self.validation,
            recorded_at: self.at,
            best_index: self.best.map(|b| b.0),
            best_validation_loss: self.best.map(|b| b.1),
            best_params: self.best_params,
        }
    }
}

/// Full-batch [`Trainer::to_convergence`].
pub fn train_to_convergence(
    spec: &NetworkSpec,
    init: &[f64],
    train: &Batch,
    validation: Option<&Batch>,
    kind: &OptimizerKind,
    rule: &ConvergenceRule,
) -> Result<TrainResult> {
    Trainer::new(spec, *kind).to_convergence(init, train, validation, rule)
}

/// Full-batch [`Trainer::with_early_stopping`].
pub fn train_with_early_stopping(
    spec: &NetworkSpec,
    init: &[f64],
    train: &Batch,
    validation: &Batch,
    kind: &OptimizerKind,
    max_iterations: usize,
) -> Result<TrainResult> {
    Trainer::new(spec, *kind).with_early_stopping(init, train, validation, max_iterations)
}
