//! Closed-form solution of the per-iteration linearized problem
//!
//! ```text
//! max  sum_j g_j dw_j
//! s.t. sum_{w_j = 0} p_j |dw_j| + sum_{w_j != 0} p_j sign(w_j) dw_j <= t - P(w)
//!      |dw_j| <= s_j
//! ```
//!
//! where `g = -dL/dw`, `p_j = dP/d|w_j|` and `s_j` is the magnitude of the
//! base optimizer's proposed step. Selected parameters fall in three groups:
//!
//! - FREE (`p_j = 0`): outside the constraint, take the full step.
//! - DS (`w_j != 0` and the descent direction shrinks `|w_j|`): shrink by the
//!   full `s_j`, which both lowers the loss and frees `p_j s_j` of budget.
//! - DSC (everything else): compete for the remaining budget in descending
//!   order of `gamma_j = |g_j| / (p_j + eps)`, a continuous knapsack. High
//!   ratio parameters grow, the low ratio tail shrinks to pay for them, and
//!   zero-valued parameters that do not win budget stay at zero.

use serde::{Deserialize, Serialize};

use super::path::LockoutConfig;
use crate::constraint::{penalty_value, Penalty, Selection};
use crate::optim::OptimizerState;
use crate::{sign, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepClass {
    Free,
    Ds,
    Dsc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Budget held at the early-stopping penalty while the iterate settles
    /// onto the path.
    ReachingPath,
    /// Budget shrinking by `delta_t` per step.
    Descending,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::ReachingPath => "reaching_path",
            Phase::Descending => "descending",
        }
    }
}

/// Everything the planner computed for one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan {
    /// Flat indices of the selection; the per-selection vectors below are
    /// aligned with it.
    pub selected: Vec<usize>,
    pub slopes: Vec<f64>,
    pub gamma: Vec<f64>,
    pub classes: Vec<StepClass>,
    /// Positions (into `selected`) of the DSC parameters, by descending
    /// gamma, ties by ascending flat index.
    pub dsc_order: Vec<usize>,
    /// Budget released by the DS group, `sum p_j s_j`.
    pub t_ds: f64,
    /// `t - P(w)` at the current parameters.
    pub slack: f64,
    /// Remaining budget seen by each DSC parameter, aligned with `dsc_order`.
    pub delta_j: Vec<f64>,
    /// Proposed change for every parameter.
    pub update: Vec<f64>,
}

impl StepPlan {
    /// Left-hand side of the linearized constraint for this plan, summed
    /// over every selected parameter with a positive slope.
    pub fn linearized_usage(&self, params: &[f64]) -> f64 {
        self.selected
            .iter()
            .zip(&self.slopes)
            .filter(|(_, &p)| p > 0.0)
            .map(|(&i, &p)| {
                let w = params[i];
                let dw = self.update[i];
                if w == 0.0 {
                    p * dw.abs()
                } else {
                    p * sign(w) * dw
                }
            })
            .sum()
    }

    /// Euclidean norm of the update restricted to the selection.
    pub fn selection_step_norm(&self) -> f64 {
        self.selected
            .iter()
            .map(|&i| self.update[i] * self.update[i])
            .sum::<f64>()
            .sqrt()
    }
}

/// Iterate state owned by the path driver.
#[derive(Debug, Clone, PartialEq)]
pub struct LockoutState {
    pub params: Vec<f64>,
    pub t: f64,
    pub iteration: usize,
    pub optimizer: OptimizerState,
    pub phase: Phase,
    /// `P(params)` over the selection, recomputed after every step.
    pub penalty: f64,
    /// Selected flat indices currently at exactly zero.
    pub locked: Vec<usize>,
    /// Total number of parameters zeroed by the sign-crossing rule.
    pub crossings: usize,
}

impl LockoutState {
    pub fn new(params: Vec<f64>, t: f64, phase: Phase, cfg: &LockoutConfig) -> Result<Self> {
        let penalty = penalty_value(&cfg.penalty, &params, &cfg.selection)?;
        let locked = zeros_in(&params, &cfg.selection);
        let n = params.len();
        Ok(LockoutState {
            params,
            t,
            iteration: 0,
            optimizer: OptimizerState::new(n),
            phase,
            penalty,
            locked,
            crossings: 0,
        })
    }

    pub fn slack(&self) -> f64 {
        self.t - self.penalty
    }
}

fn zeros_in(params: &[f64], sel: &Selection) -> Vec<usize> {
    sel.indices()
        .iter()
        .copied()
        .filter(|&i| params[i] == 0.0)
        .collect()
}

/// Groups selected parameters by how they interact with the constraint.
///
/// All slices are aligned with the selection.
pub fn classify(w: &[f64], g: &[f64], p: &[f64]) -> Vec<StepClass> {
    w.iter()
        .zip(g)
        .zip(p)
        .map(|((&w, &g), &p)| class_of(w, g, p))
        .collect()
}

fn class_of(w: f64, g: f64, p: f64) -> StepClass {
    if p == 0.0 {
        StepClass::Free
    } else if w != 0.0 && sign(w) != sign(g) {
        StepClass::Ds
    } else {
        StepClass::Dsc
    }
}

/// Plans one constrained step from the negative gradient `g` and the
/// per-parameter step magnitudes `s` (both over all parameters).
pub fn plan_step(
    state: &LockoutState,
    cfg: &LockoutConfig,
    g: &[f64],
    s: &[f64],
) -> Result<StepPlan> {
    let n = state.params.len();
    if g.len() != n || s.len() != n {
        return Err(Error::Shape(format!(
            "plan_step: {n} parameters, {} gradients, {} step sizes",
            g.len(),
            s.len()
        )));
    }
    if let Some(i) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient at index {i}")));
    }
    if let Some(i) = s.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Numeric(format!("invalid step size at index {i}")));
    }
    cfg.selection.check(n)?;
    let slack = state.t - penalty_value(&cfg.penalty, &state.params, &cfg.selection)?;
    Ok(plan_with_slack(
        &state.params,
        &cfg.penalty,
        &cfg.selection,
        cfg.epsilon,
        slack,
        g,
        s,
    ))
}

/// A DSC entry with what the budget passes read, in rank order.
struct Ranked {
    position: usize,
    p: f64,
    s: f64,
    direction: f64,
    nonzero: bool,
}

/// [`plan_step`] with an explicit slack instead of a budget.
pub fn plan_with_slack(
    params: &[f64],
    penalty: &Penalty,
    selection: &Selection,
    epsilon: f64,
    slack: f64,
    g: &[f64],
    s: &[f64],
) -> StepPlan {
    let selected = selection.indices().to_vec();
    // Unconstrained move by default; overwritten for DS/DSC below.
    let mut update: Vec<f64> = g.iter().zip(s).map(|(&g, &s)| sign(g) * s).collect();

    let n = selected.len();
    let mut slopes = Vec::with_capacity(n);
    let mut gamma = Vec::with_capacity(n);
    let mut classes = Vec::with_capacity(n);
    let mut t_ds = 0.0;
    // (inverted gamma bits, position) for the DSC group. gamma >= 0, so the
    // bits order like the value; pushed in position order, and positions
    // follow flat indices because the selection is sorted, so a stable sort
    // leaves ties by ascending index.
    let mut keys: Vec<(u64, u32)> = Vec::new();
    for (k, &i) in selected.iter().enumerate() {
        let (w, gi) = (params[i], g[i]);
        let p = penalty.slope(w.abs());
        let gk = gi.abs() / (p + epsilon);
        let class = class_of(w, gi, p);
        match class {
            StepClass::Free => {}
            StepClass::Ds => {
                // Shrink toward zero. Identical to sign(g) s when g != 0; with
                // g == 0 the shrink is free and still releases p s.
                update[i] = -sign(w) * s[i];
                t_ds += p * s[i];
            }
            StepClass::Dsc => keys.push((!gk.to_bits(), k as u32)),
        }
        slopes.push(p);
        gamma.push(gk);
        classes.push(class);
    }
    radsort::sort_by_key(&mut keys, |e| e.0);
    let ranked: Vec<Ranked> = keys
        .iter()
        .map(|&(_, k)| {
            let k = k as usize;
            let i = selected[k];
            Ranked {
                position: k,
                p: slopes[k],
                s: s[i],
                direction: sign(g[i]),
                nonzero: params[i] != 0.0,
            }
        })
        .collect();
    drop(keys);

    // Delta_J = sum_{j > J, w_j != 0} c_j + slack + t_ds - sum_{j < J} c_j
    // with c_j = p_j s_j: a suffix pass leaves the first sum in delta_j, a
    // prefix pass adds the rest.
    let m = ranked.len();
    let mut delta_j = vec![0.0; m];
    let mut acc = 0.0;
    for (d, r) in delta_j.iter_mut().zip(&ranked).rev() {
        *d = acc;
        if r.nonzero {
            acc += r.p * r.s;
        }
    }
    let budget = slack + t_ds;
    let mut before = 0.0;
    for (d, r) in delta_j.iter_mut().zip(&ranked) {
        let delta = *d + budget - before;
        before += r.p * r.s;
        *d = delta;
        // Moves toward the descent direction when the budget allows it,
        // otherwise shrinks; a zero parameter never moves on a non-positive
        // budget. p > 0 here, so |delta| / p is at worst +inf and min() caps it.
        update[selected[r.position]] = if delta > 0.0 {
            r.direction * r.s.min(delta / r.p)
        } else if delta < 0.0 && r.nonzero {
            -r.direction * r.s.min(-delta / r.p)
        } else {
            0.0
        };
    }
    let dsc_order: Vec<usize> = ranked.iter().map(|r| r.position).collect();

    StepPlan {
        selected,
        slopes,
        gamma,
        classes,
        dsc_order,
        t_ds,
        slack,
        delta_j,
        update,
    }
}

/// What [`apply_step`] changed beyond the plain update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ApplyOutcome {
    /// Selected flat indices that would have crossed zero and were set to 0.
    pub crossed: Vec<usize>,
}

/// Applies `plan` to `state`. A selected parameter whose update would flip
/// its sign is set to exactly zero instead.
pub fn apply_step(
    state: &mut LockoutState,
    plan: &StepPlan,
    cfg: &LockoutConfig,
) -> Result<ApplyOutcome> {
    if plan.update.len() != state.params.len() {
        return Err(Error::Shape("plan does not match the state".into()));
    }
    let before: Vec<f64> = plan.selected.iter().map(|&i| state.params[i]).collect();
    for (w, dw) in state.params.iter_mut().zip(&plan.update) {
        *w += dw;
    }
    let mut outcome = ApplyOutcome::default();
    for (&i, &old) in plan.selected.iter().zip(&before) {
        let new = state.params[i];
        if sign(new) * sign(old) < 0.0 {
            state.params[i] = 0.0;
            outcome.crossed.push(i);
        }
    }
    state.iteration += 1;
    state.crossings += outcome.crossed.len();
    state.penalty = penalty_value(&cfg.penalty, &state.params, &cfg.selection)?;
    state.locked = zeros_in(&state.params, &cfg.selection);
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{lp_step_oracle, LinStepInstance};

    fn cfg_for(penalty: Penalty, n: usize) -> LockoutConfig {
        LockoutConfig::new(penalty, Selection::new((0..n).collect(), n).unwrap())
    }

    fn state(params: &[f64], slack: f64, cfg: &LockoutConfig) -> LockoutState {
        let p = penalty_value(&cfg.penalty, params, &cfg.selection).unwrap();
        LockoutState::new(params.to_vec(), p + slack, Phase::Descending, cfg).unwrap()
    }

    #[test]
    fn classification_examples() {
        // l2 at zero has no slope
        assert_eq!(classify(&[0.0], &[0.3], &[0.0]), vec![StepClass::Free]);
        assert_eq!(classify(&[1.0], &[-0.3], &[1.0]), vec![StepClass::Ds]);
        assert_eq!(classify(&[0.0], &[0.3], &[1.0]), vec![StepClass::Dsc]);
        assert_eq!(classify(&[-2.0], &[-0.3], &[1.0]), vec![StepClass::Dsc]);
    }

    #[test]
    fn empty_selection_is_unconstrained() {
        let cfg = LockoutConfig::new(Penalty::L1, Selection::empty());
        let st = LockoutState::new(vec![1.0, -2.0, 0.0], 0.0, Phase::Descending, &cfg).unwrap();
        let plan = plan_step(&st, &cfg, &[0.5, 0.2, -0.1], &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(plan.update, vec![0.1, 0.2, -0.3]);
    }

    #[test]
    fn single_parameter_forced_by_constraint() {
        let cfg = cfg_for(Penalty::L1, 1);
        let st = state(&[1.0], -0.05, &cfg);
        let plan = plan_step(&st, &cfg, &[0.3], &[0.1]).unwrap();
        assert!((plan.delta_j[0] + 0.05).abs() < 1e-15);
        assert!((plan.update[0] + 0.05).abs() < 1e-15);
        let mut st = st;
        apply_step(&mut st, &plan, &cfg).unwrap();
        assert!((st.params[0] - 0.95).abs() < 1e-15);
        assert!((st.penalty - st.t).abs() < 1e-15);
    }

    #[test]
    fn two_parameters_trade_budget() {
        let cfg = cfg_for(Penalty::L1, 2);
        let st = state(&[1.0, 1.0], 0.0, &cfg);
        let g = [0.4, 0.1];
        let s = [0.4, 0.1];
        let plan = plan_step(&st, &cfg, &g, &s).unwrap();
        assert_eq!(plan.dsc_order, vec![0, 1]);
        assert!((plan.delta_j[0] - 0.1).abs() < 1e-15);
        assert!((plan.delta_j[1] + 0.4).abs() < 1e-15);
        assert!((plan.update[0] - 0.1).abs() < 1e-15);
        assert!((plan.update[1] + 0.1).abs() < 1e-15);
        assert!(plan.linearized_usage(&st.params).abs() < 1e-15);

        let oracle = lp_step_oracle(&LinStepInstance {
            w: vec![1.0, 1.0],
            g: g.to_vec(),
            p: vec![1.0, 1.0],
            s: s.to_vec(),
            slack: 0.0,
        })
        .unwrap();
        for (a, b) in plan.update.iter().zip(&oracle.updates) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn infeasible_regime_shrinks_everything() {
        let cfg = cfg_for(Penalty::L1, 4);
        // DSC: w=(0.5, 0, -0.3), DS: w=0.2 with g=-0.1
        let params = [0.5, 0.0, -0.3, 0.2];
        let g = [0.2, 0.9, -0.4, -0.1];
        let s = [0.1, 0.1, 0.1, 0.05];
        // budget = slack + t_ds = -0.5 + 0.05 < -(0.1 + 0.1): nothing can grow
        let st = state(&params, -0.5, &cfg);
        let plan = plan_step(&st, &cfg, &g, &s).unwrap();
        assert_eq!(plan.update, vec![-0.1, 0.0, 0.1, -0.05]);
        let oracle = lp_step_oracle(&LinStepInstance {
            w: params.to_vec(),
            g: g.to_vec(),
            p: vec![1.0; 4],
            s: s.to_vec(),
            slack: -0.5,
        })
        .unwrap();
        assert_eq!(oracle.updates, plan.update);
    }

    #[test]
    fn free_parameters_pass_through() {
        let cfg = cfg_for(Penalty::L2, 3);
        let st = state(&[0.0, 0.0, 1.0], -10.0, &cfg);
        let plan = plan_step(&st, &cfg, &[0.3, -0.2, 0.1], &[0.01, 0.02, 0.03]).unwrap();
        assert_eq!(plan.classes[0], StepClass::Free);
        assert_eq!(plan.update[0], 0.01);
        assert_eq!(plan.update[1], -0.02);
        assert_eq!(plan.update[2], -0.03);
    }

    #[test]
    fn gamma_ties_break_by_index() {
        let cfg = cfg_for(Penalty::L1, 3);
        let st = state(&[1.0, 1.0, 1.0], 0.0, &cfg);
        let plan = plan_step(&st, &cfg, &[0.2, 0.2, 0.2], &[0.1; 3]).unwrap();
        assert_eq!(plan.dsc_order, vec![0, 1, 2]);
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        let cfg = cfg_for(Penalty::L1, 1);
        let st = state(&[1.0], 0.0, &cfg);
        assert!(matches!(
            plan_step(&st, &cfg, &[f64::NAN], &[0.1]),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            plan_step(&st, &cfg, &[0.1], &[f64::INFINITY]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn crossing_sets_exact_zero() {
        let cfg = cfg_for(Penalty::L1, 3);
        let mut st = state(&[0.03, 0.5, -0.02], 0.0, &cfg);
        let plan = StepPlan {
            selected: vec![0, 1, 2],
            slopes: vec![1.0; 3],
            gamma: vec![0.0; 3],
            classes: vec![StepClass::Dsc; 3],
            dsc_order: vec![],
            t_ds: 0.0,
            slack: 0.0,
            delta_j: vec![],
            update: vec![-0.1, -0.1, 0.05],
        };
        let out = apply_step(&mut st, &plan, &cfg).unwrap();
        assert_eq!(st.params[0].to_bits(), 0.0f64.to_bits());
        assert!((st.params[1] - 0.4).abs() < 1e-15);
        assert_eq!(st.params[2].to_bits(), 0.0f64.to_bits());
        assert_eq!(out.crossed, vec![0, 2]);
        assert_eq!(st.locked, vec![0, 2]);
        assert_eq!(st.iteration, 1);
        assert_eq!(st.crossings, 2);
    }

    #[test]
    fn unselected_parameters_may_cross() {
        let cfg = LockoutConfig::new(Penalty::L1, Selection::new(vec![0], 2).unwrap());
        let mut st = state(&[1.0, 0.01], 10.0, &cfg);
        let plan = plan_step(&st, &cfg, &[0.0, -1.0], &[0.0, 0.1]).unwrap();
        apply_step(&mut st, &plan, &cfg).unwrap();
        assert!((st.params[1] + 0.09).abs() < 1e-15);
    }
}
