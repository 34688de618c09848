//! Randomized suites comparing the planner and the network code against the
//! reference solvers in [`crate::oracle`].

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constraint::{penalty_value, Penalty, Selection};
use crate::lockout::{
    apply_step, plan_step, run_path, LockoutConfig, LockoutState, Phase, StepClass, StepPlan,
};
use crate::net::{
    backward, evaluate_loss, Activation, Batch, LossKind, NetworkParams, NetworkSpec, Targets,
};
use crate::optim::{train_to_convergence, ConvergenceRule, OptimizerKind};
use crate::oracle::{finite_diff_gradient, lasso_path_oracle, lp_step_oracle, LinStepInstance};
use crate::Result;

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub passed: usize,
    pub total: usize,
    /// Worst error seen, in the suite's own measure.
    pub worst: f64,
    /// Descriptions of the first few failures.
    pub failures: Vec<String>,
}

impl SuiteReport {
    fn new(suite: &str) -> Self {
        SuiteReport {
            suite: suite.into(),
            passed: 0,
            total: 0,
            worst: 0.0,
            failures: Vec::new(),
        }
    }

    fn record(&mut self, ok: bool, error: f64, what: impl FnOnce() -> String) {
        self.total += 1;
        if error.is_nan() {
            self.worst = f64::NAN;
        } else if !self.worst.is_nan() {
            self.worst = self.worst.max(error);
        }
        if ok {
            self.passed += 1;
        } else if self.failures.len() < 10 {
            self.failures.push(what());
        }
    }

    pub fn all_passed(&self) -> bool {
        self.passed == self.total
    }
}

impl std::fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {}/{} pass (worst {:.3e})",
            self.suite, self.passed, self.total, self.worst
        )
    }
}

/// Penalties exercised by the step suites.
pub fn penalty_kinds() -> Vec<Penalty> {
    vec![
        Penalty::L1,
        Penalty::L2,
        Penalty::LogBeta { beta: 0.3 },
        Penalty::LogBeta { beta: 0.5 },
        Penalty::LogBeta { beta: 0.7 },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Regime {
    Random,
    /// Even shrinking everything cannot meet the budget.
    Infeasible,
    /// The budget covers every box-bound move.
    Slack,
}

/// A random step problem over `n` selected parameters.
#[derive(Debug, Clone)]
struct StepCase {
    penalty: Penalty,
    w: Vec<f64>,
    g: Vec<f64>,
    s: Vec<f64>,
    slack: f64,
}

fn random_case(rng: &mut ChaCha8Rng, penalty: Penalty, max_n: usize, regime: Regime) -> StepCase {
    let n = rng.random_range(1..=max_n);
    let w: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random_bool(0.3) {
                0.0
            } else {
                rng.random_range(-2.0..2.0)
            }
        })
        .collect();
    let g: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random_bool(0.05) {
                0.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        })
        .collect();
    let s: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random_bool(0.05) {
                0.0
            } else {
                rng.random_range(0.0..0.5)
            }
        })
        .collect();
    let cost: Vec<f64> = w
        .iter()
        .zip(&s)
        .map(|(w, s)| penalty.slope(w.abs()) * s)
        .collect();
    let released: f64 = w
        .iter()
        .zip(&cost)
        .filter(|(w, _)| **w != 0.0)
        .map(|(_, c)| c)
        .sum();
    let total: f64 = cost.iter().sum();
    let slack = match regime {
        Regime::Random => rng.random_range(-1.0..1.0) * total.max(0.1),
        Regime::Infeasible => -released - rng.random_range(0.01..1.0),
        Regime::Slack => 2.0 * total + rng.random_range(0.01..1.0),
    };
    StepCase {
        penalty,
        w,
        g,
        s,
        slack,
    }
}

fn regime_for(k: usize) -> Regime {
    match k % 10 {
        0 => Regime::Infeasible,
        1 => Regime::Slack,
        _ => Regime::Random,
    }
}

fn plan_case(case: &StepCase) -> Result<(LockoutConfig, LockoutState, StepPlan)> {
    let n = case.w.len();
    let cfg = LockoutConfig::new(case.penalty, Selection::new((0..n).collect(), n)?);
    let p0 = penalty_value(&case.penalty, &case.w, &cfg.selection)?;
    let state = LockoutState::new(case.w.clone(), p0 + case.slack, Phase::Descending, &cfg)?;
    let plan = plan_step(&state, &cfg, &case.g, &case.s)?;
    Ok((cfg, state, plan))
}

/// Planner vs the knapsack oracle on `per_kind` random instances for every
/// penalty in [`penalty_kinds`]; a tenth of them are infeasible and a tenth
/// have ample slack.
pub fn lp_suite(per_kind: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("lp");
    for penalty in penalty_kinds() {
        for k in 0..per_kind {
            let case = random_case(&mut rng, penalty, 6, regime_for(k));
            let (_, _, plan) = plan_case(&case)?;
            let inst = LinStepInstance {
                w: case.w.clone(),
                g: case.g.clone(),
                p: plan.slopes.clone(),
                s: case.s.clone(),
                slack: plan.slack,
            };
            let oracle = lp_step_oracle(&inst)?;
            let objective = inst.objective(&plan.update);
            let gap = (objective - oracle.objective).abs();
            let diff = plan
                .update
                .iter()
                .zip(&oracle.updates)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let err = gap.max(diff);
            report.record(err <= 1e-10, err, || {
                format!(
                    "{} instance {k}: objective {objective} vs {}, update gap {diff:.3e}, {case:?}",
                    penalty.name(),
                    oracle.objective
                )
            });
        }
    }
    Ok(report)
}

/// Checks one planned and applied step against the structural invariants;
/// returns the first violation.
fn step_violation(case: &StepCase, tol: f64) -> Result<Option<String>> {
    let (cfg, mut state, plan) = plan_case(case)?;
    let before = state.params.clone();
    let usage = plan.linearized_usage(&before);
    let released: f64 = plan
        .selected
        .iter()
        .zip(&plan.slopes)
        .filter(|(&i, _)| before[i] != 0.0)
        .map(|(&i, p)| p * case.s[i])
        .sum();
    let feasible = plan.slack + released >= 0.0;

    if feasible && usage > plan.slack + tol {
        return Ok(Some(format!("usage {usage} exceeds slack {}", plan.slack)));
    }
    let interior = plan.dsc_order.iter().any(|&k| {
        let i = plan.selected[k];
        let m = plan.update[i].abs();
        m > 0.0 && m < case.s[i]
    });
    if feasible && interior && (usage - plan.slack).abs() > tol {
        return Ok(Some(format!(
            "interior step but usage {usage} != slack {}",
            plan.slack
        )));
    }
    for (k, class) in plan.classes.iter().enumerate() {
        let i = plan.selected[k];
        let exact = match class {
            StepClass::Free => crate::sign(case.g[i]) * case.s[i],
            StepClass::Ds => -crate::sign(before[i]) * case.s[i],
            StepClass::Dsc => continue,
        };
        if plan.update[i].to_bits() != exact.to_bits() {
            return Ok(Some(format!("{class:?} parameter {i} moved {}", plan.update[i])));
        }
    }
    // knapsack priority: a positive move for b implies a full move for a
    // ranked above it
    for (pos_a, &a) in plan.dsc_order.iter().enumerate() {
        for &b in &plan.dsc_order[pos_a + 1..] {
            let (ia, ib) = (plan.selected[a], plan.selected[b]);
            let grows = |i: usize| {
                let u = plan.update[i];
                if before[i] == 0.0 {
                    u != 0.0
                } else {
                    u * before[i] > 0.0
                }
            };
            if plan.gamma[a] > plan.gamma[b]
                && grows(ib)
                && plan.update[ia].abs() != case.s[ia]
            {
                return Ok(Some(format!("parameter {ib} grows before {ia} is saturated")));
            }
        }
    }
    let zero_hold: Vec<usize> = plan
        .dsc_order
        .iter()
        .zip(&plan.delta_j)
        .filter(|(&k, &d)| before[plan.selected[k]] == 0.0 && d <= 0.0)
        .map(|(&k, _)| plan.selected[k])
        .collect();

    apply_step(&mut state, &plan, &cfg)?;
    for (&i, &old) in plan.selected.iter().zip(before.iter()) {
        let new = state.params[i];
        if (new > 0.0 && old < 0.0) || (new < 0.0 && old > 0.0) {
            return Ok(Some(format!("parameter {i} crossed zero: {old} -> {new}")));
        }
    }
    for i in zero_hold {
        if state.params[i].to_bits() != 0.0f64.to_bits() {
            return Ok(Some(format!("locked parameter {i} left zero")));
        }
    }
    Ok(None)
}

/// Structural invariants on `steps` random planned steps.
pub fn step_suite(steps: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = penalty_kinds();
    let mut report = SuiteReport::new("steps");
    for k in 0..steps {
        let penalty = kinds[k % kinds.len()];
        let case = random_case(&mut rng, penalty, 12, regime_for(k / kinds.len()));
        let violation = step_violation(&case, 1e-12)?;
        let failed = violation.is_some();
        report.record(!failed, if failed { 1.0 } else { 0.0 }, || {
            format!("step {k}: {} ({case:?})", violation.unwrap_or_default())
        });
    }
    Ok(report)
}

fn random_network(rng: &mut ChaCha8Rng) -> Result<(NetworkSpec, Vec<f64>, Array2<f64>, Targets)> {
    let layers = rng.random_range(1..=3);
    let loss = if rng.random_bool(0.5) {
        LossKind::MeanSquaredError
    } else {
        LossKind::CrossEntropy
    };
    let mut sizes = vec![rng.random_range(1..=6)];
    for _ in 1..layers {
        sizes.push(rng.random_range(1..=10));
    }
    sizes.push(match loss {
        LossKind::MeanSquaredError => rng.random_range(1..=3),
        LossKind::CrossEntropy => rng.random_range(2..=4),
    });
    let activations = (0..layers)
        .map(|_| Activation::ALL[rng.random_range(0..Activation::ALL.len())])
        .collect();
    let bias = (0..layers).map(|_| rng.random_bool(0.7)).collect();
    let spec = NetworkSpec::new(sizes.clone(), activations, loss)?.with_bias(bias)?;
    let scale = rng.random_range(0.5..2.0);
    let params: Vec<f64> = NetworkParams::init_uniform(&spec, rng.random())
        .values
        .iter()
        .map(|v| v * scale)
        .collect();
    let rows = 6;
    let x = Array2::from_shape_simple_fn((rows, sizes[0]), || rng.random_range(-1.0..1.0));
    let out = *sizes.last().unwrap();
    let y = match loss {
        LossKind::MeanSquaredError => Targets::Real(Array2::from_shape_simple_fn((rows, out), || {
            rng.sample::<f64, _>(StandardNormal)
        })),
        LossKind::CrossEntropy => Targets::Classes((0..rows).map(|_| rng.random_range(0..out)).collect()),
    };
    Ok((spec, params, x, y))
}

/// Reverse-mode gradients vs central differences (step `1e-6`) on `networks`
/// random networks; the measure is `|fd - exact| / max(|exact|, 1e-8)`.
pub fn grad_suite(networks: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("grad");
    for k in 0..networks {
        let (spec, params, x, y) = random_network(&mut rng)?;
        let (_, exact) = backward(&spec, &params, x.view(), &y)?;
        let fd = finite_diff_gradient(&spec, &params, x.view(), &y, 1e-6)?;
        let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|a| a * a).sum::<f64>().sqrt();
        let diff = norm(&mut exact.iter().zip(&fd).map(|(a, b)| a - b));
        let size = norm(&mut exact.iter().copied()).max(1e-8);
        let err = diff / size;
        report.record(err < 1e-5, err, || {
            format!(
                "network {k} {:?} {:?} {:?}: relative error {err:.3e}",
                spec.layer_sizes, spec.activations, spec.loss
            )
        });
    }
    Ok(report)
}

/// Settings of the lasso agreement suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoSuiteConfig {
    pub problems: usize,
    pub rows: usize,
    pub features: usize,
    /// Path points compared per problem.
    pub points: usize,
    /// Optimizer supplying the path's step sizes.
    pub optimizer: OptimizerKind,
    pub inner_steps: usize,
    /// Budget decrements between the unconstrained solution and zero.
    pub decrements: usize,
    pub tolerance: f64,
}

impl Default for LassoSuiteConfig {
    fn default() -> Self {
        LassoSuiteConfig {
            problems: 1,
            rows: 200,
            features: 20,
            points: 20,
            optimizer: OptimizerKind::adaptive_moments(1e-3),
            inner_steps: 20,
            decrements: 200,
            tolerance: 1e-3,
        }
    }
}

/// A linear model with an L1 Lockout path against the constrained lasso.
///
/// Each compared path point is matched with the lasso at the point's own
/// penalty value, so both models satisfy the same budget; the measure is the
/// relative excess of the path's training MSE over the lasso's.
pub fn lasso_suite(cfg: &LassoSuiteConfig, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("lasso");
    for problem in 0..cfg.problems {
        let (n, p) = (cfg.rows, cfg.features);
        let x = Array2::from_shape_simple_fn((n, p), || rng.sample::<f64, _>(StandardNormal));
        let beta: Vec<f64> = (0..p)
            .map(|j| if j < p / 2 { rng.random_range(-2.0..2.0) } else { 0.0 })
            .collect();
        let y: Vec<f64> = x
            .rows()
            .into_iter()
            .map(|r| {
                r.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>()
                    + rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let batch = Batch::new(x.clone(), Targets::column(&y))?;
        let spec = NetworkSpec::linear_model(p, Activation::Linear, false)?;

        // plain descent from zero to the least-squares solution
        let optimizer = OptimizerKind::gradient_descent(0.05);
        let rule = ConvergenceRule {
            tolerance: 1e-12,
            patience: 20,
            max_iterations: 100_000,
        };
        let start = train_to_convergence(&spec, &vec![0.0; p], &batch, None, &optimizer, &rule)?;

        let mut lcfg = LockoutConfig::new(Penalty::L1, Selection::first_layer(&spec));
        lcfg.optimizer = cfg.optimizer.clone();
        lcfg.inner_steps = cfg.inner_steps;
        let t_star = penalty_value(&Penalty::L1, &start.params, &lcfg.selection)?;
        lcfg.delta_t = Some(t_star / cfg.decrements as f64);
        lcfg.snapshot_stride = Some(1);
        let log = run_path(&spec, &start.params, &batch, None, &lcfg)?;

        // last inner step of each decrement, with a nonzero budget
        let settled: Vec<usize> = (1..log.len())
            .filter(|&i| {
                let pt = &log.points[i];
                pt.iteration % cfg.inner_steps == 0 && pt.penalty > 0.0
            })
            .collect();
        let chosen: Vec<usize> = (0..cfg.points)
            .map(|k| settled[(k * settled.len()) / cfg.points])
            .collect();
        let budgets: Vec<f64> = chosen.iter().map(|&i| log.points[i].penalty).collect();
        let fits = lasso_path_oracle(x.view(), &y, &budgets, false)?;
        for (&i, fit) in chosen.iter().zip(&fits) {
            let ours = log.points[i].train_loss;
            let reference = evaluate_loss(&spec, &fit.weights, &batch)?;
            let gap = (ours - reference) / reference;
            report.record(gap < cfg.tolerance, gap, || {
                format!(
                    "problem {problem}, t = {:.6}: path MSE {ours:.8} vs lasso {reference:.8}",
                    fit.t
                )
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        let lp = lp_suite(40, 1).unwrap();
        assert!(lp.all_passed(), "{lp} {:?}", lp.failures);
        assert_eq!(lp.total, 200);
        let steps = step_suite(500, 2).unwrap();
        assert!(steps.all_passed(), "{steps} {:?}", steps.failures);
        let grad = grad_suite(20, 3).unwrap();
        assert!(grad.all_passed(), "{grad} {:?}", grad.failures);
    }

    #[test]
    fn small_lasso_suite_passes() {
        let cfg = LassoSuiteConfig {
            rows: 60,
            features: 5,
            points: 5,
            ..LassoSuiteConfig::default()
        };
        let r = lasso_suite(&cfg, 4).unwrap();
        assert!(r.all_passed(), "{r} {:?}", r.failures);
    }

    #[test]
    fn report_format() {
        let mut r = SuiteReport::new("x");
        r.record(true, 0.5, String::new);
        r.record(false, 2.0, || "bad".into());
        assert_eq!(r.to_string(), "x: 1/2 pass (worst 2.000e0)");
        assert_eq!(r.failures, vec!["bad".to_string()]);
    }
}
