//! Penalty functions `P(w)` and their slopes `p = dP/d|w|` over a selected
//! subset of the parameters.
//!
//! Every penalty here is a sum of a per-parameter function of `|w_j|` that is
//! non-decreasing, so a penalty is fully described by the pair
//! (value of one term, slope of one term). New kinds only need to add a
//! variant and its two arms.

use serde::{Deserialize, Serialize};

use crate::net::NetworkSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Penalty {
    /// `sum |w|`
    L1,
    /// `sum w^2`
    L2,
    /// `sum log((1 - beta)|w| + beta)` with `0 < beta < 1`.
    LogBeta { beta: f64 },
}

impl Penalty {
    pub fn validate(&self) -> Result<()> {
        if let Penalty::LogBeta { beta } = *self {
            if !(beta > 0.0 && beta < 1.0) {
                return Err(Error::Config(format!(
                    "log penalty needs 0 < beta < 1, got {beta}"
                )));
            }
        }
        Ok(())
    }

    /// One term of the penalty at magnitude `abs_w`.
    #[inline]
    pub fn term(&self, abs_w: f64) -> f64 {
        match *self {
            Penalty::L1 => abs_w,
            Penalty::L2 => abs_w * abs_w,
            Penalty::LogBeta { beta } => ((1.0 - beta) * abs_w + beta).ln(),
        }
    }

    /// Slope of one term with respect to `|w|` at magnitude `abs_w`.
    #[inline]
    pub fn slope(&self, abs_w: f64) -> f64 {
        match *self {
            Penalty::L1 => 1.0,
            Penalty::L2 => 2.0 * abs_w,
            Penalty::LogBeta { beta } => (1.0 - beta) / ((1.0 - beta) * abs_w + beta),
        }
    }

    /// Penalty of `count` parameters all at zero: the smallest reachable budget.
    pub fn floor(&self, count: usize) -> f64 {
        count as f64 * self.term(0.0)
    }

    pub fn name(&self) -> String {
        match *self {
            Penalty::L1 => "l1".into(),
            Penalty::L2 => "l2".into(),
            Penalty::LogBeta { beta } => format!("log(beta={beta})"),
        }
    }

    /// Parses the CLI spelling `l1 | l2 | log`; `beta` is required for `log`.
    pub fn parse(kind: &str, beta: Option<f64>) -> Result<Self> {
        let p = match kind {
            "l1" => Penalty::L1,
            "l2" => Penalty::L2,
            "log" | "log_beta" => Penalty::LogBeta {
                beta: beta.ok_or_else(|| Error::Config("log penalty requires beta".into()))?,
            },
            other => return Err(Error::Config(format!("unknown penalty `{other}`"))),
        };
        p.validate()?;
        Ok(p)
    }
}

/// Flat parameter indices that the constraint applies to. Sorted, unique.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    indices: Vec<usize>,
}

impl Selection {
    pub fn new(mut indices: Vec<usize>, num_params: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&bad) = indices.iter().find(|&&i| i >= num_params) {
            return Err(Error::Config(format!(
                "selected index {bad} out of range for {num_params} parameters"
            )));
        }
        Ok(Selection { indices })
    }

    /// All first-layer weights; biases excluded.
    pub fn first_layer(spec: &NetworkSpec) -> Self {
        Selection {
            indices: spec.layout().first_layer_weights(),
        }
    }

    /// Every weight in every layer; biases excluded.
    pub fn all_weights(spec: &NetworkSpec) -> Self {
        Selection {
            indices: spec.layout().all_weights(),
        }
    }

    pub fn empty() -> Self {
        Selection {
            indices: Vec::new(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn check(&self, num_params: usize) -> Result<()> {
        if self.indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("selected indices must be sorted and unique".into()));
        }
        match self.indices.last() {
            Some(&last) if last >= num_params => Err(Error::Config(format!(
                "selected index {last} out of range for {num_params} parameters"
            ))),
            _ => Ok(()),
        }
    }

    /// Number of selected parameters that are not exactly zero.
    pub fn nonzero(&self, params: &[f64]) -> usize {
        self.indices.iter().filter(|&&i| params[i] != 0.0).count()
    }
}

pub fn penalty_value(penalty: &Penalty, params: &[f64], sel: &Selection) -> Result<f64> {
    penalty.validate()?;
    sel.check(params.len())?;
    Ok(sel
        .indices
        .iter()
        .map(|&i| penalty.term(params[i].abs()))
        .sum())
}

/// Slopes aligned with `sel.indices()`.
pub fn penalty_slope(penalty: &Penalty, params: &[f64], sel: &Selection) -> Result<Vec<f64>> {
    penalty.validate()?;
    sel.check(params.len())?;
    Ok(sel
        .indices
        .iter()
        .map(|&i| penalty.slope(params[i].abs()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn all(n: usize) -> Selection {
        Selection::new((0..n).collect(), n).unwrap()
    }

    #[test]
    fn values() {
        assert_eq!(penalty_value(&Penalty::L1, &[1.0, -2.0, 0.5], &all(3)).unwrap(), 3.5);
        let log = Penalty::LogBeta { beta: 0.5 };
        assert_eq!(penalty_value(&log, &[1.0], &all(1)).unwrap(), 0.0);
        assert_abs_diff_eq!(
            penalty_value(&log, &[0.0, 0.0], &all(2)).unwrap(),
            -1.386_294_361_119_890_6,
            epsilon = 1e-15
        );
        // only the selection counts
        let sel = Selection::new(vec![1], 3).unwrap();
        assert_eq!(penalty_value(&Penalty::L2, &[5.0, -3.0, 7.0], &sel).unwrap(), 9.0);
    }

    #[test]
    fn slopes() {
        assert_eq!(
            penalty_slope(&Penalty::L1, &[0.0, -4.0, 2.0], &all(3)).unwrap(),
            vec![1.0; 3]
        );
        assert_eq!(penalty_slope(&Penalty::L2, &[0.0], &all(1)).unwrap(), vec![0.0]);
        assert_eq!(penalty_slope(&Penalty::L2, &[-1.5], &all(1)).unwrap(), vec![3.0]);
        let log = Penalty::LogBeta { beta: 0.5 };
        assert_eq!(penalty_slope(&log, &[1.0], &all(1)).unwrap(), vec![0.5]);
    }

    #[test]
    fn bad_beta_is_a_config_error() {
        for beta in [0.0, 1.0, -0.2, 1.5] {
            let p = Penalty::LogBeta { beta };
            assert!(matches!(penalty_value(&p, &[1.0], &all(1)), Err(Error::Config(_))));
            assert!(matches!(penalty_slope(&p, &[1.0], &all(1)), Err(Error::Config(_))));
        }
    }

    #[test]
    fn selection_validation() {
        assert!(Selection::new(vec![0, 3], 3).is_err());
        let s = Selection::new(vec![2, 0, 2], 3).unwrap();
        assert_eq!(s.indices(), &[0, 2]);
        assert!(s.check(2).is_err());
        assert_eq!(s.nonzero(&[0.0, 1.0, -1.0]), 1);
    }

    fn penalty() -> impl Strategy<Value = Penalty> {
        prop_oneof![
            Just(Penalty::L1),
            Just(Penalty::L2),
            (0.05f64..0.95).prop_map(|beta| Penalty::LogBeta { beta }),
        ]
    }

    proptest! {
        #[test]
        fn slope_matches_one_sided_difference(pen in penalty(), w in prop::sample::select(vec![-1.0, 1.0]), mag in 0.05f64..5.0) {
            let x = w * mag;
            let h = 1e-7 * mag.max(1.0);
            let sel = all(1);
            let base = penalty_value(&pen, &[x], &sel).unwrap();
            let moved = penalty_value(&pen, &[x + w * h], &sel).unwrap();
            let fd = (moved - base) / h;
            let p = penalty_slope(&pen, &[x], &sel).unwrap()[0];
            prop_assert!((fd - p).abs() <= 1e-6 * p.abs().max(1.0), "fd {} vs {}", fd, p);
        }

        #[test]
        fn monotone_in_magnitude(pen in penalty(), w in prop::collection::vec(-3.0f64..3.0, 1..8), grow in prop::collection::vec(0.0f64..2.0, 8)) {
            let sel = all(w.len());
            let bigger: Vec<f64> = w.iter().zip(&grow).map(|(&v, &g)| if v < 0.0 { v - g } else { v + g }).collect();
            let a = penalty_value(&pen, &w, &sel).unwrap();
            let b = penalty_value(&pen, &bigger, &sel).unwrap();
            prop_assert!(b >= a);
            prop_assert!(penalty_slope(&pen, &w, &sel).unwrap().iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn log_penalizes_small_weights_harder(beta in 0.01f64..0.99, a in 0.001f64..10.0, d in 0.001f64..10.0) {
            let pen = Penalty::LogBeta { beta };
            prop_assert!(pen.slope(a) > pen.slope(a + d));
        }
    }
}
