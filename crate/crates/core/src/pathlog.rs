//! Path records, model selection along the path, feature importance, export.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::lockout::Phase;
use crate::net::NetworkSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub iteration: usize,
    pub phase: Phase,
    /// Budget in force for the step that produced this point.
    pub t: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Nonzero parameters within the selection.
    pub nonzero_count: usize,
    /// Input features with at least one nonzero first-layer weight.
    pub active_features: usize,
    /// `P(w)` over the selection.
    pub penalty: f64,
    /// Parameters zeroed by the sign-crossing rule on this step.
    pub crossings: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Annotations {
    pub validation_min: Option<usize>,
    pub sparse_pick: Option<usize>,
    pub sparse_tolerance: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PathLog {
    pub points: Vec<PathPoint>,
    pub fingerprint: String,
    pub annotations: Annotations,
}

impl PathLog {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Parameters stored at `index`, if a snapshot was kept there.
    pub fn params_at(&self, index: usize) -> Option<&[f64]> {
        self.points.get(index)?.params.as_deref()
    }

    /// Runs both selections and stores the resulting indices.
    pub fn annotate(&mut self, sparse_tolerance: f64) -> Result<()> {
        self.annotations = Annotations {
            validation_min: Some(select_min_validation(self)?),
            sparse_pick: Some(select_sparsest_within(self, sparse_tolerance)?),
            sparse_tolerance: Some(sparse_tolerance),
        };
        Ok(())
    }
}

fn validated(log: &PathLog) -> Result<impl Iterator<Item = (usize, f64, &PathPoint)>> {
    if log.is_empty() {
        return Err(Error::Argument("empty path log".into()));
    }
    if log.points.iter().all(|p| p.val_loss.is_none()) {
        return Err(Error::Argument("path log has no validation losses".into()));
    }
    Ok(log
        .points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.val_loss.map(|v| (i, v, p))))
}

/// `a` is preferred over an earlier `b` with the same loss: fewer nonzeros,
/// then the later point.
fn prefer_later(a_nnz: usize, b_nnz: usize) -> bool {
    a_nnz <= b_nnz
}

/// Index of the smallest validation loss; ties go to the smallest nonzero
/// count, then to the latest point.
pub fn select_min_validation(log: &PathLog) -> Result<usize> {
    let mut best: Option<(usize, f64, usize)> = None;
    for (i, v, p) in validated(log)? {
        best = match best {
            Some((_, bv, bn)) if v > bv || (v == bv && !prefer_later(p.nonzero_count, bn)) => best,
            _ => Some((i, v, p.nonzero_count)),
        };
    }
    Ok(best.expect("at least one validation loss").0)
}

/// Whether a loss `v` is close enough to the minimum `min`: strictly below
/// `(1 + tolerance) min`, or the minimum itself.
fn admitted(v: f64, min: f64, tolerance: f64) -> bool {
    v == min || tolerance.is_infinite() || v < min + tolerance * min.abs()
}

/// Sparsest point whose validation loss is below `(1 + tolerance)` times the
/// minimum (the minimum itself always qualifies); ties go to the latest point.
pub fn select_sparsest_within(log: &PathLog, tolerance: f64) -> Result<usize> {
    if !(tolerance >= 0.0) {
        return Err(Error::Argument(format!("tolerance must be >= 0, got {tolerance}")));
    }
    let min = validated(log)?.map(|(_, v, _)| v).fold(f64::INFINITY, f64::min);
    let mut best: Option<(usize, usize)> = None;
    for (i, v, p) in validated(log)? {
        if !admitted(v, min, tolerance) {
            continue;
        }
        if best.is_none_or(|(_, n)| p.nonzero_count <= n) {
            best = Some((i, p.nonzero_count));
        }
    }
    Ok(best.expect("the minimum is always admitted").0)
}

/// Streams points and keeps parameter snapshots for every point that could
/// still end up as either selection, so the driver does not need to store
/// every snapshot.
#[derive(Debug, Clone)]
pub(crate) struct SelectionKeeper {
    tolerance: f64,
    min: f64,
    best: Option<Candidate>,
    front: Vec<Candidate>,
}

#[derive(Debug, Clone)]
struct Candidate {
    index: usize,
    val: f64,
    nnz: usize,
    params: Vec<f64>,
}

impl SelectionKeeper {
    pub(crate) fn new(tolerance: f64) -> Self {
        SelectionKeeper {
            tolerance,
            min: f64::INFINITY,
            best: None,
            front: Vec::new(),
        }
    }

    pub(crate) fn offer(&mut self, index: usize, val: f64, nnz: usize, params: &[f64]) {
        let replace = match &self.best {
            None => true,
            Some(b) => val < b.val || (val == b.val && prefer_later(nnz, b.nnz)),
        };
        if replace {
            self.best = Some(Candidate {
                index,
                val,
                nnz,
                params: params.to_vec(),
            });
        }

        // The minimum only falls, so a point that is not admitted now never
        // will be.
        self.min = self.min.min(val);
        let (min, tol) = (self.min, self.tolerance);
        self.front
            .retain(|c| admitted(c.val, min, tol) && !(val <= c.val && nnz <= c.nnz));
        let dominated = self.front.iter().any(|c| c.val <= val && c.nnz < nnz);
        if admitted(val, min, tol) && !dominated {
            self.front.push(Candidate {
                index,
                val,
                nnz,
                params: params.to_vec(),
            });
        }
    }

    /// Attaches the kept snapshots to the selected points of `log`.
    pub(crate) fn finish(self, log: &mut PathLog) {
        let wanted = [log.annotations.validation_min, log.annotations.sparse_pick];
        for c in self.best.into_iter().chain(self.front) {
            if wanted.contains(&Some(c.index)) && log.points[c.index].params.is_none() {
                log.points[c.index].params = Some(c.params);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMode {
    /// `|w_i|` of each input's first-layer weights (summed if the layer has
    /// more than one node).
    SingleNode,
    /// `Omega_i = sum_j |w_ij|` over first-layer nodes, divided by its maximum.
    MultiNode,
}

impl std::str::FromStr for ImportanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_node" => Ok(ImportanceMode::SingleNode),
            "multi_node" => Ok(ImportanceMode::MultiNode),
            other => Err(Error::Config(format!("unknown importance mode `{other}`"))),
        }
    }
}

pub fn feature_importance(spec: &NetworkSpec, params: &[f64], mode: ImportanceMode) -> Vec<f64> {
    let w = spec.layout().weights(params, 1);
    let omega: Vec<f64> = w
        .columns()
        .into_iter()
        .map(|col| col.iter().map(|v| v.abs()).sum())
        .collect();
    match mode {
        ImportanceMode::SingleNode => omega,
        ImportanceMode::MultiNode => {
            let max = omega.iter().copied().fold(0.0, f64::max);
            if max == 0.0 {
                omega
            } else {
                omega.into_iter().map(|o| o / max).collect()
            }
        }
    }
}

/// Short stable hash of any serializable run description.
pub fn fingerprint<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    let digest = Sha256::digest(&bytes);
    Ok(hex::encode(&digest[..8]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogFormat {
    Csv,
    Json,
}

impl LogFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(LogFormat::Csv),
            Some("json") => Ok(LogFormat::Json),
            _ => Err(Error::Argument(format!(
                "cannot infer log format from `{}`",
                path.display()
            ))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            LogFormat::Csv => "csv",
            LogFormat::Json => "json",
        }
    }
}

pub const CSV_HEADER: [&str; 6] = [
    "iteration",
    "phase",
    "t",
    "train_loss",
    "val_loss",
    "nonzero_count",
];

pub fn export_log(log: &PathLog, path: &Path, format: LogFormat) -> Result<()> {
    let file = File::create(path)?;
    match format {
        LogFormat::Json => {
            let mut w = BufWriter::new(file);
            serde_json::to_writer_pretty(&mut w, log)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        LogFormat::Csv => {
            let mut w = csv::Writer::from_writer(file);
            w.write_record(CSV_HEADER)?;
            for p in &log.points {
                // Display for f64 prints the shortest representation that
                // parses back to the same value.
                w.write_record([
                    p.iteration.to_string(),
                    p.phase.as_str().to_string(),
                    p.t.to_string(),
                    p.train_loss.to_string(),
                    p.val_loss.map(|v| v.to_string()).unwrap_or_default(),
                    p.nonzero_count.to_string(),
                ])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Reads a log written by [`export_log`]. CSV logs only carry the exported
/// columns; the remaining point fields are left at zero.
pub fn import_log(path: &Path) -> Result<PathLog> {
    match LogFormat::from_path(path)? {
        LogFormat::Json => Ok(serde_json::from_reader(std::io::BufReader::new(File::open(
            path,
        )?))?),
        LogFormat::Csv => {
            let mut r = csv::Reader::from_path(path)?;
            let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
            if header != CSV_HEADER {
                return Err(Error::Format {
                    line: 1,
                    column: header.join(","),
                    message: "unexpected path log header".into(),
                });
            }
            let mut points = Vec::new();
            for rec in r.records() {
                let rec = rec?;
                let line = rec.position().map_or(0, |p| p.line());
                let field = |k: usize| -> Result<&str> {
                    rec.get(k).ok_or_else(|| Error::Format {
                        line,
                        column: CSV_HEADER[k].into(),
                        message: "missing field".into(),
                    })
                };
                let bad = |k: usize, e: String| Error::Format {
                    line,
                    column: CSV_HEADER[k].into(),
                    message: e,
                };
                let num = |k: usize| -> Result<f64> {
                    field(k)?.parse::<f64>().map_err(|e| bad(k, e.to_string()))
                };
                let phase = match field(1)? {
                    "reaching_path" => Phase::ReachingPath,
                    "descending" => Phase::Descending,
                    other => return Err(bad(1, format!("unknown phase `{other}`"))),
                };
                let val = field(4)?;
                points.push(PathPoint {
                    iteration: field(0)?.parse().map_err(|e| bad(0, format!("{e}")))?,
                    phase,
                    t: num(2)?,
                    train_loss: num(3)?,
                    val_loss: if val.is_empty() { None } else { Some(num(4)?) },
                    nonzero_count: field(5)?.parse().map_err(|e| bad(5, format!("{e}")))?,
                    active_features: 0,
                    penalty: 0.0,
                    crossings: 0,
                    params: None,
                });
            }
            Ok(PathLog {
                points,
                ..PathLog::default()
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, LossKind};
    use proptest::prelude::*;

    fn point(iteration: usize, val: f64, nnz: usize) -> PathPoint {
        PathPoint {
            iteration,
            phase: Phase::Descending,
            t: 10.0 - iteration as f64 * 0.1,
            train_loss: val * 0.9,
            val_loss: Some(val),
            nonzero_count: nnz,
            active_features: nnz,
            penalty: 1.0,
            crossings: 0,
            params: None,
        }
    }

    fn log_of(vals: &[(f64, usize)]) -> PathLog {
        PathLog {
            points: vals
                .iter()
                .enumerate()
                .map(|(i, &(v, n))| point(i, v, n))
                .collect(),
            ..PathLog::default()
        }
    }

    #[test]
    fn min_validation_rules() {
        assert_eq!(select_min_validation(&log_of(&[(3.0, 5), (2.0, 5), (1.0, 5)])).unwrap(), 2);
        assert_eq!(select_min_validation(&log_of(&[(3.0, 5)])).unwrap(), 0);
        assert_eq!(select_min_validation(&log_of(&[(1.0, 40), (1.0, 7), (2.0, 1)])).unwrap(), 1);
        assert_eq!(select_min_validation(&log_of(&[(1.0, 7), (1.0, 40)])).unwrap(), 0);
        assert_eq!(select_min_validation(&log_of(&[(1.0, 7), (1.0, 7)])).unwrap(), 1);
        assert!(matches!(
            select_min_validation(&PathLog::default()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn sparsest_within_rules() {
        let plateau = log_of(&[(1.00, 50), (1.01, 20), (1.02, 5)]);
        assert_eq!(select_sparsest_within(&plateau, 0.02).unwrap(), 1);
        assert_eq!(select_sparsest_within(&plateau, 0.0).unwrap(), 0);
        assert_eq!(select_sparsest_within(&plateau, f64::INFINITY).unwrap(), 2);
        assert!(select_sparsest_within(&plateau, -0.1).is_err());
        assert!(select_sparsest_within(&PathLog::default(), 0.1).is_err());
        let zero = log_of(&[(0.0, 3), (0.5, 1)]);
        assert_eq!(select_sparsest_within(&zero, f64::INFINITY).unwrap(), 1);
    }

    #[test]
    fn importance_examples() {
        let spec = NetworkSpec::linear_model(5, Activation::Linear, false).unwrap();
        let w = [0.5, -0.75, 1.0, 0.0, 0.0];
        assert_eq!(
            feature_importance(&spec, &w, ImportanceMode::SingleNode),
            vec![0.5, 0.75, 1.0, 0.0, 0.0]
        );
        assert_eq!(
            feature_importance(&spec, &[0.0; 5], ImportanceMode::MultiNode),
            vec![0.0; 5]
        );

        // two hidden nodes over two features, node rows (1, 0) and (1, 2)
        let spec = NetworkSpec::new(
            vec![2, 2, 1],
            vec![Activation::Relu, Activation::Linear],
            LossKind::MeanSquaredError,
        )
        .unwrap()
        .without_bias();
        let params = [1.0, 0.0, 1.0, 2.0, 0.3, 0.3];
        assert_eq!(
            feature_importance(&spec, &params, ImportanceMode::SingleNode),
            vec![2.0, 2.0]
        );
        assert_eq!(
            feature_importance(&spec, &params, ImportanceMode::MultiNode),
            vec![1.0, 1.0]
        );
        let params = [1.0, 0.0, 0.0, 2.0, 0.3, 0.3];
        assert_eq!(
            feature_importance(&spec, &params, ImportanceMode::MultiNode),
            vec![0.5, 1.0]
        );
    }

    #[test]
    fn csv_export_has_one_line_per_point() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.path.csv");
        let mut log = log_of(&[(1.0, 3), (0.5, 2), (0.25, 1)]);
        log.points[1].val_loss = None;
        export_log(&log, &path, LogFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "iteration,phase,t,train_loss,val_loss,nonzero_count");
        assert_eq!(lines[2], "1,descending,9.9,0.45,,2");
        let back = import_log(&path).unwrap();
        assert_eq!(back.points[2].train_loss, log.points[2].train_loss);
        assert_eq!(back.points[1].val_loss, None);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.path.json");
        let mut log = log_of(&[(0.1 + 0.2, 3), (1.0 / 3.0, 2)]);
        log.points[0].params = Some(vec![std::f64::consts::PI, -1e-300, 0.0]);
        log.fingerprint = "abc".into();
        log.annotate(0.5).unwrap();
        export_log(&log, &path, LogFormat::Json).unwrap();
        assert_eq!(import_log(&path).unwrap(), log);
    }

    #[test]
    fn fingerprint_is_stable() {
        let a = fingerprint(&("x", 1)).unwrap();
        assert_eq!(a, fingerprint(&("x", 1)).unwrap());
        assert_ne!(a, fingerprint(&("x", 2)).unwrap());
        assert_eq!(a.len(), 16);
    }

    fn trace() -> impl Strategy<Value = Vec<(f64, usize)>> {
        prop::collection::vec(((0u32..20).prop_map(|v| 1.0 + v as f64 * 0.01), 0usize..10), 1..40)
    }

    proptest! {
        #[test]
        fn min_validation_is_argmin(vals in trace()) {
            let log = log_of(&vals);
            let i = select_min_validation(&log).unwrap();
            let v = log.points[i].val_loss.unwrap();
            prop_assert!(log.points.iter().all(|p| p.val_loss.unwrap() >= v));
            let j = select_sparsest_within(&log, 0.0).unwrap();
            prop_assert!(log.points[j].val_loss.unwrap() <= v);
        }

        #[test]
        fn keeper_holds_both_selections(vals in trace(), tol in prop::sample::select(vec![0.0, 0.005, 0.02, 0.1, f64::INFINITY])) {
            let mut log = log_of(&vals);
            let mut keeper = SelectionKeeper::new(tol);
            for (i, p) in log.points.iter().enumerate() {
                keeper.offer(i, p.val_loss.unwrap(), p.nonzero_count, &[i as f64]);
            }
            log.annotate(tol).unwrap();
            keeper.finish(&mut log);
            for idx in [log.annotations.validation_min, log.annotations.sparse_pick] {
                let idx = idx.unwrap();
                prop_assert_eq!(log.params_at(idx), Some(&[idx as f64][..]));
            }
        }

        #[test]
        fn importance_ignores_node_order(w in prop::collection::vec(-2.0f64..2.0, 9)) {
            let spec = NetworkSpec::new(vec![3, 3, 1], vec![Activation::Tanh, Activation::Linear], LossKind::MeanSquaredError)
                .unwrap()
                .without_bias();
            let mut params = w.clone();
            params.extend([1.0, 1.0, 1.0]);
            let mut swapped = w[3..6].to_vec();
            swapped.extend(&w[0..3]);
            swapped.extend(&w[6..9]);
            swapped.extend([1.0, 1.0, 1.0]);
            prop_assert_eq!(
                feature_importance(&spec, &params, ImportanceMode::MultiNode),
                feature_importance(&spec, &swapped, ImportanceMode::MultiNode)
            );
        }
    }
}
