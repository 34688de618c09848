//! Run configuration: one TOML file with a section per module, overridden by
//! flags, validated before any compute.

use std::path::{Path, PathBuf};

use lockout::constraint::{Penalty, Selection};
use lockout::data::Task;
use lockout::lockout::{ForwardConfig, InitMode, LockoutConfig};
use lockout::net::{Activation, LossKind, NetworkSpec};
use lockout::optim::{Batching, ConvergenceRule, OptimizerKind};
use lockout::pathlog::ImportanceMode;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;

/// Every config key with its meaning, as listed by `--help`.
pub const KEYS: &[(&str, &str)] = &[
    ("run.seed", "global seed; default $LOCKOUT_SEED, else 0"),
    ("data.path", "input CSV (header row; optional `split` column)"),
    ("data.target", "target column name [y]"),
    ("data.task", "regression | classification [regression]"),
    ("data.standardize", "z-score features with training statistics [false]"),
    ("data.split_seed", "re-split rows with this seed (always when the file has no split column)"),
    ("data.fractions", "train/validation/test fractions [[0.6, 0.2, 0.2]]"),
    ("synth.kind", "one_node | friedman [one_node]"),
    ("synth.n", "rows [500]"),
    ("synth.p", "features [100]"),
    ("synth.activation", "one_node link: linear | relu | tanh | sigmoid [linear]"),
    ("synth.linear_terms", "friedman: keep the linear terms [false]"),
    ("synth.snr", "signal-to-noise ratio [1 for one_node, 0.5 for friedman]"),
    ("network.hidden", "hidden layer widths [[]]"),
    ("network.activation", "hidden activation [relu]"),
    ("network.output_activation", "output activation [linear]"),
    ("network.loss", "mse | cross_entropy [mse; cross_entropy for classification]"),
    ("network.bias", "bias on every layer [true]"),
    ("network.init_seed", "weight initialization seed [run.seed]"),
    ("forward.optimizer", "gd | adam [adam]"),
    ("forward.learning_rate", "[1e-3]"),
    ("forward.tolerance", "convergence: loss change below this ... [1e-5]"),
    ("forward.patience", "... for this many iterations [20]"),
    ("forward.max_iterations", "iteration cap [100000]"),
    ("forward.batch_size", "mini-batch size; unset means full batch"),
    ("forward.mode", "train only: converge | early_stop [converge]"),
    ("forward.early_stop_iterations", "early_stop budget [forward.max_iterations]"),
    ("lockout.penalty", "l1 | l2 | log [l1]"),
    ("lockout.beta", "log penalty shape, 0 < beta < 1"),
    ("lockout.selection", "first_layer | all_weights [first_layer]"),
    ("lockout.optimizer", "gd | adam [gd]"),
    ("lockout.learning_rate", "[1e-2]"),
    ("lockout.epsilon", "ranking guard in |g| / (p + eps) [1e-8]"),
    ("lockout.delta_t", "budget decrement [(t0 - floor) / (10 M)]"),
    ("lockout.max_iterations", "descent steps [enough to reach the floor plus 10%]"),
    ("lockout.init", "from_unconstrained | from_early_stopping [from_unconstrained]"),
    ("lockout.t_floor", "smallest budget [penalty at all-zero selection]"),
    ("lockout.reach_iterations", "constant-budget steps, early-stopping start [500]"),
    ("lockout.reach_min_step", "constant-budget phase ends below this step [1e-8]"),
    ("lockout.inner_steps", "planner steps per decrement [1]"),
    ("lockout.validation_stride", "validate every k-th point [1]"),
    ("lockout.snapshot_stride", "keep parameters every k-th point [at most 200 kept]"),
    ("lockout.sparse_tolerance", "sparse pick: validation slack [0.01]"),
    ("lockout.importance", "auto | single_node | multi_node [auto]"),
    ("output.dir", "output directory [.]"),
    ("output.run_id", "file stem [derived from the config fingerprint]"),
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub synth: SynthSection,
    pub network: NetworkSection,
    pub forward: ForwardSection,
    pub lockout: LockoutSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub target: String,
    pub task: String,
    pub standardize: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
    pub fractions: [f64; 3],
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            path: None,
            target: "y".into(),
            task: "regression".into(),
            standardize: false,
            split_seed: None,
            fractions: [0.6, 0.2, 0.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub kind: String,
    pub n: usize,
    pub p: usize,
    pub activation: String,
    pub linear_terms: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr: Option<f64>,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            kind: "one_node".into(),
            n: 500,
            p: 100,
            activation: "linear".into(),
            linear_terms: false,
            snr: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub hidden: Vec<usize>,
    pub activation: String,
    pub output_activation: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<String>,
    pub bias: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_seed: Option<u64>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            hidden: Vec::new(),
            activation: "relu".into(),
            output_activation: "linear".into(),
            loss: None,
            bias: true,
            init_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardSection {
    pub optimizer: String,
    pub learning_rate: f64,
    pub tolerance: f64,
    pub patience: usize,
    pub max_iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    pub mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub early_stop_iterations: Option<usize>,
}

impl Default for ForwardSection {
    fn default() -> Self {
        let rule = ConvergenceRule::default();
        ForwardSection {
            optimizer: "adam".into(),
            learning_rate: 1e-3,
            tolerance: rule.tolerance,
            patience: rule.patience,
            max_iterations: rule.max_iterations,
            batch_size: None,
            mode: "converge".into(),
            early_stop_iterations: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LockoutSection {
    pub penalty: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub selection: String,
    pub optimizer: String,
    pub learning_rate: f64,
    pub epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    pub init: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_floor: Option<f64>,
    pub reach_iterations: usize,
    pub reach_min_step: f64,
    pub inner_steps: usize,
    pub validation_stride: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot_stride: Option<usize>,
    pub sparse_tolerance: f64,
    pub importance: String,
}

impl Default for LockoutSection {
    fn default() -> Self {
        let base = LockoutConfig::new(Penalty::L1, Selection::empty());
        LockoutSection {
            penalty: "l1".into(),
            beta: None,
            selection: "first_layer".into(),
            optimizer: "gd".into(),
            learning_rate: base.optimizer.learning_rate(),
            epsilon: base.epsilon,
            delta_t: None,
            max_iterations: None,
            init: "from_unconstrained".into(),
            t_floor: None,
            reach_iterations: base.reach_iterations,
            reach_min_step: base.reach_min_step,
            inner_steps: base.inner_steps,
            validation_stride: base.validation_stride,
            snapshot_stride: None,
            sparse_tolerance: base.sparse_tolerance,
            importance: "auto".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("."),
            run_id: None,
        }
    }
}

/// Parses a `--set` value as a TOML value, falling back to a bare string.
pub fn parse_value(text: &str) -> Value {
    format!("v = {text}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(text.to_string()))
}

/// Merges the optional file, then `overrides` in order, then the seed
/// default, and deserializes the result.
pub fn load(
    file: Option<&Path>,
    overrides: &[(String, Value)],
    env_seed: Option<&str>,
) -> Result<RunConfig, CliError> {
    let mut table = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
            text.parse::<Table>()
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        }
        None => Table::new(),
    };
    for (key, value) in overrides {
        set_key(&mut table, key, value.clone())?;
    }
    for (section, value) in &table {
        let Value::Table(sub) = value else {
            return Err(CliError::config(format!("`{section}` is not a section")));
        };
        for key in sub.keys() {
            let full = format!("{section}.{key}");
            if !KEYS.iter().any(|k| k.0 == full) {
                return Err(CliError::config(format!("{full}: unknown key")));
            }
        }
    }
    let mut cfg: RunConfig = serde_path_to_error::deserialize(Value::Table(table))
        .map_err(|e| CliError::config(format!("{}: {}", e.path(), e.inner().message())))?;
    if cfg.run.seed.is_none() {
        cfg.run.seed = Some(match env_seed {
            Some(s) => s
                .trim()
                .parse()
                .map_err(|_| CliError::config(format!("LOCKOUT_SEED: not a seed: `{s}`")))?,
            None => 0,
        });
    }
    Ok(cfg)
}

fn set_key(table: &mut Table, key: &str, value: Value) -> Result<(), CliError> {
    let Some((section, field)) = key.split_once('.') else {
        return Err(CliError::config(format!("`{key}`: expected section.key")));
    };
    let entry = table
        .entry(section)
        .or_insert_with(|| Value::Table(Table::new()));
    let Value::Table(sub) = entry else {
        return Err(CliError::config(format!("`{section}` is not a section")));
    };
    sub.insert(field.to_string(), value);
    Ok(())
}

fn field<T: std::str::FromStr<Err = lockout::Error>>(key: &str, text: &str) -> Result<T, CliError> {
    text.parse()
        .map_err(|e: lockout::Error| CliError::config(format!("{key}: {e}")))
}

fn optimizer(key: &str, kind: &str, learning_rate: f64) -> Result<OptimizerKind, CliError> {
    let opt = match kind {
        "gd" | "gradient_descent" => OptimizerKind::gradient_descent(learning_rate),
        "adam" | "adaptive_moments" => OptimizerKind::adaptive_moments(learning_rate),
        other => return Err(CliError::config(format!("{key}: unknown optimizer `{other}`"))),
    };
    opt.validate()
        .map_err(|e| CliError::config(format!("{key}: {e}")))?;
    Ok(opt)
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.run.seed.unwrap_or(0)
    }

    pub fn task(&self) -> Result<Task, CliError> {
        field("data.task", &self.data.task)
    }

    pub fn synth_activation(&self) -> Result<Activation, CliError> {
        field("synth.activation", &self.synth.activation)
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<(), CliError> {
        let fr = self.data.fractions;
        if fr.iter().any(|f| !(*f >= 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CliError::config("data.fractions: must be >= 0 and sum to 1"));
        }
        self.task()?;
        if !matches!(self.synth.kind.as_str(), "one_node" | "friedman") {
            return Err(CliError::config(format!(
                "synth.kind: unknown generator `{}`",
                self.synth.kind
            )));
        }
        self.synth_activation()?;
        if let Some(snr) = self.synth.snr {
            if !(snr > 0.0 && snr.is_finite()) {
                return Err(CliError::config("synth.snr: must be > 0"));
            }
        }
        field::<Activation>("network.activation", &self.network.activation)?;
        field::<Activation>("network.output_activation", &self.network.output_activation)?;
        if let Some(loss) = &self.network.loss {
            field::<LossKind>("network.loss", loss)?;
        }
        if self.network.hidden.contains(&0) {
            return Err(CliError::config("network.hidden: widths must be >= 1"));
        }
        self.forward_config()?;
        if !matches!(self.forward.mode.as_str(), "converge" | "early_stop") {
            return Err(CliError::config(format!(
                "forward.mode: unknown mode `{}`",
                self.forward.mode
            )));
        }
        if self.forward.early_stop_iterations == Some(0) {
            return Err(CliError::config("forward.early_stop_iterations: must be >= 1"));
        }
        Penalty::parse(&self.lockout.penalty, self.lockout.beta)
            .map_err(|e| CliError::config(format!("lockout.penalty: {e}")))?;
        if !matches!(self.lockout.selection.as_str(), "first_layer" | "all_weights") {
            return Err(CliError::config(format!(
                "lockout.selection: unknown selection `{}`",
                self.lockout.selection
            )));
        }
        field::<InitMode>("lockout.init", &self.lockout.init)?;
        if self.lockout.importance != "auto" {
            field::<ImportanceMode>("lockout.importance", &self.lockout.importance)?;
        }
        let mut probe = self.lockout_config(&NetworkSpec::linear_model(1, Activation::Linear, true)
            .expect("valid probe spec"))?;
        probe.selection = Selection::empty();
        probe
            .validate()
            .map_err(|e| CliError::config(format!("lockout: {e}")))?;
        if let Some(id) = &self.output.run_id {
            if id.is_empty() || id.contains(['/', '\\']) {
                return Err(CliError::config("output.run_id: must be a non-empty file stem"));
            }
        }
        Ok(())
    }

    /// Network for `inputs` features and `outputs` output columns.
    pub fn network_spec(&self, inputs: usize, outputs: usize) -> Result<NetworkSpec, CliError> {
        let hidden: Activation = field("network.activation", &self.network.activation)?;
        let out: Activation = field("network.output_activation", &self.network.output_activation)?;
        let loss = match &self.network.loss {
            Some(l) => field("network.loss", l)?,
            None if self.task()? == Task::Classification => LossKind::CrossEntropy,
            None => LossKind::MeanSquaredError,
        };
        let mut sizes = vec![inputs];
        sizes.extend(&self.network.hidden);
        sizes.push(outputs);
        let mut acts = vec![hidden; self.network.hidden.len()];
        acts.push(out);
        let spec = NetworkSpec::new(sizes, acts, loss)
            .map_err(|e| CliError::config(format!("network: {e}")))?;
        Ok(if self.network.bias { spec } else { spec.without_bias() })
    }

    pub fn init_seed(&self) -> u64 {
        self.network.init_seed.unwrap_or(self.seed())
    }

    pub fn forward_config(&self) -> Result<ForwardConfig, CliError> {
        let f = &self.forward;
        let rule = ConvergenceRule {
            tolerance: f.tolerance,
            patience: f.patience,
            max_iterations: f.max_iterations,
        };
        rule.validate()
            .map_err(|e| CliError::config(format!("forward: {e}")))?;
        let batching = match f.batch_size {
            None => Batching::Full,
            Some(0) => return Err(CliError::config("forward.batch_size: must be >= 1")),
            Some(size) => Batching::MiniBatch {
                size,
                seed: self.seed(),
            },
        };
        Ok(ForwardConfig {
            optimizer: optimizer("forward.optimizer", &f.optimizer, f.learning_rate)?,
            rule,
            batching,
        })
    }

    pub fn lockout_config(&self, spec: &NetworkSpec) -> Result<LockoutConfig, CliError> {
        let l = &self.lockout;
        let penalty = Penalty::parse(&l.penalty, l.beta)
            .map_err(|e| CliError::config(format!("lockout.penalty: {e}")))?;
        let selection = match l.selection.as_str() {
            "first_layer" => Selection::first_layer(spec),
            "all_weights" => Selection::all_weights(spec),
            other => {
                return Err(CliError::config(format!(
                    "lockout.selection: unknown selection `{other}`"
                )))
            }
        };
        let mut cfg = LockoutConfig::new(penalty, selection);
        cfg.optimizer = optimizer("lockout.optimizer", &l.optimizer, l.learning_rate)?;
        cfg.epsilon = l.epsilon;
        cfg.delta_t = l.delta_t;
        cfg.max_iterations = l.max_iterations;
        cfg.init_mode = field("lockout.init", &l.init)?;
        cfg.t_floor = l.t_floor;
        cfg.reach_iterations = l.reach_iterations;
        cfg.reach_min_step = l.reach_min_step;
        cfg.inner_steps = l.inner_steps;
        cfg.validation_stride = l.validation_stride;
        cfg.snapshot_stride = l.snapshot_stride;
        cfg.sparse_tolerance = l.sparse_tolerance;
        cfg.validate()
            .map_err(|e| CliError::config(format!("lockout: {e}")))?;
        Ok(cfg)
    }

    /// Single-node importance when the first layer has one node.
    pub fn importance_mode(&self, spec: &NetworkSpec) -> Result<ImportanceMode, CliError> {
        match self.lockout.importance.as_str() {
            "auto" if spec.layer_sizes[1] == 1 => Ok(ImportanceMode::SingleNode),
            "auto" => Ok(ImportanceMode::MultiNode),
            other => field("lockout.importance", other),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full() -> RunConfig {
        let mut c = RunConfig::default();
        c.run.seed = Some(1);
        c.data.path = Some("x.csv".into());
        c.data.split_seed = Some(2);
        c.synth.snr = Some(1.0);
        c.network.loss = Some("mse".into());
        c.network.init_seed = Some(3);
        c.forward.batch_size = Some(8);
        c.forward.early_stop_iterations = Some(9);
        c.lockout.beta = Some(0.5);
        c.lockout.delta_t = Some(0.1);
        c.lockout.max_iterations = Some(10);
        c.lockout.t_floor = Some(0.0);
        c.lockout.snapshot_stride = Some(2);
        c.output.run_id = Some("r".into());
        c
    }

    #[test]
    fn every_key_is_documented() {
        let table: Table = full().to_toml().parse().unwrap();
        let mut keys = Vec::new();
        for (section, v) in &table {
            for k in v.as_table().unwrap().keys() {
                keys.push(format!("{section}.{k}"));
            }
        }
        let documented: Vec<&str> = KEYS.iter().map(|k| k.0).collect();
        for k in &keys {
            assert!(documented.contains(&k.as_str()), "undocumented key {k}");
        }
        assert_eq!(keys.len(), documented.len());
    }

    #[test]
    fn effective_config_reloads() {
        let c = full();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_and_seed_precedence() {
        let o = vec![
            ("lockout.penalty".to_string(), parse_value("log")),
            ("lockout.beta".to_string(), parse_value("0.3")),
            ("network.hidden".to_string(), parse_value("[10, 10]")),
        ];
        let c = load(None, &o, Some("42")).unwrap();
        assert_eq!(c.lockout.penalty, "log");
        assert_eq!(c.lockout.beta, Some(0.3));
        assert_eq!(c.network.hidden, vec![10, 10]);
        assert_eq!(c.seed(), 42);
        let o = vec![("run.seed".to_string(), parse_value("7"))];
        assert_eq!(load(None, &o, Some("42")).unwrap().seed(), 7);
        assert_eq!(load(None, &[], None).unwrap().seed(), 0);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let o = vec![("lockout.pennalty".to_string(), parse_value("l1"))];
        let e = load(None, &o, None).unwrap_err();
        assert_eq!(e.message, "lockout.pennalty: unknown key");
        let o = vec![("synth.n".to_string(), parse_value("many"))];
        let e = load(None, &o, None).unwrap_err();
        assert!(e.message.starts_with("synth.n: "), "{}", e.message);
        let o = vec![("nosection".to_string(), parse_value("1"))];
        assert!(load(None, &o, None).is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let mut c = RunConfig::default();
        c.lockout.penalty = "log".into();
        let e = c.validate().unwrap_err();
        assert!(e.message.starts_with("lockout.penalty"), "{}", e.message);
        let mut c = RunConfig::default();
        c.forward.learning_rate = -1.0;
        assert!(c.validate().unwrap_err().message.starts_with("forward.optimizer"));
        let mut c = RunConfig::default();
        c.data.fractions = [0.5, 0.5, 0.5];
        assert!(c.validate().unwrap_err().message.starts_with("data.fractions"));
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn network_shape_follows_config() {
        let mut c = RunConfig::default();
        c.network.hidden = vec![10, 10];
        let s = c.network_spec(200, 1).unwrap();
        assert_eq!(s.layer_sizes, vec![200, 10, 10, 1]);
        assert_eq!(
            s.activations,
            vec![Activation::Relu, Activation::Relu, Activation::Linear]
        );
        assert_eq!(c.importance_mode(&s).unwrap(), ImportanceMode::MultiNode);
        let single = RunConfig::default().network_spec(5, 1).unwrap();
        assert_eq!(RunConfig::default().importance_mode(&single).unwrap(), ImportanceMode::SingleNode);
    }
}
