//! Subcommand bodies. Each returns a JSON summary printed to stdout.

use std::path::{Path, PathBuf};

use lockout::data::{
    gen_friedman_with, gen_synthetic_one_node_with, load_csv, split_dataset, write_csv,
    write_metadata, Dataset, NoiseOptions, Partition, SplitTag, Standardizer,
};
use lockout::lockout::{fit_path, run_path, InitMode};
use lockout::net::{active_inputs, score, NetworkParams, NetworkSpec, Targets};
use lockout::optim::Trainer;
use lockout::pathlog::{
    export_log, feature_importance, fingerprint, import_log, select_min_validation,
    select_sparsest_within, LogFormat, PathLog, PathPoint,
};
use lockout::verify::{grad_suite, lasso_suite, lp_suite, penalty_kinds, step_suite, LassoSuiteConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::CliError;

/// A network with one parameter vector, as written by `train` and `path`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub spec: NetworkSpec,
    pub params: Vec<f64>,
    /// What the parameters are (`converged`, `early_stopping`, `validation_min`, ...).
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_index: Option<usize>,
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    write_text(path, &text)
}

/// Output directory (created) and the run id.
fn output(cfg: &RunConfig, command: &str) -> Result<(PathBuf, String), CliError> {
    let dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
    let id = match &cfg.output.run_id {
        Some(id) => id.clone(),
        None => format!("{command}-{}", fingerprint(cfg)?),
    };
    Ok((dir, id))
}

fn write_config(cfg: &RunConfig, dir: &Path, id: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(format!("{id}.config.toml"));
    write_text(&path, &cfg.to_toml())?;
    Ok(path)
}

pub fn synth(cfg: &RunConfig) -> Result<Value, CliError> {
    let s = &cfg.synth;
    let seed = cfg.seed();
    let mut opts = NoiseOptions::with_snr(match (s.snr, s.kind.as_str()) {
        (Some(snr), _) => snr,
        (None, "friedman") => 0.5,
        (None, _) => 1.0,
    });
    opts.fractions = cfg.data.fractions;
    let ds = match s.kind.as_str() {
        "friedman" => gen_friedman_with(s.n, s.p, s.linear_terms, seed, &opts)?,
        _ => gen_synthetic_one_node_with(s.n, s.p, cfg.synth_activation()?, seed, &opts)?,
    };
    let dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
    let id = cfg
        .output
        .run_id
        .clone()
        .unwrap_or_else(|| format!("{}-n{}-p{}-s{seed}", s.kind, s.n, s.p));
    let data = dir.join(format!("{id}.csv"));
    let meta = dir.join(format!("{id}.meta.json"));
    write_csv(&ds, &data)?;
    write_metadata(&ds, &meta)?;
    Ok(json!({
        "data": data,
        "metadata": meta,
        "rows": ds.len(),
        "features": ds.num_features(),
        "splits": ds.counts(),
    }))
}

/// Loads, splits and optionally standardizes the configured CSV.
pub fn load_data(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let path = cfg
        .data
        .path
        .as_ref()
        .ok_or_else(|| CliError::config("data.path: required (use --data)"))?;
    if !path.is_file() {
        return Err(CliError::io(format!("{}: no such file", path.display())));
    }
    let mut ds = load_csv(path, &cfg.data.target, cfg.task()?)?;
    let unsplit = ds.rows(SplitTag::Validation).is_empty() && ds.rows(SplitTag::Test).is_empty();
    if let Some(seed) = cfg.data.split_seed.or(unsplit.then(|| cfg.seed())) {
        ds = split_dataset(&ds, cfg.data.fractions, seed)?;
    }
    if ds.rows(SplitTag::Train).is_empty() || ds.rows(SplitTag::Validation).is_empty() {
        return Err(CliError::data("need training and validation rows"));
    }
    if cfg.data.standardize {
        ds = Standardizer::fit(&ds)?.apply(&ds);
    }
    Ok(ds)
}

fn outputs_of(ds: &Dataset) -> usize {
    match &ds.y {
        Targets::Real(y) => y.ncols(),
        Targets::Classes(c) => c.iter().max().map_or(1, |m| m + 1),
    }
}

fn test_score(spec: &NetworkSpec, params: &[f64], parts: &Partition) -> Result<Option<f64>, CliError> {
    if parts.test.is_empty() {
        return Ok(None);
    }
    Ok(Some(score(spec, params, &parts.test)?))
}

pub fn train(cfg: &RunConfig) -> Result<Value, CliError> {
    let ds = load_data(cfg)?;
    let parts = ds.partition()?;
    let spec = cfg.network_spec(ds.num_features(), outputs_of(&ds))?;
    let forward = cfg.forward_config()?;
    let (dir, id) = output(cfg, "train")?;
    let init = NetworkParams::init_uniform(&spec, cfg.init_seed()).values;
    let trainer = Trainer::new(&spec, forward.optimizer).batching(forward.batching);
    let (result, params, source) = if cfg.forward.mode == "early_stop" {
        let budget = cfg.forward.early_stop_iterations.unwrap_or(forward.rule.max_iterations);
        let r = trainer.with_early_stopping(&init, &parts.train, &parts.validation, budget)?;
        let p = r.best_params.clone();
        (r, p, "early_stopping")
    } else {
        let r = trainer.to_convergence(&init, &parts.train, Some(&parts.validation), &forward.rule)?;
        let p = r.params.clone();
        (r, p, "converged")
    };
    let model_path = dir.join(format!("{id}.model.json"));
    let result_path = dir.join(format!("{id}.train.json"));
    let config = write_config(cfg, &dir, &id)?;
    let test = test_score(&spec, &params, &parts)?;
    write_json(
        &model_path,
        &ModelFile {
            spec,
            params,
            source: source.into(),
            path_index: None,
        },
    )?;
    write_json(&result_path, &result)?;
    Ok(json!({
        "run_id": id,
        "model": model_path,
        "result": result_path,
        "config": config,
        "iterations": result.iterations,
        "stop": result.stop,
        "best_iteration": result.best_iteration(),
        "best_validation_loss": result.best_validation_loss,
        "test_score": test,
    }))
}

fn point_summary(log: &PathLog, i: usize) -> Value {
    let p: &PathPoint = &log.points[i];
    json!({
        "index": i,
        "iteration": p.iteration,
        "phase": p.phase.as_str(),
        "t": p.t,
        "train_loss": p.train_loss,
        "val_loss": p.val_loss,
        "nonzero_count": p.nonzero_count,
        "active_features": p.active_features,
    })
}

fn write_importance(
    path: &Path,
    names: &[String],
    columns: &[(&str, Vec<f64>)],
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(e.to_string()))?;
    let mut header = vec!["feature".to_string()];
    header.extend(columns.iter().map(|c| c.0.to_string()));
    w.write_record(&header).map_err(|e| CliError::io(e.to_string()))?;
    for (j, name) in names.iter().enumerate() {
        let mut rec = vec![name.clone()];
        rec.extend(columns.iter().map(|c| c.1[j].to_string()));
        w.write_record(&rec).map_err(|e| CliError::io(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::io(e.to_string()))
}

pub fn path(cfg: &RunConfig, params_file: Option<&Path>) -> Result<Value, CliError> {
    let ds = load_data(cfg)?;
    let parts = ds.partition()?;
    let (dir, id) = output(cfg, "path")?;
    let config = write_config(cfg, &dir, &id)?;
    let supplied = match params_file {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::io(format!("{}: {e}", p.display())))?;
            let model: ModelFile = serde_json::from_str(&text)
                .map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
            if model.spec.input_width() != ds.num_features() {
                return Err(CliError::data(format!(
                    "model expects {} features, data has {}",
                    model.spec.input_width(),
                    ds.num_features()
                )));
            }
            Some(model)
        }
        None => None,
    };
    let spec = match &supplied {
        Some(m) => m.spec.clone(),
        None => cfg.network_spec(ds.num_features(), outputs_of(&ds))?,
    };
    let lcfg = cfg.lockout_config(&spec)?;
    let json_path = dir.join(format!("{id}.path.json"));
    let run = match &supplied {
        Some(m) => run_path(&spec, &m.params, &parts.train, Some(&parts.validation), &lcfg)
            .map(|log| (None, log)),
        None => {
            let init = NetworkParams::init_uniform(&spec, cfg.init_seed()).values;
            let forward = cfg.forward_config()?;
            fit_path(&spec, &init, &parts.train, &parts.validation, &forward, &lcfg)
                .map(|fit| (Some(fit.forward), fit.log))
        }
    };
    let (forward, mut log) = match run {
        Ok(r) => r,
        Err(lockout::Error::PathDiverged { iteration, partial }) => {
            export_log(&partial, &json_path, LogFormat::Json)?;
            return Err(lockout::Error::PathDiverged { iteration, partial }.into());
        }
        Err(e) => return Err(e.into()),
    };
    // the importance and model files describe the validation minimum
    log.annotate(lcfg.sparse_tolerance)?;
    let csv_path = dir.join(format!("{id}.path.csv"));
    export_log(&log, &csv_path, LogFormat::Csv)?;
    export_log(&log, &json_path, LogFormat::Json)?;
    let best = log.annotations.validation_min.expect("validation supplied");
    let sparse = log.annotations.sparse_pick.expect("validation supplied");
    let params = log.params_at(best).expect("selections keep snapshots").to_vec();
    let sparse_params = log.params_at(sparse).expect("selections keep snapshots").to_vec();
    let mode = cfg.importance_mode(&spec)?;
    let importance_path = dir.join(format!("{id}.importance.csv"));
    write_importance(
        &importance_path,
        &ds.feature_names,
        &[
            ("validation_min", feature_importance(&spec, &params, mode)),
            ("sparse_pick", feature_importance(&spec, &sparse_params, mode)),
        ],
    )?;
    let model_path = dir.join(format!("{id}.model.json"));
    let test = test_score(&spec, &params, &parts)?;
    let early_test = match &forward {
        Some(f) => test_score(&spec, &f.best_params, &parts)?,
        None => None,
    };
    write_json(
        &model_path,
        &ModelFile {
            spec: spec.clone(),
            params: params.clone(),
            source: "validation_min".into(),
            path_index: Some(best),
        },
    )?;
    let init_mode = match lcfg.init_mode {
        InitMode::FromUnconstrained => "from_unconstrained",
        InitMode::FromEarlyStopping => "from_early_stopping",
    };
    Ok(json!({
        "run_id": id,
        "path_csv": csv_path,
        "path_json": json_path,
        "model": model_path,
        "importance": importance_path,
        "config": config,
        "fingerprint": log.fingerprint,
        "init": init_mode,
        "points": log.len(),
        "t0": log.points[0].t,
        "validation_min": point_summary(&log, best),
        "sparse_pick": point_summary(&log, sparse),
        "test_score": test,
        "active_features": active_inputs(&spec, &params),
        "early_stopping_validation_loss": forward.as_ref().and_then(|f| f.best_validation_loss),
        "early_stopping_test_score": early_test,
    }))
}

pub fn verify(suite: &str, instances: Option<usize>, seed: u64) -> Result<Value, CliError> {
    let report = match suite {
        "lp" => {
            // the count is spread over the penalty kinds
            let kinds = penalty_kinds().len();
            lp_suite(instances.unwrap_or(1000).div_ceil(kinds), seed)?
        }
        "step" => step_suite(instances.unwrap_or(10_000), seed)?,
        "grad" => grad_suite(instances.unwrap_or(100), seed)?,
        "lasso" => {
            let cfg = LassoSuiteConfig {
                problems: instances.unwrap_or(1),
                ..LassoSuiteConfig::default()
            };
            lasso_suite(&cfg, seed)?
        }
        other => return Err(CliError::usage(format!("unknown suite `{other}`"))),
    };
    println!("{}/{} pass", report.passed, report.total);
    for f in &report.failures {
        eprintln!("{f}");
    }
    if !report.all_passed() {
        return Err(CliError::verify(report.to_string()));
    }
    Ok(serde_json::to_value(&report).expect("serializable"))
}

pub fn report(
    cfg: &RunConfig,
    log_path: &Path,
    tolerance: f64,
    write: bool,
) -> Result<Value, CliError> {
    if !(tolerance >= 0.0) {
        return Err(CliError::config("tolerance: must be >= 0"));
    }
    let log = import_log(log_path)?;
    if log.is_empty() {
        return Err(CliError::data("path log has no points"));
    }
    let best = select_min_validation(&log)?;
    let sparse = select_sparsest_within(&log, tolerance)?;
    let summary = json!({
        "log": log_path,
        "fingerprint": log.fingerprint,
        "points": log.len(),
        "t0": log.points[0].t,
        "tolerance": tolerance,
        "validation_min": point_summary(&log, best),
        "sparse_pick": point_summary(&log, sparse),
    });
    if write {
        let (dir, id) = output(cfg, "report")?;
        write_json(&dir.join(format!("{id}.report.json")), &summary)?;
    }
    Ok(summary)
}
