//! Datasets: synthetic generators, Gaussian noise at a target SNR, CSV
//! ingestion, random splits and standardization.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::net::{Activation, Batch, Targets};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Validation,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Validation => "validation",
            SplitTag::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "validation" | "val" => Ok(SplitTag::Validation),
            "test" => Ok(SplitTag::Test),
            other => Err(Error::Argument(format!("unknown split tag `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(Task::Regression),
            "classification" => Ok(Task::Classification),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

/// How a signal-to-noise ratio maps to the noise level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrConvention {
    /// `var(signal) / var(noise)`
    #[default]
    Variance,
    /// `sd(signal) / sd(noise)`
    Amplitude,
}

/// Where a dataset came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Generator name, or `csv:<path>`.
    pub source: String,
    pub seed: Option<u64>,
    pub snr: Option<f64>,
    pub snr_convention: Option<SnrConvention>,
    pub fractions: Option<[f64; 3]>,
    /// Generator-specific settings.
    pub details: BTreeMap<String, serde_json::Value>,
    /// Original class label for each class index, when labels were remapped.
    pub class_labels: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Targets,
    pub splits: Vec<SplitTag>,
    pub feature_names: Vec<String>,
    pub provenance: Provenance,
}

/// The three splits of a dataset as ready-to-use batches.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub train: Batch,
    pub validation: Batch,
    pub test: Batch,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn num_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn rows(&self, tag: SplitTag) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == tag)
            .map(|(i, _)| i)
            .collect()
    }

    /// Row counts for train, validation, test.
    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for t in &self.splits {
            c[*t as usize] += 1;
        }
        c
    }

    pub fn batch(&self, tag: SplitTag) -> Result<Batch> {
        let rows = self.rows(tag);
        if rows.is_empty() {
            return Err(Error::Argument(format!("split `{}` is empty", tag.as_str())));
        }
        Batch::new(self.x.select(Axis(0), &rows), self.y.select_rows(&rows))
    }

    pub fn partition(&self) -> Result<Partition> {
        Ok(Partition {
            train: self.batch(SplitTag::Train)?,
            validation: self.batch(SplitTag::Validation)?,
            test: self.batch(SplitTag::Test)?,
        })
    }

    pub fn task(&self) -> Task {
        match self.y {
            Targets::Real(_) => Task::Regression,
            Targets::Classes(_) => Task::Classification,
        }
    }
}

/// Generator settings shared by the synthetic tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseOptions {
    pub snr: f64,
    pub convention: SnrConvention,
    pub fractions: [f64; 3],
}

impl NoiseOptions {
    pub fn with_snr(snr: f64) -> Self {
        NoiseOptions {
            snr,
            convention: SnrConvention::Variance,
            fractions: [0.6, 0.2, 0.2],
        }
    }
}

/// Coefficients of the single-node task on features 1..=3.
pub const ONE_NODE_COEFFICIENTS: [f64; 3] = [0.5, -0.75, 1.0];

/// `g(0.5 x1 - 0.75 x2 + 1.0 x3)` for one row.
pub fn one_node_target(row: &[f64], activation: Activation) -> f64 {
    let z: f64 = ONE_NODE_COEFFICIENTS
        .iter()
        .zip(row)
        .map(|(a, x)| a * x)
        .sum();
    activation.apply(z)
}

/// `10 sin(pi x1 x2) + 20 (x3 - 0.5)^2 [+ 10 x4 + 5 x5]` for one row.
pub fn friedman_target(row: &[f64], include_linear_terms: bool) -> f64 {
    let mut y = 10.0 * (std::f64::consts::PI * row[0] * row[1]).sin()
        + 20.0 * (row[2] - 0.5) * (row[2] - 0.5);
    if include_linear_terms {
        y += 10.0 * row[3] + 5.0 * row[4];
    }
    y
}

fn uniform_matrix(n: usize, p: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, p), || rng.random::<f64>())
}

fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

fn population_variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

fn noise_sd(signal: &[f64], snr: f64, convention: SnrConvention) -> Result<f64> {
    if !(snr > 0.0) {
        return Err(Error::Argument(format!("snr must be > 0, got {snr}")));
    }
    if signal.len() < 2 || signal.iter().all(|&v| v == signal[0]) {
        return Err(Error::Argument("noise level undefined for a constant signal".into()));
    }
    let sd = population_variance(signal).sqrt();
    Ok(match convention {
        SnrConvention::Variance => sd / snr.sqrt(),
        SnrConvention::Amplitude => sd / snr,
    })
}

/// Adds zero-mean Gaussian noise with variance `var(signal) / snr`.
pub fn add_noise_snr(signal: &[f64], snr: f64, seed: u64) -> Result<Vec<f64>> {
    add_noise_snr_with(signal, snr, SnrConvention::Variance, seed)
}

pub fn add_noise_snr_with(
    signal: &[f64],
    snr: f64,
    convention: SnrConvention,
    seed: u64,
) -> Result<Vec<f64>> {
    let sd = noise_sd(signal, snr, convention)?;
    let normal = Normal::new(0.0, sd).map_err(|e| Error::Numeric(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(signal.iter().map(|v| v + normal.sample(&mut rng)).collect())
}

/// Tags `y` with splits and perturbs train and validation rows with
/// independent noise draws; test rows keep the clean signal.
fn synthesize(
    x: Array2<f64>,
    signal: Vec<f64>,
    opts: &NoiseOptions,
    seed: u64,
    source: &str,
    details: BTreeMap<String, serde_json::Value>,
) -> Result<Dataset> {
    let n = signal.len();
    let splits = split_tags(n, opts.fractions, seed.wrapping_add(1))?;
    let sd = noise_sd(&signal, opts.snr, opts.convention)?;
    let normal = Normal::new(0.0, sd).map_err(|e| Error::Numeric(e.to_string()))?;
    let mut y = signal;
    for (k, tag) in [SplitTag::Train, SplitTag::Validation].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2 + k as u64));
        for (v, _) in y.iter_mut().zip(&splits).filter(|(_, &t)| t == tag) {
            *v += normal.sample(&mut rng);
        }
    }
    let p = x.ncols();
    Ok(Dataset {
        x,
        y: Targets::column(&y),
        splits,
        feature_names: default_names(p),
        provenance: Provenance {
            source: source.into(),
            seed: Some(seed),
            snr: Some(opts.snr),
            snr_convention: Some(opts.convention),
            fractions: Some(opts.fractions),
            details,
            class_labels: None,
        },
    })
}

/// Single-node task: `x ~ U[0, 1)^p`, `y = g(0.5 x1 - 0.75 x2 + x3)`, noise at
/// SNR 1 on train and validation rows, 60/20/20 split.
pub fn gen_synthetic_one_node(
    n: usize,
    p: usize,
    activation: Activation,
    seed: u64,
) -> Result<Dataset> {
    gen_synthetic_one_node_with(n, p, activation, seed, &NoiseOptions::with_snr(1.0))
}

pub fn gen_synthetic_one_node_with(
    n: usize,
    p: usize,
    activation: Activation,
    seed: u64,
    opts: &NoiseOptions,
) -> Result<Dataset> {
    if p < 3 {
        return Err(Error::Argument(format!("one-node task needs p >= 3, got {p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform_matrix(n, p, &mut rng);
    let signal = x
        .rows()
        .into_iter()
        .map(|r| one_node_target(r.as_slice().expect("standard layout"), activation))
        .collect();
    let mut details = BTreeMap::new();
    details.insert("activation".into(), activation.name().into());
    synthesize(x, signal, opts, seed, "one_node", details)
}

/// Friedman task on `x ~ U[0, 1)^p`, noise at SNR 0.5, 60/20/20 split.
pub fn gen_friedman(n: usize, p: usize, include_linear_terms: bool, seed: u64) -> Result<Dataset> {
    gen_friedman_with(n, p, include_linear_terms, seed, &NoiseOptions::with_snr(0.5))
}

pub fn gen_friedman_with(
    n: usize,
    p: usize,
    include_linear_terms: bool,
    seed: u64,
    opts: &NoiseOptions,
) -> Result<Dataset> {
    if p < 5 {
        return Err(Error::Argument(format!("Friedman task needs p >= 5, got {p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform_matrix(n, p, &mut rng);
    let signal = x
        .rows()
        .into_iter()
        .map(|r| friedman_target(r.as_slice().expect("standard layout"), include_linear_terms))
        .collect();
    let mut details = BTreeMap::new();
    details.insert("include_linear_terms".into(), include_linear_terms.into());
    synthesize(x, signal, opts, seed, "friedman", details)
}

/// Split sizes by largest-remainder rounding; leftover rows go to the largest
/// fractional parts, earlier splits first on ties.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    if fractions.iter().any(|f| !(*f > 0.0)) {
        return Err(Error::Argument("split fractions must be positive".into()));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!("split fractions sum to {total}, not 1")));
    }
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for k in 0..3 {
        counts[k] = exact[k].floor() as usize;
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    if counts.contains(&0) {
        return Err(Error::Argument(format!(
            "{n} rows leave an empty split with fractions {fractions:?}"
        )));
    }
    Ok(counts)
}

fn split_tags(n: usize, fractions: [f64; 3], seed: u64) -> Result<Vec<SplitTag>> {
    let counts = split_counts(n, fractions)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut tags = vec![SplitTag::Train; n];
    for (pos, &row) in order.iter().enumerate() {
        tags[row] = if pos < counts[0] {
            SplitTag::Train
        } else if pos < counts[0] + counts[1] {
            SplitTag::Validation
        } else {
            SplitTag::Test
        };
    }
    Ok(tags)
}

/// Re-tags every row by a seeded random permutation.
pub fn split_dataset(ds: &Dataset, fractions: [f64; 3], seed: u64) -> Result<Dataset> {
    let mut out = ds.clone();
    out.splits = split_tags(ds.len(), fractions, seed)?;
    out.provenance.fractions = Some(fractions);
    out.provenance
        .details
        .insert("split_seed".into(), seed.into());
    Ok(out)
}

/// Per-column mean and standard deviation of the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    pub fn fit(ds: &Dataset) -> Result<Self> {
        let rows = ds.rows(SplitTag::Train);
        if rows.is_empty() {
            return Err(Error::Argument("no training rows to standardize with".into()));
        }
        let train = ds.x.select(Axis(0), &rows);
        let mean = train.mean_axis(Axis(0)).expect("rows > 0");
        let sd = train.std_axis(Axis(0), 0.0);
        Ok(Standardizer {
            mean: mean.to_vec(),
            // constant columns are centred only
            sd: sd.iter().map(|&s| if s > 0.0 { s } else { 1.0 }).collect(),
        })
    }

    pub fn apply(&self, ds: &Dataset) -> Dataset {
        let mut out = ds.clone();
        for mut row in out.x.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.sd[j];
            }
        }
        out
    }
}

/// Reads a comma-separated file with a header row. A column named `split`
/// (values `train | validation | test`) assigns rows to splits; without it
/// every row is tagged `train`. Empty and `NA` cells are missing values.
pub fn load_csv(path: &Path, target_column: &str, task: Task) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let target_idx = header
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| {
            Error::Config(format!(
                "target column `{target_column}` not in header {header:?}"
            ))
        })?;
    let split_idx = header.iter().position(|h| h == "split");
    let feature_idx: Vec<usize> = (0..header.len())
        .filter(|&k| k != target_idx && Some(k) != split_idx)
        .collect();
    if feature_idx.is_empty() {
        return Err(Error::Config("no feature columns".into()));
    }

    let mut values = Vec::new();
    let mut raw_targets = Vec::new();
    let mut splits = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(row as u64 + 2, |p| p.line());
        let cell = |k: usize| -> Result<&str> {
            match rec.get(k) {
                Some(v) if !v.is_empty() && v != "NA" => Ok(v),
                _ => Err(Error::MissingValue {
                    row: row + 1,
                    line,
                    column: header[k].clone(),
                }),
            }
        };
        for &k in &feature_idx {
            let text = cell(k)?;
            let v: f64 = text.parse().map_err(|_| Error::Format {
                line,
                column: header[k].clone(),
                message: format!("`{text}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Format {
                    line,
                    column: header[k].clone(),
                    message: "non-finite value".into(),
                });
            }
            values.push(v);
        }
        raw_targets.push((cell(target_idx)?.to_string(), line));
        splits.push(match split_idx {
            Some(k) => cell(k)?.parse().map_err(|e: Error| Error::Format {
                line,
                column: "split".into(),
                message: e.to_string(),
            })?,
            None => SplitTag::Train,
        });
    }
    let n = splits.len();
    if n == 0 {
        return Err(Error::Format {
            line: 1,
            column: String::new(),
            message: "no data rows".into(),
        });
    }
    let x = Array2::from_shape_vec((n, feature_idx.len()), values)
        .map_err(|e| Error::Shape(e.to_string()))?;

    let (y, class_labels) = match task {
        Task::Regression => {
            let mut ys = Vec::with_capacity(n);
            for (text, line) in &raw_targets {
                ys.push(text.parse::<f64>().map_err(|_| Error::Format {
                    line: *line,
                    column: target_column.into(),
                    message: format!("`{text}` is not a number"),
                })?);
            }
            (Targets::column(&ys), None)
        }
        Task::Classification => {
            let (classes, labels) = encode_classes(raw_targets.iter().map(|(t, _)| t.as_str()));
            (Targets::Classes(classes), labels)
        }
    };

    let mut details = BTreeMap::new();
    details.insert("has_split_column".into(), split_idx.is_some().into());
    Ok(Dataset {
        x,
        y,
        splits,
        feature_names: feature_idx.iter().map(|&k| header[k].clone()).collect(),
        provenance: Provenance {
            source: format!("csv:{}", path.display()),
            details,
            class_labels,
            ..Provenance::default()
        },
    })
}

/// Class indices for raw labels. Labels that already are the integers
/// `0..K` are used as is; anything else is mapped in sorted order (numeric
/// when every label is a number) and the mapping is returned.
fn encode_classes<'a>(labels: impl Iterator<Item = &'a str>) -> (Vec<usize>, Option<Vec<String>>) {
    let labels: Vec<&str> = labels.collect();
    let mut distinct: Vec<&str> = labels.clone();
    let numeric: Option<Vec<f64>> = distinct.iter().map(|l| l.parse().ok()).collect();
    match numeric {
        Some(_) => distinct.sort_by(|a, b| {
            a.parse::<f64>()
                .unwrap()
                .total_cmp(&b.parse::<f64>().unwrap())
        }),
        None => distinct.sort(),
    }
    distinct.dedup();
    let contiguous = distinct
        .iter()
        .enumerate()
        .all(|(k, l)| l.parse::<usize>().ok() == Some(k));
    let index: BTreeMap<&str, usize> = distinct.iter().enumerate().map(|(k, l)| (*l, k)).collect();
    let classes = labels.iter().map(|l| index[l]).collect();
    let mapping = (!contiguous).then(|| distinct.iter().map(|l| l.to_string()).collect());
    (classes, mapping)
}

/// Writes features, target (`y`) and `split` columns.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = ds.feature_names.clone();
    header.push("y".into());
    header.push("split".into());
    w.write_record(&header)?;
    for (i, row) in ds.x.rows().into_iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(match &ds.y {
            Targets::Real(y) => y[[i, 0]].to_string(),
            Targets::Classes(c) => c[i].to_string(),
        });
        rec.push(ds.splits[i].as_str().into());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub rows: usize,
    pub features: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub provenance: Provenance,
}

pub fn metadata(ds: &Dataset) -> Metadata {
    let [train, validation, test] = ds.counts();
    Metadata {
        rows: ds.len(),
        features: ds.num_features(),
        train,
        validation,
        test,
        provenance: ds.provenance.clone(),
    }
}

pub fn write_metadata(ds: &Dataset, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&metadata(ds))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn one_node_examples() {
        let mut x = vec![0.0; 100];
        x[..3].copy_from_slice(&[1.0, 1.0, 1.0]);
        assert_eq!(one_node_target(&x, Activation::Linear), 0.75);
        assert_eq!(one_node_target(&[0.0; 100], Activation::Tanh), 0.0);
    }

    #[test]
    fn friedman_examples() {
        let x = [0.5; 10];
        assert!((friedman_target(&x, true) - 14.571_067_811_865_476).abs() < 1e-12);
        assert!((friedman_target(&x, false) - 7.071_067_811_865_476).abs() < 1e-12);
        let mut x = [0.3, 0.9, 0.5, 0.1, 0.2];
        let base = 10.0 * (std::f64::consts::PI * 0.27).sin();
        assert!((friedman_target(&x, false) - base).abs() < 1e-12);
        x[2] = 0.7;
        assert!(friedman_target(&x, false) > base);
    }

    #[test]
    fn generator_splits_and_clean_test_rows() {
        let ds = gen_synthetic_one_node(500, 100, Activation::Sigmoid, 3).unwrap();
        assert_eq!(ds.counts(), [300, 100, 100]);
        assert_eq!(ds.x.dim(), (500, 100));
        assert!(ds.x.iter().all(|&v| (0.0..1.0).contains(&v)));
        let y = ds.y.first_column().unwrap();
        for (i, tag) in ds.splits.iter().enumerate() {
            let clean = one_node_target(ds.x.row(i).as_slice().unwrap(), Activation::Sigmoid);
            if *tag == SplitTag::Test {
                assert_eq!(y[i], clean);
            } else {
                assert_ne!(y[i], clean);
            }
        }
        let again = gen_synthetic_one_node(500, 100, Activation::Sigmoid, 3).unwrap();
        assert_eq!(again, ds);
        let other = gen_synthetic_one_node(500, 100, Activation::Sigmoid, 4).unwrap();
        assert_ne!(other.x, ds.x);
    }

    #[test]
    fn friedman_generator_uses_only_its_features() {
        let ds = gen_friedman(200, 20, false, 9).unwrap();
        let y = ds.y.first_column().unwrap();
        for i in ds.rows(SplitTag::Test) {
            let mut row = ds.x.row(i).to_vec();
            assert_eq!(friedman_target(&row, false), y[i]);
            row.swap(7, 12);
            row[19] = 0.123;
            assert_eq!(friedman_target(&row, false), y[i]);
        }
        assert!(gen_friedman(10, 4, true, 1).is_err());
    }

    #[test]
    fn noise_levels() {
        let signal: Vec<f64> = (0..100_000).map(|i| ((i * 37) % 1000) as f64 / 1000.0).collect();
        let noisy = add_noise_snr(&signal, 1.0, 5).unwrap();
        let noise: Vec<f64> = noisy.iter().zip(&signal).map(|(a, b)| a - b).collect();
        let ratio = population_variance(&noise) / population_variance(&signal);
        assert!((ratio - 1.0).abs() < 0.1, "{ratio}");

        let quiet = add_noise_snr(&signal[..1000], 1e12, 5).unwrap();
        for (a, b) in quiet.iter().zip(&signal) {
            assert!((a - b).abs() <= 1e-4 * b.abs().max(1e-2));
        }
        assert_eq!(add_noise_snr(&signal[..50], 1.0, 8).unwrap(), add_noise_snr(&signal[..50], 1.0, 8).unwrap());
        assert!(matches!(add_noise_snr(&[2.0; 10], 1.0, 1), Err(Error::Argument(_))));

        let amp = add_noise_snr_with(&signal, 2.0, SnrConvention::Amplitude, 5).unwrap();
        let noise: Vec<f64> = amp.iter().zip(&signal).map(|(a, b)| a - b).collect();
        let ratio = population_variance(&noise) / population_variance(&signal);
        assert!((ratio - 0.25).abs() < 0.025, "{ratio}");
    }

    #[test]
    fn split_rounding() {
        assert_eq!(split_counts(10, [0.6, 0.2, 0.2]).unwrap(), [6, 2, 2]);
        assert_eq!(split_counts(5, [0.6, 0.2, 0.2]).unwrap(), [3, 1, 1]);
        assert_eq!(split_counts(7, [0.6, 0.2, 0.2]).unwrap(), [4, 2, 1]);
        assert!(split_counts(2, [0.6, 0.2, 0.2]).is_err());
        assert!(split_counts(10, [0.6, 0.2, 0.3]).is_err());
        assert!(split_counts(10, [0.8, 0.2, 0.0]).is_err());
    }

    #[test]
    fn split_is_seeded() {
        let ds = gen_friedman(50, 5, true, 2).unwrap();
        let a = split_dataset(&ds, [0.6, 0.2, 0.2], 11).unwrap();
        let b = split_dataset(&ds, [0.6, 0.2, 0.2], 11).unwrap();
        assert_eq!(a.splits, b.splits);
        assert_eq!(a.counts(), [30, 10, 10]);
        let c = split_dataset(&ds, [0.6, 0.2, 0.2], 12).unwrap();
        assert_ne!(a.splits, c.splits);
    }

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_loading() {
        let f = write("a,b,y\n1,2,3\n4,5,6\n7,8,9\n");
        let ds = load_csv(f.path(), "y", Task::Regression).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.feature_names, vec!["a", "b"]);
        assert_eq!(ds.y.first_column().unwrap(), vec![3.0, 6.0, 9.0]);

        let f = write("a,b,y\n1,2,3\n4,,6\n");
        match load_csv(f.path(), "y", Task::Regression) {
            Err(Error::MissingValue { row, line, column }) => {
                assert_eq!((row, line, column.as_str()), (2, 3, "b"));
            }
            other => panic!("{other:?}"),
        }

        let f = write("a,b,y\n1,2,3\n4,abc,6\n");
        match load_csv(f.path(), "y", Task::Regression) {
            Err(Error::Format { line, column, .. }) => assert_eq!((line, column.as_str()), (3, "b")),
            other => panic!("{other:?}"),
        }

        let f = write("a,y\n1,2\n");
        assert!(matches!(load_csv(f.path(), "target", Task::Regression), Err(Error::Config(_))));
    }

    #[test]
    fn csv_split_column_and_classes() {
        let f = write("a,label,split\n1,cat,train\n2,dog,validation\n3,cat,test\n4,emu,train\n");
        let ds = load_csv(f.path(), "label", Task::Classification).unwrap();
        assert_eq!(ds.counts(), [2, 1, 1]);
        assert_eq!(ds.y, Targets::Classes(vec![0, 1, 0, 2]));
        assert_eq!(
            ds.provenance.class_labels,
            Some(vec!["cat".to_string(), "dog".to_string(), "emu".to_string()])
        );

        let f = write("a,label\n1,1\n2,0\n3,1\n");
        let ds = load_csv(f.path(), "label", Task::Classification).unwrap();
        assert_eq!(ds.y, Targets::Classes(vec![1, 0, 1]));
        assert_eq!(ds.provenance.class_labels, None);
    }

    #[test]
    fn written_csv_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_friedman(20, 6, true, 4).unwrap();
        let path = dir.path().join("d.csv");
        write_csv(&ds, &path).unwrap();
        let back = load_csv(&path, "y", Task::Regression).unwrap();
        assert_eq!(back.x, ds.x);
        assert_eq!(back.y, ds.y);
        assert_eq!(back.splits, ds.splits);
        write_metadata(&ds, &dir.path().join("d.json")).unwrap();
    }

    #[test]
    fn standardization_uses_train_rows() {
        let ds = gen_friedman(100, 5, true, 1).unwrap();
        let st = Standardizer::fit(&ds).unwrap();
        let z = st.apply(&ds);
        let train = z.batch(SplitTag::Train).unwrap();
        for col in train.x.columns() {
            assert!(col.mean().unwrap().abs() < 1e-12);
            assert!((col.std(0.0) - 1.0).abs() < 1e-12);
        }
    }
}
