//! Dense feed-forward models: evaluation, reverse-mode gradients, losses and
//! reporting metrics.
//!
//! Parameters live in one flat `f64` buffer. Layer `l` (1-based over the
//! non-input layers) stores its weight matrix row-major with shape
//! `(out, in)`, followed by its bias vector when the layer has one. [`Layout`]
//! maps between flat indices and `(layer, node, source)` keys.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Linear,
        Activation::Relu,
        Activation::Tanh,
        Activation::Sigmoid,
    ];

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative at pre-activation `z`, given `a = apply(z)`.
    ///
    /// The relu derivative at exactly zero is 0.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" | "identity" => Ok(Activation::Linear),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Per-row sum of squared errors over the output columns, averaged over rows.
    MeanSquaredError,
    /// Softmax cross-entropy on the output logits with class-index targets.
    CrossEntropy,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" | "mean_squared_error" => Ok(LossKind::MeanSquaredError),
            "cross_entropy" | "xent" => Ok(LossKind::CrossEntropy),
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }
}

/// Architecture of a dense feed-forward model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Input width first, output width last.
    pub layer_sizes: Vec<usize>,
    /// One activation per non-input layer.
    pub activations: Vec<Activation>,
    pub loss: LossKind,
    /// Whether each non-input layer carries a bias vector.
    pub bias_per_layer: Vec<bool>,
}

impl NetworkSpec {
    /// Builds a validated spec with a bias on every layer.
    pub fn new(
        layer_sizes: Vec<usize>,
        activations: Vec<Activation>,
        loss: LossKind,
    ) -> Result<Self> {
        let n = layer_sizes.len().saturating_sub(1);
        let spec = NetworkSpec {
            layer_sizes,
            activations,
            loss,
            bias_per_layer: vec![true; n],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_bias(mut self, bias_per_layer: Vec<bool>) -> Result<Self> {
        self.bias_per_layer = bias_per_layer;
        self.validate()?;
        Ok(self)
    }

    pub fn without_bias(self) -> Self {
        let n = self.num_layers();
        NetworkSpec {
            bias_per_layer: vec![false; n],
            ..self
        }
    }

    /// A single dense layer `p -> out` with the given activation.
    pub fn linear_model(inputs: usize, activation: Activation, bias: bool) -> Result<Self> {
        NetworkSpec::new(
            vec![inputs, 1],
            vec![activation],
            LossKind::MeanSquaredError,
        )?
        .with_bias(vec![bias])
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config(
                "a network needs at least an input and an output layer".into(),
            ));
        }
        if self.layer_sizes.iter().any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let n = self.num_layers();
        if self.activations.len() != n {
            return Err(Error::Config(format!(
                "expected {n} activations, got {}",
                self.activations.len()
            )));
        }
        if self.bias_per_layer.len() != n {
            return Err(Error::Config(format!(
                "expected {n} bias flags, got {}",
                self.bias_per_layer.len()
            )));
        }
        if self.loss == LossKind::CrossEntropy && self.output_width() < 2 {
            return Err(Error::Config(
                "cross_entropy requires an output width of at least 2".into(),
            ));
        }
        Ok(())
    }

    /// Number of non-input layers.
    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.layout().len()
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }
}

/// Where a parameter feeds from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    Node(usize),
    Bias,
}

/// `(layer, destination node, source)` address of one parameter. Layers are
/// 1-based over the non-input layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamKey {
    pub layer: usize,
    pub node: usize,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq)]
struct LayerBlock {
    inputs: usize,
    outputs: usize,
    weight_offset: usize,
    bias_offset: Option<usize>,
}

/// Bijection between flat parameter indices and [`ParamKey`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    blocks: Vec<LayerBlock>,
    len: usize,
}

impl Layout {
    fn new(spec: &NetworkSpec) -> Self {
        let mut blocks = Vec::with_capacity(spec.num_layers());
        let mut offset = 0;
        for l in 0..spec.num_layers() {
            let inputs = spec.layer_sizes[l];
            let outputs = spec.layer_sizes[l + 1];
            let weight_offset = offset;
            offset += inputs * outputs;
            let bias_offset = if spec.bias_per_layer[l] {
                let b = offset;
                offset += outputs;
                Some(b)
            } else {
                None
            };
            blocks.push(LayerBlock {
                inputs,
                outputs,
                weight_offset,
                bias_offset,
            });
        }
        Layout {
            blocks,
            len: offset,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn index(&self, key: ParamKey) -> Option<usize> {
        let block = self.blocks.get(key.layer.checked_sub(1)?)?;
        if key.node >= block.outputs {
            return None;
        }
        match key.source {
            Source::Node(i) if i < block.inputs => {
                Some(block.weight_offset + key.node * block.inputs + i)
            }
            Source::Node(_) => None,
            Source::Bias => block.bias_offset.map(|b| b + key.node),
        }
    }

    pub fn key(&self, index: usize) -> Option<ParamKey> {
        for (l, block) in self.blocks.iter().enumerate() {
            let w_end = block.weight_offset + block.inputs * block.outputs;
            if (block.weight_offset..w_end).contains(&index) {
                let local = index - block.weight_offset;
                return Some(ParamKey {
                    layer: l + 1,
                    node: local / block.inputs,
                    source: Source::Node(local % block.inputs),
                });
            }
            if let Some(b) = block.bias_offset {
                if (b..b + block.outputs).contains(&index) {
                    return Some(ParamKey {
                        layer: l + 1,
                        node: index - b,
                        source: Source::Bias,
                    });
                }
            }
        }
        None
    }

    /// Flat indices of every weight in the first layer (no biases).
    pub fn first_layer_weights(&self) -> Vec<usize> {
        let b = &self.blocks[0];
        (b.weight_offset..b.weight_offset + b.inputs * b.outputs).collect()
    }

    /// Flat indices of every weight in every layer (no biases).
    pub fn all_weights(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .flat_map(|b| b.weight_offset..b.weight_offset + b.inputs * b.outputs)
            .collect()
    }

    /// Weight matrix of `layer` (1-based) as an `(out, in)` view.
    pub fn weights<'a>(&self, params: &'a [f64], layer: usize) -> ArrayView2<'a, f64> {
        let b = &self.blocks[layer - 1];
        let slice = &params[b.weight_offset..b.weight_offset + b.inputs * b.outputs];
        ArrayView2::from_shape((b.outputs, b.inputs), slice).expect("layout is consistent")
    }

    fn bias<'a>(&self, params: &'a [f64], layer: usize) -> Option<&'a [f64]> {
        let b = &self.blocks[layer - 1];
        b.bias_offset.map(|o| &params[o..o + b.outputs])
    }
}

/// Flat parameter store for a [`NetworkSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub values: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        NetworkParams {
            values: vec![0.0; spec.num_params()],
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init_uniform(spec: &NetworkSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = spec.layout();
        let mut values = vec![0.0; layout.len()];
        for block in &layout.blocks {
            let bound = 1.0 / (block.inputs as f64).sqrt();
            let w_end = block.weight_offset + block.inputs * block.outputs;
            for v in &mut values[block.weight_offset..w_end] {
                *v = rng.random_range(-bound..=bound);
            }
            if let Some(b) = block.bias_offset {
                for v in &mut values[b..b + block.outputs] {
                    *v = rng.random_range(-bound..=bound);
                }
            }
        }
        NetworkParams { values }
    }

    pub fn from_values(spec: &NetworkSpec, values: Vec<f64>) -> Result<Self> {
        check_params(spec, &values)?;
        Ok(NetworkParams { values })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Targets for one batch of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    /// `(rows, output width)` real targets.
    Real(Array2<f64>),
    /// One class index per row.
    Classes(Vec<usize>),
}

impl Targets {
    /// Single-output real targets.
    pub fn column(values: &[f64]) -> Self {
        Targets::Real(Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap())
    }

    pub fn len(&self) -> usize {
        match self {
            Targets::Real(y) => y.nrows(),
            Targets::Classes(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select_rows(&self, rows: &[usize]) -> Targets {
        match self {
            Targets::Real(y) => Targets::Real(y.select(Axis(0), rows)),
            Targets::Classes(c) => Targets::Classes(rows.iter().map(|&r| c[r]).collect()),
        }
    }

    /// First real column, if these are real targets.
    pub fn first_column(&self) -> Option<Vec<f64>> {
        match self {
            Targets::Real(y) => Some(y.column(0).to_vec()),
            Targets::Classes(_) => None,
        }
    }
}

/// Feature rows plus their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Array2<f64>,
    pub y: Targets,
}

impl Batch {
    pub fn new(x: Array2<f64>, y: Targets) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} targets",
                x.nrows(),
                y.len()
            )));
        }
        Ok(Batch { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn select_rows(&self, rows: &[usize]) -> Batch {
        Batch {
            x: self.x.select(Axis(0), rows),
            y: self.y.select_rows(rows),
        }
    }
}

fn check_params(spec: &NetworkSpec, params: &[f64]) -> Result<()> {
    let n = spec.num_params();
    if params.len() != n {
        return Err(Error::Shape(format!(
            "expected {n} parameters, got {}",
            params.len()
        )));
    }
    Ok(())
}

fn check_inputs(spec: &NetworkSpec, params: &[f64], x: &ArrayView2<f64>) -> Result<()> {
    check_params(spec, params)?;
    if x.ncols() != spec.input_width() {
        return Err(Error::Shape(format!(
            "expected {} feature columns, got {}",
            spec.input_width(),
            x.ncols()
        )));
    }
    Ok(())
}

fn check_targets(spec: &NetworkSpec, rows: usize, y: &Targets) -> Result<()> {
    if y.len() != rows {
        return Err(Error::Shape(format!(
            "{rows} feature rows but {} targets",
            y.len()
        )));
    }
    match (spec.loss, y) {
        (LossKind::MeanSquaredError, Targets::Real(t)) => {
            if t.ncols() != spec.output_width() {
                return Err(Error::Shape(format!(
                    "expected {} target columns, got {}",
                    spec.output_width(),
                    t.ncols()
                )));
            }
        }
        (LossKind::CrossEntropy, Targets::Classes(c)) => {
            let k = spec.output_width();
            if let Some(&bad) = c.iter().find(|&&c| c >= k) {
                return Err(Error::Argument(format!(
                    "class index {bad} out of range for {k} outputs"
                )));
            }
        }
        (LossKind::MeanSquaredError, Targets::Classes(_)) => {
            return Err(Error::Argument(
                "mean_squared_error requires real targets".into(),
            ))
        }
        (LossKind::CrossEntropy, Targets::Real(_)) => {
            return Err(Error::Argument(
                "cross_entropy requires class-index targets".into(),
            ))
        }
    }
    Ok(())
}

fn affine(layout: &Layout, params: &[f64], layer: usize, a: &ArrayView2<f64>) -> Array2<f64> {
    let w = layout.weights(params, layer);
    let mut z = a.dot(&w.t());
    if let Some(b) = layout.bias(params, layer) {
        z += &ArrayView2::from_shape((1, b.len()), b).unwrap();
    }
    z
}

/// Evaluates the network on every row of `x`.
pub fn forward(spec: &NetworkSpec, params: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_inputs(spec, params, &x)?;
    let layout = spec.layout();
    let mut a = x.to_owned();
    for (l, act) in spec.activations.iter().enumerate() {
        let mut z = affine(&layout, params, l + 1, &a.view());
        z.mapv_inplace(|v| act.apply(v));
        a = z;
    }
    Ok(a)
}

fn log_sum_exp(row: ndarray::ArrayView1<f64>) -> f64 {
    let m = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// Mean loss of `outputs` against `y`.
pub fn loss_of(kind: LossKind, outputs: &Array2<f64>, y: &Targets) -> Result<f64> {
    let n = outputs.nrows();
    if n == 0 {
        return Err(Error::Argument("loss of an empty batch".into()));
    }
    let total = match (kind, y) {
        (LossKind::MeanSquaredError, Targets::Real(t)) => {
            outputs.iter().zip(t.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        }
        (LossKind::CrossEntropy, Targets::Classes(c)) => outputs
            .outer_iter()
            .zip(c)
            .map(|(row, &k)| log_sum_exp(row) - row[k])
            .sum::<f64>(),
        _ => return Err(Error::Argument("loss kind incompatible with targets".into())),
    };
    Ok(total / n as f64)
}

/// Mean loss of the network over a batch (forward pass only).
pub fn evaluate_loss(spec: &NetworkSpec, params: &[f64], batch: &Batch) -> Result<f64> {
    check_targets(spec, batch.x.nrows(), &batch.y)?;
    let out = forward(spec, params, batch.x.view())?;
    loss_of(spec.loss, &out, &batch.y)
}

/// Mean loss over the rows and its exact gradient with respect to every
/// parameter (the raw `dL/dw`, not negated).
pub fn backward(
    spec: &NetworkSpec,
    params: &[f64],
    x: ArrayView2<f64>,
    y: &Targets,
) -> Result<(f64, Vec<f64>)> {
    check_inputs(spec, params, &x)?;
    check_targets(spec, x.nrows(), y)?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Argument("backward on an empty batch".into()));
    }
    let layout = spec.layout();
    let layers = spec.num_layers();

    // activations[0] is the input; pre[l] feeds activations[l + 1].
    let mut activations: Vec<Array2<f64>> = Vec::with_capacity(layers + 1);
    let mut pre: Vec<Array2<f64>> = Vec::with_capacity(layers);
    activations.push(x.to_owned());
    for (l, act) in spec.activations.iter().enumerate() {
        let z = affine(&layout, params, l + 1, &activations[l].view());
        let a = z.mapv(|v| act.apply(v));
        if !a.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { layer: l + 1 });
        }
        pre.push(z);
        activations.push(a);
    }

    let out = &activations[layers];
    let inv_n = 1.0 / n as f64;
    let (loss, mut delta) = match (spec.loss, y) {
        (LossKind::MeanSquaredError, Targets::Real(t)) => {
            let diff = out - t;
            let loss = diff.iter().map(|d| d * d).sum::<f64>() * inv_n;
            (loss, diff * (2.0 * inv_n))
        }
        (LossKind::CrossEntropy, Targets::Classes(c)) => {
            let mut grad = Array2::zeros(out.raw_dim());
            let mut total = 0.0;
            for (r, (row, &k)) in out.outer_iter().zip(c).enumerate() {
                let lse = log_sum_exp(row);
                total += lse - row[k];
                for (j, &v) in row.iter().enumerate() {
                    grad[[r, j]] = (v - lse).exp() * inv_n;
                }
                grad[[r, k]] -= inv_n;
            }
            (total * inv_n, grad)
        }
        _ => unreachable!("targets checked above"),
    };
    if !loss.is_finite() {
        return Err(Error::NonFinite { layer: 0 });
    }

    let mut grad = vec![0.0; layout.len()];
    for l in (1..=layers).rev() {
        let act = spec.activations[l - 1];
        // delta holds dL/da_l; turn it into dL/dz_l.
        ndarray::Zip::from(&mut delta)
            .and(&pre[l - 1])
            .and(&activations[l])
            .for_each(|d, &z, &a| *d *= act.derivative(z, a));
        let block = &layout.blocks[l - 1];
        let dw = delta.t().dot(&activations[l - 1]);
        let w_end = block.weight_offset + block.inputs * block.outputs;
        for (g, v) in grad[block.weight_offset..w_end].iter_mut().zip(dw.iter()) {
            *g = *v;
        }
        if let Some(b) = block.bias_offset {
            let db: Array1<f64> = delta.sum_axis(Axis(0));
            grad[b..b + block.outputs].copy_from_slice(db.as_slice().unwrap());
        }
        if !grad[block.weight_offset..w_end].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { layer: l });
        }
        if l > 1 {
            delta = delta.dot(&layout.weights(params, l));
        }
    }
    Ok((loss, grad))
}

/// `sqrt(sum (y - yhat)^2 / sum (y - ybar)^2)`, i.e. `sqrt(1 - R^2)`.
pub fn relative_rmse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions but {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if targets.len() < 2 {
        return Err(Error::UndefinedMetric(
            "relative RMSE needs at least two targets".into(),
        ));
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let total: f64 = targets.iter().map(|y| (y - mean) * (y - mean)).sum();
    if total == 0.0 {
        return Err(Error::UndefinedMetric("targets are constant".into()));
    }
    let residual: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, y)| (y - p) * (y - p))
        .sum();
    Ok((residual / total).sqrt())
}

/// Misclassification rate of the row-wise argmax (lowest index wins ties).
pub fn error_rate(predictions: ArrayView2<f64>, classes: &[usize]) -> Result<f64> {
    if classes.is_empty() || predictions.nrows() == 0 {
        return Err(Error::Argument("error rate of an empty batch".into()));
    }
    if predictions.nrows() != classes.len() {
        return Err(Error::Shape(format!(
            "{} prediction rows but {} targets",
            predictions.nrows(),
            classes.len()
        )));
    }
    let k = predictions.ncols();
    if let Some(&bad) = classes.iter().find(|&&c| c >= k) {
        return Err(Error::Argument(format!(
            "class index {bad} out of range for {k} outputs"
        )));
    }
    let wrong = predictions
        .outer_iter()
        .zip(classes)
        .filter(|(row, &c)| argmax(row.iter().copied()) != c)
        .count();
    Ok(wrong as f64 / classes.len() as f64)
}

fn argmax(row: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in row.enumerate() {
        if i == 0 || v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Test-split score used throughout reporting: relative RMSE for real
/// targets, error rate for classes.
pub fn score(spec: &NetworkSpec, params: &[f64], batch: &Batch) -> Result<f64> {
    let out = forward(spec, params, batch.x.view())?;
    match &batch.y {
        Targets::Real(t) => relative_rmse(
            out.column(0).to_vec().as_slice(),
            t.column(0).to_vec().as_slice(),
        ),
        Targets::Classes(c) => error_rate(out.view(), c),
    }
}

/// Number of input features with at least one nonzero first-layer weight.
pub fn active_inputs(spec: &NetworkSpec, params: &[f64]) -> usize {
    let w = spec.layout().weights(params, 1);
    (0..w.ncols())
        .filter(|&i| w.slice(s![.., i]).iter().any(|&v| v != 0.0))
        .count()
}
