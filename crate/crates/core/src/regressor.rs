//! Small fully-connected regressor mapping a surface-normal ⊕ beam feature
//! vector to an incidence angle, trained with mean-absolute-error loss and
//! plain mini-batch gradient descent.
//!
//! Everything is deterministic: parameter init, the validation split, and
//! per-epoch shuffles all derive from the config seed, so identical data
//! and config reproduce the model bit for bit. Hidden layers use tanh; the
//! output is squashed to [0, π/2] by a scaled sigmoid, which keeps
//! predictions inside the angle range for any finite parameters.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::UnitVector3;
use crate::util::{atomic_write, read_to_string};

/// Default layer widths.
pub const DEFAULT_DIMS: [usize; 4] = [6, 64, 64, 1];

/// Input to the regressor: surface normal (3) ⊕ beam direction (3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; 6]);

impl FeatureVector {
    pub fn from_vectors(normal: &UnitVector3, beam: &UnitVector3) -> FeatureVector {
        let [nx, ny, nz] = normal.components();
        let [bx, by, bz] = beam.components();
        FeatureVector([nx, ny, nz, bx, by, bz])
    }

    /// Validate the unit-norm invariant of each 3-block (1e-6 tolerance).
    pub fn validate(&self) -> Result<()> {
        for block in [&self.0[..3], &self.0[3..]] {
            let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
                return Err(Error::NonUnitVector { norm });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed in terms of the activation output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    in_dim: usize,
    out_dim: usize,
    /// Row-major: weights[o * in_dim + i].
    weights: Vec<f64>,
    biases: Vec<f64>,
}

/// Fully-connected regressor with tanh hidden layers and a scaled-sigmoid
/// output in [0, π/2]. Immutable once trained; concurrent forward passes
/// are safe.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    dims: Vec<usize>,
    layers: Vec<Layer>,
    activation: Activation,
    seed: u64,
}

impl MlpModel {
    /// Deterministic uniform (Xavier-style) initialization from `seed`.
    pub fn init(dims: &[usize], seed: u64) -> Result<MlpModel> {
        if dims.len() < 2 || dims[0] != 6 || *dims.last().unwrap() != 1 {
            return Err(Error::Config(format!(
                "regressor dims must start at 6 and end at 1, got {dims:?}"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Config("regressor layer width of zero".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            layers.push(Layer {
                in_dim: fan_in,
                out_dim: fan_out,
                weights,
                biases: vec![0.0; fan_out],
            });
        }
        Ok(MlpModel {
            dims: dims.to_vec(),
            layers,
            activation: Activation::Tanh,
            seed,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Flat parameter accessor (layer-major, weights row-major then biases).
    pub fn param(&self, mut idx: usize) -> f64 {
        for l in &self.layers {
            if idx < l.weights.len() {
                return l.weights[idx];
            }
            idx -= l.weights.len();
            if idx < l.biases.len() {
                return l.biases[idx];
            }
            idx -= l.biases.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut idx: usize, value: f64) {
        for l in &mut self.layers {
            if idx < l.weights.len() {
                l.weights[idx] = value;
                return;
            }
            idx -= l.weights.len();
            if idx < l.biases.len() {
                l.biases[idx] = value;
                return;
            }
            idx -= l.biases.len();
        }
        panic!("parameter index out of range");
    }

    fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    /// Predicted incidence angle in [0, π/2].
    pub fn forward(&self, features: &FeatureVector) -> Result<f64> {
        let mut scratch = Scratch::new(self);
        self.forward_scratch(features, &mut scratch)
    }

    fn forward_scratch(&self, features: &FeatureVector, scratch: &mut Scratch) -> Result<f64> {
        let pred = self.forward_raw(features, scratch);
        if pred.is_nan() {
            return Err(Error::ModelCorrupt(
                "forward pass produced NaN (non-finite parameters?)".into(),
            ));
        }
        Ok(pred)
    }

    fn forward_raw(&self, features: &FeatureVector, scratch: &mut Scratch) -> f64 {
        scratch.activations[0][..6].copy_from_slice(&features.0);
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let (inputs, outputs) = scratch.in_out(li);
            for (o, out) in outputs.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                let mut z = layer.biases[o];
                for (w, a) in row.iter().zip(inputs.iter()) {
                    z += w * a;
                }
                *out = if li == last {
                    z
                } else {
                    self.activation.apply(z)
                };
            }
        }
        let z_out = scratch.activations[self.layers.len()][0];
        sigmoid(z_out) * FRAC_PI_2
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("mlp v1\n");
        out.push_str("dims");
        for d in &self.dims {
            out.push_str(&format!(" {d}"));
        }
        out.push('\n');
        out.push_str(&format!("activation {}\n", self.activation.name()));
        out.push_str(&format!("seed {}\n", self.seed));
        out.push_str(&format!("params {}\n", self.param_count()));
        for l in &self.layers {
            for v in l.weights.iter().chain(&l.biases) {
                out.push_str(&format!("{v}\n"));
            }
        }
        atomic_write(path, out.as_bytes())
    }

    pub fn load(path: &Path) -> Result<MlpModel> {
        let text = read_to_string(path)?;
        let err = |detail: String| Error::ModelFormat {
            path: path.to_path_buf(),
            detail,
        };
        let mut lines = text.lines();
        if lines.next() != Some("mlp v1") {
            return Err(err("missing `mlp v1` magic".into()));
        }
        let dims_line = lines.next().ok_or_else(|| err("missing dims".into()))?;
        let dims: Vec<usize> = dims_line
            .strip_prefix("dims ")
            .ok_or_else(|| err("missing dims".into()))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| err(format!("bad dim `{t}`"))))
            .collect::<Result<_>>()?;
        let act_line = lines.next().unwrap_or_default();
        let activation = match act_line.strip_prefix("activation ") {
            Some("tanh") => Activation::Tanh,
            Some(other) => return Err(err(format!("unsupported activation `{other}`"))),
            None => return Err(err("missing activation".into())),
        };
        let seed: u64 = lines
            .next()
            .and_then(|l| l.strip_prefix("seed "))
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| err("missing or bad seed".into()))?;
        let declared: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("params "))
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| err("missing or bad params count".into()))?;

        let mut model = MlpModel::init(&dims, seed).map_err(|e| err(e.to_string()))?;
        model.activation = activation;
        if declared != model.param_count() {
            return Err(err(format!(
                "header declares {declared} params but dims {dims:?} need {}",
                model.param_count()
            )));
        }
        let mut count = 0usize;
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v: f64 = line
                .parse()
                .map_err(|_| err(format!("bad parameter value `{line}`")))?;
            if count >= declared {
                return Err(err("more parameters than declared".into()));
            }
            model.set_param(count, v);
            count += 1;
        }
        if count != declared {
            return Err(err(format!(
                "parameter block holds {count} values, header declares {declared}"
            )));
        }
        if !model.params_finite() {
            return Err(Error::ModelCorrupt("non-finite parameter in file".into()));
        }
        Ok(model)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Reusable per-layer activation buffers.
struct Scratch {
    activations: Vec<Vec<f64>>,
}

impl Scratch {
    fn new(model: &MlpModel) -> Scratch {
        Scratch {
            activations: model.dims.iter().map(|&d| vec![0.0; d]).collect(),
        }
    }

    fn in_out(&mut self, layer: usize) -> (&[f64], &mut [f64]) {
        let (lo, hi) = self.activations.split_at_mut(layer + 1);
        (&lo[layer], &mut hi[0])
    }
}

/// Gradients of the batch MAE with respect to every parameter, in the same
/// flat ordering as [`MlpModel::param`].
#[derive(Debug, Clone)]
pub struct Gradients {
    d_weights: Vec<Vec<f64>>,
    d_biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros(model: &MlpModel) -> Gradients {
        Gradients {
            d_weights: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            d_biases: model.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    pub fn param(&self, mut idx: usize) -> f64 {
        for (w, b) in self.d_weights.iter().zip(&self.d_biases) {
            if idx < w.len() {
                return w[idx];
            }
            idx -= w.len();
            if idx < b.len() {
                return b[idx];
            }
            idx -= b.len();
        }
        panic!("gradient index out of range");
    }

    fn scale(&mut self, factor: f64) {
        for v in self.d_weights.iter_mut().flatten() {
            *v *= factor;
        }
        for v in self.d_biases.iter_mut().flatten() {
            *v *= factor;
        }
    }
}

/// Mean absolute error between aligned prediction and target lists.
pub fn mae_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::Contract(format!(
            "prediction count {} != target count {}",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Contract("mae over empty lists".into()));
    }
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).abs())
        .sum();
    Ok(sum / predictions.len() as f64)
}

/// Reusable buffers for repeated backward passes.
struct Workspace {
    scratch: Scratch,
    deltas: Vec<Vec<f64>>,
    grads: Gradients,
}

impl Workspace {
    fn new(model: &MlpModel) -> Workspace {
        Workspace {
            scratch: Scratch::new(model),
            deltas: model.dims.iter().map(|&d| vec![0.0; d]).collect(),
            grads: Gradients::zeros(model),
        }
    }
}

/// Exact reverse-mode gradients of the batch MAE. The subgradient of |x|
/// at 0 is taken as 0, which keeps exact fits stationary. Returns the batch
/// loss alongside.
pub fn backward(model: &MlpModel, batch: &[(FeatureVector, f64)]) -> Result<(f64, Gradients)> {
    let mut ws = Workspace::new(model);
    let loss = backward_in_place(model, batch, &mut ws)?;
    Ok((loss, ws.grads))
}

fn backward_in_place(
    model: &MlpModel,
    batch: &[(FeatureVector, f64)],
    ws: &mut Workspace,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Contract("backward over empty batch".into()));
    }
    let Workspace {
        scratch,
        deltas,
        grads,
    } = ws;
    for g in grads.d_weights.iter_mut().flatten() {
        *g = 0.0;
    }
    for g in grads.d_biases.iter_mut().flatten() {
        *g = 0.0;
    }
    let mut loss = 0.0;

    for (features, target) in batch {
        let pred = model.forward_scratch(features, scratch)?;
        loss += (pred - target).abs();

        // d|pred - t|/dpred, then through the scaled sigmoid.
        let sign = if pred > *target {
            1.0
        } else if pred < *target {
            -1.0
        } else {
            0.0
        };
        let u = pred / FRAC_PI_2; // sigmoid output
        let d_z_out = sign * u * (1.0 - u) * FRAC_PI_2;
        let last = model.layers.len();
        deltas[last][0] = d_z_out;

        for li in (0..model.layers.len()).rev() {
            let layer = &model.layers[li];
            let (below, above) = deltas.split_at_mut(li + 1);
            let delta_out = &above[0];
            let delta_in = &mut below[li];
            let inputs = &scratch.activations[li];

            for (o, &d) in delta_out.iter().enumerate().take(layer.out_dim) {
                if d != 0.0 {
                    let g_row = &mut grads.d_weights[li][o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (g, a) in g_row.iter_mut().zip(inputs.iter()) {
                        *g += d * a;
                    }
                    grads.d_biases[li][o] += d;
                }
            }
            if li > 0 {
                for (i, di) in delta_in.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (o, &d) in delta_out.iter().enumerate().take(layer.out_dim) {
                        acc += d * layer.weights[o * layer.in_dim + i];
                    }
                    *di = acc * model.activation.derivative_from_output(inputs[i]);
                }
            }
        }
    }

    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    Ok(loss / n)
}

/// Training hyperparameters. The seed fixes all stochasticity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 200,
            seed: 42,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lr_ok = self.learning_rate.is_finite() && self.learning_rate > 0.0;
        let split_ok = self.validation_fraction > 0.0 && self.validation_fraction < 1.0;
        if !lr_ok || self.batch_size == 0 || self.epochs == 0 || !split_ok {
            return Err(Error::Config(format!("invalid train config {self:?}")));
        }
        Ok(())
    }
}

/// Per-epoch training losses plus the final hold-out MAE.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub validation_mae: f64,
    pub train_count: usize,
    pub validation_count: usize,
}

/// Train a fresh model on (features, angle) pairs. Deterministic: identical
/// data and config produce a bit-identical model.
pub fn train(
    dataset: &[(FeatureVector, f64)],
    dims: &[usize],
    config: &TrainConfig,
) -> Result<(MlpModel, TrainReport)> {
    config.validate()?;
    if dataset.len() < 100 {
        return Err(Error::InsufficientData(format!(
            "training needs at least 100 pairs, got {}",
            dataset.len()
        )));
    }
    for (f, target) in dataset {
        f.validate()?;
        if !(0.0..=FRAC_PI_2 + 1e-12).contains(target) {
            return Err(Error::Contract(format!(
                "target angle {target} outside [0, pi/2]"
            )));
        }
    }

    let mut model = MlpModel::init(dims, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1); // keep shuffles independent of init draws

    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    indices.shuffle(&mut rng);
    let n_val = ((dataset.len() as f64 * config.validation_fraction).round() as usize)
        .clamp(1, dataset.len() - 1);
    let (val_idx, train_idx) = indices.split_at(n_val);
    let mut train_order = train_idx.to_vec();

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut batch_buf: Vec<(FeatureVector, f64)> = Vec::with_capacity(config.batch_size);
    let mut ws = Workspace::new(&model);
    for epoch in 0..config.epochs {
        train_order.shuffle(&mut rng);
        let mut weighted_loss = 0.0;
        for chunk in train_order.chunks(config.batch_size) {
            batch_buf.clear();
            batch_buf.extend(chunk.iter().map(|&i| dataset[i]));
            let batch_loss = backward_in_place(&model, &batch_buf, &mut ws)?;
            weighted_loss += batch_loss * chunk.len() as f64;
            apply_gradients(&mut model, &ws.grads, config.learning_rate);
        }
        let epoch_loss = weighted_loss / train_order.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        epoch_losses.push(epoch_loss);
    }

    let mut scratch = Scratch::new(&model);
    let mut abs_sum = 0.0;
    for &i in val_idx {
        let (f, target) = &dataset[i];
        abs_sum += (model.forward_scratch(f, &mut scratch)? - target).abs();
    }
    let report = TrainReport {
        epoch_losses,
        validation_mae: abs_sum / val_idx.len() as f64,
        train_count: train_order.len(),
        validation_count: val_idx.len(),
    };
    Ok((model, report))
}

fn apply_gradients(model: &mut MlpModel, grads: &Gradients, lr: f64) {
    for (li, layer) in model.layers.iter_mut().enumerate() {
        for (w, g) in layer.weights.iter_mut().zip(&grads.d_weights[li]) {
            *w -= lr * g;
        }
        for (b, g) in layer.biases.iter_mut().zip(&grads.d_biases[li]) {
            *b -= lr * g;
        }
    }
}

/// Evaluate a model over a dataset, returning the MAE.
pub fn evaluate_mae(model: &MlpModel, dataset: &[(FeatureVector, f64)]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Contract("mae over empty dataset".into()));
    }
    let mut scratch = Scratch::new(model);
    let mut sum = 0.0;
    for (f, t) in dataset {
        sum += (model.forward_scratch(f, &mut scratch)? - t).abs();
    }
    Ok(sum / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn unit_features(seed: u64, n: usize) -> Vec<FeatureVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let rand_unit = |rng: &mut ChaCha8Rng| loop {
                    let v = nalgebra::Vector3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    );
                    if v.norm() > 1e-3 {
                        return UnitVector3::normalized(v).unwrap();
                    }
                };
                let n = rand_unit(&mut rng);
                let b = rand_unit(&mut rng);
                FeatureVector::from_vectors(&n, &b)
            })
            .collect()
    }

    /// Dataset where the target is the exact analytic angle of the inputs.
    fn analytic_dataset(seed: u64, n: usize) -> Vec<(FeatureVector, f64)> {
        unit_features(seed, n)
            .into_iter()
            .map(|f| {
                let dot = f.0[0] * f.0[3] + f.0[1] * f.0[4] + f.0[2] * f.0[5];
                (f, dot.abs().min(1.0).acos())
            })
            .collect()
    }

    #[test]
    fn zero_model_outputs_quarter_pi() {
        let mut model = MlpModel::init(&[6, 8, 1], 1).unwrap();
        for i in 0..model.param_count() {
            model.set_param(i, 0.0);
        }
        for f in unit_features(2, 10) {
            let pred = model.forward(&f).unwrap();
            assert!((pred - FRAC_PI_4).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_stays_in_range() {
        let model = MlpModel::init(&DEFAULT_DIMS, 3).unwrap();
        for f in unit_features(4, 200) {
            let pred = model.forward(&f).unwrap();
            assert!((0.0..=FRAC_PI_2).contains(&pred));
        }
    }

    #[test]
    fn forward_rejects_nan_parameters() {
        let mut model = MlpModel::init(&[6, 4, 1], 5).unwrap();
        model.set_param(3, f64::NAN);
        let f = unit_features(6, 1)[0];
        assert!(matches!(
            model.forward(&f),
            Err(Error::ModelCorrupt(_))
        ));
    }

    #[test]
    fn mae_reference_values() {
        assert_eq!(mae_loss(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let v = mae_loss(&[0.0, FRAC_PI_2], &[FRAC_PI_2, 0.0]).unwrap();
        assert!((v - FRAC_PI_2).abs() < 1e-15);
        assert!(mae_loss(&[0.1], &[0.1, 0.2]).is_err());
        assert!(mae_loss(&[], &[]).is_err());
    }

    #[test]
    fn mae_matches_naive_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let preds: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..1.5)).collect();
        let targets: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..1.5)).collect();
        let got = mae_loss(&preds, &targets).unwrap();
        let mut naive = 0.0;
        for i in 0..preds.len() {
            naive += (preds[i] - targets[i]).abs();
        }
        naive /= preds.len() as f64;
        assert!((got - naive).abs() < 1e-12);
    }

    /// Central finite differences vs analytic gradients.
    fn finite_difference_check(model: &MlpModel, batch: &[(FeatureVector, f64)], coords: &[usize]) {
        let (_, grads) = backward(model, batch).unwrap();
        let h = 1e-6;
        for &c in coords {
            let orig = model.param(c);
            let mut plus = model.clone();
            plus.set_param(c, orig + h);
            let mut minus = model.clone();
            minus.set_param(c, orig - h);
            let loss_at = |m: &MlpModel| {
                let preds: Vec<f64> = batch.iter().map(|(f, _)| m.forward(f).unwrap()).collect();
                let targets: Vec<f64> = batch.iter().map(|(_, t)| *t).collect();
                mae_loss(&preds, &targets).unwrap()
            };
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            let analytic = grads.param(c);
            let denom = numeric.abs().max(analytic.abs());
            if denom > 1e-6 {
                assert!(
                    (numeric - analytic).abs() / denom < 1e-4,
                    "coord {c}: numeric {numeric} vs analytic {analytic}"
                );
            } else {
                // FD cancellation noise swamps relative comparison here.
                assert!((numeric - analytic).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let model = MlpModel::init(&[6, 16, 16, 1], 9).unwrap();
        let data = analytic_dataset(10, 64);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for batch_no in 0..5 {
            let batch: Vec<_> = data[batch_no * 8..(batch_no + 1) * 8].to_vec();
            let coords: Vec<usize> = (0..20)
                .map(|_| rng.gen_range(0..model.param_count()))
                .collect();
            finite_difference_check(&model, &batch, &coords);
        }
    }

    #[test]
    fn gradient_zero_at_exact_fit() {
        // Zero all params → constant pi/4 output; targets equal to the
        // prediction make the subgradient 0 everywhere.
        let mut model = MlpModel::init(&[6, 8, 1], 12).unwrap();
        for i in 0..model.param_count() {
            model.set_param(i, 0.0);
        }
        let batch: Vec<_> = unit_features(13, 16)
            .into_iter()
            .map(|f| (f, FRAC_PI_4))
            .collect();
        let (loss, grads) = backward(&model, &batch).unwrap();
        assert!(loss.abs() < 1e-15);
        for i in 0..model.param_count() {
            assert_eq!(grads.param(i), 0.0);
        }
    }

    #[test]
    fn batch_gradient_is_mean_of_per_example_gradients() {
        let model = MlpModel::init(&[6, 12, 1], 14).unwrap();
        let batch = analytic_dataset(15, 10);
        let (_, batch_grads) = backward(&model, &batch).unwrap();
        let n = model.param_count();
        let mut acc = vec![0.0; n];
        for ex in &batch {
            let (_, g) = backward(&model, std::slice::from_ref(ex)).unwrap();
            for (a, i) in acc.iter_mut().zip(0..n) {
                *a += g.param(i);
            }
        }
        for (i, a) in acc.iter().enumerate() {
            let mean = a / batch.len() as f64;
            assert!(
                (mean - batch_grads.param(i)).abs() < 1e-12,
                "param {i}: {mean} vs {}",
                batch_grads.param(i)
            );
        }
    }

    #[test]
    fn training_learns_constant_target() {
        let data: Vec<_> = unit_features(16, 400)
            .into_iter()
            .map(|f| (f, 0.3))
            .collect();
        let config = TrainConfig {
            learning_rate: 0.05,
            epochs: 60,
            ..TrainConfig::default()
        };
        let (model, report) = train(&data, &[6, 16, 1], &config).unwrap();
        assert!(
            report.validation_mae < 0.01,
            "constant-target MAE {}",
            report.validation_mae
        );
        let pred = model.forward(&data[0].0).unwrap();
        assert!((pred - 0.3).abs() < 0.03);
    }

    #[test]
    fn training_is_deterministic() {
        let data = analytic_dataset(17, 300);
        let config = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let (m1, r1) = train(&data, &[6, 16, 1], &config).unwrap();
        let (m2, r2) = train(&data, &[6, 16, 1], &config).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(r1.epoch_losses, r2.epoch_losses);
        assert_eq!(r1.validation_mae, r2.validation_mae);
    }

    #[test]
    fn training_requires_enough_data_and_valid_targets() {
        let small = analytic_dataset(18, 50);
        assert!(matches!(
            train(&small, &[6, 8, 1], &TrainConfig::default()),
            Err(Error::InsufficientData(_))
        ));
        let mut bad = analytic_dataset(19, 150);
        bad[0].1 = 2.0;
        assert!(matches!(
            train(&bad, &[6, 8, 1], &TrainConfig::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let data = analytic_dataset(20, 200);
        let config = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let (model, _) = train(&data, &DEFAULT_DIMS, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        model.save(&path).unwrap();
        let back = MlpModel::load(&path).unwrap();
        assert_eq!(model, back);
        // Forward on a fixed input must be identical pre/post round trip.
        let f = data[7].0;
        assert_eq!(model.forward(&f).unwrap(), back.forward(&f).unwrap());
    }

    #[test]
    fn load_rejects_dimension_mismatch() {
        let model = MlpModel::init(&[6, 64, 1], 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        model.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let tampered = text.replace("dims 6 64 1", "dims 6 32 1");
        std::fs::write(&path, tampered).unwrap();
        assert!(matches!(
            MlpModel::load(&path),
            Err(Error::ModelFormat { .. })
        ));
    }
}
