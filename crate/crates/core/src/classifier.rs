//! Binary set-membership classifier: a feed-forward network
//! `input -> 64 (ReLU) -> 64 (ReLU) -> 1 (sigmoid)` trained with binary
//! cross-entropy by mini-batch gradient descent.
//!
//! All parameters live in one flat vector (layer by layer, weights row-major
//! followed by biases) so that optimizers and gradient checks can treat the
//! network uniformly.

use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FORMAT_MAGIC: &str = "setaudit-classifier";
const FORMAT_VERSION: u32 = 1;

/// Per-set features `[mu_T1, sd_T1, ..., mu_Tn, sd_Tn]` over a temperature grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    values: Vec<f64>,
    temperatures: Vec<f64>,
}

impl FeatureVector {
    /// Interleaves per-temperature `(mean, std)` pairs in grid order.
    pub fn from_moments(temperatures: Vec<f64>, moments: &[(f64, f64)]) -> Result<Self> {
        if temperatures.len() != moments.len() {
            return Err(Error::invalid(format!(
                "{} temperatures but {} (mean, std) pairs",
                temperatures.len(),
                moments.len()
            )));
        }
        let values = moments.iter().flat_map(|&(m, s)| [m, s]).collect();
        FeatureVector::new(values, temperatures)
    }

    pub fn new(values: Vec<f64>, temperatures: Vec<f64>) -> Result<Self> {
        if temperatures.is_empty() {
            return Err(Error::invalid("feature vector needs at least one temperature"));
        }
        if values.len() != 2 * temperatures.len() {
            return Err(Error::invalid(format!(
                "feature length {} does not match 2 x {} temperatures",
                values.len(),
                temperatures.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature vector has non-finite entries"));
        }
        if values.iter().skip(1).step_by(2).any(|&sd| sd < 0.0) {
            return Err(Error::invalid("feature vector has a negative standard deviation"));
        }
        Ok(FeatureVector { values, temperatures })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.temperatures
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean_at(&self, index: usize) -> f64 {
        self.values[2 * index]
    }

    pub fn std_at(&self, index: usize) -> f64 {
        self.values[2 * index + 1]
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
    GradientDescent,
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub hidden: [usize; 2],
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// `None` trains on the full batch every step.
    pub batch_size: Option<usize>,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub validation_fraction: f64,
    pub optimizer: Optimizer,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            hidden: [64, 64],
            learning_rate: 1e-3,
            max_epochs: 200,
            batch_size: Some(64),
            patience: 20,
            validation_fraction: 0.1,
            optimizer: Optimizer::default(),
        }
    }
}

/// Trained (or freshly initialized) network plus everything needed to
/// reproduce it.
#[derive(Clone, PartialEq)]
pub struct ClassifierModel {
    input_dim: usize,
    hidden: [usize; 2],
    seed: u64,
    hyperparameters: Hyperparameters,
    params: Vec<f64>,
}

impl fmt::Debug for ClassifierModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClassifierModel")
            .field("input_dim", &self.input_dim)
            .field("hidden", &self.hidden)
            .field("seed", &self.seed)
            .field("params", &self.params.len())
            .finish()
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Clone, Copy)]
struct Layout {
    d: usize,
    h1: usize,
    h2: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    len: usize,
}

impl Layout {
    fn new(d: usize, [h1, h2]: [usize; 2]) -> Self {
        let w1 = 0;
        let b1 = w1 + h1 * d;
        let w2 = b1 + h1;
        let b2 = w2 + h2 * h1;
        let w3 = b2 + h2;
        let b3 = w3 + h2;
        Layout { d, h1, h2, w1, b1, w2, b2, w3, b3, len: b3 + 1 }
    }
}

/// Activations kept for the backward pass.
struct Trace {
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    logit: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a logit, stable for large |z|.
fn bce_with_logit(z: f64, label: bool) -> f64 {
    let y = if label { 1.0 } else { 0.0 };
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

impl ClassifierModel {
    /// He-uniform initialization: weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`,
    /// zero biases.
    pub fn initialize(input_dim: usize, hyperparameters: Hyperparameters, seed: u64) -> Result<Self> {
        if input_dim == 0 || hyperparameters.hidden.contains(&0) {
            return Err(Error::invalid("classifier dimensions must be positive"));
        }
        let layout = Layout::new(input_dim, hyperparameters.hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.len];
        let blocks = [
            (layout.w1, layout.b1, layout.d),
            (layout.w2, layout.b2, layout.h1),
            (layout.w3, layout.b3, layout.h2),
        ];
        for (start, end, fan_in) in blocks {
            let bound = (6.0 / fan_in as f64).sqrt();
            for p in &mut params[start..end] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(ClassifierModel {
            input_dim,
            hidden: hyperparameters.hidden,
            seed,
            hyperparameters,
            params,
        })
    }

    /// All-zero network; predicts exactly 0.5 for every input.
    pub fn zeroed(input_dim: usize, hyperparameters: Hyperparameters) -> Result<Self> {
        let mut model = ClassifierModel::initialize(input_dim, hyperparameters, 0)?;
        model.params.iter_mut().for_each(|p| *p = 0.0);
        Ok(model)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyperparameters
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layout(&self) -> Layout {
        Layout::new(self.input_dim, self.hidden)
    }

    fn forward_trace(&self, x: &[f64]) -> Trace {
        let l = self.layout();
        let p = &self.params;
        let mut z1 = p[l.b1..l.b1 + l.h1].to_vec();
        for (i, z) in z1.iter_mut().enumerate() {
            let row = &p[l.w1 + i * l.d..l.w1 + (i + 1) * l.d];
            *z += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        let a1: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
        let mut z2 = p[l.b2..l.b2 + l.h2].to_vec();
        for (i, z) in z2.iter_mut().enumerate() {
            let row = &p[l.w2 + i * l.h1..l.w2 + (i + 1) * l.h1];
            *z += row.iter().zip(&a1).map(|(w, v)| w * v).sum::<f64>();
        }
        let a2: Vec<f64> = z2.iter().map(|&z| z.max(0.0)).collect();
        let logit = p[l.b3] + p[l.w3..l.w3 + l.h2].iter().zip(&a2).map(|(w, v)| w * v).sum::<f64>();
        Trace { z1, a1, z2, a2, logit }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::invalid(format!(
                "feature length {} does not match classifier input {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    pub fn logit(&self, features: &[f64]) -> Result<f64> {
        self.check_input(features)?;
        Ok(self.forward_trace(features).logit)
    }

    /// Membership probability, kept strictly inside (0, 1).
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        let p = sigmoid(self.logit(features)?);
        Ok(p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
    }

    pub fn predict_label(&self, features: &[f64], threshold: f64) -> Result<bool> {
        Ok(self.predict(features)? > threshold)
    }

    /// Mean binary cross-entropy over a batch.
    pub fn loss<F: AsRef<[f64]>>(&self, features: &[F], labels: &[bool]) -> Result<f64> {
        check_batch(self.input_dim, features, labels)?;
        let total: f64 = features
            .iter()
            .zip(labels)
            .map(|(x, &y)| bce_with_logit(self.forward_trace(x.as_ref()).logit, y))
            .sum();
        Ok(total / features.len() as f64)
    }

    /// Mean loss and its analytic gradient with respect to every parameter.
    pub fn loss_and_gradient<F: AsRef<[f64]>>(&self, features: &[F], labels: &[bool]) -> Result<(f64, Vec<f64>)> {
        check_batch(self.input_dim, features, labels)?;
        let idx: Vec<usize> = (0..features.len()).collect();
        Ok(self.batch_gradient(features, labels, &idx))
    }

    fn batch_gradient<F: AsRef<[f64]>>(&self, features: &[F], labels: &[bool], batch: &[usize]) -> (f64, Vec<f64>) {
        let l = self.layout();
        let p = &self.params;
        let mut grad = vec![0.0; l.len];
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        let mut d1 = vec![0.0; l.h1];
        let mut d2 = vec![0.0; l.h2];

        for &n in batch {
            let x = features[n].as_ref();
            let y = labels[n];
            let t = self.forward_trace(x);
            loss += bce_with_logit(t.logit, y);
            let dz3 = (sigmoid(t.logit) - if y { 1.0 } else { 0.0 }) * scale;

            grad[l.b3] += dz3;
            for j in 0..l.h2 {
                grad[l.w3 + j] += dz3 * t.a2[j];
                d2[j] = if t.z2[j] > 0.0 { dz3 * p[l.w3 + j] } else { 0.0 };
            }

            d1.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..l.h2 {
                let g = d2[i];
                if g == 0.0 {
                    continue;
                }
                grad[l.b2 + i] += g;
                let row = l.w2 + i * l.h1;
                for j in 0..l.h1 {
                    grad[row + j] += g * t.a1[j];
                    d1[j] += g * p[row + j];
                }
            }

            for i in 0..l.h1 {
                if t.z1[i] <= 0.0 {
                    continue;
                }
                let g = d1[i];
                grad[l.b1 + i] += g;
                let row = l.w1 + i * l.d;
                for j in 0..l.d {
                    grad[row + j] += g * x[j];
                }
            }
        }
        (loss * scale, grad)
    }

    /// Writes the versioned text format: a magic line, a JSON header, then
    /// one hex-encoded IEEE-754 bit pattern per parameter.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let header = ModelHeader {
            version: FORMAT_VERSION,
            input_dim: self.input_dim,
            hidden: self.hidden,
            seed: self.seed,
            parameters: self.params.len(),
            hyperparameters: self.hyperparameters.clone(),
        };
        let io = |e| Error::io("<classifier>", e);
        writeln!(out, "{FORMAT_MAGIC} v{FORMAT_VERSION}").map_err(io)?;
        writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes")).map_err(io)?;
        for p in &self.params {
            writeln!(out, "{:016x}", p.to_bits()).map_err(io)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let parse = |line: usize, message: String| Error::Parse {
            path: "<classifier>".into(),
            line,
            message,
        };
        let mut lines = input.lines();
        let mut next = |n: usize| -> Result<String> {
            lines
                .next()
                .ok_or_else(|| parse(n, "unexpected end of model file".into()))?
                .map_err(|e| Error::io("<classifier>", e))
        };
        let magic = next(1)?;
        if magic != format!("{FORMAT_MAGIC} v{FORMAT_VERSION}") {
            return Err(parse(1, format!("unsupported model header `{magic}`")));
        }
        let header: ModelHeader = serde_json::from_str(&next(2)?).map_err(|e| parse(2, e.to_string()))?;
        let layout = Layout::new(header.input_dim, header.hidden);
        if header.parameters != layout.len || header.hidden != header.hyperparameters.hidden {
            return Err(parse(2, "parameter count does not match the declared dimensions".into()));
        }
        let mut params = Vec::with_capacity(layout.len);
        for i in 0..layout.len {
            let line = next(3 + i)?;
            let bits = u64::from_str_radix(line.trim(), 16).map_err(|e| parse(3 + i, e.to_string()))?;
            params.push(f64::from_bits(bits));
        }
        Ok(ClassifierModel {
            input_dim: header.input_dim,
            hidden: header.hidden,
            seed: header.seed,
            hyperparameters: header.hyperparameters,
            params,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    version: u32,
    input_dim: usize,
    hidden: [usize; 2],
    seed: u64,
    parameters: usize,
    hyperparameters: Hyperparameters,
}

fn check_batch<F: AsRef<[f64]>>(input_dim: usize, features: &[F], labels: &[bool]) -> Result<()> {
    if features.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} feature vectors for {} labels",
            features.len(),
            labels.len()
        )));
    }
    if features.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    for (i, f) in features.iter().enumerate() {
        let f = f.as_ref();
        if f.len() != input_dim {
            return Err(Error::invalid(format!(
                "feature vector {i} has length {}, expected {input_dim}",
                f.len()
            )));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("feature vector {i} has non-finite entries")));
        }
    }
    Ok(())
}

/// Per-epoch losses recorded while training.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingHistory {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub best_epoch: usize,
}

/// Trains a classifier; see [`train_with_history`].
pub fn train<F: AsRef<[f64]>>(
    features: &[F],
    labels: &[bool],
    hyperparameters: &Hyperparameters,
    seed: u64,
) -> Result<ClassifierModel> {
    train_with_history(features, labels, hyperparameters, seed).map(|(m, _)| m)
}

/// Trains with binary cross-entropy.
///
/// A `validation_fraction` share of the shuffled examples is held out; the
/// parameters with the lowest held-out loss are returned, and training stops
/// once that loss has not improved for `patience` epochs. Without a held-out
/// split the training loss drives both decisions. Everything is seeded, so
/// identical inputs give bit-identical weights.
pub fn train_with_history<F: AsRef<[f64]>>(
    features: &[F],
    labels: &[bool],
    hyperparameters: &Hyperparameters,
    seed: u64,
) -> Result<(ClassifierModel, TrainingHistory)> {
    let input_dim = features.first().map(|f| f.as_ref().len()).unwrap_or(0);
    check_batch(input_dim, features, labels)?;
    if features.len() < 2 {
        return Err(Error::invalid("training needs at least 2 examples"));
    }
    if labels.iter().all(|&y| y) || labels.iter().all(|&y| !y) {
        return Err(Error::invalid("training data contains a single class"));
    }
    if !(0.0..1.0).contains(&hyperparameters.validation_fraction) {
        return Err(Error::invalid("validation_fraction must lie in [0, 1)"));
    }
    if hyperparameters.learning_rate.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::invalid("learning rate must be positive"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ClassifierModel::initialize(input_dim, hyperparameters.clone(), seed)?;

    let mut order: Vec<usize> = (0..features.len()).collect();
    order.shuffle(&mut rng);
    let n_val = (features.len() as f64 * hyperparameters.validation_fraction).floor() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let batch_size = hyperparameters.batch_size.unwrap_or(train_idx.len()).max(1);

    let subset_loss = |m: &ClassifierModel, idx: &[usize]| -> f64 {
        idx.iter()
            .map(|&i| bce_with_logit(m.forward_trace(features[i].as_ref()).logit, labels[i]))
            .sum::<f64>()
            / idx.len() as f64
    };

    let mut first = vec![0.0; model.params.len()];
    let mut second = vec![0.0; model.params.len()];
    let mut step = 0i32;
    let mut history = TrainingHistory::default();
    let mut best = (f64::INFINITY, model.params.clone());
    let mut stale = 0;

    for epoch in 0..hyperparameters.max_epochs {
        if hyperparameters.batch_size.is_some() {
            train_idx.shuffle(&mut rng);
        }
        for batch in train_idx.chunks(batch_size) {
            let (_, grad) = model.batch_gradient(features, labels, batch);
            step += 1;
            apply_update(
                &mut model.params,
                &grad,
                &mut first,
                &mut second,
                step,
                hyperparameters,
            );
        }

        let train_loss = subset_loss(&model, &train_idx);
        let monitored = if val_idx.is_empty() {
            train_loss
        } else {
            subset_loss(&model, val_idx)
        };
        if !train_loss.is_finite() || !monitored.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        history.train_loss.push(train_loss);
        if !val_idx.is_empty() {
            history.validation_loss.push(monitored);
        }

        if monitored < best.0 {
            best = (monitored, model.params.clone());
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= hyperparameters.patience {
                break;
            }
        }
    }

    model.params = best.1;
    Ok((model, history))
}

fn apply_update(
    params: &mut [f64],
    grad: &[f64],
    first: &mut [f64],
    second: &mut [f64],
    step: i32,
    hp: &Hyperparameters,
) {
    let lr = hp.learning_rate;
    match hp.optimizer {
        Optimizer::GradientDescent => {
            for (p, g) in params.iter_mut().zip(grad) {
                *p -= lr * g;
            }
        }
        Optimizer::Adam { beta1, beta2, epsilon } => {
            let c1 = 1.0 - beta1.powi(step);
            let c2 = 1.0 - beta2.powi(step);
            for i in 0..params.len() {
                first[i] = beta1 * first[i] + (1.0 - beta1) * grad[i];
                second[i] = beta2 * second[i] + (1.0 - beta2) * grad[i] * grad[i];
                let m_hat = first[i] / c1;
                let v_hat = second[i] / c2;
                params[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    /// Two Gaussian blobs in 2-D whose centers are separated along x, with every
    /// point at least `margin` away from the separating line x = 0.
    pub(crate) fn blobs(n: usize, margin: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % 2 == 0;
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            let offset = margin / 2.0 + a.abs() * 0.5;
            let x = if label { offset } else { -offset };
            xs.push(vec![x, b * 0.5]);
            ys.push(label);
        }
        (xs, ys)
    }

    fn accuracy(model: &ClassifierModel, xs: &[Vec<f64>], ys: &[bool]) -> f64 {
        let hits = xs
            .iter()
            .zip(ys)
            .filter(|(x, &y)| model.predict_label(x, 0.5).unwrap() == y)
            .count();
        hits as f64 / xs.len() as f64
    }

    #[test]
    fn zeroed_model_predicts_one_half() {
        let model = ClassifierModel::zeroed(6, Hyperparameters::default()).unwrap();
        assert_eq!(model.predict(&[0.3, 0.1, 0.9, 0.0, 5.0, -2.0]).unwrap(), 0.5);
        assert!(matches!(model.predict(&[0.0]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (xs, ys) = blobs(200, 1.0, 11);
        let model = train(&xs, &ys, &Hyperparameters::default(), 5).unwrap();
        assert!(accuracy(&model, &xs, &ys) >= 0.99);
        let (hx, hy) = blobs(200, 1.0, 12);
        assert!(accuracy(&model, &hx, &hy) >= 0.95);
    }

    #[test]
    fn identical_features_learn_the_prior() {
        let xs = vec![vec![0.4, 0.1]; 200];
        let ys: Vec<bool> = (0..200).map(|i| i % 10 < 7).collect();
        let hp = Hyperparameters {
            validation_fraction: 0.0,
            ..Hyperparameters::default()
        };
        let model = train(&xs, &ys, &hp, 3).unwrap();
        let p = model.predict(&xs[0]).unwrap();
        assert!((p - 0.7).abs() <= 0.05, "p = {p}");
    }

    #[test]
    fn training_is_deterministic() {
        let (xs, ys) = blobs(120, 1.0, 4);
        let a = train(&xs, &ys, &Hyperparameters::default(), 9).unwrap();
        let b = train(&xs, &ys, &Hyperparameters::default(), 9).unwrap();
        let bits = |m: &ClassifierModel| m.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn training_rejects_bad_data() {
        let xs = vec![vec![0.1], vec![0.2]];
        assert!(matches!(
            train(&xs, &[true, true], &Hyperparameters::default(), 0),
            Err(Error::InvalidInput(_))
        ));
        assert!(train(&xs[..1], &[true], &Hyperparameters::default(), 0).is_err());
        let ragged = vec![vec![0.1], vec![0.2, 0.3]];
        assert!(train(&ragged, &[true, false], &Hyperparameters::default(), 0).is_err());
    }

    #[test]
    fn divergence_names_the_epoch() {
        let xs = vec![vec![1e300], vec![-1e300]];
        let hp = Hyperparameters {
            learning_rate: 1e300,
            optimizer: Optimizer::GradientDescent,
            validation_fraction: 0.0,
            ..Hyperparameters::default()
        };
        match train(&xs, &[true, false], &hp, 1) {
            Err(Error::TrainingDiverged { epoch }) => assert_eq!(epoch, 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn full_batch_loss_is_monotone() {
        let (xs, ys) = blobs(200, 1.0, 21);
        for optimizer in [Optimizer::GradientDescent, Optimizer::default()] {
            let hp = Hyperparameters {
                batch_size: None,
                validation_fraction: 0.0,
                learning_rate: if optimizer == Optimizer::GradientDescent { 0.05 } else { 1e-3 },
                optimizer,
                ..Hyperparameters::default()
            };
            let (_, history) = train_with_history(&xs, &ys, &hp, 2).unwrap();
            for w in history.train_loss.windows(2) {
                assert!(w[1] <= w[0] + 1e-6, "{optimizer:?}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let hp = Hyperparameters {
            hidden: [5, 4],
            ..Hyperparameters::default()
        };
        let mut model = ClassifierModel::initialize(3, hp, 8).unwrap();
        let xs: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let ys: Vec<bool> = (0..6).map(|i| i % 3 == 0).collect();
        let (_, grad) = model.loss_and_gradient(&xs, &ys).unwrap();
        let h = 1e-5;
        for i in 0..grad.len() {
            let orig = model.params()[i];
            model.params_mut()[i] = orig + h;
            let up = model.loss(&xs, &ys).unwrap();
            model.params_mut()[i] = orig - h;
            let down = model.loss(&xs, &ys).unwrap();
            model.params_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (numeric - grad[i]).abs() / numeric.abs().max(grad[i].abs()).max(1e-7);
            assert!(rel <= 1e-4, "param {i}: analytic {} numeric {numeric}", grad[i]);
        }
    }

    #[test]
    fn serialization_round_trips_bit_exactly() {
        let (xs, ys) = blobs(60, 1.0, 1);
        let model = train(&xs, &ys, &Hyperparameters { max_epochs: 5, ..Default::default() }, 4).unwrap();
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        let back = ClassifierModel::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, model);
        let truncated = &buf[..buf.len() / 2];
        assert!(ClassifierModel::read_from(truncated).is_err());
    }

    #[test]
    fn feature_vector_invariants() {
        let fv = FeatureVector::from_moments(vec![0.1, 0.2], &[(0.9, 0.1), (0.8, 0.2)]).unwrap();
        assert_eq!(fv.values(), &[0.9, 0.1, 0.8, 0.2]);
        assert_eq!((fv.mean_at(1), fv.std_at(1)), (0.8, 0.2));
        assert!(FeatureVector::new(vec![0.5, -0.1], vec![0.1]).is_err());
        assert!(FeatureVector::new(vec![0.5], vec![0.1]).is_err());
    }
}
