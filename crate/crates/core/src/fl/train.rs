use alloc::vec::Vec;

use rand::seq::SliceRandom;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use super::{Dataset, MlpShape, ModelParameters};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainingConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub local_epochs: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { learning_rate: 0.001, batch_size: 64, local_epochs: 3 }
    }
}

impl TrainingConfig {
    pub fn batches_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch_size.max(1))
    }
}

/// Simulated on-device compute cost.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ComputeModel {
    /// Seconds per minibatch step.
    pub seconds_per_batch: f64,
}

impl Default for ComputeModel {
    fn default() -> Self {
        Self { seconds_per_batch: 0.002 }
    }
}

impl ComputeModel {
    pub fn training_time(&self, config: &TrainingConfig, samples: usize, epochs: usize) -> f64 {
        self.seconds_per_batch * (config.batches_per_epoch(samples) * epochs) as f64
    }
}

/// A client's view of the shared dataset.
#[derive(Debug, Clone, Copy)]
pub struct ClientData<'a> {
    pub client_id: u32,
    pub dataset: &'a Dataset,
    pub indices: &'a [usize],
}

/// Activations reused across samples.
struct Scratch {
    hidden_pre: Vec<f32>,
    hidden: Vec<f32>,
    logits: Vec<f32>,
    dlogits: Vec<f32>,
    dhidden: Vec<f32>,
    /// Nonzero inputs of the current sample; most MNIST pixels are zero.
    active: Vec<(u32, f32)>,
}

impl Scratch {
    fn new(shape: &MlpShape) -> Self {
        Self {
            hidden_pre: alloc::vec![0.0; shape.hidden],
            hidden: alloc::vec![0.0; shape.hidden],
            logits: alloc::vec![0.0; shape.classes],
            dlogits: alloc::vec![0.0; shape.classes],
            dhidden: alloc::vec![0.0; shape.hidden],
            active: Vec::with_capacity(shape.input),
        }
    }
}

#[inline]
fn axpy(y: &mut [f32], a: f32, x: &[f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Forward pass for one sample, leaving activations in `s`.
fn forward(params: &[f32], shape: &MlpShape, x: &[f32], s: &mut Scratch) {
    let (h, k) = (shape.hidden, shape.classes);
    // Branch-free compaction: the zero test is unpredictable per pixel.
    s.active.resize(x.len(), (0, 0.0));
    let mut n = 0;
    for (i, &xi) in x.iter().enumerate() {
        s.active[n] = (i as u32, xi);
        n += usize::from(xi != 0.0);
    }
    s.active.truncate(n);
    s.hidden_pre.copy_from_slice(&params[shape.b1()..shape.w2()]);
    for &(i, xi) in &s.active {
        let i = i as usize;
        axpy(&mut s.hidden_pre, xi, &params[i * h..(i + 1) * h]);
    }
    for (a, &z) in s.hidden.iter_mut().zip(&s.hidden_pre) {
        *a = z.max(0.0);
    }
    s.logits.copy_from_slice(&params[shape.b2()..shape.b2() + k]);
    let w2 = &params[shape.w2()..shape.b2()];
    for (j, &a) in s.hidden.iter().enumerate() {
        if a != 0.0 {
            axpy(&mut s.logits, a, &w2[j * k..(j + 1) * k]);
        }
    }
}

/// Softmax of the logits in place into `out`; returns `ln(sum exp)` relative to the max.
fn softmax(logits: &[f32], out: &mut [f32]) -> (f32, f32) {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = libm::expf(z - max);
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    (max, libm::logf(sum))
}

/// Accumulates the gradient of the mean cross-entropy over `batch` into
/// `grad` (which must be zeroed by the caller). Returns the summed loss.
fn accumulate_gradient(
    params: &[f32],
    shape: &MlpShape,
    data: &Dataset,
    batch: &[usize],
    grad: &mut [f32],
    s: &mut Scratch,
) -> f64 {
    let (h, k) = (shape.hidden, shape.classes);
    let scale = 1.0 / batch.len() as f32;
    let mut loss = 0.0f64;
    for &idx in batch {
        let x = data.sample(idx);
        let y = data.label(idx);
        forward(params, shape, x, s);
        let (max, lse) = softmax(&s.logits, &mut s.dlogits);
        loss += (lse + max - s.logits[y]) as f64;
        s.dlogits[y] -= 1.0;
        for d in s.dlogits.iter_mut() {
            *d *= scale;
        }
        axpy(&mut grad[shape.b2()..shape.b2() + k], 1.0, &s.dlogits);
        let w2 = &params[shape.w2()..shape.b2()];
        for j in 0..h {
            let a = s.hidden[j];
            let row = &w2[j * k..(j + 1) * k];
            s.dhidden[j] = if s.hidden_pre[j] > 0.0 {
                row.iter().zip(&s.dlogits).map(|(w, d)| w * d).sum()
            } else {
                0.0
            };
            if a != 0.0 {
                let off = shape.w2() + j * k;
                axpy(&mut grad[off..off + k], a, &s.dlogits);
            }
        }
        axpy(&mut grad[shape.b1()..shape.w2()], 1.0, &s.dhidden);
        for &(i, xi) in &s.active {
            let i = i as usize;
            axpy(&mut grad[i * h..(i + 1) * h], xi, &s.dhidden);
        }
    }
    loss
}

/// Mean cross-entropy and its gradient over the given samples.
pub fn loss_and_gradient(params: &ModelParameters, data: &Dataset, indices: &[usize]) -> (f64, Vec<f32>) {
    let mut grad = alloc::vec![0.0; params.len()];
    let mut s = Scratch::new(&params.shape);
    let loss = accumulate_gradient(&params.values, &params.shape, data, indices, &mut grad, &mut s);
    (loss / indices.len().max(1) as f64, grad)
}

/// Runs `local_epochs` of minibatch SGD from `global` on the client's data.
///
/// Samples are reshuffled every epoch from a stream keyed by `(seed, epoch)`.
/// Returns the trained parameters and the client's sample count.
pub fn local_train(
    global: &ModelParameters,
    client: ClientData<'_>,
    config: &TrainingConfig,
    seed: u64,
) -> Result<(ModelParameters, usize)> {
    local_train_epochs(global, client, config, config.local_epochs, seed)
}

/// Like [`local_train`] with an explicit epoch count.
pub fn local_train_epochs(
    global: &ModelParameters,
    client: ClientData<'_>,
    config: &TrainingConfig,
    epochs: usize,
    seed: u64,
) -> Result<(ModelParameters, usize)> {
    if client.indices.is_empty() {
        return Err(Error::EmptyData(client.client_id));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive"));
    }
    let shape = global.shape;
    let mut params = global.clone();
    let mut grad = alloc::vec![0.0f32; params.len()];
    let mut s = Scratch::new(&shape);
    let mut order: Vec<usize> = client.indices.to_vec();
    for epoch in 0..epochs {
        order.shuffle(&mut rng::stream(seed, &[tag::SHUFFLE, client.client_id as u64, epoch as u64]));
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            accumulate_gradient(&params.values, &shape, client.dataset, batch, &mut grad, &mut s);
            axpy(&mut params.values, -config.learning_rate, &grad);
        }
    }
    Ok((params, client.indices.len()))
}

/// Arg-max class of one sample; ties go to the lowest class index.
pub fn predict(params: &ModelParameters, x: &[f32]) -> usize {
    let mut s = Scratch::new(&params.shape);
    forward(&params.values, &params.shape, x, &mut s);
    argmax(&s.logits)
}

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &z) in v.iter().enumerate().skip(1) {
        if z > v[best] {
            best = i;
        }
    }
    best
}

/// Fraction of correctly classified samples.
pub fn evaluate(params: &ModelParameters, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let mut s = Scratch::new(&params.shape);
    let correct = (0..test.len())
        .filter(|&i| {
            forward(&params.values, &params.shape, test.sample(i), &mut s);
            argmax(&s.logits) == test.label(i)
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fl::{generate_synthetic_dataset, SyntheticConfig};

    fn small() -> (Dataset, ModelParameters) {
        let d = generate_synthetic_dataset(&SyntheticConfig { samples_per_class: 10, seed: 3, ..Default::default() })
            .unwrap();
        (d, ModelParameters::init(MlpShape::MNIST, 9))
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let (d, p) = small();
        let idx: Vec<usize> = (0..d.len()).collect();
        let cfg = TrainingConfig { learning_rate: 0.0, ..Default::default() };
        let (q, n) = local_train(&p, ClientData { client_id: 0, dataset: &d, indices: &idx }, &cfg, 1).unwrap();
        assert_eq!(q, p);
        assert_eq!(n, d.len());
    }

    #[test]
    fn single_sample_takes_one_step() {
        let (d, p) = small();
        let cfg = TrainingConfig { local_epochs: 1, ..Default::default() };
        let (q, _) = local_train(&p, ClientData { client_id: 0, dataset: &d, indices: &[4] }, &cfg, 1).unwrap();
        let (_, g) = loss_and_gradient(&p, &d, &[4]);
        let manual: Vec<f32> = p.values.iter().zip(&g).map(|(w, g)| w - 0.001 * g).collect();
        assert_eq!(q.values, manual);
    }

    #[test]
    fn empty_data_rejected() {
        let (d, p) = small();
        let r = local_train(&p, ClientData { client_id: 7, dataset: &d, indices: &[] }, &TrainingConfig::default(), 0);
        assert_eq!(r, Err(Error::EmptyData(7)));
    }

    #[test]
    fn zero_model_predicts_class_zero() {
        let d = generate_synthetic_dataset(&SyntheticConfig { samples_per_class: 20, ..Default::default() }).unwrap();
        let zero = ModelParameters::zeros(MlpShape::MNIST);
        assert!((evaluate(&zero, &d).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn empty_test_set() {
        let d = Dataset::new(Vec::new(), Vec::new(), 784, 10).unwrap();
        assert_eq!(evaluate(&ModelParameters::zeros(MlpShape::MNIST), &d), Err(Error::EmptyTestSet));
    }

    #[test]
    fn compute_time_counts_batches() {
        let cfg = TrainingConfig::default();
        let c = ComputeModel::default();
        assert_eq!(cfg.batches_per_epoch(80), 2);
        assert!((c.training_time(&cfg, 80, 3) - 0.012).abs() < 1e-15);
    }
}
