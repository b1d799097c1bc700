use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Labelled feature vectors stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<f32>,
    pub labels: Vec<u8>,
    pub dim: usize,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f32>, labels: Vec<u8>, dim: usize, num_classes: usize) -> Result<Self> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::InvalidConfig("feature buffer does not match label count"));
        }
        if labels.iter().any(|&l| l as usize >= num_classes) {
            return Err(Error::InvalidConfig("label outside [0, num_classes)"));
        }
        Ok(Self { features, labels, dim, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Copies the given rows into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.sample(i));
        }
        Self {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
            num_classes: self.num_classes,
        }
    }
}

/// Gaussian class blobs around 0.5, each class shifted along its own set of
/// coordinates so that centroids sit `separation · sigma` apart.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub dim: usize,
    /// Centroid distance in units of `sigma`.
    pub separation: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { num_classes: 10, samples_per_class: 100, dim: 784, separation: 6.0, sigma: 0.1, seed: 0 }
    }
}

impl SyntheticConfig {
    /// Shift applied to a class's own coordinates.
    fn offset(&self) -> f64 {
        let block = (self.dim / self.num_classes) as f64;
        self.separation * self.sigma / libm::sqrt(2.0 * block)
    }

    /// Noise-free class center.
    pub fn centroid(&self, class: usize) -> Vec<f32> {
        let delta = self.offset();
        (0..self.dim)
            .map(|j| if j % self.num_classes == class { (0.5 + delta) as f32 } else { 0.5 })
            .collect()
    }
}

/// Samples are interleaved by class (`label = i mod num_classes`) and clamped to [0, 1].
pub fn generate_synthetic_dataset(config: &SyntheticConfig) -> Result<Dataset> {
    if config.num_classes < 2 || config.num_classes > 256 {
        return Err(Error::InvalidConfig("synthetic data needs 2..=256 classes"));
    }
    if config.dim < config.num_classes || config.samples_per_class == 0 {
        return Err(Error::InvalidConfig("dim must cover every class and samples_per_class > 0"));
    }
    if !(config.sigma > 0.0) || !(config.separation >= 0.0) {
        return Err(Error::InvalidConfig("sigma must be positive and separation non-negative"));
    }
    let centroids: Vec<Vec<f32>> = (0..config.num_classes).map(|c| config.centroid(c)).collect();
    let n = config.num_classes * config.samples_per_class;
    let mut features = Vec::with_capacity(n * config.dim);
    let mut labels = Vec::with_capacity(n);
    let mut r = rng::stream(config.seed, &[tag::SYNTHETIC]);
    for i in 0..n {
        let class = i % config.num_classes;
        for &c in &centroids[class] {
            let z: f64 = r.sample(StandardNormal);
            features.push((c as f64 + config.sigma * z).clamp(0.0, 1.0) as f32);
        }
        labels.push(class as u8);
    }
    Dataset::new(features, labels, config.dim, config.num_classes)
}
