use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// A one-hidden-layer perceptron `input → hidden (ReLU) → classes`.
///
/// Flat layout: `w1` (input-major, `input × hidden`), `b1`, `w2`
/// (hidden-major, `hidden × classes`), `b2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl MlpShape {
    /// 784 → 64 → 10: 50 890 parameters.
    pub const MNIST: MlpShape = MlpShape { input: 784, hidden: 64, classes: 10 };

    pub const fn param_count(&self) -> usize {
        self.input * self.hidden + self.hidden + self.hidden * self.classes + self.classes
    }

    pub(crate) const fn b1(&self) -> usize {
        self.input * self.hidden
    }

    pub(crate) const fn w2(&self) -> usize {
        self.b1() + self.hidden
    }

    pub(crate) const fn b2(&self) -> usize {
        self.w2() + self.hidden * self.classes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub shape: MlpShape,
    pub values: Vec<f32>,
}

impl ModelParameters {
    pub fn zeros(shape: MlpShape) -> Self {
        Self { shape, values: alloc::vec![0.0; shape.param_count()] }
    }

    pub fn from_values(shape: MlpShape, values: Vec<f32>) -> Result<Self> {
        if values.len() != shape.param_count() {
            return Err(Error::ShapeMismatch { expected: shape.param_count(), actual: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("parameters must be finite"));
        }
        Ok(Self { shape, values })
    }

    /// Uniform fan-in initialisation: `±sqrt(6 / fan_in)` for the ReLU layer,
    /// `±sqrt(6 / (fan_in + fan_out))` for the output layer, zero biases.
    pub fn init(shape: MlpShape, seed: u64) -> Self {
        let mut p = Self::zeros(shape);
        let mut r = rng::stream(seed, &[tag::INIT]);
        let a1 = libm::sqrtf(6.0 / shape.input as f32);
        for w in &mut p.values[..shape.b1()] {
            *w = r.random_range(-a1..a1);
        }
        let a2 = libm::sqrtf(6.0 / (shape.hidden + shape.classes) as f32);
        for w in &mut p.values[shape.w2()..shape.b2()] {
            *w = r.random_range(-a2..a2);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
