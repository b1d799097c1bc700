use alloc::vec::Vec;

use super::ModelParameters;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: u32,
    pub params: ModelParameters,
    pub sample_count: usize,
}

/// Sample-count weighted mean of client parameters.
///
/// Updates are accumulated in ascending `client_id` order in `f64` and rounded
/// to `f32` once, so the result does not depend on arrival order.
pub fn fedavg(updates: &[ClientUpdate]) -> Result<ModelParameters> {
    let first = updates.first().ok_or(Error::EmptyUpdates)?;
    let shape = first.params.shape;
    let len = first.params.len();
    if let Some(bad) = updates.iter().find(|u| u.params.len() != len || u.params.shape != shape) {
        return Err(Error::ShapeMismatch { expected: len, actual: bad.params.len() });
    }
    let total: usize = updates.iter().map(|u| u.sample_count).sum();
    if total == 0 {
        return Err(Error::ZeroWeight);
    }
    let mut ordered: Vec<&ClientUpdate> = updates.iter().collect();
    ordered.sort_by_key(|u| u.client_id);

    let mut acc = alloc::vec![0.0f64; len];
    for u in ordered {
        let w = u.sample_count as f64;
        for (a, &v) in acc.iter_mut().zip(&u.params.values) {
            *a += w * v as f64;
        }
    }
    let total = total as f64;
    let values = acc.into_iter().map(|a| (a / total) as f32).collect();
    Ok(ModelParameters { shape, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fl::MlpShape;

    const TINY: MlpShape = MlpShape { input: 1, hidden: 1, classes: 0 };

    fn update(id: u32, values: &[f32], n: usize) -> ClientUpdate {
        ClientUpdate { client_id: id, params: ModelParameters { shape: TINY, values: values.to_vec() }, sample_count: n }
    }

    #[test]
    fn weighted_two_clients() {
        let out = fedavg(&[update(0, &[1.0, 1.0], 1), update(1, &[3.0, 3.0], 3)]).unwrap();
        assert_eq!(out.values, [2.5, 2.5]);
    }

    #[test]
    fn identical_updates() {
        let u = [update(2, &[0.3, -7.0], 5), update(0, &[0.3, -7.0], 2), update(1, &[0.3, -7.0], 9)];
        assert_eq!(fedavg(&u).unwrap().values, [0.3, -7.0]);
    }

    #[test]
    fn single_update_unchanged() {
        assert_eq!(fedavg(&[update(4, &[0.1, 0.2], 3)]).unwrap().values, [0.1, 0.2]);
    }

    #[test]
    fn order_independent() {
        let a = [update(0, &[0.1, 0.7], 3), update(1, &[0.2, -0.4], 5), update(2, &[1e-3, 9.0], 1)];
        let b = [a[2].clone(), a[0].clone(), a[1].clone()];
        assert_eq!(fedavg(&a).unwrap(), fedavg(&b).unwrap());
    }

    #[test]
    fn errors() {
        assert_eq!(fedavg(&[]), Err(Error::EmptyUpdates));
        let mismatched = [update(0, &[1.0, 2.0], 1), update(1, &[1.0], 1)];
        assert!(matches!(fedavg(&mismatched), Err(Error::ShapeMismatch { .. })));
        assert_eq!(fedavg(&[update(0, &[1.0, 2.0], 0)]), Err(Error::ZeroWeight));
    }
}
