//! Digital-twin forecasting: extrapolate the RTTG forward in time and turn
//! predicted geometry into per-client communication latency.

use alloc::collections::BTreeMap;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::rng::{self, tag};
use crate::v2x::Rttg;

/// Bandwidth at the cell edge is `bandwidth_near / (1 + EDGE_DEGRADATION)`.
pub const EDGE_DEGRADATION: f64 = 9.0;

/// Latency reported for a client no RSU can reach.
pub const UNREACHABLE: f64 = f64::INFINITY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PredictorKind {
    #[default]
    ConstantVelocity,
    ConstantAcceleration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPredictor {
    pub kind: PredictorKind,
    /// Seconds; must be positive.
    pub horizon: f64,
}

impl TrajectoryPredictor {
    pub fn new(kind: PredictorKind, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidConfig("prediction horizon must be positive"));
        }
        Ok(Self { kind, horizon })
    }
}

/// Extrapolates every node of `current` by the predictor's horizon and
/// rebuilds the edges. The snapshot time advances by the horizon.
pub fn predict_rttg(current: &Rttg, predictor: &TrajectoryPredictor) -> Rttg {
    let h = predictor.horizon;
    let mut next = current.clone();
    for entry in next.nodes.values_mut() {
        let s = &mut entry.state;
        match predictor.kind {
            PredictorKind::ConstantVelocity => {
                s.position += s.velocity * h;
            }
            PredictorKind::ConstantAcceleration => {
                s.position += s.velocity * h + s.acceleration * (0.5 * h * h);
                s.velocity += s.acceleration * h;
            }
        }
        s.timestamp += h;
    }
    next.snapshot_time = current.snapshot_time + h;
    next.recompute_edges();
    next
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LatencyModel {
    /// Fixed per-transfer latency, seconds.
    pub base_latency: f64,
    /// Model payload, bits (parameter count × 32).
    pub payload_bits: f64,
    /// Bandwidth right next to an RSU, bits/second.
    pub bandwidth_near: f64,
    /// RSU coverage radius, meters.
    pub range_rsu: f64,
    pub distance_exponent: f64,
    /// Standard deviation of the non-negative jitter term; zero disables it.
    pub jitter_std: f64,
    pub seed: u64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            base_latency: 0.05,
            payload_bits: 50_890.0 * 32.0,
            bandwidth_near: 50e6,
            range_rsu: 300.0,
            distance_exponent: 2.0,
            jitter_std: 0.005,
            seed: 0,
        }
    }
}

impl LatencyModel {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.base_latency, self.payload_bits, self.bandwidth_near, self.range_rsu];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidConfig("latency model constants must be positive"));
        }
        if !(self.distance_exponent >= 1.0) {
            return Err(Error::InvalidConfig("distance_exponent must be at least 1"));
        }
        if !(self.jitter_std >= 0.0) {
            return Err(Error::InvalidConfig("jitter_std must be non-negative"));
        }
        Ok(())
    }

    /// Effective bandwidth at `distance` meters from the serving RSU.
    pub fn bandwidth(&self, distance: f64) -> f64 {
        let rel = libm::pow(distance / self.range_rsu, self.distance_exponent);
        self.bandwidth_near / (1.0 + rel * EDGE_DEGRADATION)
    }

    /// Deterministic part of a one-way transfer, or `None` when out of range.
    pub fn transfer_time(&self, distance: f64) -> Option<f64> {
        (distance <= self.range_rsu).then(|| self.base_latency + self.payload_bits / self.bandwidth(distance))
    }

    /// Non-negative jitter for `(round, client, direction)`.
    pub fn jitter(&self, round: u64, client_id: u32, direction: Direction) -> f64 {
        if self.jitter_std == 0.0 {
            return 0.0;
        }
        let mut r = rng::stream(self.seed, &[tag::JITTER, round, client_id as u64, direction as u64]);
        let z: f64 = r.sample(StandardNormal);
        // A zero-mean normal truncated at zero is the half-normal.
        libm::fabs(z) * self.jitter_std
    }

    /// Latency estimate for a client at `position` given RSU sites.
    pub fn estimate_at(&self, client_id: u32, position: Vec2, rsus: &[Vec2], round: u64) -> LatencyEstimate {
        let up = self.one_way(client_id, position, rsus, round, Direction::Uplink);
        let down = self.one_way(client_id, position, rsus, round, Direction::Downlink);
        LatencyEstimate::from_parts(client_id, up, down)
    }

    /// One direction of a transfer for a client at `position`; [`UNREACHABLE`]
    /// when no RSU covers it.
    pub fn one_way(&self, client_id: u32, position: Vec2, rsus: &[Vec2], round: u64, direction: Direction) -> f64 {
        match self.transfer_time(nearest_rsu_distance(position, rsus)) {
            Some(t) => t + self.jitter(round, client_id, direction),
            None => UNREACHABLE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Uplink = 0,
    Downlink = 1,
}

pub fn nearest_rsu_distance(position: Vec2, rsus: &[Vec2]) -> f64 {
    rsus.iter().map(|r| r.distance(position)).fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct LatencyEstimate {
    pub client_id: u32,
    pub uplink: f64,
    pub downlink: f64,
    pub connected: bool,
}

impl LatencyEstimate {
    pub fn unreachable(client_id: u32) -> Self {
        Self { client_id, uplink: UNREACHABLE, downlink: UNREACHABLE, connected: false }
    }

    /// Combines directions; the client counts as connected only if both are finite.
    pub fn from_parts(client_id: u32, uplink: f64, downlink: f64) -> Self {
        if uplink.is_finite() && downlink.is_finite() {
            Self { client_id, uplink, downlink, connected: true }
        } else {
            Self::unreachable(client_id)
        }
    }

    pub fn round_trip(&self) -> f64 {
        self.uplink + self.downlink
    }
}

/// Latency of `client_id` attached to its nearest RSU in `rttg`.
pub fn estimate_latency(rttg: &Rttg, client_id: u32, model: &LatencyModel, round: u64) -> Result<LatencyEstimate> {
    let pos = rttg.position(client_id).ok_or(Error::UnknownClient(client_id))?;
    Ok(model.estimate_at(client_id, pos, &rttg.rsu_nodes, round))
}

/// Latency of each client in the RTTG predicted one horizon ahead.
pub fn predicted_round_latency(
    rttg: &Rttg,
    predictor: &TrajectoryPredictor,
    model: &LatencyModel,
    client_ids: impl IntoIterator<Item = u32>,
    round: u64,
) -> Result<BTreeMap<u32, LatencyEstimate>> {
    let future = predict_rttg(rttg, predictor);
    client_ids
        .into_iter()
        .map(|id| estimate_latency(&future, id, model, round).map(|e| (id, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mobility::VehicleState;
    use crate::v2x::{NodeEntry, Source};
    use alloc::vec;

    fn graph(nodes: &[(u32, Vec2, Vec2, Vec2)]) -> Rttg {
        let mut g = Rttg::empty(vec![Vec2::ZERO], 150.0);
        for &(id, p, v, a) in nodes {
            let state = VehicleState { velocity: v, acceleration: a, ..VehicleState::at_rest(id, p) };
            g.nodes.insert(id, NodeEntry { state, last_update: 0.0, source: Source::Cam });
        }
        g.recompute_edges();
        g
    }

    fn quiet() -> LatencyModel {
        LatencyModel { jitter_std: 0.0, ..Default::default() }
    }

    #[test]
    fn constant_velocity_extrapolation() {
        let g = graph(&[(0, Vec2::ZERO, Vec2::new(10.0, 0.0), Vec2::ZERO)]);
        let p = predict_rttg(&g, &TrajectoryPredictor::new(PredictorKind::ConstantVelocity, 2.0).unwrap());
        assert_eq!(p.position(0), Some(Vec2::new(20.0, 0.0)));
        assert_eq!(p.snapshot_time, 2.0);
    }

    #[test]
    fn constant_acceleration_extrapolation() {
        let g = graph(&[(0, Vec2::ZERO, Vec2::ZERO, Vec2::new(4.0, 0.0))]);
        let p = predict_rttg(&g, &TrajectoryPredictor::new(PredictorKind::ConstantAcceleration, 1.0).unwrap());
        assert_eq!(p.position(0), Some(Vec2::new(2.0, 0.0)));
        assert_eq!(p.nodes[&0].state.velocity, Vec2::new(4.0, 0.0));
    }

    #[test]
    fn stationary_graph_is_fixed_point() {
        let g = graph(&[(0, Vec2::ZERO, Vec2::ZERO, Vec2::ZERO), (1, Vec2::new(100.0, 0.0), Vec2::ZERO, Vec2::ZERO)]);
        for kind in [PredictorKind::ConstantVelocity, PredictorKind::ConstantAcceleration] {
            let p = predict_rttg(&g, &TrajectoryPredictor::new(kind, 7.5).unwrap());
            assert_eq!(p.edges, g.edges);
            for id in [0, 1] {
                assert_eq!(p.position(id), g.position(id));
            }
        }
    }

    #[test]
    fn rejects_non_positive_horizon() {
        assert!(TrajectoryPredictor::new(PredictorKind::ConstantVelocity, 0.0).is_err());
    }

    #[test]
    fn latency_at_rsu() {
        let g = graph(&[(0, Vec2::ZERO, Vec2::ZERO, Vec2::ZERO)]);
        let m = LatencyModel::default();
        let e = estimate_latency(&g, 0, &m, 0).unwrap();
        let floor = m.base_latency + m.payload_bits / m.bandwidth_near;
        assert!(e.connected);
        assert!(e.uplink >= floor && e.uplink >= m.base_latency);
        assert!(e.downlink >= floor);
    }

    #[test]
    fn out_of_range_is_unreachable() {
        let g = graph(&[(0, Vec2::new(300.5, 0.0), Vec2::ZERO, Vec2::ZERO)]);
        let e = estimate_latency(&g, 0, &LatencyModel::default(), 0).unwrap();
        assert!(!e.connected);
        assert_eq!(e.uplink, UNREACHABLE);
    }

    #[test]
    fn cell_edge_latency() {
        // B = 50e6 / (1 + 1·9) = 5e6; 0.05 + 32e6 / 5e6 = 6.45.
        let g = graph(&[(0, Vec2::new(300.0, 0.0), Vec2::ZERO, Vec2::ZERO)]);
        let m = LatencyModel { payload_bits: 32e6, ..quiet() };
        let e = estimate_latency(&g, 0, &m, 0).unwrap();
        assert!((e.uplink - 6.45).abs() < 1e-12);
        assert!((e.downlink - 6.45).abs() < 1e-12);
    }

    #[test]
    fn unknown_client() {
        let g = graph(&[]);
        assert_eq!(estimate_latency(&g, 4, &quiet(), 0), Err(Error::UnknownClient(4)));
    }

    #[test]
    fn jitter_is_keyed() {
        let m = LatencyModel { jitter_std: 0.01, seed: 5, ..Default::default() };
        let a = m.jitter(3, 1, Direction::Uplink);
        assert_eq!(a, m.jitter(3, 1, Direction::Uplink));
        assert_ne!(a, m.jitter(3, 1, Direction::Downlink));
        assert_ne!(a, m.jitter(4, 1, Direction::Uplink));
        assert!(a >= 0.0);
    }

    #[test]
    fn approaching_rsu_lowers_predicted_latency() {
        let g = graph(&[(0, Vec2::new(250.0, 0.0), Vec2::new(-10.0, 0.0), Vec2::ZERO)]);
        let pred = TrajectoryPredictor::new(PredictorKind::ConstantVelocity, 5.0).unwrap();
        let now = estimate_latency(&g, 0, &quiet(), 0).unwrap();
        let later = predicted_round_latency(&g, &pred, &quiet(), [0], 0).unwrap();
        assert!(later[&0].uplink < now.uplink);
    }

    #[test]
    fn empty_client_set() {
        let g = graph(&[(0, Vec2::ZERO, Vec2::ZERO, Vec2::ZERO)]);
        let pred = TrajectoryPredictor::new(PredictorKind::ConstantVelocity, 1.0).unwrap();
        assert!(predicted_round_latency(&g, &pred, &quiet(), [], 0).unwrap().is_empty());
    }
}
