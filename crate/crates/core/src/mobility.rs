//! Synthetic vehicle mobility.
//!
//! Three scenario kinds are provided: vehicles circulating on a ring road,
//! vehicles hopping between random intersections of a street grid, and parked
//! vehicles. State advances by semi-implicit Euler on a fixed step; all
//! randomness is keyed by `(seed, vehicle, event)` so trajectories replay
//! bit-for-bit.

use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use rand::Rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Rect, Vec2};
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct VehicleState {
    pub vehicle_id: u32,
    pub position: Vec2,
    pub velocity: Vec2,
    pub acceleration: Vec2,
    /// Radians, counter-clockwise from +x.
    pub heading: f64,
    /// Simulated seconds.
    pub timestamp: f64,
}

impl VehicleState {
    pub fn at_rest(vehicle_id: u32, position: Vec2) -> Self {
        Self {
            vehicle_id,
            position,
            velocity: Vec2::ZERO,
            acceleration: Vec2::ZERO,
            heading: 0.0,
            timestamp: 0.0,
        }
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite()
            && self.velocity.is_finite()
            && self.acceleration.is_finite()
            && self.heading.is_finite()
            && self.timestamp.is_finite()
    }
}

/// One semi-implicit Euler step: `v += a·dt`, then `p += v·dt`.
///
/// Velocity is capped at `v_max` after the update.
pub fn integrate(state: &VehicleState, dt: f64, v_max: f64) -> VehicleState {
    let velocity = (state.velocity + state.acceleration * dt).clamp_norm(v_max);
    let position = state.position + velocity * dt;
    VehicleState {
        position,
        velocity,
        heading: heading_of(velocity, state.heading),
        timestamp: state.timestamp + dt,
        ..*state
    }
}

fn heading_of(velocity: Vec2, fallback: f64) -> f64 {
    if velocity.norm() > 0.0 {
        libm::atan2(velocity.y, velocity.x)
    } else {
        fallback
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MobilityKind {
    #[default]
    RingRoad,
    GridRandomWaypoint,
    Stationary,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ScenarioConfig {
    pub vehicle_count: usize,
    pub mobility: MobilityKind,
    pub bounds: Rect,
    /// Explicit RSU sites. When empty, `rsu_count` sites are spread evenly
    /// around the ring (ring road) or over the grid (other kinds).
    pub rsu_positions: Vec<Vec2>,
    pub rsu_count: usize,
    /// Ring road radius in meters, centered on the bounds.
    pub ring_radius: f64,
    /// Per-vehicle cruise speeds are drawn uniformly from this range, m/s.
    pub speed_min: f64,
    pub speed_max: f64,
    pub v_max: f64,
    pub a_max: f64,
    /// Integration step, seconds.
    pub dt: f64,
    /// Street spacing for the waypoint grid, meters.
    pub grid_spacing: f64,
    /// Initial positions for the stationary and waypoint kinds; drawn inside
    /// the bounds when empty.
    pub initial_positions: Vec<Vec2>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            vehicle_count: 100,
            mobility: MobilityKind::RingRoad,
            bounds: Rect::new(Vec2::new(-1000.0, -1000.0), Vec2::new(1000.0, 1000.0)),
            rsu_positions: Vec::new(),
            rsu_count: 6,
            ring_radius: 800.0,
            speed_min: 8.0,
            speed_max: 16.0,
            v_max: 40.0,
            a_max: 5.0,
            dt: 0.1,
            grid_spacing: 200.0,
            initial_positions: Vec::new(),
            seed: 1,
        }
    }
}

/// The immutable description of a scenario: initial vehicle states and
/// infrastructure.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub vehicles: Vec<VehicleState>,
    pub rsu_positions: Vec<Vec2>,
    pub bounds: Rect,
    pub mobility_kind: MobilityKind,
    pub seed: u64,
    params: Params,
    motions: Vec<Motion>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Params {
    center: Vec2,
    ring_radius: f64,
    v_max: f64,
    a_max: f64,
    dt: f64,
    grid_spacing: f64,
}

/// Per-vehicle motion program.
#[derive(Debug, Clone, PartialEq)]
enum Motion {
    Ring { angle: f64, speed: f64 },
    Waypoint { target: Vec2, cruise: f64, retargets: u64 },
    Parked,
}

impl Scenario {
    pub fn vehicle_count(&self) -> usize {
        self.vehicles.len()
    }

    pub fn dt(&self) -> f64 {
        self.params.dt
    }

    pub fn v_max(&self) -> f64 {
        self.params.v_max
    }

    pub fn ring_center(&self) -> Vec2 {
        self.params.center
    }

    pub fn ring_radius(&self) -> f64 {
        self.params.ring_radius
    }
}

pub fn build_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    if config.vehicle_count == 0 {
        return Err(Error::InvalidConfig("vehicle_count must be at least 1"));
    }
    if !(config.bounds.area() > 0.0) {
        return Err(Error::InvalidConfig("bounds must have positive area"));
    }
    if !(config.dt > 0.0) || !(config.v_max > 0.0) || !(config.a_max > 0.0) {
        return Err(Error::InvalidConfig("dt, v_max and a_max must be positive"));
    }
    if config.speed_min < 0.0 || config.speed_max < config.speed_min {
        return Err(Error::InvalidConfig("speed range must satisfy 0 <= min <= max"));
    }
    let bounds = config.bounds;
    let center = bounds.center();
    let params = Params {
        center,
        ring_radius: config.ring_radius,
        v_max: config.v_max,
        a_max: config.a_max,
        dt: config.dt,
        grid_spacing: config.grid_spacing,
    };

    if config.mobility == MobilityKind::RingRoad {
        let r = config.ring_radius;
        if !(r > 0.0)
            || !bounds.contains(center + Vec2::new(r, r))
            || !bounds.contains(center - Vec2::new(r, r))
        {
            return Err(Error::InvalidConfig("ring must have positive radius and fit in bounds"));
        }
    }
    if config.mobility == MobilityKind::GridRandomWaypoint && !(config.grid_spacing > 0.0) {
        return Err(Error::InvalidConfig("grid_spacing must be positive"));
    }
    if !config.initial_positions.is_empty() {
        if config.initial_positions.len() != config.vehicle_count {
            return Err(Error::InvalidConfig("initial_positions must list every vehicle"));
        }
        if config.initial_positions.iter().any(|p| !bounds.contains(*p)) {
            return Err(Error::InvalidConfig("initial positions must lie within bounds"));
        }
    }

    let rsu_positions = if config.rsu_positions.is_empty() {
        default_rsus(config, center)
    } else {
        config.rsu_positions.clone()
    };
    if rsu_positions.is_empty() {
        return Err(Error::InvalidConfig("at least one RSU is required"));
    }

    let (vehicles, motions) = initial_motions(config, &params)
        .into_iter()
        .enumerate()
        .map(|(i, (pos, motion))| (kinematics(i as u32, pos, &motion, &params, 0.0), motion))
        .unzip();
    Ok(Scenario {
        vehicles,
        rsu_positions,
        bounds,
        mobility_kind: config.mobility,
        seed: config.seed,
        params,
        motions,
    })
}

fn default_rsus(config: &ScenarioConfig, center: Vec2) -> Vec<Vec2> {
    let n = config.rsu_count;
    match config.mobility {
        MobilityKind::RingRoad => (0..n)
            .map(|k| {
                let a = TAU * k as f64 / n as f64;
                center + Vec2::new(libm::cos(a), libm::sin(a)) * config.ring_radius
            })
            .collect(),
        _ => {
            // Spread over a square lattice covering the bounds.
            let side = libm::ceil(libm::sqrt(n as f64)) as usize;
            let b = config.bounds;
            (0..n)
                .map(|k| {
                    let (i, j) = (k % side, k / side);
                    Vec2::new(
                        b.min.x + b.width() * (i as f64 + 0.5) / side as f64,
                        b.min.y + b.height() * (j as f64 + 0.5) / side as f64,
                    )
                })
                .collect()
        }
    }
}

fn cruise_speed(config: &ScenarioConfig, vehicle: u32) -> f64 {
    let u = rng::unit(config.seed, &[tag::MOBILITY, 0, vehicle as u64]);
    config.speed_min + (config.speed_max - config.speed_min) * u
}

fn initial_motions(config: &ScenarioConfig, p: &Params) -> Vec<(Vec2, Motion)> {
    let n = config.vehicle_count;
    let random_position = |i: usize| {
        if let Some(pos) = config.initial_positions.get(i) {
            return *pos;
        }
        let mut r = rng::stream(config.seed, &[tag::MOBILITY, 1, i as u64]);
        let b = config.bounds;
        Vec2::new(
            b.min.x + b.width() * r.random::<f64>(),
            b.min.y + b.height() * r.random::<f64>(),
        )
    };
    (0..n)
        .map(|i| match config.mobility {
            MobilityKind::RingRoad => {
                let angle = TAU * i as f64 / n as f64;
                // Centripetal acceleration s²/R must respect a_max.
                let cap = p.v_max.min(libm::sqrt(p.a_max * p.ring_radius));
                let speed = cruise_speed(config, i as u32).min(cap);
                let pos = p.center + Vec2::new(libm::cos(angle), libm::sin(angle)) * p.ring_radius;
                (pos, Motion::Ring { angle, speed })
            }
            MobilityKind::GridRandomWaypoint => {
                let pos = random_position(i);
                let target = grid_waypoint(config.seed, &config.bounds, p.grid_spacing, i as u32, 0);
                let cruise = cruise_speed(config, i as u32).min(p.v_max);
                (pos, Motion::Waypoint { target, cruise, retargets: 0 })
            }
            MobilityKind::Stationary => (random_position(i), Motion::Parked),
        })
        .collect()
}

fn grid_waypoint(seed: u64, bounds: &Rect, spacing: f64, vehicle: u32, count: u64) -> Vec2 {
    let nx = (libm::floor(bounds.width() / spacing) as u64).max(1);
    let ny = (libm::floor(bounds.height() / spacing) as u64).max(1);
    let mut r = rng::stream(seed, &[tag::MOBILITY, 2, vehicle as u64, count]);
    let i = r.random_range(0..=nx);
    let j = r.random_range(0..=ny);
    bounds.clamp(Vec2::new(
        bounds.min.x + i as f64 * spacing,
        bounds.min.y + j as f64 * spacing,
    ))
}

fn kinematics(id: u32, position: Vec2, motion: &Motion, p: &Params, t: f64) -> VehicleState {
    match motion {
        Motion::Ring { angle, speed } => {
            let (s, c) = (libm::sin(*angle), libm::cos(*angle));
            let velocity = Vec2::new(-s, c) * *speed;
            VehicleState {
                vehicle_id: id,
                position: p.center + Vec2::new(c, s) * p.ring_radius,
                velocity,
                acceleration: Vec2::new(-c, -s) * (speed * speed / p.ring_radius),
                heading: wrap_angle(angle + 0.5 * PI),
                timestamp: t,
            }
        }
        Motion::Waypoint { .. } | Motion::Parked => VehicleState {
            vehicle_id: id,
            position,
            velocity: Vec2::ZERO,
            acceleration: Vec2::ZERO,
            heading: 0.0,
            timestamp: t,
        },
    }
}

fn wrap_angle(a: f64) -> f64 {
    let w = a % TAU;
    if w < 0.0 {
        w + TAU
    } else {
        w
    }
}

/// The evolving state of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Mobility {
    scenario: Scenario,
    states: Vec<VehicleState>,
    motions: Vec<Motion>,
    tick: u64,
}

impl Mobility {
    pub fn new(scenario: Scenario) -> Self {
        Self { states: scenario.vehicles.clone(), motions: scenario.motions.clone(), scenario, tick: 0 }
    }

    pub fn from_config(config: &ScenarioConfig) -> Result<Self> {
        build_scenario(config).map(Self::new)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn states(&self) -> &[VehicleState] {
        &self.states
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.scenario.params.dt
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Advances every vehicle by one integration step.
    pub fn advance(&mut self) {
        let p = self.scenario.params;
        let dt = p.dt;
        let bounds = self.scenario.bounds;
        let seed = self.scenario.seed;
        let t = (self.tick + 1) as f64 * dt;
        for (state, motion) in self.states.iter_mut().zip(self.motions.iter_mut()) {
            match motion {
                Motion::Ring { angle, speed } => {
                    *speed = speed.min(p.v_max);
                    *angle = wrap_angle(*angle + *speed / p.ring_radius * dt);
                    *state = kinematics(state.vehicle_id, state.position, motion, &p, t);
                }
                Motion::Waypoint { target, cruise, retargets } => {
                    let to_target = *target - state.position;
                    let dist = to_target.norm();
                    let desired = if dist <= *cruise * dt || dist == 0.0 {
                        to_target * (1.0 / dt)
                    } else {
                        to_target * (*cruise / dist)
                    };
                    let accel = ((desired - state.velocity) * (1.0 / dt)).clamp_norm(p.a_max);
                    let mut next = integrate(&VehicleState { acceleration: accel, ..*state }, dt, p.v_max);
                    next.position = bounds.clamp(next.position);
                    next.timestamp = t;
                    *state = next;
                    if state.position.distance(*target) <= (0.5 * *cruise * dt).max(0.5) {
                        *retargets += 1;
                        *target = grid_waypoint(seed, &bounds, p.grid_spacing, state.vehicle_id, *retargets);
                    }
                }
                Motion::Parked => {
                    state.timestamp = t;
                }
            }
        }
        self.tick += 1;
    }

    /// Advances by whole integration steps until the clock reaches `t` (within
    /// half a step). Returns the number of steps taken.
    pub fn advance_to(&mut self, t: f64) -> u64 {
        let dt = self.scenario.params.dt;
        let target_tick = libm::round(t / dt).max(0.0) as u64;
        let mut steps = 0;
        while self.tick < target_tick {
            self.advance();
            steps += 1;
        }
        steps
    }

    /// Ground-truth states `offset` seconds ahead, without mutating `self`.
    pub fn peek(&self, offset: f64) -> Vec<VehicleState> {
        let mut ahead = self.clone();
        ahead.advance_to(self.time() + offset);
        ahead.states
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(p: Vec2, v: Vec2, a: Vec2) -> VehicleState {
        VehicleState { position: p, velocity: v, acceleration: a, ..VehicleState::at_rest(0, p) }
    }

    #[test]
    fn uniform_motion_step() {
        let s = integrate(&state(Vec2::ZERO, Vec2::new(10.0, 0.0), Vec2::ZERO), 1.0, 40.0);
        assert_eq!(s.position, Vec2::new(10.0, 0.0));
    }

    #[test]
    fn semi_implicit_euler_step() {
        let s = integrate(&state(Vec2::ZERO, Vec2::ZERO, Vec2::new(2.0, 0.0)), 1.0, 40.0);
        assert_eq!(s.velocity, Vec2::new(2.0, 0.0));
        assert_eq!(s.position, Vec2::new(2.0, 0.0));
    }

    #[test]
    fn speed_capped_by_integrator() {
        let s = integrate(&state(Vec2::ZERO, Vec2::new(39.0, 0.0), Vec2::new(5.0, 0.0)), 1.0, 40.0);
        assert!((s.speed() - 40.0).abs() < 1e-12);
    }

    #[test]
    fn ring_spacing_is_uniform() {
        let cfg = ScenarioConfig { vehicle_count: 100, ..Default::default() };
        let sc = build_scenario(&cfg).unwrap();
        let c = sc.ring_center();
        let angles: Vec<f64> = sc
            .vehicles
            .iter()
            .map(|v| wrap_angle(libm::atan2(v.position.y - c.y, v.position.x - c.x)))
            .collect();
        for (i, a) in angles.iter().enumerate() {
            let expected = TAU * i as f64 / 100.0;
            let diff = (a - expected).abs().min(TAU - (a - expected).abs());
            assert!(diff < 1e-9, "vehicle {i}: {a} vs {expected}");
        }
    }

    #[test]
    fn single_stationary_vehicle_never_moves() {
        let cfg = ScenarioConfig {
            vehicle_count: 1,
            mobility: MobilityKind::Stationary,
            initial_positions: alloc::vec![Vec2::ZERO],
            ..Default::default()
        };
        let mut m = Mobility::from_config(&cfg).unwrap();
        for _ in 0..50 {
            m.advance();
        }
        let s = m.states()[0];
        assert_eq!(s.position, Vec2::ZERO);
        assert_eq!(s.velocity, Vec2::ZERO);
    }

    #[test]
    fn rejects_invalid_config() {
        let zero = ScenarioConfig { vehicle_count: 0, ..Default::default() };
        assert!(matches!(build_scenario(&zero), Err(Error::InvalidConfig(_))));
        let flat = ScenarioConfig {
            bounds: Rect::new(Vec2::ZERO, Vec2::new(10.0, 0.0)),
            mobility: MobilityKind::Stationary,
            ..Default::default()
        };
        assert!(matches!(build_scenario(&flat), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn waypoint_stays_in_bounds_and_under_cap() {
        let cfg = ScenarioConfig {
            vehicle_count: 5,
            mobility: MobilityKind::GridRandomWaypoint,
            speed_min: 20.0,
            speed_max: 40.0,
            seed: 42,
            ..Default::default()
        };
        let mut m = Mobility::from_config(&cfg).unwrap();
        for _ in 0..2000 {
            m.advance();
            for s in m.states() {
                assert!(cfg.bounds.contains(s.position));
                assert!(s.speed() <= cfg.v_max + 1e-9);
            }
        }
    }
}
