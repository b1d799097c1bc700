//! CAM/CPM generation and server-side fusion into a road traffic topology
//! graph (RTTG).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::mobility::VehicleState;
use crate::rng::{self, tag};

/// Cooperative awareness message: a vehicle's own state.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct CamRecord {
    pub sender_id: u32,
    pub state: VehicleState,
    pub generation_time: f64,
}

/// Collective perception message: states of objects the sender observed.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct CpmRecord {
    pub sender_id: u32,
    pub perceived: Vec<VehicleState>,
    pub generation_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum V2xMessage {
    Cam(CamRecord),
    Cpm(CpmRecord),
}

impl V2xMessage {
    pub fn generation_time(&self) -> f64 {
        match self {
            V2xMessage::Cam(c) => c.generation_time,
            V2xMessage::Cpm(c) => c.generation_time,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct MessageRates {
    pub cam_period: f64,
    pub cpm_period: f64,
    /// CPM perception radius, meters.
    pub sensor_range: f64,
    /// Probability that any single record is lost before reaching the server.
    pub msg_loss: f64,
    /// Time grid the emitter is sampled on; phase offsets are multiples of it.
    pub time_step: f64,
    pub seed: u64,
}

impl Default for MessageRates {
    fn default() -> Self {
        Self { cam_period: 0.1, cpm_period: 0.2, sensor_range: 80.0, msg_loss: 0.0, time_step: 0.1, seed: 0 }
    }
}

impl MessageRates {
    fn ticks(&self, period: f64) -> u64 {
        (libm::round(period / self.time_step) as u64).max(1)
    }

    /// Whether `vehicle` emits a message with the given period at grid tick `tick`.
    fn due(&self, vehicle: u32, kind: u64, period: f64, tick: u64) -> bool {
        let period_ticks = self.ticks(period);
        let phase = rng::derive(self.seed, &[tag::MESSAGE_PHASE, kind, vehicle as u64]) % period_ticks;
        tick >= phase && (tick - phase) % period_ticks == 0
    }

    fn lost(&self, vehicle: u32, kind: u64, tick: u64) -> bool {
        self.msg_loss > 0.0 && rng::unit(self.seed, &[tag::MESSAGE_LOSS, kind, vehicle as u64, tick]) < self.msg_loss
    }
}

const KIND_CAM: u64 = 0;
const KIND_CPM: u64 = 1;

/// Generates the CAMs and CPMs sent at time `now`.
///
/// `now` is snapped to the emitter's time grid. A vehicle emits a CAM when the
/// grid tick matches its seeded phase modulo the CAM period; CPMs likewise,
/// carrying every other vehicle within `sensor_range`.
pub fn emit_messages(
    states: &[VehicleState],
    now: f64,
    rates: &MessageRates,
) -> (Vec<CamRecord>, Vec<CpmRecord>) {
    let tick = libm::round(now / rates.time_step).max(0.0) as u64;
    let mut cams = Vec::new();
    let mut cpms = Vec::new();
    let range2 = rates.sensor_range * rates.sensor_range;
    for s in states {
        let id = s.vehicle_id;
        if rates.due(id, KIND_CAM, rates.cam_period, tick) && !rates.lost(id, KIND_CAM, tick) {
            cams.push(CamRecord { sender_id: id, state: *s, generation_time: s.timestamp });
        }
        if rates.due(id, KIND_CPM, rates.cpm_period, tick) && !rates.lost(id, KIND_CPM, tick) {
            let perceived = states
                .iter()
                .filter(|o| {
                    let d = o.position - s.position;
                    o.vehicle_id != id && d.dot(d) <= range2
                })
                .copied()
                .collect();
            cpms.push(CpmRecord { sender_id: id, perceived, generation_time: s.timestamp });
        }
    }
    (cams, cpms)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Source {
    Cpm,
    Cam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct NodeEntry {
    pub state: VehicleState,
    pub last_update: f64,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct FusionConfig {
    /// Entries older than this are expired, seconds.
    pub ttl: f64,
    /// V2V radio range used for RTTG edges, meters.
    pub radio_range: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { ttl: 1.0, radio_range: 150.0 }
    }
}

/// Fused snapshot of the vehicular network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Rttg {
    pub nodes: BTreeMap<u32, NodeEntry>,
    pub rsu_nodes: Vec<Vec2>,
    /// Unordered pairs stored as `(low, high)`.
    pub edges: BTreeSet<(u32, u32)>,
    pub snapshot_time: f64,
    pub radio_range: f64,
}

impl Rttg {
    pub fn empty(rsu_nodes: Vec<Vec2>, radio_range: f64) -> Self {
        Self { rsu_nodes, radio_range, ..Default::default() }
    }

    pub fn position(&self, id: u32) -> Option<Vec2> {
        self.nodes.get(&id).map(|n| n.state.position)
    }

    pub fn is_adjacent(&self, a: u32, b: u32) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn neighbors(&self, id: u32) -> impl Iterator<Item = u32> + '_ {
        self.edges.iter().filter_map(move |&(a, b)| {
            if a == id {
                Some(b)
            } else if b == id {
                Some(a)
            } else {
                None
            }
        })
    }

    /// Rebuilds the edge set from node positions.
    pub fn recompute_edges(&mut self) {
        let r2 = self.radio_range * self.radio_range;
        let pts: Vec<(u32, Vec2)> = self.nodes.iter().map(|(&id, n)| (id, n.state.position)).collect();
        self.edges.clear();
        for (i, &(a, pa)) in pts.iter().enumerate() {
            for &(b, pb) in &pts[i + 1..] {
                let d = pa - pb;
                if d.dot(d) <= r2 {
                    self.edges.insert((a, b));
                }
            }
        }
    }
}

/// Counters for what fusion accepted and rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FusionStats {
    pub cams: usize,
    pub cpms: usize,
    pub observations: usize,
    pub malformed: usize,
    pub expired: usize,
}

fn cam_is_valid(c: &CamRecord, now: f64) -> bool {
    c.state.vehicle_id == c.sender_id
        && c.state.is_finite()
        && c.generation_time == c.state.timestamp
        && c.generation_time <= now
}

fn cpm_is_valid(c: &CpmRecord, now: f64) -> bool {
    c.generation_time.is_finite()
        && c.generation_time <= now
        && c.perceived
            .iter()
            .all(|s| s.vehicle_id != c.sender_id && s.is_finite() && s.timestamp <= c.generation_time)
}

/// Whether a candidate observation should replace the current entry.
fn supersedes(candidate: &NodeEntry, current: &NodeEntry) -> bool {
    match candidate.last_update.partial_cmp(&current.last_update) {
        Some(core::cmp::Ordering::Greater) => true,
        Some(core::cmp::Ordering::Equal) => candidate.source > current.source,
        _ => false,
    }
}

/// Fuses a batch of messages into the prior graph.
///
/// Per vehicle the observation with the latest timestamp wins, a CAM beating
/// a CPM on equal timestamps. Entries older than `now - ttl` are dropped and
/// edges are recomputed from the fused positions. Malformed records are
/// skipped and counted.
pub fn fuse(messages: &[V2xMessage], now: f64, prior: &Rttg, config: &FusionConfig) -> (Rttg, FusionStats) {
    let mut stats = FusionStats::default();
    let mut nodes = prior.nodes.clone();
    let mut offer = |entry: NodeEntry| {
        let id = entry.state.vehicle_id;
        match nodes.get(&id) {
            Some(cur) if !supersedes(&entry, cur) => {}
            _ => {
                nodes.insert(id, entry);
            }
        }
    };
    for msg in messages {
        match msg {
            V2xMessage::Cam(c) => {
                if !cam_is_valid(c, now) {
                    stats.malformed += 1;
                    continue;
                }
                stats.cams += 1;
                offer(NodeEntry { state: c.state, last_update: c.state.timestamp, source: Source::Cam });
            }
            V2xMessage::Cpm(c) => {
                if !cpm_is_valid(c, now) {
                    stats.malformed += 1;
                    continue;
                }
                stats.cpms += 1;
                for s in &c.perceived {
                    stats.observations += 1;
                    offer(NodeEntry { state: *s, last_update: s.timestamp, source: Source::Cpm });
                }
            }
        }
    }
    let horizon = now - config.ttl;
    let before = nodes.len();
    nodes.retain(|_, n| n.last_update >= horizon);
    stats.expired = before - nodes.len();

    let mut rttg = Rttg {
        nodes,
        rsu_nodes: prior.rsu_nodes.clone(),
        edges: BTreeSet::new(),
        snapshot_time: now,
        radio_range: config.radio_range,
    };
    rttg.recompute_edges();
    (rttg, stats)
}

/// Wraps CAMs and CPMs into one message stream.
pub fn into_stream(cams: Vec<CamRecord>, cpms: Vec<CpmRecord>) -> Vec<V2xMessage> {
    cams.into_iter().map(V2xMessage::Cam).chain(cpms.into_iter().map(V2xMessage::Cpm)).collect()
}
