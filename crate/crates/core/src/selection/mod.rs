//! Client selection: five strategies behind one interface.
//!
//! `greedy` takes every connected client, `gossip` a uniform sample, `data`
//! a random few from every gradient cluster, `network` the clients with the
//! lowest measured latency, and `contextual` the predicted-fastest members of
//! every gradient cluster (Fast-γ).

mod cluster;
mod profile;

pub use cluster::{cluster_by_gradient, ClusterAssignment};
pub use profile::{assign_universe, collect_profiles, profile_fingerprints, ProfileReport, ProfilingOutcome};

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::index;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fl::GradientFingerprint;
use crate::forecast::{LatencyEstimate, UNREACHABLE};
use crate::rng::{self, tag};
use crate::v2x::Rttg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum Strategy {
    #[cfg_attr(feature = "serde", serde(rename = "greedy"))]
    Greedy,
    #[cfg_attr(feature = "serde", serde(rename = "gossip"))]
    Gossip,
    #[cfg_attr(feature = "serde", serde(rename = "data"))]
    DataBased,
    #[cfg_attr(feature = "serde", serde(rename = "network"))]
    NetworkBased,
    #[cfg_attr(feature = "serde", serde(rename = "contextual"))]
    Contextual,
}

impl Strategy {
    pub const ALL: [Strategy; 5] =
        [Strategy::Greedy, Strategy::Gossip, Strategy::DataBased, Strategy::NetworkBased, Strategy::Contextual];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::Gossip => "gossip",
            Strategy::DataBased => "data",
            Strategy::NetworkBased => "network",
            Strategy::Contextual => "contextual",
        }
    }

    /// Whether the strategy groups clients by gradient fingerprints.
    pub fn uses_clusters(self) -> bool {
        matches!(self, Strategy::DataBased | Strategy::Contextual)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or(Error::InvalidConfig("strategy must be one of greedy, gossip, data, network, contextual"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SelectionParams {
    /// Fraction of the client universe picked per round.
    pub selection_rate: f64,
    /// Per-cluster fraction for Fast-γ.
    pub gamma: f64,
    pub cluster_count: usize,
    pub seed: u64,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self { selection_rate: 0.10, gamma: 0.10, cluster_count: 10, seed: 0 }
    }
}

impl SelectionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.selection_rate > 0.0 && self.selection_rate <= 1.0) {
            return Err(Error::InvalidConfig("selection_rate must be in (0, 1]"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig("gamma must be in (0, 1)"));
        }
        if self.cluster_count == 0 {
            return Err(Error::InvalidConfig("cluster_count must be positive"));
        }
        Ok(())
    }
}

/// Everything a strategy may look at when choosing a round's participants.
#[derive(Debug, Clone, Copy)]
pub struct RoundContext<'a> {
    pub round_index: u64,
    /// Every client id, connected or not.
    pub universe: &'a [u32],
    pub connected: &'a BTreeSet<u32>,
    /// Possibly stale.
    pub fingerprints: &'a BTreeMap<u32, GradientFingerprint>,
    /// Precomputed grouping; when absent it is derived from `fingerprints`.
    pub clusters: Option<&'a ClusterAssignment>,
    pub current_rttg: Option<&'a Rttg>,
    pub predicted_latency: &'a BTreeMap<u32, LatencyEstimate>,
    pub actual_latency: &'a BTreeMap<u32, LatencyEstimate>,
    pub params: SelectionParams,
}

/// Why a client was chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Rationale {
    pub cluster: Option<usize>,
    /// Round-trip seconds the decision relied on.
    pub latency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SelectionDecision {
    pub strategy: Strategy,
    /// Ascending client ids.
    pub selected: Vec<u32>,
    pub rationale: BTreeMap<u32, Rationale>,
    /// Set when nobody could be selected because nobody is connected.
    pub no_participants: bool,
}

impl SelectionDecision {
    fn build(strategy: Strategy, picks: impl IntoIterator<Item = (u32, Rationale)>) -> Self {
        let rationale: BTreeMap<u32, Rationale> = picks.into_iter().collect();
        let selected: Vec<u32> = rationale.keys().copied().collect();
        let no_participants = selected.is_empty();
        Self { strategy, selected, rationale, no_participants }
    }
}

fn round_trip(map: &BTreeMap<u32, LatencyEstimate>, id: u32) -> f64 {
    map.get(&id).map_or(UNREACHABLE, LatencyEstimate::round_trip)
}

/// `round(rate · n)`, but at least one so that a tiny universe still trains.
fn quota(rate: f64, n: usize) -> usize {
    (libm::round(rate * n as f64) as usize).max(1)
}

const NO_REASON: Rationale = Rationale { cluster: None, latency: None };

pub fn select_greedy(ctx: &RoundContext<'_>) -> SelectionDecision {
    SelectionDecision::build(Strategy::Greedy, ctx.connected.iter().map(|&id| (id, NO_REASON)))
}

pub fn select_gossip(ctx: &RoundContext<'_>) -> SelectionDecision {
    let pool: Vec<u32> = ctx.connected.iter().copied().collect();
    let k = quota(ctx.params.selection_rate, ctx.universe.len()).min(pool.len());
    let mut r = rng::stream(ctx.params.seed, &[tag::GOSSIP, ctx.round_index]);
    let picks = index::sample(&mut r, pool.len(), k);
    SelectionDecision::build(Strategy::Gossip, picks.into_iter().map(|i| (pool[i], NO_REASON)))
}

fn resolve_clusters(ctx: &RoundContext<'_>) -> Result<ClusterAssignment> {
    match ctx.clusters {
        Some(c) => Ok(c.clone()),
        None => assign_universe(ctx.fingerprints, &BTreeMap::new(), ctx.universe, ctx.params.cluster_count),
    }
}

/// Connected members of each cluster, ascending.
fn connected_members(ctx: &RoundContext<'_>, clusters: &ClusterAssignment) -> Vec<(usize, usize, Vec<u32>)> {
    clusters
        .members()
        .into_iter()
        .enumerate()
        .map(|(c, m)| {
            let size = m.len();
            (c, size, m.into_iter().filter(|id| ctx.connected.contains(id)).collect())
        })
        .collect()
}

pub fn select_data_based(ctx: &RoundContext<'_>) -> Result<SelectionDecision> {
    let clusters = resolve_clusters(ctx)?;
    let mut picks = Vec::new();
    for (c, size, pool) in connected_members(ctx, &clusters) {
        if pool.is_empty() {
            continue;
        }
        let k = quota(ctx.params.selection_rate, size).min(pool.len());
        let mut r = rng::stream(ctx.params.seed, &[tag::DATA, ctx.round_index, c as u64]);
        for i in index::sample(&mut r, pool.len(), k) {
            picks.push((pool[i], Rationale { cluster: Some(c), latency: None }));
        }
    }
    Ok(SelectionDecision::build(Strategy::DataBased, picks))
}

fn fastest(pool: &[u32], latency: &BTreeMap<u32, LatencyEstimate>, k: usize) -> Vec<(u32, f64)> {
    let mut ranked: Vec<(f64, u32)> = pool.iter().map(|&id| (round_trip(latency, id), id)).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked.into_iter().take(k).map(|(l, id)| (id, l)).collect()
}

pub fn select_network_based(ctx: &RoundContext<'_>) -> SelectionDecision {
    let pool: Vec<u32> = ctx.connected.iter().copied().collect();
    let k = quota(ctx.params.selection_rate, ctx.universe.len());
    let picks = fastest(&pool, ctx.actual_latency, k);
    SelectionDecision::build(
        Strategy::NetworkBased,
        picks.into_iter().map(|(id, l)| (id, Rationale { cluster: None, latency: Some(l) })),
    )
}

/// Fast-γ size for a cluster: `max(1, floor(γ · size))`.
pub fn fast_gamma_count(gamma: f64, cluster_size: usize) -> usize {
    // The epsilon keeps products like 0.29 * 100 from flooring to 28.
    (libm::floor(gamma * cluster_size as f64 + 1e-9) as usize).max(1)
}

/// Fast-γ within each cluster. Members the forecast places out of every
/// RSU's range have no latency to rank and are passed over, unless nobody
/// connected is predicted reachable at all.
pub fn select_contextual(ctx: &RoundContext<'_>) -> Result<SelectionDecision> {
    let clusters = resolve_clusters(ctx)?;
    let pools = connected_members(ctx, &clusters);
    let reachable = |id: &u32| round_trip(ctx.predicted_latency, *id) < UNREACHABLE;
    let any_reachable = pools.iter().any(|(_, _, pool)| pool.iter().any(reachable));
    let mut picks = Vec::new();
    for (c, size, mut pool) in pools {
        if any_reachable {
            pool.retain(reachable);
        }
        let k = fast_gamma_count(ctx.params.gamma, size);
        for (id, l) in fastest(&pool, ctx.predicted_latency, k) {
            picks.push((id, Rationale { cluster: Some(c), latency: Some(l) }));
        }
    }
    Ok(SelectionDecision::build(Strategy::Contextual, picks))
}

/// Dispatches to the strategy's policy.
pub fn select(strategy: Strategy, ctx: &RoundContext<'_>) -> Result<SelectionDecision> {
    ctx.params.validate()?;
    match strategy {
        Strategy::Greedy => Ok(select_greedy(ctx)),
        Strategy::Gossip => Ok(select_gossip(ctx)),
        Strategy::DataBased => select_data_based(ctx),
        Strategy::NetworkBased => Ok(select_network_based(ctx)),
        Strategy::Contextual => select_contextual(ctx),
    }
}
