use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use super::cluster::{cluster_by_gradient, dot, unit, ClusterAssignment};
use crate::error::{Error, Result};
use crate::fl::{local_train_epochs, ClientData, ComputeModel, GradientFingerprint, ModelParameters, TrainingConfig};
use crate::forecast::LatencyEstimate;

/// One client's answer to a profiling request.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileReport {
    pub fingerprint: GradientFingerprint,
    /// Simulated seconds the client spent training.
    pub compute_time: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProfilingOutcome {
    /// Fingerprints that arrived before the deadline.
    pub fingerprints: BTreeMap<u32, GradientFingerprint>,
    /// Asked clients whose report missed the deadline or never left.
    pub unprofiled: Vec<u32>,
    /// Simulated seconds the profiling exchange occupied.
    pub window: f64,
}

/// Applies the report deadline to finished profiling runs.
///
/// A fingerprint counts iff `compute_time + uplink <= deadline`. Clients whose
/// downlink is unreachable never receive the request and do not hold up the
/// window; every other client occupies `downlink + min(compute + uplink,
/// deadline)`.
pub fn collect_profiles(
    reports: impl IntoIterator<Item = ProfileReport>,
    deadline: f64,
    actual_latency: &BTreeMap<u32, LatencyEstimate>,
) -> Result<ProfilingOutcome> {
    if !(deadline > 0.0) {
        return Err(Error::InvalidConfig("profiling deadline must be positive"));
    }
    let mut out = ProfilingOutcome::default();
    for r in reports {
        let id = r.fingerprint.client_id;
        let lat = actual_latency.get(&id).copied().unwrap_or_else(|| LatencyEstimate::unreachable(id));
        if !lat.downlink.is_finite() {
            out.unprofiled.push(id);
            continue;
        }
        let report_time = r.compute_time + lat.uplink;
        out.window = out.window.max(lat.downlink + report_time.min(deadline));
        if report_time <= deadline {
            out.fingerprints.insert(id, r.fingerprint);
        } else {
            out.unprofiled.push(id);
        }
    }
    out.unprofiled.sort_unstable();
    Ok(out)
}

/// Runs one epoch of local training on every client and keeps the deltas
/// that beat the deadline.
pub fn profile_fingerprints(
    global: &ModelParameters,
    clients: &[ClientData<'_>],
    deadline: f64,
    actual_latency: &BTreeMap<u32, LatencyEstimate>,
    training: &TrainingConfig,
    compute: &ComputeModel,
    seed: u64,
) -> Result<ProfilingOutcome> {
    let mut reports = Vec::with_capacity(clients.len());
    for &c in clients {
        let (local, n) = local_train_epochs(global, c, training, 1, seed)?;
        reports.push(ProfileReport {
            fingerprint: GradientFingerprint::from_update(c.client_id, global, &local),
            compute_time: compute.training_time(training, n, 1),
        });
    }
    collect_profiles(reports, deadline, actual_latency)
}

/// Assigns every client in `universe` to a cluster.
///
/// Profiled clients are clustered by gradient; with fewer of them than
/// `cluster_count`, each gets its own cluster. Other clients join the cluster
/// whose mean unit delta is most aligned with a fingerprint they reported
/// later (`late`), or are dealt round-robin across clusters in id order if
/// they never reported. With nothing profiled at all, the whole universe is
/// dealt round-robin into `cluster_count` clusters.
pub fn assign_universe(
    profiled: &BTreeMap<u32, GradientFingerprint>,
    late: &BTreeMap<u32, GradientFingerprint>,
    universe: &[u32],
    cluster_count: usize,
) -> Result<ClusterAssignment> {
    if cluster_count == 0 {
        return Err(Error::InvalidConfig("cluster_count must be positive"));
    }
    let ids: BTreeSet<u32> = universe.iter().copied().collect();
    if profiled.is_empty() {
        let assignment = ids.iter().enumerate().map(|(i, &id)| (id, i % cluster_count)).collect();
        let mut out = ClusterAssignment { assignment, cluster_count };
        out.renumber();
        return Ok(out);
    }

    let fps: Vec<GradientFingerprint> = profiled.values().cloned().collect();
    let mut out = match cluster_by_gradient(&fps, cluster_count) {
        Err(Error::TooFewClients { .. }) => ClusterAssignment::singletons(profiled.keys().copied()),
        other => other?,
    };

    let dim = fps[0].delta.len();
    let mut centroids = alloc::vec![alloc::vec![0.0f64; dim]; out.cluster_count];
    for fp in &fps {
        if let Some(u) = unit(fp) {
            let c = &mut centroids[out.assignment[&fp.client_id]];
            c.iter_mut().zip(&u).for_each(|(a, b)| *a += b);
        }
    }

    let mut dealt = 0usize;
    for &id in &ids {
        if out.assignment.contains_key(&id) {
            continue;
        }
        let nearest = late.get(&id).filter(|f| f.delta.len() == dim).and_then(unit).and_then(|u| {
            let mut best: Option<(f64, usize)> = None;
            for (c, cen) in centroids.iter().enumerate() {
                let n = libm::sqrt(dot(cen, cen));
                if n == 0.0 {
                    continue;
                }
                let score = dot(cen, &u) / n;
                if best.map_or(true, |(s, _)| score > s) {
                    best = Some((score, c));
                }
            }
            best.map(|(_, c)| c)
        });
        let c = nearest.unwrap_or_else(|| {
            dealt += 1;
            (dealt - 1) % out.cluster_count
        });
        out.assignment.insert(id, c);
    }
    out.renumber();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn fp(id: u32, delta: &[f32]) -> GradientFingerprint {
        GradientFingerprint::new(id, delta.to_vec())
    }

    fn report(id: u32, compute: f64) -> ProfileReport {
        ProfileReport { fingerprint: fp(id, &[1.0, id as f32]), compute_time: compute }
    }

    #[test]
    fn deadline_filters_stragglers() {
        let lat: BTreeMap<u32, LatencyEstimate> = [
            (0, LatencyEstimate::from_parts(0, 0.5, 0.1)),
            (1, LatencyEstimate::from_parts(1, 6.45, 0.2)),
            (2, LatencyEstimate::unreachable(2)),
        ]
        .into_iter()
        .collect();
        let out = collect_profiles([report(0, 1.0), report(1, 1.0), report(2, 1.0)], 5.0, &lat).unwrap();
        assert_eq!(out.fingerprints.keys().copied().collect::<Vec<_>>(), vec![0]);
        assert_eq!(out.unprofiled, vec![1, 2]);
        assert!((out.window - 5.2).abs() < 1e-12);

        let out = collect_profiles([report(0, 1.0), report(1, 1.0)], f64::INFINITY, &lat).unwrap();
        assert_eq!(out.fingerprints.len(), 2);
        assert!((out.window - (0.2 + 7.45)).abs() < 1e-12);
        assert!(collect_profiles([report(0, 1.0)], 0.0, &lat).is_err());
    }

    #[test]
    fn unprofiled_follow_nearest_centroid_or_round_robin() {
        let profiled: BTreeMap<u32, GradientFingerprint> =
            [fp(0, &[1.0, 0.0]), fp(1, &[0.0, 1.0]), fp(2, &[1.0, 0.1])].into_iter().map(|f| (f.client_id, f)).collect();
        let late: BTreeMap<u32, GradientFingerprint> = [(5, fp(5, &[0.0, 3.0]))].into_iter().collect();
        let a = assign_universe(&profiled, &late, &[0, 1, 2, 3, 4, 5, 6], 2).unwrap();
        assert_eq!(a.cluster_of(0), a.cluster_of(2));
        assert_eq!(a.cluster_of(5), a.cluster_of(1));
        // 3, 4, 6 were never profiled: dealt in id order.
        assert_eq!(a.cluster_of(3), Some(0));
        assert_eq!(a.cluster_of(4), Some(1));
        assert_eq!(a.cluster_of(6), Some(0));
        assert_eq!(a.assignment.len(), 7);
    }

    #[test]
    fn fallbacks() {
        let none = BTreeMap::new();
        let a = assign_universe(&none, &none, &[3, 1, 2, 0], 2).unwrap();
        assert_eq!(a.members(), vec![vec![0, 2], vec![1, 3]]);

        let one: BTreeMap<u32, GradientFingerprint> = [(7, fp(7, &[1.0]))].into_iter().collect();
        let a = assign_universe(&one, &none, &[7, 8], 4).unwrap();
        assert_eq!(a.cluster_count, 1);
        assert_eq!(a.assignment.len(), 2);
    }
}
