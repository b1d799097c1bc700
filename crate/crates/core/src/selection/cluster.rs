use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fl::GradientFingerprint;

/// Cosine distances are snapped to this grid so that rounding noise (for
/// example from rescaling a delta) cannot reorder merges; distances that agree
/// to within the grid are ties and fall through to the id rule.
const DISTANCE_QUANTUM: f64 = 1e-6;

fn quantize(d: f64) -> f64 {
    libm::round(d / DISTANCE_QUANTUM) * DISTANCE_QUANTUM
}

/// Which cluster every client belongs to. Cluster ids are dense and ordered
/// by the smallest client id they contain.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClusterAssignment {
    pub assignment: BTreeMap<u32, usize>,
    pub cluster_count: usize,
}

impl ClusterAssignment {
    /// Each client alone in its own cluster.
    pub fn singletons(ids: impl IntoIterator<Item = u32>) -> Self {
        let assignment: BTreeMap<u32, usize> = ids.into_iter().enumerate().map(|(c, id)| (id, c)).collect();
        let cluster_count = assignment.len();
        let mut out = Self { assignment, cluster_count };
        out.renumber();
        out
    }

    pub fn cluster_of(&self, id: u32) -> Option<usize> {
        self.assignment.get(&id).copied()
    }

    /// Members of every cluster, each list ascending.
    pub fn members(&self) -> Vec<Vec<u32>> {
        let mut out = alloc::vec![Vec::new(); self.cluster_count];
        for (&id, &c) in &self.assignment {
            out[c].push(id);
        }
        out
    }

    /// Relabels clusters densely by ascending minimum member id.
    pub(crate) fn renumber(&mut self) {
        let mut first: BTreeMap<usize, u32> = BTreeMap::new();
        for (&id, &c) in &self.assignment {
            first.entry(c).or_insert(id);
        }
        let mut order: Vec<(u32, usize)> = first.into_iter().map(|(c, id)| (id, c)).collect();
        order.sort_unstable();
        let relabel: BTreeMap<usize, usize> = order.iter().enumerate().map(|(new, &(_, old))| (old, new)).collect();
        for c in self.assignment.values_mut() {
            *c = relabel[c];
        }
        self.cluster_count = relabel.len();
    }
}

/// `delta / |delta|` in double precision; `None` for a zero delta.
pub(crate) fn unit(fp: &GradientFingerprint) -> Option<Vec<f64>> {
    (fp.norm > 0.0).then(|| fp.delta.iter().map(|&d| d as f64 / fp.norm).collect())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `1 - cos θ`; two zero deltas are at distance 0, a zero and a non-zero delta at 1.
pub(crate) fn cosine_distance(a: Option<&Vec<f64>>, b: Option<&Vec<f64>>) -> f64 {
    match (a, b) {
        (Some(a), Some(b)) => (1.0 - dot(a, b)).clamp(0.0, 2.0),
        (None, None) => 0.0,
        _ => 1.0,
    }
}

struct Group {
    members: Vec<usize>,
    min_id: u32,
}

/// Average-linkage agglomerative clustering on cosine distance.
///
/// Starts from singletons and repeatedly merges the closest pair of clusters
/// until `cluster_count` remain. Among pairs at equal distance the one with
/// the lexicographically smallest `(min id of A, min id of B)` merges first.
/// Zero deltas sit at distance 0 from each other, so they coalesce first in id
/// order.
pub fn cluster_by_gradient(fingerprints: &[GradientFingerprint], cluster_count: usize) -> Result<ClusterAssignment> {
    if fingerprints.is_empty() {
        return Err(Error::NoFingerprints);
    }
    if cluster_count == 0 {
        return Err(Error::InvalidConfig("cluster_count must be positive"));
    }
    if fingerprints.len() < cluster_count {
        return Err(Error::TooFewClients { have: fingerprints.len(), need: cluster_count });
    }
    let mut fps: Vec<&GradientFingerprint> = fingerprints.iter().collect();
    fps.sort_by_key(|f| f.client_id);
    let n = fps.len();
    let units: Vec<Option<Vec<f64>>> = fps.iter().map(|f| unit(f)).collect();

    let mut dist = alloc::vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = quantize(cosine_distance(units[i].as_ref(), units[j].as_ref()));
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }

    let mut groups: Vec<Option<Group>> =
        (0..n).map(|i| Some(Group { members: alloc::vec![i], min_id: fps[i].client_id })).collect();
    let mut active = n;
    while active > cluster_count {
        let mut best: Option<(f64, u32, u32, usize, usize)> = None;
        for a in 0..n {
            let Some(ga) = &groups[a] else { continue };
            for b in a + 1..n {
                let Some(gb) = &groups[b] else { continue };
                let (lo, hi) = if ga.min_id < gb.min_id { (ga.min_id, gb.min_id) } else { (gb.min_id, ga.min_id) };
                let key = (dist[a * n + b], lo, hi);
                let better = match best {
                    None => true,
                    Some((d, l, h, _, _)) => key.0 < d || (key.0 == d && (key.1, key.2) < (l, h)),
                };
                if better {
                    best = Some((key.0, key.1, key.2, a, b));
                }
            }
        }
        let (_, _, _, a, b) = best.expect("at least two active clusters");
        let gb = groups[b].take().expect("active");
        let sa = groups[a].as_ref().expect("active").members.len() as f64;
        let sb = gb.members.len() as f64;
        for c in 0..n {
            if c == a || groups[c].is_none() {
                continue;
            }
            let d = quantize((sa * dist[a * n + c] + sb * dist[b * n + c]) / (sa + sb));
            dist[a * n + c] = d;
            dist[c * n + a] = d;
        }
        let ga = groups[a].as_mut().expect("active");
        ga.min_id = ga.min_id.min(gb.min_id);
        ga.members.extend(gb.members);
        active -= 1;
    }

    let mut out = ClusterAssignment::default();
    for (c, g) in groups.iter().enumerate() {
        if let Some(g) = g {
            for &m in &g.members {
                out.assignment.insert(fps[m].client_id, c);
            }
        }
    }
    out.renumber();
    Ok(out)
}
