use alloc::vec::Vec;

use rand::seq::SliceRandom;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PartitionConfig {
    pub client_count: usize,
    pub classes_per_client: usize,
    pub seed: u64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self { client_count: 100, classes_per_client: 2, seed: 0 }
    }
}

/// Label-skewed shard partition.
///
/// The label-sorted index space is cut into `client_count × classes_per_client`
/// shards, each drawn from a single class, with shards of a class sized as
/// evenly as possible. Shards are arranged in `classes_per_client` rows of
/// `client_count` consecutive (label-ordered) shards; every client receives
/// exactly one shard per row through an independent seeded permutation of each
/// row. When the row boundaries fall on class boundaries this gives every
/// client exactly `classes_per_client` distinct labels, and with
/// `classes_per_client = num_classes` every client holds every class.
///
/// Returns one ascending index list per client; the lists are disjoint and
/// cover the whole dataset.
pub fn partition_non_iid(dataset: &Dataset, config: &PartitionConfig) -> Result<Vec<Vec<usize>>> {
    let n_clients = config.client_count;
    let per_client = config.classes_per_client;
    let n_classes = dataset.num_classes;
    if n_clients == 0 {
        return Err(Error::InfeasiblePartition("client_count must be positive"));
    }
    if per_client == 0 || per_client > n_classes {
        return Err(Error::InfeasiblePartition("classes_per_client must be in [1, num_classes]"));
    }
    let shards = n_clients * per_client;

    let mut by_class: Vec<Vec<usize>> = alloc::vec![Vec::new(); n_classes];
    for i in 0..dataset.len() {
        by_class[dataset.label(i)].push(i);
    }
    let present: Vec<usize> = (0..n_classes).filter(|&c| !by_class[c].is_empty()).collect();
    if shards < present.len() {
        return Err(Error::InfeasiblePartition("fewer shards than populated classes"));
    }

    // Slot s of the label-sorted shard sequence belongs to present[s·K / shards].
    let slot_class = |s: usize| present[s * present.len() / shards];
    let mut slots_of_class: Vec<Vec<usize>> = alloc::vec![Vec::new(); n_classes];
    for s in 0..shards {
        slots_of_class[slot_class(s)].push(s);
    }
    let mut shard_indices: Vec<&[usize]> = alloc::vec![&[][..]; shards];
    for &c in &present {
        let idx = &by_class[c];
        let k = slots_of_class[c].len();
        if k > idx.len() {
            return Err(Error::InfeasiblePartition("a class has fewer samples than shards"));
        }
        for (j, &s) in slots_of_class[c].iter().enumerate() {
            shard_indices[s] = &idx[j * idx.len() / k..(j + 1) * idx.len() / k];
        }
    }

    let mut clients: Vec<Vec<usize>> = alloc::vec![Vec::new(); n_clients];
    for row in 0..per_client {
        let mut order: Vec<usize> = (0..n_clients).collect();
        order.shuffle(&mut rng::stream(config.seed, &[tag::PARTITION, row as u64]));
        for (client, &k) in order.iter().enumerate() {
            clients[client].extend_from_slice(shard_indices[row * n_clients + k]);
        }
    }
    for list in &mut clients {
        list.sort_unstable();
    }
    Ok(clients)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;

    fn balanced(per_class: usize, classes: usize) -> Dataset {
        let labels: Vec<u8> = (0..per_class * classes).map(|i| (i % classes) as u8).collect();
        Dataset::new(alloc::vec![0.0; labels.len()], labels, 1, classes).unwrap()
    }

    fn distinct(d: &Dataset, idx: &[usize]) -> usize {
        idx.iter().map(|&i| d.label(i)).collect::<BTreeSet<_>>().len()
    }

    #[test]
    fn two_classes_per_client() {
        let d = balanced(800, 10);
        let parts = partition_non_iid(&d, &PartitionConfig::default()).unwrap();
        assert_eq!(parts.len(), 100);
        assert!(parts.iter().all(|p| distinct(&d, p) == 2 && p.len() == 80));
    }

    #[test]
    fn full_ratio_gives_every_class() {
        let d = balanced(100, 10);
        let cfg = PartitionConfig { classes_per_client: 10, ..Default::default() };
        let parts = partition_non_iid(&d, &cfg).unwrap();
        assert!(parts.iter().all(|p| distinct(&d, p) == 10));
    }

    #[test]
    fn exhaustive_and_disjoint() {
        let d = balanced(37, 10);
        for cpc in [1, 2, 3, 4, 6, 10] {
            let cfg = PartitionConfig { client_count: 30, classes_per_client: cpc, seed: 5 };
            let parts = partition_non_iid(&d, &cfg).unwrap();
            let mut all: Vec<usize> = parts.concat();
            all.sort_unstable();
            assert_eq!(all, (0..d.len()).collect::<Vec<_>>(), "cpc={cpc}");
            assert!(parts.iter().all(|p| distinct(&d, p) <= cpc && !p.is_empty()));
        }
    }

    #[test]
    fn infeasible_requests() {
        let d = balanced(3, 10);
        let too_many = PartitionConfig { client_count: 100, classes_per_client: 2, seed: 0 };
        assert!(matches!(partition_non_iid(&d, &too_many), Err(Error::InfeasiblePartition(_))));
        let bad_ratio = PartitionConfig { classes_per_client: 11, ..Default::default() };
        assert!(partition_non_iid(&d, &bad_ratio).is_err());
    }
}
