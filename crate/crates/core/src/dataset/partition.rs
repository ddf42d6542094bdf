use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::{LabeledDataset, Partition};
use crate::error::{Error, Result};
use crate::rng;

const MAX_LABEL_DRAWS: usize = 1_000_000;

/// Shuffles globally, then deals round-robin: sizes differ by at most one,
/// with the extra samples landing on the lowest client ids.
pub fn partition_iid(ds: &LabeledDataset, clients: usize, seed: u64) -> Result<Vec<Partition>> {
    if clients == 0 || clients > ds.len() {
        return Err(Error::Config(format!(
            "cannot split {} samples across {clients} clients",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng::stream(seed, "partition", &[]));
    let mut shards = vec![Vec::with_capacity(ds.len() / clients + 1); clients];
    for (pos, sample) in order.into_iter().enumerate() {
        shards[pos % clients].push(sample);
    }
    Ok(shards
        .into_iter()
        .enumerate()
        .map(|(id, idx)| Partition::from_indices(id, idx, &ds.labels))
        .collect())
}

/// Horizontal split where every client sees only `labels_per_client` classes.
///
/// Each client's label set is drawn uniformly; draws are repeated until every
/// class is admitted by some client. Every sample then goes to a uniformly
/// chosen client among those admitting its class, after first seeding each
/// admitting client with one sample of that class.
pub fn partition_label_subset(
    ds: &LabeledDataset,
    clients: usize,
    labels_per_client: usize,
    seed: u64,
) -> Result<Vec<Partition>> {
    let n_classes = ds.num_classes;
    if labels_per_client == 0 || labels_per_client > n_classes {
        return Err(Error::Config(format!(
            "labels_per_client must lie in [1, {n_classes}], got {labels_per_client}"
        )));
    }
    if clients == 0 || clients > ds.len() {
        return Err(Error::Config(format!(
            "cannot split {} samples across {clients} clients",
            ds.len()
        )));
    }
    if clients * labels_per_client < n_classes {
        return Err(Error::Config(format!(
            "{clients} clients x {labels_per_client} labels cannot cover {n_classes} classes"
        )));
    }

    let mut rng = rng::stream(seed, "partition", &[]);
    let mut admitted: Vec<Vec<usize>> = Vec::new();
    for attempt in 0.. {
        if attempt == MAX_LABEL_DRAWS {
            return Err(Error::Config("could not draw label sets covering every class".into()));
        }
        admitted = (0..clients)
            .map(|_| {
                let mut set = index::sample(&mut rng, n_classes, labels_per_client).into_vec();
                set.sort_unstable();
                set
            })
            .collect();
        let mut covered = vec![false; n_classes];
        admitted.iter().flatten().for_each(|&c| covered[c] = true);
        if covered.iter().all(|&c| c) {
            break;
        }
    }

    let mut holders: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (client, set) in admitted.iter().enumerate() {
        for &class in set {
            holders[class].push(client);
        }
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &y) in ds.labels.iter().enumerate() {
        by_class[y].push(i);
    }

    let mut shards = vec![Vec::new(); clients];
    for class in 0..n_classes {
        let members = &mut by_class[class];
        let owners = &holders[class];
        if members.len() < owners.len() {
            return Err(Error::Config(format!(
                "class {class} has {} samples for {} admitting clients",
                members.len(),
                owners.len()
            )));
        }
        members.shuffle(&mut rng);
        let mut seeded_order = owners.clone();
        seeded_order.shuffle(&mut rng);
        for (sample, &owner) in members.iter().zip(&seeded_order) {
            shards[owner].push(*sample);
        }
        for &sample in &members[owners.len()..] {
            shards[owners[rng.gen_range(0..owners.len())]].push(sample);
        }
    }

    Ok(shards
        .into_iter()
        .enumerate()
        .map(|(id, idx)| Partition::from_indices(id, idx, &ds.labels))
        .collect())
}
