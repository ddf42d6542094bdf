//! Server-side combination of client updates.

use crate::defense::ClientReport;
use crate::error::{Error, Result};
use crate::models::{ParamVector, TreeEnsemble};

#[derive(Debug, Clone, PartialEq)]
pub enum UpdatePayload {
    Params(ParamVector),
    /// Trees grown this round only.
    Trees(TreeEnsemble),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub payload: UpdatePayload,
    pub sample_count: usize,
    pub report: ClientReport,
}

/// Pairwise sum of `n_k * w_k`.
fn weighted_sum(items: &[(f64, &[f64])]) -> Vec<f64> {
    match items.len() {
        1 => items[0].1.iter().map(|v| items[0].0 * v).collect(),
        n => {
            let (a, b) = items.split_at(n / 2);
            let mut left = weighted_sum(a);
            for (l, r) in left.iter_mut().zip(weighted_sum(b)) {
                *l += r;
            }
            left
        }
    }
}

/// Sample-weighted average, reduced in client-id order.
pub fn fedavg(updates: &[ClientUpdate]) -> Result<ParamVector> {
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);
    let mut items = Vec::with_capacity(sorted.len());
    for u in &sorted {
        let UpdatePayload::Params(p) = &u.payload else {
            return Err(Error::Config(format!(
                "client {} sent trees to a FedAvg round",
                u.client_id
            )));
        };
        if u.sample_count == 0 {
            return Err(Error::Config(format!("client {} reports zero samples", u.client_id)));
        }
        items.push((u.sample_count as f64, p));
    }
    let Some(&(_, first)) = items.first() else {
        return Err(Error::NoUpdates);
    };
    for (_, p) in &items[1..] {
        first.check_layout(p)?;
    }
    let total: f64 = items.iter().map(|(n, _)| n).sum();
    let slices: Vec<(f64, &[f64])> = items.iter().map(|(n, p)| (*n, p.values.as_slice())).collect();
    let mut values = weighted_sum(&slices);
    for (j, v) in values.iter_mut().enumerate() {
        *v /= total;
        let (lo, hi) = items
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, p)| {
                (lo.min(p.values[j]), hi.max(p.values[j]))
            });
        if lo <= hi {
            *v = v.clamp(lo, hi);
        }
    }
    ParamVector::new(values, first.layout.clone())
}

/// Appends every client's new trees to `global`, in the order given.
pub fn bagging_merge(global: &TreeEnsemble, client_ensembles: &[&TreeEnsemble]) -> Result<TreeEnsemble> {
    let mut out = global.clone();
    for e in client_ensembles {
        if e.num_classes != global.num_classes {
            return Err(Error::Shape(format!(
                "client ensemble has {} classes, global {}",
                e.num_classes, global.num_classes
            )));
        }
        out.trees.extend(e.trees.iter().cloned());
    }
    Ok(out)
}

/// Bagging merge over tree updates, sorted by client id.
pub fn merge_tree_updates(global: &TreeEnsemble, updates: &[ClientUpdate]) -> Result<TreeEnsemble> {
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);
    let ensembles = sorted
        .iter()
        .map(|u| match &u.payload {
            UpdatePayload::Trees(t) => Ok(t),
            UpdatePayload::Params(_) => Err(Error::Config(format!(
                "client {} sent parameters to a bagging round",
                u.client_id
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    bagging_merge(global, &ensembles)
}
