use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::od::{DailyOd, Granularity};

/// Directed weighted graph in compressed sparse row form. Immutable after
/// construction; node ids are dense indices into `names`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGraph {
    names: Vec<String>,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
}

impl FlowGraph {
    /// Parallel edges are summed. Weights must be positive and finite.
    pub fn from_edges<I>(names: Vec<String>, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let n = names.len();
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (u, v, w) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidArgument(format!("edge ({u}, {v}) outside {n} nodes")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!("edge ({u}, {v}) has weight {w}")));
            }
            *merged.entry((u, v)).or_insert(0.0) += w;
        }
        let mut offsets = vec![0; n + 1];
        for &(u, _) in merged.keys() {
            offsets[u + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let (targets, weights) = merged.into_iter().map(|((_, v), w)| (v, w)).unzip();
        Ok(Self {
            names,
            offsets,
            targets,
            weights,
        })
    }

    /// Graph of a municipality OD matrix. `extra_nodes` (for example the
    /// whole registry) are added as isolated nodes when absent from the
    /// matrix. Node order is sorted by id.
    pub fn from_od<'a, I>(od: &DailyOd, extra_nodes: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        od.require(Granularity::Municipality)?;
        let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
        for (o, d, _) in od.iter() {
            ids.insert(o, 0);
            ids.insert(d, 0);
        }
        for x in extra_nodes {
            ids.insert(x, 0);
        }
        for (i, v) in ids.values_mut().enumerate() {
            *v = i;
        }
        let names = ids.keys().map(|s| s.to_string()).collect();
        Self::from_edges(names, od.iter().map(|(o, d, c)| (ids[o], ids[d], c as f64)))
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn out_edges(&self, u: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[u]..self.offsets[u + 1];
        self.targets[r.clone()].iter().copied().zip(self.weights[r].iter().copied())
    }

    pub fn out_weight(&self, u: usize) -> f64 {
        self.weights[self.offsets[u]..self.offsets[u + 1]].iter().sum()
    }

    /// All edges as (source, target, weight), grouped by source.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.node_count()).flat_map(move |u| self.out_edges(u).map(move |(v, w)| (u, v, w)))
    }

    /// Same graph with node `i` renamed to position `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut names = vec![String::new(); self.node_count()];
        for (i, &p) in perm.iter().enumerate() {
            names[p] = self.names[i].clone();
        }
        Self::from_edges(names, self.edges().map(|(u, v, w)| (perm[u], perm[v], w)))
    }
}
