//! Hierarchical navigable small world graph over unit vectors.
//!
//! Similarity is the dot product, so callers must pass normalized vectors.
//! Node ids are dense `usize` slots owned by the caller; a slot can be
//! removed and re-inserted (used when a memory's embedding changes).

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::embed::dot;
use crate::error::{Error, Result};

/// Upper bound on the number of layers a node can be assigned to.
const MAX_LEVEL: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HnswParams {
    /// Neighbor cap on upper layers; the base layer allows twice as many.
    pub max_connections: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    /// Level multiplier, conventionally `1 / ln(max_connections)`.
    pub level_lambda: f64,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self::new(16, 100, 64, 0)
    }
}

impl HnswParams {
    pub fn new(max_connections: usize, ef_construction: usize, ef_search: usize, seed: u64) -> Self {
        Self {
            max_connections,
            ef_construction,
            ef_search,
            level_lambda: 1.0 / (max_connections.max(2) as f64).ln(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_connections == 0 {
            return Err(Error::InvalidConfig("max_connections must be positive".into()));
        }
        if self.ef_search == 0 {
            return Err(Error::InvalidConfig("ef_search must be at least 1".into()));
        }
        if self.ef_construction < self.max_connections {
            return Err(Error::InvalidConfig(format!(
                "ef_construction ({}) must be >= max_connections ({})",
                self.ef_construction, self.max_connections
            )));
        }
        if !(self.level_lambda > 0.0 && self.level_lambda.is_finite()) {
            return Err(Error::InvalidConfig("level_lambda must be a positive real".into()));
        }
        Ok(())
    }

    fn max_degree(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.max_connections
        } else {
            self.max_connections
        }
    }
}

/// A (similarity, id) pair ordered by similarity, then by *descending* id so
/// that the maximum of a heap is the best candidate with ties resolved to
/// the lower id.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored {
    sim: f64,
    id: usize,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim.total_cmp(&other.sim).then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HnswNode {
    pub vector: Vec<f64>,
    /// `links[l]` are the out-neighbors at layer `l`; `links.len() - 1` is the
    /// node's level.
    pub links: Vec<Vec<usize>>,
}

impl HnswNode {
    pub fn level(&self) -> usize {
        self.links.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hnsw {
    params: HnswParams,
    dim: usize,
    nodes: Vec<Option<HnswNode>>,
    entry: Option<usize>,
    len: usize,
}

impl Hnsw {
    pub fn new(params: HnswParams, dim: usize) -> Self {
        Self { params, dim, nodes: Vec::new(), entry: None, len: 0 }
    }

    /// Rebuilds a graph from serialized nodes. The entry point is derived
    /// (highest level, lowest id) so it never needs storing separately.
    pub fn from_nodes(params: HnswParams, dim: usize, nodes: Vec<Option<HnswNode>>) -> Result<Self> {
        let len = nodes.iter().flatten().count();
        let mut g = Self { params, dim, nodes, entry: None, len };
        g.entry = g.pick_entry();
        g.check_invariants().map_err(Error::Checkpoint)?;
        Ok(g)
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    pub fn set_ef_search(&mut self, ef: usize) {
        self.params.ef_search = ef.max(1);
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, id: usize) -> bool {
        matches!(self.nodes.get(id), Some(Some(_)))
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| n.as_ref().map(|_| i))
    }

    pub fn node(&self, id: usize) -> Option<&HnswNode> {
        self.nodes.get(id).and_then(Option::as_ref)
    }

    pub fn nodes(&self) -> &[Option<HnswNode>] {
        &self.nodes
    }

    pub fn entry_point(&self) -> Option<usize> {
        self.entry
    }

    pub fn max_level(&self) -> Option<usize> {
        self.entry.map(|e| self.nodes[e].as_ref().expect("entry exists").level())
    }

    /// Level of `id`, drawn from a geometric-like distribution keyed on the
    /// seed and the id, so re-inserting an id lands on the same level.
    fn level_for(&self, id: usize) -> usize {
        let mut z = self.params.seed ^ (id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        // uniform in (0, 1]
        let u = ((z >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
        ((-u.ln() * self.params.level_lambda).floor() as usize).min(MAX_LEVEL)
    }

    fn vec_of(&self, id: usize) -> &[f64] {
        &self.nodes[id].as_ref().expect("live node").vector
    }

    fn sim_to(&self, query: &[f64], id: usize) -> f64 {
        dot(query, self.vec_of(id))
    }

    fn pick_entry(&self) -> Option<usize> {
        let mut best: Option<(usize, usize)> = None;
        for (id, n) in self.nodes.iter().enumerate() {
            if let Some(n) = n {
                if best.is_none_or(|(_, lvl)| n.level() > lvl) {
                    best = Some((id, n.level()));
                }
            }
        }
        best.map(|(id, _)| id)
    }

    /// Beam search on one layer. Returns up to `ef` nodes, best first.
    fn search_layer(&self, query: &[f64], entry_points: &[Scored], ef: usize, layer: usize) -> Vec<Scored> {
        let mut visited = vec![false; self.nodes.len()];
        let mut candidates: BinaryHeap<Scored> = BinaryHeap::new();
        let mut results: BinaryHeap<Reverse<Scored>> = BinaryHeap::new();
        for &ep in entry_points {
            if !visited[ep.id] {
                visited[ep.id] = true;
                candidates.push(ep);
                results.push(Reverse(ep));
            }
        }
        while results.len() > ef {
            results.pop();
        }
        while let Some(c) = candidates.pop() {
            let worst = results.peek().expect("non-empty").0;
            if results.len() >= ef && c < worst {
                break;
            }
            let node = self.nodes[c.id].as_ref().expect("live node");
            if layer >= node.links.len() {
                continue;
            }
            for &n in &node.links[layer] {
                if visited[n] {
                    continue;
                }
                visited[n] = true;
                let s = Scored { sim: self.sim_to(query, n), id: n };
                let worst = results.peek().expect("non-empty").0;
                if results.len() < ef || s > worst {
                    candidates.push(s);
                    results.push(Reverse(s));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        let mut out: Vec<Scored> = results.into_iter().map(|Reverse(s)| s).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Neighbor selection heuristic: keep a candidate only if it is closer
    /// to the base point than to every neighbor kept so far, then top up
    /// with the pruned ones in rank order.
    fn select_neighbors(&self, mut candidates: Vec<Scored>, m: usize) -> Vec<usize> {
        candidates.sort_by(|a, b| b.cmp(a));
        let mut kept: Vec<Scored> = Vec::with_capacity(m);
        let mut pruned = Vec::new();
        for c in candidates {
            if kept.len() >= m {
                break;
            }
            let cv = self.vec_of(c.id);
            let diverse = kept.iter().all(|k| dot(cv, self.vec_of(k.id)) < c.sim);
            if diverse {
                kept.push(c);
            } else {
                pruned.push(c);
            }
        }
        for p in pruned {
            if kept.len() >= m {
                break;
            }
            kept.push(p);
        }
        kept.into_iter().map(|s| s.id).collect()
    }

    fn shrink_links(&mut self, id: usize, layer: usize) {
        let cap = self.params.max_degree(layer);
        let links = &self.nodes[id].as_ref().expect("live node").links[layer];
        if links.len() <= cap {
            return;
        }
        let base = self.vec_of(id);
        let scored: Vec<Scored> = links.iter().map(|&n| Scored { sim: dot(base, self.vec_of(n)), id: n }).collect();
        let selected = self.select_neighbors(scored, cap);
        self.nodes[id].as_mut().expect("live node").links[layer] = selected;
    }

    pub fn insert(&mut self, id: usize, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: vector.len() });
        }
        if self.contains(id) {
            return Err(Error::InvalidConfig(format!("node {id} already present")));
        }
        if id >= self.nodes.len() {
            self.nodes.resize(id + 1, None);
        }
        let level = self.level_for(id);
        let Some(entry) = self.entry else {
            self.nodes[id] = Some(HnswNode { vector, links: vec![Vec::new(); level + 1] });
            self.entry = Some(id);
            self.len = 1;
            return Ok(());
        };
        let top = self.max_level().expect("entry exists");
        let mut ep = vec![Scored { sim: dot(&vector, self.vec_of(entry)), id: entry }];
        for layer in (level + 1..=top).rev() {
            ep = self.search_layer(&vector, &ep, 1, layer);
        }
        let mut links = vec![Vec::new(); level + 1];
        for layer in (0..=level.min(top)).rev() {
            let found = self.search_layer(&vector, &ep, self.params.ef_construction, layer);
            let selected = self.select_neighbors(found.clone(), self.params.max_connections);
            links[layer] = selected;
            ep = found;
        }
        let new_links = links.clone();
        self.nodes[id] = Some(HnswNode { vector, links });
        self.len += 1;
        for (layer, neighbors) in new_links.iter().enumerate() {
            for &n in neighbors {
                self.nodes[n].as_mut().expect("live node").links[layer].push(id);
                self.shrink_links(n, layer);
            }
        }
        // entry is the lowest id on the top level
        if level > top || (level == top && id < entry) {
            self.entry = Some(id);
        }
        Ok(())
    }

    /// Removes `id` and repairs every node that linked to it by re-selecting
    /// its neighbors from its remaining links plus the removed node's links.
    pub fn remove(&mut self, id: usize) -> Result<HnswNode> {
        let node = self
            .nodes
            .get_mut(id)
            .and_then(Option::take)
            .ok_or_else(|| Error::UnknownId(format!("graph node {id}")))?;
        self.len -= 1;
        for layer in 0..=node.level() {
            let referrers: Vec<usize> = self
                .nodes
                .iter()
                .enumerate()
                .filter_map(|(i, n)| {
                    n.as_ref().filter(|n| n.links.len() > layer && n.links[layer].contains(&id)).map(|_| i)
                })
                .collect();
            for r in referrers {
                let mut pool: Vec<usize> = self.nodes[r].as_ref().expect("live").links[layer]
                    .iter()
                    .copied()
                    .filter(|&n| n != id)
                    .collect();
                for &n in &node.links[layer] {
                    if n != r && n != id && !pool.contains(&n) && self.node(n).is_some_and(|x| x.level() >= layer) {
                        pool.push(n);
                    }
                }
                let base = self.vec_of(r);
                let scored: Vec<Scored> = pool.iter().map(|&n| Scored { sim: dot(base, self.vec_of(n)), id: n }).collect();
                let selected = self.select_neighbors(scored, self.params.max_degree(layer));
                self.nodes[r].as_mut().expect("live").links[layer] = selected;
            }
        }
        if self.entry == Some(id) {
            self.entry = self.pick_entry();
        }
        Ok(node)
    }

    /// Replaces the vector stored at `id` (delete, then insert).
    pub fn update(&mut self, id: usize, vector: Vec<f64>) -> Result<()> {
        self.remove(id)?;
        self.insert(id, vector)
    }

    /// Approximate top-`k` by similarity, best first, ties by ascending id.
    pub fn search(&self, query: &[f64], k: usize) -> Vec<(usize, f64)> {
        self.search_with_ef(query, k, self.params.ef_search)
    }

    pub fn search_with_ef(&self, query: &[f64], k: usize, ef: usize) -> Vec<(usize, f64)> {
        let Some(entry) = self.entry else {
            return Vec::new();
        };
        if k == 0 {
            return Vec::new();
        }
        let mut ep = vec![Scored { sim: self.sim_to(query, entry), id: entry }];
        for layer in (1..=self.max_level().expect("entry exists")).rev() {
            ep = self.search_layer(query, &ep, 1, layer);
        }
        let found = self.search_layer(query, &ep, ef.max(k), 0);
        found.into_iter().take(k).map(|s| (s.id, s.sim)).collect()
    }

    /// Structural checks: layer nesting, degree caps, no dangling or self
    /// links, entry point at the top level.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mut count = 0;
        let mut top = None;
        for (id, node) in self.nodes.iter().enumerate() {
            let Some(node) = node else { continue };
            count += 1;
            if node.links.is_empty() {
                return Err(format!("node {id} has no layers"));
            }
            if node.vector.len() != self.dim {
                return Err(format!("node {id} has dimension {}", node.vector.len()));
            }
            top = Some(top.map_or(node.level(), |t: usize| t.max(node.level())));
            for (layer, links) in node.links.iter().enumerate() {
                if links.len() > self.params.max_degree(layer) {
                    return Err(format!("node {id} has degree {} at layer {layer}", links.len()));
                }
                for &n in links {
                    if n == id {
                        return Err(format!("node {id} links to itself"));
                    }
                    match self.node(n) {
                        None => return Err(format!("node {id} links to missing {n} at layer {layer}")),
                        Some(other) if other.level() < layer => {
                            return Err(format!("node {id} links to {n} above its level at layer {layer}"))
                        }
                        _ => {}
                    }
                }
                let mut sorted = links.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != links.len() {
                    return Err(format!("node {id} has duplicate links at layer {layer}"));
                }
            }
        }
        if count != self.len {
            return Err(format!("len {} but {count} live nodes", self.len));
        }
        match (self.entry, top) {
            (None, None) => Ok(()),
            (Some(e), Some(t)) => match self.node(e) {
                Some(n) if n.level() == t => Ok(()),
                _ => Err(format!("entry {e} is not at the top level {t}")),
            },
            _ => Err("entry point inconsistent with node set".into()),
        }
    }
}

/// Exact top-`k` over `(id, vector)` pairs: similarity descending, ties by
/// ascending id.
pub fn exact_top_k<'a>(items: impl IntoIterator<Item = (usize, &'a [f64])>, query: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = items.into_iter().map(|(id, v)| (id, dot(query, v))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}
