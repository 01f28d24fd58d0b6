//! The partitioned memory store: per-partition HNSW indexes over memory
//! embeddings, exact search for verification, memory refinement, and
//! on-disk persistence.

mod hnsw;

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use hnsw::{exact_top_k, Hnsw, HnswNode, HnswParams};

use crate::corpus::Dataset;
use crate::embed::{Embedder, Embedding};
use crate::error::{Error, Result};
use crate::partition::{PartitionAssignment, PartitionSpec};

/// A stored (x̃, ỹ) pair. `embedding` is σ(x̃ ⊕ ỹ) and tracks every change to
/// `target`; `source_embedding` is σ(x̃).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Memory {
    pub id: usize,
    /// Index of the record in the memory pool it was built from.
    pub origin: usize,
    pub source: String,
    pub target: String,
    pub embedding: Embedding,
    pub source_embedding: Embedding,
}

/// Which embedding a search runs against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    /// σ(x̃ ⊕ ỹ), used when the reference is known (training).
    Pair,
    /// σ(x̃) alone, used at inference.
    Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub id: usize,
    memories: Vec<Memory>,
    index: Hnsw,
    source_index: Hnsw,
}

impl Partition {
    fn build(id: usize, memories: Vec<Memory>, params: HnswParams, dim: usize) -> Result<Self> {
        let mut index = Hnsw::new(params, dim);
        let mut source_index = Hnsw::new(params, dim);
        for m in &memories {
            index.insert(m.id, m.embedding.values().to_vec())?;
            source_index.insert(m.id, m.source_embedding.values().to_vec())?;
        }
        Ok(Self { id, memories, index, source_index })
    }

    pub fn len(&self) -> usize {
        self.memories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memories.is_empty()
    }

    pub fn memories(&self) -> &[Memory] {
        &self.memories
    }

    pub fn memory(&self, id: usize) -> Option<&Memory> {
        self.memories.get(id)
    }

    pub fn graph(&self, space: Space) -> &Hnsw {
        match space {
            Space::Pair => &self.index,
            Space::Source => &self.source_index,
        }
    }

    pub fn set_ef_search(&mut self, ef: usize) {
        self.index.set_ef_search(ef);
        self.source_index.set_ef_search(ef);
    }

    /// Approximate top-`k` by cosine similarity, best first.
    pub fn knn_search(&self, space: Space, query: &Embedding, k: usize) -> Vec<(usize, f64)> {
        self.graph(space).search(query.values(), k)
    }

    /// Exhaustive scan; ties go to the lower memory id.
    pub fn brute_force_knn(&self, space: Space, query: &Embedding, k: usize) -> Vec<(usize, f64)> {
        let items = self.memories.iter().map(|m| {
            let v = match space {
                Space::Pair => m.embedding.values(),
                Space::Source => m.source_embedding.values(),
            };
            (m.id, v)
        });
        exact_top_k(items, query.values(), k)
    }

    /// Index node sets equal the memory id set, and both graphs are
    /// structurally valid.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for (space, g) in [("pair", &self.index), ("source", &self.source_index)] {
            g.check_invariants().map_err(|e| format!("partition {} {space} index: {e}", self.id))?;
            if !g.ids().eq(0..self.memories.len()) {
                return Err(format!("partition {} {space} index nodes differ from memory ids", self.id));
            }
        }
        for (i, m) in self.memories.iter().enumerate() {
            if m.id != i {
                return Err(format!("partition {} memory slot {i} holds id {}", self.id, m.id));
            }
            if self.index.node(i).map(|n| n.vector.as_slice()) != Some(m.embedding.values()) {
                return Err(format!("partition {} memory {i} embedding out of sync with index", self.id));
            }
        }
        Ok(())
    }
}

/// Pool records with their embeddings, computed once and shared by the
/// partitioner and the database builder.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedPool {
    pub pool: Dataset,
    pub pair_embeddings: Vec<Embedding>,
    pub source_embeddings: Vec<Embedding>,
}

impl EmbeddedPool {
    pub fn new(pool: Dataset, embedder: &Embedder) -> Result<Self> {
        let (pair_embeddings, source_embeddings): (Vec<_>, Vec<_>) = pool
            .pairs
            .par_iter()
            .map(|p| Ok((embedder.embed_pair(&p.source, &p.target)?, embedder.embed_text(&p.source)?)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        Ok(Self { pool, pair_embeddings, source_embeddings })
    }

    pub fn len(&self) -> usize {
        self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionedDatabase {
    pub spec: PartitionSpec,
    pub params: HnswParams,
    dim: usize,
    partitions: Vec<Partition>,
    #[serde(skip)]
    build_times: Vec<Duration>,
}

impl PartitionedDatabase {
    pub fn m(&self) -> usize {
        self.partitions.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }

    pub fn partition(&self, id: usize) -> Result<&Partition> {
        self.partitions.get(id).ok_or_else(|| Error::UnknownId(format!("partition {id}")))
    }

    /// Wall-clock index construction time per partition, from the last
    /// build (empty after a reload).
    pub fn build_times(&self) -> &[Duration] {
        &self.build_times
    }

    pub fn total_memories(&self) -> usize {
        self.partitions.iter().map(Partition::len).sum()
    }

    pub fn set_ef_search(&mut self, ef: usize) {
        self.params.ef_search = ef.max(1);
        self.partitions.iter_mut().for_each(|p| p.set_ef_search(ef));
    }

    pub fn knn_search(&self, partition: usize, space: Space, query: &Embedding, k: usize) -> Result<Vec<(usize, f64)>> {
        Ok(self.partition(partition)?.knn_search(space, query, k))
    }

    pub fn brute_force_knn(&self, partition: usize, space: Space, query: &Embedding, k: usize) -> Result<Vec<(usize, f64)>> {
        Ok(self.partition(partition)?.brute_force_knn(space, query, k))
    }

    pub fn memory(&self, partition: usize, id: usize) -> Result<&Memory> {
        self.partition(partition)?
            .memory(id)
            .ok_or_else(|| Error::UnknownId(format!("memory {id} in partition {partition}")))
    }

    /// Replaces a memory's target, re-embeds σ(x̃ ⊕ ỹ) and re-links the
    /// index entry. An unchanged embedding leaves the graph untouched.
    pub fn update_memory_target(&mut self, embedder: &Embedder, partition: usize, id: usize, new_target: &str) -> Result<()> {
        let p = self
            .partitions
            .get_mut(partition)
            .ok_or_else(|| Error::UnknownId(format!("partition {partition}")))?;
        let mem = p
            .memories
            .get_mut(id)
            .ok_or_else(|| Error::UnknownId(format!("memory {id} in partition {partition}")))?;
        let embedding = embedder.embed_pair(&mem.source, new_target)?;
        mem.target = new_target.to_string();
        if embedding != mem.embedding {
            p.index.update(id, embedding.values().to_vec())?;
            mem.embedding = embedding;
        }
        Ok(())
    }

    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        self.partitions.iter().try_for_each(Partition::check_invariants)
    }

    /// SHA-256 over the serialized memories and graphs.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("database serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = Manifest {
            spec: self.spec,
            params: self.params,
            dim: self.dim,
            partitions: self
                .partitions
                .iter()
                .map(|p| ManifestPartition { id: p.id, file: partition_file(p.id), size: p.len(), params: *p.index.params() })
                .collect(),
        };
        for p in &self.partitions {
            let mut out = BufWriter::new(fs::File::create(dir.join(partition_file(p.id)))?);
            for m in &p.memories {
                let rec = StoredMemory {
                    memory: m.clone(),
                    links: p.index.node(m.id).expect("indexed").links.clone(),
                    source_links: p.source_index.node(m.id).expect("indexed").links.clone(),
                };
                serde_json::to_writer(&mut out, &rec)?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
        }
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.is_file() {
            return Err(Error::FileNotFound(manifest_path));
        }
        let manifest: Manifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
        let mut partitions = Vec::with_capacity(manifest.partitions.len());
        for mp in &manifest.partitions {
            let reader = BufReader::new(fs::File::open(dir.join(&mp.file))?);
            let mut memories = Vec::new();
            let mut nodes = Vec::new();
            let mut source_nodes = Vec::new();
            for (i, line) in reader.lines().enumerate() {
                let rec: StoredMemory = serde_json::from_str(&line?)
                    .map_err(|e| Error::Checkpoint(format!("{} line {}: {e}", mp.file, i + 1)))?;
                if rec.memory.id != i {
                    return Err(Error::Checkpoint(format!("{} line {}: id {} out of order", mp.file, i + 1, rec.memory.id)));
                }
                nodes.push(Some(HnswNode { vector: rec.memory.embedding.values().to_vec(), links: rec.links }));
                source_nodes.push(Some(HnswNode {
                    vector: rec.memory.source_embedding.values().to_vec(),
                    links: rec.source_links,
                }));
                memories.push(rec.memory);
            }
            if memories.len() != mp.size {
                return Err(Error::Checkpoint(format!("{}: expected {} memories, found {}", mp.file, mp.size, memories.len())));
            }
            partitions.push(Partition {
                id: mp.id,
                memories,
                index: Hnsw::from_nodes(mp.params, manifest.dim, nodes)?,
                source_index: Hnsw::from_nodes(mp.params, manifest.dim, source_nodes)?,
            });
        }
        Ok(Self { spec: manifest.spec, params: manifest.params, dim: manifest.dim, partitions, build_times: Vec::new() })
    }
}

const MANIFEST_FILE: &str = "manifest.json";

fn partition_file(id: usize) -> String {
    format!("partition_{id:03}.jsonl")
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    spec: PartitionSpec,
    params: HnswParams,
    dim: usize,
    partitions: Vec<ManifestPartition>,
}

#[derive(Serialize, Deserialize)]
struct ManifestPartition {
    id: usize,
    file: String,
    size: usize,
    params: HnswParams,
}

#[derive(Serialize, Deserialize)]
struct StoredMemory {
    #[serde(flatten)]
    memory: Memory,
    links: Vec<Vec<usize>>,
    source_links: Vec<Vec<usize>>,
}

/// Builds one independent HNSW index per partition (in parallel). Items
/// assigned to several partitions are copied into each, with ids local to
/// the partition.
pub fn build_partitioned_db(
    pool: &EmbeddedPool,
    assignment: &PartitionAssignment,
    spec: PartitionSpec,
    params: HnswParams,
) -> Result<PartitionedDatabase> {
    params.validate()?;
    assignment.validate(pool.len())?;
    let dim = pool.pair_embeddings.first().map_or(0, Embedding::dim);
    let built: Vec<(Partition, Duration)> = (0..assignment.m)
        .into_par_iter()
        .map(|pid| {
            let memories: Vec<Memory> = assignment
                .members(pid)
                .into_iter()
                .enumerate()
                .map(|(id, origin)| Memory {
                    id,
                    origin,
                    source: pool.pool.pairs[origin].source.clone(),
                    target: pool.pool.pairs[origin].target.clone(),
                    embedding: pool.pair_embeddings[origin].clone(),
                    source_embedding: pool.source_embeddings[origin].clone(),
                })
                .collect();
            let part_params = HnswParams { seed: params.seed.wrapping_add(pid as u64), ..params };
            let start = Instant::now();
            let p = Partition::build(pid, memories, part_params, dim)?;
            Ok((p, start.elapsed()))
        })
        .collect::<Result<_>>()?;
    let (partitions, build_times) = built.into_iter().unzip();
    Ok(PartitionedDatabase { spec, params, dim, partitions, build_times })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{TaskKind, TextPair};
    use crate::partition::Strategy;

    fn pool(n: usize) -> (EmbeddedPool, Embedder) {
        let embedder = Embedder::hash(64, 1);
        let pairs = (0..n).map(|i| TextPair::new(format!("source {i} about topic {}", i % 7), format!("target {i}"))).collect();
        (EmbeddedPool::new(Dataset::new(TaskKind::Summarization, pairs), &embedder).unwrap(), embedder)
    }

    #[test]
    fn single_item_single_partition() {
        let (p, _) = pool(1);
        let a = PartitionAssignment::from_labels(1, &[0]);
        let db = build_partitioned_db(&p, &a, PartitionSpec::new(Strategy::Randomization, 1, 0), HnswParams::default()).unwrap();
        assert_eq!(db.m(), 1);
        assert_eq!(db.partition(0).unwrap().len(), 1);
        db.check_invariants().unwrap();
    }

    #[test]
    fn multi_assigned_items_get_local_ids() {
        let (p, _) = pool(3);
        let a = PartitionAssignment { m: 2, assignments: vec![vec![0], vec![0, 1], vec![1]], warnings: vec![] };
        let db = build_partitioned_db(&p, &a, PartitionSpec::new(Strategy::Category, 2, 0), HnswParams::default()).unwrap();
        let origins = |pid: usize| db.partition(pid).unwrap().memories().iter().map(|m| (m.id, m.origin)).collect::<Vec<_>>();
        assert_eq!(origins(0), vec![(0, 0), (1, 1)]);
        assert_eq!(origins(1), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn update_then_self_retrieval() {
        let (p, embedder) = pool(60);
        let a = PartitionAssignment::from_labels(2, &(0..60).map(|i| i % 2).collect::<Vec<_>>());
        let mut db = build_partitioned_db(&p, &a, PartitionSpec::new(Strategy::Randomization, 2, 0), HnswParams::default()).unwrap();
        db.update_memory_target(&embedder, 1, 4, "a completely different refined target").unwrap();
        let m = db.memory(1, 4).unwrap().clone();
        assert_eq!(m.embedding, embedder.embed_pair(&m.source, &m.target).unwrap());
        assert_eq!(db.knn_search(1, Space::Pair, &m.embedding, 1).unwrap()[0].0, 4);
        db.check_invariants().unwrap();

        let before = db.memory(1, 4).unwrap().embedding.clone();
        let same = db.memory(1, 4).unwrap().target.clone();
        db.update_memory_target(&embedder, 1, 4, &same).unwrap();
        assert_eq!(db.memory(1, 4).unwrap().embedding, before);

        assert!(matches!(db.update_memory_target(&embedder, 1, 99, "x"), Err(Error::UnknownId(_))));
        assert!(matches!(db.update_memory_target(&embedder, 5, 0, "x"), Err(Error::UnknownId(_))));
    }

    #[test]
    fn empty_partition_searches_return_nothing() {
        let (p, _) = pool(4);
        let a = PartitionAssignment::from_labels(2, &[0, 0, 0, 0]);
        let db = build_partitioned_db(&p, &a, PartitionSpec::new(Strategy::Randomization, 2, 0), HnswParams::default()).unwrap();
        let q = p.pair_embeddings[0].clone();
        assert!(db.knn_search(1, Space::Pair, &q, 3).unwrap().is_empty());
        assert!(db.brute_force_knn(1, Space::Pair, &q, 3).unwrap().is_empty());
    }

    #[test]
    fn save_and_reload_reproduce_searches() {
        let (p, embedder) = pool(80);
        let a = PartitionAssignment::from_labels(3, &(0..80).map(|i| i % 3).collect::<Vec<_>>());
        let mut db = build_partitioned_db(&p, &a, PartitionSpec::new(Strategy::Randomization, 3, 9), HnswParams::default()).unwrap();
        db.update_memory_target(&embedder, 2, 5, "refined").unwrap();
        let dir = tempfile::tempdir().unwrap();
        db.save(dir.path()).unwrap();
        let loaded = PartitionedDatabase::load(dir.path()).unwrap();
        assert_eq!(loaded.fingerprint(), db.fingerprint());
        for q in p.pair_embeddings.iter().take(20) {
            for pid in 0..3 {
                assert_eq!(loaded.knn_search(pid, Space::Pair, q, 5).unwrap(), db.knn_search(pid, Space::Pair, q, 5).unwrap());
                assert_eq!(loaded.knn_search(pid, Space::Source, q, 5).unwrap(), db.knn_search(pid, Space::Source, q, 5).unwrap());
            }
        }
    }
}
