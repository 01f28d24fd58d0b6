use nalgebra::{DMatrix, SymmetricEigen};

use super::kmeans::{kmeans, KMeansConfig};
use super::{PartitionAssignment, PartitionSpec};
use crate::embed::Embedding;
use crate::error::{Error, Result};
use crate::index::{Hnsw, HnswParams};

/// Largest pool the dense eigensolver accepts.
pub const SPECTRAL_SIZE_CAP: usize = 20_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResult {
    pub labels: Vec<usize>,
    /// All eigenvalues of the normalized Laplacian, ascending.
    pub eigenvalues: Vec<f64>,
    pub warnings: Vec<String>,
}

/// `L = I − D^{-1/2} A D^{-1/2}` for the symmetrized adjacency of
/// `neighbors` (an edge exists if either endpoint lists the other).
/// Isolated nodes keep a unit diagonal.
pub fn normalized_laplacian(neighbors: &[Vec<usize>]) -> DMatrix<f64> {
    let n = neighbors.len();
    let mut adj = DMatrix::<f64>::zeros(n, n);
    for (i, ns) in neighbors.iter().enumerate() {
        for &j in ns {
            if i != j {
                adj[(i, j)] = 1.0;
                adj[(j, i)] = 1.0;
            }
        }
    }
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = adj.row(i).sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut lap = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            if adj[(i, j)] != 0.0 {
                lap[(i, j)] -= inv_sqrt_deg[i] * inv_sqrt_deg[j];
            }
        }
    }
    lap
}

/// Spectral partition of a graph given as adjacency lists: embed each node
/// by the rows of the `m` eigenvectors with the smallest eigenvalues,
/// normalize rows to unit length, then K-means with `k = m`.
pub fn spectral_partition_graph(neighbors: &[Vec<usize>], m: usize, seed: u64) -> Result<SpectralResult> {
    let n = neighbors.len();
    if n > SPECTRAL_SIZE_CAP {
        return Err(Error::TooLarge { size: n, cap: SPECTRAL_SIZE_CAP });
    }
    if m <= 1 || n == 0 {
        return Ok(SpectralResult { labels: vec![0; n], eigenvalues: Vec::new(), warnings: Vec::new() });
    }
    let eig = SymmetricEigen::new(normalized_laplacian(neighbors));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    let rows: Vec<Vec<f64>> = (0..n)
        .map(|r| {
            let mut row: Vec<f64> = order[..m].iter().map(|&c| eig.eigenvectors[(r, c)]).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
            row
        })
        .collect();
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let km = kmeans(&refs, &KMeansConfig::new(m, seed));
    Ok(SpectralResult { labels: km.labels, eigenvalues, warnings: km.warnings })
}

/// Builds an HNSW graph over the vectors, takes its base layer as the
/// neighborhood graph and partitions it spectrally.
pub fn partition_indexing(vectors: &[Embedding], spec: &PartitionSpec, hnsw: &HnswParams) -> Result<PartitionAssignment> {
    spec.validate(vectors.len())?;
    if vectors.len() > SPECTRAL_SIZE_CAP {
        return Err(Error::TooLarge { size: vectors.len(), cap: SPECTRAL_SIZE_CAP });
    }
    let dim = vectors.first().map_or(0, Embedding::dim);
    let mut graph = Hnsw::new(*hnsw, dim);
    for (i, v) in vectors.iter().enumerate() {
        graph.insert(i, v.values().to_vec())?;
    }
    let base: Vec<Vec<usize>> = (0..vectors.len())
        .map(|i| graph.node(i).map(|n| n.links[0].clone()).unwrap_or_default())
        .collect();
    let res = spectral_partition_graph(&base, spec.m, spec.seed)?;
    let mut assignment = PartitionAssignment::from_labels(spec.m, &res.labels);
    assignment.warnings = res.warnings;
    Ok(assignment)
}
