use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tolerance: f64,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self { k, max_iters: 100, tolerance: 1e-6, seed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances after each completed iteration.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn objective(points: &[&[f64]], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points.iter().zip(labels).map(|(p, &l)| sq_dist(p, &centroids[l])).sum()
}

fn distinct_count(points: &[&[f64]], cap: usize) -> usize {
    let mut distinct: Vec<&[f64]> = Vec::new();
    for p in points {
        if !distinct.iter().any(|d| d == p) {
            distinct.push(p);
            if distinct.len() >= cap {
                break;
            }
        }
    }
    distinct.len()
}

/// k-means++ seeding: first centroid uniform, then proportional to the
/// squared distance to the nearest chosen centroid.
fn plus_plus_init(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].to_vec()];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let idx = if total <= 0.0 {
            rng.random_range(0..points.len())
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        };
        let c = points[idx].to_vec();
        for (n, p) in nearest.iter_mut().zip(points) {
            *n = n.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// A cluster that empties during assignment is re-seeded with the point
/// farthest from its current centroid. When the input has fewer distinct
/// points than `k`, items are dealt round-robin and a warning is recorded.
pub fn kmeans(points: &[&[f64]], cfg: &KMeansConfig) -> KMeansResult {
    let n = points.len();
    let k = cfg.k.max(1);
    if n == 0 {
        return KMeansResult {
            labels: Vec::new(),
            centroids: Vec::new(),
            objective_history: Vec::new(),
            iterations: 0,
            warnings: Vec::new(),
        };
    }
    if k == 1 {
        let dim = points[0].len();
        let mut c = vec![0.0; dim];
        for p in points {
            for (ci, pi) in c.iter_mut().zip(p.iter()) {
                *ci += pi;
            }
        }
        c.iter_mut().for_each(|v| *v /= n as f64);
        let labels = vec![0; n];
        let obj = objective(points, &labels, std::slice::from_ref(&c));
        return KMeansResult { labels, centroids: vec![c], objective_history: vec![obj], iterations: 1, warnings: Vec::new() };
    }
    if distinct_count(points, k) < k {
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let mut centroids = vec![vec![0.0; points[0].len()]; k];
        update_centroids(points, &labels, &mut centroids);
        return KMeansResult {
            labels,
            centroids,
            objective_history: Vec::new(),
            iterations: 0,
            warnings: vec![format!(
                "degenerate input: fewer than {k} distinct vectors, fell back to round-robin assignment"
            )],
        };
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut labels = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut iterations = 0;

    for _ in 0..cfg.max_iters {
        iterations += 1;
        // assignment: keep the current label unless another centroid is
        // strictly closer, so ties never increase the objective
        for (i, p) in points.iter().enumerate() {
            let mut best = labels[i];
            let mut best_d = if best == usize::MAX { f64::INFINITY } else { sq_dist(p, &centroids[best]) };
            for (c, centroid) in centroids.iter().enumerate() {
                let d = sq_dist(p, centroid);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            labels[i] = best;
        }
        reseed_empty(points, &mut labels, &mut centroids);

        let previous = centroids.clone();
        update_centroids(points, &labels, &mut centroids);
        history.push(objective(points, &labels, &centroids));

        let shift = previous
            .iter()
            .zip(&centroids)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        if shift < cfg.tolerance {
            break;
        }
    }

    KMeansResult { labels, centroids, objective_history: history, iterations, warnings: Vec::new() }
}

fn reseed_empty(points: &[&[f64]], labels: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        // farthest point among clusters that can spare one
        let mut far: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if counts[labels[i]] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[labels[i]]);
            if far.is_none_or(|(_, fd)| d > fd) {
                far = Some((i, d));
            }
        }
        let Some((i, _)) = far else {
            return;
        };
        labels[i] = empty;
        centroids[empty] = points[i].to_vec();
    }
}

fn update_centroids(points: &[&[f64]], labels: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p.iter()) {
            *s += v;
        }
    }
    for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
        if n > 0 {
            *c = s.into_iter().map(|v| v / n as f64).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn blobs(n_per: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for label in 0..2 {
            for _ in 0..n_per {
                let mut p: Vec<f64> = (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                p[0] += label as f64 * sep;
                pts.push(p);
                truth.push(label);
            }
        }
        (pts, truth)
    }

    #[test]
    fn separates_well_separated_blobs() {
        let (pts, truth) = blobs(100, 10.0, 1);
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let res = kmeans(&refs, &KMeansConfig::new(2, 7));
        let agree = res.labels.iter().zip(&truth).filter(|(a, b)| a == b).count();
        let agreement = agree.max(truth.len() - agree) as f64 / truth.len() as f64;
        assert!(agreement >= 0.99, "{agreement}");
    }

    #[test]
    fn objective_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Vec<f64>> = (0..300).map(|_| (0..5).map(|_| rng.random::<f64>()).collect()).collect();
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        for k in [2, 3, 5, 8] {
            let res = kmeans(&refs, &KMeansConfig::new(k, k as u64));
            for w in res.objective_history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "k={k}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn single_cluster_and_degenerate_input() {
        let pts = [vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]];
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let one = kmeans(&refs, &KMeansConfig::new(1, 0));
        assert_eq!(one.labels, vec![0, 0, 0]);
        let deg = kmeans(&refs, &KMeansConfig::new(2, 0));
        assert_eq!(deg.labels, vec![0, 1, 0]);
        assert_eq!(deg.warnings.len(), 1);
    }

    #[test]
    fn every_cluster_is_non_empty() {
        // three points, three clusters, one far outlier
        let pts = [vec![0.0], vec![0.001], vec![100.0]];
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let res = kmeans(&refs, &KMeansConfig::new(3, 11));
        let mut l = res.labels.clone();
        l.sort_unstable();
        assert_eq!(l, vec![0, 1, 2]);
    }
}
