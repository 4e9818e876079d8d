//! UAV–CS association by K-Means clustering of CS positions.
//!
//! Each run initializes the centroids at `U` distinct CS positions chosen
//! by k-means++ seeding (each next centroid drawn with probability
//! proportional to its squared distance from the nearest chosen one), then
//! alternates nearest-centroid assignment with centroid averaging until the
//! centroids repeat. Equal distances go to the lowest UAV index. An empty
//! cluster takes over the CS farthest from its current centroid. Several
//! restarts are run (every distinct initial subset, when there are few
//! enough) and the partition with the smallest within-cluster sum of
//! squares is kept.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::types::Point;

/// Partition of CSs into per-UAV clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Association {
    /// `J_u`, each sorted ascending.
    pub clusters: Vec<Vec<usize>>,
    pub centroids: Vec<Point>,
    /// Serving UAV of every CS.
    pub serving: Vec<usize>,
    /// Within-cluster sum of squares after every Lloyd iteration of the
    /// selected restart.
    pub wcss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AssociationError {
    #[error("cannot form {uavs} non-empty clusters from {cs} CSs")]
    TooFewCs { cs: usize, uavs: usize },
    #[error("need at least one UAV")]
    NoUav,
}

impl Association {
    pub fn from_clusters(mut clusters: Vec<Vec<usize>>, centroids: Vec<Point>) -> Self {
        clusters.iter_mut().for_each(|c| c.sort_unstable());
        let k = clusters.iter().map(|c| c.len()).sum();
        let mut serving = vec![usize::MAX; k];
        for (u, c) in clusters.iter().enumerate() {
            for &j in c {
                serving[j] = u;
            }
        }
        Self { clusters, centroids, serving, wcss_history: Vec::new() }
    }

    pub fn n_uav(&self) -> usize {
        self.clusters.len()
    }

    /// Disjoint, covering and non-empty.
    pub fn is_valid_partition(&self, k: usize) -> bool {
        let mut seen = vec![false; k];
        for c in &self.clusters {
            if c.is_empty() {
                return false;
            }
            for &j in c {
                if j >= k || seen[j] {
                    return false;
                }
                seen[j] = true;
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Within-cluster sum of squared distances to the cluster means.
pub fn wcss(points: &[Point], clusters: &[Vec<usize>]) -> f64 {
    clusters
        .iter()
        .filter(|c| !c.is_empty())
        .map(|c| {
            let m = mean(points, c);
            c.iter().map(|&j| (points[j] - m).norm_squared()).sum::<f64>()
        })
        .sum()
}

fn mean(points: &[Point], idx: &[usize]) -> Point {
    idx.iter().map(|&j| points[j]).sum::<Point>() / idx.len() as f64
}

fn nearest(p: &Point, centroids: &[Point]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (u, c) in centroids.iter().enumerate() {
        let d = (p - c).norm_squared();
        if d < best_d {
            best = u;
            best_d = d;
        }
    }
    best
}

/// Lloyd iterations from the given centroids.
pub fn kmeans_from(points: &[Point], init: &[Point], max_iter: usize) -> Association {
    let u_n = init.len();
    let mut centroids = init.to_vec();
    let mut history = Vec::new();
    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); u_n];
    for _ in 0..max_iter.max(1) {
        clusters = vec![Vec::new(); u_n];
        for (j, p) in points.iter().enumerate() {
            clusters[nearest(p, &centroids)].push(j);
        }
        repair_empty(points, &mut clusters, &centroids);
        let next: Vec<Point> = clusters.iter().map(|c| mean(points, c)).collect();
        history.push(wcss(points, &clusters));
        let done = next == centroids;
        centroids = next;
        if done {
            break;
        }
    }
    let mut a = Association::from_clusters(clusters, centroids);
    a.wcss_history = history;
    a
}

/// Moves the CS farthest from its centroid into each empty cluster.
fn repair_empty(points: &[Point], clusters: &mut [Vec<usize>], centroids: &[Point]) {
    while let Some(empty) = clusters.iter().position(|c| c.is_empty()) {
        let mut best: Option<(usize, usize, f64)> = None;
        for (u, c) in clusters.iter().enumerate() {
            if c.len() < 2 {
                continue;
            }
            for &j in c {
                let d = (points[j] - centroids[u]).norm_squared();
                if best.map_or(true, |(_, bj, bd)| d > bd || (d == bd && j < bj)) {
                    best = Some((u, j, d));
                }
            }
        }
        let Some((from, j, _)) = best else { return };
        clusters[from].retain(|&x| x != j);
        clusters[empty].push(j);
    }
}

/// All `k`-subsets of `0..n` in lexicographic order, or `None` when there
/// are more than `limit`.
fn subsets(n: usize, k: usize, limit: usize) -> Option<Vec<Vec<usize>>> {
    let mut count: usize = 1;
    for i in 0..k {
        count = count.checked_mul(n - i)? / (i + 1);
    }
    if count > limit {
        return None;
    }
    let mut out = Vec::with_capacity(count);
    let mut c: Vec<usize> = (0..k).collect();
    loop {
        out.push(c.clone());
        let Some(i) = (0..k).rev().find(|&i| c[i] < n - k + i) else { return Some(out) };
        c[i] += 1;
        for j in i + 1..k {
            c[j] = c[j - 1] + 1;
        }
    }
}

/// k-means++ seeding over the CSs in `order`. Falls back to a uniform draw
/// among unchosen CSs when every remaining CS coincides with a centroid.
fn seed_centroids(points: &[Point], order: &[usize], n_uav: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let mut chosen = vec![order[rng.gen_range(0..order.len())]];
    while chosen.len() < n_uav {
        let d2: Vec<f64> = order
            .iter()
            .map(|&j| chosen.iter().map(|&c| (points[j] - points[c]).norm_squared()).fold(f64::INFINITY, f64::min))
            .map(|d| if d.is_finite() { d } else { 0.0 })
            .collect();
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => order[w.sample(rng)],
            Err(_) => {
                let free: Vec<usize> = order.iter().copied().filter(|j| !chosen.contains(j)).collect();
                free[rng.gen_range(0..free.len())]
            }
        };
        chosen.push(next);
    }
    chosen.into_iter().map(|j| points[j]).collect()
}

/// K-Means association with `restarts` seeded initializations. When the
/// CSs admit at most `restarts` distinct centroid subsets, every subset is
/// tried instead and the seed is unused.
///
/// Initial centroids are drawn from the CS positions in lexicographic
/// order, so relabeling the CSs relabels the output identically.
pub fn kmeans_associate(
    points: &[Point],
    n_uav: usize,
    seed: u64,
    max_iter: usize,
    restarts: usize,
) -> Result<Association, AssociationError> {
    if n_uav == 0 {
        return Err(AssociationError::NoUav);
    }
    if points.len() < n_uav {
        return Err(AssociationError::TooFewCs { cs: points.len(), uavs: n_uav });
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a].x.total_cmp(&points[b].x).then(points[a].y.total_cmp(&points[b].y))
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let restarts = restarts.max(1);
    let exhaustive = subsets(order.len(), n_uav, restarts);
    let mut best: Option<(f64, Association)> = None;
    for r in 0..exhaustive.as_ref().map_or(restarts, Vec::len) {
        let init = match &exhaustive {
            Some(all) => all[r].iter().map(|&i| points[order[i]]).collect(),
            None => seed_centroids(points, &order, n_uav, &mut rng),
        };
        let a = kmeans_from(points, &init, max_iter);
        let score = wcss(points, &a.clusters);
        if best.as_ref().map_or(true, |(b, _)| score < *b * (1.0 - 1e-12)) {
            best = Some((score, a));
        }
    }
    Ok(best.expect("at least one restart").1)
}
