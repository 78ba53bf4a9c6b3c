use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MergeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    pub max_iter: usize,
    /// Stop when inertia improves by less than this fraction.
    pub tol: f64,
    /// Independent k-means++ restarts; the lowest inertia wins.
    pub n_init: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { max_iter: 300, tol: 1e-6, n_init: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
    /// Inertia after every Lloyd iteration of the winning restart.
    pub history: Vec<f64>,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn kmeans(points: ArrayView2<f64>, k: usize, seed: u64) -> Result<KMeansResult> {
    kmeans_with(points, k, seed, &KMeansConfig::default())
}

/// Lloyd's algorithm from k-means++ seeds, finished by single-point (Hartigan) moves. Restart `r` draws from ChaCha8 stream `r` of `seed`.
pub fn kmeans_with(points: ArrayView2<f64>, k: usize, seed: u64, cfg: &KMeansConfig) -> Result<KMeansResult> {
    let m = points.nrows();
    if k == 0 || k > m {
        return Err(MergeError::InvalidInput(format!("k = {k} must be in 1..={m}")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(MergeError::InvalidInput("non-finite point coordinates".into()));
    }
    let mut best: Option<KMeansResult> = None;
    for r in 0..cfg.n_init.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let run = lloyd(points, plus_plus(points, k, &mut rng), cfg);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn plus_plus<R: Rng>(points: ArrayView2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let m = points.nrows();
    let mut centroids = Array2::zeros((k, points.ncols()));
    let first = rng.random_range(0..m);
    centroids.row_mut(0).assign(&points.row(first));
    let mut d2: Vec<f64> = (0..m).map(|i| sq_dist(points.row(i), points.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            WeightedIndex::new(&d2).expect("positive total").sample(rng)
        } else {
            rng.random_range(0..m)
        };
        centroids.row_mut(c).assign(&points.row(pick));
        for i in 0..m {
            d2[i] = d2[i].min(sq_dist(points.row(i), points.row(pick)));
        }
    }
    centroids
}

fn assign(points: ArrayView2<f64>, centroids: &Array2<f64>, labels: &mut [usize]) -> Vec<f64> {
    let mut dists = vec![0.0; points.nrows()];
    for (i, p) in points.rows().into_iter().enumerate() {
        let (mut bj, mut bd) = (0, f64::INFINITY);
        for (j, c) in centroids.rows().into_iter().enumerate() {
            let d = sq_dist(p, c);
            if d < bd {
                bj = j;
                bd = d;
            }
        }
        labels[i] = bj;
        dists[i] = bd;
    }
    dists
}

/// Gives every empty cluster the point currently farthest from its centroid.
fn repair_empty(labels: &mut [usize], dists: &mut [f64], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return };
        let far = (0..labels.len())
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
            .expect("k <= m leaves a shared cluster");
        labels[far] = empty;
        dists[far] = 0.0;
    }
}

fn centroids_of(points: ArrayView2<f64>, labels: &[usize], k: usize) -> Array2<f64> {
    let mut sums = Array2::zeros((k, points.ncols()));
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        sums.row_mut(l).scaled_add(1.0, &points.row(i));
        counts[l] += 1;
    }
    for (j, mut row) in sums.rows_mut().into_iter().enumerate() {
        row /= counts[j] as f64;
    }
    sums
}

fn inertia_of(points: ArrayView2<f64>, labels: &[usize], centroids: &Array2<f64>) -> f64 {
    labels.iter().enumerate().map(|(i, &l)| sq_dist(points.row(i), centroids.row(l))).sum()
}

fn lloyd(points: ArrayView2<f64>, mut centroids: Array2<f64>, cfg: &KMeansConfig) -> KMeansResult {
    let k = centroids.nrows();
    let mut labels = vec![0; points.nrows()];
    let mut history = Vec::new();
    let mut prev = f64::INFINITY;
    for _ in 0..cfg.max_iter.max(1) {
        let mut dists = assign(points, &centroids, &mut labels);
        repair_empty(&mut labels, &mut dists, k);
        centroids = centroids_of(points, &labels, k);
        let inertia = inertia_of(points, &labels, &centroids);
        history.push(inertia);
        if prev.is_finite() && prev - inertia <= cfg.tol * prev {
            break;
        }
        prev = inertia;
    }
    if hartigan_pass(points, &mut labels, k, cfg.max_iter) {
        centroids = centroids_of(points, &labels, k);
        history.push(inertia_of(points, &labels, &centroids));
    }
    let inertia = *history.last().expect("one iteration");
    KMeansResult { labels, centroids, inertia, history }
}

/// Single-point moves that strictly lower inertia: moving `x` from `A` to `B`
/// changes it by `n_B/(n_B+1) |x-c_B|^2 - n_A/(n_A-1) |x-c_A|^2`. Every Lloyd
/// fixed point that admits such a move is escaped. Returns whether anything moved.
fn hartigan_pass(points: ArrayView2<f64>, labels: &mut [usize], k: usize, max_sweeps: usize) -> bool {
    let d = points.ncols();
    let mut sums = Array2::<f64>::zeros((k, d));
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        sums.row_mut(l).scaled_add(1.0, &points.row(i));
        counts[l] += 1;
    }
    let dist_to = |sums: &Array2<f64>, n: usize, c: usize, x: ArrayView1<f64>| -> f64 {
        (0..d).map(|j| (x[j] - sums[[c, j]] / n as f64).powi(2)).sum()
    };
    let mut moved_any = false;
    for _ in 0..max_sweeps.max(1) {
        let mut moved = false;
        for i in 0..points.nrows() {
            let a = labels[i];
            if counts[a] <= 1 {
                continue;
            }
            let x = points.row(i);
            let na = counts[a] as f64;
            let remove_gain = na / (na - 1.0) * dist_to(&sums, counts[a], a, x);
            let mut best: Option<(usize, f64)> = None;
            for b in (0..k).filter(|&b| b != a) {
                let nb = counts[b] as f64;
                let add_cost = nb / (nb + 1.0) * dist_to(&sums, counts[b], b, x);
                if best.is_none_or(|(_, c)| add_cost < c) {
                    best = Some((b, add_cost));
                }
            }
            if let Some((b, add_cost)) = best {
                if add_cost < remove_gain * (1.0 - 1e-12) {
                    sums.row_mut(a).scaled_add(-1.0, &x);
                    sums.row_mut(b).scaled_add(1.0, &x);
                    counts[a] -= 1;
                    counts[b] += 1;
                    labels[i] = b;
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
        moved_any = true;
    }
    moved_any
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn separates_two_blobs() {
        let pts = array![[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [10.0, 10.0], [10.1, 10.0], [10.0, 10.1]];
        let r = kmeans(pts.view(), 2, 0).unwrap();
        assert_eq!(r.labels[0], r.labels[1]);
        assert_eq!(r.labels[0], r.labels[2]);
        assert_eq!(r.labels[3], r.labels[4]);
        assert_eq!(r.labels[3], r.labels[5]);
        assert_ne!(r.labels[0], r.labels[3]);
    }

    #[test]
    fn one_cluster_per_point() {
        let pts = array![[0.0, 1.0], [2.0, 3.0], [5.0, -1.0], [0.5, 0.5]];
        let r = kmeans(pts.view(), 4, 9).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut l = r.labels.clone();
        l.sort();
        assert_eq!(l, vec![0, 1, 2, 3]);
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let pts = array![[1.0], [1.0], [1.0], [2.0]];
        let r = kmeans(pts.view(), 3, 1).unwrap();
        let mut used = r.labels.clone();
        used.sort();
        used.dedup();
        assert_eq!(used.len(), 3);
    }

    #[test]
    fn inertia_history_is_non_increasing_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = Array2::from_shape_fn((200, 3), |_| rng.random_range(-1.0..1.0));
        let a = kmeans(pts.view(), 7, 5).unwrap();
        for w in a.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert_eq!(a, kmeans(pts.view(), 7, 5).unwrap());
    }

    #[test]
    fn rejects_too_many_clusters() {
        assert!(kmeans(array![[0.0]].view(), 2, 0).is_err());
    }
}
