#![allow(dead_code)]

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saetm::ctm::sample_dirichlet;
use saetm::interpret::BowCorpus;
use saetm::merge::{kmeans, Topic, TopicModel};
use saetm::sae::Activations;

/// Minimum-cost assignment of rows to distinct columns (`rows <= cols`),
/// O(n^2 m) shortest augmenting paths with potentials. Returns the column of each row.
pub fn hungarian(cost: &Array2<f64>) -> Vec<usize> {
    let (n, m) = cost.dim();
    assert!(n <= m);
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

/// Number of ground-truth rows matched (Hungarian on `-|cos|`) to a learned row
/// with `|cos| >= threshold`. Both inputs hold unit rows.
pub fn matched_directions(truth: &Array2<f64>, learned: &Array2<f64>, threshold: f64) -> usize {
    let cos = truth.dot(&learned.t()).mapv(f64::abs);
    let assignment = hungarian(&cos.mapv(|c| -c));
    assignment.iter().enumerate().filter(|&(i, &j)| cos[[i, j]] >= threshold).count()
}

/// Adjusted Rand index between two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |n: u64| (n * n.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().flatten().map(|&n| c2(n)).sum();
    let rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(a.len() as u64);
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Dense tableau simplex for `min c.x  s.t.  A x = b, x >= 0` with `b >= 0`,
/// two-phase with Bland's rule. Returns the optimal objective.
pub fn simplex_min(a: &Array2<f64>, b: &[f64], c: &[f64]) -> f64 {
    let (m, n) = a.dim();
    let eps = 1e-12;
    // columns: n originals, m artificials, rhs
    let width = n + m + 1;
    let mut t = Array2::<f64>::zeros((m + 1, width));
    for i in 0..m {
        for j in 0..n {
            t[[i, j]] = a[[i, j]];
        }
        t[[i, n + i]] = 1.0;
        t[[i, width - 1]] = b[i];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    let pivot = |t: &mut Array2<f64>, basis: &mut Vec<usize>, r: usize, col: usize| {
        let pv = t[[r, col]];
        for j in 0..width {
            t[[r, j]] /= pv;
        }
        for i in 0..=m {
            if i != r {
                let f = t[[i, col]];
                if f != 0.0 {
                    for j in 0..width {
                        t[[i, j]] -= f * t[[r, j]];
                    }
                }
            }
        }
        basis[r] = col;
    };

    let run = |t: &mut Array2<f64>, basis: &mut Vec<usize>, allowed: usize| loop {
        let Some(col) = (0..allowed).find(|&j| t[[m, j]] < -eps) else { break };
        let mut best: Option<(usize, f64)> = None;
        for i in 0..m {
            if t[[i, col]] > eps {
                let ratio = t[[i, width - 1]] / t[[i, col]];
                match best {
                    Some((bi, br)) if ratio > br + eps || (ratio > br - eps && basis[i] > basis[bi]) => {}
                    _ => best = Some((i, ratio)),
                }
            }
        }
        let (r, _) = best.expect("bounded");
        pivot(t, basis, r, col);
    };

    // phase one: minimise the sum of artificials
    for j in 0..width {
        t[[m, j]] = -(0..m).map(|i| t[[i, j]]).sum::<f64>();
    }
    for i in 0..m {
        t[[m, n + i]] = 0.0;
    }
    run(&mut t, &mut basis, n + m);
    assert!(t[[m, width - 1]].abs() < 1e-9, "infeasible");
    for r in 0..m {
        if basis[r] >= n {
            if let Some(col) = (0..n).find(|&j| t[[r, j]].abs() > eps) {
                pivot(&mut t, &mut basis, r, col);
            }
        }
    }
    // phase two
    for j in 0..width {
        t[[m, j]] = if j < n { c[j] } else { 0.0 };
    }
    for r in 0..m {
        if basis[r] < n {
            let f = t[[m, basis[r]]];
            for j in 0..width {
                t[[m, j]] -= f * t[[r, j]];
            }
        }
    }
    for i in 0..m {
        for j in n..n + m {
            if basis[i] != j {
                t[[i, j]] = 0.0;
            }
        }
    }
    run(&mut t, &mut basis, n);
    -t[[m, width - 1]]
}

/// Transport LP between uniform masses on `n` sources and `m` sinks.
pub fn uniform_transport_lp(cost: &Array2<f64>) -> f64 {
    let (n, m) = cost.dim();
    let mut a = Array2::zeros((n + m, n * m));
    let mut b = vec![0.0; n + m];
    for i in 0..n {
        for j in 0..m {
            a[[i, i * m + j]] = 1.0;
            a[[n + j, i * m + j]] = 1.0;
        }
        b[i] = 1.0 / n as f64;
    }
    for j in 0..m {
        b[n + j] = 1.0 / m as f64;
    }
    let c: Vec<f64> = cost.iter().copied().collect();
    simplex_min(&a, &b, &c)
}

/// Rows with most of their mass on five distinct anchor words.
pub fn peaked_rows(k: usize, v: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut b = Array2::from_shape_fn((k, v), |_| rng.random_range(0.1..1.0));
    for i in 0..k {
        for j in 0..5 {
            b[[i, (5 * i + j) % v]] += 12.0 - 2.0 * j as f64;
        }
        let s = b.row(i).sum();
        b.row_mut(i).mapv_inplace(|x| x / s);
    }
    b
}

pub fn sample_corpus(b: &Array2<f64>, n_docs: usize, len: usize, seed: u64) -> (BowCorpus, Activations) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k, v) = b.dim();
    let mut docs = Vec::new();
    let mut theta = Array2::zeros((n_docs, k));
    for d in 0..n_docs {
        let t = sample_dirichlet(&vec![0.5; k], &mut rng);
        let mix: Vec<f64> = (0..v).map(|w| (0..k).map(|i| t[i] * b[[i, w]]).sum()).collect();
        let dist = WeightedIndex::new(&mix).unwrap();
        docs.push((0..len).map(|_| dist.sample(&mut rng) as u32).collect::<Vec<u32>>());
        for i in 0..k {
            theta[[d, i]] = t[i];
        }
    }
    (BowCorpus::from_token_lists(v, &docs).unwrap(), Activations::from_dense(&theta))
}

pub fn tv(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Lowest inertia over all two-way partitions, each scored with its own centroids.
pub fn exhaustive_two_cluster_inertia(points: ArrayView2<f64>) -> f64 {
    let (m, d) = points.dim();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << m) - 1 {
        let mut total = 0.0;
        for side in [true, false] {
            let idx: Vec<usize> = (0..m).filter(|&i| ((mask >> i) & 1 == 1) == side).collect();
            for j in 0..d {
                let mean = idx.iter().map(|&i| points[[i, j]]).sum::<f64>() / idx.len() as f64;
                total += idx.iter().map(|&i| (points[[i, j]] - mean).powi(2)).sum::<f64>();
            }
        }
        best = best.min(total);
    }
    best
}

pub fn kmeans_optimal_instances(seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..20)
        .map(|_| {
            let pts = Array2::from_shape_fn((8, 2), |_| rng.random_range(-1.0..1.0));
            let got = kmeans(pts.view(), 2, rng.random()).unwrap().inertia;
            (got, exhaustive_two_cluster_inertia(pts.view()))
        })
        .collect()
}

pub fn model_from_lists(lists: &[Vec<u32>], v: usize) -> TopicModel {
    let topics = lists
        .iter()
        .map(|l| {
            let mut dist = vec![0.0; v];
            for (r, &w) in l.iter().enumerate() {
                dist[w as usize] = (l.len() - r) as f64;
            }
            let s: f64 = dist.iter().sum();
            Topic { word_dist: dist.iter().map(|x| x / s).collect(), prevalence: 0.0, members: vec![] }
        })
        .collect();
    TopicModel { k_prime: lists.len(), seed: 0, emission_hash: None, topics }
}

pub fn disjoint_model(k: usize) -> (TopicModel, Vec<String>) {
    let lists: Vec<Vec<u32>> = (0..k).map(|t| (0..20).map(|j| (t * 20 + j) as u32).collect()).collect();
    let vocab = (0..k * 20).map(|w| format!("word{w}")).collect();
    (model_from_lists(&lists, k * 20), vocab)
}
