use log::warn;
use ndarray::{Array2, ArrayView1};
use serde::Serialize;

use super::{EvalError, Result};
use crate::interpret::top_words;
use crate::merge::{TopicModel, WordEmbeddingTable};

/// Exact optimal transport between uniform masses on the rows and columns of
/// `cost`: `min sum_ij T_ij C_ij` with row sums `1/n` and column sums `1/m`.
///
/// Scaled to integers (each source supplies `m` units, each sink absorbs `n`)
/// and solved as min-cost flow by successive shortest paths with Dijkstra on
/// reduced costs.
pub fn uniform_transport(cost: &Array2<f64>) -> Result<f64> {
    let (n, m) = cost.dim();
    if n == 0 || m == 0 {
        return Err(EvalError::InvalidInput("transport between empty supports".into()));
    }
    if cost.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(EvalError::InvalidInput("costs must be finite and nonnegative".into()));
    }
    let mut g = FlowGraph::new(n + m + 2);
    let (s, t) = (0, n + m + 1);
    for i in 0..n {
        g.add_edge(s, 1 + i, m as i64, 0.0);
        for j in 0..m {
            g.add_edge(1 + i, 1 + n + j, i64::MAX / 4, cost[[i, j]]);
        }
    }
    for j in 0..m {
        g.add_edge(1 + n + j, t, n as i64, 0.0);
    }
    let total = g.min_cost_flow(s, t, (n * m) as i64);
    Ok(total / (n * m) as f64)
}

struct Edge {
    to: usize,
    cap: i64,
    cost: f64,
}

struct FlowGraph {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl FlowGraph {
    fn new(nodes: usize) -> Self {
        Self { edges: Vec::new(), adj: vec![Vec::new(); nodes] }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: i64, cost: f64) {
        self.adj[from].push(self.edges.len());
        self.edges.push(Edge { to, cap, cost });
        self.adj[to].push(self.edges.len());
        self.edges.push(Edge { to: from, cap: 0, cost: -cost });
    }

    /// Sends `demand` units from `s` to `t`; returns the total cost.
    fn min_cost_flow(&mut self, s: usize, t: usize, mut demand: i64) -> f64 {
        let nodes = self.adj.len();
        // all initial costs are nonnegative, so zero potentials are feasible
        let mut potential = vec![0.0; nodes];
        let mut total = 0.0;
        while demand > 0 {
            let mut dist = vec![f64::INFINITY; nodes];
            let mut prev_edge = vec![usize::MAX; nodes];
            let mut done = vec![false; nodes];
            dist[s] = 0.0;
            // dense Dijkstra; graphs here have at most a few dozen nodes
            loop {
                let mut u = usize::MAX;
                for v in 0..nodes {
                    if !done[v] && dist[v].is_finite() && (u == usize::MAX || dist[v] < dist[u]) {
                        u = v;
                    }
                }
                if u == usize::MAX {
                    break;
                }
                done[u] = true;
                for &e in &self.adj[u] {
                    let edge = &self.edges[e];
                    if edge.cap <= 0 || done[edge.to] {
                        continue;
                    }
                    let reduced = (edge.cost + potential[u] - potential[edge.to]).max(0.0);
                    let nd = dist[u] + reduced;
                    if nd < dist[edge.to] {
                        dist[edge.to] = nd;
                        prev_edge[edge.to] = e;
                    }
                }
            }
            assert!(dist[t].is_finite(), "transport problem is always feasible");
            for v in 0..nodes {
                if dist[v].is_finite() {
                    potential[v] += dist[v];
                }
            }
            let mut push = demand;
            let mut v = t;
            while v != s {
                let e = prev_edge[v];
                push = push.min(self.edges[e].cap);
                v = self.edges[e ^ 1].to;
            }
            let mut v = t;
            while v != s {
                let e = prev_edge[v];
                self.edges[e].cap -= push;
                self.edges[e ^ 1].cap += push;
                total += push as f64 * self.edges[e].cost;
                v = self.edges[e ^ 1].to;
            }
            demand -= push;
        }
        total
    }
}

fn euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Word mover distance between two word lists with uniform weights over the
/// words that have embeddings; uncovered words are dropped.
pub fn wmd(a: &[u32], b: &[u32], table: &WordEmbeddingTable) -> Result<f64> {
    let covered = |ws: &[u32]| -> Result<Vec<usize>> {
        ws.iter()
            .map(|&w| {
                let w = w as usize;
                if w >= table.vocab_size() {
                    Err(EvalError::InvalidInput(format!("word {w} outside the embedding table")))
                } else {
                    Ok(w)
                }
            })
            .filter(|r| r.as_ref().map_or(true, |&w| table.is_covered(w)))
            .collect()
    };
    let ca = covered(a)?;
    let cb = covered(b)?;
    if ca.is_empty() || cb.is_empty() {
        return Err(EvalError::EmptyCoverage);
    }
    let cost = Array2::from_shape_fn((ca.len(), cb.len()), |(i, j)| euclidean(table.vector(ca[i]), table.vector(cb[j])));
    uniform_transport(&cost)
}

#[derive(Debug, Clone, Serialize)]
pub struct DiversityReport {
    /// Mean WMD over scored unordered topic pairs.
    pub diversity: f64,
    /// Symmetric pairwise WMD, zero diagonal, NaN for excluded pairs.
    #[serde(skip)]
    pub matrix: Array2<f64>,
    pub excluded_pairs: usize,
    /// Top words without an embedding, summed over topics.
    pub uncovered_words: usize,
}

impl DiversityReport {
    /// Pairwise matrix as CSV with a `topic` header row and column.
    pub fn matrix_csv(&self) -> String {
        let k = self.matrix.nrows();
        let mut out = String::from("topic");
        for j in 0..k {
            out.push_str(&format!(",{j}"));
        }
        out.push('\n');
        for i in 0..k {
            out.push_str(&i.to_string());
            for j in 0..k {
                let v = self.matrix[[i, j]];
                if v.is_nan() {
                    out.push(',');
                } else {
                    out.push_str(&format!(",{v}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Mean pairwise WMD between the top-`n_words` lists of all topics.
pub fn diversity(model: &TopicModel, table: &WordEmbeddingTable, n_words: usize) -> Result<DiversityReport> {
    let k = model.topics.len();
    if k < 2 {
        return Err(EvalError::InvalidInput("diversity needs at least two topics".into()));
    }
    let lists: Vec<Vec<u32>> = model
        .topics
        .iter()
        .map(|t| top_words(ArrayView1::from(&t.word_dist), n_words).into_iter().map(|w| w.0).collect())
        .collect();
    let uncovered_words = lists
        .iter()
        .flatten()
        .filter(|&&w| (w as usize) < table.vocab_size() && !table.is_covered(w as usize))
        .count();
    let mut matrix = Array2::zeros((k, k));
    let mut sum = 0.0;
    let mut scored = 0usize;
    let mut excluded = 0usize;
    for i in 0..k {
        for j in i + 1..k {
            let v = match wmd(&lists[i], &lists[j], table) {
                Ok(v) => {
                    sum += v;
                    scored += 1;
                    v
                }
                Err(EvalError::EmptyCoverage) => {
                    excluded += 1;
                    f64::NAN
                }
                Err(e) => return Err(e),
            };
            matrix[[i, j]] = v;
            matrix[[j, i]] = v;
        }
    }
    if excluded > 0 {
        warn!("{excluded} topic pairs excluded from diversity: no embedded top words");
    }
    if scored == 0 {
        return Err(EvalError::EmptyCoverage);
    }
    Ok(DiversityReport { diversity: sum / scored as f64, matrix, excluded_pairs: excluded, uncovered_words })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::merge::Topic;
    use ndarray::array;

    #[test]
    fn identical_lists_cost_nothing() {
        let table = WordEmbeddingTable::dense(array![[0.0, 0.0], [1.0, 2.0], [3.0, -1.0]]).unwrap();
        assert_eq!(wmd(&[0, 1, 2], &[2, 0, 1], &table).unwrap(), 0.0);
    }

    #[test]
    fn singletons_at_unit_distance() {
        let table = WordEmbeddingTable::dense(array![[0.0, 0.0], [0.6, 0.8]]).unwrap();
        assert!((wmd(&[0], &[1], &table).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn one_to_many_averages_distances() {
        let table = WordEmbeddingTable::dense(array![[0.0], [1.0], [3.0]]).unwrap();
        assert!((wmd(&[0], &[1, 2], &table).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn uncovered_words_are_dropped() {
        let table = WordEmbeddingTable::new(array![[0.0], [1.0], [5.0]], vec![true, true, false]).unwrap();
        assert!((wmd(&[0, 2], &[1], &table).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(wmd(&[2], &[1], &table), Err(EvalError::EmptyCoverage)));
    }

    fn topic(dist: Vec<f64>) -> Topic {
        Topic { word_dist: dist, prevalence: 0.1, members: vec![] }
    }

    #[test]
    fn diversity_of_three_topics_is_mean_of_pairs() {
        let table = WordEmbeddingTable::dense(array![[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 3.0]]).unwrap();
        let model = TopicModel {
            k_prime: 3,
            seed: 0,
            emission_hash: None,
            topics: vec![
                topic(vec![0.6, 0.4, 0.0, 0.0]),
                topic(vec![0.0, 0.0, 0.5, 0.5]),
                topic(vec![0.0, 0.7, 0.3, 0.0]),
            ],
        };
        let r = diversity(&model, &table, 2).unwrap();
        let pairs = [
            wmd(&[0, 1], &[2, 3], &table).unwrap(),
            wmd(&[0, 1], &[1, 2], &table).unwrap(),
            wmd(&[2, 3], &[1, 2], &table).unwrap(),
        ];
        assert!((r.diversity - pairs.iter().sum::<f64>() / 3.0).abs() < 1e-12);
        assert_eq!(r.matrix[[0, 1]], r.matrix[[1, 0]]);
        assert!(r.matrix_csv().starts_with("topic,0,1,2\n0,0,"));
    }
}
