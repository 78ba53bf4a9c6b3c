use log::warn;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{kmeans_with, KMeansConfig, MergeError, Result, WordEmbeddingTable};
use crate::interpret::{top_words, EmissionMatrix};

/// Cumulative probability kept before embedding a feature's word distribution.
pub const DEFAULT_TOP_P: f64 = 0.9;

/// Keeps the shortest prefix of words, sorted by descending probability with
/// ties to the lower id, whose mass reaches `p`, then renormalises. `dist` is
/// expected to be a distribution and is returned unchanged for `p >= 1`.
pub fn top_p_truncate(dist: ArrayView1<f64>, p: f64) -> Array1<f64> {
    if p >= 1.0 {
        return dist.to_owned();
    }
    let p = p.max(f64::MIN_POSITIVE);
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    let total: f64 = dist.sum();
    let mut out = Array1::zeros(dist.len());
    let mut kept = 0.0;
    for w in order {
        if kept >= p * total - 1e-12 || dist[w] <= 0.0 {
            break;
        }
        out[w] = dist[w];
        kept += dist[w];
    }
    out / kept
}

/// `sum_w B[w] e_w` over the top-`p` support, restricted to words with an
/// embedding and renormalised over them.
pub fn topic_embedding(row: ArrayView1<f64>, table: &WordEmbeddingTable, p: f64) -> Result<Array1<f64>> {
    if row.len() != table.vocab_size() {
        return Err(MergeError::InvalidInput(format!(
            "distribution over {} words, table over {}",
            row.len(),
            table.vocab_size()
        )));
    }
    let trunc = top_p_truncate(row, p);
    let mut out = Array1::zeros(table.dim());
    let mut mass = 0.0;
    for (w, &q) in trunc.iter().enumerate() {
        if q > 0.0 && table.is_covered(w) {
            out.scaled_add(q, &table.vector(w));
            mass += q;
        }
    }
    if mass == 0.0 {
        return Err(MergeError::EmptySupport { feature: usize::MAX });
    }
    Ok(out / mass)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub word_dist: Vec<f64>,
    pub prevalence: f64,
    /// Feature ids merged into this topic, ascending.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub k_prime: usize,
    pub seed: u64,
    /// Content hash of the emission matrix the topics came from.
    pub emission_hash: Option<String>,
    pub topics: Vec<Topic>,
}

#[derive(Serialize)]
struct JsonWord {
    token: String,
    p: f64,
}

#[derive(Serialize)]
struct JsonTopic {
    id: usize,
    prevalence: f64,
    members: Vec<usize>,
    top_words: Vec<JsonWord>,
}

#[derive(Serialize)]
struct JsonModel<'a> {
    k_prime: usize,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    emission_hash: Option<&'a str>,
    topics: Vec<JsonTopic>,
}

impl TopicModel {
    /// Summary JSON with the top `n` words per topic. Word ids stand in for
    /// tokens when no vocabulary is given.
    pub fn to_json(&self, vocab: Option<&[String]>, n: usize) -> String {
        let model = JsonModel {
            k_prime: self.k_prime,
            seed: self.seed,
            emission_hash: self.emission_hash.as_deref(),
            topics: self
                .topics
                .iter()
                .enumerate()
                .map(|(id, t)| JsonTopic {
                    id,
                    prevalence: t.prevalence,
                    members: t.members.clone(),
                    top_words: top_words(ArrayView1::from(&t.word_dist), n)
                        .into_iter()
                        .map(|(w, p)| JsonWord {
                            token: vocab
                                .and_then(|v| v.get(w as usize).cloned())
                                .unwrap_or_else(|| w.to_string()),
                            p,
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&model).expect("serialisable")
    }

    pub fn total_prevalence(&self) -> f64 {
        self.topics.iter().map(|t| t.prevalence).sum()
    }

    /// Keeps topics whose flag is set, preserving order.
    pub fn retain_topics(&mut self, keep: &[bool]) {
        let mut i = 0;
        self.topics.retain(|_| {
            let k = keep.get(i).copied().unwrap_or(true);
            i += 1;
            k
        });
    }
}

/// Prevalence-weighted average of member rows for every cluster. `labels[k]` is
/// the cluster of feature `k`, `None` for features left out of the merge.
pub fn merge_topics(em: &EmissionMatrix, labels: &[Option<usize>], k_prime: usize) -> Result<TopicModel> {
    if labels.len() != em.n_features() {
        return Err(MergeError::InvalidInput(format!(
            "{} labels for {} features",
            labels.len(),
            em.n_features()
        )));
    }
    let v = em.vocab_size();
    let mut members = vec![Vec::new(); k_prime];
    for (k, l) in labels.iter().enumerate() {
        if let Some(c) = *l {
            if c >= k_prime {
                return Err(MergeError::InvalidInput(format!("label {c} >= k_prime {k_prime}")));
            }
            members[c].push(k);
        }
    }
    let mut topics = Vec::with_capacity(k_prime);
    for (c, ms) in members.into_iter().enumerate() {
        if ms.is_empty() {
            return Err(MergeError::InvalidInput(format!("cluster {c} has no members")));
        }
        let prevalence: f64 = ms.iter().map(|&k| em.feature_prior[k]).sum();
        let weights: Vec<f64> = if prevalence > 0.0 {
            ms.iter().map(|&k| em.feature_prior[k] / prevalence).collect()
        } else {
            warn!("cluster {c} has zero total prevalence; averaging its rows uniformly");
            vec![1.0 / ms.len() as f64; ms.len()]
        };
        let mut dist = Array1::zeros(v);
        for (&k, &wt) in ms.iter().zip(&weights) {
            dist.scaled_add(wt, &em.b.row(k));
        }
        topics.push(Topic { word_dist: dist.to_vec(), prevalence, members: ms });
    }
    Ok(TopicModel { k_prime, seed: 0, emission_hash: None, topics })
}

/// Cached clustering points for the retained features, so any number of
/// topics can be produced without recomputing embeddings.
#[derive(Debug, Clone)]
pub struct Remerger {
    features: Vec<usize>,
    points: Array2<f64>,
    n_features: usize,
    pub kmeans: KMeansConfig,
}

impl Remerger {
    /// Topic embeddings of the active features from word vectors.
    pub fn from_word_embeddings(em: &EmissionMatrix, table: &WordEmbeddingTable, p: f64) -> Result<Self> {
        let features: Vec<usize> = (0..em.n_features()).filter(|&k| em.active_mask[k]).collect();
        let mut points = Array2::zeros((features.len(), table.dim()));
        for (i, &k) in features.iter().enumerate() {
            let e = topic_embedding(em.b.row(k), table, p).map_err(|e| match e {
                MergeError::EmptySupport { .. } => MergeError::EmptySupport { feature: k },
                other => other,
            })?;
            points.row_mut(i).assign(&e);
        }
        Ok(Self { features, points, n_features: em.n_features(), kmeans: KMeansConfig::default() })
    }

    /// Fallback without word vectors: decoder rows (`K x d`) of the active features.
    pub fn from_decoder(em: &EmissionMatrix, decoder: ArrayView2<f64>) -> Result<Self> {
        if decoder.nrows() != em.n_features() {
            return Err(MergeError::InvalidInput(format!(
                "{} decoder rows for {} features",
                decoder.nrows(),
                em.n_features()
            )));
        }
        let features: Vec<usize> = (0..em.n_features()).filter(|&k| em.active_mask[k]).collect();
        let mut points = Array2::zeros((features.len(), decoder.ncols()));
        for (i, &k) in features.iter().enumerate() {
            points.row_mut(i).assign(&decoder.row(k));
        }
        Ok(Self { features, points, n_features: em.n_features(), kmeans: KMeansConfig::default() })
    }

    /// Rebuilds from previously computed points, one row per entry of `features`.
    pub fn from_points(features: Vec<usize>, points: Array2<f64>, n_features: usize) -> Result<Self> {
        if features.len() != points.nrows() || features.iter().any(|&k| k >= n_features) {
            return Err(MergeError::InvalidInput(format!(
                "{} feature ids for {} points over {n_features} features",
                features.len(),
                points.nrows()
            )));
        }
        Ok(Self { features, points, n_features, kmeans: KMeansConfig::default() })
    }

    /// Drops features whose prior (share of activation mass) is below `min_prior`.
    pub fn drop_rare(mut self, em: &EmissionMatrix, min_prior: f64) -> Self {
        let keep: Vec<bool> = self.features.iter().map(|&k| em.feature_prior[k] >= min_prior).collect();
        let rows: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
        self.points = self.points.select(ndarray::Axis(0), &rows);
        self.features = rows.iter().map(|&i| self.features[i]).collect();
        self
    }

    pub fn retained_features(&self) -> &[usize] {
        &self.features
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    /// Cluster label of every feature, `None` for features not retained.
    pub fn labels(&self, k_prime: usize, seed: u64) -> Result<Vec<Option<usize>>> {
        if k_prime == 0 || k_prime > self.features.len() {
            return Err(MergeError::InvalidInput(format!(
                "k_prime = {k_prime} must be in 1..={}",
                self.features.len()
            )));
        }
        let km = kmeans_with(self.points.view(), k_prime, seed, &self.kmeans)?;
        let mut labels = vec![None; self.n_features];
        for (&k, &l) in self.features.iter().zip(&km.labels) {
            labels[k] = Some(l);
        }
        Ok(labels)
    }

    pub fn merge(&self, em: &EmissionMatrix, k_prime: usize, seed: u64) -> Result<TopicModel> {
        let mut model = merge_topics(em, &self.labels(k_prime, seed)?, k_prime)?;
        model.seed = seed;
        Ok(model)
    }
}

/// Embeds, clusters and merges in one call.
pub fn remerge(em: &EmissionMatrix, table: &WordEmbeddingTable, k_prime: usize, seed: u64) -> Result<TopicModel> {
    Remerger::from_word_embeddings(em, table, DEFAULT_TOP_P)?.merge(em, k_prime, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn truncation_examples() {
        let t = top_p_truncate(array![0.5, 0.3, 0.15, 0.05].view(), 0.9);
        assert!(close(t.as_slice().unwrap(), &[0.5 / 0.95, 0.3 / 0.95, 0.15 / 0.95, 0.0], 1e-15));
        let d = array![0.1, 0.2, 0.3, 0.4];
        assert_eq!(top_p_truncate(d.view(), 1.0), d);
        let one = array![0.0, 1.0, 0.0];
        assert_eq!(top_p_truncate(one.view(), 0.3), one);
    }

    #[test]
    fn truncation_tie_keeps_lower_id() {
        let t = top_p_truncate(array![0.25, 0.25, 0.25, 0.25].view(), 0.5);
        assert_eq!(t, array![0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn embedding_examples() {
        let table = WordEmbeddingTable::dense(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(topic_embedding(array![0.5, 0.5].view(), &table, 1.0).unwrap(), array![0.5, 0.5]);
        assert_eq!(topic_embedding(array![0.0, 1.0].view(), &table, 0.9).unwrap(), array![0.0, 1.0]);
    }

    #[test]
    fn uncovered_words_are_dropped_and_renormalised() {
        let table = WordEmbeddingTable::new(array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]], vec![true, false, true]).unwrap();
        let e = topic_embedding(array![0.2, 0.5, 0.3].view(), &table, 1.0).unwrap();
        assert!(close(e.as_slice().unwrap(), &[0.4, 0.0], 1e-15));
        let err = topic_embedding(array![0.0, 1.0, 0.0].view(), &table, 1.0).unwrap_err();
        assert!(matches!(err, MergeError::EmptySupport { .. }));
    }

    fn em(b: Array2<f64>, prior: Vec<f64>) -> EmissionMatrix {
        let k = b.nrows();
        EmissionMatrix { b, feature_prior: prior, active_mask: vec![true; k] }
    }

    #[test]
    fn merge_two_equal_features() {
        let e = em(array![[1.0, 0.0], [0.0, 1.0]], vec![0.2, 0.2]);
        let m = merge_topics(&e, &[Some(0), Some(0)], 1).unwrap();
        assert_eq!(m.topics[0].word_dist, vec![0.5, 0.5]);
        assert!((m.topics[0].prevalence - 0.4).abs() < 1e-15);
        assert_eq!(m.topics[0].members, vec![0, 1]);
    }

    #[test]
    fn zero_prevalence_cluster_falls_back_to_uniform_weights() {
        let e = em(array![[1.0, 0.0], [0.0, 1.0]], vec![0.0, 0.0]);
        let m = merge_topics(&e, &[Some(0), Some(0)], 1).unwrap();
        assert_eq!(m.topics[0].word_dist, vec![0.5, 0.5]);
        assert_eq!(m.topics[0].prevalence, 0.0);
    }

    #[test]
    fn excluded_features_are_not_members() {
        let e = em(array![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]], vec![0.3, 0.3, 0.4]);
        let m = merge_topics(&e, &[Some(1), None, Some(0)], 2).unwrap();
        assert_eq!(m.topics[0].members, vec![2]);
        assert_eq!(m.topics[1].members, vec![0]);
        assert!((m.total_prevalence() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn json_has_stable_key_order() {
        let e = em(array![[0.7, 0.3]], vec![1.0]);
        let mut m = merge_topics(&e, &[Some(0)], 1).unwrap();
        m.seed = 4;
        let vocab = vec!["x".to_string(), "y".to_string()];
        let json = m.to_json(Some(&vocab), 20);
        let keys = ["\"k_prime\"", "\"seed\"", "\"topics\"", "\"id\"", "\"prevalence\"", "\"members\"", "\"top_words\"", "\"token\"", "\"p\""];
        let pos: Vec<usize> = keys.iter().map(|k| json.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{json}");
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["topics"][0]["top_words"][0]["token"], "x");
    }

    #[test]
    fn remerge_is_deterministic_and_skips_inactive_features() {
        let b = array![[0.9, 0.1, 0.0], [0.8, 0.2, 0.0], [0.0, 0.1, 0.9], [0.0, 0.2, 0.8], [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]];
        let mut e = em(b, vec![0.2, 0.2, 0.3, 0.3, 0.0]);
        e.active_mask[4] = false;
        let table = WordEmbeddingTable::dense(array![[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]]).unwrap();
        let a = remerge(&e, &table, 2, 7).unwrap();
        assert_eq!(a, remerge(&e, &table, 2, 7).unwrap());
        let mut groups: Vec<Vec<usize>> = a.topics.iter().map(|t| t.members.clone()).collect();
        groups.sort();
        assert_eq!(groups, vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn rare_features_are_dropped_before_clustering() {
        let b = array![[0.9, 0.1, 0.0], [0.8, 0.2, 0.0], [0.0, 0.1, 0.9]];
        let e = em(b, vec![0.5, 0.001, 0.499]);
        let table = WordEmbeddingTable::dense(array![[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]]).unwrap();
        let r = Remerger::from_word_embeddings(&e, &table, 1.0).unwrap().drop_rare(&e, 0.01);
        assert_eq!(r.retained_features(), &[0, 2]);
        assert_eq!(r.points().nrows(), 2);
        assert_eq!(r.labels(2, 0).unwrap()[1], None);
    }
}
