//! Synthetic corpora with known ground truth.

use std::path::Path;

use ndarray::Array2;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ctm::{sample_document_given_theta, CtmError, CtmParams, Result};
use crate::io::{self, CorpusRecord, Dataset};
use crate::merge::WordEmbeddingTable;

/// `n` random unit vectors in `R^d`, one per row.
pub fn random_directions<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Array2<f64> {
    let mut m = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));
    for mut row in m.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    m
}

/// Embeddings built from a fixed dictionary.
#[derive(Debug, Clone)]
pub struct DictionaryData {
    /// `n x d`
    pub embeddings: Array2<f64>,
    /// `K* x d` ground-truth unit directions.
    pub directions: Array2<f64>,
    /// Topics active in each row.
    pub supports: Vec<Vec<usize>>,
}

/// CTM documents with zero direction variance, so every contribution points
/// exactly along its topic mean, and each document mixing `active` topics
/// chosen uniformly with equal weight.
pub fn dictionary_data(
    n: usize,
    d: usize,
    n_topics: usize,
    active: usize,
    rho_d: f64,
    noise_var: f64,
    seed: u64,
) -> Result<DictionaryData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let directions = random_directions(n_topics, d, &mut rng);
    let params = CtmParams::isotropic(vec![1.0; n_topics], directions.clone(), 0.0, 1.0, 1.0, rho_d, noise_var);
    let mut embeddings = Array2::zeros((n, d));
    let mut supports = Vec::with_capacity(n);
    for i in 0..n {
        let support = sample_indices(&mut rng, n_topics, active).into_vec();
        let mut theta = vec![0.0; n_topics];
        for &k in &support {
            theta[k] = 1.0 / active as f64;
        }
        let doc = sample_document_given_theta(&params, &theta, &mut rng)?;
        embeddings.row_mut(i).assign(&doc.embedding);
        supports.push(support);
    }
    Ok(DictionaryData { embeddings, directions, supports })
}

/// Shape of the bundled end-to-end fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureConfig {
    pub n_docs: usize,
    pub n_topics: usize,
    /// Topics are partitioned into this many themes of related directions and words.
    pub n_themes: usize,
    pub vocab_size: usize,
    pub dim: usize,
    pub word_dim: usize,
    pub words_per_topic: usize,
    pub doc_len: usize,
    pub active_topics: usize,
    pub rho_d: f64,
    pub noise_var: f64,
    /// Weight of a topic's own offset relative to its theme centroid.
    pub theme_spread: f64,
    /// Probability that a token comes from the background distribution.
    pub background: f64,
    pub groups: Vec<String>,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            n_docs: 2000,
            n_topics: 16,
            n_themes: 4,
            vocab_size: 200,
            dim: 32,
            word_dim: 16,
            words_per_topic: 10,
            doc_len: 50,
            active_topics: 2,
            rho_d: 4.0,
            noise_var: 1e-4,
            theme_spread: 0.7,
            background: 0.2,
            groups: vec!["alpha".into(), "beta".into(), "gamma".into()],
            seed: 0,
        }
    }
}

/// A complete dataset with its ground truth.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub config: FixtureConfig,
    /// `n_docs x dim`
    pub embeddings: Array2<f64>,
    pub records: Vec<CorpusRecord>,
    pub vocab: Vec<String>,
    /// `vocab_size x word_dim`
    pub word_vectors: Array2<f64>,
    /// `n_topics x dim` unit directions.
    pub directions: Array2<f64>,
    /// `n_topics x vocab_size` word emissions.
    pub emissions: Array2<f64>,
    pub background: Vec<f64>,
    pub theme_of_topic: Vec<usize>,
    pub supports: Vec<Vec<usize>>,
}

#[derive(Serialize)]
struct Truth<'a> {
    config: &'a FixtureConfig,
    theme_of_topic: &'a [usize],
    directions: Vec<Vec<f64>>,
    top_words: Vec<Vec<&'a str>>,
}

fn themed_directions<R: Rng + ?Sized>(
    n_topics: usize,
    n_themes: usize,
    dim: usize,
    spread: f64,
    rng: &mut R,
) -> Array2<f64> {
    let centroids = random_directions(n_themes, dim, rng);
    let offsets = random_directions(n_topics, dim, rng);
    let mut m = Array2::zeros((n_topics, dim));
    for t in 0..n_topics {
        let mut row = &centroids.row(t % n_themes) + &(&offsets.row(t) * spread);
        let norm = row.dot(&row).sqrt();
        row /= norm;
        m.row_mut(t).assign(&row);
    }
    m
}

impl Fixture {
    pub fn generate(config: &FixtureConfig) -> Result<Self> {
        let c = config;
        let anchors = c.n_topics * c.words_per_topic;
        if c.n_themes == 0
            || c.n_topics < c.n_themes
            || anchors >= c.vocab_size
            || c.active_topics == 0
            || c.active_topics > c.n_topics
            || c.groups.is_empty()
            || !(0.0..1.0).contains(&c.background)
        {
            return Err(CtmError::InvalidParams(format!("inconsistent fixture configuration: {c:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let theme_of_topic: Vec<usize> = (0..c.n_topics).map(|t| t % c.n_themes).collect();
        let directions = themed_directions(c.n_topics, c.n_themes, c.dim, c.theme_spread, &mut rng);

        let mut vocab = Vec::with_capacity(c.vocab_size);
        for t in 0..c.n_topics {
            for j in 0..c.words_per_topic {
                vocab.push(format!("t{t:02}w{j}"));
            }
        }
        for j in anchors..c.vocab_size {
            vocab.push(format!("bg{:03}", j - anchors));
        }

        let mut emissions = Array2::from_elem((c.n_topics, c.vocab_size), 0.0);
        for t in 0..c.n_topics {
            for j in 0..c.words_per_topic {
                emissions[[t, t * c.words_per_topic + j]] = 0.8f64.powi(j as i32);
            }
            let mass = emissions.row(t).sum();
            emissions.row_mut(t).mapv_inplace(|v| v / mass);
        }
        let n_bg = c.vocab_size - anchors;
        let background: Vec<f64> = (0..c.vocab_size).map(|w| if w >= anchors { 1.0 / n_bg as f64 } else { 0.0 }).collect();

        let word_themes = random_directions(c.n_themes, c.word_dim, &mut rng);
        let word_offsets = random_directions(c.n_topics, c.word_dim, &mut rng);
        let word_vectors = Array2::from_shape_fn((c.vocab_size, c.word_dim), |(w, j)| {
            let jitter: f64 = rng.sample(StandardNormal);
            if w < anchors {
                let t = w / c.words_per_topic;
                word_themes[[t % c.n_themes, j]] + 0.4 * word_offsets[[t, j]] + 0.1 * jitter
            } else {
                0.5 * jitter
            }
        });

        let params = CtmParams::isotropic(vec![1.0; c.n_topics], directions.clone(), 0.0, 1.0, 1.0, c.rho_d, c.noise_var);
        let n_groups = c.groups.len();
        let mut embeddings = Array2::zeros((c.n_docs, c.dim));
        let mut records = Vec::with_capacity(c.n_docs);
        let mut supports = Vec::with_capacity(c.n_docs);
        for i in 0..c.n_docs {
            let g = i % n_groups;
            // each group favours the topics congruent to its index
            let weights: Vec<f64> = (0..c.n_topics).map(|t| if t % n_groups == g { 3.0 } else { 1.0 }).collect();
            let mut support = weighted_sample(&weights, c.active_topics, &mut rng);
            support.sort_unstable();
            let mut theta = vec![0.0; c.n_topics];
            for &k in &support {
                theta[k] = 1.0 / c.active_topics as f64;
            }
            let doc = sample_document_given_theta(&params, &theta, &mut rng)?;
            embeddings.row_mut(i).assign(&doc.embedding);

            let tokens = (0..c.doc_len)
                .map(|_| {
                    let row = if rng.random::<f64>() < c.background {
                        background.as_slice()
                    } else {
                        let k = support[rng.random_range(0..support.len())];
                        emissions.row(k).to_slice().expect("contiguous")
                    };
                    draw_categorical(row, &mut rng) as u32
                })
                .collect();
            records.push(CorpusRecord { id: format!("doc{i:05}"), tokens, group: Some(c.groups[g].clone()) });
            supports.push(support);
        }
        Ok(Self {
            config: c.clone(),
            embeddings,
            records,
            vocab,
            word_vectors,
            directions,
            emissions,
            background,
            theme_of_topic,
            supports,
        })
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.id.clone()).collect()
    }

    pub fn dataset(&self) -> io::Result<Dataset> {
        Dataset::new(self.embeddings.clone(), Some(self.ids()), self.records.clone(), self.vocab.clone())
    }

    pub fn word_embedding_table(&self) -> WordEmbeddingTable {
        WordEmbeddingTable::dense(self.word_vectors.clone()).expect("finite vectors")
    }

    /// Word vectors in `token v1 ... v_d` text form with a `count dim` header.
    pub fn word_vectors_text(&self) -> String {
        let mut s = format!("{} {}\n", self.word_vectors.nrows(), self.word_vectors.ncols());
        for (tok, row) in self.vocab.iter().zip(self.word_vectors.rows()) {
            s.push_str(tok);
            for v in row {
                s.push_str(&format!(" {:.6}", v));
            }
            s.push('\n');
        }
        s
    }

    /// Writes `embeddings.embv` (+ `.ids`), `corpus.jsonl`, `vocab.txt`,
    /// `word_vectors.txt`, `truth.json` and a ready-to-run `pipeline.toml` into `dir`.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        self.dataset()?.export(
            &dir.join(FIXTURE_EMBEDDINGS),
            &dir.join(FIXTURE_CORPUS),
            &dir.join(FIXTURE_VOCAB),
        )?;
        io::atomic_write(&dir.join(FIXTURE_WORD_VECTORS), self.word_vectors_text().as_bytes())?;
        let truth = Truth {
            config: &self.config,
            theme_of_topic: &self.theme_of_topic,
            directions: self.directions.rows().into_iter().map(|r| r.to_vec()).collect(),
            top_words: (0..self.config.n_topics)
                .map(|t| {
                    crate::interpret::top_words(self.emissions.row(t), 5)
                        .into_iter()
                        .map(|(w, _)| self.vocab[w as usize].as_str())
                        .collect()
                })
                .collect(),
        };
        let json = serde_json::to_string_pretty(&truth).expect("serialisable") + "\n";
        io::atomic_write(&dir.join(FIXTURE_TRUTH), json.as_bytes())?;
        let cfg = crate::pipeline::PipelineConfig { seed: self.config.seed, ..crate::pipeline::PipelineConfig::for_fixture() };
        let toml = toml::to_string(&cfg).expect("serialisable");
        io::atomic_write(&dir.join(FIXTURE_PIPELINE), toml.as_bytes())
    }
}

pub const FIXTURE_EMBEDDINGS: &str = "embeddings.embv";
pub const FIXTURE_CORPUS: &str = "corpus.jsonl";
pub const FIXTURE_VOCAB: &str = "vocab.txt";
pub const FIXTURE_WORD_VECTORS: &str = "word_vectors.txt";
pub const FIXTURE_TRUTH: &str = "truth.json";
pub const FIXTURE_PIPELINE: &str = "pipeline.toml";

/// `k` distinct indices drawn sequentially proportional to `weights`.
fn weighted_sample<R: Rng + ?Sized>(weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let mut w = weights.to_vec();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let i = draw_categorical(&w, rng);
        out.push(i);
        w[i] = 0.0;
    }
    out
}

fn draw_categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let total: f64 = p.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > 0.0 {
            last = i;
            if u < v {
                return i;
            }
            u -= v;
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_deterministic_and_consistent() {
        let cfg = FixtureConfig { n_docs: 60, ..Default::default() };
        let a = Fixture::generate(&cfg).unwrap();
        let b = Fixture::generate(&cfg).unwrap();
        assert_eq!(a.embeddings, b.embeddings);
        assert_eq!(a.records, b.records);
        assert_eq!(a.vocab.len(), 200);
        assert!(a.records.iter().all(|r| r.tokens.len() == 50 && r.tokens.iter().all(|&w| w < 200)));
        for row in a.emissions.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        a.dataset().unwrap();
    }

    #[test]
    fn themes_are_closer_within_than_across() {
        let f = Fixture::generate(&FixtureConfig { n_docs: 1, ..Default::default() }).unwrap();
        let d = &f.directions;
        let (mut within, mut across) = (Vec::new(), Vec::new());
        for i in 0..16 {
            for j in i + 1..16 {
                let c = d.row(i).dot(&d.row(j));
                if f.theme_of_topic[i] == f.theme_of_topic[j] { within.push(c) } else { across.push(c) }
            }
        }
        let min_within = within.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_across = across.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(min_within > max_across, "{min_within} vs {max_across}");
    }

    #[test]
    fn weighted_sample_is_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let mut s = weighted_sample(&[1.0, 3.0, 1.0, 0.5], 3, &mut rng);
            s.sort_unstable();
            s.dedup();
            assert_eq!(s.len(), 3);
        }
    }
}
