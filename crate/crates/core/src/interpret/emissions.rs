use log::warn;
use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BowCorpus, BowDocument, InterpretError, Result};
use crate::optim::{AdamConfig, AdamState};
use crate::sae::Activations;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpretConfig {
    /// Background mixture weight.
    pub pi: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Standard deviation of the Gaussian noise added to zero initial logits.
    pub init_noise: f64,
    /// Scale each word's log term by its normalised IDF weight.
    pub idf_weighting: bool,
    /// Worker threads for the per-document loss terms. Results do not depend on it.
    pub threads: usize,
}

impl Default for InterpretConfig {
    fn default() -> Self {
        Self {
            pi: 0.3,
            steps: 2000,
            batch_size: 512,
            learning_rate: 0.05,
            seed: 0,
            init_noise: 0.01,
            idf_weighting: true,
            threads: 1,
        }
    }
}

impl InterpretConfig {
    /// `pi = 0` is accepted for recovery experiments without a background component.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.pi) {
            return Err(InterpretError::InvalidConfig(format!("pi = {} must lie in [0, 1)", self.pi)));
        }
        if self.steps == 0 || self.batch_size == 0 || self.threads == 0 {
            return Err(InterpretError::InvalidConfig("steps, batch_size and threads must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.init_noise >= 0.0) {
            return Err(InterpretError::InvalidConfig("learning_rate must be positive, init_noise nonnegative".into()));
        }
        Ok(())
    }

    fn word_weights(&self, corpus: &BowCorpus) -> Vec<f64> {
        if self.idf_weighting {
            corpus.idf_weights()
        } else {
            vec![1.0; corpus.vocab_size()]
        }
    }
}

/// Row-stochastic `K x V` emission matrix with feature prevalences.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionMatrix {
    pub b: Array2<f64>,
    /// Mean `theta_k` over documents with nonzero activation.
    pub feature_prior: Vec<f64>,
    /// Features active in at least one document.
    pub active_mask: Vec<bool>,
}

impl EmissionMatrix {
    pub fn n_features(&self) -> usize {
        self.b.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.b.ncols()
    }

    pub fn top_words(&self, feature: usize, n: usize) -> Vec<(u32, f64)> {
        top_words(self.b.row(feature), n)
    }
}

#[derive(Debug, Clone, Default)]
pub struct LearnTrace {
    /// Mean per-document loss of each minibatch, before its update.
    pub step_losses: Vec<f64>,
    /// Mean of `step_losses` over each completed pass through the documents.
    pub epoch_losses: Vec<f64>,
}

/// The `n` most probable words, descending, ties to the lower id. `n` is clamped to `V`.
pub fn top_words(row: ArrayView1<f64>, n: usize) -> Vec<(u32, f64)> {
    let mut words: Vec<(u32, f64)> = row.iter().enumerate().map(|(w, &p)| (w as u32, p)).collect();
    words.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    words.truncate(n);
    words
}

/// Weighted log-probability of a document:
/// `sum_w count(w) weight(w) log(pi P0(w) + (1 - pi) sum_k B[k, w] theta_k)`.
pub fn doc_likelihood(
    doc: &BowDocument,
    theta: &[f64],
    b: &Array2<f64>,
    p0: &[f64],
    pi: f64,
    weights: &[f64],
) -> Result<f64> {
    if theta.len() != b.nrows() {
        return Err(InterpretError::InvalidInput(format!("theta has {} entries, B has {} rows", theta.len(), b.nrows())));
    }
    let mut total = 0.0;
    for &(w, c) in &doc.words {
        let w = w as usize;
        if w >= b.ncols() {
            return Err(InterpretError::VocabRange { doc: doc.id.clone(), word_id: w as u32, vocab_size: b.ncols() });
        }
        let mix: f64 = theta.iter().zip(b.column(w)).map(|(t, p)| t * p).sum();
        let m = pi * p0[w] + (1.0 - pi) * mix;
        if !(m > 0.0) {
            return Err(InterpretError::InvalidInput(format!("word {w} has zero mixture probability in {:?}", doc.id)));
        }
        total += c as f64 * weights[w] * m.ln();
    }
    Ok(total)
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut b = logits.clone();
    for mut row in b.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
    b
}

struct Problem<'a> {
    corpus: &'a BowCorpus,
    thetas: Vec<Option<Vec<(u32, f64)>>>,
    weights: Vec<f64>,
    pi: f64,
}

impl Problem<'_> {
    /// Negative weighted log-likelihood of `docs` and its gradient with respect to `B`.
    fn loss_and_b_gradient(&self, b: &Array2<f64>, docs: &[usize]) -> (f64, Array2<f64>) {
        let mut grad = Array2::zeros(b.dim());
        let mut loss = 0.0;
        let p0 = self.corpus.p0();
        for &d in docs {
            let Some(theta) = &self.thetas[d] else { continue };
            for &(w, c) in &self.corpus.docs()[d].words {
                let w = w as usize;
                let weight = c as f64 * self.weights[w];
                if weight == 0.0 {
                    continue;
                }
                let mix: f64 = theta.iter().map(|&(k, t)| t * b[[k as usize, w]]).sum();
                let m = self.pi * p0[w] + (1.0 - self.pi) * mix;
                loss -= weight * m.ln();
                let scale = weight * (1.0 - self.pi) / m;
                for &(k, t) in theta {
                    grad[[k as usize, w]] -= scale * t;
                }
            }
        }
        (loss, grad)
    }

    /// Same as [`loss_and_b_gradient`] with the documents split into contiguous
    /// chunks across `threads` workers and reduced in chunk order.
    fn loss_and_b_gradient_par(&self, b: &Array2<f64>, docs: &[usize], threads: usize) -> (f64, Array2<f64>) {
        if threads <= 1 || docs.len() < 2 * threads {
            return self.loss_and_b_gradient(b, docs);
        }
        let chunk = docs.len().div_ceil(threads);
        let parts: Vec<(f64, Array2<f64>)> = std::thread::scope(|s| {
            let handles: Vec<_> = docs
                .chunks(chunk)
                .map(|c| s.spawn(move || self.loss_and_b_gradient(b, c)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        let mut iter = parts.into_iter();
        let (mut loss, mut grad) = iter.next().expect("at least one chunk");
        for (l, g) in iter {
            loss += l;
            grad += &g;
        }
        (loss, grad)
    }
}

/// Chain rule through the row softmax: `dL/dz_kj = B_kj (G_kj - sum_i B_ki G_ki)`.
fn logit_gradient(b: &Array2<f64>, g_b: &Array2<f64>) -> Array2<f64> {
    let inner = (b * g_b).sum_axis(Axis(1));
    let mut out = g_b.clone();
    for (k, mut row) in out.rows_mut().into_iter().enumerate() {
        row.mapv_inplace(|v| v - inner[k]);
    }
    out * b
}

fn problem<'a>(corpus: &'a BowCorpus, acts: &Activations, cfg: &InterpretConfig) -> Result<Problem<'a>> {
    if corpus.n_docs() != acts.n_rows() {
        return Err(InterpretError::Misaligned { docs: corpus.n_docs(), rows: acts.n_rows() });
    }
    Ok(Problem {
        corpus,
        thetas: (0..acts.n_rows()).map(|i| acts.theta(i)).collect(),
        weights: cfg.word_weights(corpus),
        pi: cfg.pi,
    })
}

/// Total negative weighted log-likelihood over all documents and its gradient
/// with respect to the row logits of `B`.
pub fn loss_and_logit_gradient(
    corpus: &BowCorpus,
    acts: &Activations,
    logits: &Array2<f64>,
    cfg: &InterpretConfig,
) -> Result<(f64, Array2<f64>)> {
    let p = problem(corpus, acts, cfg)?;
    if logits.dim() != (acts.n_features(), corpus.vocab_size()) {
        return Err(InterpretError::InvalidInput("logits must be K x V".into()));
    }
    let b = softmax_rows(logits);
    let all: Vec<usize> = (0..corpus.n_docs()).collect();
    let (loss, g) = p.loss_and_b_gradient_par(&b, &all, cfg.threads);
    Ok((loss, logit_gradient(&b, &g)))
}

pub fn learn_emissions(corpus: &BowCorpus, acts: &Activations, cfg: &InterpretConfig) -> Result<EmissionMatrix> {
    learn_emissions_traced(corpus, acts, cfg).map(|(m, _)| m)
}

/// Fits `B` by Adam on minibatches of documents with nonzero activation.
/// `theta` is fixed to the normalised activations throughout.
pub fn learn_emissions_traced(
    corpus: &BowCorpus,
    acts: &Activations,
    cfg: &InterpretConfig,
) -> Result<(EmissionMatrix, LearnTrace)> {
    cfg.validate()?;
    let p = problem(corpus, acts, cfg)?;
    if p.weights.iter().all(|&w| w == 0.0) {
        return Err(InterpretError::InvalidInput("every word has zero weight; nothing to learn".into()));
    }
    let k = acts.n_features();
    let v = corpus.vocab_size();
    let mut eligible: Vec<usize> = (0..corpus.n_docs()).filter(|&d| p.thetas[d].is_some()).collect();
    if eligible.is_empty() {
        return Err(InterpretError::InvalidInput("no document has nonzero activation".into()));
    }

    let active_mask = acts.active_features();
    let inactive = active_mask.iter().filter(|a| !**a).count();
    if 2 * inactive > k {
        warn!("{inactive} of {k} features are never active");
    }
    let mut prior = vec![0.0; k];
    for theta in p.thetas.iter().flatten() {
        for &(f, t) in theta {
            prior[f as usize] += t;
        }
    }
    for x in &mut prior {
        *x /= eligible.len() as f64;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut logits = Array2::from_shape_fn((k, v), |_| cfg.init_noise * rng.sample::<f64, _>(StandardNormal));
    let adam = AdamConfig::with_learning_rate(cfg.learning_rate);
    let mut state = AdamState::zeros(logits.raw_dim());
    let mut trace = LearnTrace::default();
    let bs = cfg.batch_size.min(eligible.len());
    let mut cursor = eligible.len();
    let mut epoch_sum = 0.0;
    let mut epoch_steps = 0usize;
    for step in 1..=cfg.steps {
        if cursor + bs > eligible.len() {
            if epoch_steps > 0 {
                trace.epoch_losses.push(epoch_sum / epoch_steps as f64);
            }
            epoch_sum = 0.0;
            epoch_steps = 0;
            if bs < eligible.len() {
                eligible.shuffle(&mut rng);
            }
            cursor = 0;
        }
        let batch = &eligible[cursor..cursor + bs];
        cursor += bs;
        let b = softmax_rows(&logits);
        let (loss, g) = p.loss_and_b_gradient_par(&b, batch, cfg.threads);
        let loss = loss / bs as f64;
        if !loss.is_finite() {
            return Err(InterpretError::NonFiniteLoss { step, loss });
        }
        trace.step_losses.push(loss);
        epoch_sum += loss;
        epoch_steps += 1;
        let grad = logit_gradient(&b, &g) / bs as f64;
        state.step(&adam, step, &mut logits, &grad);
    }
    if epoch_steps > 0 && cursor == eligible.len() {
        trace.epoch_losses.push(epoch_sum / epoch_steps as f64);
    }
    Ok((EmissionMatrix { b: softmax_rows(&logits), feature_prior: prior, active_mask }, trace))
}
