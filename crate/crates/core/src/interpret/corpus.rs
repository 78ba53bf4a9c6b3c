use std::collections::BTreeMap;

use super::{InterpretError, Result};

/// Add-epsilon pseudo-count per vocabulary word in the background unigram estimate.
pub const P0_PSEUDO_COUNT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct BowDocument {
    pub id: String,
    /// `(word_id, count)`, ascending by word id, counts positive.
    pub words: Vec<(u32, u32)>,
    pub group: Option<String>,
}

impl BowDocument {
    pub fn from_tokens(id: impl Into<String>, tokens: &[u32], group: Option<String>) -> Self {
        let mut counts = BTreeMap::new();
        for &t in tokens {
            *counts.entry(t).or_insert(0u32) += 1;
        }
        Self { id: id.into(), words: counts.into_iter().collect(), group }
    }

    pub fn n_tokens(&self) -> u64 {
        self.words.iter().map(|&(_, c)| c as u64).sum()
    }
}

/// Bag-of-words corpus with document frequencies and a smoothed background prior.
#[derive(Debug, Clone, PartialEq)]
pub struct BowCorpus {
    vocab_size: usize,
    docs: Vec<BowDocument>,
    df: Vec<u32>,
    p0: Vec<f64>,
    max_log_idf: f64,
}

impl BowCorpus {
    pub fn new(vocab_size: usize, docs: Vec<BowDocument>) -> Result<Self> {
        if vocab_size == 0 {
            return Err(InterpretError::InvalidInput("empty vocabulary".into()));
        }
        let mut df = vec![0u32; vocab_size];
        let mut tf = vec![0u64; vocab_size];
        for doc in &docs {
            for &(w, c) in &doc.words {
                if w as usize >= vocab_size {
                    return Err(InterpretError::VocabRange { doc: doc.id.clone(), word_id: w, vocab_size });
                }
                df[w as usize] += 1;
                tf[w as usize] += c as u64;
            }
        }
        let total: u64 = tf.iter().sum();
        let denom = total as f64 + P0_PSEUDO_COUNT * vocab_size as f64;
        let p0 = tf.iter().map(|&c| (c as f64 + P0_PSEUDO_COUNT) / denom).collect();
        let n = docs.len() as f64;
        let max_log_idf = df
            .iter()
            .filter(|&&d| d > 0)
            .map(|&d| (n / d as f64).ln())
            .fold(0.0, f64::max);
        Ok(Self { vocab_size, docs, df, p0, max_log_idf })
    }

    pub fn from_token_lists(vocab_size: usize, docs: &[Vec<u32>]) -> Result<Self> {
        let docs = docs
            .iter()
            .enumerate()
            .map(|(i, t)| BowDocument::from_tokens(i.to_string(), t, None))
            .collect();
        Self::new(vocab_size, docs)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn n_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn docs(&self) -> &[BowDocument] {
        &self.docs
    }

    pub fn df(&self) -> &[u32] {
        &self.df
    }

    pub fn p0(&self) -> &[f64] {
        &self.p0
    }

    /// `log(N / df(w)) / max_j log(N / df(w_j))`, the maximum taken over words
    /// seen in at least one document. Zero for every word when all seen words
    /// occur in every document.
    pub fn idf_weight(&self, word_id: u32) -> Result<f64> {
        let w = word_id as usize;
        if w >= self.vocab_size {
            return Err(InterpretError::VocabRange { doc: String::new(), word_id, vocab_size: self.vocab_size });
        }
        let d = self.df[w];
        if d == 0 {
            return Err(InterpretError::UnseenWord(word_id));
        }
        if self.max_log_idf == 0.0 {
            return Ok(0.0);
        }
        Ok((self.docs.len() as f64 / d as f64).ln() / self.max_log_idf)
    }

    /// IDF weight of every word, zero for unseen words.
    pub fn idf_weights(&self) -> Vec<f64> {
        (0..self.vocab_size as u32).map(|w| self.idf_weight(w).unwrap_or(0.0)).collect()
    }
}
