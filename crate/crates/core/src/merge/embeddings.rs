use std::collections::HashMap;
use std::io::BufRead;

use ndarray::Array2;

use super::{MergeError, Result};

/// Word vectors aligned to a vocabulary. Rows of uncovered words are zero and
/// flagged in `covered`.
#[derive(Debug, Clone, PartialEq)]
pub struct WordEmbeddingTable {
    vectors: Array2<f64>,
    covered: Vec<bool>,
}

impl WordEmbeddingTable {
    pub fn new(vectors: Array2<f64>, covered: Vec<bool>) -> Result<Self> {
        if covered.len() != vectors.nrows() {
            return Err(MergeError::InvalidInput("coverage flags must match the row count".into()));
        }
        for (w, row) in vectors.rows().into_iter().enumerate() {
            if covered[w] && row.iter().any(|v| !v.is_finite()) {
                return Err(MergeError::InvalidInput(format!("non-finite embedding for word {w}")));
            }
        }
        Ok(Self { vectors, covered })
    }

    /// Every word covered.
    pub fn dense(vectors: Array2<f64>) -> Result<Self> {
        let n = vectors.nrows();
        Self::new(vectors, vec![true; n])
    }

    /// Reads `token v1 ... v_d` lines, keeping tokens present in `vocab`. A
    /// leading `count dim` header line is skipped. Repeated tokens keep the first vector.
    pub fn from_text<R: BufRead>(reader: R, vocab: &[String]) -> Result<Self> {
        let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
        let mut dim = None;
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut seen = vec![false; vocab.len()];
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values: Vec<&str> = parts.collect();
            if lineno == 0 && values.len() == 1 && token.parse::<usize>().is_ok() && values[0].parse::<usize>().is_ok() {
                continue;
            }
            let parsed = values
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| MergeError::Format { line: lineno + 1, reason: e.to_string() })?;
            match dim {
                None if parsed.is_empty() => {
                    return Err(MergeError::Format { line: lineno + 1, reason: "no vector components".into() })
                }
                None => dim = Some(parsed.len()),
                Some(d) if d != parsed.len() => {
                    return Err(MergeError::Format {
                        line: lineno + 1,
                        reason: format!("expected {d} components, found {}", parsed.len()),
                    })
                }
                _ => {}
            }
            if let Some(&w) = index.get(token) {
                if !seen[w] {
                    seen[w] = true;
                    rows.push((w, parsed));
                }
            }
        }
        let dim = dim.ok_or_else(|| MergeError::Format { line: 0, reason: "empty embedding file".into() })?;
        let mut vectors = Array2::zeros((vocab.len(), dim));
        for (w, v) in rows {
            for (j, x) in v.into_iter().enumerate() {
                vectors[[w, j]] = x;
            }
        }
        Self::new(vectors, seen)
    }

    pub fn vocab_size(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn is_covered(&self, word: usize) -> bool {
        self.covered[word]
    }

    pub fn vector(&self, word: usize) -> ndarray::ArrayView1<'_, f64> {
        self.vectors.row(word)
    }

    /// Fraction of vocabulary words with an embedding.
    pub fn coverage(&self) -> f64 {
        if self.covered.is_empty() {
            return 0.0;
        }
        self.covered.iter().filter(|c| **c).count() as f64 / self.covered.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_text_format_with_header() {
        let text = "3 2\nb 1.0 2.0\nzzz 9 9\na -1 0.5\n";
        let t = WordEmbeddingTable::from_text(text.as_bytes(), &vocab(&["a", "b", "c"])).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.vector(0).to_vec(), vec![-1.0, 0.5]);
        assert_eq!(t.vector(1).to_vec(), vec![1.0, 2.0]);
        assert!(!t.is_covered(2));
        assert!((t.coverage() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn inconsistent_dimension_is_an_error() {
        let text = "a 1 2\nb 1 2 3\n";
        let err = WordEmbeddingTable::from_text(text.as_bytes(), &vocab(&["a", "b"])).unwrap_err();
        assert!(matches!(err, MergeError::Format { line: 2, .. }));
    }
}
