use serde::{Deserialize, Serialize};

use super::{diversity, make_intruder_tasks, make_rating_tasks, run_judge, Judge, Result, TOP_WORDS};
use crate::merge::{TopicModel, WordEmbeddingTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub trials_per_topic: usize,
    pub rating_samples: usize,
    pub concurrency: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { trials_per_topic: 10, rating_samples: 1, concurrency: 4, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JudgeMeta {
    /// Endpoint and model, or the stub description.
    pub judge: String,
    pub trials_per_topic: usize,
    pub rating_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopicEval {
    pub topic_id: usize,
    pub c_i: Option<f64>,
    pub c_r: Option<f64>,
    pub intruder_failures: usize,
    pub rating_failures: usize,
}

/// Scores are in percentage points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub k_prime: usize,
    pub c_i: f64,
    pub c_r: f64,
    /// Mean pairwise WMD; absent without word embeddings.
    pub diversity: Option<f64>,
    pub wmd_excluded_pairs: usize,
    pub wmd_uncovered_words: usize,
    pub intruder_failures: usize,
    pub rating_failures: usize,
    pub skipped_intruder_trials: usize,
    pub judge: JudgeMeta,
    pub per_topic: Vec<TopicEval>,
}

/// Intruder detection, coherence rating and (with `table`) diversity for one topic model.
pub fn evaluate(
    model: &TopicModel,
    vocab: &[String],
    table: Option<&WordEmbeddingTable>,
    judge: &dyn Judge,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let intruder = make_intruder_tasks(model, vocab, cfg.trials_per_topic, cfg.seed)?;
    let ci = run_judge(&intruder.tasks, judge, cfg.concurrency)?;
    let rating = make_rating_tasks(model, vocab, cfg.rating_samples);
    let cr = run_judge(&rating, judge, cfg.concurrency)?;
    let div = table.map(|t| diversity(model, t, TOP_WORDS)).transpose()?;
    let per_topic = (0..model.topics.len())
        .map(|t| {
            let i = ci.per_topic.iter().find(|s| s.topic_id == t);
            let r = cr.per_topic.iter().find(|s| s.topic_id == t);
            TopicEval {
                topic_id: t,
                c_i: i.and_then(|s| s.score),
                c_r: r.and_then(|s| s.score),
                intruder_failures: i.map_or(0, |s| s.failed),
                rating_failures: r.map_or(0, |s| s.failed),
            }
        })
        .collect();
    Ok(EvalReport {
        k_prime: model.topics.len(),
        c_i: ci.macro_score,
        c_r: cr.macro_score,
        diversity: div.as_ref().map(|d| d.diversity),
        wmd_excluded_pairs: div.as_ref().map_or(0, |d| d.excluded_pairs),
        wmd_uncovered_words: div.as_ref().map_or(0, |d| d.uncovered_words),
        intruder_failures: ci.failed,
        rating_failures: cr.failed,
        skipped_intruder_trials: intruder.skipped,
        judge: JudgeMeta {
            judge: judge.describe(),
            trials_per_topic: cfg.trials_per_topic,
            rating_samples: cfg.rating_samples,
        },
        per_topic,
    })
}
