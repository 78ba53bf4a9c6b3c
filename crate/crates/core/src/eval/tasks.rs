use std::collections::HashSet;

use log::warn;
use ndarray::ArrayView1;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::prompts::{render, INTRUDER_TEMPLATE, RATING_TEMPLATE};
use super::{EvalError, Result};
use crate::interpret::top_words;
use crate::merge::TopicModel;

/// Words shown per topic in both task kinds.
pub const TOP_WORDS: usize = 20;
/// Topic words per intruder trial.
pub const INTRUDER_TOPIC_WORDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Intruder,
    Rating,
    /// Abstract versus concrete topic classification.
    Category,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeTask {
    pub kind: TaskKind,
    pub topic_id: usize,
    pub trial_id: usize,
    /// Words in presentation order.
    pub words: Vec<String>,
    /// The intruder, for intruder tasks.
    pub answer: Option<String>,
    pub prompt: String,
}

fn topic_word_ids(model: &TopicModel, n: usize) -> Vec<Vec<u32>> {
    model
        .topics
        .iter()
        .map(|t| top_words(ArrayView1::from(&t.word_dist), n).into_iter().map(|w| w.0).collect())
        .collect()
}

fn token(vocab: &[String], w: u32) -> String {
    vocab.get(w as usize).cloned().unwrap_or_else(|| w.to_string())
}

#[derive(Debug, Clone, Default)]
pub struct IntruderTasks {
    pub tasks: Vec<JudgeTask>,
    /// Trials dropped because the chosen topic had nothing outside the target's top words.
    pub skipped: usize,
}

/// `trials_per_topic` intruder trials per topic: five of its top-20 words plus
/// one top-20 word of a uniformly chosen other topic that is not among the
/// target's top 20, shuffled.
pub fn make_intruder_tasks(
    model: &TopicModel,
    vocab: &[String],
    trials_per_topic: usize,
    seed: u64,
) -> Result<IntruderTasks> {
    let k = model.topics.len();
    if k < 2 {
        return Err(EvalError::InvalidInput("intruder tasks need at least two topics".into()));
    }
    let lists = topic_word_ids(model, TOP_WORDS);
    for (t, l) in lists.iter().enumerate() {
        if l.len() < INTRUDER_TOPIC_WORDS {
            return Err(EvalError::InvalidInput(format!("topic {t} has fewer than {INTRUDER_TOPIC_WORDS} words")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = IntruderTasks::default();
    for (t, own) in lists.iter().enumerate() {
        let own_set: HashSet<u32> = own.iter().copied().collect();
        let others: Vec<usize> = (0..k).filter(|&o| o != t).collect();
        for trial in 0..trials_per_topic {
            let mut words: Vec<u32> = own.choose_multiple(&mut rng, INTRUDER_TOPIC_WORDS).copied().collect();
            let other = *others.choose(&mut rng).expect("k >= 2");
            let candidates: Vec<u32> = lists[other].iter().copied().filter(|w| !own_set.contains(w)).collect();
            let Some(&intruder) = candidates.choose(&mut rng) else {
                warn!("topic {t} trial {trial}: topic {other} has no word outside topic {t}'s top {TOP_WORDS}");
                out.skipped += 1;
                continue;
            };
            words.push(intruder);
            words.shuffle(&mut rng);
            let words: Vec<String> = words.into_iter().map(|w| token(vocab, w)).collect();
            out.tasks.push(JudgeTask {
                kind: TaskKind::Intruder,
                topic_id: t,
                trial_id: trial,
                prompt: render(INTRUDER_TEMPLATE, &words),
                words,
                answer: Some(token(vocab, intruder)),
            });
        }
    }
    Ok(out)
}

/// `samples_per_topic` coherence-rating tasks per topic over its top-20 words.
pub fn make_rating_tasks(model: &TopicModel, vocab: &[String], samples_per_topic: usize) -> Vec<JudgeTask> {
    let lists = topic_word_ids(model, TOP_WORDS);
    let mut tasks = Vec::new();
    for (t, list) in lists.iter().enumerate() {
        if list.len() < TOP_WORDS {
            warn!("topic {t} has only {} words to rate", list.len());
        }
        let words: Vec<String> = list.iter().map(|&w| token(vocab, w)).collect();
        for trial in 0..samples_per_topic {
            tasks.push(JudgeTask {
                kind: TaskKind::Rating,
                topic_id: t,
                trial_id: trial,
                prompt: render(RATING_TEMPLATE, &words),
                words: words.clone(),
                answer: None,
            });
        }
    }
    tasks
}
