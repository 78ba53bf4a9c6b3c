use serde::Serialize;

use super::{run_judge, render, Judge, JudgeError, JudgeTask, Result, TaskKind, TOP_WORDS};
use crate::merge::TopicModel;

/// Prompt for the optional abstract/concrete pass. The two category
/// definitions are the criterion used to filter topics in the image analysis.
pub const CATEGORY_TEMPLATE: &str = "You are given the most probable words of a topic that describes images: '{words}'. \
Classify the topic as abstract or concrete. \
Abstract topics are concerned with general image properties, such as mood, perspective, geometry, or layout. \
Concrete topics are concerned with objects visible in the images. \
Answer with a single word: abstract or concrete.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicCategory {
    Abstract,
    Concrete,
}

impl TopicCategory {
    /// 100 for abstract, 0 for concrete, so a macro average is the abstract share.
    pub fn score(self) -> f64 {
        match self {
            TopicCategory::Abstract => 100.0,
            TopicCategory::Concrete => 0.0,
        }
    }
}

/// First occurrence of either label wins.
pub fn parse_category(reply: &str) -> std::result::Result<TopicCategory, JudgeError> {
    let lower = reply.to_lowercase();
    match (lower.find("abstract"), lower.find("concrete")) {
        (Some(a), Some(c)) if c < a => Ok(TopicCategory::Concrete),
        (Some(_), _) => Ok(TopicCategory::Abstract),
        (None, Some(_)) => Ok(TopicCategory::Concrete),
        (None, None) => Err(JudgeError::Response(format!("no category in reply {reply:?}"))),
    }
}

pub fn make_category_tasks(model: &TopicModel, vocab: &[String]) -> Vec<JudgeTask> {
    model
        .topics
        .iter()
        .enumerate()
        .map(|(t, topic)| {
            let words: Vec<String> = crate::interpret::top_words(topic.word_dist.as_slice().into(), TOP_WORDS)
                .into_iter()
                .map(|(w, _)| vocab[w as usize].clone())
                .collect();
            JudgeTask {
                kind: TaskKind::Category,
                topic_id: t,
                trial_id: 0,
                prompt: render(CATEGORY_TEMPLATE, &words),
                words,
                answer: None,
            }
        })
        .collect()
}

/// Category per topic, `None` where the judge call failed.
pub fn classify_topics(
    model: &TopicModel,
    vocab: &[String],
    judge: &dyn Judge,
    concurrency: usize,
) -> Result<Vec<Option<TopicCategory>>> {
    let out = run_judge(&make_category_tasks(model, vocab), judge, concurrency)?;
    let mut cats = vec![None; model.topics.len()];
    for s in out.per_topic {
        cats[s.topic_id] = s.score.map(|v| if v >= 50.0 { TopicCategory::Abstract } else { TopicCategory::Concrete });
    }
    Ok(cats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::StubJudge;
    use crate::merge::Topic;

    #[test]
    fn parses_first_label() {
        assert_eq!(parse_category("Concrete.").unwrap(), TopicCategory::Concrete);
        assert_eq!(parse_category("abstract, not concrete").unwrap(), TopicCategory::Abstract);
        assert!(parse_category("unsure").is_err());
    }

    #[test]
    fn stub_classification_covers_every_topic() {
        let model = TopicModel {
            k_prime: 2,
            seed: 0,
            emission_hash: None,
            topics: (0..2).map(|_| Topic { word_dist: vec![0.5, 0.5], prevalence: 0.5, members: vec![] }).collect(),
        };
        let vocab = vec!["sky".to_string(), "dog".to_string()];
        let cats = classify_topics(&model, &vocab, &StubJudge::Oracle, 1).unwrap();
        assert_eq!(cats, vec![Some(TopicCategory::Concrete); 2]);
        let task = &make_category_tasks(&model, &vocab)[0];
        assert!(task.prompt.contains("'sky, dog'"));
    }
}
