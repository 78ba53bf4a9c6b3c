use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use log::{debug, warn};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EvalError, JudgeTask, Result, TaskKind};

/// Failure of a single judge call.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum JudgeError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    Response(String),
}

/// Anything that answers a rendered prompt. Implementations see the whole
/// task so test doubles can consult the hidden answer.
pub trait Judge: Sync {
    fn complete(&self, task: &JudgeTask) -> std::result::Result<String, JudgeError>;

    /// Endpoint or stub name recorded in reports.
    fn describe(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpJudgeConfig {
    /// Base URL; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token, if any.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub temperature: f64,
}

impl Default for HttpJudgeConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model: "phi-4".into(),
            api_key_env: "SAETM_JUDGE_API_KEY".into(),
            timeout_secs: 60,
            max_retries: 3,
            temperature: 0.0,
        }
    }
}

/// Chat-completion client: one user message per task, reply text from
/// `choices[0].message.content`.
pub struct HttpJudge {
    cfg: HttpJudgeConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl HttpJudge {
    pub fn new(cfg: HttpJudgeConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(true)
            .build()
            .into();
        let api_key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        Self { cfg, agent, api_key }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'))
    }

    fn once(&self, prompt: &str) -> std::result::Result<String, JudgeError> {
        let body = serde_json::json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
        });
        let mut req = self.agent.post(&self.endpoint());
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| JudgeError::Transport(e.to_string()))?;
        let value: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| JudgeError::Response(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| JudgeError::Response("missing choices[0].message.content".into()))
    }
}

impl Judge for HttpJudge {
    fn complete(&self, task: &JudgeTask) -> std::result::Result<String, JudgeError> {
        let mut last = JudgeError::Transport("no attempt made".into());
        for attempt in 0..=self.cfg.max_retries {
            match self.once(&task.prompt) {
                Ok(text) => return Ok(text),
                Err(e @ JudgeError::Transport(_)) => {
                    debug!("judge attempt {attempt} failed: {e}");
                    std::thread::sleep(Duration::from_millis(200 << attempt.min(5)));
                    last = e;
                }
                Err(e) => return Err(e),
            }
        }
        Err(last)
    }

    fn describe(&self) -> String {
        format!("{} ({})", self.endpoint(), self.cfg.model)
    }
}

/// Offline judges with known behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StubJudge {
    /// Ratings always `score`; intruder answer is the first listed word.
    Fixed { score: f64 },
    /// Uniform choice among the listed words and uniform integer ratings,
    /// seeded per task so results do not depend on scheduling.
    UniformRandom { seed: u64 },
    /// Always names the true intruder; rates 100.
    Oracle,
    /// Always names a word other than the intruder; rates 0.
    AlwaysWrong,
    /// Returns the first listed word; rates 50.
    EchoFirstWord,
}

fn rating_json(score: f64) -> String {
    serde_json::json!({"rationale": "stub", "score": score}).to_string()
}

impl Judge for StubJudge {
    fn complete(&self, task: &JudgeTask) -> std::result::Result<String, JudgeError> {
        let first = || task.words.first().cloned().unwrap_or_default();
        Ok(match (self, task.kind) {
            (StubJudge::UniformRandom { seed }, kind) => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let kind_bits = match kind {
                    TaskKind::Intruder => 0,
                    TaskKind::Rating => 1,
                    TaskKind::Category => 1 << 32,
                };
                rng.set_stream(((task.topic_id as u64) << 33) | ((task.trial_id as u64) << 1) | kind_bits);
                match kind {
                    TaskKind::Intruder => task.words.choose(&mut rng).cloned().unwrap_or_default(),
                    TaskKind::Rating => rating_json(rng.random_range(0..=100) as f64),
                    TaskKind::Category => ["abstract", "concrete"][rng.random_range(0..2)].to_string(),
                }
            }
            (_, TaskKind::Category) => "concrete".into(),
            (StubJudge::Fixed { score }, TaskKind::Rating) => rating_json(*score),
            (StubJudge::Fixed { .. }, TaskKind::Intruder) | (StubJudge::EchoFirstWord, TaskKind::Intruder) => first(),
            (StubJudge::EchoFirstWord, TaskKind::Rating) => rating_json(50.0),
            (StubJudge::Oracle, TaskKind::Intruder) => task.answer.clone().unwrap_or_default(),
            (StubJudge::Oracle, TaskKind::Rating) => rating_json(100.0),
            (StubJudge::AlwaysWrong, TaskKind::Intruder) => task
                .words
                .iter()
                .find(|w| Some(*w) != task.answer.as_ref())
                .cloned()
                .unwrap_or_default(),
            (StubJudge::AlwaysWrong, TaskKind::Rating) => rating_json(0.0),
        })
    }

    fn describe(&self) -> String {
        format!("stub:{}", serde_json::to_string(self).expect("serialisable"))
    }
}

fn normalise(s: &str) -> String {
    s.trim()
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_lowercase()
}

/// Intruder reply to a 0/100 score: correct only if it names the intruder.
/// Replies naming no candidate count as incorrect.
pub fn score_intruder(task: &JudgeTask, reply: &str) -> f64 {
    let reply = normalise(reply);
    let answer = task.answer.as_deref().map(normalise);
    match task.words.iter().find(|w| normalise(w) == reply) {
        Some(w) if Some(normalise(w)) == answer => 100.0,
        _ => 0.0,
    }
}

/// `score` field of the JSON object in a rating reply, clamped to `[0, 100]`.
pub fn parse_rating(reply: &str) -> std::result::Result<f64, JudgeError> {
    let text = reply.trim();
    let value: serde_json::Value = serde_json::from_str(text).or_else(|_| {
        let (start, end) = (text.find('{'), text.rfind('}'));
        match (start, end) {
            (Some(s), Some(e)) if s < e => serde_json::from_str(&text[s..=e]),
            _ => serde_json::from_str("not json"),
        }
        .map_err(|e| JudgeError::Response(format!("no JSON object: {e}")))
    })?;
    let score = match &value["score"] {
        serde_json::Value::Number(n) => n.as_f64(),
        serde_json::Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
    .filter(|s: &f64| s.is_finite())
    .ok_or_else(|| JudgeError::Response("missing numeric \"score\"".into()))?;
    Ok(score.clamp(0.0, 100.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopicScore {
    pub topic_id: usize,
    /// Mean score of the topic's successful tasks.
    pub score: Option<f64>,
    pub scored: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JudgeOutcome {
    /// Mean over topics of per-topic means.
    pub macro_score: f64,
    pub per_topic: Vec<TopicScore>,
    pub scored: usize,
    pub failed: usize,
}

/// Submits every task with at most `concurrency` calls in flight and
/// aggregates per topic, then macro-averages. `concurrency = 1` runs serially
/// in task order.
pub fn run_judge(tasks: &[JudgeTask], judge: &dyn Judge, concurrency: usize) -> Result<JudgeOutcome> {
    let results: Vec<Mutex<Option<std::result::Result<f64, JudgeError>>>> =
        (0..tasks.len()).map(|_| Mutex::new(None)).collect();
    let score = |task: &JudgeTask| -> std::result::Result<f64, JudgeError> {
        let reply = judge.complete(task)?;
        match task.kind {
            TaskKind::Intruder => Ok(score_intruder(task, &reply)),
            TaskKind::Rating => parse_rating(&reply),
            TaskKind::Category => super::category::parse_category(&reply).map(|c| c.score()),
        }
    };
    let workers = concurrency.max(1).min(tasks.len().max(1));
    if workers == 1 {
        for (task, slot) in tasks.iter().zip(&results) {
            *slot.lock().expect("unpoisoned") = Some(score(task));
        }
    } else {
        let next = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= tasks.len() {
                        break;
                    }
                    let r = score(&tasks[i]);
                    *results[i].lock().expect("unpoisoned") = Some(r);
                });
            }
        });
    }

    let n_topics = tasks.iter().map(|t| t.topic_id + 1).max().unwrap_or(0);
    let mut sums = vec![0.0; n_topics];
    let mut scored = vec![0usize; n_topics];
    let mut failed = vec![0usize; n_topics];
    for (task, slot) in tasks.iter().zip(results) {
        match slot.into_inner().expect("unpoisoned").expect("every task ran") {
            Ok(s) => {
                sums[task.topic_id] += s;
                scored[task.topic_id] += 1;
            }
            Err(e) => {
                warn!("topic {} trial {}: judge failure: {e}", task.topic_id, task.trial_id);
                failed[task.topic_id] += 1;
            }
        }
    }
    let present: Vec<usize> = (0..n_topics).filter(|&t| scored[t] + failed[t] > 0).collect();
    let per_topic: Vec<TopicScore> = present
        .iter()
        .map(|&t| TopicScore {
            topic_id: t,
            score: (scored[t] > 0).then(|| sums[t] / scored[t] as f64),
            scored: scored[t],
            failed: failed[t],
        })
        .collect();
    let means: Vec<f64> = per_topic.iter().filter_map(|t| t.score).collect();
    if means.is_empty() {
        return Err(EvalError::NoScoredTasks);
    }
    Ok(JudgeOutcome {
        macro_score: means.iter().sum::<f64>() / means.len() as f64,
        per_topic,
        scored: scored.iter().sum(),
        failed: failed.iter().sum(),
    })
}
