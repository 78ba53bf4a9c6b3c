//! Topic quality: WMD diversity and judge-scored coherence.

mod category;
mod judge;
mod prompts;
mod report;
mod tasks;
mod wmd;

pub use category::{classify_topics, make_category_tasks, parse_category, TopicCategory, CATEGORY_TEMPLATE};
pub use judge::{
    parse_rating, run_judge, score_intruder, HttpJudge, HttpJudgeConfig, Judge, JudgeError, JudgeOutcome, StubJudge,
    TopicScore,
};
pub use prompts::{render, INTRUDER_TEMPLATE, RATING_TEMPLATE};
pub use report::{evaluate, EvalConfig, EvalReport, JudgeMeta, TopicEval};
pub use tasks::{
    make_intruder_tasks, make_rating_tasks, IntruderTasks, JudgeTask, TaskKind, INTRUDER_TOPIC_WORDS, TOP_WORDS,
};
pub use wmd::{diversity, uniform_transport, wmd, DiversityReport};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no word of a topic has an embedding")]
    EmptyCoverage,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no scored tasks: every judge call failed")]
    NoScoredTasks,
}

pub type Result<T> = std::result::Result<T, EvalError>;
