//! Multi-turn LLM-as-judge orchestration: prompt rendering, judge requests,
//! rating extraction, persistence and aggregation.

mod client;
pub mod mock;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::{append_records, read_records, RecordError};

pub use client::{EndpointConfig, HttpJudge, JudgeClient};

pub const DEFAULT_CATEGORIES: [&str; 8] = [
    "writing",
    "roleplay",
    "reasoning",
    "math",
    "coding",
    "extraction",
    "stem",
    "humanities",
];

pub const DEFAULT_RATING_PATTERN: &str = r"\[\[(\d+)\]\]";

pub const DEFAULT_TEMPLATE: &str = "You are judging the quality of an AI assistant's reply. \
Consider helpfulness, relevance, accuracy, depth and the fluency of the language used. \
Write a short explanation, then give a score from 1 to 10 in exactly this format: \"[[rating]]\", \
for example \"Rating: [[5]]\".\n\n\
Category: {category}\nTurn: {turn}\n\n\
{history}[Question]\n{question}\n\n\
[The Start of Assistant's Answer]\n{answer}\n[The End of Assistant's Answer]";

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("invalid judge config: {0}")]
    InvalidConfig(String),
    #[error("question {id:?}: unknown category {category:?}")]
    UnknownCategory { id: String, category: String },
    #[error("question {0:?} has no turns")]
    EmptyTurns(String),
    #[error("duplicate question id {0:?}")]
    DuplicateQuestion(String),
    #[error("transcript for model {model_id:?} references unknown question {question_id:?}")]
    UnknownQuestion { question_id: String, model_id: String },
    #[error("transcript {question_id:?}/{model_id:?} has {answers} answers for {turns} turns")]
    AnswerCount {
        question_id: String,
        model_id: String,
        answers: usize,
        turns: usize,
    },
    #[error("duplicate transcript {question_id:?}/{model_id:?}")]
    DuplicateTranscript { question_id: String, model_id: String },
    #[error("template is missing the {0} placeholder")]
    MissingPlaceholder(&'static str),
    #[error("turn {turn_index} out of range for {turns} turns")]
    TurnOutOfRange { turn_index: usize, turns: usize },
    #[error("no rating found in judge reply")]
    NoRating,
    #[error("rating {0} outside 1..=10")]
    RatingOutOfRange(String),
    #[error("judge request failed after {attempts} attempt(s): {message}")]
    Network { attempts: u32, message: String },
    #[error("judge endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed judge response: {0}")]
    MalformedResponse(String),
    #[error("no verdicts to aggregate")]
    Empty,
    #[error(transparent)]
    Record(#[from] RecordError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchQuestion {
    pub id: String,
    pub category: String,
    pub turns: Vec<String>,
    #[serde(default)]
    pub lang: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerTranscript {
    pub question_id: String,
    pub model_id: String,
    pub answers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub question_id: String,
    pub model_id: String,
    pub category: String,
    pub turn_index: usize,
    pub score: u8,
    pub raw_reply: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

/// Prompt template: optional system message plus a user message with
/// `{question}`, `{answer}`, `{history}`, `{turn}` and `{category}` slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeTemplate {
    #[serde(default)]
    pub system: Option<String>,
    pub user: String,
}

impl Default for JudgeTemplate {
    fn default() -> Self {
        JudgeTemplate {
            system: None,
            user: DEFAULT_TEMPLATE.to_string(),
        }
    }
}

impl JudgeTemplate {
    pub fn validate(&self) -> Result<(), JudgeError> {
        for p in ["{question}", "{answer}"] {
            if !self.user.contains(p) {
                return Err(JudgeError::MissingPlaceholder(if p == "{question}" {
                    "{question}"
                } else {
                    "{answer}"
                }));
            }
        }
        Ok(())
    }
}

/// Judge run settings: category set, template, rating pattern and endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    pub categories: Vec<String>,
    pub template: JudgeTemplate,
    pub rating_pattern: String,
    pub endpoint: EndpointConfig,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        JudgeConfig {
            categories: DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect(),
            template: JudgeTemplate::default(),
            rating_pattern: DEFAULT_RATING_PATTERN.to_string(),
            endpoint: EndpointConfig::default(),
        }
    }
}

impl JudgeConfig {
    pub fn from_toml(text: &str) -> Result<Self, JudgeError> {
        let cfg: JudgeConfig = toml::from_str(text).map_err(|e| JudgeError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), JudgeError> {
        if self.categories.is_empty() {
            return Err(JudgeError::InvalidConfig("category set is empty".into()));
        }
        self.template.validate()?;
        self.rating_regex()?;
        self.endpoint.validate()
    }

    pub fn rating_regex(&self) -> Result<Regex, JudgeError> {
        let re = Regex::new(&self.rating_pattern)
            .map_err(|e| JudgeError::InvalidConfig(format!("rating_pattern: {e}")))?;
        if re.captures_len() < 2 {
            return Err(JudgeError::InvalidConfig(
                "rating_pattern needs a capture group for the number".into(),
            ));
        }
        Ok(re)
    }
}

pub fn validate_bench(questions: &[BenchQuestion], categories: &[String]) -> Result<(), JudgeError> {
    let allowed: HashSet<&str> = categories.iter().map(String::as_str).collect();
    let mut seen = HashSet::new();
    for q in questions {
        if !allowed.contains(q.category.as_str()) {
            return Err(JudgeError::UnknownCategory {
                id: q.id.clone(),
                category: q.category.clone(),
            });
        }
        if q.turns.is_empty() {
            return Err(JudgeError::EmptyTurns(q.id.clone()));
        }
        if !seen.insert(q.id.as_str()) {
            return Err(JudgeError::DuplicateQuestion(q.id.clone()));
        }
    }
    Ok(())
}

pub fn load_bench(path: &Path, categories: &[String]) -> Result<Vec<BenchQuestion>, JudgeError> {
    let questions: Vec<BenchQuestion> = read_records(path)?.into_iter().map(|(_, q)| q).collect();
    validate_bench(&questions, categories)?;
    Ok(questions)
}

pub fn load_transcripts(path: &Path) -> Result<Vec<AnswerTranscript>, JudgeError> {
    Ok(read_records(path)?.into_iter().map(|(_, t)| t).collect())
}

fn render_history(question: &BenchQuestion, transcript: &AnswerTranscript, turn_index: usize) -> String {
    let mut out = String::new();
    for t in 0..turn_index {
        out.push_str(&format!(
            "[Turn {} Question]\n{}\n\n[Turn {} Answer]\n{}\n\n",
            t + 1,
            question.turns[t],
            t + 1,
            transcript.answers[t]
        ));
    }
    out
}

/// Single-pass placeholder substitution; substituted text is never rescanned.
fn substitute(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    'outer: while let Some(i) = rest.find('{') {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        for (name, value) in slots {
            if let Some(after) = tail.strip_prefix(name) {
                out.push_str(value);
                rest = after;
                continue 'outer;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

pub fn render_judge_prompt(
    question: &BenchQuestion,
    transcript: &AnswerTranscript,
    turn_index: usize,
    template: &JudgeTemplate,
) -> Result<Vec<Message>, JudgeError> {
    template.validate()?;
    if turn_index >= question.turns.len() || turn_index >= transcript.answers.len() {
        return Err(JudgeError::TurnOutOfRange {
            turn_index,
            turns: question.turns.len().min(transcript.answers.len()),
        });
    }
    if turn_index > 0 && !template.user.contains("{history}") {
        return Err(JudgeError::MissingPlaceholder("{history}"));
    }
    let history = render_history(question, transcript, turn_index);
    let turn = (turn_index + 1).to_string();
    let slots = [
        ("{question}", question.turns[turn_index].as_str()),
        ("{answer}", transcript.answers[turn_index].as_str()),
        ("{history}", history.as_str()),
        ("{turn}", turn.as_str()),
        ("{category}", question.category.as_str()),
    ];
    let mut messages = Vec::with_capacity(2);
    if let Some(system) = &template.system {
        messages.push(Message {
            role: "system".into(),
            content: substitute(system, &slots),
        });
    }
    messages.push(Message {
        role: "user".into(),
        content: substitute(&template.user, &slots),
    });
    Ok(messages)
}

/// First match of `pattern` (capture group 1) as a rating in 1..=10.
pub fn parse_rating_with(raw_reply: &str, pattern: &Regex) -> Result<u8, JudgeError> {
    let caps = pattern.captures(raw_reply).ok_or(JudgeError::NoRating)?;
    let digits = caps.get(1).ok_or(JudgeError::NoRating)?.as_str();
    match digits.parse::<u8>() {
        Ok(n) if (1..=10).contains(&n) => Ok(n),
        _ => Err(JudgeError::RatingOutOfRange(digits.to_string())),
    }
}

pub fn parse_rating(raw_reply: &str) -> Result<u8, JudgeError> {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    parse_rating_with(raw_reply, RE.get_or_init(|| Regex::new(DEFAULT_RATING_PATTERN).expect("valid regex")))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Mean {
    pub mean: f64,
    pub count: u64,
}

#[derive(Debug, Clone, Default)]
struct Tally {
    sum: u64,
    count: u64,
}

impl Tally {
    fn add(&mut self, score: u8) {
        self.sum += score as u64;
        self.count += 1;
    }

    fn mean(&self) -> Option<Mean> {
        (self.count > 0).then(|| Mean {
            mean: self.sum as f64 / self.count as f64,
            count: self.count,
        })
    }
}

/// Means over every turn and over first turns only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TurnMeans {
    pub all_turns: Option<Mean>,
    pub first_turn: Option<Mean>,
}

#[derive(Debug, Clone, Default)]
struct TurnTally {
    all: Tally,
    first: Tally,
}

impl TurnTally {
    fn add(&mut self, v: &JudgeVerdict) {
        self.all.add(v.score);
        if v.turn_index == 0 {
            self.first.add(v.score);
        }
    }

    fn means(&self) -> TurnMeans {
        TurnMeans {
            all_turns: self.all.mean(),
            first_turn: self.first.mean(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JudgeReport {
    pub overall: TurnMeans,
    pub per_category: BTreeMap<String, TurnMeans>,
    pub per_model: BTreeMap<String, TurnMeans>,
    /// Per model, then per category.
    pub per_model_category: BTreeMap<String, BTreeMap<String, TurnMeans>>,
    pub verdicts: u64,
}

pub fn aggregate(verdicts: &[JudgeVerdict]) -> Result<JudgeReport, JudgeError> {
    if verdicts.is_empty() {
        return Err(JudgeError::Empty);
    }
    let mut overall = TurnTally::default();
    let mut cats: BTreeMap<&str, TurnTally> = BTreeMap::new();
    let mut models: BTreeMap<&str, TurnTally> = BTreeMap::new();
    let mut model_cats: BTreeMap<&str, BTreeMap<&str, TurnTally>> = BTreeMap::new();
    for v in verdicts {
        overall.add(v);
        cats.entry(&v.category).or_default().add(v);
        models.entry(&v.model_id).or_default().add(v);
        model_cats
            .entry(&v.model_id)
            .or_default()
            .entry(&v.category)
            .or_default()
            .add(v);
    }
    let means = |m: BTreeMap<&str, TurnTally>| m.into_iter().map(|(k, t)| (k.to_string(), t.means())).collect();
    Ok(JudgeReport {
        overall: overall.means(),
        per_category: means(cats),
        per_model: means(models.clone()),
        per_model_category: model_cats.into_iter().map(|(k, m)| (k.to_string(), means(m))).collect(),
        verdicts: verdicts.len() as u64,
    })
}

/// One judging unit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JudgeTask {
    pub question_id: String,
    pub model_id: String,
    pub turn_index: usize,
}

impl JudgeTask {
    fn of(v: &JudgeVerdict) -> Self {
        JudgeTask {
            question_id: v.question_id.clone(),
            model_id: v.model_id.clone(),
            turn_index: v.turn_index,
        }
    }
}

/// Tasks in transcript order, one per answered turn. Checks that every
/// transcript references a known question and answers each of its turns.
pub fn plan_tasks(
    questions: &[BenchQuestion],
    transcripts: &[AnswerTranscript],
) -> Result<Vec<JudgeTask>, JudgeError> {
    let by_id: HashMap<&str, &BenchQuestion> = questions.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut seen = HashSet::new();
    let mut tasks = Vec::new();
    for t in transcripts {
        let q = by_id.get(t.question_id.as_str()).ok_or_else(|| JudgeError::UnknownQuestion {
            question_id: t.question_id.clone(),
            model_id: t.model_id.clone(),
        })?;
        if t.answers.len() != q.turns.len() {
            return Err(JudgeError::AnswerCount {
                question_id: t.question_id.clone(),
                model_id: t.model_id.clone(),
                answers: t.answers.len(),
                turns: q.turns.len(),
            });
        }
        if !seen.insert((t.question_id.as_str(), t.model_id.as_str())) {
            return Err(JudgeError::DuplicateTranscript {
                question_id: t.question_id.clone(),
                model_id: t.model_id.clone(),
            });
        }
        for turn_index in 0..q.turns.len() {
            tasks.push(JudgeTask {
                question_id: t.question_id.clone(),
                model_id: t.model_id.clone(),
                turn_index,
            });
        }
    }
    Ok(tasks)
}

#[derive(Debug, Default)]
pub struct JudgeRun {
    /// Every verdict for the planned tasks (resumed and new), in task order.
    pub verdicts: Vec<JudgeVerdict>,
    /// Tasks whose reply carried no usable rating, with the reason.
    pub unparsed: Vec<(JudgeTask, String)>,
    pub resumed: usize,
    pub requested: usize,
}

/// Judges every planned task not already in `store`, at most `parallelism`
/// requests at a time.
///
/// New verdicts are appended to `store` in task order as soon as every earlier
/// task has finished, so an interrupted run resumes where it stopped and the
/// store contents do not depend on thread timing. Replies without a rating
/// are reported and left for a later run. The first request failure stops
/// dispatch; verdicts finished before it are kept and the error returned.
pub fn run_judging(
    questions: &[BenchQuestion],
    transcripts: &[AnswerTranscript],
    client: &dyn JudgeClient,
    cfg: &JudgeConfig,
    store: Option<&Path>,
    parallelism: usize,
) -> Result<JudgeRun, JudgeError> {
    validate_bench(questions, &cfg.categories)?;
    cfg.template.validate()?;
    let pattern = cfg.rating_regex()?;
    let tasks = plan_tasks(questions, transcripts)?;
    let planned: BTreeSet<&JudgeTask> = tasks.iter().collect();

    let mut done: HashMap<JudgeTask, JudgeVerdict> = HashMap::new();
    if let Some(path) = store.filter(|p| p.exists()) {
        for (_, v) in read_records::<JudgeVerdict>(path)? {
            let task = JudgeTask::of(&v);
            if planned.contains(&task) {
                done.insert(task, v);
            }
        }
    }
    let resumed = done.len();
    let pending: Vec<&JudgeTask> = tasks.iter().filter(|t| !done.contains_key(*t)).collect();
    let q_by_id: HashMap<&str, &BenchQuestion> = questions.iter().map(|q| (q.id.as_str(), q)).collect();
    let t_by_key: HashMap<(&str, &str), &AnswerTranscript> = transcripts
        .iter()
        .map(|t| ((t.question_id.as_str(), t.model_id.as_str()), t))
        .collect();

    let judge_one = |task: &JudgeTask| -> Result<Result<JudgeVerdict, String>, JudgeError> {
        let q = q_by_id[task.question_id.as_str()];
        let t = t_by_key[&(task.question_id.as_str(), task.model_id.as_str())];
        let messages = render_judge_prompt(q, t, task.turn_index, &cfg.template)?;
        let raw_reply = client.judge(&messages)?;
        Ok(match parse_rating_with(&raw_reply, &pattern) {
            Ok(score) => Ok(JudgeVerdict {
                question_id: task.question_id.clone(),
                model_id: task.model_id.clone(),
                category: q.category.clone(),
                turn_index: task.turn_index,
                score,
                raw_reply,
            }),
            Err(e) => Err(e.to_string()),
        })
    };

    let mut run = JudgeRun {
        resumed,
        ..Default::default()
    };
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let workers = parallelism.max(1).min(pending.len().max(1));
    let mut first_error: Option<JudgeError> = None;
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, abort, pending, judge_one) = (&next, &abort, &pending, &judge_one);
            scope.spawn(move || loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(task) = pending.get(i) else { break };
                let out = judge_one(task);
                if out.is_err() {
                    abort.store(true, Ordering::SeqCst);
                }
                if tx.send((i, out)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        // Reorder buffer: persist in task order.
        let mut buffer: BTreeMap<usize, Result<Result<JudgeVerdict, String>, JudgeError>> = BTreeMap::new();
        let mut cursor = 0;
        for (i, out) in rx {
            buffer.insert(i, out);
            while let Some(out) = buffer.remove(&cursor) {
                let task = pending[cursor];
                cursor += 1;
                if first_error.is_some() {
                    continue;
                }
                match out {
                    Ok(Ok(v)) => {
                        run.requested += 1;
                        if let Some(path) = store {
                            if let Err(e) = append_records(path, [&v]) {
                                first_error = Some(e.into());
                                abort.store(true, Ordering::SeqCst);
                                continue;
                            }
                        }
                        done.insert(task.clone(), v);
                    }
                    Ok(Err(reason)) => {
                        run.requested += 1;
                        log::warn!(
                            "{}/{} turn {}: {reason}",
                            task.question_id,
                            task.model_id,
                            task.turn_index + 1
                        );
                        run.unparsed.push((task.clone(), reason));
                    }
                    Err(e) => first_error = Some(e),
                }
            }
        }
    });
    if let Some(e) = first_error {
        return Err(e);
    }
    run.verdicts = tasks.iter().filter_map(|t| done.remove(t)).collect();
    Ok(run)
}
