//! Training-file export for the four fine-tuning settings, plus dataset
//! statistics.
//!
//! Setting 1 trains reflection and correction in one target. Setting 2
//! splits them into a reflection file (2.1) and a correction file (2.2).
//! Settings 3 and 4 are preference files built from outcome pairs and
//! judged pairs respectively.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::gateway::GatewayError;
use crate::model::{CandidateSample, PairContext, PairKind, PreferencePair, TaskCategory};
use crate::pool::InstructionPool;
use crate::prompts::{join_examples, PromptSet};
use crate::util::{path_safe, write_jsonl, JsonlError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Setting {
    #[serde(rename = "1")]
    OneStage,
    #[serde(rename = "2.1")]
    Reflection,
    #[serde(rename = "2.2")]
    Correction,
    #[serde(rename = "3")]
    OutcomePairs,
    #[serde(rename = "4")]
    JudgedPairs,
}

impl Setting {
    pub const ALL: [Setting; 5] = [
        Setting::OneStage,
        Setting::Reflection,
        Setting::Correction,
        Setting::OutcomePairs,
        Setting::JudgedPairs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Setting::OneStage => "1",
            Setting::Reflection => "2.1",
            Setting::Correction => "2.2",
            Setting::OutcomePairs => "3",
            Setting::JudgedPairs => "4",
        }
    }

    fn pair_kind(self) -> Option<PairKind> {
        match self {
            Setting::OutcomePairs => Some(PairKind::OutcomePm),
            Setting::JudgedPairs => Some(PairKind::JudgedPref),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("setting {setting} expects {expected:?} pairs, got {found:?} (task {task_id})")]
    KindMismatch {
        setting: &'static str,
        expected: PairKind,
        found: PairKind,
        task_id: String,
    },
    #[error("setting {0} is not a preference setting")]
    NotPreference(&'static str),
    #[error("setting {0} is not a supervised setting")]
    NotSupervised(&'static str),
    #[error("pair for task {0} has identical chosen and rejected text")]
    IdenticalPair(String),
    #[error("prompt: {0}")]
    Prompt(String),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftMeta {
    pub setting: Setting,
    pub task_id: String,
    pub source_dataset: String,
    pub instruction_id: String,
    pub sample_index: u32,
}

/// Prompt/target record. Trainers compute loss on `target` only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub prompt: String,
    pub target: String,
    pub meta: SftMeta,
}

/// What the preference completions contain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DpoCompletion {
    /// Reflection text only.
    #[default]
    Reflection,
    /// Reflection followed by the corrected reasoning and answer.
    ReflectionAnswer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpoMeta {
    pub setting: Setting,
    pub kind: PairKind,
    pub task_id: String,
    pub source_dataset: String,
    pub completion: DpoCompletion,
    pub chosen_instruction_id: String,
    pub rejected_instruction_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpoRecord {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub meta: DpoMeta,
}

/// Which prompt frames the reflection in settings 2.1, 3 and 4.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflectionPromptStyle {
    /// The pool-free reflection prompt.
    #[default]
    Plain,
    /// The pool instruction the reflection was sampled with. Preference
    /// records use the chosen member's instruction.
    Instruction,
}

#[derive(Debug, Clone)]
pub struct Exporter {
    prompts: PromptSet,
    pool: InstructionPool,
    style: ReflectionPromptStyle,
}

fn perr(e: impl std::fmt::Display) -> ExportError {
    ExportError::Prompt(e.to_string())
}

/// Setting-1 target: reflection, newline, corrected reasoning.
pub fn one_stage_target(reflection: &str, corrected_scratchpad: &str) -> String {
    format!("{reflection}\n{corrected_scratchpad}")
}

impl Exporter {
    pub fn new(prompts: PromptSet, pool: InstructionPool, style: ReflectionPromptStyle) -> Self {
        Self {
            prompts,
            pool,
            style,
        }
    }

    pub fn builtin() -> Self {
        Self::new(
            PromptSet::builtin(),
            InstructionPool::builtin(),
            ReflectionPromptStyle::default(),
        )
    }

    fn reflection_prompt(
        &self,
        ctx: &PairContext,
        instruction_id: &str,
    ) -> Result<String, ExportError> {
        match self.style {
            ReflectionPromptStyle::Plain => self
                .prompts
                .reflexion
                .render(&[
                    ("Question", &ctx.task.question),
                    ("Scratchpad", &ctx.first_scratchpad),
                ])
                .map_err(perr),
            ReflectionPromptStyle::Instruction => {
                let spec = self.pool.get(instruction_id).map_err(perr)?;
                self.pool
                    .render_reflection_prompt(&spec, &ctx.task.question, &ctx.first_scratchpad)
                    .map_err(perr)
            }
        }
    }

    fn meta(setting: Setting, c: &CandidateSample) -> SftMeta {
        SftMeta {
            setting,
            task_id: c.task.id.clone(),
            source_dataset: c.task.source_dataset.clone(),
            instruction_id: c.reflection.instruction_id.clone(),
            sample_index: c.reflection.sampling.sample_index,
        }
    }

    /// One record per D⁺ sample: the one-stage prompt over the failed
    /// attempt, targeting reflection plus corrected reasoning.
    pub fn setting1(&self, d_plus: &[CandidateSample]) -> Result<Vec<SftRecord>, ExportError> {
        warn_if_empty(d_plus.len(), Setting::OneStage);
        d_plus
            .iter()
            .map(|c| {
                let prompt = self
                    .prompts
                    .one_stage
                    .render(&[
                        ("Question", &c.task.question),
                        ("Scratchpad", &c.first_scratchpad),
                    ])
                    .map_err(perr)?;
                Ok(SftRecord {
                    prompt,
                    target: one_stage_target(&c.reflection.text, &c.corrected_scratchpad),
                    meta: Self::meta(Setting::OneStage, c),
                })
            })
            .collect()
    }

    /// Reflection records (2.1) and correction records (2.2), aligned one
    /// to one with `d_plus`.
    pub fn setting2(
        &self,
        d_plus: &[CandidateSample],
    ) -> Result<(Vec<SftRecord>, Vec<SftRecord>), ExportError> {
        warn_if_empty(d_plus.len(), Setting::Reflection);
        let mut reflect = Vec::with_capacity(d_plus.len());
        let mut correct = Vec::with_capacity(d_plus.len());
        for c in d_plus {
            reflect.push(SftRecord {
                prompt: self.reflection_prompt(&c.context(), &c.reflection.instruction_id)?,
                target: c.reflection.text.clone(),
                meta: Self::meta(Setting::Reflection, c),
            });
            let prompt = self
                .prompts
                .correct
                .render(&[
                    ("Examples", &join_examples(&c.task.fewshot)),
                    ("Question", &c.task.question),
                    ("Reflections", &c.reflection.text),
                    ("Scratchpad", &c.first_scratchpad),
                ])
                .map_err(perr)?;
            correct.push(SftRecord {
                prompt,
                target: c.corrected_scratchpad.clone(),
                meta: Self::meta(Setting::Correction, c),
            });
        }
        Ok((reflect, correct))
    }

    /// Preference records. Every pair must match the setting's pair kind;
    /// one mismatch rejects the whole batch.
    pub fn dpo(
        &self,
        pairs: &[PreferencePair],
        setting: Setting,
        completion: DpoCompletion,
    ) -> Result<Vec<DpoRecord>, ExportError> {
        let expected = setting
            .pair_kind()
            .ok_or(ExportError::NotPreference(setting.as_str()))?;
        if let Some(bad) = pairs.iter().find(|p| p.kind != expected) {
            return Err(ExportError::KindMismatch {
                setting: setting.as_str(),
                expected,
                found: bad.kind,
                task_id: bad.task_id().to_string(),
            });
        }
        warn_if_empty(pairs.len(), setting);
        pairs
            .iter()
            .map(|p| {
                let text = |m: &crate::model::PairMember| match completion {
                    DpoCompletion::Reflection => m.reflection.text.clone(),
                    DpoCompletion::ReflectionAnswer => {
                        one_stage_target(&m.reflection.text, &m.corrected_scratchpad)
                    }
                };
                let (chosen, rejected) = (text(&p.chosen), text(&p.rejected));
                if chosen == rejected {
                    return Err(ExportError::IdenticalPair(p.task_id().to_string()));
                }
                Ok(DpoRecord {
                    prompt: self
                        .reflection_prompt(&p.context, &p.chosen.reflection.instruction_id)?,
                    chosen,
                    rejected,
                    meta: DpoMeta {
                        setting,
                        kind: p.kind,
                        task_id: p.task_id().to_string(),
                        source_dataset: p.context.task.source_dataset.clone(),
                        completion,
                        chosen_instruction_id: p.chosen.reflection.instruction_id.clone(),
                        rejected_instruction_id: p.rejected.reflection.instruction_id.clone(),
                    },
                })
            })
            .collect()
    }
}

fn warn_if_empty(n: usize, setting: Setting) {
    if n == 0 {
        tracing::warn!(
            setting = setting.as_str(),
            "nothing to export; writing an empty file"
        );
    }
}

/// Writes `exports/{setting}/{dataset}.jsonl` files under `root`, one per
/// source dataset. With no records, a single empty `all.jsonl` is written
/// so the setting directory always exists. Returns the written paths.
pub fn write_by_dataset<T: Serialize>(
    root: &Path,
    setting: Setting,
    records: &[T],
    dataset_of: impl Fn(&T) -> &str,
) -> Result<Vec<PathBuf>, ExportError> {
    let dir = root.join(setting.as_str());
    let mut by_dataset: BTreeMap<&str, Vec<&T>> = BTreeMap::new();
    for r in records {
        by_dataset.entry(dataset_of(r)).or_default().push(r);
    }
    if by_dataset.is_empty() {
        let path = dir.join("all.jsonl");
        write_jsonl::<T>(&path, &[])?;
        return Ok(vec![path]);
    }
    let mut paths = Vec::new();
    for (dataset, rows) in by_dataset {
        let path = dir.join(format!("{}.jsonl", path_safe(dataset)));
        write_jsonl(&path, &rows)?;
        paths.push(path);
    }
    Ok(paths)
}

pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> Result<usize, GatewayError>;
}

/// Whitespace-separated pieces; a rough stand-in for model tokens.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn count(&self, text: &str) -> Result<usize, GatewayError> {
        Ok(text.split_whitespace().count())
    }
}

/// Counts tokens with a server's `/tokenize` endpoint. Accepts replies
/// carrying either `count` or a `tokens` array.
#[derive(Debug, Clone)]
pub struct EndpointTokenCounter {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
}

impl EndpointTokenCounter {
    pub fn new(base_url: &str, model: &str, timeout: Duration) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            url: format!("{}/tokenize", base_url.trim_end_matches('/')),
            model: model.to_string(),
        })
    }
}

impl TokenCounter for EndpointTokenCounter {
    fn count(&self, text: &str) -> Result<usize, GatewayError> {
        #[derive(Deserialize)]
        struct Reply {
            count: Option<usize>,
            tokens: Option<Vec<serde_json::Value>>,
        }
        let resp = self
            .client
            .post(&self.url)
            .json(&serde_json::json!({"model": self.model, "prompt": text}))
            .send()
            .map_err(crate::gateway::map_reqwest)?;
        let status = resp.status();
        let body = resp.text().map_err(crate::gateway::map_reqwest)?;
        if !status.is_success() {
            return Err(GatewayError::Status {
                status: status.as_u16(),
                body,
            });
        }
        let reply: Reply = serde_json::from_str(&body)
            .map_err(|e| GatewayError::Protocol(format!("malformed tokenize reply: {e}")))?;
        reply
            .count
            .or(reply.tokens.map(|t| t.len()))
            .ok_or_else(|| GatewayError::Protocol("tokenize reply has no count".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub category: String,
    /// Candidates in the raw pool.
    pub pool: usize,
    pub d_plus: usize,
    /// Percentage of pool candidates whose correction is right.
    pub pct_correct: f64,
    pub avg_question_tokens: f64,
    pub avg_turn1_tokens: f64,
    pub avg_turn2_tokens: f64,
    pub avg_reflection_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    /// One row per category present in the pool, in category order.
    pub rows: Vec<StatsRow>,
    pub total: StatsRow,
}

#[derive(Default)]
struct Acc {
    pool: usize,
    correct: usize,
    d_plus: usize,
    question: usize,
    turn1: usize,
    turn2: usize,
    reflection: usize,
}

impl Acc {
    fn row(&self, category: String) -> StatsRow {
        let avg = |sum: usize| {
            if self.pool == 0 {
                0.0
            } else {
                sum as f64 / self.pool as f64
            }
        };
        StatsRow {
            category,
            pool: self.pool,
            d_plus: self.d_plus,
            pct_correct: avg(self.correct * 100),
            avg_question_tokens: avg(self.question),
            avg_turn1_tokens: avg(self.turn1),
            avg_turn2_tokens: avg(self.turn2),
            avg_reflection_tokens: avg(self.reflection),
        }
    }

    fn add(&mut self, other: &Acc) {
        self.pool += other.pool;
        self.correct += other.correct;
        self.d_plus += other.d_plus;
        self.question += other.question;
        self.turn1 += other.turn1;
        self.turn2 += other.turn2;
        self.reflection += other.reflection;
    }
}

/// Per-category pool size, D⁺ size, correction rate and average lengths.
/// Categories absent from the pool get no row.
pub fn compute_stats(
    pool: &[CandidateSample],
    d_plus: &[CandidateSample],
    counter: &dyn TokenCounter,
) -> Result<DatasetStats, GatewayError> {
    let mut acc: BTreeMap<TaskCategory, Acc> = BTreeMap::new();
    for c in pool {
        let a = acc.entry(c.task.task_category).or_default();
        a.pool += 1;
        a.correct += usize::from(c.outcome.is_correct());
        a.question += counter.count(&c.task.question)?;
        a.turn1 += counter.count(&c.first_scratchpad)?;
        a.turn2 += counter.count(&c.corrected_scratchpad)?;
        a.reflection += counter.count(&c.reflection.text)?;
    }
    for c in d_plus {
        acc.entry(c.task.task_category).or_default().d_plus += 1;
    }
    let mut total = Acc::default();
    let mut rows = Vec::new();
    for (category, a) in &acc {
        total.add(a);
        if a.pool > 0 {
            rows.push(a.row(category.display_name().to_string()));
        }
    }
    Ok(DatasetStats {
        rows,
        total: total.row("Total".into()),
    })
}

impl DatasetStats {
    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let header = [
            "Category",
            "Pool",
            "D+",
            "% Correct after reflection",
            "Avg Q",
            "Avg A (t1)",
            "Avg A (t2)",
            "Avg R",
        ];
        let cells = |r: &StatsRow| {
            vec![
                r.category.clone(),
                r.pool.to_string(),
                r.d_plus.to_string(),
                format!("{:.1}", r.pct_correct),
                format!("{:.1}", r.avg_question_tokens),
                format!("{:.1}", r.avg_turn1_tokens),
                format!("{:.1}", r.avg_turn2_tokens),
                format!("{:.1}", r.avg_reflection_tokens),
            ]
        };
        let mut lines: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        lines.extend(self.rows.iter().map(cells));
        lines.push(cells(&self.total));
        crate::eval::render_table(&lines)
    }
}
