//! Domain records shared by every stage of the pipeline.
//!
//! Everything here is a plain value type: built once, then passed around by
//! reference or cloned into output records. Serialized shapes are the JSONL
//! schemas written by the generation, curation and evaluation stages.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// How a gold answer is compared against a model answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    MultipleChoice,
    Numeric,
    FreeText,
    Code,
}

/// The ten task categories used for dataset statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskCategory {
    LogicalReasoning,
    Mathematics,
    Coding,
    ContextualQa,
    ContextFreeQa,
    ReadingComprehension,
    CommonsenseReasoning,
    SocialReasoning,
    CausalReasoning,
    PhysicsReasoning,
}

impl TaskCategory {
    pub const ALL: [TaskCategory; 10] = [
        TaskCategory::LogicalReasoning,
        TaskCategory::Mathematics,
        TaskCategory::Coding,
        TaskCategory::ContextualQa,
        TaskCategory::ContextFreeQa,
        TaskCategory::ReadingComprehension,
        TaskCategory::CommonsenseReasoning,
        TaskCategory::SocialReasoning,
        TaskCategory::CausalReasoning,
        TaskCategory::PhysicsReasoning,
    ];

    pub fn display_name(self) -> &'static str {
        match self {
            TaskCategory::LogicalReasoning => "Logical Reasoning",
            TaskCategory::Mathematics => "Mathematics",
            TaskCategory::Coding => "Coding",
            TaskCategory::ContextualQa => "Contextual QA",
            TaskCategory::ContextFreeQa => "Context-Free QA",
            TaskCategory::ReadingComprehension => "Reading Comprehension",
            TaskCategory::CommonsenseReasoning => "Commonsense Reasoning",
            TaskCategory::SocialReasoning => "Social Reasoning",
            TaskCategory::CausalReasoning => "Causal Reasoning",
            TaskCategory::PhysicsReasoning => "Physics Reasoning",
        }
    }
}

impl fmt::Display for TaskCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

/// Dataset families accepted in `TaskItem::source_dataset`.
pub const KNOWN_DATASETS: [&str; 3] = ["logiqa", "math", "mbpp"];
/// Prefix for BIG-bench subsets, e.g. `bigbench/strategyqa`.
pub const BIGBENCH_PREFIX: &str = "bigbench/";

pub fn is_known_dataset(name: &str) -> bool {
    KNOWN_DATASETS.contains(&name)
        || name
            .strip_prefix(BIGBENCH_PREFIX)
            .is_some_and(|subset| !subset.is_empty() && !subset.contains('/'))
}

/// One question with its gold answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskItem {
    pub id: String,
    pub source_dataset: String,
    pub task_category: TaskCategory,
    pub question: String,
    pub gold_answer: String,
    pub answer_kind: AnswerKind,
    #[serde(default)]
    pub fewshot: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TaskError {
    #[error("task has an empty id")]
    EmptyId,
    #[error("task {0}: gold_answer is empty")]
    EmptyGold(String),
    #[error("task {0}: question is empty")]
    EmptyQuestion(String),
    #[error(
        "task {id}: unknown dataset {name:?}; expected one of logiqa, math, mbpp or bigbench/<subset>"
    )]
    UnknownDataset { id: String, name: String },
    #[error("duplicate task id {0}")]
    DuplicateId(String),
}

impl TaskItem {
    pub fn validate(&self) -> Result<(), TaskError> {
        if self.id.trim().is_empty() {
            return Err(TaskError::EmptyId);
        }
        if self.gold_answer.trim().is_empty() {
            return Err(TaskError::EmptyGold(self.id.clone()));
        }
        if self.question.trim().is_empty() {
            return Err(TaskError::EmptyQuestion(self.id.clone()));
        }
        if !is_known_dataset(&self.source_dataset) {
            return Err(TaskError::UnknownDataset {
                id: self.id.clone(),
                name: self.source_dataset.clone(),
            });
        }
        Ok(())
    }
}

/// Validates every task and checks id uniqueness across the set.
pub fn validate_tasks(tasks: &[TaskItem]) -> Result<(), TaskError> {
    let mut seen = std::collections::HashSet::new();
    for task in tasks {
        task.validate()?;
        if !seen.insert(task.id.as_str()) {
            return Err(TaskError::DuplicateId(task.id.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Correct,
    Incorrect,
    Unverified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifierKind {
    Oracle,
    SelfJudgment,
    ExternalRunner,
}

/// The binary verdict on an answer, plus where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub value: Verdict,
    /// `None` until a verifier has looked at the answer.
    pub verifier_kind: Option<VerifierKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl Feedback {
    pub fn pending() -> Self {
        Self {
            value: Verdict::Unverified,
            verifier_kind: None,
            reason: None,
        }
    }

    pub fn new(value: Verdict, kind: VerifierKind) -> Self {
        Self {
            value,
            verifier_kind: Some(kind),
            reason: None,
        }
    }

    pub fn with_reason(mut self, reason: impl Into<String>) -> Self {
        self.reason = Some(reason.into());
        self
    }

    pub fn is_correct(&self) -> bool {
        self.value == Verdict::Correct
    }

    pub fn is_incorrect(&self) -> bool {
        self.value == Verdict::Incorrect
    }
}

/// One reasoning attempt. Turn 1 holds the first answer, later turns hold
/// corrections.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub index: u32,
    pub scratchpad: String,
    pub extracted_answer: Option<String>,
    pub feedback: Feedback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReflectionSource {
    #[serde(rename = "self")]
    SelfModel,
    Teacher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingInfo {
    pub temperature: f32,
    pub seed: u64,
    /// 1-based index among the `k` samples drawn for one instruction.
    pub sample_index: u32,
}

/// Instruction id recorded for reflections produced with the plain
/// (pool-free) reflection prompt.
pub const PLAIN_INSTRUCTION_ID: &str = "plain";
/// Instruction id recorded for reflections split out of a one-stage
/// reflect-and-correct completion.
pub const ONE_STAGE_INSTRUCTION_ID: &str = "one_stage";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionRecord {
    pub instruction_id: String,
    pub text: String,
    pub sampling: SamplingInfo,
    pub source: ReflectionSource,
}

/// Why a rollout or a candidate could not be completed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum AbortReason {
    NoAnswer,
    EmptyReflection,
    Parse,
    Endpoint { message: String },
    Prompt { message: String },
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AbortReason::NoAnswer => f.write_str("no_answer"),
            AbortReason::EmptyReflection => f.write_str("empty_reflection"),
            AbortReason::Parse => f.write_str("parse"),
            AbortReason::Endpoint { message } => write!(f, "endpoint: {message}"),
            AbortReason::Prompt { message } => write!(f, "prompt: {message}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStatus {
    SolvedTurn(u32),
    Unsolved,
    Aborted(AbortReason),
}

/// A full multi-turn attempt on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutTrace {
    pub task_id: String,
    pub turns: Vec<Turn>,
    /// `reflections[i]` sits between `turns[i]` and `turns[i + 1]`.
    pub reflections: Vec<ReflectionRecord>,
    pub status: TraceStatus,
}

impl RolloutTrace {
    pub fn solved_turn(&self) -> Option<u32> {
        match self.status {
            TraceStatus::SolvedTurn(t) => Some(t),
            _ => None,
        }
    }
}

/// Lists every broken trace invariant. An empty list means the trace is
/// well formed.
pub fn validate_trace(trace: &RolloutTrace) -> Vec<String> {
    let mut violations = Vec::new();
    let aborted = matches!(trace.status, TraceStatus::Aborted(_));

    if trace.turns.is_empty() && !aborted {
        violations.push("empty trace".to_string());
    }
    let contiguous = trace
        .turns
        .iter()
        .enumerate()
        .all(|(i, turn)| turn.index as usize == i + 1);
    if !contiguous {
        violations.push("non-contiguous turn indices".to_string());
    }
    if !aborted && !trace.turns.is_empty() && trace.reflections.len() + 1 != trace.turns.len() {
        violations.push("reflection count mismatch".to_string());
    }
    for turn in &trace.turns {
        let has_terminal = crate::rollout::extract_answer(&turn.scratchpad).is_some();
        if has_terminal != turn.extracted_answer.is_some() {
            violations.push(format!(
                "turn {} answer does not match terminal action",
                turn.index
            ));
        }
    }
    match trace.status {
        TraceStatus::SolvedTurn(t) => match trace.turns.iter().position(|turn| turn.index == t) {
            None => violations.push("solved turn missing".to_string()),
            Some(pos) => {
                if !trace.turns[pos].feedback.is_correct() {
                    violations.push("solved turn not Correct".to_string());
                }
                if pos + 1 != trace.turns.len() {
                    violations.push("turns after solved turn".to_string());
                }
            }
        },
        TraceStatus::Unsolved => {
            if trace.turns.iter().any(|turn| turn.feedback.is_correct()) {
                violations.push("unsolved trace has a Correct turn".to_string());
            }
        }
        TraceStatus::Aborted(_) => {}
    }
    violations
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Correct,
    Incorrect,
}

impl Outcome {
    pub fn is_correct(self) -> bool {
        self == Outcome::Correct
    }
}

/// One reflection plus correction drawn for a failed first answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSample {
    /// Task context the sample was generated for, carried along so curated
    /// files can be exported and re-verified on their own.
    pub task: TaskItem,
    pub first_answer: String,
    pub first_answer_normalized: String,
    pub first_feedback: Feedback,
    pub first_scratchpad: String,
    pub reflection: ReflectionRecord,
    pub corrected_answer: String,
    pub corrected_answer_normalized: String,
    pub corrected_scratchpad: String,
    pub outcome: Outcome,
}

/// Identity of a candidate within a run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CandidateKey {
    pub task_id: String,
    pub instruction_id: String,
    pub sample_index: u32,
}

impl CandidateSample {
    pub fn task_id(&self) -> &str {
        &self.task.id
    }

    pub fn key(&self) -> CandidateKey {
        CandidateKey {
            task_id: self.task.id.clone(),
            instruction_id: self.reflection.instruction_id.clone(),
            sample_index: self.reflection.sampling.sample_index,
        }
    }

    /// The `(q, a, f)` context two candidates must share to be paired.
    pub fn group_key(&self) -> (String, String) {
        (self.task.id.clone(), self.first_answer.clone())
    }

    pub fn to_member(&self) -> PairMember {
        PairMember {
            reflection: self.reflection.clone(),
            corrected_answer: self.corrected_answer.clone(),
            corrected_scratchpad: self.corrected_scratchpad.clone(),
            outcome: self.outcome,
        }
    }

    pub fn context(&self) -> PairContext {
        PairContext {
            task: self.task.clone(),
            first_answer: self.first_answer.clone(),
            first_feedback: self.first_feedback.clone(),
            first_scratchpad: self.first_scratchpad.clone(),
        }
    }
}

/// Generation failure for one `(task, instruction, j)` slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbortRecord {
    pub task_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_index: Option<u32>,
    pub stage: AbortStage,
    pub reason: AbortReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortStage {
    FirstTurn,
    Reflection,
    Correction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairContext {
    pub task: TaskItem,
    pub first_answer: String,
    pub first_feedback: Feedback,
    pub first_scratchpad: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMember {
    pub reflection: ReflectionRecord,
    pub corrected_answer: String,
    pub corrected_scratchpad: String,
    pub outcome: Outcome,
}

impl PairMember {
    pub fn key(&self, task_id: &str) -> CandidateKey {
        CandidateKey {
            task_id: task_id.to_string(),
            instruction_id: self.reflection.instruction_id.clone(),
            sample_index: self.reflection.sampling.sample_index,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    /// Correct-vs-incorrect outcome pairs.
    OutcomePm,
    /// Two correct reflections ranked by a judge model.
    JudgedPref,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JudgeChoice {
    A,
    B,
}

/// Raw judge passes for one adjudicated pair. `swapped` is the pass with
/// the two reflections in reversed positions, present when debiasing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVotes {
    pub first: Option<JudgeChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub swapped: Option<Option<JudgeChoice>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub context: PairContext,
    pub chosen: PairMember,
    pub rejected: PairMember,
    pub kind: PairKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_votes: Option<JudgeVotes>,
}

impl PreferencePair {
    pub fn task_id(&self) -> &str {
        &self.context.task.id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// One instruction draw per dataset, shared by all of its questions.
    PerDataset,
    /// A fresh draw for every question.
    PerQuestion,
}

/// Knobs for candidate generation and rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationPolicy {
    /// Reject-sampling count per instruction.
    pub k: u32,
    /// Instructions drawn from the pool.
    pub m: u32,
    pub max_turns: u32,
    /// Thought/action cycles allowed inside one turn.
    pub max_steps: u32,
    pub sample_temperature: f32,
    pub eval_temperature: f32,
    pub max_new_tokens: u32,
    pub seed: u64,
    pub selection: SelectionMode,
    /// Maximum number of tasks kept per source dataset.
    pub caps: BTreeMap<String, usize>,
}

impl Default for GenerationPolicy {
    fn default() -> Self {
        Self {
            k: 2,
            m: 5,
            max_turns: 2,
            max_steps: 6,
            sample_temperature: 0.7,
            eval_temperature: 0.0,
            max_new_tokens: 512,
            seed: 0,
            selection: SelectionMode::PerDataset,
            caps: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("m must be in 1..=32, got {0}")]
    MOutOfRange(u32),
    #[error("max_turns must be at least 1")]
    ZeroTurns,
    #[error("max_steps must be at least 1")]
    ZeroSteps,
    #[error("max_new_tokens must be positive")]
    ZeroTokens,
}

impl GenerationPolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.k == 0 {
            return Err(PolicyError::ZeroK);
        }
        if !(1..=32).contains(&self.m) {
            return Err(PolicyError::MOutOfRange(self.m));
        }
        if self.max_turns == 0 {
            return Err(PolicyError::ZeroTurns);
        }
        if self.max_steps == 0 {
            return Err(PolicyError::ZeroSteps);
        }
        if self.max_new_tokens == 0 {
            return Err(PolicyError::ZeroTokens);
        }
        Ok(())
    }
}
