//! Generator/reflector protocol: first-turn ReAct reasoning, reflection,
//! correction, the one-stage reflect-and-correct variant, multi-turn
//! rollouts and reject-sampled candidate generation.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::gateway::{CompletionRequest, Gateway, GatewayError};
use crate::model::{
    AbortReason, AbortRecord, AbortStage, CandidateSample, Feedback, GenerationPolicy, Outcome,
    ReflectionRecord, ReflectionSource, RolloutTrace, SamplingInfo, TaskItem, TraceStatus, Turn,
    ONE_STAGE_INSTRUCTION_ID, PLAIN_INSTRUCTION_ID,
};
use crate::pool::{InstructionPool, InstructionSpec};
use crate::prompts::{join_examples, PromptSet};
use crate::util::derive_seed;
use crate::verify::{normalize, verify_oracle, Verifier};

/// Observation text fed back after a non-terminal step. The in-scope
/// tasks have no tool environment, so it is a fixed acknowledgment.
pub const OBSERVATION_ACK: &str = "Continue reasoning.";
/// Stop sequence that ends one thought/action step.
pub const STEP_STOP: &str = "\nObservation:";

const TERMINAL: &str = "Finish[";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentKind {
    Thought,
    Action,
    Observation,
}

impl SegmentKind {
    const ALL: [SegmentKind; 3] = [
        SegmentKind::Thought,
        SegmentKind::Action,
        SegmentKind::Observation,
    ];

    fn label(self) -> &'static str {
        match self {
            SegmentKind::Thought => "Thought:",
            SegmentKind::Action => "Action:",
            SegmentKind::Observation => "Observation:",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub text: String,
}

/// Ordered thought/action/observation transcript.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scratchpad {
    segments: Vec<Segment>,
}

impl Scratchpad {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, kind: SegmentKind, text: impl Into<String>) {
        self.segments.push(Segment {
            kind,
            text: text.into().trim().to_string(),
        });
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// One `Kind: text` line per segment.
    pub fn render(&self) -> String {
        self.segments
            .iter()
            .map(|s| {
                if s.text.is_empty() {
                    s.kind.label().to_string()
                } else {
                    format!("{} {}", s.kind.label(), s.text)
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Splits model output at `Thought:`/`Action:`/`Observation:` labels.
    /// Leading unlabeled text becomes an action if it is a bare terminal
    /// call, otherwise a thought.
    pub fn parse(text: &str) -> Self {
        let mut marks: Vec<(usize, SegmentKind)> = Vec::new();
        for kind in SegmentKind::ALL {
            marks.extend(text.match_indices(kind.label()).map(|(i, _)| (i, kind)));
        }
        marks.sort_by_key(|(i, _)| *i);

        let mut pad = Scratchpad::new();
        let head_end = marks.first().map_or(text.len(), |(i, _)| *i);
        let head = text[..head_end].trim();
        if !head.is_empty() {
            let kind = if head.starts_with(TERMINAL) {
                SegmentKind::Action
            } else {
                SegmentKind::Thought
            };
            pad.push(kind, head);
        }
        for (n, (start, kind)) in marks.iter().enumerate() {
            let body_start = start + kind.label().len();
            let body_end = marks.get(n + 1).map_or(text.len(), |(i, _)| *i);
            pad.push(*kind, &text[body_start..body_end]);
        }
        pad
    }

    pub fn extend(&mut self, other: Scratchpad) {
        self.segments.extend(other.segments);
    }
}

/// Byte range of the last bracket-balanced `Finish[...]` and its contents.
fn find_terminal(text: &str) -> Option<(usize, String)> {
    let mut found = None;
    for (start, _) in text.match_indices(TERMINAL) {
        let body = start + TERMINAL.len();
        let mut depth = 1usize;
        for (i, c) in text[body..].char_indices() {
            match c {
                '[' => depth += 1,
                ']' => {
                    depth -= 1;
                    if depth == 0 {
                        found = Some((start, text[body..body + i].to_string()));
                        break;
                    }
                }
                _ => {}
            }
        }
    }
    found
}

/// Contents of the last bracket-balanced `Finish[...]`, verbatim.
pub fn extract_answer(text: &str) -> Option<String> {
    find_terminal(text).map(|(_, answer)| answer)
}

/// Which reflection prompt the multi-turn rollout uses between turns.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ReflectionMode {
    /// The pool-free reflection prompt.
    #[default]
    Plain,
    /// A single reflect-and-correct completion.
    OneStage,
    /// A fixed instruction from the pool, by id.
    Instruction(String),
}

impl FromStr for ReflectionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            PLAIN_INSTRUCTION_ID => Ok(Self::Plain),
            ONE_STAGE_INSTRUCTION_ID => Ok(Self::OneStage),
            id if id.split('+').count() == 3 => Ok(Self::Instruction(id.to_string())),
            other => Err(format!(
                "unknown reflection mode {other:?}; expected plain, one_stage or an instruction id like 1-1+2-1+3-1"
            )),
        }
    }
}

impl TryFrom<String> for ReflectionMode {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ReflectionMode> for String {
    fn from(mode: ReflectionMode) -> Self {
        mode.to_string()
    }
}

impl fmt::Display for ReflectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReflectionMode::Plain => f.write_str(PLAIN_INSTRUCTION_ID),
            ReflectionMode::OneStage => f.write_str(ONE_STAGE_INSTRUCTION_ID),
            ReflectionMode::Instruction(id) => f.write_str(id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RolloutError {
    #[error("no terminal action within {steps} steps")]
    NoAnswer { steps: u32, scratchpad: String },
    #[error("model returned an empty reflection")]
    EmptyReflection,
    #[error("could not split the one-stage completion into reflection and answer")]
    Parse,
    #[error("reflection requested for a turn judged correct")]
    ReflectOnCorrect,
    #[error("{0}")]
    Prompt(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl RolloutError {
    pub fn abort_reason(&self) -> AbortReason {
        match self {
            RolloutError::NoAnswer { .. } => AbortReason::NoAnswer,
            RolloutError::EmptyReflection => AbortReason::EmptyReflection,
            RolloutError::Parse => AbortReason::Parse,
            RolloutError::Gateway(e) => AbortReason::Endpoint {
                message: e.to_string(),
            },
            other => AbortReason::Prompt {
                message: other.to_string(),
            },
        }
    }
}

fn prompt_err(e: impl fmt::Display) -> RolloutError {
    RolloutError::Prompt(e.to_string())
}

/// Runs turns, reflections and corrections against one gateway.
#[derive(Debug, Clone)]
pub struct RolloutEngine {
    gateway: Gateway,
    prompts: Arc<PromptSet>,
    pool: Arc<InstructionPool>,
    policy: GenerationPolicy,
    reflection_mode: ReflectionMode,
}

impl RolloutEngine {
    pub fn new(
        gateway: Gateway,
        prompts: Arc<PromptSet>,
        pool: Arc<InstructionPool>,
        policy: GenerationPolicy,
    ) -> Self {
        Self {
            gateway,
            prompts,
            pool,
            policy,
            reflection_mode: ReflectionMode::Plain,
        }
    }

    pub fn with_reflection_mode(mut self, mode: ReflectionMode) -> Self {
        self.reflection_mode = mode;
        self
    }

    pub fn with_policy(mut self, policy: GenerationPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn policy(&self) -> &GenerationPolicy {
        &self.policy
    }

    pub fn pool(&self) -> &InstructionPool {
        &self.pool
    }

    fn request(&self, prompt: String, temperature: f32, seed: u64) -> CompletionRequest {
        CompletionRequest::user(prompt)
            .temperature(temperature)
            .seed(seed)
            .max_new_tokens(self.policy.max_new_tokens)
    }

    /// Thought/action loop for one turn. `prefix` is earlier progress shown
    /// to the model but not stored in the new turn.
    fn run_steps(
        &self,
        index: u32,
        prefix: &str,
        temperature: f32,
        seed: u64,
        render: impl Fn(&str) -> Result<String, RolloutError>,
    ) -> Result<Turn, RolloutError> {
        let mut pad = Scratchpad::new();
        for step in 0..self.policy.max_steps {
            let progress = match (prefix.is_empty(), pad.is_empty()) {
                (true, _) => pad.render(),
                (false, true) => prefix.to_string(),
                (false, false) => format!("{prefix}\n{}", pad.render()),
            };
            let req = self
                .request(
                    render(&progress)?,
                    temperature,
                    derive_seed(seed, &[&step.to_string()]),
                )
                .stop([STEP_STOP]);
            let completion = self.gateway.complete(&req)?;
            pad.extend(Scratchpad::parse(&completion.text));
            let scratchpad = pad.render();
            if let Some(answer) = extract_answer(&scratchpad) {
                return Ok(Turn {
                    index,
                    scratchpad,
                    extracted_answer: Some(answer),
                    feedback: Feedback::pending(),
                });
            }
            pad.push(SegmentKind::Observation, OBSERVATION_ACK);
        }
        Err(RolloutError::NoAnswer {
            steps: self.policy.max_steps,
            scratchpad: pad.render(),
        })
    }

    fn first_turn_seed(&self, task: &TaskItem) -> u64 {
        derive_seed(self.policy.seed, &[&task.id, "turn", "1"])
    }

    pub fn run_first_turn(&self, task: &TaskItem) -> Result<Turn, RolloutError> {
        let examples = join_examples(&task.fewshot);
        self.run_steps(
            1,
            "",
            self.policy.eval_temperature,
            self.first_turn_seed(task),
            |progress| {
                self.prompts
                    .react
                    .render(&[
                        ("Examples", &examples),
                        ("Question", &task.question),
                        ("Scratchpad", progress),
                    ])
                    .map_err(prompt_err)
            },
        )
    }

    fn reflect(
        &self,
        turn: &Turn,
        instruction_id: &str,
        prompt: String,
        j: u32,
        temperature: f32,
        seed: u64,
    ) -> Result<ReflectionRecord, RolloutError> {
        let completion = self
            .gateway
            .complete(&self.request(prompt, temperature, seed))?;
        let text = completion.text.trim();
        if text.is_empty() {
            return Err(RolloutError::EmptyReflection);
        }
        debug_assert!(!turn.feedback.is_correct());
        Ok(ReflectionRecord {
            instruction_id: instruction_id.to_string(),
            text: text.to_string(),
            sampling: SamplingInfo {
                temperature,
                seed,
                sample_index: j,
            },
            source: ReflectionSource::SelfModel,
        })
    }

    fn pool_reflection(
        &self,
        task: &TaskItem,
        turn: &Turn,
        spec: &InstructionSpec,
        j: u32,
        temperature: f32,
        seed: u64,
    ) -> Result<ReflectionRecord, RolloutError> {
        if turn.feedback.is_correct() {
            return Err(RolloutError::ReflectOnCorrect);
        }
        let prompt = self
            .pool
            .render_reflection_prompt(spec, &task.question, &turn.scratchpad)
            .map_err(prompt_err)?;
        self.reflect(turn, &spec.id, prompt, j, temperature, seed)
    }

    fn plain_reflection(
        &self,
        task: &TaskItem,
        turn: &Turn,
        j: u32,
        temperature: f32,
        seed: u64,
    ) -> Result<ReflectionRecord, RolloutError> {
        if turn.feedback.is_correct() {
            return Err(RolloutError::ReflectOnCorrect);
        }
        let prompt = self
            .prompts
            .reflexion
            .render(&[
                ("Question", &task.question),
                ("Scratchpad", &turn.scratchpad),
            ])
            .map_err(prompt_err)?;
        self.reflect(turn, PLAIN_INSTRUCTION_ID, prompt, j, temperature, seed)
    }

    /// Samples reflection `j` for `turn` with a pool instruction at the
    /// sampling temperature.
    pub fn generate_reflection(
        &self,
        task: &TaskItem,
        turn: &Turn,
        spec: &InstructionSpec,
        j: u32,
    ) -> Result<ReflectionRecord, RolloutError> {
        let seed = derive_seed(
            self.policy.seed,
            &[
                &task.id,
                "reflect",
                &turn.index.to_string(),
                &spec.id,
                &j.to_string(),
            ],
        );
        self.pool_reflection(task, turn, spec, j, self.policy.sample_temperature, seed)
    }

    /// Like [`generate_reflection`](Self::generate_reflection) with the
    /// pool-free reflection prompt.
    pub fn generate_plain_reflection(
        &self,
        task: &TaskItem,
        turn: &Turn,
        j: u32,
    ) -> Result<ReflectionRecord, RolloutError> {
        let seed = derive_seed(
            self.policy.seed,
            &[
                &task.id,
                "reflect",
                &turn.index.to_string(),
                PLAIN_INSTRUCTION_ID,
                &j.to_string(),
            ],
        );
        self.plain_reflection(task, turn, j, self.policy.sample_temperature, seed)
    }

    /// New turn conditioned on `reflection`. Earlier progress from the
    /// previous turn is shown in the prompt; the new turn stores only what
    /// the model adds. Sampling follows the reflection's temperature.
    pub fn run_correction_turn(
        &self,
        task: &TaskItem,
        history: &[Turn],
        reflection: &ReflectionRecord,
    ) -> Result<Turn, RolloutError> {
        let prev = history
            .last()
            .ok_or_else(|| RolloutError::Prompt("correction needs a previous turn".into()))?;
        if prev.feedback.is_correct() {
            return Err(RolloutError::ReflectOnCorrect);
        }
        let examples = join_examples(&task.fewshot);
        self.run_steps(
            prev.index + 1,
            &prev.scratchpad,
            reflection.sampling.temperature,
            derive_seed(reflection.sampling.seed, &["correct"]),
            |progress| {
                self.prompts
                    .correct
                    .render(&[
                        ("Examples", &examples),
                        ("Question", &task.question),
                        ("Reflections", &reflection.text),
                        ("Scratchpad", progress),
                    ])
                    .map_err(prompt_err)
            },
        )
    }

    fn one_stage(
        &self,
        task: &TaskItem,
        prev: &Turn,
        j: u32,
        temperature: f32,
        seed: u64,
    ) -> Result<(ReflectionRecord, Turn), RolloutError> {
        if prev.feedback.is_correct() {
            return Err(RolloutError::ReflectOnCorrect);
        }
        let prompt = self
            .prompts
            .one_stage
            .render(&[
                ("Question", &task.question),
                ("Scratchpad", &prev.scratchpad),
            ])
            .map_err(prompt_err)?;
        let completion = self
            .gateway
            .complete(&self.request(prompt, temperature, seed))?;
        let (reflection, rest) = split_one_stage(&completion.text).ok_or(RolloutError::Parse)?;
        let scratchpad = Scratchpad::parse(rest).render();
        let answer = extract_answer(&scratchpad).ok_or(RolloutError::Parse)?;
        let record = ReflectionRecord {
            instruction_id: ONE_STAGE_INSTRUCTION_ID.to_string(),
            text: reflection.to_string(),
            sampling: SamplingInfo {
                temperature,
                seed,
                sample_index: j,
            },
            source: ReflectionSource::SelfModel,
        };
        let turn = Turn {
            index: prev.index + 1,
            scratchpad,
            extracted_answer: Some(answer),
            feedback: Feedback::pending(),
        };
        Ok((record, turn))
    }

    /// Reflection and corrected answer from a single completion.
    pub fn run_one_stage_reflect_correct(
        &self,
        task: &TaskItem,
        prev: &Turn,
        j: u32,
    ) -> Result<(ReflectionRecord, Turn), RolloutError> {
        let seed = derive_seed(
            self.policy.seed,
            &[
                &task.id,
                "reflect",
                &prev.index.to_string(),
                ONE_STAGE_INSTRUCTION_ID,
                &j.to_string(),
            ],
        );
        self.one_stage(task, prev, j, self.policy.sample_temperature, seed)
    }

    /// Reflect-then-correct step used between rollout turns, at the
    /// evaluation temperature.
    fn next_turn(
        &self,
        task: &TaskItem,
        history: &[Turn],
    ) -> Result<(ReflectionRecord, Turn), (Option<ReflectionRecord>, RolloutError)> {
        let prev = history.last().expect("rollout history is non-empty");
        let t = self.policy.eval_temperature;
        let seed = derive_seed(
            self.policy.seed,
            &[&task.id, "rollout", &prev.index.to_string()],
        );
        let reflection = match &self.reflection_mode {
            ReflectionMode::OneStage => {
                return self
                    .one_stage(task, prev, 1, t, seed)
                    .map_err(|e| (None, e))
            }
            ReflectionMode::Plain => self.plain_reflection(task, prev, 1, t, seed),
            ReflectionMode::Instruction(id) => self
                .pool
                .get(id)
                .map_err(prompt_err)
                .and_then(|spec| self.pool_reflection(task, prev, &spec, 1, t, seed)),
        }
        .map_err(|e| (None, e))?;
        match self.run_correction_turn(task, history, &reflection) {
            Ok(turn) => Ok((reflection, turn)),
            Err(e) => Err((Some(reflection), e)),
        }
    }

    /// Verify, then reflect and correct until a turn is judged correct or
    /// `max_turns` turns exist. Failures end the trace as aborted with the
    /// turns completed so far.
    pub fn run_rollout(&self, task: &TaskItem, verifier: &dyn Verifier) -> RolloutTrace {
        let mut trace = RolloutTrace {
            task_id: task.id.clone(),
            turns: Vec::new(),
            reflections: Vec::new(),
            status: TraceStatus::Unsolved,
        };
        let abort = |mut trace: RolloutTrace, err: RolloutError| {
            trace.status = TraceStatus::Aborted(err.abort_reason());
            trace
        };
        let mut turn = match self.run_first_turn(task) {
            Ok(t) => t,
            Err(e) => return abort(trace, e),
        };
        loop {
            let answer = turn.extracted_answer.clone().unwrap_or_default();
            turn.feedback = match verifier.verify(task, &answer) {
                Ok(fb) => fb,
                Err(e) => return abort(trace, e.into()),
            };
            let index = turn.index;
            let solved = turn.feedback.is_correct();
            trace.turns.push(turn);
            if solved {
                trace.status = TraceStatus::SolvedTurn(index);
                return trace;
            }
            if trace.turns.len() as u32 >= self.policy.max_turns {
                trace.status = TraceStatus::Unsolved;
                return trace;
            }
            match self.next_turn(task, &trace.turns) {
                Ok((reflection, next)) => {
                    trace.reflections.push(reflection);
                    turn = next;
                }
                Err((reflection, e)) => {
                    trace.reflections.extend(reflection);
                    return abort(trace, e);
                }
            }
        }
    }

    /// Draws `k` reflection+correction samples for each instruction in
    /// `specs` and scores each correction with the oracle. Every slot ends
    /// up either as a candidate or as an abort record.
    pub fn sample_candidates(
        &self,
        task: &TaskItem,
        turn1: &Turn,
        specs: &[InstructionSpec],
    ) -> Result<(Vec<CandidateSample>, Vec<AbortRecord>), RolloutError> {
        if !turn1.feedback.is_incorrect() {
            return Err(RolloutError::ReflectOnCorrect);
        }
        let first_answer = turn1
            .extracted_answer
            .clone()
            .ok_or_else(|| RolloutError::Prompt("first turn has no answer".into()))?;
        let mut candidates = Vec::new();
        let mut aborts = Vec::new();
        for spec in specs {
            for j in 1..=self.policy.k {
                let abort = |stage, err: RolloutError| AbortRecord {
                    task_id: task.id.clone(),
                    instruction_id: Some(spec.id.clone()),
                    sample_index: Some(j),
                    stage,
                    reason: err.abort_reason(),
                };
                let reflection = match self.generate_reflection(task, turn1, spec, j) {
                    Ok(r) => r,
                    Err(e) => {
                        aborts.push(abort(AbortStage::Reflection, e));
                        continue;
                    }
                };
                let corrected = match self.run_correction_turn(
                    task,
                    std::slice::from_ref(turn1),
                    &reflection,
                ) {
                    Ok(t) => t,
                    Err(e) => {
                        aborts.push(abort(AbortStage::Correction, e));
                        continue;
                    }
                };
                let corrected_answer = corrected.extracted_answer.clone().unwrap_or_default();
                let outcome =
                    if verify_oracle(&corrected_answer, &task.gold_answer, task.answer_kind)
                        .is_correct()
                    {
                        Outcome::Correct
                    } else {
                        Outcome::Incorrect
                    };
                candidates.push(CandidateSample {
                    task: task.clone(),
                    first_answer: first_answer.clone(),
                    first_answer_normalized: normalize(&first_answer, task.answer_kind),
                    first_feedback: turn1.feedback.clone(),
                    first_scratchpad: turn1.scratchpad.clone(),
                    reflection,
                    corrected_answer_normalized: normalize(&corrected_answer, task.answer_kind),
                    corrected_answer,
                    corrected_scratchpad: corrected.scratchpad,
                    outcome,
                });
            }
        }
        Ok((candidates, aborts))
    }
}

/// Splits a one-stage completion into (reflection, reasoning). The
/// reasoning starts at the first `Thought:`/`Action:` label, or at the
/// terminal call when there is no label. `None` without a terminal call.
pub fn split_one_stage(text: &str) -> Option<(&str, &str)> {
    let (terminal, _) = find_terminal(text)?;
    let label = ["Thought:", "Action:"]
        .iter()
        .filter_map(|l| text.find(l))
        .min()
        .filter(|p| *p <= terminal);
    let split = label.unwrap_or(terminal);
    Some((text[..split].trim(), &text[split..]))
}
