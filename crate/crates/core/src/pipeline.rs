//! End-to-end stages: candidate generation over a task set, curation into
//! the three dataset families, and export of every training setting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curation::{build_d_plus, build_d_pm, build_d_pref, Judge, JudgeSummary, PairingPolicy};
use crate::export::{
    write_by_dataset, DpoCompletion, DpoRecord, ExportError, Exporter, Setting, SftRecord,
};
use crate::model::{
    validate_tasks, AbortReason, AbortRecord, AbortStage, CandidateSample, PolicyError,
    PreferencePair, RolloutTrace, SelectionMode, TaskError, TaskItem, TraceStatus, Verdict,
};
use crate::pool::{InstructionSpec, PoolError};
use crate::rollout::RolloutEngine;
use crate::util::{derive_seed, par_map, read_jsonl, write_jsonl, JsonlError};
use crate::verify::Verifier;

pub const TRACES_FILE: &str = "traces.jsonl";
pub const CANDIDATES_FILE: &str = "candidates.jsonl";
pub const ABORTS_FILE: &str = "aborts.jsonl";
pub const D_PLUS_FILE: &str = "d_plus.jsonl";
pub const D_PM_FILE: &str = "d_pm.jsonl";
pub const D_PREF_FILE: &str = "d_pref.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error(transparent)]
    Export(#[from] ExportError),
}

/// Sorts tasks by id and keeps the first `caps[dataset]` of each capped
/// dataset.
pub fn apply_caps(tasks: &[TaskItem], caps: &BTreeMap<String, usize>) -> Vec<TaskItem> {
    let mut sorted: Vec<&TaskItem> = tasks.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut taken: BTreeMap<&str, usize> = BTreeMap::new();
    sorted
        .into_iter()
        .filter(|t| {
            let n = taken.entry(&t.source_dataset).or_default();
            *n += 1;
            caps.get(&t.source_dataset).is_none_or(|cap| *n <= *cap)
        })
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateCounts {
    /// Tasks after caps.
    pub tasks: usize,
    pub first_turn_correct: usize,
    pub first_turn_incorrect: usize,
    pub first_turn_unverified: usize,
    pub first_turn_aborted: usize,
    /// Reflection slots attempted: incorrect first turns × m × k.
    pub attempted: usize,
    pub candidates: usize,
    pub candidate_aborts: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerateOutput {
    /// First-turn traces, one per task, sorted by task id.
    pub traces: Vec<RolloutTrace>,
    pub candidates: Vec<CandidateSample>,
    pub aborts: Vec<AbortRecord>,
    pub counts: GenerateCounts,
}

impl GenerateOutput {
    pub fn write(&self, dir: &Path) -> Result<(), JsonlError> {
        write_jsonl(&dir.join(TRACES_FILE), &self.traces)?;
        write_jsonl(&dir.join(CANDIDATES_FILE), &self.candidates)?;
        write_jsonl(&dir.join(ABORTS_FILE), &self.aborts)
    }
}

struct TaskResult {
    trace: RolloutTrace,
    candidates: Vec<CandidateSample>,
    aborts: Vec<AbortRecord>,
}

fn first_turn_abort(task: &TaskItem, reason: AbortReason) -> AbortRecord {
    AbortRecord {
        task_id: task.id.clone(),
        instruction_id: None,
        sample_index: None,
        stage: AbortStage::FirstTurn,
        reason,
    }
}

fn process_task(
    engine: &RolloutEngine,
    task: &TaskItem,
    specs: &[InstructionSpec],
    verifier: &dyn Verifier,
) -> TaskResult {
    let mut trace = RolloutTrace {
        task_id: task.id.clone(),
        turns: Vec::new(),
        reflections: Vec::new(),
        status: TraceStatus::Unsolved,
    };
    let aborted = |mut trace: RolloutTrace, reason: AbortReason| {
        trace.status = TraceStatus::Aborted(reason.clone());
        TaskResult {
            trace,
            candidates: Vec::new(),
            aborts: vec![first_turn_abort(task, reason)],
        }
    };
    let mut turn = match engine.run_first_turn(task) {
        Ok(t) => t,
        Err(e) => return aborted(trace, e.abort_reason()),
    };
    let answer = turn.extracted_answer.clone().unwrap_or_default();
    turn.feedback = match verifier.verify(task, &answer) {
        Ok(fb) => fb,
        Err(e) => {
            return aborted(
                trace,
                AbortReason::Endpoint {
                    message: e.to_string(),
                },
            );
        }
    };
    let verdict = turn.feedback.value;
    trace.turns.push(turn);
    match verdict {
        Verdict::Correct => {
            trace.status = TraceStatus::SolvedTurn(1);
            return TaskResult {
                trace,
                candidates: Vec::new(),
                aborts: Vec::new(),
            };
        }
        Verdict::Unverified => {
            tracing::warn!(task = %task.id, "first turn could not be verified; no reflections sampled");
            return TaskResult {
                trace,
                candidates: Vec::new(),
                aborts: Vec::new(),
            };
        }
        Verdict::Incorrect => {}
    }
    match engine.sample_candidates(task, &trace.turns[0], specs) {
        Ok((candidates, aborts)) => TaskResult {
            trace,
            candidates,
            aborts,
        },
        Err(e) => {
            let reason = e.abort_reason();
            TaskResult {
                trace,
                candidates: Vec::new(),
                aborts: vec![AbortRecord {
                    stage: AbortStage::Reflection,
                    ..first_turn_abort(task, reason)
                }],
            }
        }
    }
}

/// Runs the first turn on every task, then samples `m × k` reflection and
/// correction candidates for each task answered incorrectly. Instructions
/// are drawn once per dataset or once per question, per the policy.
pub fn generate(
    engine: &RolloutEngine,
    tasks: &[TaskItem],
    verifier: &dyn Verifier,
    max_in_flight: usize,
) -> Result<GenerateOutput, PipelineError> {
    let policy = engine.policy().clone();
    policy.validate()?;
    validate_tasks(tasks)?;
    let tasks = apply_caps(tasks, &policy.caps);

    let mut per_dataset: BTreeMap<&str, Vec<InstructionSpec>> = BTreeMap::new();
    let mut specs: Vec<Vec<InstructionSpec>> = Vec::with_capacity(tasks.len());
    for task in &tasks {
        let chosen = match policy.selection {
            SelectionMode::PerDataset => {
                if !per_dataset.contains_key(task.source_dataset.as_str()) {
                    let seed = derive_seed(policy.seed, &["select", &task.source_dataset]);
                    let picked = engine.pool().select(policy.m, seed)?;
                    let ids: Vec<&str> = picked.iter().map(|s| s.id.as_str()).collect();
                    tracing::info!(dataset = %task.source_dataset, instructions = ?ids, "instructions selected");
                    per_dataset.insert(&task.source_dataset, picked);
                }
                per_dataset[task.source_dataset.as_str()].clone()
            }
            SelectionMode::PerQuestion => {
                let seed = derive_seed(policy.seed, &["select", &task.source_dataset, &task.id]);
                engine.pool().select(policy.m, seed)?
            }
        };
        specs.push(chosen);
    }

    let indices: Vec<usize> = (0..tasks.len()).collect();
    let results = par_map(&indices, max_in_flight, |&i| {
        process_task(engine, &tasks[i], &specs[i], verifier)
    });

    let mut out = GenerateOutput::default();
    out.counts.tasks = tasks.len();
    for r in results {
        match &r.trace.status {
            TraceStatus::SolvedTurn(_) => out.counts.first_turn_correct += 1,
            TraceStatus::Aborted(_) if r.trace.turns.is_empty() => {
                out.counts.first_turn_aborted += 1
            }
            _ => match r.trace.turns.first().map(|t| t.feedback.value) {
                Some(Verdict::Incorrect) => {
                    out.counts.first_turn_incorrect += 1;
                    out.counts.attempted += (policy.m * policy.k) as usize;
                }
                Some(Verdict::Unverified) => out.counts.first_turn_unverified += 1,
                _ => out.counts.first_turn_aborted += 1,
            },
        }
        out.counts.candidates += r.candidates.len();
        out.counts.candidate_aborts += r
            .aborts
            .iter()
            .filter(|a| a.stage != AbortStage::FirstTurn)
            .count();
        out.traces.push(r.trace);
        out.candidates.extend(r.candidates);
        out.aborts.extend(r.aborts);
    }
    tracing::info!(?out.counts, "generation finished");
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Curated {
    pub d_plus: Vec<CandidateSample>,
    pub d_pm: Vec<PreferencePair>,
    pub d_pref: Vec<PreferencePair>,
    pub judge: JudgeSummary,
}

impl Curated {
    pub fn write(&self, dir: &Path) -> Result<(), JsonlError> {
        write_jsonl(&dir.join(D_PLUS_FILE), &self.d_plus)?;
        write_jsonl(&dir.join(D_PM_FILE), &self.d_pm)?;
        write_jsonl(&dir.join(D_PREF_FILE), &self.d_pref)
    }

    /// Reads the three dataset files back. The judge summary is not
    /// stored alongside them and comes back empty.
    pub fn read(dir: &Path) -> Result<Self, JsonlError> {
        Ok(Self {
            d_plus: read_jsonl(&dir.join(D_PLUS_FILE))?,
            d_pm: read_jsonl(&dir.join(D_PM_FILE))?,
            d_pref: read_jsonl(&dir.join(D_PREF_FILE))?,
            judge: JudgeSummary::default(),
        })
    }
}

/// Builds D⁺, D± and the judged preference set from a candidate pool.
pub fn curate(
    pool: &[CandidateSample],
    policy: &PairingPolicy,
    judge: &Judge,
    max_in_flight: usize,
) -> Curated {
    let d_plus = build_d_plus(pool);
    let d_pm = build_d_pm(pool, policy);
    let (d_pref, summary) = build_d_pref(&d_plus, policy, judge, max_in_flight);
    tracing::info!(
        pool = pool.len(),
        d_plus = d_plus.len(),
        d_pm = d_pm.len(),
        d_pref = d_pref.len(),
        "curation finished"
    );
    Curated {
        d_plus,
        d_pm,
        d_pref,
        judge: summary,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportSummary {
    /// Record count per setting.
    pub counts: BTreeMap<Setting, usize>,
    /// Written files, relative to the export root.
    pub files: Vec<PathBuf>,
}

/// Writes all five files (settings 1, 2.1, 2.2, 3 and 4) under `root`.
pub fn export_all(
    exporter: &Exporter,
    curated: &Curated,
    completion: DpoCompletion,
    root: &Path,
) -> Result<ExportSummary, PipelineError> {
    let mut summary = ExportSummary::default();
    let mut record = |setting: Setting, n: usize, paths: Vec<PathBuf>| {
        summary.counts.insert(setting, n);
        summary.files.extend(
            paths
                .into_iter()
                .map(|p| p.strip_prefix(root).map(Path::to_path_buf).unwrap_or(p)),
        );
    };
    fn sft_dataset(r: &SftRecord) -> &str {
        &r.meta.source_dataset
    }
    fn dpo_dataset(r: &DpoRecord) -> &str {
        &r.meta.source_dataset
    }

    let one = exporter.setting1(&curated.d_plus)?;
    record(
        Setting::OneStage,
        one.len(),
        write_by_dataset(root, Setting::OneStage, &one, sft_dataset)?,
    );
    let (reflect, correct) = exporter.setting2(&curated.d_plus)?;
    record(
        Setting::Reflection,
        reflect.len(),
        write_by_dataset(root, Setting::Reflection, &reflect, sft_dataset)?,
    );
    record(
        Setting::Correction,
        correct.len(),
        write_by_dataset(root, Setting::Correction, &correct, sft_dataset)?,
    );
    for (setting, pairs) in [
        (Setting::OutcomePairs, &curated.d_pm),
        (Setting::JudgedPairs, &curated.d_pref),
    ] {
        let recs = exporter.dpo(pairs, setting, completion)?;
        record(
            setting,
            recs.len(),
            write_by_dataset(root, setting, &recs, dpo_dataset)?,
        );
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, Script, ScriptRule, ScriptedBackend};
    use crate::model::{AnswerKind, GenerationPolicy, TaskCategory};
    use crate::pool::InstructionPool;
    use crate::prompts::PromptSet;
    use crate::verify::OracleVerifier;
    use std::sync::Arc;

    fn task(id: &str, dataset: &str, gold: &str) -> TaskItem {
        TaskItem {
            id: id.into(),
            source_dataset: dataset.into(),
            task_category: TaskCategory::LogicalReasoning,
            question: format!("Question {id}: pick {gold}"),
            gold_answer: gold.into(),
            answer_kind: AnswerKind::MultipleChoice,
            fewshot: vec!["Question: x\nThought: y\nAction: Finish[A]".into()],
        }
    }

    const NO_MARKERS: [&str; 0] = [];

    /// First turns answer B; corrections answer A.
    fn engine(policy: GenerationPolicy) -> RolloutEngine {
        let script = Script {
            rules: vec![
                ScriptRule::reply(["unsuccessful"], "The answer B ignores the premise. {seed}"),
                ScriptRule::reply(["previous reflection"], "Thought: fix\nAction: Finish[A]"),
            ],
            default: Some(ScriptRule::reply(
                NO_MARKERS,
                "Thought: guess\nAction: Finish[B]",
            )),
        };
        RolloutEngine::new(
            Gateway::new(ScriptedBackend::new(script).unwrap()),
            Arc::new(PromptSet::builtin()),
            Arc::new(InstructionPool::builtin()),
            policy,
        )
    }

    #[test]
    fn caps_keep_lowest_ids() {
        let tasks = vec![
            task("c", "logiqa", "A"),
            task("a", "logiqa", "A"),
            task("b", "math", "A"),
        ];
        let caps = BTreeMap::from([("logiqa".to_string(), 1)]);
        let ids: Vec<_> = apply_caps(&tasks, &caps)
            .into_iter()
            .map(|t| t.id)
            .collect();
        assert_eq!(ids, vec!["a", "b"]);
    }

    #[test]
    fn count_law() {
        let tasks = vec![
            task("t1", "logiqa", "A"),
            task("t2", "logiqa", "B"),
            task("t3", "logiqa", "A"),
        ];
        let policy = GenerationPolicy {
            m: 3,
            k: 2,
            ..Default::default()
        };
        let out = generate(&engine(policy), &tasks, &OracleVerifier, 4).unwrap();
        assert_eq!(out.counts.first_turn_correct, 1);
        assert_eq!(out.counts.first_turn_incorrect, 2);
        assert_eq!(
            out.candidates.len() + out.counts.candidate_aborts,
            2 * 3 * 2
        );
        assert_eq!(out.traces.len(), 3);
        assert!(out.candidates.iter().all(|c| c.outcome.is_correct()));
    }

    #[test]
    fn per_dataset_selection_is_shared() {
        let tasks = vec![
            task("t1", "logiqa", "A"),
            task("t3", "logiqa", "A"),
            task("t2", "math", "A"),
        ];
        let policy = GenerationPolicy {
            m: 2,
            k: 1,
            ..Default::default()
        };
        let out = generate(&engine(policy.clone()), &tasks, &OracleVerifier, 2).unwrap();
        let ids = |id: &str| -> Vec<String> {
            out.candidates
                .iter()
                .filter(|c| c.task.id == id)
                .map(|c| c.reflection.instruction_id.clone())
                .collect()
        };
        assert_eq!(ids("t1"), ids("t3"));

        let per_q = GenerationPolicy {
            selection: SelectionMode::PerQuestion,
            ..policy
        };
        let out2 = generate(&engine(per_q), &tasks, &OracleVerifier, 2).unwrap();
        assert_eq!(out2.candidates.len(), 6);
    }

    #[test]
    fn unknown_dataset_is_rejected() {
        let tasks = vec![task("t1", "imagenet", "A")];
        let err = generate(
            &engine(GenerationPolicy::default()),
            &tasks,
            &OracleVerifier,
            1,
        )
        .unwrap_err();
        assert!(err.to_string().contains("unknown dataset"));
    }
}
