//! Curation of the raw candidate pool into three datasets: correct
//! reflections (D⁺), correct-vs-incorrect pairs (D±) and judge-ranked pairs
//! of correct reflections (D^pref).

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gateway::{CompletionRequest, Gateway, GatewayError};
use crate::model::{CandidateSample, JudgeChoice, JudgeVotes, PairKind, PreferencePair};
use crate::prompts::Template;
use crate::util::{derive_seed, par_map};

pub const DEFAULT_PAIR_CAP: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    /// Every eligible pair.
    CrossProduct,
    /// One seeded pick per `(q, a, f)` group.
    OnePerQuestion,
    /// At most `C` seeded picks per group.
    CappedCross(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingPolicy {
    pub mode: PairingMode,
    pub seed: u64,
    /// Judge each pair twice with positions swapped and keep only
    /// agreeing verdicts.
    pub debias: bool,
}

impl Default for PairingPolicy {
    fn default() -> Self {
        Self {
            mode: PairingMode::CappedCross(DEFAULT_PAIR_CAP),
            seed: 0,
            debias: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CurationError {
    #[error("pair cap must be at least 1")]
    ZeroCap,
}

impl PairingPolicy {
    pub fn validate(&self) -> Result<(), CurationError> {
        if self.mode == PairingMode::CappedCross(0) {
            return Err(CurationError::ZeroCap);
        }
        Ok(())
    }

    /// Picks which of `n` enumerated pairs to keep for one group. The
    /// returned indices are ascending.
    fn pick(&self, n: usize, group: &(String, String)) -> Vec<usize> {
        let keep = match self.mode {
            PairingMode::CrossProduct => n,
            PairingMode::OnePerQuestion => n.min(1),
            PairingMode::CappedCross(cap) => n.min(cap),
        };
        if keep == n {
            return (0..n).collect();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[&group.0, &group.1]));
        let mut picked = sample(&mut rng, n, keep).into_vec();
        picked.sort_unstable();
        picked
    }
}

fn eligible(c: &CandidateSample) -> bool {
    if c.first_feedback.is_incorrect() {
        true
    } else {
        tracing::warn!(
            task_id = %c.task_id(),
            "skipping candidate whose first answer was not judged incorrect"
        );
        false
    }
}

/// Candidates grouped by `(task_id, first_answer)`, each group sorted by
/// `(instruction_id, sample_index)`.
fn groups(pool: &[CandidateSample]) -> BTreeMap<(String, String), Vec<&CandidateSample>> {
    let mut out: BTreeMap<_, Vec<&CandidateSample>> = BTreeMap::new();
    for c in pool.iter().filter(|c| eligible(c)) {
        out.entry(c.group_key()).or_default().push(c);
    }
    for members in out.values_mut() {
        members.sort_by_key(|c| c.key());
    }
    out
}

/// Candidates whose corrected answer is right, ordered by
/// `(task_id, instruction_id, sample_index)`.
pub fn build_d_plus(pool: &[CandidateSample]) -> Vec<CandidateSample> {
    let mut out: Vec<CandidateSample> = pool
        .iter()
        .filter(|c| c.outcome.is_correct() && eligible(c))
        .cloned()
        .collect();
    out.sort_by_key(|c| c.key());
    if out.is_empty() && !pool.is_empty() {
        tracing::warn!(pool = pool.len(), "no correct candidates; D+ is empty");
    }
    out
}

fn pair(chosen: &CandidateSample, rejected: &CandidateSample, kind: PairKind) -> PreferencePair {
    PreferencePair {
        context: chosen.context(),
        chosen: chosen.to_member(),
        rejected: rejected.to_member(),
        kind,
        judge_votes: None,
    }
}

/// Correct-vs-incorrect pairs within each `(q, a, f)` group. Pairs whose
/// reflection texts are identical are skipped.
pub fn build_d_pm(pool: &[CandidateSample], policy: &PairingPolicy) -> Vec<PreferencePair> {
    let mut out = Vec::new();
    for (key, members) in groups(pool) {
        let (pos, neg): (Vec<_>, Vec<_>) =
            members.into_iter().partition(|c| c.outcome.is_correct());
        let candidates: Vec<(&CandidateSample, &CandidateSample)> = pos
            .iter()
            .flat_map(|p| neg.iter().map(move |n| (*p, *n)))
            .filter(|(p, n)| p.reflection.text != n.reflection.text)
            .collect();
        for i in policy.pick(candidates.len(), &key) {
            let (p, n) = candidates[i];
            out.push(pair(p, n, PairKind::OutcomePm));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieReason {
    /// The two passes picked different reflections.
    Disagree,
    Unparsable,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    A,
    B,
    Tie(TieReason),
}

/// Reads a judge reply: exactly one of "Student A" / "Student B" must
/// appear.
pub fn parse_judge_reply(reply: &str) -> Option<JudgeChoice> {
    match (reply.contains("Student A"), reply.contains("Student B")) {
        (true, false) => Some(JudgeChoice::A),
        (false, true) => Some(JudgeChoice::B),
        _ => None,
    }
}

fn flip(choice: JudgeChoice) -> JudgeChoice {
    match choice {
        JudgeChoice::A => JudgeChoice::B,
        JudgeChoice::B => JudgeChoice::A,
    }
}

/// Pairwise reflection judge.
#[derive(Debug, Clone)]
pub struct Judge {
    gateway: Gateway,
    template: Template,
    debias: bool,
}

/// Inputs shown to the judge for one pair.
#[derive(Debug, Clone, Copy)]
pub struct JudgeInput<'a> {
    pub question: &'a str,
    pub gold: &'a str,
    pub scratchpad: &'a str,
    pub reflection_a: &'a str,
    pub reflection_b: &'a str,
}

impl Judge {
    pub fn new(gateway: Gateway, template: Template, debias: bool) -> Self {
        Self {
            gateway,
            template,
            debias,
        }
    }

    fn ask(
        &self,
        input: &JudgeInput<'_>,
        first: &str,
        second: &str,
    ) -> Result<Option<JudgeChoice>, GatewayError> {
        let prompt = self
            .template
            .render(&[
                ("Question", input.question),
                ("Answer", input.gold),
                ("Scratchpad", input.scratchpad),
                ("Reflections 1", first),
                ("Reflections 2", second),
            ])
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        let reply = self.gateway.complete(
            &CompletionRequest::user(prompt)
                .temperature(0.0)
                .max_new_tokens(16),
        )?;
        Ok(parse_judge_reply(&reply.text))
    }

    /// Judges A against B. With debiasing, a second pass shows B first and
    /// the two passes must agree; otherwise the result is a tie.
    pub fn judge(&self, input: &JudgeInput<'_>) -> (Preference, JudgeVotes) {
        let first = match self.ask(input, input.reflection_a, input.reflection_b) {
            Ok(c) => c,
            Err(e) => {
                tracing::warn!(error = %e, "judge call failed");
                let votes = JudgeVotes {
                    first: None,
                    swapped: None,
                };
                return (Preference::Tie(TieReason::Error), votes);
            }
        };
        let as_pref = |c: JudgeChoice| match c {
            JudgeChoice::A => Preference::A,
            JudgeChoice::B => Preference::B,
        };
        if !self.debias {
            let votes = JudgeVotes {
                first,
                swapped: None,
            };
            return match first {
                Some(c) => (as_pref(c), votes),
                None => (Preference::Tie(TieReason::Unparsable), votes),
            };
        }
        let swapped = match self.ask(input, input.reflection_b, input.reflection_a) {
            Ok(c) => c,
            Err(e) => {
                tracing::warn!(error = %e, "judge call failed");
                let votes = JudgeVotes {
                    first,
                    swapped: None,
                };
                return (Preference::Tie(TieReason::Error), votes);
            }
        };
        let votes = JudgeVotes {
            first,
            swapped: Some(swapped),
        };
        let verdict = match (first, swapped.map(flip)) {
            (Some(a), Some(b)) if a == b => as_pref(a),
            (Some(_), Some(_)) => Preference::Tie(TieReason::Disagree),
            _ => Preference::Tie(TieReason::Unparsable),
        };
        (verdict, votes)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeSummary {
    /// Candidate pairs sent to the judge.
    pub adjudicated: usize,
    pub ties: BTreeMap<String, usize>,
}

/// Judge-ranked pairs of correct reflections. Within each group with at
/// least two members, unordered pairs are enumerated in stable order (the
/// earlier member is A), subsampled under `policy`, judged, and ties are
/// dropped.
pub fn build_d_pref(
    d_plus: &[CandidateSample],
    policy: &PairingPolicy,
    judge: &Judge,
    max_in_flight: usize,
) -> (Vec<PreferencePair>, JudgeSummary) {
    let mut candidates: Vec<(&CandidateSample, &CandidateSample)> = Vec::new();
    for (key, members) in groups(d_plus) {
        let members: Vec<_> = members
            .into_iter()
            .filter(|c| c.outcome.is_correct())
            .collect();
        let mut group_pairs = Vec::new();
        for i in 0..members.len() {
            for j in i + 1..members.len() {
                if members[i].reflection.text != members[j].reflection.text {
                    group_pairs.push((members[i], members[j]));
                }
            }
        }
        candidates.extend(
            policy
                .pick(group_pairs.len(), &key)
                .into_iter()
                .map(|i| group_pairs[i]),
        );
    }

    let verdicts = par_map(&candidates, max_in_flight, |(a, b)| {
        judge.judge(&JudgeInput {
            question: &a.task.question,
            gold: &a.task.gold_answer,
            scratchpad: &a.first_scratchpad,
            reflection_a: &a.reflection.text,
            reflection_b: &b.reflection.text,
        })
    });

    let mut summary = JudgeSummary {
        adjudicated: candidates.len(),
        ..JudgeSummary::default()
    };
    let mut out = Vec::new();
    for ((a, b), (verdict, votes)) in candidates.iter().zip(verdicts) {
        let (chosen, rejected) = match verdict {
            Preference::A => (a, b),
            Preference::B => (b, a),
            Preference::Tie(reason) => {
                let name = serde_json::to_value(reason)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default();
                *summary.ties.entry(name).or_default() += 1;
                continue;
            }
        };
        let mut p = pair(chosen, rejected, PairKind::JudgedPref);
        p.judge_votes = Some(votes);
        out.push(p);
    }
    (out, summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{FnBackend, Script, ScriptRule, ScriptedBackend};
    use crate::model::{
        AnswerKind, Feedback, Outcome, ReflectionRecord, ReflectionSource, SamplingInfo,
        TaskCategory, TaskItem, Verdict, VerifierKind,
    };
    use crate::prompts::PromptSet;

    fn cand(task: &str, instr: &str, j: u32, outcome: Outcome, text: &str) -> CandidateSample {
        CandidateSample {
            task: TaskItem {
                id: task.into(),
                source_dataset: "logiqa".into(),
                task_category: TaskCategory::LogicalReasoning,
                question: format!("question {task}"),
                gold_answer: "C".into(),
                answer_kind: AnswerKind::MultipleChoice,
                fewshot: vec![],
            },
            first_answer: "B".into(),
            first_answer_normalized: "b".into(),
            first_feedback: Feedback::new(Verdict::Incorrect, VerifierKind::Oracle),
            first_scratchpad: "Action: Finish[B]".into(),
            reflection: ReflectionRecord {
                instruction_id: instr.into(),
                text: text.into(),
                sampling: SamplingInfo {
                    temperature: 0.7,
                    seed: j as u64,
                    sample_index: j,
                },
                source: ReflectionSource::SelfModel,
            },
            corrected_answer: if outcome.is_correct() { "C" } else { "A" }.into(),
            corrected_answer_normalized: if outcome.is_correct() { "c" } else { "a" }.into(),
            corrected_scratchpad: "Action: Finish[C]".into(),
            outcome,
        }
    }

    fn group(correct: usize, incorrect: usize) -> Vec<CandidateSample> {
        let mut out = Vec::new();
        for i in 0..correct {
            out.push(cand(
                "t1",
                "1-1+2-1+3-1",
                i as u32 + 1,
                Outcome::Correct,
                &format!("good {i}"),
            ));
        }
        for i in 0..incorrect {
            out.push(cand(
                "t1",
                "1-2+2-1+3-1",
                i as u32 + 1,
                Outcome::Incorrect,
                &format!("bad {i}"),
            ));
        }
        out
    }

    fn policy(mode: PairingMode) -> PairingPolicy {
        PairingPolicy {
            mode,
            seed: 5,
            debias: true,
        }
    }

    #[test]
    fn d_plus_filters_and_orders() {
        let pool = vec![
            cand("t2", "a", 1, Outcome::Correct, "x"),
            cand("t1", "b", 2, Outcome::Incorrect, "y"),
            cand("t1", "b", 1, Outcome::Correct, "z"),
            cand("t1", "a", 1, Outcome::Incorrect, "w"),
        ];
        let d = build_d_plus(&pool);
        let keys: Vec<_> = d
            .iter()
            .map(|c| (c.task_id().to_string(), c.reflection.text.clone()))
            .collect();
        assert_eq!(
            keys,
            vec![("t1".into(), "z".into()), ("t2".into(), "x".into())]
        );
        assert!(build_d_plus(&[]).is_empty());
        assert!(build_d_plus(&group(0, 10)).is_empty());
    }

    #[test]
    fn d_plus_skips_unverified_first_feedback() {
        let mut c = cand("t1", "a", 1, Outcome::Correct, "x");
        c.first_feedback = Feedback::new(Verdict::Unverified, VerifierKind::SelfJudgment);
        assert!(build_d_plus(&[c]).is_empty());
    }

    #[test]
    fn d_pm_cross_product() {
        let pairs = build_d_pm(&group(3, 2), &policy(PairingMode::CrossProduct));
        assert_eq!(pairs.len(), 6);
        for p in &pairs {
            assert_eq!(p.kind, PairKind::OutcomePm);
            assert_eq!(p.chosen.outcome, Outcome::Correct);
            assert_eq!(p.rejected.outcome, Outcome::Incorrect);
        }
    }

    #[test]
    fn d_pm_capped_is_deterministic() {
        let a = build_d_pm(&group(3, 2), &policy(PairingMode::CappedCross(4)));
        let b = build_d_pm(&group(3, 2), &policy(PairingMode::CappedCross(4)));
        assert_eq!(a.len(), 4);
        assert_eq!(a, b);
        let one = build_d_pm(&group(3, 2), &policy(PairingMode::OnePerQuestion));
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn d_pm_needs_both_sides() {
        assert!(build_d_pm(&group(0, 3), &policy(PairingMode::CrossProduct)).is_empty());
        assert!(build_d_pm(&group(3, 0), &policy(PairingMode::CrossProduct)).is_empty());
    }

    #[test]
    fn d_pm_skips_identical_reflections() {
        let pool = vec![
            cand("t1", "a", 1, Outcome::Correct, "same"),
            cand("t1", "a", 2, Outcome::Incorrect, "same"),
            cand("t1", "b", 1, Outcome::Incorrect, "other"),
        ];
        assert_eq!(
            build_d_pm(&pool, &policy(PairingMode::CrossProduct)).len(),
            1
        );
    }

    #[test]
    fn zero_cap_is_rejected() {
        assert_eq!(
            policy(PairingMode::CappedCross(0)).validate(),
            Err(CurationError::ZeroCap)
        );
    }

    fn judge_with(reply: impl Fn(&str) -> String + Send + Sync + 'static, debias: bool) -> Judge {
        let gw = Gateway::new(FnBackend::new(move |r: &CompletionRequest| {
            Ok(reply(&r.prompt_text()))
        }));
        Judge::new(gw, PromptSet::builtin().judge, debias)
    }

    fn input<'a>(a: &'a str, b: &'a str) -> JudgeInput<'a> {
        JudgeInput {
            question: "Q",
            gold: "C",
            scratchpad: "S",
            reflection_a: a,
            reflection_b: b,
        }
    }

    fn student_a_text(prompt: &str) -> String {
        let start =
            prompt.find("Student A's reflection: ").unwrap() + "Student A's reflection: ".len();
        let end = prompt.find("\n\nStudent B's reflection").unwrap();
        prompt[start..end].to_string()
    }

    fn prefers_longer(prompt: &str) -> String {
        let a = student_a_text(prompt);
        let start =
            prompt.find("Student B's reflection: ").unwrap() + "Student B's reflection: ".len();
        let rest = &prompt[start..];
        let b = &rest[..rest.find("\n\n").unwrap()];
        if a.len() >= b.len() {
            "Student A"
        } else {
            "Student B"
        }
        .to_string()
    }

    #[test]
    fn position_biased_judge_ties_when_debiased() {
        let judge = judge_with(|_| "Student A".into(), true);
        let (verdict, votes) = judge.judge(&input("one", "two"));
        assert_eq!(verdict, Preference::Tie(TieReason::Disagree));
        assert_eq!(votes.first, Some(JudgeChoice::A));
        assert_eq!(votes.swapped, Some(Some(JudgeChoice::A)));
    }

    #[test]
    fn consistent_judge_wins_both_passes() {
        let judge = judge_with(prefers_longer, true);
        assert_eq!(judge.judge(&input("short", "much longer")).0, Preference::B);
        assert_eq!(judge.judge(&input("much longer", "short")).0, Preference::A);
    }

    #[test]
    fn unparsable_judge_ties() {
        let judge = judge_with(|_| "Both are good".into(), true);
        assert_eq!(
            judge.judge(&input("x", "y")).0,
            Preference::Tie(TieReason::Unparsable)
        );
        assert_eq!(parse_judge_reply("Student A and Student B"), None);
        assert_eq!(parse_judge_reply("Student B."), Some(JudgeChoice::B));
    }

    #[test]
    fn judge_errors_tie() {
        let gw = Gateway::new(
            ScriptedBackend::new(Script {
                rules: vec![ScriptRule::fail(["Student"], "judge down")],
                default: None,
            })
            .unwrap(),
        );
        let judge = Judge::new(gw, PromptSet::builtin().judge, true);
        assert_eq!(
            judge.judge(&input("x", "y")).0,
            Preference::Tie(TieReason::Error)
        );
    }

    #[test]
    fn judge_prompt_includes_gold_and_both_reflections() {
        let seen = std::sync::Arc::new(std::sync::Mutex::new(String::new()));
        let s = seen.clone();
        let judge = judge_with(
            move |p| {
                *s.lock().unwrap() = p.to_string();
                "Student A".into()
            },
            false,
        );
        judge.judge(&input("R-ONE", "R-TWO"));
        let prompt = seen.lock().unwrap().clone();
        assert!(prompt.contains("Groundtruth to the question: C"));
        assert!(prompt.contains("Student A's reflection: R-ONE"));
        assert!(prompt.contains("Student B's reflection: R-TWO"));
    }

    #[test]
    fn d_pref_two_members_first_preferred() {
        let d_plus = group(2, 0);
        let judge = judge_with(|_| "Student A".into(), false);
        let (pairs, summary) = build_d_pref(&d_plus, &policy(PairingMode::CrossProduct), &judge, 2);
        assert_eq!(pairs.len(), 1);
        assert_eq!(summary.adjudicated, 1);
        assert_eq!(pairs[0].chosen.reflection.text, "good 0");
        assert_eq!(pairs[0].kind, PairKind::JudgedPref);
        assert!(pairs[0].judge_votes.is_some());
    }

    #[test]
    fn d_pref_group_sizes() {
        let judge = judge_with(prefers_longer, true);
        let (_, summary) =
            build_d_pref(&group(3, 0), &policy(PairingMode::CrossProduct), &judge, 4);
        assert_eq!(summary.adjudicated, 3);
        let (pairs, summary) =
            build_d_pref(&group(1, 0), &policy(PairingMode::CrossProduct), &judge, 4);
        assert!(pairs.is_empty());
        assert_eq!(summary.adjudicated, 0);
    }

    #[test]
    fn d_pref_debias_on_off_counts() {
        let d_plus = group(4, 0);
        let biased = |debias| judge_with(|_| "Student A".into(), debias);
        let p = policy(PairingMode::CrossProduct);
        let (on, s_on) = build_d_pref(&d_plus, &p, &biased(true), 3);
        let (off, s_off) = build_d_pref(&d_plus, &p, &biased(false), 3);
        assert!(on.is_empty());
        assert_eq!(s_on.ties.get("disagree"), Some(&6));
        assert_eq!(off.len(), 6);
        assert_eq!(s_off.adjudicated, 6);
    }
}
