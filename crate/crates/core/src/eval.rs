//! Evaluation: per-turn accuracy, multi-turn curves, error tagging and the
//! reflection/thought similarity correlation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::gateway::{CompletionRequest, Gateway, GatewayError};
use crate::model::{AbortReason, RolloutTrace, TaskItem, TraceStatus};
use crate::prompts::Template;
use crate::rollout::RolloutEngine;
use crate::util::{par_map, sha256_hex};
use crate::verify::Verifier;

/// Result of one rollout, reduced to what the metrics need.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemOutcome {
    pub task_id: String,
    pub source_dataset: String,
    /// First turn judged correct, if any.
    pub solved_turn: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<AbortReason>,
}

impl ItemOutcome {
    pub fn from_trace(trace: &RolloutTrace, source_dataset: &str) -> Self {
        Self {
            task_id: trace.task_id.clone(),
            source_dataset: source_dataset.to_string(),
            solved_turn: trace.solved_turn(),
            aborted: match &trace.status {
                TraceStatus::Aborted(r) => Some(r.clone()),
                _ => None,
            },
        }
    }

    /// Solved at or before turn `t` (1-based).
    pub fn solved_by(&self, t: u32) -> bool {
        self.solved_turn.is_some_and(|s| s <= t)
    }

    /// Per-turn indicator vector of length `turns`.
    pub fn vector(&self, turns: u32) -> Vec<bool> {
        (1..=turns).map(|t| self.solved_by(t)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub n_items: usize,
    /// `solved_counts[t - 1]` items solved by turn t.
    pub solved_counts: Vec<usize>,
    /// Fractions in `[0, 1]`.
    pub acc_at: Vec<f64>,
}

impl Accuracy {
    fn compute<'a>(items: impl IntoIterator<Item = &'a ItemOutcome>, turns: u32) -> Self {
        let mut n_items = 0;
        let mut solved_counts = vec![0usize; turns as usize];
        for item in items {
            n_items += 1;
            for (t, slot) in solved_counts.iter_mut().enumerate() {
                *slot += usize::from(item.solved_by(t as u32 + 1));
            }
        }
        let acc_at = solved_counts
            .iter()
            .map(|&s| {
                if n_items == 0 {
                    0.0
                } else {
                    s as f64 / n_items as f64
                }
            })
            .collect();
        Self {
            n_items,
            solved_counts,
            acc_at,
        }
    }

    /// Percentage-point gain from turn 1 to turn 2. `None` with one turn.
    pub fn delta_points(&self) -> Option<f64> {
        if self.solved_counts.len() < 2 || self.n_items == 0 {
            return (self.solved_counts.len() >= 2).then_some(0.0);
        }
        let gained = self.solved_counts[1] as f64 - self.solved_counts[0] as f64;
        Some(gained * 100.0 / self.n_items as f64)
    }

    fn percent(&self, t: usize) -> f64 {
        if self.n_items == 0 {
            0.0
        } else {
            self.solved_counts[t] as f64 * 100.0 / self.n_items as f64
        }
    }

    /// `"30.2% / 43.8% / +13.6%"` for two or more turns, `"30.2%"` for one.
    pub fn summary(&self) -> String {
        let mut out = format!("{:.1}%", self.percent(0));
        if let Some(delta) = self.delta_points() {
            let _ = write!(out, " / {:.1}% / {:+.1}%", self.percent(1), delta);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub turns: u32,
    #[serde(flatten)]
    pub overall: Accuracy,
    /// Acc@t2 − Acc@t1 in percentage points.
    pub delta: Option<f64>,
    /// Sorted by task id.
    pub items: Vec<ItemOutcome>,
    /// Task ids whose rollout aborted; they count as unsolved from the
    /// abort onward.
    pub aborted: Vec<String>,
    pub per_dataset: BTreeMap<String, Accuracy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_tags: Option<TagHistogram>,
}

impl EvalReport {
    pub fn from_outcomes(mut items: Vec<ItemOutcome>, turns: u32) -> Self {
        items.sort_by(|a, b| a.task_id.cmp(&b.task_id));
        let overall = Accuracy::compute(&items, turns);
        let mut grouped: BTreeMap<&str, Vec<&ItemOutcome>> = BTreeMap::new();
        for item in &items {
            grouped.entry(&item.source_dataset).or_default().push(item);
        }
        let per_dataset = grouped
            .into_iter()
            .map(|(d, rows)| (d.to_string(), Accuracy::compute(rows, turns)))
            .collect();
        let aborted = items
            .iter()
            .filter(|i| i.aborted.is_some())
            .map(|i| i.task_id.clone())
            .collect();
        Self {
            turns,
            delta: overall.delta_points(),
            overall,
            items,
            aborted,
            per_dataset,
            error_tags: None,
        }
    }

    pub fn summary(&self) -> String {
        self.overall.summary()
    }

    /// Aligned text table with one row per dataset and an overall row.
    pub fn to_table(&self) -> String {
        let mut header = vec!["Dataset".to_string(), "N".to_string()];
        header.extend((1..=self.turns).map(|t| format!("Acc@t{t}")));
        if self.turns >= 2 {
            header.push("Delta".to_string());
        }
        let row = |name: &str, acc: &Accuracy| {
            let mut r = vec![name.to_string(), acc.n_items.to_string()];
            r.extend((0..self.turns as usize).map(|t| format!("{:.1}%", acc.percent(t))));
            if let Some(d) = acc.delta_points() {
                r.push(format!("{d:+.1}%"));
            }
            r
        };
        let mut lines = vec![header];
        for (name, acc) in &self.per_dataset {
            lines.push(row(name, acc));
        }
        lines.push(row("All", &self.overall));
        render_table(&lines)
    }

    /// `turn,accuracy,solved` rows for plotting.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("turn,accuracy,solved\n");
        for (i, (acc, solved)) in self
            .overall
            .acc_at
            .iter()
            .zip(&self.overall.solved_counts)
            .enumerate()
        {
            let _ = writeln!(out, "{},{:.6},{}", i + 1, acc, solved);
        }
        out
    }
}

pub(crate) fn render_table(lines: &[Vec<String>]) -> String {
    let cols = lines.first().map_or(0, Vec::len);
    let widths: Vec<usize> = (0..cols)
        .map(|i| {
            lines
                .iter()
                .map(|l| l[i].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for line in lines {
        for (i, cell) in line.iter().enumerate() {
            if i == 0 {
                let _ = write!(out, "{cell:<w$}", w = widths[i]);
            } else {
                let _ = write!(out, "  {cell:>w$}", w = widths[i]);
            }
        }
        out.push('\n');
    }
    out
}

/// Runs one rollout per task in parallel and reports accuracy over the
/// engine's `max_turns`. Traces come back sorted by task id.
pub fn evaluate(
    engine: &RolloutEngine,
    tasks: &[TaskItem],
    verifier: &dyn Verifier,
    max_in_flight: usize,
) -> (EvalReport, Vec<RolloutTrace>) {
    let turns = engine.policy().max_turns;
    let mut results = par_map(tasks, max_in_flight, |task| {
        let trace = engine.run_rollout(task, verifier);
        let outcome = ItemOutcome::from_trace(&trace, &task.source_dataset);
        (outcome, trace)
    });
    results.sort_by(|a, b| a.0.task_id.cmp(&b.0.task_id));
    let (outcomes, traces): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    for o in outcomes.iter().filter(|o| o.aborted.is_some()) {
        tracing::warn!(task = %o.task_id, reason = ?o.aborted, "rollout aborted");
    }
    (EvalReport::from_outcomes(outcomes, turns), traces)
}

/// Per-turn accuracy for a run of `turns` turns.
pub fn multi_turn_curve(
    engine: &RolloutEngine,
    tasks: &[TaskItem],
    verifier: &dyn Verifier,
    turns: u32,
    max_in_flight: usize,
) -> Vec<f64> {
    let mut policy = engine.policy().clone();
    policy.max_turns = turns;
    let engine = engine.clone().with_policy(policy);
    evaluate(&engine, tasks, verifier, max_in_flight)
        .0
        .overall
        .acc_at
}

/// The closed error taxonomy: (code, coarse type, fine type).
pub const TAXONOMY: [(&str, &str, &str); 9] = [
    ("1-1", "Mathematical Errors", "Calculation Error"),
    ("1-2", "Mathematical Errors", "Algorithm Error"),
    (
        "2-1",
        "Logic and Reasoning Errors",
        "Flawed Rationale Error",
    ),
    (
        "2-2",
        "Logic and Reasoning Errors",
        "Internal Inconsistency",
    ),
    ("3-1", "Instruction Violation", "Context Misinterpretation"),
    (
        "3-2",
        "Instruction Violation",
        "Incomplete or Irrelevant Response",
    ),
    ("3-3", "Instruction Violation", "Format Discrepancy"),
    ("4-1", "Factual Errors", "Factual Errors"),
    ("5-1", "No Errors", "No Errors Detected"),
];

/// (coarse, fine) names for a taxonomy code.
pub fn describe_label(code: &str) -> Option<(&'static str, &'static str)> {
    TAXONOMY
        .iter()
        .find(|(c, _, _)| *c == code)
        .map(|(_, coarse, fine)| (*coarse, *fine))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ErrorTag {
    Labels { codes: Vec<String> },
    Unlabeled,
}

impl ErrorTag {
    pub fn codes(&self) -> &[String] {
        match self {
            ErrorTag::Labels { codes } => codes,
            ErrorTag::Unlabeled => &[],
        }
    }
}

/// Extracts taxonomy codes from an annotator reply. Reads the `Labels:`
/// line when present, else the whole reply. Fails when nothing looks like
/// a label or any code is outside the taxonomy.
pub fn parse_labels(reply: &str) -> Option<Vec<String>> {
    let scope = reply
        .lines()
        .find_map(|l| {
            let l = l.trim_start_matches(|c: char| c == '-' || c == '*' || c.is_whitespace());
            l.strip_prefix("Labels:")
        })
        .unwrap_or(reply);
    let chars: Vec<char> = scope.chars().collect();
    let mut codes: Vec<String> = Vec::new();
    for w in 0..chars.len().saturating_sub(2) {
        let (a, dash, b) = (chars[w], chars[w + 1], chars[w + 2]);
        let bounded_left = w == 0 || !chars[w - 1].is_ascii_alphanumeric();
        let bounded_right = chars.get(w + 3).is_none_or(|c| !c.is_ascii_alphanumeric());
        if a.is_ascii_digit() && dash == '-' && b.is_ascii_digit() && bounded_left && bounded_right
        {
            let code = format!("{a}-{b}");
            describe_label(&code)?;
            if !codes.contains(&code) {
                codes.push(code);
            }
        }
    }
    if codes.is_empty() {
        let lower = scope.to_lowercase();
        for (code, _, fine) in TAXONOMY {
            if lower.contains(&fine.to_lowercase()) && !codes.iter().any(|c| c == code) {
                codes.push(code.to_string());
            }
        }
    }
    (!codes.is_empty()).then_some(codes)
}

/// Labels the error in `thought` given its `reflection`. An unusable reply
/// is retried once with the next seed before giving up as `Unlabeled`.
pub fn tag_errors(
    gateway: &Gateway,
    template: &Template,
    question: &str,
    thought: &str,
    reflection: &str,
    seed: u64,
) -> Result<ErrorTag, GatewayError> {
    let prompt = template
        .render(&[
            ("question", question),
            ("thought", thought),
            ("reflection", reflection),
        ])
        .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
    for attempt in 0..2u64 {
        let request = CompletionRequest::user(prompt.clone())
            .temperature(0.0)
            .seed(seed.wrapping_add(attempt))
            .max_new_tokens(256);
        let reply = gateway.complete(&request)?;
        match parse_labels(&reply.text) {
            Some(codes) => return Ok(ErrorTag::Labels { codes }),
            None => tracing::debug!(attempt, reply = %reply.text, "unusable error labels"),
        }
    }
    Ok(ErrorTag::Unlabeled)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagHistogram {
    pub items: usize,
    pub coarse: BTreeMap<String, usize>,
    pub fine: BTreeMap<String, usize>,
    pub unlabeled: usize,
}

impl TagHistogram {
    /// With `single_label`, only the first code of each tag counts.
    pub fn from_tags<'a>(tags: impl IntoIterator<Item = &'a ErrorTag>, single_label: bool) -> Self {
        let mut h = Self::default();
        for tag in tags {
            h.items += 1;
            let codes = tag.codes();
            if codes.is_empty() {
                h.unlabeled += 1;
                continue;
            }
            let take = if single_label { 1 } else { codes.len() };
            for code in &codes[..take] {
                if let Some((coarse, fine)) = describe_label(code) {
                    *h.coarse.entry(coarse.to_string()).or_default() += 1;
                    *h.fine.entry(fine.to_string()).or_default() += 1;
                }
            }
        }
        h
    }

    /// Fine-label count plus unlabeled items.
    pub fn total(&self) -> usize {
        self.fine.values().sum::<usize>() + self.unlabeled
    }
}

pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError>;
}

/// Bag-of-words vectors with hashed buckets. Cheap and offline; useful
/// for tests and smoke runs, not a semantic model.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    pub dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: 256 }
    }
}

impl Embedder for HashingEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        let dim = self.dim.max(1);
        Ok(texts
            .iter()
            .map(|t| {
                let mut v = vec![0f32; dim];
                for word in t
                    .split(|c: char| !c.is_alphanumeric())
                    .filter(|w| !w.is_empty())
                {
                    let h = sha256_hex(word.to_lowercase().as_bytes());
                    let bucket = u64::from_str_radix(&h[..16], 16).unwrap_or(0) as usize % dim;
                    v[bucket] += 1.0;
                }
                v
            })
            .collect())
    }
}

/// Client for an OpenAI-compatible `/embeddings` endpoint.
#[derive(Debug, Clone)]
pub struct EndpointEmbedder {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: Option<String>,
}

impl EndpointEmbedder {
    pub fn new(
        base_url: &str,
        model: &str,
        timeout: Duration,
        api_key: Option<String>,
    ) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            url: format!("{}/embeddings", base_url.trim_end_matches('/')),
            model: model.to_string(),
            api_key,
        })
    }
}

impl Embedder for EndpointEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        #[derive(Deserialize)]
        struct Item {
            embedding: Vec<f32>,
            #[serde(default)]
            index: Option<usize>,
        }
        #[derive(Deserialize)]
        struct Reply {
            data: Vec<Item>,
        }
        let mut builder = self
            .client
            .post(&self.url)
            .json(&serde_json::json!({"model": self.model, "input": texts}));
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(crate::gateway::map_reqwest)?;
        let status = resp.status();
        let body = resp.text().map_err(crate::gateway::map_reqwest)?;
        if !status.is_success() {
            return Err(GatewayError::Status {
                status: status.as_u16(),
                body,
            });
        }
        let mut reply: Reply = serde_json::from_str(&body)
            .map_err(|e| GatewayError::Protocol(format!("malformed embeddings reply: {e}")))?;
        if reply.data.len() != texts.len() {
            return Err(GatewayError::Protocol(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                reply.data.len()
            )));
        }
        reply.data.sort_by_key(|i| i.index.unwrap_or(usize::MAX));
        Ok(reply.data.into_iter().map(|i| i.embedding).collect())
    }
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Pearson correlation. `None` for fewer than two points or when either
/// side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= f64::EPSILON * n as f64 || syy <= f64::EPSILON * n as f64 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationItem {
    pub task_id: String,
    pub reflection: String,
    /// Corrected (second-turn) reasoning.
    pub thought: String,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_similarity: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub n: usize,
    pub similarities: Vec<f64>,
    /// Pearson r between per-item similarity and the correctness indicator.
    pub r: Option<f64>,
    /// Equal-width bins over the observed similarity range.
    pub bins: Vec<SimilarityBin>,
    /// Pearson r between bin mean similarity and bin accuracy, over
    /// non-empty bins.
    pub binned_r: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum CorrelationError {
    #[error("need at least 3 pairs, got {0}")]
    TooFew(usize),
    #[error("zero bins requested")]
    ZeroBins,
    #[error("embedder returned {got} vectors for {want} texts")]
    Count { want: usize, got: usize },
    #[error("embedding dimensions differ ({0} vs {1})")]
    Dimension(usize, usize),
    #[error(transparent)]
    Embed(#[from] GatewayError),
}

pub fn correlate(
    items: &[CorrelationItem],
    embedder: &dyn Embedder,
    n_bins: usize,
) -> Result<CorrelationReport, CorrelationError> {
    if items.len() < 3 {
        return Err(CorrelationError::TooFew(items.len()));
    }
    if n_bins == 0 {
        return Err(CorrelationError::ZeroBins);
    }
    let texts: Vec<String> = items
        .iter()
        .flat_map(|i| [i.reflection.clone(), i.thought.clone()])
        .collect();
    let vectors = embedder.embed(&texts)?;
    if vectors.len() != texts.len() {
        return Err(CorrelationError::Count {
            want: texts.len(),
            got: vectors.len(),
        });
    }
    let dim = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(CorrelationError::Dimension(dim, v.len()));
    }
    let similarities: Vec<f64> = vectors.chunks(2).map(|p| cosine(&p[0], &p[1])).collect();
    let correct: Vec<f64> = items
        .iter()
        .map(|i| f64::from(u8::from(i.correct)))
        .collect();
    let r = pearson(&similarities, &correct);

    let lo = similarities.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = similarities
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / n_bins as f64;
    let mut sums = vec![(0usize, 0.0f64, 0.0f64); n_bins];
    for (s, c) in similarities.iter().zip(&correct) {
        let idx = if width > 0.0 {
            (((s - lo) / width) as usize).min(n_bins - 1)
        } else {
            0
        };
        sums[idx].0 += 1;
        sums[idx].1 += s;
        sums[idx].2 += c;
    }
    let bins: Vec<SimilarityBin> = sums
        .iter()
        .enumerate()
        .map(|(i, &(count, s, c))| SimilarityBin {
            lo: lo + width * i as f64,
            hi: if i + 1 == n_bins {
                hi
            } else {
                lo + width * (i + 1) as f64
            },
            count,
            mean_similarity: (count > 0).then(|| s / count as f64),
            accuracy: (count > 0).then(|| c / count as f64),
        })
        .collect();
    let (bx, by): (Vec<f64>, Vec<f64>) = bins
        .iter()
        .filter_map(|b| Some((b.mean_similarity?, b.accuracy?)))
        .unzip();
    Ok(CorrelationReport {
        n: items.len(),
        similarities,
        r,
        binned_r: pearson(&bx, &by),
        bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::FnBackend;
    use crate::prompts::PromptSet;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn outcome(id: &str, solved: Option<u32>) -> ItemOutcome {
        ItemOutcome {
            task_id: id.into(),
            source_dataset: "logiqa".into(),
            solved_turn: solved,
            aborted: None,
        }
    }

    fn log(n: usize, at1: usize, by2: usize) -> Vec<ItemOutcome> {
        (0..n)
            .map(|i| {
                let solved = if i < at1 {
                    Some(1)
                } else if i < by2 {
                    Some(2)
                } else {
                    None
                };
                outcome(&format!("q{i:04}"), solved)
            })
            .collect()
    }

    #[test]
    fn headline_arithmetic() {
        let report = EvalReport::from_outcomes(log(500, 151, 219), 2);
        assert_eq!(report.summary(), "30.2% / 43.8% / +13.6%");
        assert_eq!(report.overall.solved_counts, vec![151, 219]);
        assert!((report.delta.unwrap() - 13.6).abs() < 1e-9);
    }

    #[test]
    fn degenerate_logs() {
        let all = EvalReport::from_outcomes(log(10, 10, 10), 2);
        assert_eq!(all.delta, Some(0.0));
        let none = EvalReport::from_outcomes(log(10, 0, 0), 2);
        assert_eq!(none.summary(), "0.0% / 0.0% / +0.0%");
        let one = EvalReport::from_outcomes(log(10, 3, 3), 1);
        assert_eq!(one.overall.acc_at.len(), 1);
        assert_eq!(one.delta, None);
        assert_eq!(one.summary(), "30.0%");
        let empty = EvalReport::from_outcomes(vec![], 2);
        assert_eq!(empty.overall.acc_at, vec![0.0, 0.0]);
    }

    #[test]
    fn aborted_items_are_listed_and_unsolved() {
        let mut items = log(4, 1, 2);
        items[3].aborted = Some(AbortReason::NoAnswer);
        let report = EvalReport::from_outcomes(items, 2);
        assert_eq!(report.aborted, vec!["q0003".to_string()]);
        assert_eq!(report.overall.solved_counts, vec![1, 2]);
    }

    #[test]
    fn table_and_csv() {
        let report = EvalReport::from_outcomes(log(500, 151, 219), 2);
        let table = report.to_table();
        assert!(table.contains("30.2%") && table.contains("+13.6%"));
        let csv = report.curve_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("turn,accuracy,solved\n1,0.302000,151"));
    }

    #[test]
    fn label_parsing() {
        assert_eq!(
            parse_labels("- Labels: [2-1]\n- Rationale: x"),
            Some(vec!["2-1".into()])
        );
        assert_eq!(
            parse_labels("Labels: [1-1, 3-3]"),
            Some(vec!["1-1".into(), "3-3".into()])
        );
        assert_eq!(parse_labels("Labels: [9-9]"), None);
        assert_eq!(
            parse_labels("Labels: [Calculation Error]"),
            Some(vec!["1-1".into()])
        );
        assert_eq!(parse_labels("no idea"), None);
        assert_eq!(
            describe_label("2-1"),
            Some(("Logic and Reasoning Errors", "Flawed Rationale Error"))
        );
    }

    fn tagger(replies: Vec<&'static str>) -> (Gateway, Arc<AtomicUsize>) {
        let calls = Arc::new(AtomicUsize::new(0));
        let counter = calls.clone();
        let gw = Gateway::new(FnBackend::new(move |_req| {
            let i = counter.fetch_add(1, Ordering::SeqCst);
            Ok(replies[i.min(replies.len() - 1)].to_string())
        }));
        (gw, calls)
    }

    #[test]
    fn tagging_retries_once() {
        let template = PromptSet::builtin().error_tags;
        let (gw, calls) = tagger(vec!["Labels: [9-9]", "Labels: [9-9]"]);
        let tag = tag_errors(&gw, &template, "q", "t", "r", 0).unwrap();
        assert_eq!(tag, ErrorTag::Unlabeled);
        assert_eq!(calls.load(Ordering::SeqCst), 2);

        let (gw, calls) = tagger(vec!["garbage", "- Labels: [2-1]"]);
        let tag = tag_errors(&gw, &template, "q", "t", "r", 0).unwrap();
        assert_eq!(tag.codes(), ["2-1".to_string()]);
        assert_eq!(calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn histogram_totals() {
        let tags = vec![
            ErrorTag::Labels {
                codes: vec!["1-1".into(), "3-3".into()],
            },
            ErrorTag::Labels {
                codes: vec!["2-1".into()],
            },
            ErrorTag::Unlabeled,
        ];
        let multi = TagHistogram::from_tags(&tags, false);
        assert!(multi.total() >= tags.len());
        assert_eq!(multi.total(), 4);
        let single = TagHistogram::from_tags(&tags, true);
        assert_eq!(single.total(), tags.len());
        assert_eq!(single.coarse["Mathematical Errors"], 1);
    }

    struct Fixed(Vec<Vec<f32>>);
    impl Embedder for Fixed {
        fn embed(&self, _texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
            Ok(self.0.clone())
        }
    }

    fn item(correct: bool) -> CorrelationItem {
        CorrelationItem {
            task_id: "t".into(),
            reflection: "same words".into(),
            thought: "same words".into(),
            correct,
        }
    }

    #[test]
    fn identical_texts_give_undefined_r() {
        let items = vec![item(true); 5];
        let report = correlate(&items, &HashingEmbedder::default(), 10).unwrap();
        assert!(report.similarities.iter().all(|s| (s - 1.0).abs() < 1e-9));
        assert_eq!(report.r, None);
    }

    #[test]
    fn pearson_hand_values() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap() + 1.0).abs() < 1e-12);
        // Mean 2.5/2.5; sxy = 3, sxx = 5, syy = 5.
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((r - 0.6).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
    }

    #[test]
    fn bins_cover_every_item() {
        // Pairs with similarity 0, 0.6 and 1.
        let vecs = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![0.6, 0.8],
            vec![1.0, 0.0],
            vec![1.0, 0.0],
        ];
        let items = vec![item(false), item(true), item(true)];
        let report = correlate(&items, &Fixed(vecs), 10).unwrap();
        assert_eq!(report.bins.iter().map(|b| b.count).sum::<usize>(), 3);
        assert_eq!(report.bins[0].count, 1);
        assert_eq!(report.bins[9].count, 1);
        assert!(report.r.unwrap() > 0.0);
        assert!(matches!(
            correlate(&items[..2], &Fixed(vec![]), 10),
            Err(CorrelationError::TooFew(2))
        ));
    }
}
