//! Correct/incorrect decisions for extracted answers.
//!
//! Three verifiers share one trait: oracle matching against the gold
//! answer, self-judgment by a model that never sees the gold answer, and an
//! external command (typically a test runner for code answers).

use std::io::Write;
use std::process::{Command, Stdio};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::gateway::{CompletionRequest, Gateway, GatewayError};
use crate::model::{AnswerKind, Feedback, TaskItem, Verdict, VerifierKind};
use crate::prompts::Template;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareMode {
    Exact,
    NumericTolerant,
    ChoiceLetter,
    External,
}

/// Describes how answers of one kind are normalized and compared.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MatchRule {
    pub answer_kind: AnswerKind,
    pub steps: Vec<&'static str>,
    pub mode: CompareMode,
}

const BASE_STEPS: [&str; 4] = [
    "trim",
    "collapse whitespace",
    "case-fold",
    "strip surrounding punctuation and brackets",
];

impl MatchRule {
    pub fn for_kind(kind: AnswerKind) -> Self {
        let mut steps = BASE_STEPS.to_vec();
        let mode = match kind {
            AnswerKind::MultipleChoice => {
                steps.push("drop option/answer/choice prefix");
                steps.push("reduce \"(b)\" / \"b.\" / \"b) text\" to the letter");
                CompareMode::ChoiceLetter
            }
            AnswerKind::Numeric => {
                steps.splice(
                    3..3,
                    [
                        "strip $ and \\boxed{}",
                        "rewrite \\frac{a}{b} as a/b",
                        "keep right-hand side of the last '='",
                        "drop thousands separators",
                    ],
                );
                steps.push("exact rational comparison, else |a - b| <= 1e-6");
                CompareMode::NumericTolerant
            }
            AnswerKind::FreeText => CompareMode::Exact,
            AnswerKind::Code => CompareMode::External,
        };
        Self {
            answer_kind: kind,
            steps,
            mode,
        }
    }
}

pub const NUMERIC_TOLERANCE: f64 = 1e-6;

fn collapse(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn matching(open: char) -> Option<char> {
    match open {
        '(' => Some(')'),
        '[' => Some(']'),
        '{' => Some('}'),
        _ => None,
    }
}

/// True when the first character opens a bracket that closes exactly at
/// the last character.
fn wrapped_by_pair(s: &str) -> bool {
    let Some(open) = s.chars().next() else {
        return false;
    };
    let Some(close) = matching(open) else {
        return false;
    };
    let mut depth = 0usize;
    for (i, c) in s.char_indices() {
        if c == open {
            depth += 1;
        } else if c == close {
            depth = depth.saturating_sub(1);
            if depth == 0 {
                return i + c.len_utf8() == s.len();
            }
        }
    }
    false
}

fn unbalanced(s: &str, open: char, close: char) -> isize {
    s.chars().fold(0, |n, c| {
        n + isize::from(c == open) - isize::from(c == close)
    })
}

/// Strips surrounding punctuation, matched bracket pairs around the whole
/// string and stray unmatched brackets at either end.
fn strip_surrounding(text: &str) -> String {
    const PUNCT: &[char] = &[',', ';', ':', '!', '?', '"', '\'', '`', '*'];
    let mut s = text.trim();
    loop {
        let before = s.len();
        s = s.trim_start_matches(PUNCT).trim_end_matches(PUNCT);
        s = s.trim_end_matches('.').trim();
        if wrapped_by_pair(s) {
            s = s[1..s.len() - 1].trim();
        }
        for (open, close) in [('(', ')'), ('[', ']'), ('{', '}')] {
            if s.starts_with(open) && unbalanced(s, open, close) > 0 {
                s = s[1..].trim();
            }
            if s.ends_with(close) && unbalanced(s, open, close) < 0 {
                s = s[..s.len() - 1].trim();
            }
        }
        if s.len() == before {
            break;
        }
    }
    s.to_string()
}

/// Returns the contents of the brace group opening at `open` (which must
/// index a `{`) and the index just past its closing brace.
fn brace_group(s: &str, open: usize) -> Option<(&str, usize)> {
    let mut depth = 0usize;
    for (i, c) in s[open..].char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some((&s[open + 1..open + i], open + i + 1));
                }
            }
            _ => {}
        }
    }
    None
}

fn unwrap_command(s: &str, command: &str) -> String {
    let mut out = s.to_string();
    while let Some(pos) = out.find(command) {
        let open = pos + command.len();
        match brace_group(&out, open).filter(|_| out[open..].starts_with('{')) {
            Some((inner, end)) => out = format!("{}{}{}", &out[..pos], inner, &out[end..]),
            None => break,
        }
    }
    out
}

fn rewrite_fracs(s: &str) -> String {
    let mut out = s.replace("\\dfrac", "\\frac").replace("\\tfrac", "\\frac");
    while let Some(pos) = out.find("\\frac") {
        let open = pos + 5;
        let Some((num, mid)) = brace_group(&out, open).filter(|_| out[open..].starts_with('{'))
        else {
            break;
        };
        let Some((den, end)) = brace_group(&out, mid).filter(|_| out[mid..].starts_with('{'))
        else {
            break;
        };
        let wrap = |x: &str| {
            if x.chars().all(|c| c.is_ascii_digit() || c == '.') {
                x.to_string()
            } else {
                format!("({x})")
            }
        };
        out = format!("{}{}/{}{}", &out[..pos], wrap(num), wrap(den), &out[end..]);
    }
    out
}

fn drop_thousands_commas(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = String::with_capacity(s.len());
    for (i, c) in s.char_indices() {
        let grouped = c == ','
            && i > 0
            && bytes[i - 1].is_ascii_digit()
            && bytes.len() >= i + 4
            && bytes[i + 1..i + 4].iter().all(u8::is_ascii_digit)
            && bytes.get(i + 4).is_none_or(|b| !b.is_ascii_digit());
        if !grouped {
            out.push(c);
        }
    }
    out
}

/// Canonical form of an answer under `kind`'s rule. Applied to both the
/// model answer and the gold answer before comparison.
pub fn normalize(text: &str, kind: AnswerKind) -> String {
    let base = collapse(text);
    match kind {
        AnswerKind::MultipleChoice => {
            let mut s = strip_surrounding(&base);
            for prefix in ["option", "answer", "choice"] {
                if let Some(rest) = s.strip_prefix(prefix) {
                    if rest.starts_with([' ', ':']) {
                        s = strip_surrounding(rest);
                    }
                }
            }
            let mut chars = s.chars();
            if let (Some(letter), Some(sep)) = (chars.next(), chars.next()) {
                if letter.is_ascii_alphabetic() && matches!(sep, ')' | '.' | ':') {
                    return letter.to_string();
                }
            }
            s
        }
        AnswerKind::Numeric => {
            let mut s = base.replace('$', "");
            s = unwrap_command(&s, "\\boxed");
            s = unwrap_command(&s, "\\text");
            s = s
                .replace("\\left", "")
                .replace("\\right", "")
                .replace("\\!", "");
            s = rewrite_fracs(&s);
            if let Some((_, rhs)) = s.rsplit_once('=') {
                s = rhs.to_string();
            }
            s = drop_thousands_commas(&s);
            let s = strip_surrounding(&s);
            s.replace(' ', "")
        }
        AnswerKind::FreeText | AnswerKind::Code => strip_surrounding(&base),
    }
}

type Rational = Ratio<i128>;

fn parse_decimal(s: &str) -> Option<Rational> {
    let (neg, digits) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    if digits.is_empty() {
        return None;
    }
    let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    if int.len() + frac.len() > 30 {
        return None;
    }
    let mantissa: i128 = format!("{int}{frac}").parse().ok()?;
    let denom = 10i128.checked_pow(frac.len() as u32)?;
    let value = Rational::new(mantissa, denom);
    Some(if neg { -value } else { value })
}

fn strip_parens(s: &str) -> &str {
    s.strip_prefix('(')
        .and_then(|x| x.strip_suffix(')'))
        .unwrap_or(s)
}

/// Exact value of a normalized numeric answer: integer, decimal or a
/// single `a/b` fraction.
pub fn parse_rational(s: &str) -> Option<Rational> {
    match s.split_once('/') {
        Some((num, den)) => {
            let (neg, num) = match num.strip_prefix('-') {
                Some(rest) => (true, rest),
                None => (false, num),
            };
            let n = parse_decimal(strip_parens(num))?;
            let d = parse_decimal(strip_parens(den))?;
            if d == Rational::from_integer(0) {
                return None;
            }
            let value = n / d;
            Some(if neg { -value } else { value })
        }
        None => parse_decimal(s),
    }
}

fn parse_float(s: &str) -> Option<f64> {
    if let Some(r) = parse_rational(s) {
        return Some(*r.numer() as f64 / *r.denom() as f64);
    }
    s.parse::<f64>().ok().filter(|x| x.is_finite())
}

/// Pure oracle check of `answer` against `gold` under `kind`'s rule.
pub fn verify_oracle(answer: &str, gold: &str, kind: AnswerKind) -> Feedback {
    let a = normalize(answer, kind);
    let g = normalize(gold, kind);
    let verdict = |ok: bool| {
        Feedback::new(
            if ok {
                Verdict::Correct
            } else {
                Verdict::Incorrect
            },
            VerifierKind::Oracle,
        )
    };
    if kind != AnswerKind::Numeric {
        return verdict(a == g);
    }
    if let (Some(x), Some(y)) = (parse_rational(&a), parse_rational(&g)) {
        if x == y {
            return verdict(true);
        }
    }
    match (parse_float(&a), parse_float(&g)) {
        (Some(x), Some(y)) => verdict((x - y).abs() <= NUMERIC_TOLERANCE),
        _ if a == g => verdict(true),
        (None, _) => verdict(false).with_reason("unparsable numeric answer"),
        (Some(_), None) => verdict(false).with_reason("unparsable numeric gold answer"),
    }
}

/// Reads a one-word verdict out of a judge reply. Negative forms are
/// checked first so "incorrect" never reads as "correct".
pub fn parse_self_judgment(reply: &str) -> Verdict {
    let text = reply.to_lowercase();
    if ["incorrect", "not correct", "wrong"]
        .iter()
        .any(|w| text.contains(w))
    {
        Verdict::Incorrect
    } else if text.contains("correct") {
        Verdict::Correct
    } else {
        Verdict::Unverified
    }
}

pub trait Verifier: Send + Sync {
    fn kind(&self) -> VerifierKind;
    fn verify(&self, task: &TaskItem, answer: &str) -> Result<Feedback, GatewayError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OracleVerifier;

impl Verifier for OracleVerifier {
    fn kind(&self) -> VerifierKind {
        VerifierKind::Oracle
    }

    fn verify(&self, task: &TaskItem, answer: &str) -> Result<Feedback, GatewayError> {
        Ok(verify_oracle(answer, &task.gold_answer, task.answer_kind))
    }
}

/// Asks a model whether an answer is right, without showing it the gold
/// answer.
#[derive(Debug, Clone)]
pub struct SelfJudgeVerifier {
    gateway: Gateway,
    template: Template,
    max_new_tokens: u32,
}

impl SelfJudgeVerifier {
    pub fn new(gateway: Gateway, template: Template) -> Self {
        Self {
            gateway,
            template,
            max_new_tokens: 16,
        }
    }
}

impl Verifier for SelfJudgeVerifier {
    fn kind(&self) -> VerifierKind {
        VerifierKind::SelfJudgment
    }

    fn verify(&self, task: &TaskItem, answer: &str) -> Result<Feedback, GatewayError> {
        let prompt = self
            .template
            .render(&[("Question", &task.question), ("Answer", answer)])
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        let reply = self.gateway.complete(
            &CompletionRequest::user(prompt)
                .temperature(0.0)
                .max_new_tokens(self.max_new_tokens),
        )?;
        let value = parse_self_judgment(&reply.text);
        let feedback = Feedback::new(value, VerifierKind::SelfJudgment);
        Ok(if value == Verdict::Unverified {
            feedback.with_reason("unparsable")
        } else {
            feedback
        })
    }
}

/// Counting semaphore bounding concurrent runner processes.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slots lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("slots lock");
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slots lock") += 1;
        self.0.cv.notify_one();
    }
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', "'\\''"))
}

fn temp_file_with(contents: &str) -> std::io::Result<tempfile::NamedTempFile> {
    let mut file = tempfile::NamedTempFile::new()?;
    file.write_all(contents.as_bytes())?;
    file.flush()?;
    Ok(file)
}

/// Runs a user-supplied shell command on the answer. `{file}` in the
/// command is replaced by a temp file holding the answer and `{gold_file}`
/// by one holding the gold answer. Exit status 0 within the timeout means
/// Correct. No sandboxing is applied.
pub fn verify_external(answer: &str, gold: &str, runner_cmd: &str, timeout: Duration) -> Feedback {
    let unverified = |msg: String| {
        Feedback::new(Verdict::Unverified, VerifierKind::ExternalRunner)
            .with_reason(format!("runner_error: {msg}"))
    };
    let answer_file = match temp_file_with(answer) {
        Ok(f) => f,
        Err(e) => return unverified(e.to_string()),
    };
    let gold_file = if runner_cmd.contains("{gold_file}") {
        match temp_file_with(gold) {
            Ok(f) => Some(f),
            Err(e) => return unverified(e.to_string()),
        }
    } else {
        None
    };
    let mut cmd = runner_cmd.replace(
        "{file}",
        &shell_quote(&answer_file.path().to_string_lossy()),
    );
    if let Some(g) = &gold_file {
        cmd = cmd.replace("{gold_file}", &shell_quote(&g.path().to_string_lossy()));
    }
    let mut child = match Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
    {
        Ok(c) => c,
        Err(e) => return unverified(e.to_string()),
    };
    let deadline = Instant::now() + timeout;
    loop {
        match child.try_wait() {
            Ok(Some(status)) => {
                return if status.success() {
                    Feedback::new(Verdict::Correct, VerifierKind::ExternalRunner)
                } else {
                    Feedback::new(Verdict::Incorrect, VerifierKind::ExternalRunner)
                        .with_reason(format!("runner exited with {status}"))
                };
            }
            Ok(None) if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                return Feedback::new(Verdict::Incorrect, VerifierKind::ExternalRunner)
                    .with_reason("timeout");
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(10)),
            Err(e) => return unverified(e.to_string()),
        }
    }
}

/// External runner for code answers; other answer kinds fall back to the
/// oracle.
#[derive(Debug)]
pub struct ExternalVerifier {
    runner_cmd: String,
    timeout: Duration,
    slots: Slots,
}

impl ExternalVerifier {
    pub fn new(runner_cmd: impl Into<String>, timeout: Duration, max_processes: usize) -> Self {
        Self {
            runner_cmd: runner_cmd.into(),
            timeout,
            slots: Slots {
                free: Mutex::new(max_processes.max(1)),
                cv: Condvar::new(),
            },
        }
    }
}

impl Verifier for ExternalVerifier {
    fn kind(&self) -> VerifierKind {
        VerifierKind::ExternalRunner
    }

    fn verify(&self, task: &TaskItem, answer: &str) -> Result<Feedback, GatewayError> {
        if task.answer_kind != AnswerKind::Code {
            return OracleVerifier.verify(task, answer);
        }
        let _slot = self.slots.acquire();
        Ok(verify_external(
            answer,
            &task.gold_answer,
            &self.runner_cmd,
            self.timeout,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Script, ScriptRule, ScriptedBackend};
    use crate::prompts::PromptSet;
    use proptest::prelude::*;

    fn oracle(a: &str, g: &str, kind: AnswerKind) -> Verdict {
        verify_oracle(a, g, kind).value
    }

    #[test]
    fn choice_letters() {
        use AnswerKind::MultipleChoice as MC;
        assert_eq!(oracle("B", "B", MC), Verdict::Correct);
        assert_eq!(oracle("(b)", "B", MC), Verdict::Correct);
        assert_eq!(oracle("b.", "B", MC), Verdict::Correct);
        assert_eq!(oracle("Option B", "b", MC), Verdict::Correct);
        assert_eq!(oracle("answer: (C)", "C", MC), Verdict::Correct);
        assert_eq!(oracle("B) the second one", "B", MC), Verdict::Correct);
        assert_eq!(oracle("A", "B", MC), Verdict::Incorrect);
    }

    #[test]
    fn normalization_table() {
        use AnswerKind::*;
        assert_eq!(normalize("  Hello   World. ", FreeText), "hello world");
        assert_eq!(normalize("(b)", MultipleChoice), "b");
        assert_eq!(normalize("$\\boxed{\\dfrac{1}{2}}$", Numeric), "1/2");
        assert_eq!(normalize("x = 1,234", Numeric), "1234");
        assert_eq!(normalize("\\frac{\\sqrt{2}}{2}", Numeric), "(\\sqrt{2})/2");
        assert_eq!(normalize("-3.", Numeric), "-3");
    }

    #[test]
    fn numeric_equivalences() {
        use AnswerKind::Numeric as N;
        assert_eq!(oracle("0.5", "1/2", N), Verdict::Correct);
        assert_eq!(oracle("\\frac{1}{2}", "0.5", N), Verdict::Correct);
        assert_eq!(oracle("$\\boxed{12}$", "12", N), Verdict::Correct);
        assert_eq!(oracle("12.0", "12", N), Verdict::Correct);
        assert_eq!(oracle("1,000", "1000", N), Verdict::Correct);
        assert_eq!(oracle("-\\frac{3}{4}", "-0.75", N), Verdict::Correct);
        assert_eq!(oracle("0.3333333", "1/3", N), Verdict::Correct);
        assert_eq!(oracle("0.334", "1/3", N), Verdict::Incorrect);
        assert_eq!(oracle("1e-7", "0", N), Verdict::Correct);
        assert_eq!(oracle("\\sqrt{2}", "\\sqrt{2}", N), Verdict::Correct);
    }

    #[test]
    fn unparsable_numeric_answer_is_incorrect_with_reason() {
        let fb = verify_oracle("seven", "7", AnswerKind::Numeric);
        assert_eq!(fb.value, Verdict::Incorrect);
        assert_eq!(fb.reason.as_deref(), Some("unparsable numeric answer"));
    }

    #[test]
    fn rational_parser() {
        assert_eq!(parse_rational("3/6"), Some(Ratio::new(1, 2)));
        assert_eq!(parse_rational("-2.50"), Some(Ratio::new(-5, 2)));
        assert_eq!(parse_rational(".5"), Some(Ratio::new(1, 2)));
        assert_eq!(parse_rational("1/0"), None);
        assert_eq!(parse_rational("abc"), None);
        assert_eq!(parse_rational("."), None);
    }

    #[test]
    fn match_rules_describe_modes() {
        assert_eq!(
            MatchRule::for_kind(AnswerKind::Numeric).mode,
            CompareMode::NumericTolerant
        );
        assert_eq!(
            MatchRule::for_kind(AnswerKind::Code).mode,
            CompareMode::External
        );
        assert_eq!(
            MatchRule::for_kind(AnswerKind::MultipleChoice).mode,
            CompareMode::ChoiceLetter
        );
        assert_eq!(
            MatchRule::for_kind(AnswerKind::FreeText).mode,
            CompareMode::Exact
        );
    }

    fn judge(reply: &str) -> Feedback {
        let script = Script {
            rules: vec![ScriptRule::reply(["Proposed answer"], reply)],
            default: None,
        };
        let gw = Gateway::new(ScriptedBackend::new(script).unwrap());
        let v = SelfJudgeVerifier::new(gw, PromptSet::builtin().self_judge);
        let task = TaskItem {
            id: "t".into(),
            source_dataset: "logiqa".into(),
            task_category: crate::model::TaskCategory::LogicalReasoning,
            question: "Q?".into(),
            gold_answer: "SECRET-GOLD".into(),
            answer_kind: AnswerKind::MultipleChoice,
            fewshot: vec![],
        };
        v.verify(&task, "B").unwrap()
    }

    #[test]
    fn self_judgment_parses_replies() {
        assert_eq!(judge("incorrect").value, Verdict::Incorrect);
        assert_eq!(judge("The answer is correct.").value, Verdict::Correct);
        let fb = judge("maybe");
        assert_eq!(fb.value, Verdict::Unverified);
        assert_eq!(fb.reason.as_deref(), Some("unparsable"));
        assert_eq!(fb.verifier_kind, Some(VerifierKind::SelfJudgment));
    }

    #[test]
    fn self_judgment_prompt_hides_gold() {
        let rendered = PromptSet::builtin()
            .self_judge
            .render(&[("Question", "Q?"), ("Answer", "B")])
            .unwrap();
        assert!(!rendered.contains("SECRET-GOLD"));
    }

    #[test]
    fn external_runner_exit_status() {
        let t = Duration::from_secs(5);
        assert_eq!(verify_external("x", "", "true", t).value, Verdict::Correct);
        assert_eq!(
            verify_external("x", "", "false", t).value,
            Verdict::Incorrect
        );
        let fb = verify_external("hello", "", "grep -q hello {file}", t);
        assert_eq!(fb.value, Verdict::Correct);
        let fb = verify_external("a", "b", "cmp -s {file} {gold_file}", t);
        assert_eq!(fb.value, Verdict::Incorrect);
    }

    #[test]
    fn external_runner_timeout() {
        let start = Instant::now();
        let fb = verify_external("x", "", "sleep 5", Duration::from_secs(1));
        assert_eq!(fb.value, Verdict::Incorrect);
        assert_eq!(fb.reason.as_deref(), Some("timeout"));
        assert!(start.elapsed() < Duration::from_secs(4));
    }

    proptest! {
        #[test]
        fn oracle_is_reflexive_and_pure(s in "[ -~]{1,20}") {
            for kind in [AnswerKind::MultipleChoice, AnswerKind::Numeric, AnswerKind::FreeText] {
                let first = verify_oracle(&s, &s, kind);
                prop_assert_eq!(first.value, Verdict::Correct);
                prop_assert_eq!(verify_oracle(&s, &s, kind), first);
            }
        }

        #[test]
        fn oracle_is_symmetric(a in "[ -~]{0,12}", b in "[ -~]{1,12}") {
            for kind in [AnswerKind::MultipleChoice, AnswerKind::Numeric, AnswerKind::FreeText] {
                prop_assert_eq!(
                    verify_oracle(&a, &b, kind).value,
                    verify_oracle(&b, &a, kind).value
                );
            }
        }

        #[test]
        fn normalize_is_idempotent_for_text(s in "[ -~]{0,20}") {
            let once = normalize(&s, AnswerKind::FreeText);
            prop_assert_eq!(normalize(&once, AnswerKind::FreeText), once);
        }

        #[test]
        fn decimals_equal_their_fraction(n in -10_000i64..10_000, d in 1i64..1_000) {
            let value = n as f64 / d as f64;
            let decimal = format!("{value:.9}");
            let fraction = format!("{n}/{d}");
            prop_assert_eq!(oracle(&decimal, &fraction, AnswerKind::Numeric), Verdict::Correct);
        }
    }
}
