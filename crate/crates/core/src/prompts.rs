//! Prompt templates and the placeholder renderer.
//!
//! Templates use `{Name}` slots. Rendering is single pass: substituted
//! values are never re-scanned, so questions containing braces (LaTeX,
//! code) pass through untouched. Every slot in a template must receive a
//! value or rendering fails.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("template {template}: unresolved placeholder {{{slot}}}")]
    Unresolved { template: String, slot: String },
    #[error("template {template}: missing file {path}")]
    MissingFile { template: String, path: PathBuf },
    #[error("template {template}: {message}")]
    Malformed { template: String, message: String },
    #[error("io error reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Part {
    Literal(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    name: String,
    parts: Vec<Part>,
}

fn is_slot_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == ' ' || c == '_')
        && !s.ends_with(' ')
}

impl Template {
    pub fn parse(name: impl Into<String>, text: &str) -> Self {
        let mut parts = Vec::new();
        let mut literal = String::new();
        let mut rest = text;
        while let Some(open) = rest.find('{') {
            literal.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) if is_slot_name(&after[..close]) => {
                    if !literal.is_empty() {
                        parts.push(Part::Literal(std::mem::take(&mut literal)));
                    }
                    parts.push(Part::Slot(after[..close].to_string()));
                    rest = &after[close + 1..];
                }
                _ => {
                    literal.push('{');
                    rest = after;
                }
            }
        }
        literal.push_str(rest);
        if !literal.is_empty() {
            parts.push(Part::Literal(literal));
        }
        Self {
            name: name.into(),
            parts,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn slots(&self) -> BTreeSet<&str> {
        self.parts
            .iter()
            .filter_map(|p| match p {
                Part::Slot(s) => Some(s.as_str()),
                Part::Literal(_) => None,
            })
            .collect()
    }

    /// Literal text with all slots removed.
    pub fn literal_text(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                Part::Literal(s) => Some(s.as_str()),
                Part::Slot(_) => None,
            })
            .collect()
    }

    pub fn render(&self, values: &[(&str, &str)]) -> Result<String, PromptError> {
        let mut out = String::new();
        for part in &self.parts {
            match part {
                Part::Literal(s) => out.push_str(s),
                Part::Slot(slot) => {
                    let value = values
                        .iter()
                        .find(|(k, _)| k == slot)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| PromptError::Unresolved {
                            template: self.name.clone(),
                            slot: slot.clone(),
                        })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

/// Every placeholder-shaped token (`{Name}`) in `text`.
pub fn placeholder_tokens(text: &str) -> Vec<String> {
    Template::parse("scan", text)
        .slots()
        .into_iter()
        .map(str::to_string)
        .collect()
}

/// Stage variant files, in pool order.
pub const VARIANT_IDS: [&str; 12] = [
    "1-1", "1-2", "2-1", "2-2", "2-3", "2-4", "2-5", "2-6", "2-7", "2-8", "3-1", "3-2",
];

macro_rules! builtin {
    ($path:literal) => {
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/prompts/", $path))
    };
}

const BUILTIN_VARIANTS: [&str; 12] = [
    builtin!("reflection/s1-1.txt"),
    builtin!("reflection/s1-2.txt"),
    builtin!("reflection/s2-1.txt"),
    builtin!("reflection/s2-2.txt"),
    builtin!("reflection/s2-3.txt"),
    builtin!("reflection/s2-4.txt"),
    builtin!("reflection/s2-5.txt"),
    builtin!("reflection/s2-6.txt"),
    builtin!("reflection/s2-7.txt"),
    builtin!("reflection/s2-8.txt"),
    builtin!("reflection/s3-1.txt"),
    builtin!("reflection/s3-2.txt"),
];

/// Raw text of every prompt file, before parsing.
#[derive(Debug, Clone)]
pub struct PromptTexts {
    pub reflection_frame: String,
    /// `(variant id, body)` in `VARIANT_IDS` order.
    pub variants: Vec<(String, String)>,
    pub reflexion: String,
    pub react: String,
    pub correct: String,
    pub one_stage: String,
    pub direct: String,
    pub judge: String,
    pub error_tags: String,
    pub self_judge: String,
}

fn normalize_file(text: &str) -> String {
    text.replace("\r\n", "\n")
        .trim_end_matches('\n')
        .to_string()
}

impl PromptTexts {
    pub fn builtin() -> Self {
        Self {
            reflection_frame: normalize_file(builtin!("reflection/frame.txt")),
            variants: VARIANT_IDS
                .iter()
                .zip(BUILTIN_VARIANTS)
                .map(|(id, body)| (id.to_string(), normalize_file(body)))
                .collect(),
            reflexion: normalize_file(builtin!("reflexion.txt")),
            react: normalize_file(builtin!("react.txt")),
            correct: normalize_file(builtin!("correct.txt")),
            one_stage: normalize_file(builtin!("one_stage.txt")),
            direct: normalize_file(builtin!("direct.txt")),
            judge: normalize_file(builtin!("judge.txt")),
            error_tags: normalize_file(builtin!("error_tags.txt")),
            self_judge: normalize_file(builtin!("self_judge.txt")),
        }
    }

    /// Loads the same layout from disk (`reflection/frame.txt`,
    /// `reflection/s{stage}-{variant}.txt`, and the flat prompt files).
    pub fn load(dir: &Path) -> Result<Self, PromptError> {
        let read = |rel: &str| -> Result<String, PromptError> {
            let path = dir.join(rel);
            if !path.is_file() {
                return Err(PromptError::MissingFile {
                    template: rel.to_string(),
                    path,
                });
            }
            fs::read_to_string(&path)
                .map(|s| normalize_file(&s))
                .map_err(|source| PromptError::Io { path, source })
        };
        let variants = VARIANT_IDS
            .iter()
            .map(|id| Ok((id.to_string(), read(&format!("reflection/s{id}.txt"))?)))
            .collect::<Result<Vec<_>, PromptError>>()?;
        Ok(Self {
            reflection_frame: read("reflection/frame.txt")?,
            variants,
            reflexion: read("reflexion.txt")?,
            react: read("react.txt")?,
            correct: read("correct.txt")?,
            one_stage: read("one_stage.txt")?,
            direct: read("direct.txt")?,
            judge: read("judge.txt")?,
            error_tags: read("error_tags.txt")?,
            self_judge: read("self_judge.txt")?,
        })
    }
}

/// Parsed prompt templates with their expected slots checked.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub reflection_frame: Template,
    pub reflexion: Template,
    pub react: Template,
    pub correct: Template,
    pub one_stage: Template,
    pub direct: Template,
    pub judge: Template,
    pub error_tags: Template,
    pub self_judge: Template,
}

fn checked(name: &str, text: &str, expected: &[&str]) -> Result<Template, PromptError> {
    let template = Template::parse(name, text);
    let slots = template.slots();
    let want: BTreeSet<&str> = expected.iter().copied().collect();
    if slots != want {
        return Err(PromptError::Malformed {
            template: name.to_string(),
            message: format!("expected placeholders {want:?}, found {slots:?}"),
        });
    }
    Ok(template)
}

impl PromptSet {
    pub fn from_texts(texts: &PromptTexts) -> Result<Self, PromptError> {
        Ok(Self {
            reflection_frame: checked(
                "reflection/frame.txt",
                &texts.reflection_frame,
                &["Question", "Scratchpad", "Stage1", "Stage2", "Stage3"],
            )?,
            reflexion: checked(
                "reflexion.txt",
                &texts.reflexion,
                &["Question", "Scratchpad"],
            )?,
            react: checked(
                "react.txt",
                &texts.react,
                &["Examples", "Question", "Scratchpad"],
            )?,
            correct: checked(
                "correct.txt",
                &texts.correct,
                &["Examples", "Question", "Reflections", "Scratchpad"],
            )?,
            one_stage: checked(
                "one_stage.txt",
                &texts.one_stage,
                &["Question", "Scratchpad"],
            )?,
            direct: checked("direct.txt", &texts.direct, &["Examples", "Question"])?,
            judge: checked(
                "judge.txt",
                &texts.judge,
                &[
                    "Question",
                    "Answer",
                    "Scratchpad",
                    "Reflections 1",
                    "Reflections 2",
                ],
            )?,
            error_tags: checked(
                "error_tags.txt",
                &texts.error_tags,
                &["question", "thought", "reflection"],
            )?,
            self_judge: checked("self_judge.txt", &texts.self_judge, &["Question", "Answer"])?,
        })
    }

    pub fn builtin() -> Self {
        Self::from_texts(&PromptTexts::builtin()).expect("builtin prompts are well formed")
    }

    pub fn load(dir: &Path) -> Result<Self, PromptError> {
        Self::from_texts(&PromptTexts::load(dir)?)
    }
}

pub const END_OF_EXAMPLES: &str = "(END OF EXAMPLES)";

/// Few-shot exemplars joined into the `{Examples}` slot.
pub fn join_examples(examples: &[String]) -> String {
    examples.join("\n\n")
}
