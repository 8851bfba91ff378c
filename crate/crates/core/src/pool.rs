//! The three-stage reflection instruction pool.
//!
//! Stage 1 verifies the failed solution (2 variants), stage 2 locates and
//! diagnoses errors (8 variants), stage 3 plans the fix (2 variants). One
//! variant per stage makes an instruction, giving 32 in total.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::prompts::{PromptError, PromptTexts, Template};

pub const STAGE_SIZES: [usize; 3] = [2, 8, 2];
pub const POOL_SIZE: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum PoolError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("stage {stage} has {found} variants, expected {expected}")]
    StageCount {
        stage: u8,
        found: usize,
        expected: usize,
    },
    #[error("variant {0} is empty or contains a placeholder")]
    BadVariant(String),
    #[error("m must be in 1..={POOL_SIZE}, got {0}")]
    MOutOfRange(u32),
    #[error("unknown instruction id {0:?}")]
    UnknownInstruction(String),
    #[error("{0} must not be empty")]
    EmptyInput(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageVariant {
    pub stage: u8,
    /// e.g. `"2-5"`.
    pub variant_id: String,
    pub template_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSpec {
    /// `"{s1}+{s2}+{s3}"`, e.g. `"1-2+2-5+3-1"`.
    pub id: String,
    pub parts: [StageVariant; 3],
}

#[derive(Debug, Clone)]
pub struct InstructionPool {
    frame: Template,
    stages: [Vec<StageVariant>; 3],
}

impl InstructionPool {
    pub fn from_texts(texts: &PromptTexts) -> Result<Self, PoolError> {
        let frame = Template::parse("reflection/frame.txt", &texts.reflection_frame);
        let expected = ["Question", "Scratchpad", "Stage1", "Stage2", "Stage3"];
        if frame.slots().into_iter().ne(expected.iter().copied()) {
            return Err(PromptError::Malformed {
                template: "reflection/frame.txt".into(),
                message: format!("expected placeholders {expected:?}"),
            }
            .into());
        }

        let mut stages: [Vec<StageVariant>; 3] = Default::default();
        for (id, body) in &texts.variants {
            let stage: u8 = id
                .split('-')
                .next()
                .and_then(|s| s.parse().ok())
                .filter(|s| (1..=3).contains(s))
                .ok_or_else(|| PoolError::BadVariant(id.clone()))?;
            let body = body.trim();
            if body.is_empty() || !Template::parse(id.as_str(), body).slots().is_empty() {
                return Err(PoolError::BadVariant(id.clone()));
            }
            stages[stage as usize - 1].push(StageVariant {
                stage,
                variant_id: id.clone(),
                template_text: body.to_string(),
            });
        }
        for (i, variants) in stages.iter_mut().enumerate() {
            if variants.len() != STAGE_SIZES[i] {
                return Err(PoolError::StageCount {
                    stage: i as u8 + 1,
                    found: variants.len(),
                    expected: STAGE_SIZES[i],
                });
            }
            variants.sort_by(|a, b| a.variant_id.cmp(&b.variant_id));
        }
        Ok(Self { frame, stages })
    }

    pub fn builtin() -> Self {
        Self::from_texts(&PromptTexts::builtin()).expect("builtin pool is well formed")
    }

    pub fn load(dir: &Path) -> Result<Self, PoolError> {
        Self::from_texts(&PromptTexts::load(dir)?)
    }

    /// All 32 instructions ordered by `(s1, s2, s3)` variant ids.
    pub fn enumerate(&self) -> Vec<InstructionSpec> {
        let mut out = Vec::with_capacity(POOL_SIZE);
        for s1 in &self.stages[0] {
            for s2 in &self.stages[1] {
                for s3 in &self.stages[2] {
                    out.push(InstructionSpec {
                        id: format!("{}+{}+{}", s1.variant_id, s2.variant_id, s3.variant_id),
                        parts: [s1.clone(), s2.clone(), s3.clone()],
                    });
                }
            }
        }
        out
    }

    /// `m` distinct instructions drawn by a seeded shuffle, returned in pool
    /// order.
    pub fn select(&self, m: u32, seed: u64) -> Result<Vec<InstructionSpec>, PoolError> {
        if !(1..=POOL_SIZE as u32).contains(&m) {
            return Err(PoolError::MOutOfRange(m));
        }
        let pool = self.enumerate();
        let mut indices: Vec<usize> = (0..pool.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        indices.shuffle(&mut rng);
        let mut picked = indices[..m as usize].to_vec();
        picked.sort_unstable();
        Ok(picked.into_iter().map(|i| pool[i].clone()).collect())
    }

    pub fn get(&self, id: &str) -> Result<InstructionSpec, PoolError> {
        self.enumerate()
            .into_iter()
            .find(|spec| spec.id == id)
            .ok_or_else(|| PoolError::UnknownInstruction(id.to_string()))
    }

    pub fn render_reflection_prompt(
        &self,
        spec: &InstructionSpec,
        question: &str,
        scratchpad: &str,
    ) -> Result<String, PoolError> {
        if question.trim().is_empty() {
            return Err(PoolError::EmptyInput("question"));
        }
        if scratchpad.trim().is_empty() {
            return Err(PoolError::EmptyInput("scratchpad"));
        }
        Ok(self.frame.render(&[
            ("Question", question),
            ("Scratchpad", scratchpad),
            ("Stage1", &spec.parts[0].template_text),
            ("Stage2", &spec.parts[1].template_text),
            ("Stage3", &spec.parts[2].template_text),
        ])?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::placeholder_tokens;
    use sha2::{Digest, Sha256};

    #[test]
    fn pool_has_32_unique_ids() {
        let pool = InstructionPool::builtin().enumerate();
        assert_eq!(pool.len(), 32);
        let ids: std::collections::BTreeSet<_> = pool.iter().map(|s| s.id.clone()).collect();
        assert_eq!(ids.len(), 32);
        assert_eq!(pool[0].id, "1-1+2-1+3-1");
        assert_eq!(pool[31].id, "1-2+2-8+3-2");
    }

    #[test]
    fn pool_ids_match_golden_hash() {
        // sha256 of the 32 ids joined by '\n', computed independently.
        let ids: Vec<String> = InstructionPool::builtin()
            .enumerate()
            .into_iter()
            .map(|s| s.id)
            .collect();
        let digest = hex::encode(Sha256::digest(ids.join("\n").as_bytes()));
        assert_eq!(
            digest,
            "bd4253b4b29f99dfb5763e2f7e72c0d6aeb1f2de61004391824096a846bdb271"
        );
    }

    #[test]
    fn select_full_pool() {
        let pool = InstructionPool::builtin();
        assert_eq!(pool.select(32, 99).unwrap(), pool.enumerate());
    }

    #[test]
    fn select_is_deterministic() {
        let pool = InstructionPool::builtin();
        let a = pool.select(5, 7).unwrap();
        let b = pool.select(5, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        let ids: std::collections::BTreeSet<_> = a.iter().map(|s| &s.id).collect();
        assert_eq!(ids.len(), 5);
        assert_eq!(pool.select(6, 8).unwrap().len(), 6);
    }

    #[test]
    fn select_rejects_bad_m() {
        let pool = InstructionPool::builtin();
        assert!(matches!(pool.select(0, 1), Err(PoolError::MOutOfRange(0))));
        assert!(matches!(
            pool.select(33, 1),
            Err(PoolError::MOutOfRange(33))
        ));
    }

    #[test]
    fn rendered_prompt_contains_selected_variants() {
        let pool = InstructionPool::builtin();
        let spec = pool.get("1-2+2-5+3-1").unwrap();
        let texts = PromptTexts::builtin();
        let body = |id: &str| {
            texts
                .variants
                .iter()
                .find(|(v, _)| v == id)
                .map(|(_, b)| b.trim().to_string())
                .unwrap()
        };
        let out = pool.render_reflection_prompt(&spec, "Q", "S").unwrap();
        for id in ["1-2", "2-5", "3-1"] {
            assert_eq!(out.matches(&body(id)).count(), 1, "variant {id}");
        }
        for id in ["1-1", "2-1", "2-8", "3-2"] {
            assert!(!out.contains(&body(id)), "unselected variant {id} leaked");
        }
        assert!(out.contains("Question: Q"));
        assert!(out.contains("incorrect solution: S"));
        assert!(out.contains("Do not provide the answer directly"));
        assert!(out.contains("more than 100 words"));
        let stage1 = out.find(&body("1-2")).unwrap();
        let stage2 = out.find(&body("2-5")).unwrap();
        let stage3 = out.find(&body("3-1")).unwrap();
        assert!(stage1 < stage2 && stage2 < stage3);
        assert!(placeholder_tokens(&out).is_empty());
        assert_eq!(out, pool.render_reflection_prompt(&spec, "Q", "S").unwrap());
    }

    #[test]
    fn prompt_length_is_additive_in_variant_lengths() {
        let pool = InstructionPool::builtin();
        let all = pool.enumerate();
        let len = |s: &InstructionSpec| pool.render_reflection_prompt(s, "Q", "S").unwrap().len();
        let base = len(&all[0]) as isize
            - all[0]
                .parts
                .iter()
                .map(|p| p.template_text.len() as isize)
                .sum::<isize>();
        for spec in &all {
            let variants: isize = spec
                .parts
                .iter()
                .map(|p| p.template_text.len() as isize)
                .sum();
            assert_eq!(len(spec) as isize, base + variants);
        }
    }

    #[test]
    fn empty_inputs_rejected() {
        let pool = InstructionPool::builtin();
        let spec = pool.enumerate().remove(0);
        assert!(pool.render_reflection_prompt(&spec, " ", "S").is_err());
        assert!(pool.render_reflection_prompt(&spec, "Q", "").is_err());
    }

    #[test]
    fn missing_variant_is_a_stage_count_error() {
        let mut texts = PromptTexts::builtin();
        texts.variants.retain(|(id, _)| id != "2-8");
        assert!(matches!(
            InstructionPool::from_texts(&texts),
            Err(PoolError::StageCount {
                stage: 2,
                found: 7,
                expected: 8
            })
        ));
    }
}
