//! Run configuration, loaded from a TOML file.
//!
//! Every table and key is optional; omitted keys take the defaults below.
//!
//! ```toml
//! [endpoint]
//! base_url = "http://localhost:8000/v1"
//! model = "llama-3-8b-instruct"
//! timeout_secs = 120
//!
//! [policy]
//! k = 2
//! m = 5
//!
//! [curation]
//! pairing = "capped_cross"
//! pair_cap = 8
//!
//! [eval]
//! turns = 2
//! verifier = "oracle"
//! ```

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::curation::{PairingMode, PairingPolicy, DEFAULT_PAIR_CAP};
use crate::export::{DpoCompletion, ReflectionPromptStyle};
use crate::gateway::{Gateway, HttpBackend, RetryPolicy};
use crate::model::{GenerationPolicy, VerifierKind};
use crate::rollout::ReflectionMode;
use crate::util::sha256_hex;

/// Environment variable holding the endpoint API key.
pub const API_KEY_ENV: &str = "REFLECT_API_KEY";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("no endpoint configured for {0}; set [{0}] base_url in the config, or pass --mock")]
    MissingEndpoint(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    /// Base URL of an OpenAI-compatible server, e.g. `http://host:8000/v1`.
    pub base_url: Option<String>,
    pub model: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    /// Unlimited when absent.
    pub requests_per_second: Option<f64>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: None,
            model: String::new(),
            timeout_secs: 120,
            max_retries: 3,
            backoff_ms: 500,
            requests_per_second: None,
        }
    }
}

impl EndpointConfig {
    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            backoff_base: Duration::from_millis(self.backoff_ms),
        }
    }

    /// HTTP gateway for this endpoint. `section` names the table in errors.
    pub fn http_gateway(
        &self,
        section: &'static str,
        api_key: Option<String>,
    ) -> Result<Gateway, ConfigError> {
        let base = self
            .base_url
            .as_deref()
            .filter(|u| !u.trim().is_empty())
            .ok_or(ConfigError::MissingEndpoint(section))?;
        let backend = HttpBackend::new(base, Duration::from_secs(self.timeout_secs), api_key)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(self.wrap(Gateway::from_arc(Arc::new(backend))))
    }

    /// Applies model, retry and rate settings to an existing gateway.
    pub fn wrap(&self, gateway: Gateway) -> Gateway {
        let mut gw = gateway
            .with_model(self.model.clone())
            .with_retry(self.retry());
        if let Some(rps) = self.requests_per_second {
            gw = gw.with_rate_limit(rps);
        }
        gw
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    /// `/embeddings` endpoint base URL. Without it an offline hashing
    /// embedder is used.
    pub base_url: Option<String>,
    pub model: String,
    pub timeout_secs: u64,
    /// Dimension of the offline hashing embedder.
    pub hashing_dim: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            base_url: None,
            model: String::new(),
            timeout_secs: 120,
            hashing_dim: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingKind {
    CrossProduct,
    OnePerQuestion,
    CappedCross,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationConfig {
    pub pairing: PairingKind,
    /// Pairs kept per question group under `capped_cross`.
    pub pair_cap: usize,
    pub seed: u64,
    /// Two judge passes with swapped positions; disagreements are dropped.
    pub debias: bool,
    pub dpo_completion: DpoCompletion,
    pub prompt_style: ReflectionPromptStyle,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            pairing: PairingKind::CappedCross,
            pair_cap: DEFAULT_PAIR_CAP,
            seed: 0,
            debias: true,
            dpo_completion: DpoCompletion::default(),
            prompt_style: ReflectionPromptStyle::default(),
        }
    }
}

impl CurationConfig {
    pub fn pairing_policy(&self) -> PairingPolicy {
        PairingPolicy {
            mode: match self.pairing {
                PairingKind::CrossProduct => PairingMode::CrossProduct,
                PairingKind::OnePerQuestion => PairingMode::OnePerQuestion,
                PairingKind::CappedCross => PairingMode::CappedCross(self.pair_cap),
            },
            seed: self.seed,
            debias: self.debias,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Turns per rollout. Overrides `policy.max_turns` for `eval`.
    pub turns: u32,
    pub verifier: VerifierKind,
    /// Shell command for the external verifier; `{file}` and `{gold_file}`
    /// are replaced with temp file paths.
    pub runner_cmd: Option<String>,
    pub runner_timeout_secs: u64,
    pub max_processes: usize,
    pub reflection_mode: ReflectionMode,
    pub bins: usize,
    /// Count only the first error label of each item.
    pub single_label: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            turns: 2,
            verifier: VerifierKind::Oracle,
            runner_cmd: None,
            runner_timeout_secs: 10,
            max_processes: 4,
            reflection_mode: ReflectionMode::Plain,
            bins: 10,
            single_label: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Worker threads for concurrent model calls.
    pub max_in_flight: usize,
    /// Directory for prompt overrides; built-in prompts when absent.
    pub prompts_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_in_flight: 8,
            prompts_dir: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub endpoint: EndpointConfig,
    /// Judge and annotator endpoint; falls back to `endpoint` when it has
    /// no base URL.
    pub judge: EndpointConfig,
    pub embedder: EmbedderConfig,
    pub policy: GenerationPolicy,
    pub curation: CurationConfig,
    pub eval: EvalConfig,
    pub run: RunConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        if let Err(e) = self.policy.validate() {
            return invalid(format!("[policy] {e}"));
        }
        if let Err(e) = self.curation.pairing_policy().validate() {
            return invalid(format!("[curation] {e}"));
        }
        if self.eval.turns == 0 {
            return invalid("[eval] turns must be at least 1".into());
        }
        if self.eval.bins == 0 {
            return invalid("[eval] bins must be at least 1".into());
        }
        if self.eval.verifier == VerifierKind::ExternalRunner && self.eval.runner_cmd.is_none() {
            return invalid("[eval] verifier = \"external_runner\" needs runner_cmd".into());
        }
        if self.run.max_in_flight == 0 {
            return invalid("[run] max_in_flight must be at least 1".into());
        }
        for (section, ep) in [("endpoint", &self.endpoint), ("judge", &self.judge)] {
            if ep
                .requests_per_second
                .is_some_and(|r| r.is_nan() || r <= 0.0)
            {
                return invalid(format!("[{section}] requests_per_second must be positive"));
            }
        }
        Ok(())
    }

    /// Stable hash of the effective configuration.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).unwrap_or_default().as_bytes())
    }

    /// The judge table when it names an endpoint, else the generator's.
    pub fn judge_endpoint(&self) -> &EndpointConfig {
        if self.judge.base_url.is_some() {
            &self.judge
        } else {
            &self.endpoint
        }
    }
}

/// API key from the environment, if set and non-empty.
pub fn api_key_from_env() -> Option<String> {
    std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let c = Config::parse("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.policy.k, 2);
        assert_eq!(c.curation.pairing_policy(), PairingPolicy::default());
        assert_eq!(c.eval.bins, 10);
    }

    #[test]
    fn tables_override_defaults() {
        let c = Config::parse(
            r#"
            [endpoint]
            base_url = "http://localhost:9/v1"
            model = "m"
            [policy]
            k = 3
            m = 6
            selection = "per_question"
            caps = { logiqa = 100 }
            [curation]
            pairing = "one_per_question"
            debias = false
            dpo_completion = "reflection_answer"
            [eval]
            turns = 6
            verifier = "self_judgment"
            reflection_mode = "1-1+2-1+3-1"
            "#,
        )
        .unwrap();
        assert_eq!(c.policy.m, 6);
        assert_eq!(c.policy.caps["logiqa"], 100);
        assert_eq!(
            c.curation.pairing_policy().mode,
            PairingMode::OnePerQuestion
        );
        assert_eq!(
            c.eval.reflection_mode,
            ReflectionMode::Instruction("1-1+2-1+3-1".into())
        );
        assert_eq!(c.judge_endpoint().model, "m");
    }

    #[test]
    fn bad_configs_are_rejected() {
        for text in [
            "[policy]\nm = 40",
            "[policy]\nbogus = 1",
            "[curation]\npair_cap = 0",
            "[eval]\nturns = 0",
            "[eval]\nverifier = \"external_runner\"",
            "[run]\nmax_in_flight = 0",
            "nonsense = [",
        ] {
            assert!(Config::parse(text).is_err(), "{text}");
        }
    }

    #[test]
    fn missing_endpoint_is_actionable() {
        let err = Config::default()
            .endpoint
            .http_gateway("endpoint", None)
            .unwrap_err();
        assert!(err.to_string().contains("base_url"));
    }

    #[test]
    fn hash_tracks_content() {
        let a = Config::default();
        let mut b = Config::default();
        assert_eq!(a.hash(), b.hash());
        b.policy.seed = 7;
        assert_ne!(a.hash(), b.hash());
    }
}
