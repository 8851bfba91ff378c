//! Offline backends: echo, scripted rules and closures.

use serde::{Deserialize, Deserializer};

use super::{BackendReply, ChatBackend, CompletionRequest, GatewayError, Role};

/// Replies with the last user message verbatim.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoBackend;

impl ChatBackend for EchoBackend {
    fn chat(&self, request: &CompletionRequest) -> Result<BackendReply, GatewayError> {
        let text = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.clone())
            .unwrap_or_default();
        Ok(BackendReply::stop(text))
    }
}

/// Wraps a closure. Handy in tests that need stateful behaviour.
pub struct FnBackend<F>(F);

impl<F> FnBackend<F>
where
    F: Fn(&CompletionRequest) -> Result<String, GatewayError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self(f)
    }
}

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&CompletionRequest) -> Result<String, GatewayError> + Send + Sync,
{
    fn chat(&self, request: &CompletionRequest) -> Result<BackendReply, GatewayError> {
        (self.0)(request).map(BackendReply::stop)
    }
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    })
}

/// One scripted rule. It fires when the prompt contains every `contains`
/// needle and none of the `excludes`. Exactly one of `reply`, `replies`
/// or `fail` must be set. With `replies`, the request seed picks the
/// entry (`seed % len`). Any `{seed}` in a reply is replaced by the
/// request seed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRule {
    #[serde(default, deserialize_with = "one_or_many")]
    pub contains: Vec<String>,
    #[serde(default, deserialize_with = "one_or_many")]
    pub excludes: Vec<String>,
    #[serde(default)]
    pub reply: Option<String>,
    #[serde(default)]
    pub replies: Option<Vec<String>>,
    #[serde(default)]
    pub fail: Option<String>,
}

impl ScriptRule {
    pub fn reply<S: Into<String>>(
        contains: impl IntoIterator<Item = S>,
        reply: impl Into<String>,
    ) -> Self {
        Self {
            contains: contains.into_iter().map(Into::into).collect(),
            reply: Some(reply.into()),
            ..Self::default()
        }
    }

    pub fn replies<S: Into<String>, R: Into<String>>(
        contains: impl IntoIterator<Item = S>,
        replies: impl IntoIterator<Item = R>,
    ) -> Self {
        Self {
            contains: contains.into_iter().map(Into::into).collect(),
            replies: Some(replies.into_iter().map(Into::into).collect()),
            ..Self::default()
        }
    }

    pub fn fail<S: Into<String>>(
        contains: impl IntoIterator<Item = S>,
        message: impl Into<String>,
    ) -> Self {
        Self {
            contains: contains.into_iter().map(Into::into).collect(),
            fail: Some(message.into()),
            ..Self::default()
        }
    }

    pub fn excluding<S: Into<String>>(mut self, excludes: impl IntoIterator<Item = S>) -> Self {
        self.excludes = excludes.into_iter().map(Into::into).collect();
        self
    }

    fn check(&self) -> Result<(), String> {
        let set = [
            self.reply.is_some(),
            self.replies.is_some(),
            self.fail.is_some(),
        ]
        .iter()
        .filter(|b| **b)
        .count();
        if set != 1 {
            return Err("exactly one of reply, replies, fail must be set".into());
        }
        if matches!(&self.replies, Some(r) if r.is_empty()) {
            return Err("replies must not be empty".into());
        }
        Ok(())
    }

    fn matches(&self, prompt: &str) -> bool {
        self.contains.iter().all(|n| prompt.contains(n.as_str()))
            && !self.excludes.iter().any(|n| prompt.contains(n.as_str()))
    }

    fn respond(&self, seed: Option<u64>) -> Result<BackendReply, GatewayError> {
        let seed = seed.unwrap_or(0);
        let text = if let Some(msg) = &self.fail {
            return Err(GatewayError::Backend(msg.clone()));
        } else if let Some(replies) = &self.replies {
            &replies[(seed % replies.len() as u64) as usize]
        } else {
            self.reply.as_deref().unwrap_or_default()
        };
        Ok(BackendReply::stop(
            text.replace("{seed}", &seed.to_string()),
        ))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    #[serde(default)]
    pub default: Option<ScriptRule>,
}

/// Deterministic rule-based backend. Responses depend only on the request,
/// so output is identical under any concurrency or call order. Requests
/// that match no rule and have no default echo the prompt.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    script: Script,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Result<Self, GatewayError> {
        for (i, rule) in script.rules.iter().enumerate() {
            rule.check()
                .map_err(|e| GatewayError::InvalidRequest(format!("script rule {i}: {e}")))?;
        }
        if let Some(rule) = &script.default {
            rule.check()
                .map_err(|e| GatewayError::InvalidRequest(format!("script default: {e}")))?;
        }
        Ok(Self { script })
    }

    pub fn from_json(text: &str) -> Result<Self, GatewayError> {
        let script: Script = serde_json::from_str(text)
            .map_err(|e| GatewayError::InvalidRequest(format!("mock script: {e}")))?;
        Self::new(script)
    }
}

impl ChatBackend for ScriptedBackend {
    fn chat(&self, request: &CompletionRequest) -> Result<BackendReply, GatewayError> {
        let prompt = request.prompt_text();
        match self
            .script
            .rules
            .iter()
            .find(|r| r.matches(&prompt))
            .or(self.script.default.as_ref())
        {
            Some(rule) => rule.respond(request.seed),
            None => EchoBackend.chat(request),
        }
    }
}
