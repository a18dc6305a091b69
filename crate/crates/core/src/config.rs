//! Run configuration: loop caps, thresholds, retry policy and endpoints.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0} must be at least 1")]
    ZeroCap(&'static str),
    #[error("{0} must lie in (0, 1], got {1}")]
    Threshold(&'static str, f64),
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
}

/// One chat-completions endpoint. The credential is read from `api_key_env`
/// at call time and never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    /// Doubles after every failed transport attempt.
    #[serde(with = "millis")]
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn immediate() -> Self {
        Self {
            max_retries: 2,
            initial_backoff: Duration::ZERO,
        }
    }

    pub fn max_attempts(&self) -> u32 {
        self.max_retries + 1
    }

    pub fn backoff(&self, failed_attempts: u32) -> Duration {
        self.initial_backoff
            .saturating_mul(1u32 << failed_attempts.saturating_sub(1).min(16))
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub max_iters: u32,
    pub max_steps_translator: u32,
    pub max_steps_reasoner: u32,
    pub tau_t: f64,
    pub tau_r: f64,
    pub response_token_limit: u32,
    pub temperature: f64,
    pub retry: RetryPolicy,
    pub translator: EndpointConfig,
    pub reasoner: EndpointConfig,
    /// Command line for the python runner process, e.g. `["python3", "runner.py"]`.
    pub sandbox_command: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_iters: 3,
            max_steps_translator: 3,
            max_steps_reasoner: 3,
            tau_t: 0.9,
            tau_r: 0.9,
            response_token_limit: 1024,
            temperature: 0.0,
            retry: RetryPolicy::default(),
            translator: EndpointConfig {
                base_url: "http://localhost:8000/v1".into(),
                model: "qwen2.5-vl-3b-instruct".into(),
                api_key_env: "TRANSLATOR_API_KEY".into(),
            },
            reasoner: EndpointConfig {
                base_url: "http://localhost:8001/v1".into(),
                model: "qwen3-8b".into(),
                api_key_env: "REASONER_API_KEY".into(),
            },
            sandbox_command: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_iters == 0 {
            return Err(ConfigError::ZeroCap("max_iters"));
        }
        if self.max_steps_translator == 0 {
            return Err(ConfigError::ZeroCap("max_steps_translator"));
        }
        if self.max_steps_reasoner == 0 {
            return Err(ConfigError::ZeroCap("max_steps_reasoner"));
        }
        for (name, v) in [("tau_t", self.tau_t), ("tau_r", self.tau_r)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(ConfigError::Threshold(name, v));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Upper bound on policy-call attempts (agent steps plus force answer,
    /// each with its retry allowance). Tool-internal and refinement calls
    /// are not counted here.
    pub fn policy_call_budget(&self) -> u64 {
        let steps = self.max_iters as u64
            * (self.max_steps_translator as u64 + self.max_steps_reasoner as u64)
            + 1;
        steps * self.retry.max_attempts() as u64
    }
}
