//! Pipeline configuration, loaded from TOML.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::PoolSetting;
use crate::gateway::{Gateway, GatewayConfig, LiveBackend, LiveConfig};
use crate::graph::{GraphConfig, DEFAULT_TAU};
use crate::mutation::EvolveConfig;
use crate::router::{RouterConfig, RouterVariant};
use crate::sampler::{SamplerConfig, TargetSize};
use crate::trajectory::SynthConfig;
use crate::util::derive_seed;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{location}: {message}")]
    Parse { location: String, message: String },
    #[error("a seed is required when the backend is mock")]
    MissingSeed,
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSettings {
    pub kind: BackendKind,
    /// Base URL of an endpoint speaking the chat-completions JSON shape.
    pub base_url: String,
    pub api_key_env: String,
    pub chat_model: String,
    pub embedding_model: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_chat_calls: Option<u64>,
    pub max_in_flight: usize,
    pub cache: bool,
}

impl Default for BackendSettings {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            base_url: "http://localhost:8000/v1".into(),
            api_key_env: "GRAPHROUTE_API_KEY".into(),
            chat_model: "mock".into(),
            embedding_model: "text-embedding-3-small".into(),
            timeout_secs: 60.0,
            max_retries: 3,
            max_chat_calls: None,
            max_in_flight: 8,
            cache: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSettings {
    pub tau: f64,
}

impl Default for GraphSettings {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MutationSettings {
    pub rounds: usize,
    pub max_retries: u32,
    pub temperature: f64,
    /// Relative operator weights in operator order; uniform when absent.
    pub operator_weights: Option<Vec<f64>>,
}

impl Default for MutationSettings {
    fn default() -> Self {
        Self {
            rounds: 40,
            max_retries: 2,
            temperature: 0.7,
            operator_weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSettings {
    pub num_seeds: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub restart_prob: f64,
    pub subsets: usize,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            num_seeds: 1,
            min_size: 4,
            max_size: 8,
            restart_prob: 0.15,
            subsets: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisSettings {
    pub max_turns: usize,
    pub error_rate: f64,
    pub max_plan_retries: u32,
    pub temperature: f64,
}

impl Default for SynthesisSettings {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self {
            max_turns: d.max_turns,
            error_rate: d.error_rate,
            max_plan_retries: d.max_plan_retries,
            temperature: d.temperature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionSettings {
    /// Pool size per trajectory: the subset plus random graph nodes.
    pub pool_size: usize,
    pub ablation: bool,
}

impl Default for ExtractionSettings {
    fn default() -> Self {
        Self {
            pool_size: 10,
            ablation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSettings {
    pub routers: Vec<RouterVariant>,
    pub settings: Vec<PoolSetting>,
    pub k: usize,
    pub temperature: f64,
    pub router_model: String,
    pub max_input_chars: usize,
    pub timeout_secs: Option<f64>,
    /// Bank of unrelated candidates for the widest setting.
    pub external_bank: Option<PathBuf>,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        Self {
            routers: vec![
                RouterVariant::Oracle,
                RouterVariant::EmbeddingQ,
                RouterVariant::EmbeddingQh,
            ],
            settings: vec![PoolSetting::Clean, PoolSetting::Multi, PoolSetting::PlusMutation],
            k: 5,
            temperature: 1.0,
            router_model: "mock".into(),
            max_input_chars: 8192,
            timeout_secs: Some(120.0),
            external_bank: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LraSettings {
    pub max_steps: usize,
    pub router: RouterVariant,
    pub temperature: f64,
}

impl Default for LraSettings {
    fn default() -> Self {
        Self {
            max_steps: 16,
            router: RouterVariant::EmbeddingQh,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub backend: BackendSettings,
    pub graph: GraphSettings,
    pub mutation: MutationSettings,
    pub sampler: SamplerSettings,
    pub synthesis: SynthesisSettings,
    pub extraction: ExtractionSettings,
    pub evaluation: EvaluationSettings,
    pub lra: LraSettings,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

impl PipelineConfig {
    /// Parses TOML; `origin` names the source in error locations.
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| {
            let location = match e.span() {
                Some(span) => {
                    let (line, col) = line_col(text, span.start);
                    format!("{origin}:{line}:{col}")
                }
                None => origin.to_string(),
            };
            ConfigError::Parse {
                location,
                message: e.message().to_string(),
            }
        })?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    /// Checks cross-field rules; mock runs must be seeded.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.backend.kind == BackendKind::Mock && self.seed.is_none() {
            return Err(ConfigError::MissingSeed);
        }
        GraphConfig::new(self.graph.tau).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.sampler_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.synthesis.error_rate) {
            return Err(ConfigError::Invalid(format!(
                "synthesis.error_rate must lie in [0, 1], got {}",
                self.synthesis.error_rate
            )));
        }
        if self.evaluation.k == 0 {
            return Err(ConfigError::Invalid("evaluation.k must be at least 1".into()));
        }
        if self.extraction.pool_size == 0 {
            return Err(ConfigError::Invalid("extraction.pool_size must be at least 1".into()));
        }
        if self.lra.max_steps == 0 {
            return Err(ConfigError::Invalid("lra.max_steps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed(), stage)
    }

    pub fn graph_config(&self) -> GraphConfig {
        GraphConfig { tau: self.graph.tau }
    }

    pub fn evolve_config(&self) -> EvolveConfig {
        EvolveConfig {
            max_retries: self.mutation.max_retries,
            seed: self.stage_seed("mutate"),
            model_id: self.backend.chat_model.clone(),
            temperature: self.mutation.temperature,
            operator_weights: self.mutation.operator_weights.clone(),
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        let s = &self.sampler;
        SamplerConfig {
            num_seeds: s.num_seeds,
            target_size: if s.min_size == s.max_size {
                TargetSize::Fixed(s.min_size)
            } else {
                TargetSize::Range(s.min_size, s.max_size)
            },
            restart_prob: s.restart_prob,
            seed: self.stage_seed("sample"),
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        let s = &self.synthesis;
        SynthConfig {
            max_turns: s.max_turns,
            error_rate: s.error_rate,
            max_plan_retries: s.max_plan_retries,
            model_id: self.backend.chat_model.clone(),
            temperature: s.temperature,
            seed: self.stage_seed("synthesize"),
        }
    }

    pub fn router_config(&self, variant: RouterVariant) -> RouterConfig {
        let e = &self.evaluation;
        RouterConfig {
            variant,
            model_id: e.router_model.clone(),
            temperature: e.temperature,
            max_input_chars: e.max_input_chars,
            timeout: e
                .timeout_secs
                .filter(|t| t.is_finite() && *t > 0.0)
                .map(Duration::from_secs_f64),
        }
    }

    pub fn gateway(&self) -> Result<Gateway, ConfigError> {
        let b = &self.backend;
        match b.kind {
            BackendKind::Mock => Ok(Gateway::mock(self.seed())),
            BackendKind::Live => {
                let mut live = LiveConfig::from_env(&b.base_url, &b.api_key_env, &b.embedding_model);
                live.timeout = Duration::from_secs_f64(b.timeout_secs.max(1.0));
                let backend = Arc::new(LiveBackend::new(live).map_err(|e| ConfigError::Invalid(e.to_string()))?);
                Ok(Gateway::new(
                    backend.clone(),
                    backend,
                    GatewayConfig {
                        max_retries: b.max_retries,
                        max_chat_calls: b.max_chat_calls,
                        max_in_flight: b.max_in_flight,
                        cache: b.cache,
                        ..GatewayConfig::default()
                    },
                ))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = PipelineConfig {
            seed: Some(3),
            ..PipelineConfig::default()
        };
        let back = PipelineConfig::from_toml(&cfg.to_toml(), "cfg").unwrap();
        assert_eq!(back, cfg);
        back.validate().unwrap();
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = PipelineConfig::from_toml("seed = 9\n[mutation]\nrounds = 3\n[evaluation]\nrouters = [\"random\"]\nsettings = [\"clean\", \"plus_external\"]\n", "x").unwrap();
        assert_eq!(cfg.mutation.rounds, 3);
        assert_eq!(cfg.mutation.max_retries, 2);
        assert_eq!(cfg.evaluation.routers, vec![RouterVariant::Random]);
        assert_eq!(cfg.evaluation.settings[1], PoolSetting::PlusExternal);
        assert_eq!(cfg.graph.tau, 0.82);
    }

    #[test]
    fn mock_needs_seed() {
        let cfg = PipelineConfig::from_toml("", "x").unwrap();
        assert!(matches!(cfg.validate(), Err(ConfigError::MissingSeed)));
        let live = PipelineConfig::from_toml("[backend]\nkind = \"live\"\n", "x").unwrap();
        live.validate().unwrap();
    }

    #[test]
    fn parse_errors_carry_line() {
        let err = PipelineConfig::from_toml("seed = 1\n[graph]\ntau = \"high\"\n", "run.toml").unwrap_err();
        assert!(err.to_string().starts_with("run.toml:3:"), "{err}");
        let err = PipelineConfig::from_toml("seed = 1\nbogus = 2\n", "run.toml").unwrap_err();
        assert!(err.to_string().starts_with("run.toml:2:"), "{err}");
    }

    #[test]
    fn invalid_values_rejected() {
        let cfg = PipelineConfig::from_toml("seed = 1\n[graph]\ntau = 1.5\n", "x").unwrap();
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
        let cfg = PipelineConfig::from_toml("seed = 1\n[sampler]\nmin_size = 9\nmax_size = 3\n", "x").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn stage_seeds_differ() {
        let cfg = PipelineConfig {
            seed: Some(1),
            ..PipelineConfig::default()
        };
        assert_ne!(cfg.stage_seed("mutate"), cfg.stage_seed("sample"));
        assert_eq!(cfg.sampler_config().target_size, TargetSize::Range(4, 8));
    }
}
