//! Run configuration file (TOML).
//!
//! Only `mode` and the `[backend]` table are required:
//!
//! ```toml
//! mode = "freeform"
//! [backend]
//! kind = "stubborn"
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::backends::BackendSpec;
use crate::classifier::{Classifier, LexiconConfig, LexiconError};
use crate::engine::SimulationConfig;
use crate::population::{DistributionName, InitialDistribution};
use crate::protocol::{ModelFamily, RetryRule, UpdateMode};
use crate::subjects::{
    enumerate_connotation_settings, Connotation, ConnotationSetting, DiscussionSubject, TextOverrides,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("field `{field}`: {constraint}")]
    Invalid { field: String, constraint: String },
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
}

fn invalid(field: &str, constraint: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        constraint: constraint.into(),
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawDistribution {
    Name(String),
    Custom { full: f64, partial: f64, no: f64 },
}

impl RawDistribution {
    fn resolve(self, field: &str) -> Result<InitialDistribution, ConfigError> {
        let d = match self {
            Self::Name(n) => InitialDistribution::Named(
                n.parse::<DistributionName>()
                    .map_err(|e| invalid(field, e.to_string()))?,
            ),
            Self::Custom { full, partial, no } => InitialDistribution::Custom { full, partial, no },
        };
        d.validate().map_err(|e| invalid(field, e.to_string()))?;
        Ok(d)
    }
}

fn connotation(field: &str, code: i64) -> Result<Connotation, ConfigError> {
    Connotation::from_code(code).map_err(|e| invalid(field, e.to_string()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSubject {
    #[serde(default)]
    item_a: i64,
    #[serde(default)]
    item_b: i64,
    #[serde(default)]
    reason_a: i64,
    #[serde(default)]
    reason_b: i64,
    #[serde(default = "yes")]
    strict_single_nonneutral: bool,
    #[serde(default)]
    text_values: TextOverrides,
}

impl Default for RawSubject {
    fn default() -> Self {
        Self {
            item_a: 0,
            item_b: 0,
            reason_a: 0,
            reason_b: 0,
            strict_single_nonneutral: true,
            text_values: TextOverrides::default(),
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    #[serde(default)]
    distributions: Option<Vec<RawDistribution>>,
    /// Each entry is `[item_a, item_b, reason_a, reason_b]` codes.
    #[serde(default)]
    settings: Option<Vec<[i64; 4]>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mode: UpdateMode,
    backend: BackendSpec,
    #[serde(default)]
    with_memory: bool,
    #[serde(default = "default_agents")]
    n_agents: i64,
    #[serde(default = "default_rounds")]
    n_rounds: i64,
    #[serde(default = "default_sims")]
    n_simulations: i64,
    #[serde(default)]
    distribution: Option<RawDistribution>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    strict_classification: bool,
    #[serde(default)]
    temperature: f64,
    #[serde(default)]
    sequential_updates: bool,
    #[serde(default)]
    model_family: ModelFamily,
    #[serde(default = "default_parallelism")]
    parallelism: i64,
    #[serde(default = "default_checkpoint")]
    checkpoint_every: i64,
    #[serde(default)]
    retry_rule: RetryRule,
    #[serde(default)]
    subject: RawSubject,
    #[serde(default)]
    lexicon: Option<PathBuf>,
    #[serde(default)]
    cache_dir: Option<PathBuf>,
    #[serde(default)]
    grid: Option<RawGrid>,
}

fn default_agents() -> i64 {
    18
}
fn default_rounds() -> i64 {
    90
}
fn default_sims() -> i64 {
    20
}
fn default_parallelism() -> i64 {
    1
}
fn default_checkpoint() -> i64 {
    10
}

/// Which (distribution, subject setting) combinations a grid run covers.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub distributions: Vec<InitialDistribution>,
    pub settings: Vec<ConnotationSetting>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            distributions: DistributionName::ALL.into_iter().map(Into::into).collect(),
            settings: enumerate_connotation_settings(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub simulation: SimulationConfig,
    pub text_overrides: TextOverrides,
    pub lexicon: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub grid: GridSpec,
}

impl RunConfig {
    pub fn classifier(&self) -> Result<Classifier, ConfigError> {
        let lexicon = match &self.lexicon {
            Some(p) => LexiconConfig::load(p)?,
            None => LexiconConfig::default(),
        };
        Ok(Classifier::new(&lexicon)?)
    }

    /// Subject for a grid cell, keeping the configured text values and
    /// strictness.
    pub fn subject_for(&self, setting: ConnotationSetting) -> Result<DiscussionSubject, ConfigError> {
        DiscussionSubject::new(
            setting,
            &self.text_overrides,
            self.simulation.subject.strict_single_nonneutral,
        )
        .map_err(|e| invalid("grid.settings", e.to_string()))
    }
}

fn positive(field: &str, v: i64, min: i64) -> Result<i64, ConfigError> {
    if v < min {
        Err(invalid(field, format!("must be >= {min}, got {v}")))
    } else {
        Ok(v)
    }
}

fn setting_from_codes(field: &str, c: [i64; 4]) -> Result<ConnotationSetting, ConfigError> {
    Ok(ConnotationSetting {
        item_a: connotation(field, c[0])?,
        item_b: connotation(field, c[1])?,
        reason_a: connotation(field, c[2])?,
        reason_b: connotation(field, c[3])?,
    })
}

/// Parses and validates a configuration, relative paths resolved against
/// `base_dir`.
pub fn parse_config(text: &str, base_dir: Option<&Path>) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text)?;
    let n_agents = positive("n_agents", raw.n_agents, 2)? as usize;
    let n_rounds = positive("n_rounds", raw.n_rounds, 0)? as u32;
    let n_simulations = positive("n_simulations", raw.n_simulations, 1)? as u32;
    let parallelism = positive("parallelism", raw.parallelism, 1)? as usize;
    let checkpoint_every = positive("checkpoint_every", raw.checkpoint_every, 0)? as u32;
    if !(raw.temperature.is_finite() && raw.temperature >= 0.0) {
        return Err(invalid("temperature", format!("must be >= 0, got {}", raw.temperature)));
    }
    if raw.retry_rule.trigger.is_empty() {
        return Err(invalid("retry_rule.trigger", "must not be empty"));
    }
    let distribution = match raw.distribution {
        Some(d) => d.resolve("distribution")?,
        None => DistributionName::Equivalent.into(),
    };
    let setting = ConnotationSetting {
        item_a: connotation("subject.item_a", raw.subject.item_a)?,
        item_b: connotation("subject.item_b", raw.subject.item_b)?,
        reason_a: connotation("subject.reason_a", raw.subject.reason_a)?,
        reason_b: connotation("subject.reason_b", raw.subject.reason_b)?,
    };
    let subject = DiscussionSubject::new(setting, &raw.subject.text_values, raw.subject.strict_single_nonneutral)
        .map_err(|e| invalid("subject", e.to_string()))?;
    // Rendering the partial template fails for unsupported reason pairs.
    crate::subjects::render_initial_opinion(crate::subjects::Stance::Partial, &subject)
        .map_err(|e| invalid("subject", e.to_string()))?;
    let mut grid = GridSpec::default();
    if let Some(g) = raw.grid {
        if let Some(ds) = g.distributions {
            grid.distributions = ds
                .into_iter()
                .map(|d| d.resolve("grid.distributions"))
                .collect::<Result<_, _>>()?;
        }
        if let Some(ss) = g.settings {
            grid.settings = ss
                .into_iter()
                .map(|c| setting_from_codes("grid.settings", c))
                .collect::<Result<_, _>>()?;
        }
        if grid.distributions.is_empty() || grid.settings.is_empty() {
            return Err(invalid("grid", "needs at least one distribution and one setting"));
        }
    }
    let resolve = |p: PathBuf| match base_dir {
        Some(b) if p.is_relative() => b.join(p),
        _ => p,
    };
    let simulation = SimulationConfig {
        mode: raw.mode,
        with_memory: raw.with_memory,
        n_agents,
        n_rounds,
        n_simulations,
        distribution,
        subject,
        backend: raw.backend,
        model_family: raw.model_family,
        master_seed: raw.seed,
        strict_classification: raw.strict_classification,
        temperature: raw.temperature,
        sequential_updates: raw.sequential_updates,
        retry_rule: raw.retry_rule,
        parallelism,
        checkpoint_every,
    };
    let cfg = RunConfig {
        simulation,
        text_overrides: raw.subject.text_values,
        lexicon: raw.lexicon.map(resolve),
        cache_dir: raw.cache_dir.map(resolve),
        grid,
    };
    for s in &cfg.grid.settings {
        cfg.subject_for(*s)?;
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text, path.parent())
}
