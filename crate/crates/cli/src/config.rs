//! Experiment configuration.
//!
//! One TOML file per experiment. Paths are resolved against the directory
//! holding the config file. Loading validates everything that can be checked
//! without touching datasets or the network.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use radlabel_core::augment::AugmentMode;
use radlabel_core::backend::{GenerationParams, DEFAULT_MAX_IN_FLIGHT};
use radlabel_core::corpus::TaxonomySpec;
use radlabel_core::promptgen::ShotStrategy;
use serde::Deserialize;

use crate::CliError;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_API_KEY_ENV: &str = "RADLABEL_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupportScope {
    #[default]
    Train,
    All,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub id: String,
    pub path: PathBuf,
    /// Drop findings mentioned in fewer reports than this.
    #[serde(default)]
    pub min_support: Option<usize>,
    /// Keep only the most frequently mentioned findings.
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default)]
    pub support_scope: SupportScope,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
    /// Absolute train/dev/test sizes; overrides `fractions` when set.
    #[serde(default)]
    pub counts: Option<[usize; 3]>,
}

fn default_fractions() -> [f64; 3] {
    [0.7, 0.1, 0.2]
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            fractions: default_fractions(),
            counts: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyConfig {
    #[serde(default)]
    pub shots: usize,
    #[serde(default)]
    pub shot_strategy: ShotStrategy,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// Stratified fraction of the training subset used for shots and SFT export.
    #[serde(default)]
    pub train_fraction: Option<f64>,
}

fn default_max_in_flight() -> usize {
    DEFAULT_MAX_IN_FLIGHT
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            shots: 0,
            shot_strategy: ShotStrategy::Uniform,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            train_fraction: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockMode {
    /// Canned answers from a file keyed by report id.
    Canned,
    /// Canonical serialization of the gold labels.
    Gold,
    /// Returns the report text.
    #[default]
    Echo,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EndpointConfig {
    Mock {
        #[serde(default)]
        mode: MockMode,
        #[serde(default)]
        answers: Option<PathBuf>,
    },
    Http {
        base_url: String,
        model: String,
        #[serde(default = "default_key_env")]
        api_key_env: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default = "default_attempts")]
        max_attempts: u32,
        #[serde(default = "default_backoff_ms")]
        initial_backoff_ms: u64,
    },
}

fn default_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}

fn default_timeout() -> u64 {
    300
}

fn default_attempts() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    1000
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig::Mock {
            mode: MockMode::Echo,
            answers: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    #[serde(default = "default_mode")]
    pub mode: AugmentMode,
}

fn default_max_tokens() -> usize {
    2048
}

fn default_mode() -> AugmentMode {
    AugmentMode::Union
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            max_tokens: default_max_tokens(),
            mode: default_mode(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    taxonomy: Vec<TaxonomySpec>,
    #[serde(default)]
    dataset: Vec<DatasetConfig>,
    #[serde(default)]
    split: SplitConfig,
    #[serde(default)]
    classify: ClassifyConfig,
    #[serde(default)]
    generation: Option<GenerationParams>,
    #[serde(default)]
    endpoint: EndpointConfig,
    #[serde(default)]
    augment: AugmentConfig,
}

/// A validated experiment configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub taxonomies: Vec<TaxonomySpec>,
    pub datasets: Vec<DatasetConfig>,
    pub split: SplitConfig,
    pub classify: ClassifyConfig,
    pub generation: GenerationParams,
    pub endpoint: EndpointConfig,
    pub augment: AugmentConfig,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses and validates `text`; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        let seed = raw.seed.unwrap_or(DEFAULT_SEED);
        let mut generation = raw.generation.unwrap_or_default();
        if raw.seed.is_some() {
            generation.seed = seed;
        }
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

        let mut endpoint = raw.endpoint;
        if let EndpointConfig::Mock { answers, .. } = &mut endpoint {
            *answers = answers.take().map(resolve);
        }
        let cfg = RunConfig {
            seed,
            output_dir: resolve(raw.output_dir.unwrap_or_else(|| PathBuf::from("out"))),
            taxonomies: raw.taxonomy,
            datasets: raw
                .dataset
                .into_iter()
                .map(|d| DatasetConfig {
                    path: resolve(d.path),
                    ..d
                })
                .collect(),
            split: raw.split,
            classify: raw.classify,
            generation,
            endpoint,
            augment: raw.augment,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let mut tax_ids = HashSet::new();
        for t in &self.taxonomies {
            if !tax_ids.insert(t.dataset_id()) {
                return Err(invalid(format!("taxonomy `{}` declared twice", t.dataset_id())));
            }
        }
        let mut ds_ids = HashSet::new();
        for d in &self.datasets {
            if !ds_ids.insert(d.id.as_str()) {
                return Err(invalid(format!("dataset `{}` declared twice", d.id)));
            }
            let tax = self
                .taxonomies
                .iter()
                .find(|t| t.dataset_id() == d.id)
                .ok_or_else(|| invalid(format!("dataset `{}` has no declared taxonomy", d.id)))?;
            if d.min_support == Some(0) {
                return Err(invalid(format!("dataset `{}`: min_support must be >= 1", d.id)));
            }
            if let Some(k) = d.top_k {
                if k == 0 || k > tax.len() {
                    return Err(invalid(format!(
                        "dataset `{}`: top_k {k} outside 1..={}",
                        d.id,
                        tax.len()
                    )));
                }
            }
        }
        let f = self.split.fractions;
        if f.iter().any(|x| !x.is_finite() || *x < 0.0) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid(format!(
                "split fractions {f:?} must be nonnegative and sum to 1"
            )));
        }
        if let Some(frac) = self.classify.train_fraction {
            if !(frac > 0.0 && frac <= 1.0) {
                return Err(invalid(format!("train_fraction {frac} outside (0, 1]")));
            }
        }
        if self.classify.max_in_flight == 0 {
            return Err(invalid("max_in_flight must be >= 1"));
        }
        let g = &self.generation;
        if !(0.0..=1.0).contains(&g.min_p) || !g.temperature.is_finite() || g.temperature < 0.0 {
            return Err(invalid("generation: temperature must be >= 0 and min_p in [0, 1]"));
        }
        if g.max_sequence_tokens == 0 {
            return Err(invalid("generation: max_sequence_tokens must be >= 1"));
        }
        if self.augment.max_tokens == 0 {
            return Err(invalid("augment: max_tokens must be >= 1"));
        }
        match &self.endpoint {
            EndpointConfig::Mock {
                mode: MockMode::Canned,
                answers: None,
            } => return Err(invalid("endpoint: canned mock requires `answers`")),
            EndpointConfig::Http { base_url, model, .. } if base_url.is_empty() || model.is_empty() => {
                return Err(invalid("endpoint: http requires base_url and model"))
            }
            EndpointConfig::Http { max_attempts: 0, .. } => return Err(invalid("endpoint: max_attempts must be >= 1")),
            _ => {}
        }
        Ok(())
    }

    pub fn dataset(&self, id: &str) -> Result<&DatasetConfig, CliError> {
        self.datasets
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| invalid(format!("unknown dataset `{id}`")))
    }

    pub fn taxonomy(&self, id: &str) -> Result<&TaxonomySpec, CliError> {
        self.taxonomies
            .iter()
            .find(|t| t.dataset_id() == id)
            .ok_or_else(|| invalid(format!("dataset `{id}` has no declared taxonomy")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [[taxonomy]]
        dataset_id = "casia"
        findings = ["cardiomegaly", "mass"]
        mention_classes = ["positive"]

        [[dataset]]
        id = "casia"
        path = "casia.jsonl"
    "#;

    #[test]
    fn defaults_follow_generation_contract() {
        let cfg = RunConfig::parse(MINIMAL, Path::new("/exp")).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.generation, GenerationParams::default());
        assert_eq!(cfg.classify.max_in_flight, 64);
        assert_eq!(cfg.datasets[0].path, Path::new("/exp/casia.jsonl"));
        assert_eq!(cfg.output_dir, Path::new("/exp/out"));
        assert_eq!(cfg.split.fractions, [0.7, 0.1, 0.2]);
    }

    #[test]
    fn seed_fans_out_to_generation() {
        let cfg = RunConfig::parse(&format!("seed = 7\n{MINIMAL}"), Path::new(".")).unwrap();
        assert_eq!(cfg.generation.seed, 7);
    }

    #[test]
    fn dataset_without_taxonomy_is_rejected() {
        let text = r#"
            [[dataset]]
            id = "padchest"
            path = "p.csv"
        "#;
        let err = RunConfig::parse(text, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("no declared taxonomy"));
    }

    #[test]
    fn invalid_values_are_rejected() {
        let bad_split = format!("{MINIMAL}\n[split]\nfractions = [0.5, 0.5, 0.5]\n");
        assert!(RunConfig::parse(&bad_split, Path::new(".")).is_err());
        let bad_topk = MINIMAL.replace("path = \"casia.jsonl\"", "path = \"casia.jsonl\"\ntop_k = 3");
        assert!(RunConfig::parse(&bad_topk, Path::new(".")).is_err());
        let canned = format!("{MINIMAL}\n[endpoint]\nkind = \"mock\"\nmode = \"canned\"\n");
        assert!(RunConfig::parse(&canned, Path::new(".")).is_err());
        let bad_tax = MINIMAL.replace("\"mass\"]", "\"Cardiomegaly\"]");
        assert!(RunConfig::parse(&bad_tax, Path::new(".")).is_err());
        let unknown = format!("{MINIMAL}\nbogus = 1\n");
        assert!(RunConfig::parse(&unknown, Path::new(".")).is_err());
    }

    #[test]
    fn http_endpoint_parses() {
        let text = format!(
            "{MINIMAL}\n[endpoint]\nkind = \"http\"\nbase_url = \"http://localhost:8000/v1\"\nmodel = \"gemma\"\n"
        );
        let cfg = RunConfig::parse(&text, Path::new(".")).unwrap();
        match cfg.endpoint {
            EndpointConfig::Http {
                api_key_env,
                max_attempts,
                ..
            } => {
                assert_eq!(api_key_env, DEFAULT_API_KEY_ENV);
                assert_eq!(max_attempts, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
