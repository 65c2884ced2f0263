//! Experiment configuration, read from TOML.
//!
//! ```toml
//! attack = "ref-nonmember"
//! seed = 7
//! n_sets = 200
//! metric = "rouge2"
//! length_buckets = [[0, 150], [150, 100000]]
//!
//! [granularity]
//! target = 60
//!
//! [oracles]
//! target = "sim-target"
//! registrations = ["target_oracle.json"]
//!
//! [data]
//! targets = "targets.jsonl"
//! reference_nonmembers = "reference_nonmembers.jsonl"
//! ```
//!
//! Relative paths resolve against the directory of the config file. Tokens
//! never appear here: endpoints name the environment variable holding them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{default_temperature_grid, AttackKind, ImageOnlyParams, ShadowConfig, DEFAULT_DESCRIPTION_PROMPT};
use crate::classifier::Hyperparameters;
use crate::error::{Error, Result};
use crate::oracle::simulated::{SIM_SHADOW_ID, SIM_TARGET_ID};
use crate::similarity::SimilarityMetric;
use crate::transport::HttpEndpoint;

/// Half-open character-count interval `[min, max)` of oracle responses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthBucket(pub usize, pub usize);

impl LengthBucket {
    pub fn contains(&self, chars: usize) -> bool {
        self.0 <= chars && chars < self.1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Granularities {
    pub target: usize,
    /// Defaults to the target granularity.
    pub reference: Option<usize>,
    pub shadow: usize,
}

impl Default for Granularities {
    fn default() -> Self {
        Granularities {
            target: 60,
            reference: None,
            shadow: 20,
        }
    }
}

impl Granularities {
    pub fn reference(&self) -> usize {
        self.reference.unwrap_or(self.target)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Temperatures {
    /// Feature grid of the shadow attack.
    pub grid: Vec<f64>,
    /// Query temperature of the reference attacks.
    pub single: f64,
    pub low: f64,
    pub high: f64,
    /// Description temperature of the image-only attack.
    pub image: f64,
}

impl Default for Temperatures {
    fn default() -> Self {
        Temperatures {
            grid: default_temperature_grid(),
            single: 0.1,
            low: 0.1,
            high: 1.6,
            image: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageOnlySection {
    pub k: u32,
    pub prompt: String,
}

impl Default for ImageOnlySection {
    fn default() -> Self {
        ImageOnlySection {
            k: 10,
            prompt: DEFAULT_DESCRIPTION_PROMPT.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShadowSection {
    pub sets_per_class: usize,
    pub hyperparameters: Hyperparameters,
}

impl Default for ShadowSection {
    fn default() -> Self {
        ShadowSection {
            sets_per_class: 500,
            hyperparameters: Hyperparameters::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub target: String,
    pub shadow: String,
    /// Registration files (JSON) of every oracle the run needs.
    pub registrations: Vec<PathBuf>,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            target: SIM_TARGET_ID.to_string(),
            shadow: SIM_SHADOW_ID.to_string(),
            registrations: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    /// Target samples with membership labels.
    pub targets: Option<PathBuf>,
    pub reference_nonmembers: Option<PathBuf>,
    pub reference_members: Option<PathBuf>,
    pub shadow: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingProviderConfig {
    pub id: String,
    pub endpoint: HttpEndpoint,
}

fn default_n_sets() -> usize {
    200
}

fn default_workers() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub attack: AttackKind,
    #[serde(default)]
    pub seed: u64,
    /// Sets per class.
    #[serde(default = "default_n_sets")]
    pub n_sets: usize,
    #[serde(default)]
    pub metric: SimilarityMetric,
    /// Decision threshold; defaults to 0.05 for p-value attacks and 0.5 otherwise.
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub heterogeneity_ratio: f64,
    #[serde(default)]
    pub length_buckets: Vec<LengthBucket>,
    #[serde(default)]
    pub granularity: Granularities,
    #[serde(default)]
    pub temperatures: Temperatures,
    #[serde(default)]
    pub image_only: ImageOnlySection,
    #[serde(default)]
    pub shadow: ShadowSection,
    #[serde(default)]
    pub oracles: OracleSection,
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default)]
    pub embedding_providers: Vec<EmbeddingProviderConfig>,
    /// Persistent response cache; in-memory only when absent.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn new(attack: AttackKind) -> Self {
        ExperimentConfig {
            attack,
            seed: 0,
            n_sets: default_n_sets(),
            metric: SimilarityMetric::default(),
            tau: None,
            heterogeneity_ratio: 0.0,
            length_buckets: Vec::new(),
            granularity: Granularities::default(),
            temperatures: Temperatures::default(),
            image_only: ImageOnlySection::default(),
            shadow: ShadowSection::default(),
            oracles: OracleSection::default(),
            data: DataPaths::default(),
            embedding_providers: Vec::new(),
            cache_dir: None,
            output_dir: None,
            workers: default_workers(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Parses `path` and resolves its relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = ExperimentConfig::from_toml(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        config.resolve_paths(path.parent().unwrap_or_else(|| Path::new("")));
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.oracles.registrations.iter_mut().for_each(fix);
        for p in [
            &mut self.data.targets,
            &mut self.data.reference_nonmembers,
            &mut self.data.reference_members,
            &mut self.data.shadow,
            &mut self.cache_dir,
            &mut self.output_dir,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau.unwrap_or(match self.attack {
            AttackKind::RefNonmember | AttackKind::RefMember | AttackKind::TargetOnly => 0.05,
            AttackKind::Shadow | AttackKind::ImageOnly => 0.5,
        })
    }

    /// Temperature whose responses decide length buckets.
    pub fn lowest_temperature(&self) -> f64 {
        let t = &self.temperatures;
        match self.attack {
            AttackKind::Shadow => t.grid.iter().copied().fold(f64::INFINITY, f64::min),
            AttackKind::RefNonmember | AttackKind::RefMember => t.single,
            AttackKind::TargetOnly => t.low,
            AttackKind::ImageOnly => t.image,
        }
    }

    pub fn shadow_config(&self) -> ShadowConfig {
        ShadowConfig {
            granularity: self.granularity.shadow,
            sets_per_class: self.shadow.sets_per_class,
            temperatures: self.temperatures.grid.clone(),
            metric: self.metric.clone(),
            seed: crate::oracle::simulated::mix_seed(self.seed, "shadow-training"),
            hyperparameters: self.shadow.hyperparameters.clone(),
            threshold: self.tau(),
        }
    }

    pub fn image_only_params(&self) -> ImageOnlyParams {
        ImageOnlyParams {
            temperature: self.temperatures.image,
            repeats: self.image_only.k,
            metric: self.metric.clone(),
            threshold: self.tau(),
            prompt: self.image_only.prompt.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        let g = &self.granularity;
        if g.target == 0 || g.reference() == 0 || g.shadow == 0 {
            return fail("granularities must be positive".into());
        }
        if self.shadow.sets_per_class == 0 || self.workers == 0 {
            return fail("shadow.sets_per_class and workers must be positive".into());
        }
        if self.image_only.k < 2 {
            return fail(format!("image_only.k must be at least 2, got {}", self.image_only.k));
        }
        if !(0.0..=1.0).contains(&self.heterogeneity_ratio) {
            return fail(format!("heterogeneity_ratio {} outside [0, 1]", self.heterogeneity_ratio));
        }
        if !self.tau().is_finite() {
            return fail("tau must be finite".into());
        }
        let t = &self.temperatures;
        if t.grid.is_empty() {
            return fail("temperature grid is empty".into());
        }
        for &x in t.grid.iter().chain([&t.single, &t.low, &t.high, &t.image]) {
            if !(x > 0.0 && x.is_finite()) {
                return fail(format!("temperature {x} is not positive"));
            }
        }
        if t.low >= t.high {
            return fail(format!("temperatures.low {} must be below temperatures.high {}", t.low, t.high));
        }
        let mut buckets = self.length_buckets.clone();
        buckets.sort_by_key(|b| b.0);
        for b in &buckets {
            if b.0 >= b.1 {
                return fail(format!("length bucket [{}, {}) is empty", b.0, b.1));
            }
        }
        for w in buckets.windows(2) {
            if w[1].0 < w[0].1 {
                return fail(format!(
                    "length buckets [{}, {}) and [{}, {}) overlap",
                    w[0].0, w[0].1, w[1].0, w[1].1
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_toml("attack = \"target-only\"").unwrap();
        assert_eq!(c.n_sets, 200);
        assert_eq!(c.tau(), 0.05);
        assert_eq!(c.granularity.reference(), 60);
        assert_eq!(c.temperatures.grid.len(), 16);
        assert_eq!(c.lowest_temperature(), 0.1);
    }

    #[test]
    fn toml_round_trip() {
        let mut c = ExperimentConfig::new(AttackKind::Shadow);
        c.length_buckets = vec![LengthBucket(0, 100), LengthBucket(100, 400)];
        c.metric = SimilarityMetric::embedding_fallback();
        c.granularity.reference = Some(30);
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for body in [
            "heterogeneity_ratio = 1.5",
            "length_buckets = [[0, 100], [50, 200]]",
            "length_buckets = [[10, 10]]",
            "[granularity]\ntarget = 0",
            "[temperatures]\nlow = 1.0\nhigh = 0.5",
            "[image_only]\nk = 1",
            "unknown_field = 3",
        ] {
            let text = format!("attack = \"ref-member\"\n{body}");
            assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::Config(_))), "{body}");
        }
    }

    #[test]
    fn relative_paths_resolve_against_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(
            &path,
            "attack = \"image-only\"\ncache_dir = \"cache\"\n[data]\ntargets = \"/abs/t.jsonl\"\nshadow = \"s.jsonl\"",
        )
        .unwrap();
        let c = ExperimentConfig::load(&path).unwrap();
        assert_eq!(c.cache_dir.unwrap(), dir.path().join("cache"));
        assert_eq!(c.data.targets.unwrap(), PathBuf::from("/abs/t.jsonl"));
        assert_eq!(c.data.shadow.unwrap(), dir.path().join("s.jsonl"));
    }
}
