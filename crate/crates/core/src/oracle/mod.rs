//! Black-box access to vision-language oracles at a caller-chosen temperature.
//!
//! Every query goes through [`QueryEngine`], which consults the response
//! cache before dispatching to a backend and counts hits and misses.

pub mod cache;
pub mod remote;
pub mod sample;
pub mod simulated;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use cache::{CacheKey, FileStore, Lookup, ResponseCache, StoreStats};
pub use remote::{RemoteOracle, RemoteRegistration};
pub use sample::{ImageRef, Sample};
pub use simulated::{
    build_simulated_dataset, simulated_generate, softmax_with_temperature, SimulatedDataset, SimulatedOracle,
    SimulatedRegistration, SimulatedSampleProfile, SimulationConfig,
};

use crate::error::{Error, Result};

/// One query as seen by a backend.
pub struct OracleRequest<'a> {
    pub sample: &'a Sample,
    pub prompt: &'a str,
    pub temperature: f64,
    pub repeat_index: u32,
    pub key: &'a CacheKey,
}

pub trait OracleBackend: Send + Sync {
    fn id(&self) -> &str;

    fn respond(&self, request: &OracleRequest<'_>) -> Result<String>;

    /// Ids of the samples this oracle was trained on, when the operator
    /// knows them.
    fn declared_members(&self) -> Option<&HashSet<String>> {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub text: String,
    pub temperature: f64,
    pub repeat_index: u32,
    pub oracle_id: String,
    pub cached: bool,
}

/// How to instantiate an oracle backend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleRegistration {
    Simulated(SimulatedRegistration),
    Remote(RemoteRegistration),
}

impl OracleRegistration {
    pub fn id(&self) -> &str {
        match self {
            OracleRegistration::Simulated(r) => &r.id,
            OracleRegistration::Remote(r) => &r.id,
        }
    }

    pub fn instantiate(self) -> Result<Arc<dyn OracleBackend>> {
        Ok(match self {
            OracleRegistration::Simulated(r) => Arc::new(SimulatedOracle::new(r)?),
            OracleRegistration::Remote(r) => Arc::new(RemoteOracle::new(r)?),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("registration serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Snapshot of query accounting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryCounters {
    pub queries: u64,
    pub hits: u64,
    pub misses: u64,
}

#[derive(Default)]
struct AtomicCounters {
    queries: AtomicU64,
    hits: AtomicU64,
    misses: AtomicU64,
}

/// Registry of oracle backends in front of a shared response cache.
pub struct QueryEngine {
    backends: HashMap<String, Arc<dyn OracleBackend>>,
    cache: ResponseCache,
    counters: AtomicCounters,
}

impl fmt::Debug for QueryEngine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut ids: Vec<_> = self.backends.keys().collect();
        ids.sort();
        f.debug_struct("QueryEngine")
            .field("backends", &ids)
            .field("counters", &self.counters())
            .finish()
    }
}

impl QueryEngine {
    pub fn new(cache: ResponseCache) -> Self {
        QueryEngine {
            backends: HashMap::new(),
            cache,
            counters: AtomicCounters::default(),
        }
    }

    pub fn in_memory() -> Self {
        QueryEngine::new(ResponseCache::in_memory())
    }

    pub fn register(&mut self, backend: Arc<dyn OracleBackend>) {
        self.backends.insert(backend.id().to_string(), backend);
    }

    pub fn with_backend(mut self, backend: Arc<dyn OracleBackend>) -> Self {
        self.register(backend);
        self
    }

    pub fn backend(&self, oracle_id: &str) -> Result<&Arc<dyn OracleBackend>> {
        self.backends
            .get(oracle_id)
            .ok_or_else(|| Error::config(format!("oracle `{oracle_id}` is not registered")))
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn counters(&self) -> QueryCounters {
        QueryCounters {
            queries: self.counters.queries.load(Ordering::Relaxed),
            hits: self.counters.hits.load(Ordering::Relaxed),
            misses: self.counters.misses.load(Ordering::Relaxed),
        }
    }

    pub fn reset_counters(&self) {
        self.counters.queries.store(0, Ordering::Relaxed);
        self.counters.hits.store(0, Ordering::Relaxed);
        self.counters.misses.store(0, Ordering::Relaxed);
    }

    /// Asks the sample's own question.
    pub fn query(&self, oracle_id: &str, sample: &Sample, temperature: f64, repeat_index: u32) -> Result<OracleResponse> {
        self.query_with_prompt(oracle_id, sample, &sample.question, temperature, repeat_index)
    }

    /// Queries with an explicit prompt. The cache key covers the oracle, the
    /// image hash, the prompt, the temperature (to 1e-3) and the repeat index.
    pub fn query_with_prompt(
        &self,
        oracle_id: &str,
        sample: &Sample,
        prompt: &str,
        temperature: f64,
        repeat_index: u32,
    ) -> Result<OracleResponse> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
        }
        let backend = self.backend(oracle_id)?;
        let key = CacheKey::new(oracle_id, &sample.image.sha256, prompt, temperature, repeat_index);
        self.counters.queries.fetch_add(1, Ordering::Relaxed);
        let (text, lookup) = self.cache.get_or_insert_with(&key, || {
            backend.respond(&OracleRequest {
                sample,
                prompt,
                temperature,
                repeat_index,
                key: &key,
            })
        })?;
        let counter = match lookup {
            Lookup::Hit => &self.counters.hits,
            Lookup::Miss => &self.counters.misses,
        };
        counter.fetch_add(1, Ordering::Relaxed);
        Ok(OracleResponse {
            text,
            temperature,
            repeat_index,
            oracle_id: oracle_id.to_string(),
            cached: lookup == Lookup::Hit,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::rouge2;

    fn engine() -> (QueryEngine, SimulatedDataset) {
        let config = SimulationConfig {
            pools: simulated::PoolSizes {
                target_members: 4,
                target_nonmembers: 4,
                reference_members: 1,
                reference_nonmembers: 1,
                shadow_members: 1,
                shadow_nonmembers: 1,
            },
            ..SimulationConfig::default()
        };
        let data = build_simulated_dataset(&config, 5).unwrap();
        let engine = QueryEngine::in_memory()
            .with_backend(OracleRegistration::Simulated(data.target.clone()).instantiate().unwrap());
        (engine, data)
    }

    #[test]
    fn second_identical_query_is_cached() {
        let (engine, data) = engine();
        let s = &data.target_members[0];
        let a = engine.query("sim-target", s, 0.7, 0).unwrap();
        let b = engine.query("sim-target", s, 0.7, 0).unwrap();
        assert!(!a.cached && b.cached);
        assert_eq!(a.text, b.text);
        assert_eq!(engine.counters(), QueryCounters { queries: 2, hits: 1, misses: 1 });
    }

    #[test]
    fn repeat_index_is_part_of_the_key() {
        let (engine, data) = engine();
        let s = &data.target_nonmembers[0];
        engine.query("sim-target", s, 1.0, 0).unwrap();
        let r = engine.query("sim-target", s, 1.0, 1).unwrap();
        assert!(!r.cached);
        assert_eq!(r.repeat_index, 1);
        assert_eq!(engine.counters().misses, 2);
    }

    #[test]
    fn low_temperature_member_response_matches_answer() {
        let (engine, data) = engine();
        let oracle = SimulatedOracle::new(data.target.clone()).unwrap();
        for s in &data.target_members {
            let profile = oracle.profile(&s.id);
            let dominant = (0..profile.token_sequence.len()).all(|p| {
                let scores = profile.scores_at(p);
                let best = (0..scores.len()).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
                best as u32 == profile.token_sequence[p]
            });
            let r = engine.query("sim-target", s, 0.01, 0).unwrap();
            if dominant {
                assert_eq!(r.text, s.answer.clone().unwrap());
            } else {
                assert!(rouge2(&r.text, s.answer().unwrap()) > 0.5);
            }
        }
    }

    #[test]
    fn unknown_oracle_and_bad_temperature_fail() {
        let (engine, data) = engine();
        let s = &data.target_members[0];
        assert!(matches!(engine.query("nope", s, 1.0, 0), Err(Error::Config(_))));
        assert!(matches!(engine.query("sim-target", s, 0.0, 0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn registration_round_trips_through_json() {
        let (_, data) = engine();
        let reg = OracleRegistration::Simulated(data.shadow.clone());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shadow.json");
        reg.save(&path).unwrap();
        assert_eq!(OracleRegistration::load(&path).unwrap(), reg);
    }
}
