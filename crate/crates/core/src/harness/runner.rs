//! Runs one attack over many member and non-member target sets.

use std::collections::HashSet;
use std::sync::Arc;

use rayon::prelude::*;

use super::config::{ExperimentConfig, LengthBucket};
use super::dataset::{load_dataset, require_image_content};
use super::report::{BucketReport, ExperimentReport, SetRecord};
use super::sampling::{contaminant_count, draw_set, sample_sets, set_rng};
use crate::attacks::{
    image_only_inference, reference_inference_member, reference_inference_nonmember, target_only_inference,
    AttackContext, AttackKind, ImageOnlyParams, SampleSet, ShadowAttack, Verdict,
};
use crate::error::{Error, Result};
use crate::oracle::simulated::mix_seed;
use crate::oracle::{
    FileStore, OracleRegistration, QueryCounters, QueryEngine, ResponseCache, Sample, SimulatedDataset,
};
use crate::similarity::{RemoteEmbeddingProvider, Scorer};

/// Everything a run needs: configuration, oracle access and sample pools.
pub struct Experiment {
    config: ExperimentConfig,
    engine: Arc<QueryEngine>,
    scorer: Arc<Scorer>,
    targets: Vec<Sample>,
    reference: Vec<Sample>,
    shadow: Vec<Sample>,
}

enum Prepared {
    Shadow(Box<ShadowAttack>),
    Reference { pool: Vec<Sample>, membership: bool },
    TargetOnly,
    ImageOnly(ImageOnlyParams),
}

/// A drawn target set awaiting its attack.
struct Job {
    id: String,
    index: usize,
    set: SampleSet,
}

fn as_config(e: Error) -> Error {
    match e {
        Error::InvalidInput(m) => Error::Config(m),
        other => other,
    }
}

fn counter_delta(after: QueryCounters, before: QueryCounters) -> QueryCounters {
    QueryCounters {
        queries: after.queries - before.queries,
        hits: after.hits - before.hits,
        misses: after.misses - before.misses,
    }
}

/// Registers the target and shadow oracles of a simulated dataset.
pub fn simulated_engine(data: &SimulatedDataset, cache: ResponseCache) -> Result<QueryEngine> {
    let mut engine = QueryEngine::new(cache);
    engine.register(OracleRegistration::Simulated(data.target.clone()).instantiate()?);
    engine.register(OracleRegistration::Simulated(data.shadow.clone()).instantiate()?);
    Ok(engine)
}

impl Experiment {
    /// An experiment with empty pools; see the `with_*` builders.
    pub fn new(config: ExperimentConfig, engine: Arc<QueryEngine>, scorer: Arc<Scorer>) -> Result<Self> {
        config.validate()?;
        Ok(Experiment {
            config,
            engine,
            scorer,
            targets: Vec::new(),
            reference: Vec::new(),
            shadow: Vec::new(),
        })
    }

    /// Target samples; their `membership` fields provide the set labels.
    pub fn with_targets(mut self, targets: Vec<Sample>) -> Self {
        self.targets = targets;
        self
    }

    pub fn with_reference(mut self, reference: Vec<Sample>) -> Self {
        self.reference = reference;
        self
    }

    pub fn with_shadow(mut self, shadow: Vec<Sample>) -> Self {
        self.shadow = shadow;
        self
    }

    /// Uses the pools of a simulated dataset, picking the reference pool
    /// that matches the attack.
    pub fn simulated(
        config: ExperimentConfig,
        data: &SimulatedDataset,
        engine: Arc<QueryEngine>,
        scorer: Arc<Scorer>,
    ) -> Result<Self> {
        let reference = match config.attack {
            AttackKind::RefMember => data.reference_members.clone(),
            _ => data.reference_nonmembers.clone(),
        };
        Ok(Experiment::new(config, engine, scorer)?
            .with_targets(data.target_pool())
            .with_reference(reference)
            .with_shadow(data.shadow_pool()))
    }

    /// Loads oracles, embedding providers, cache and datasets named by the config.
    pub fn from_config(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let cache = match &config.cache_dir {
            Some(dir) => ResponseCache::persistent(FileStore::open(dir)?),
            None => ResponseCache::in_memory(),
        };
        let mut engine = QueryEngine::new(cache);
        let mut remote = HashSet::new();
        for path in &config.oracles.registrations {
            let registration = OracleRegistration::load(path)?;
            if matches!(registration, OracleRegistration::Remote(_)) {
                remote.insert(registration.id().to_string());
            }
            engine.register(registration.instantiate()?);
        }
        let mut scorer = Scorer::default();
        for p in &config.embedding_providers {
            scorer.register(Arc::new(RemoteEmbeddingProvider::new(p.id.clone(), p.endpoint.clone())?));
        }

        let required = |path: &Option<std::path::PathBuf>, what: &str| -> Result<Vec<Sample>> {
            let path = path
                .as_ref()
                .ok_or_else(|| Error::config(format!("data.{what} is required for the {} attack", config.attack)))?;
            load_dataset(path)
        };
        let d = &config.data;
        let targets = required(&d.targets, "targets")?;
        let reference = match config.attack {
            AttackKind::RefNonmember => required(&d.reference_nonmembers, "reference_nonmembers")?,
            AttackKind::RefMember => required(&d.reference_members, "reference_members")?,
            _ => Vec::new(),
        };
        let shadow = match config.attack {
            AttackKind::Shadow => required(&d.shadow, "shadow")?,
            _ => Vec::new(),
        };
        if remote.contains(&config.oracles.target) {
            require_image_content(&targets).map_err(as_config)?;
            require_image_content(&reference).map_err(as_config)?;
        }
        if remote.contains(&config.oracles.shadow) {
            require_image_content(&shadow).map_err(as_config)?;
        }
        Ok(Experiment::new(config, Arc::new(engine), Arc::new(scorer))?
            .with_targets(targets)
            .with_reference(reference)
            .with_shadow(shadow))
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn engine(&self) -> &Arc<QueryEngine> {
        &self.engine
    }

    fn context(&self) -> AttackContext<'_> {
        AttackContext::new(&self.engine, &self.scorer)
    }

    fn split_targets(&self) -> Result<(Vec<Sample>, Vec<Sample>)> {
        let mut members = Vec::new();
        let mut nonmembers = Vec::new();
        for s in &self.targets {
            match s.membership {
                Some(true) => members.push(s.clone()),
                Some(false) => nonmembers.push(s.clone()),
                None => {
                    return Err(Error::config(format!(
                        "target sample {} has no membership label",
                        s.id
                    )))
                }
            }
        }
        Ok((members, nonmembers))
    }

    fn prepare(&self) -> Result<Prepared> {
        let cfg = &self.config;
        Ok(match cfg.attack {
            AttackKind::Shadow => {
                self.engine.backend(&cfg.oracles.shadow)?;
                let attack = ShadowAttack::train(&self.context(), &self.shadow, &cfg.oracles.shadow, cfg.shadow_config())
                    .map_err(as_config)?;
                Prepared::Shadow(Box::new(attack))
            }
            AttackKind::RefNonmember | AttackKind::RefMember => {
                let membership = cfg.attack == AttackKind::RefMember;
                if let Some(s) = self.reference.iter().find(|s| s.membership == Some(!membership)) {
                    return Err(Error::config(format!(
                        "reference sample {} is labelled {}, the {} attack needs {}",
                        s.id,
                        if membership { "non-member" } else { "member" },
                        cfg.attack,
                        if membership { "members" } else { "non-members" },
                    )));
                }
                if self.reference.len() < cfg.granularity.reference() {
                    return Err(Error::config(format!(
                        "reference pool has {} samples, granularity {} requested",
                        self.reference.len(),
                        cfg.granularity.reference()
                    )));
                }
                Prepared::Reference {
                    pool: self.reference.clone(),
                    membership,
                }
            }
            AttackKind::TargetOnly => Prepared::TargetOnly,
            AttackKind::ImageOnly => Prepared::ImageOnly(cfg.image_only_params()),
        })
    }

    /// Draws `n_sets` member and `n_sets` non-member sets. Both classes use
    /// the same per-index random streams.
    fn draw_jobs(&self, members: &[Sample], nonmembers: &[Sample]) -> Result<Vec<Job>> {
        let cfg = &self.config;
        if cfg.n_sets == 0 {
            return Ok(Vec::new());
        }
        let seed = mix_seed(cfg.seed, "target-sets");
        let (g, n, r) = (cfg.granularity.target, cfg.n_sets, cfg.heterogeneity_ratio);
        let member_sets = sample_sets(members, g, n, seed, r, Some(nonmembers))?;
        let nonmember_sets = sample_sets(nonmembers, g, n, seed, r, Some(members))?;
        let tagged = |prefix: &'static str, sets: Vec<SampleSet>| {
            sets.into_iter().enumerate().map(move |(index, set)| Job {
                id: format!("{prefix}-{index:04}"),
                index,
                set,
            })
        };
        Ok(tagged("m", member_sets).chain(tagged("n", nonmember_sets)).collect())
    }

    fn attack_set(&self, prepared: &Prepared, index: usize, set: &SampleSet) -> Result<Verdict> {
        let cfg = &self.config;
        let ctx = self.context();
        let target = &cfg.oracles.target;
        match prepared {
            Prepared::Shadow(attack) => attack.infer(&ctx, target, set),
            Prepared::Reference { pool, membership } => {
                let mut rng = set_rng(mix_seed(cfg.seed, "reference-sets"), "reference", index);
                let reference = SampleSet::new(draw_set(pool, cfg.granularity.reference(), &mut rng), Some(*membership))?;
                let t = cfg.temperatures.single;
                if *membership {
                    reference_inference_member(&ctx, &reference, set, target, t, &cfg.metric, cfg.tau())
                } else {
                    reference_inference_nonmember(&ctx, &reference, set, target, t, &cfg.metric, cfg.tau())
                }
            }
            Prepared::TargetOnly => {
                let t = &cfg.temperatures;
                target_only_inference(&ctx, set, target, t.low, t.high, &cfg.metric, cfg.tau())
            }
            Prepared::ImageOnly(params) => image_only_inference(&ctx, set, target, params),
        }
    }

    fn run_job(&self, prepared: &Prepared, job: &Job) -> SetRecord {
        let cfg = &self.config;
        let mut record = SetRecord {
            set_id: job.id.clone(),
            label: job.set.label().expect("target pools are split by membership"),
            granularity: job.set.granularity(),
            contaminants: contaminant_count(cfg.granularity.target, cfg.heterogeneity_ratio),
            signal: None,
            member_score: None,
            verdict: None,
            error: None,
        };
        match self.attack_set(prepared, job.index, &job.set) {
            Ok(v) => {
                record.signal = Some(v.signal);
                record.member_score = Some(v.member_score());
                record.verdict = Some(v.membership);
            }
            Err(e) => record.error = Some(e.to_string()),
        }
        record
    }

    fn parallel<T, R, F>(&self, items: &[T], f: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        if self.config.workers <= 1 {
            return Ok(items.iter().map(f).collect());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers)
            .build()
            .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
        Ok(pool.install(|| items.par_iter().map(f).collect()))
    }

    fn run_jobs(&self, prepared: &Prepared, jobs: &[Job]) -> Result<Vec<SetRecord>> {
        self.parallel(jobs, |job| self.run_job(prepared, job))
    }

    /// Character count of each sample's response at the attack's lowest
    /// temperature; `None` when the query fails.
    fn response_lengths(&self, samples: &[Sample]) -> Result<Vec<Option<usize>>> {
        let cfg = &self.config;
        let t = cfg.lowest_temperature();
        self.parallel(samples, |s| {
            let response = match cfg.attack {
                AttackKind::ImageOnly => {
                    self.engine
                        .query_with_prompt(&cfg.oracles.target, s, &cfg.image_only.prompt, t, 0)
                }
                _ => self.engine.query(&cfg.oracles.target, s, t, 0),
            };
            response.ok().map(|r| r.text.chars().count())
        })
    }

    fn run_bucket(
        &self,
        prepared: &Prepared,
        bucket: LengthBucket,
        members: &[Sample],
        nonmembers: &[Sample],
    ) -> Result<BucketReport> {
        let pick = |pool: &[Sample], lengths: &[Option<usize>]| -> Vec<Sample> {
            pool.iter()
                .zip(lengths)
                .filter(|(_, l)| l.is_some_and(|l| bucket.contains(l)))
                .map(|(s, _)| s.clone())
                .collect()
        };
        let m = pick(members, &self.response_lengths(members)?);
        let n = pick(nonmembers, &self.response_lengths(nonmembers)?);
        Ok(match self.draw_jobs(&m, &n) {
            Ok(jobs) => BucketReport::new(bucket, m.len(), n.len(), None, self.run_jobs(prepared, &jobs)?),
            Err(e) => BucketReport::new(bucket, m.len(), n.len(), Some(e.to_string()), Vec::new()),
        })
    }

    /// Runs the configured attack. Per-set failures are recorded in the
    /// report; configuration problems abort the run.
    pub fn run(&self) -> Result<ExperimentReport> {
        let cfg = &self.config;
        cfg.validate()?;
        self.scorer.validate(&cfg.metric)?;
        self.engine.backend(&cfg.oracles.target)?;
        let before = self.engine.counters();
        let (members, nonmembers) = self.split_targets()?;
        let prepared = self.prepare()?;
        let jobs = self.draw_jobs(&members, &nonmembers).map_err(as_config)?;
        let records = self.run_jobs(&prepared, &jobs)?;
        let mut buckets = Vec::with_capacity(cfg.length_buckets.len());
        for &bucket in &cfg.length_buckets {
            buckets.push(self.run_bucket(&prepared, bucket, &members, &nonmembers)?);
        }
        let counters = counter_delta(self.engine.counters(), before);
        Ok(ExperimentReport::new(cfg.clone(), records, counters, buckets))
    }
}

/// Loads everything the config names and runs it.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    Experiment::from_config(config.clone())?.run()
}
