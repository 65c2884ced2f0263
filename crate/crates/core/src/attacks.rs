//! Set-level membership inference procedures.
//!
//! * shadow-model inference: learn member/non-member feature patterns on a
//!   shadow oracle whose training set is known, then classify the target set;
//! * reference inference: z-test the target set's scores against a reference
//!   set of known status (non-member or member);
//! * target-only inference: z-test the target set's scores at a low against a
//!   high temperature;
//! * image-only inference: self-consistency of repeated image descriptions.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{self, ClassifierModel, FeatureVector, Hyperparameters};
use crate::error::{Error, Result};
use crate::harness::sampling::draw_set;
use crate::oracle::{QueryEngine, Sample};
use crate::similarity::{Scorer, SimilarityMetric};
use crate::statistics::{z_test, ScoreArray, ZTest};

/// Default prompt for image-only inference.
pub const DEFAULT_DESCRIPTION_PROMPT: &str = "Describe this image in detail.";

/// Default shadow feature grid {0.1, 0.2, ..., 1.6}.
pub fn default_temperature_grid() -> Vec<f64> {
    (1..=16).map(|i| f64::from(i) / 10.0).collect()
}

/// A non-empty set of samples with unique ids.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    samples: Vec<Sample>,
    label: Option<bool>,
}

impl SampleSet {
    pub fn new(samples: Vec<Sample>, label: Option<bool>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("sample set is empty"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = samples.iter().find(|s| !seen.insert(s.id.as_str())) {
            return Err(Error::invalid(format!("sample id {} appears twice in a set", dup.id)));
        }
        Ok(SampleSet { samples, label })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn granularity(&self) -> usize {
        self.samples.len()
    }

    pub fn label(&self) -> Option<bool> {
        self.label
    }

    fn answers(&self) -> Result<Vec<&str>> {
        self.samples.iter().map(Sample::answer).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Shadow,
    RefNonmember,
    RefMember,
    TargetOnly,
    ImageOnly,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::Shadow,
        AttackKind::RefNonmember,
        AttackKind::RefMember,
        AttackKind::TargetOnly,
        AttackKind::ImageOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Shadow => "shadow",
            AttackKind::RefNonmember => "ref-nonmember",
            AttackKind::RefMember => "ref-member",
            AttackKind::TargetOnly => "target-only",
            AttackKind::ImageOnly => "image-only",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown attack `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    ClassifierProbability,
    PValue,
    MeanSelfSimilarity,
}

/// Outcome of one attack on one set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub membership: bool,
    pub signal: f64,
    pub signal_kind: SignalKind,
    pub threshold_used: f64,
    pub attack: AttackKind,
}

impl Verdict {
    /// Applies the attack's decision rule to a raw signal.
    pub fn decide(attack: AttackKind, signal: f64, threshold: f64) -> Self {
        let (membership, signal_kind) = match attack {
            AttackKind::Shadow => (signal > threshold, SignalKind::ClassifierProbability),
            AttackKind::RefNonmember | AttackKind::TargetOnly => (signal < threshold, SignalKind::PValue),
            AttackKind::RefMember => (signal > threshold, SignalKind::PValue),
            AttackKind::ImageOnly => (signal > threshold, SignalKind::MeanSelfSimilarity),
        };
        Verdict {
            membership,
            signal,
            signal_kind,
            threshold_used: threshold,
            attack,
        }
    }

    /// Signal oriented so that larger always means "more member-like".
    ///
    /// Attacks that flag members by small p-values rank by `-p`, which orders
    /// sets exactly like `1 - p` but keeps p-values below 1e-16 distinct.
    pub fn member_score(&self) -> f64 {
        match self.attack {
            AttackKind::RefNonmember | AttackKind::TargetOnly => -self.signal,
            _ => self.signal,
        }
    }

    /// Whether `membership` agrees with the decision rule.
    pub fn is_consistent(&self) -> bool {
        self.signal.is_finite() && Verdict::decide(self.attack, self.signal, self.threshold_used) == *self
    }
}

/// Oracle access and similarity scoring shared by every attack.
#[derive(Clone, Copy, Debug)]
pub struct AttackContext<'a> {
    pub engine: &'a QueryEngine,
    pub scorer: &'a Scorer,
}

impl<'a> AttackContext<'a> {
    pub fn new(engine: &'a QueryEngine, scorer: &'a Scorer) -> Self {
        AttackContext { engine, scorer }
    }

    /// Queries every sample once at `temperature` and scores the response
    /// against its ground-truth answer.
    pub fn score_set(
        &self,
        oracle_id: &str,
        set: &SampleSet,
        temperature: f64,
        metric: &SimilarityMetric,
    ) -> Result<ScoreArray> {
        let answers = set.answers()?;
        let responses = set
            .samples()
            .iter()
            .map(|s| self.engine.query(oracle_id, s, temperature, 0).map(|r| r.text))
            .collect::<Result<Vec<_>>>()?;
        ScoreArray::new(self.scorer.score_pairs(metric, &responses, &answers)?)
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("temperature must be positive, got {t}")))
    }
}

/// `[mu_T1, sd_T1, ...]` of the set's similarity scores over the grid.
pub fn build_feature_vector(
    ctx: &AttackContext<'_>,
    set: &SampleSet,
    oracle_id: &str,
    temperatures: &[f64],
    metric: &SimilarityMetric,
) -> Result<FeatureVector> {
    if temperatures.is_empty() {
        return Err(Error::invalid("temperature grid is empty"));
    }
    let mut moments = Vec::with_capacity(temperatures.len());
    for &t in temperatures {
        check_temperature(t)?;
        moments.push(ctx.score_set(oracle_id, set, t, metric)?.mean_std());
    }
    FeatureVector::from_moments(temperatures.to_vec(), &moments)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowConfig {
    pub granularity: usize,
    /// Sets drawn from each shadow half.
    pub sets_per_class: usize,
    pub temperatures: Vec<f64>,
    pub metric: SimilarityMetric,
    pub seed: u64,
    pub hyperparameters: Hyperparameters,
    pub threshold: f64,
}

impl Default for ShadowConfig {
    fn default() -> Self {
        ShadowConfig {
            granularity: 20,
            sets_per_class: 500,
            temperatures: default_temperature_grid(),
            metric: SimilarityMetric::Rouge2,
            seed: 0,
            hyperparameters: Hyperparameters::default(),
            threshold: 0.5,
        }
    }
}

/// Classifier trained on shadow-oracle feature vectors.
#[derive(Clone, Debug)]
pub struct ShadowAttack {
    config: ShadowConfig,
    model: ClassifierModel,
}

impl ShadowAttack {
    /// Splits the shadow pool by the shadow oracle's declared members, draws
    /// `sets_per_class` sets of the configured granularity from each half,
    /// and trains the classifier on their feature vectors (member = 1).
    pub fn train(
        ctx: &AttackContext<'_>,
        shadow_pool: &[Sample],
        shadow_oracle_id: &str,
        config: ShadowConfig,
    ) -> Result<Self> {
        if shadow_pool.is_empty() {
            return Err(Error::invalid("shadow dataset is empty"));
        }
        if config.granularity == 0 || config.sets_per_class == 0 {
            return Err(Error::invalid("shadow granularity and set count must be positive"));
        }
        let declared = ctx.engine.backend(shadow_oracle_id)?.declared_members().ok_or_else(|| {
            Error::config(format!("shadow oracle `{shadow_oracle_id}` does not declare its member ids"))
        })?;
        let (members, nonmembers): (Vec<Sample>, Vec<Sample>) =
            shadow_pool.iter().cloned().partition(|s| declared.contains(&s.id));
        for (name, half) in [("member", &members), ("non-member", &nonmembers)] {
            if half.len() < config.granularity {
                return Err(Error::invalid(format!(
                    "shadow {name} half has {} samples, fewer than granularity {}",
                    half.len(),
                    config.granularity
                )));
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut features = Vec::with_capacity(2 * config.sets_per_class);
        let mut labels = Vec::with_capacity(2 * config.sets_per_class);
        for _ in 0..config.sets_per_class {
            for (half, label) in [(&members, true), (&nonmembers, false)] {
                let set = SampleSet::new(draw_set(half, config.granularity, &mut rng), Some(label))?;
                features.push(build_feature_vector(
                    ctx,
                    &set,
                    shadow_oracle_id,
                    &config.temperatures,
                    &config.metric,
                )?);
                labels.push(label);
            }
        }
        let model = classifier::train(&features, &labels, &config.hyperparameters, config.seed)?;
        Ok(ShadowAttack { config, model })
    }

    pub fn from_model(config: ShadowConfig, model: ClassifierModel) -> Result<Self> {
        if model.input_dim() != 2 * config.temperatures.len() {
            return Err(Error::invalid("classifier input does not match the temperature grid"));
        }
        Ok(ShadowAttack { config, model })
    }

    pub fn model(&self) -> &ClassifierModel {
        &self.model
    }

    pub fn config(&self) -> &ShadowConfig {
        &self.config
    }

    pub fn infer(&self, ctx: &AttackContext<'_>, target_oracle_id: &str, target: &SampleSet) -> Result<Verdict> {
        let features = build_feature_vector(
            ctx,
            target,
            target_oracle_id,
            &self.config.temperatures,
            &self.config.metric,
        )?;
        let probability = self.model.predict(features.values())?;
        Ok(Verdict::decide(AttackKind::Shadow, probability, self.config.threshold))
    }
}

/// Trains on the shadow oracle and classifies one target set.
pub fn shadow_model_inference(
    ctx: &AttackContext<'_>,
    shadow_pool: &[Sample],
    shadow_oracle_id: &str,
    target_oracle_id: &str,
    target: &SampleSet,
    config: ShadowConfig,
) -> Result<Verdict> {
    ShadowAttack::train(ctx, shadow_pool, shadow_oracle_id, config)?.infer(ctx, target_oracle_id, target)
}

/// Scores and z-statistic of a reference-set comparison.
#[derive(Clone, Debug)]
pub struct ReferenceComparison {
    pub target_scores: ScoreArray,
    pub reference_scores: ScoreArray,
    pub test: ZTest,
}

fn score_reference_pair(
    ctx: &AttackContext<'_>,
    reference: &SampleSet,
    target: &SampleSet,
    oracle_id: &str,
    temperature: f64,
    metric: &SimilarityMetric,
) -> Result<(ScoreArray, ScoreArray)> {
    check_temperature(temperature)?;
    let reference_scores = ctx.score_set(oracle_id, reference, temperature, metric)?;
    let target_scores = ctx.score_set(oracle_id, target, temperature, metric)?;
    Ok((reference_scores, target_scores))
}

/// Reference inference against a known non-member set.
///
/// `p = 1 - Phi((mean_t - mean_r) / se)`; the target is a member when
/// `p < tau`, i.e. when its answers are significantly closer to the ground
/// truth than the non-members'.
pub fn reference_inference_nonmember(
    ctx: &AttackContext<'_>,
    reference: &SampleSet,
    target: &SampleSet,
    oracle_id: &str,
    temperature: f64,
    metric: &SimilarityMetric,
    tau: f64,
) -> Result<Verdict> {
    let (reference_scores, target_scores) =
        score_reference_pair(ctx, reference, target, oracle_id, temperature, metric)?;
    let p = z_test(&target_scores, &reference_scores).p_value.value;
    Ok(Verdict::decide(AttackKind::RefNonmember, p, tau))
}

/// Reference inference against a known member set.
///
/// The one-sided test runs in the opposite direction,
/// `p = 1 - Phi((mean_r - mean_t) / se)`, so a target that falls
/// significantly short of the members lands in the low-p tail. The target is
/// a member when `p > tau`.
pub fn reference_inference_member(
    ctx: &AttackContext<'_>,
    reference: &SampleSet,
    target: &SampleSet,
    oracle_id: &str,
    temperature: f64,
    metric: &SimilarityMetric,
    tau: f64,
) -> Result<Verdict> {
    let (reference_scores, target_scores) =
        score_reference_pair(ctx, reference, target, oracle_id, temperature, metric)?;
    let p = z_test(&reference_scores, &target_scores).p_value.value;
    Ok(Verdict::decide(AttackKind::RefMember, p, tau))
}

/// Target-only inference: `p = 1 - Phi((mean_low - mean_high) / se)` over
/// the set's scores at `t_low` and `t_high`; member when `p < tau`.
pub fn target_only_inference(
    ctx: &AttackContext<'_>,
    target: &SampleSet,
    oracle_id: &str,
    t_low: f64,
    t_high: f64,
    metric: &SimilarityMetric,
    tau: f64,
) -> Result<Verdict> {
    check_temperature(t_low)?;
    check_temperature(t_high)?;
    if t_low >= t_high {
        return Err(Error::invalid(format!(
            "low temperature {t_low} must be below high temperature {t_high}"
        )));
    }
    let low = ctx.score_set(oracle_id, target, t_low, metric)?;
    let high = ctx.score_set(oracle_id, target, t_high, metric)?;
    let p = z_test(&low, &high).p_value.value;
    Ok(Verdict::decide(AttackKind::TargetOnly, p, tau))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageOnlyParams {
    pub temperature: f64,
    pub repeats: u32,
    pub metric: SimilarityMetric,
    pub threshold: f64,
    pub prompt: String,
}

impl Default for ImageOnlyParams {
    fn default() -> Self {
        ImageOnlyParams {
            temperature: 0.5,
            repeats: 10,
            metric: SimilarityMetric::Rouge2,
            threshold: 0.5,
            prompt: DEFAULT_DESCRIPTION_PROMPT.to_string(),
        }
    }
}

/// Mean pairwise similarity of `repeats` descriptions of one image.
pub fn image_self_similarity(
    ctx: &AttackContext<'_>,
    sample: &Sample,
    oracle_id: &str,
    params: &ImageOnlyParams,
) -> Result<f64> {
    if params.repeats < 2 {
        return Err(Error::invalid(format!(
            "image-only inference needs at least 2 repeats, got {}",
            params.repeats
        )));
    }
    check_temperature(params.temperature)?;
    let responses = (0..params.repeats)
        .map(|i| {
            ctx.engine
                .query_with_prompt(oracle_id, sample, &params.prompt, params.temperature, i)
                .map(|r| r.text)
        })
        .collect::<Result<Vec<_>>>()?;
    ctx.scorer.pairwise_mean_similarity(&responses, &params.metric)
}

/// Image-only inference: member when the set's mean self-similarity exceeds
/// the threshold. Answers are not needed.
pub fn image_only_inference(
    ctx: &AttackContext<'_>,
    images: &SampleSet,
    oracle_id: &str,
    params: &ImageOnlyParams,
) -> Result<Verdict> {
    let per_image = images
        .samples()
        .iter()
        .map(|s| image_self_similarity(ctx, s, oracle_id, params))
        .collect::<Result<Vec<_>>>()?;
    let mean = ScoreArray::new(per_image)?.mean();
    Ok(Verdict::decide(AttackKind::ImageOnly, mean, params.threshold))
}
