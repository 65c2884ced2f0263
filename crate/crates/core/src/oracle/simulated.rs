//! Simulated vision-language oracle.
//!
//! Every sample owns a ground-truth token sequence and, per position, a
//! vector of base scores over the vocabulary drawn i.i.d. from N(0, 1). The
//! oracle adds a margin to the ground-truth token's score (larger for its
//! training members) and samples each position from the temperature softmax
//! `p_i = exp(z_i / T) / sum_j exp(z_j / T)`. Memorized samples therefore
//! answer almost verbatim at low temperature and degrade quickly as the
//! temperature rises, while non-members are only weakly tied to the answer.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::sample::{ImageRef, Sample};
use super::{OracleBackend, OracleRequest};
use crate::error::{Error, Result};

/// Number of samples in each simulated pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolSizes {
    pub target_members: usize,
    pub target_nonmembers: usize,
    pub reference_members: usize,
    pub reference_nonmembers: usize,
    pub shadow_members: usize,
    pub shadow_nonmembers: usize,
}

impl Default for PoolSizes {
    fn default() -> Self {
        PoolSizes {
            target_members: 1000,
            target_nonmembers: 1000,
            reference_members: 500,
            reference_nonmembers: 500,
            shadow_members: 1000,
            shadow_nonmembers: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub vocab_size: usize,
    pub min_length: usize,
    pub max_length: usize,
    pub member_margin: f64,
    pub nonmember_margin: f64,
    pub pools: PoolSizes,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            vocab_size: 64,
            min_length: 12,
            max_length: 48,
            member_margin: 4.0,
            nonmember_margin: 1.0,
            pools: PoolSizes::default(),
        }
    }
}

impl SimulationConfig {
    /// Same world with no membership signal at all.
    pub fn zero_margin() -> Self {
        SimulationConfig {
            member_margin: 0.0,
            nonmember_margin: 0.0,
            ..SimulationConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::invalid("vocabulary needs at least two tokens"));
        }
        if self.min_length == 0 || self.min_length > self.max_length {
            return Err(Error::invalid(format!(
                "invalid sequence length range {}..={}",
                self.min_length, self.max_length
            )));
        }
        if !self.member_margin.is_finite() || !self.nonmember_margin.is_finite() {
            return Err(Error::invalid("margins must be finite"));
        }
        // equal margins are the no-signal control; a reversed order is a mistake
        if self.member_margin < self.nonmember_margin {
            return Err(Error::invalid("member margin must not be below the non-member margin"));
        }
        let p = &self.pools;
        let counts = [
            p.target_members,
            p.target_nonmembers,
            p.reference_members,
            p.reference_nonmembers,
            p.shadow_members,
            p.shadow_nonmembers,
        ];
        if counts.contains(&0) {
            return Err(Error::invalid("every simulated pool needs a positive sample count"));
        }
        Ok(())
    }
}

/// Word used to render token `id`; unique for ids below 4900.
pub fn token_word(id: u32) -> String {
    const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
    const VOWELS: &[u8] = b"aeiou";
    let syllable = |n: u32| {
        let n = n as usize % (CONSONANTS.len() * VOWELS.len());
        [CONSONANTS[n / VOWELS.len()] as char, VOWELS[n % VOWELS.len()] as char]
    };
    let hi = syllable(id / 70);
    let lo = syllable(id % 70);
    [hi[0], hi[1], lo[0], lo[1]].iter().collect()
}

pub fn render_tokens(tokens: &[u32]) -> String {
    tokens.iter().map(|&t| token_word(t)).collect::<Vec<_>>().join(" ")
}

/// Temperature softmax of a score vector.
pub fn softmax_with_temperature(scores: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    if scores.is_empty() {
        return Err(Error::invalid("softmax of an empty score vector"));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = scores.iter().map(|s| ((s - max) / temperature).exp()).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(probs)
}

/// Generative state of one sample inside a simulated oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedSampleProfile {
    pub token_sequence: Vec<u32>,
    pub vocab_size: usize,
    /// `token_sequence.len()` rows of `vocab_size` base scores.
    pub base_scores: Vec<Vec<f64>>,
    pub margin: f64,
}

impl SimulatedSampleProfile {
    /// Score vector at `position`, ground-truth token boosted by the margin.
    pub fn scores_at(&self, position: usize) -> Vec<f64> {
        let mut scores = self.base_scores[position].clone();
        scores[self.token_sequence[position] as usize] += self.margin;
        scores
    }

    pub fn distribution_at(&self, position: usize, temperature: f64) -> Result<Vec<f64>> {
        softmax_with_temperature(&self.scores_at(position), temperature)
    }

    pub fn answer(&self) -> String {
        render_tokens(&self.token_sequence)
    }
}

/// Samples one token per position from the temperature softmax, in order.
pub fn simulated_generate_tokens(profile: &SimulatedSampleProfile, temperature: f64, seed: u64) -> Result<Vec<u32>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(profile.token_sequence.len());
    for position in 0..profile.token_sequence.len() {
        let probs = profile.distribution_at(position, temperature)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = probs.len() - 1;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                chosen = i;
                break;
            }
        }
        out.push(chosen as u32);
    }
    Ok(out)
}

pub fn simulated_generate(profile: &SimulatedSampleProfile, temperature: f64, seed: u64) -> Result<String> {
    Ok(render_tokens(&simulated_generate_tokens(profile, temperature, seed)?))
}

/// Deterministic generator of sample profiles for one simulated world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatedWorld {
    pub seed: u64,
    pub config: SimulationConfig,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn mix_seed(seed: u64, label: &str) -> u64 {
    label
        .bytes()
        .fold(splitmix(seed), |h, b| splitmix(h ^ u64::from(b)))
}

impl SimulatedWorld {
    fn rng_for(&self, sample_id: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix_seed(self.seed, sample_id))
    }

    pub fn token_sequence(&self, sample_id: &str) -> Vec<u32> {
        let mut rng = self.rng_for(sample_id);
        self.draw_tokens(&mut rng)
    }

    fn draw_tokens(&self, rng: &mut ChaCha8Rng) -> Vec<u32> {
        let c = &self.config;
        let len = rng.random_range(c.min_length..=c.max_length);
        (0..len).map(|_| rng.random_range(0..c.vocab_size as u32)).collect()
    }

    pub fn profile(&self, sample_id: &str, margin: f64) -> SimulatedSampleProfile {
        let mut rng = self.rng_for(sample_id);
        let token_sequence = self.draw_tokens(&mut rng);
        let v = self.config.vocab_size;
        let base_scores = token_sequence
            .iter()
            .map(|_| (0..v).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        SimulatedSampleProfile {
            token_sequence,
            vocab_size: v,
            base_scores,
            margin,
        }
    }

    pub fn make_sample(&self, id: String, membership: Option<bool>) -> Sample {
        let answer = render_tokens(&self.token_sequence(&id));
        Sample {
            image: ImageRef::from_bytes(format!("simulated-image:{id}").into_bytes()),
            question: format!("What does image {id} show?"),
            answer: Some(answer),
            membership,
            id,
        }
    }
}

/// Registration record of a simulated oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatedRegistration {
    pub id: String,
    pub world: SimulatedWorld,
    /// Samples the simulated model was "trained" on.
    pub member_ids: Vec<String>,
    /// Whether the member list is exposed to attacks (shadow oracles only).
    #[serde(default)]
    pub declare_members: bool,
}

pub struct SimulatedOracle {
    id: String,
    world: SimulatedWorld,
    members: HashSet<String>,
    declare_members: bool,
}

impl SimulatedOracle {
    pub fn new(registration: SimulatedRegistration) -> Result<Self> {
        registration.world.config.validate()?;
        Ok(SimulatedOracle {
            id: registration.id,
            world: registration.world,
            members: registration.member_ids.into_iter().collect(),
            declare_members: registration.declare_members,
        })
    }

    pub fn is_member(&self, sample_id: &str) -> bool {
        self.members.contains(sample_id)
    }

    pub fn profile(&self, sample_id: &str) -> SimulatedSampleProfile {
        let c = &self.world.config;
        let margin = if self.is_member(sample_id) {
            c.member_margin
        } else {
            c.nonmember_margin
        };
        self.world.profile(sample_id, margin)
    }
}

impl OracleBackend for SimulatedOracle {
    fn id(&self) -> &str {
        &self.id
    }

    fn respond(&self, request: &OracleRequest<'_>) -> Result<String> {
        let profile = self.profile(&request.sample.id);
        simulated_generate(&profile, request.temperature, request.key.seed())
    }

    fn declared_members(&self) -> Option<&HashSet<String>> {
        self.declare_members.then_some(&self.members)
    }
}

/// Pools of a simulated experiment plus the registrations of its oracles.
#[derive(Clone, Debug)]
pub struct SimulatedDataset {
    pub config: SimulationConfig,
    pub seed: u64,
    pub target_members: Vec<Sample>,
    pub target_nonmembers: Vec<Sample>,
    pub reference_members: Vec<Sample>,
    pub reference_nonmembers: Vec<Sample>,
    pub shadow_members: Vec<Sample>,
    pub shadow_nonmembers: Vec<Sample>,
    pub target: SimulatedRegistration,
    pub shadow: SimulatedRegistration,
}

pub const SIM_TARGET_ID: &str = "sim-target";
pub const SIM_SHADOW_ID: &str = "sim-shadow";

impl SimulatedDataset {
    /// Every shadow sample, members first.
    pub fn shadow_pool(&self) -> Vec<Sample> {
        self.shadow_members
            .iter()
            .chain(&self.shadow_nonmembers)
            .cloned()
            .collect()
    }

    /// Target-oracle samples with membership labels, members first.
    pub fn target_pool(&self) -> Vec<Sample> {
        self.target_members
            .iter()
            .chain(&self.target_nonmembers)
            .cloned()
            .collect()
    }
}

/// Builds the six pools and the target/shadow oracle registrations.
///
/// Target members and member references are members of the target oracle;
/// shadow members are members of the shadow oracle, which declares them.
pub fn build_simulated_dataset(config: &SimulationConfig, seed: u64) -> Result<SimulatedDataset> {
    config.validate()?;
    let world = SimulatedWorld {
        seed,
        config: config.clone(),
    };
    let pool = |prefix: &str, n: usize, member: bool| -> Vec<Sample> {
        (0..n)
            .map(|i| world.make_sample(format!("{prefix}-{i:06}"), Some(member)))
            .collect()
    };
    let p = &config.pools;
    let target_members = pool("tm", p.target_members, true);
    let target_nonmembers = pool("tn", p.target_nonmembers, false);
    let reference_members = pool("rm", p.reference_members, true);
    let reference_nonmembers = pool("rn", p.reference_nonmembers, false);
    let shadow_members = pool("sm", p.shadow_members, true);
    let shadow_nonmembers = pool("sn", p.shadow_nonmembers, false);

    let target = SimulatedRegistration {
        id: SIM_TARGET_ID.into(),
        world: world.clone(),
        member_ids: target_members
            .iter()
            .chain(&reference_members)
            .map(|s| s.id.clone())
            .collect(),
        declare_members: false,
    };
    let shadow = SimulatedRegistration {
        id: SIM_SHADOW_ID.into(),
        world,
        member_ids: shadow_members.iter().map(|s| s.id.clone()).collect(),
        declare_members: true,
    };
    Ok(SimulatedDataset {
        config: config.clone(),
        seed,
        target_members,
        target_nonmembers,
        reference_members,
        reference_nonmembers,
        shadow_members,
        shadow_nonmembers,
        target,
        shadow,
    })
}
