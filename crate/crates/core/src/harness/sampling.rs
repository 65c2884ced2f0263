//! Drawing evaluation sets, optionally contaminated with samples of the
//! opposite membership.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attacks::SampleSet;
use crate::error::{Error, Result};
use crate::oracle::simulated::mix_seed;
use crate::oracle::Sample;

/// `g` distinct samples drawn uniformly without replacement.
pub fn draw_set<R: rand::Rng + ?Sized>(pool: &[Sample], g: usize, rng: &mut R) -> Vec<Sample> {
    index::sample(rng, pool.len(), g.min(pool.len()))
        .into_iter()
        .map(|i| pool[i].clone())
        .collect()
}

/// Contaminants in a set of size `g` at heterogeneity `ratio`.
pub fn contaminant_count(g: usize, ratio: f64) -> usize {
    (ratio * g as f64).round() as usize
}

/// Membership shared by every sample of a pool, if any.
fn pool_membership(pool: &[Sample]) -> Option<bool> {
    let first = pool.first()?.membership?;
    pool.iter().all(|s| s.membership == Some(first)).then_some(first)
}

/// Deterministic stream for set `index` of a run seeded with `seed`.
pub fn set_rng(seed: u64, stream: &str, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, &format!("{stream}/{index}")))
}

/// Draws `n` sets of size `g`. Each set takes `round(ratio * g)` samples from
/// `contaminants` and the rest from `primary`; its label is the membership
/// of whichever pool contributes more (ties go to `primary`).
///
/// Set `i` uses its own random stream derived from `(seed, i)`, so two calls
/// with the same seed draw matching index patterns from their pools.
pub fn sample_sets(
    primary: &[Sample],
    g: usize,
    n: usize,
    seed: u64,
    ratio: f64,
    contaminants: Option<&[Sample]>,
) -> Result<Vec<SampleSet>> {
    if g == 0 {
        return Err(Error::invalid("set granularity must be positive"));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("heterogeneity ratio {ratio} outside [0, 1]")));
    }
    let c = contaminant_count(g, ratio);
    let contaminants = match (c, contaminants) {
        (0, _) => &[][..],
        (_, Some(pool)) => pool,
        (_, None) => {
            return Err(Error::invalid("a contaminant pool is required when the heterogeneity ratio is positive"))
        }
    };
    if g - c > primary.len() {
        return Err(Error::invalid(format!(
            "primary pool has {} samples, {} needed per set",
            primary.len(),
            g - c
        )));
    }
    if c > contaminants.len() {
        return Err(Error::invalid(format!(
            "contaminant pool has {} samples, {c} needed per set",
            contaminants.len()
        )));
    }
    let label = if g - c >= c {
        pool_membership(primary)
    } else {
        pool_membership(contaminants)
    };
    (0..n)
        .map(|i| {
            let mut rng = set_rng(seed, "set", i);
            let mut samples = draw_set(primary, g - c, &mut rng);
            samples.extend(draw_set(contaminants, c, &mut rng));
            SampleSet::new(samples, label)
        })
        .collect()
}
