//! Summary statistics, the one-sided two-sample z-test, the standard normal
//! CDF, and evaluation metrics (AUC, ROC, accuracy/precision/recall).

use std::cmp::Ordering;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Non-empty array of finite similarity scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreArray(Vec<f64>);

impl ScoreArray {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::invalid("score array is empty"));
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("score array contains non-finite value {bad}")));
        }
        Ok(ScoreArray(scores))
    }

    pub fn scores(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Two-pass mean: the residual pass makes constant arrays come out exact.
    pub fn mean(&self) -> f64 {
        let n = self.0.len() as f64;
        let rough = self.0.iter().sum::<f64>() / n;
        rough + self.0.iter().map(|s| s - rough).sum::<f64>() / n
    }

    /// Mean and population standard deviation (divisor n).
    pub fn mean_std(&self) -> (f64, f64) {
        let mean = self.mean();
        let var = self.0.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / self.0.len() as f64;
        (mean, var.sqrt())
    }
}

impl TryFrom<Vec<f64>> for ScoreArray {
    type Error = Error;

    fn try_from(scores: Vec<f64>) -> Result<Self> {
        ScoreArray::new(scores)
    }
}

/// Mean and population standard deviation of a raw score slice.
pub fn mean_std(scores: &[f64]) -> Result<(f64, f64)> {
    Ok(ScoreArray::new(scores.to_vec())?.mean_std())
}

/// Complementary error function.
///
/// Uses the everywhere-convergent series of Abramowitz & Stegun 7.1.6 for
/// |x| < 2.5 and the continued fraction 7.1.14 (evaluated with the modified
/// Lentz algorithm) beyond, which keeps the relative error of the upper tail
/// near machine precision instead of losing it to `1 - erf(x)` cancellation.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 2.5 {
        return 1.0 - erf_series(x);
    }
    if x > 27.3 {
        return 0.0;
    }
    erfc_continued_fraction(x)
}

pub fn erf(x: f64) -> f64 {
    if x.abs() < 2.5 {
        erf_series(x)
    } else {
        1.0 - erfc(x)
    }
}

fn erf_series(x: f64) -> f64 {
    // erf(x) = 2/sqrt(pi) * exp(-x^2) * sum_n 2^n x^(2n+1) / (1*3*...*(2n+1))
    let two_x2 = 2.0 * x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= two_x2 / (2.0 * n + 1.0);
        sum += term;
        if term.abs() <= sum.abs() * 1e-17 {
            break;
        }
    }
    2.0 / PI.sqrt() * (-x * x).exp() * sum
}

fn erfc_continued_fraction(x: f64) -> f64 {
    // erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for n in 1..500 {
        let a = n as f64 * 0.5;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / (PI.sqrt() * f)
}

/// Standard normal CDF.
pub fn standard_normal_cdf(z: f64) -> f64 {
    if z < 0.0 {
        0.5 * erfc(-z * FRAC_1_SQRT_2)
    } else {
        1.0 - 0.5 * erfc(z * FRAC_1_SQRT_2)
    }
}

/// Upper tail `1 - Phi(z)`, computed without cancellation for large `z`.
pub fn standard_normal_sf(z: f64) -> f64 {
    if z >= 0.0 {
        0.5 * erfc(z * FRAC_1_SQRT_2)
    } else {
        1.0 - 0.5 * erfc(-z * FRAC_1_SQRT_2)
    }
}

/// Which tail a p-value measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tail {
    Greater,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PValue {
    pub value: f64,
    pub tail: Tail,
}

/// Outcome of the one-sided test of `mean(a) > mean(b)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZTest {
    /// Standardized mean difference; infinite when the combined standard
    /// error is zero and the means differ.
    pub statistic: f64,
    pub standard_error: f64,
    pub p_value: PValue,
}

/// One-sided z-test, `p = 1 - Phi((mean_a - mean_b) / sqrt(sd_a^2/n_a + sd_b^2/n_b))`.
///
/// With zero combined standard error the limit of the statistic is used:
/// equal means give 0.5, otherwise 0 or 1 by the sign of the difference.
pub fn z_test(a: &ScoreArray, b: &ScoreArray) -> ZTest {
    let (mean_a, sd_a) = a.mean_std();
    let (mean_b, sd_b) = b.mean_std();
    let se = (sd_a * sd_a / a.len() as f64 + sd_b * sd_b / b.len() as f64).sqrt();
    let diff = mean_a - mean_b;
    let (statistic, p) = if se > 0.0 {
        let z = diff / se;
        (z, standard_normal_sf(z))
    } else {
        match diff.partial_cmp(&0.0) {
            Some(Ordering::Greater) => (f64::INFINITY, 0.0),
            Some(Ordering::Less) => (f64::NEG_INFINITY, 1.0),
            _ => (0.0, 0.5),
        }
    };
    ZTest {
        statistic,
        standard_error: se,
        p_value: PValue {
            value: p.clamp(0.0, 1.0),
            tail: Tail::Greater,
        },
    }
}

pub fn z_test_p_value(a: &ScoreArray, b: &ScoreArray) -> PValue {
    z_test(a, b).p_value
}

fn check_scores(name: &str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::invalid(format!("{name} scores are empty")));
    }
    if xs.iter().any(|x| x.is_nan()) {
        return Err(Error::invalid(format!("{name} scores contain NaN")));
    }
    Ok(())
}

/// Mann-Whitney U of `positive` over `negative`: pairs with pos > neg count 1,
/// ties count 1/2. Computed from mid-ranks in O((m+n) log(m+n)).
pub fn mann_whitney_u(positive: &[f64], negative: &[f64]) -> Result<f64> {
    check_scores("positive", positive)?;
    check_scores("negative", negative)?;
    let mut all: Vec<(f64, bool)> = positive
        .iter()
        .map(|&s| (s, true))
        .chain(negative.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));

    // Twice the positive rank sum keeps tied mid-ranks integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share the mid-rank (i + j + 2) / 2
        let twice_mid = (i + j + 2) as u128;
        let positives = all[i..=j].iter().filter(|e| e.1).count() as u128;
        twice_rank_sum += twice_mid * positives;
        i = j + 1;
    }
    let m = positive.len() as u128;
    let twice_u = twice_rank_sum - m * (m + 1);
    Ok(twice_u as f64 / 2.0)
}

/// Area under the ROC curve, higher scores meaning "positive".
pub fn auc(positive: &[f64], negative: &[f64]) -> Result<f64> {
    let u = mann_whitney_u(positive, negative)?;
    Ok(u / (positive.len() as f64 * negative.len() as f64))
}

/// One operating point of a ROC curve: predict positive when `score >= threshold`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    #[serde(with = "extended_float")]
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve with one point per distinct score plus the two endpoints at
/// thresholds +inf and -inf.
pub fn roc_curve(positive: &[f64], negative: &[f64]) -> Result<Vec<RocPoint>> {
    check_scores("positive", positive)?;
    check_scores("negative", negative)?;
    let mut all: Vec<(f64, bool)> = positive
        .iter()
        .map(|&s| (s, true))
        .chain(negative.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|x, y| y.0.total_cmp(&x.0));

    let (np, nn) = (positive.len() as f64, negative.len() as f64);
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let threshold = all[i].0;
        while i < all.len() && all[i].0 == threshold {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / nn,
            tpr: tp as f64 / np,
        });
    }
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        fpr: 1.0,
        tpr: 1.0,
    });
    Ok(points)
}

/// JSON has no infinities; the ROC endpoints are written as `"inf"` and `"-inf"`.
mod extended_float {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&x.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(x) => Ok(x),
            Repr::Text(t) => t.parse().map_err(D::Error::custom),
        }
    }
}

/// Trapezoid-rule area under ROC points ordered by increasing FPR.
pub fn trapezoid_auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Accuracy, precision and recall of hard predictions. Precision is `None`
/// when nothing is predicted positive; recall is `None` when nothing is
/// actually positive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

pub fn classification_metrics(predicted: &[bool], actual: &[bool]) -> Result<ClassificationMetrics> {
    if predicted.len() != actual.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::invalid("no predictions to evaluate"));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p, a) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Ok(ClassificationMetrics {
        accuracy: (tp + tn) as f64 / predicted.len() as f64,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr(xs: &[f64]) -> ScoreArray {
        ScoreArray::new(xs.to_vec()).unwrap()
    }

    fn brute_force_auc(pos: &[f64], neg: &[f64]) -> f64 {
        let mut wins = 0.0;
        for p in pos {
            for n in neg {
                if p > n {
                    wins += 1.0;
                } else if p == n {
                    wins += 0.5;
                }
            }
        }
        wins / (pos.len() * neg.len()) as f64
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(arr(&[0.5, 0.5, 0.5]).mean_std(), (0.5, 0.0));
        assert_eq!(arr(&[0.0, 1.0]).mean_std(), (0.5, 0.5));
        let (m, s) = arr(&[0.2, 0.4, 0.9]).mean_std();
        assert!((m - 0.5).abs() < 1e-15);
        assert!((s - 0.294_392_028_877_594_9).abs() < 1e-12);
        assert_eq!(arr(&[0.7]).mean_std(), (0.7, 0.0));
        assert!(mean_std(&[]).is_err());
        assert!(ScoreArray::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn cdf_reference_values() {
        // 40-digit reference values of Phi
        let table = [
            (0.0, 0.5),
            (1.959964, 0.975_000_000_903_557_6),
            (-1.0, 0.158_655_253_931_457_05),
            (-8.0, 6.220_960_574_271_784e-16),
        ];
        for (z, want) in table {
            assert!((standard_normal_cdf(z) - want).abs() < 1e-15, "z = {z}");
        }
    }

    #[test]
    fn upper_tail_has_relative_accuracy() {
        let q = standard_normal_sf(7.071_067_811_865_475);
        assert!((q / 7.687_298_972_140_174e-13 - 1.0).abs() < 1e-12);
        assert!((erfc(3.0) / 2.209_049_699_858_544e-5 - 1.0).abs() < 1e-13);
        assert_eq!(erfc(30.0), 0.0);
        assert_eq!(erf(0.0), 0.0);
    }

    #[test]
    fn z_test_examples() {
        assert_eq!(z_test_p_value(&arr(&[0.3, 0.7]), &arr(&[0.3, 0.7])).value, 0.5);
        assert_eq!(z_test_p_value(&arr(&[1.0; 3]), &arr(&[0.0; 3])).value, 0.0);
        assert_eq!(z_test_p_value(&arr(&[0.0; 3]), &arr(&[1.0; 3])).value, 1.0);
        assert_eq!(z_test_p_value(&arr(&[0.4; 3]), &arr(&[0.4; 5])).value, 0.5);
    }

    #[test]
    fn z_test_closed_form() {
        // mean 0.8 / 0.7, population sd 0.1, n = 100 each
        let a: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 0.9 } else { 0.7 }).collect();
        let b: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 0.8 } else { 0.6 }).collect();
        let t = z_test(&arr(&a), &arr(&b));
        let want_z = 0.1 / (0.0002f64).sqrt();
        assert!((t.statistic / want_z - 1.0).abs() < 1e-9);
        assert!((t.p_value.value / 7.687_298_972_140_174e-13 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9; 4], &[0.1; 3]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5], &[0.5]).unwrap(), 0.5);
        assert_eq!(auc(&[0.9, 0.8], &[0.7, 0.85]).unwrap(), 0.75);
        assert!(auc(&[], &[0.1]).is_err());
        assert!(auc(&[0.1], &[]).is_err());
    }

    #[test]
    fn classification_examples() {
        let t = [true, false, true, false];
        let m = classification_metrics(&t, &t).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall), (1.0, Some(1.0), Some(1.0)));
        let m = classification_metrics(&[true; 4], &t).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall), (0.5, Some(0.5), Some(1.0)));
        let m = classification_metrics(&[false, false], &[false, true]).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall), (0.5, None, Some(0.0)));
        assert!(classification_metrics(&[true], &[true, false]).is_err());
    }

    #[test]
    fn roc_has_distinct_thresholds_plus_endpoints() {
        let pos = [0.9, 0.8, 0.8];
        let neg = [0.7, 0.85, 0.8];
        let points = roc_curve(&pos, &neg).unwrap();
        assert_eq!(points.len(), 4 + 2);
        assert!((trapezoid_auc(&points) - brute_force_auc(&pos, &neg)).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn scores(max: usize) -> impl Strategy<Value = Vec<f64>> {
            // coarse grid so that ties occur often
            proptest::collection::vec((0u8..20).prop_map(|v| f64::from(v) / 20.0), 1..=max)
        }

        proptest! {
            #[test]
            fn auc_matches_pair_counting(pos in scores(50), neg in scores(50)) {
                prop_assert_eq!(auc(&pos, &neg).unwrap(), brute_force_auc(&pos, &neg));
            }

            #[test]
            fn auc_antisymmetric(pos in scores(50), neg in scores(50)) {
                let u1 = mann_whitney_u(&pos, &neg).unwrap();
                let u2 = mann_whitney_u(&neg, &pos).unwrap();
                prop_assert_eq!(u1 + u2, (pos.len() * neg.len()) as f64);
                prop_assert!((auc(&pos, &neg).unwrap() - (1.0 - auc(&neg, &pos).unwrap())).abs() < 1e-15);
            }

            #[test]
            fn trapezoid_matches_rank_auc(pos in scores(30), neg in scores(30)) {
                let pts = roc_curve(&pos, &neg).unwrap();
                prop_assert!((trapezoid_auc(&pts) - auc(&pos, &neg).unwrap()).abs() < 1e-12);
            }

            #[test]
            fn z_test_complementary(a in proptest::collection::vec(0.0f64..1.0, 2..40),
                                    b in proptest::collection::vec(0.0f64..1.0, 2..40)) {
                let (a, b) = (arr(&a), arr(&b));
                prop_assume!(z_test(&a, &b).standard_error > 0.0);
                let sum = z_test_p_value(&a, &b).value + z_test_p_value(&b, &a).value;
                prop_assert!((sum - 1.0).abs() < 1e-7);
            }

            #[test]
            fn z_test_location_invariant(a in proptest::collection::vec(0.0f64..1.0, 2..40),
                                         b in proptest::collection::vec(0.0f64..1.0, 2..40),
                                         shift in -5.0f64..5.0) {
                let p = z_test_p_value(&arr(&a), &arr(&b)).value;
                let a2: Vec<f64> = a.iter().map(|x| x + shift).collect();
                let b2: Vec<f64> = b.iter().map(|x| x + shift).collect();
                let q = z_test_p_value(&arr(&a2), &arr(&b2)).value;
                prop_assert!((p - q).abs() < 1e-9);
            }

            #[test]
            fn cdf_symmetric_and_monotone(z in -8.0f64..8.0, dz in 0.0f64..0.5) {
                prop_assert!((standard_normal_cdf(z) + standard_normal_cdf(-z) - 1.0).abs() < 1e-7);
                prop_assert!(standard_normal_cdf(z + dz) >= standard_normal_cdf(z));
            }
        }
    }
}
