use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{AggregatedLabel, AggregationResult, EvalError, SurveyItem};
use crate::refinement::ConfigId;

/// Improvement values above this count as a win for the refined prompts.
pub const DEFAULT_PARITY_THRESHOLD: f64 = 0.45;

/// Restricts which aggregated labels enter a mean. `None` means no filter.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RankFilter {
    pub items: Option<BTreeSet<SurveyItem>>,
    pub nouns: Option<BTreeSet<String>>,
}

impl RankFilter {
    pub fn item(item: SurveyItem) -> Self {
        RankFilter {
            items: Some(BTreeSet::from([item])),
            nouns: None,
        }
    }

    fn accepts(&self, l: &AggregatedLabel) -> bool {
        self.items.as_ref().is_none_or(|s| s.contains(&l.item))
            && self.nouns.as_ref().is_none_or(|s| s.contains(&l.noun_id))
    }
}

pub fn mean_rank(
    agg: &AggregationResult,
    config: ConfigId,
    filter: &RankFilter,
) -> Result<f64, EvalError> {
    let (sum, n) = agg
        .labels
        .iter()
        .filter(|l| l.config_id == config && filter.accepts(l))
        .fold((0u64, 0u64), |(s, n), l| (s + u64::from(l.label), n + 1));
    if n == 0 {
        return Err(EvalError::EmptySelection);
    }
    Ok(sum as f64 / n as f64)
}

/// Maps the mean-rank gap onto `[0, 1]`; 0.5 is parity and larger values mean
/// the refined configuration ranked better (lower) than the base.
pub fn normalized_improvement(mean_base: f64, mean_ctrip: f64) -> Result<f64, EvalError> {
    for m in [mean_base, mean_ctrip] {
        if !(1.0..=4.0).contains(&m) {
            return Err(EvalError::OutOfDomain(m));
        }
    }
    Ok((mean_base - mean_ctrip + 3.0) / 6.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementScore {
    pub noun_id: String,
    pub item: SurveyItem,
    pub value: f64,
}

/// Per-noun, per-item improvement of `config` over `Base`.
pub fn improvement_scores(
    agg: &AggregationResult,
    config: ConfigId,
) -> Result<Vec<ImprovementScore>, EvalError> {
    let mut sums: BTreeMap<(String, SurveyItem), [(u64, u64); 2]> = BTreeMap::new();
    for l in &agg.labels {
        let slot = if l.config_id == ConfigId::Base {
            0
        } else if l.config_id == config {
            1
        } else {
            continue;
        };
        let e = &mut sums.entry((l.noun_id.clone(), l.item)).or_default()[slot];
        e.0 += u64::from(l.label);
        e.1 += 1;
    }
    sums.into_iter()
        .filter(|(_, s)| s[0].1 > 0 && s[1].1 > 0)
        .map(|((noun_id, item), s)| {
            let base = s[0].0 as f64 / s[0].1 as f64;
            let ctrip = s[1].0 as f64 / s[1].1 as f64;
            Ok(ImprovementScore {
                noun_id,
                item,
                value: normalized_improvement(base, ctrip)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub p_value: f64,
    pub df: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's unequal-variance two-sided t-test of `a` against `b`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult, EvalError> {
    for (name, x) in [("a", a), ("b", b)] {
        if x.len() < 2 {
            return Err(EvalError::DegenerateSample(format!(
                "sample {name} has {} values",
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(EvalError::DegenerateSample(format!(
                "sample {name} has non-finite values"
            )));
        }
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    for (name, v) in [("a", va), ("b", vb)] {
        if v == 0.0 {
            return Err(EvalError::DegenerateSample(format!(
                "sample {name} has zero variance"
            )));
        }
    }
    let (qa, qb) = (va / a.len() as f64, vb / b.len() as f64);
    let se = (qa + qb).sqrt();
    let t = (ma - mb) / se;
    let df =
        (qa + qb).powi(2) / (qa * qa / (a.len() as f64 - 1.0) + qb * qb / (b.len() as f64 - 1.0));
    let p = (2.0 * student_t_sf(t.abs(), df)).min(1.0);
    Ok(TTestResult {
        t_statistic: t,
        p_value: p,
        df,
    })
}

/// Upper tail `P(T > t)` of Student's t with `df` degrees of freedom.
pub fn student_t_sf(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    let tail = 0.5 * regularized_incomplete_beta(0.5 * df, 0.5, x);
    if t >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// `I_x(a, b)`, the regularized incomplete beta function.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::AggregationMethod;
    use proptest::prelude::*;

    fn agg(labels: &[(ConfigId, &str, u8)]) -> AggregationResult {
        AggregationResult {
            method: AggregationMethod::MmsrPlusVote,
            labels: labels
                .iter()
                .map(|&(config_id, noun, label)| AggregatedLabel {
                    page_id: None,
                    noun_id: noun.into(),
                    item: SurveyItem::Offensiveness,
                    config_id,
                    label,
                })
                .collect(),
            skills: vec![],
        }
    }

    #[test]
    fn mean_rank_cases() {
        let a = agg(&[(ConfigId::CTrip5, "n", 2)]);
        assert_eq!(
            mean_rank(&a, ConfigId::CTrip5, &RankFilter::default()).unwrap(),
            2.0
        );
        let a = agg(&[(ConfigId::CTrip5, "n", 1), (ConfigId::CTrip5, "m", 4)]);
        assert_eq!(
            mean_rank(&a, ConfigId::CTrip5, &RankFilter::default()).unwrap(),
            2.5
        );
        assert!(matches!(
            mean_rank(&a, ConfigId::Base, &RankFilter::default()),
            Err(EvalError::EmptySelection)
        ));
        assert!(matches!(
            mean_rank(
                &a,
                ConfigId::CTrip5,
                &RankFilter::item(SurveyItem::KeywordNaturalness)
            ),
            Err(EvalError::EmptySelection)
        ));
        let f = RankFilter {
            items: None,
            nouns: Some(BTreeSet::from(["m".to_string()])),
        };
        assert_eq!(mean_rank(&a, ConfigId::CTrip5, &f).unwrap(), 4.0);
    }

    #[test]
    fn improvement_anchors() {
        assert_eq!(normalized_improvement(2.5, 2.5).unwrap(), 0.5);
        assert_eq!(normalized_improvement(4.0, 1.0).unwrap(), 1.0);
        assert_eq!(normalized_improvement(1.0, 4.0).unwrap(), 0.0);
        assert!(matches!(
            normalized_improvement(0.5, 2.0),
            Err(EvalError::OutOfDomain(_))
        ));
    }

    #[test]
    fn improvement_per_noun() {
        let a = agg(&[
            (ConfigId::Base, "n", 4),
            (ConfigId::CTrip5, "n", 1),
            (ConfigId::Base, "m", 2),
            (ConfigId::CTrip5, "m", 2),
            (ConfigId::CTrip3, "m", 1),
        ]);
        let s = improvement_scores(&a, ConfigId::CTrip5).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].noun_id, "m");
        assert_eq!(s[0].value, 0.5);
        assert_eq!(s[1].value, 1.0);
    }

    #[test]
    fn welch_known_values() {
        let r = welch_t_test(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((r.t_statistic + 3.674_234_614_174_767).abs() < 1e-12);
        assert!((r.df - 4.0).abs() < 1e-12);
        assert!(
            (r.p_value - 0.021_311_641_128_756_82).abs() < 1e-9,
            "{}",
            r.p_value
        );

        let same = welch_t_test(&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0]).unwrap();
        assert_eq!(same.t_statistic, 0.0);
        assert!((same.p_value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn welch_degenerate() {
        assert!(matches!(
            welch_t_test(&[2.0, 2.0], &[2.0, 2.0]),
            Err(EvalError::DegenerateSample(_))
        ));
        assert!(matches!(
            welch_t_test(&[1.0], &[2.0, 3.0]),
            Err(EvalError::DegenerateSample(_))
        ));
    }

    #[test]
    fn special_functions() {
        assert!((ln_gamma(1.0)).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!((regularized_incomplete_beta(2.0, 3.0, 0.4) - 0.5248).abs() < 1e-12);
        assert!((regularized_incomplete_beta(1.0, 1.0, 0.3) - 0.3).abs() < 1e-14);
        assert!((student_t_sf(0.0, 7.0) - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn improvement_antisymmetric(a in 1.0f64..=4.0, b in 1.0f64..=4.0) {
            let f = normalized_improvement(a, b).unwrap();
            let g = normalized_improvement(b, a).unwrap();
            prop_assert!((f + g - 1.0).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&f));
        }

        #[test]
        fn welch_swap_negates(a in prop::collection::vec(-50.0f64..50.0, 2..20), b in prop::collection::vec(-50.0f64..50.0, 2..20)) {
            prop_assume!(mean_var(&a).1 > 1e-6 && mean_var(&b).1 > 1e-6);
            let x = welch_t_test(&a, &b).unwrap();
            let y = welch_t_test(&b, &a).unwrap();
            prop_assert!((x.t_statistic + y.t_statistic).abs() < 1e-12);
            prop_assert!((x.p_value - y.p_value).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&x.p_value));
        }
    }
}
