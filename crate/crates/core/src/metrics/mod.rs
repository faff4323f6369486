//! Ranking and threshold metrics for one class at a time, bootstrap
//! intervals and the per-class report.

mod bootstrap;
mod report;

pub use bootstrap::{bootstrap_ci, bootstrap_many, quantile, BootstrapSpec, Interval};
pub use report::{
    format_table, json_num, per_class_report, ClassMetrics, ClassRow, MeanMetrics, MetricCis, MetricReport, CI_METHOD_MEAN,
    CI_METHOD_PER_CLASS,
};

use crate::error::{Error, Result};

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Domain("scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    Ok((pos, neg))
}

/// Groups of equal scores in ascending order as `(score, positives, negatives)`.
fn tie_groups(scores: &[f64], labels: &[bool]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for i in order {
        let (s, y) = (scores[i], labels[i]);
        match groups.last_mut() {
            // total_cmp separates -0.0 from 0.0; treat them as tied
            Some(g) if g.0 == s => {
                if y {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((s, y as usize, (!y) as usize)),
        }
    }
    groups
}

/// Mann–Whitney AUC: `P(s+ > s-) + P(s+ = s-) / 2`.
///
/// Counts `2U` in integers over tie groups, so the result equals exhaustive
/// pairwise counting exactly.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    for (_, p, n) in tie_groups(scores, labels) {
        twice_u += p as u128 * (2 * neg_below + n as u128);
        neg_below += n as u128;
    }
    Ok(twice_u as f64 / (2.0 * pos as f64 * neg as f64))
}

/// ROC points ordered by decreasing threshold. The first point is
/// `(+inf, 0, 0)`, the last `(min score, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<(f64, f64, f64)>,
}

pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let mut points = vec![(f64::INFINITY, 0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (s, p, n) in tie_groups(scores, labels).into_iter().rev() {
        tp += p;
        fp += n;
        points.push((s, tp as f64 / pos as f64, fp as f64 / neg as f64));
    }
    Ok(RocCurve { points })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfusionMetrics {
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
}

/// Counts with the rule "positive iff score >= threshold".
pub fn confusion_counts(scores: &[f64], labels: &[bool], threshold: f64) -> Confusion {
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

fn rates(tp: usize, tn: usize, pos: usize, neg: usize) -> (f64, f64) {
    (tp as f64 / pos as f64, tn as f64 / neg as f64)
}

fn youden_from_counts(tp: usize, tn: usize, pos: usize, neg: usize) -> f64 {
    let (q, r) = rates(tp, tn, pos, neg);
    q + r - 1.0
}

pub fn confusion_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> Result<ConfusionMetrics> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let c = confusion_counts(scores, labels, threshold);
    let (sensitivity, specificity) = rates(c.tp, c.tn, pos, neg);
    let denom = 2 * c.tp + c.fp + c.fn_;
    let f1 = if denom == 0 {
        0.0
    } else {
        2.0 * c.tp as f64 / denom as f64
    };
    Ok(ConfusionMetrics {
        sensitivity,
        specificity,
        f1,
    })
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo / 2.0 + hi / 2.0;
    if m > lo && m <= hi {
        m
    } else {
        hi
    }
}

/// Threshold maximizing Youden's `J = sensitivity + specificity - 1`.
///
/// Candidates are `-inf`, the midpoints between adjacent distinct scores and
/// `+inf`; the smallest maximizing candidate is returned with its `J`.
pub fn youden_threshold(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let groups = tie_groups(scores, labels);
    // at candidate j the predicted-positive set is groups[j..]
    let (mut tp, mut tn) = (pos, 0usize);
    let mut best = (f64::NEG_INFINITY, youden_from_counts(tp, tn, pos, neg));
    for j in 1..=groups.len() {
        let (_, p, n) = groups[j - 1];
        tp -= p;
        tn += n;
        let jv = youden_from_counts(tp, tn, pos, neg);
        if jv > best.1 {
            let c = if j == groups.len() {
                f64::INFINITY
            } else {
                midpoint(groups[j - 1].0, groups[j].0)
            };
            best = (c, jv);
        }
    }
    Ok(best)
}

/// `J` recomputed through [`confusion_metrics`] at a given threshold.
pub fn youden_at(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    let m = confusion_metrics(scores, labels, threshold)?;
    Ok(m.sensitivity + m.specificity - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_auc(s: &[f64], y: &[bool]) -> f64 {
        let mut twice = 0u64;
        let mut pairs = 0u64;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if y[i] && !y[j] {
                    pairs += 1;
                    twice += if s[i] > s[j] {
                        2
                    } else if s[i] == s[j] {
                        1
                    } else {
                        0
                    };
                }
            }
        }
        twice as f64 / (2.0 * pairs as f64)
    }

    /// J for every cut position over the distinct scores.
    fn brute_best_j(s: &[f64], y: &[bool]) -> f64 {
        let mut cuts: Vec<f64> = s.to_vec();
        cuts.push(f64::INFINITY);
        cuts.iter()
            .map(|&c| youden_at(s, y, c).unwrap())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    const T: bool = true;
    const F: bool = false;

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.3, 0.1], &[T, T, F, F]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.9, 0.2, 0.8, 0.4], &[T, T, F, F]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.3; 5], &[T, F, T, F, F]).unwrap(), 0.5);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[T, T]), Err(Error::UndefinedAuc)));
        assert!(roc_auc(&[0.1], &[T, F]).is_err());
    }

    #[test]
    fn youden_examples() {
        let (c, j) = youden_threshold(&[0.9, 0.8, 0.3, 0.1], &[T, T, F, F]).unwrap();
        assert_eq!((c, j), (0.55, 1.0));
        let (c, j) = youden_threshold(&[0.4, 0.6], &[T, F]).unwrap();
        assert_eq!(j, 0.0);
        assert_eq!(c, f64::NEG_INFINITY);
    }

    #[test]
    fn confusion_examples() {
        let s = [0.9, 0.2, 0.8, 0.4];
        let y = [T, T, F, F];
        let m = confusion_metrics(&s, &y, 0.5).unwrap();
        assert_eq!((m.sensitivity, m.specificity, m.f1), (0.5, 0.5, 0.5));
        let m = confusion_metrics(&s, &y, 2.0).unwrap();
        assert_eq!((m.sensitivity, m.specificity, m.f1), (0.0, 1.0, 0.0));
        let m = confusion_metrics(&[0.9, 0.8, 0.3, 0.1], &y, 0.55).unwrap();
        assert_eq!((m.sensitivity, m.specificity, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn roc_curve_endpoints_and_monotonicity() {
        let s = [0.9, 0.2, 0.8, 0.4, 0.4, 0.1];
        let y = [T, T, F, F, T, F];
        let roc = roc_curve(&s, &y).unwrap();
        assert_eq!(roc.points.first().map(|p| (p.1, p.2)), Some((0.0, 0.0)));
        assert_eq!(roc.points.last().map(|p| (p.1, p.2)), Some((1.0, 1.0)));
        for w in roc.points.windows(2) {
            assert!(w[0].0 > w[1].0 && w[0].1 <= w[1].1 && w[0].2 <= w[1].2);
        }
    }

    #[test]
    fn midpoint_never_collapses_onto_lower_score() {
        let lo: f64 = 1.0;
        let hi = f64::from_bits(lo.to_bits() + 1);
        assert_eq!(midpoint(lo, hi), hi);
        let (c, _) = youden_threshold(&[lo, hi], &[F, T]).unwrap();
        assert_eq!(confusion_counts(&[lo, hi], &[F, T], c).tp, 1);
        assert_eq!(confusion_counts(&[lo, hi], &[F, T], c).tn, 1);
    }

    fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..120).prop_flat_map(|n| {
            (
                proptest::collection::vec((0u8..12).prop_map(|v| v as f64 / 11.0), n),
                proptest::collection::vec(any::<bool>(), n),
            )
        })
        .prop_filter("two-sided", |(_, y)| y.iter().any(|&v| v) && y.iter().any(|&v| !v))
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_counting((s, y) in scored_labels()) {
            prop_assert_eq!(roc_auc(&s, &y).unwrap(), brute_auc(&s, &y));
        }

        #[test]
        fn auc_complement_without_ties(
            y in proptest::collection::vec(any::<bool>(), 2..80)
                .prop_filter("two-sided", |y| y.iter().any(|&v| v) && y.iter().any(|&v| !v)),
            seed in any::<u64>(),
        ) {
            let mut rng = crate::numcore::RngStream::new(seed, 0);
            let s: Vec<f64> = y.iter().map(|_| rng.uniform()).collect();
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            let a = roc_auc(&s, &y).unwrap();
            let b = roc_auc(&neg, &y).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }

        #[test]
        fn youden_is_consistent_and_optimal((s, y) in scored_labels()) {
            let (c, j) = youden_threshold(&s, &y).unwrap();
            prop_assert_eq!(j, youden_at(&s, &y, c).unwrap());
            prop_assert_eq!(j, brute_best_j(&s, &y));
            prop_assert!(j >= 0.0);
        }

        #[test]
        fn monotone_transform_invariance((s, y) in scored_labels()) {
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert_eq!(roc_auc(&s, &y).unwrap(), roc_auc(&t, &y).unwrap());
            let (c1, j1) = youden_threshold(&s, &y).unwrap();
            let (c2, j2) = youden_threshold(&t, &y).unwrap();
            prop_assert_eq!(j1, j2);
            // c* selects the same predicted-positive set
            let p1: Vec<bool> = s.iter().map(|&v| v >= c1).collect();
            let p2: Vec<bool> = t.iter().map(|&v| v >= c2).collect();
            prop_assert_eq!(p1, p2);
        }
    }
}
