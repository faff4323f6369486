use crate::error::{Error, Result};
use crate::numcore::RngStream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapSpec {
    pub replications: usize,
    pub seed: u64,
    pub confidence: f64,
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        BootstrapSpec {
            replications: 10_000,
            seed: 0,
            confidence: 0.95,
        }
    }
}

impl BootstrapSpec {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("bootstrap needs at least one replication".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Config(format!(
                "confidence must lie in (0, 1), got {}",
                self.confidence
            )));
        }
        Ok(())
    }
}

/// Point estimate with a percentile interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    /// Replicates skipped because the metric was undefined on them.
    pub undefined: usize,
}

/// Linear-interpolation quantile of sorted data, `p` in `[0, 1]`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let m = sorted.len();
    if m == 1 {
        return sorted[0];
    }
    let h = (m - 1) as f64 * p;
    let i = (h.floor() as usize).min(m - 2);
    let frac = h - i as f64;
    sorted[i] + (sorted[i + 1] - sorted[i]) * frac
}

fn is_undefined(e: &Error) -> bool {
    matches!(e, Error::UndefinedAuc)
}

/// Percentile bootstrap of several metrics sharing one resampling.
///
/// `evaluate` receives row indices into a sample of size `n` and returns one
/// value per metric. Replicate `b` draws its indices from `stream.derive(b)`,
/// so results do not depend on evaluation order. A replicate is undefined
/// when `evaluate` reports an undefined AUC or returns a non-finite value.
pub fn bootstrap_many<F>(n: usize, spec: &BootstrapSpec, stream: &RngStream, mut evaluate: F) -> Result<Vec<Interval>>
where
    F: FnMut(&[usize]) -> Result<Vec<f64>>,
{
    spec.validate()?;
    if n == 0 {
        return Err(Error::Contract("cannot bootstrap an empty sample".into()));
    }
    let identity: Vec<usize> = (0..n).collect();
    let point = evaluate(&identity)?;
    let k = point.len();
    let mut draws: Vec<Vec<f64>> = vec![Vec::with_capacity(spec.replications); k];
    let mut undefined = 0;
    let mut idx = vec![0usize; n];
    for b in 0..spec.replications {
        let mut rng = stream.derive(b as u64);
        for v in idx.iter_mut() {
            *v = rng.below(n);
        }
        match evaluate(&idx) {
            Ok(vals) if vals.iter().all(|v| v.is_finite()) => {
                for (d, v) in draws.iter_mut().zip(vals) {
                    d.push(v);
                }
            }
            Ok(_) => undefined += 1,
            Err(e) if is_undefined(&e) => undefined += 1,
            Err(e) => return Err(e),
        }
    }
    if 2 * undefined > spec.replications {
        return Err(Error::UnstableCi {
            undefined,
            replications: spec.replications,
        });
    }
    let tail = (1.0 - spec.confidence) / 2.0;
    Ok(point
        .into_iter()
        .zip(draws)
        .map(|(p, mut d)| {
            d.sort_by(f64::total_cmp);
            Interval {
                point: p,
                lo: quantile(&d, tail),
                hi: quantile(&d, 1.0 - tail),
                undefined,
            }
        })
        .collect())
}

/// Percentile interval of one metric over resampled `(score, label)` pairs.
pub fn bootstrap_ci<F>(metric: F, scores: &[f64], labels: &[bool], spec: &BootstrapSpec) -> Result<Interval>
where
    F: Fn(&[f64], &[bool]) -> Result<f64>,
{
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let stream = RngStream::named(spec.seed, "bootstrap");
    let mut s = Vec::with_capacity(scores.len());
    let mut y = Vec::with_capacity(labels.len());
    let out = bootstrap_many(scores.len(), spec, &stream, |idx| {
        s.clear();
        y.clear();
        s.extend(idx.iter().map(|&i| scores[i]));
        y.extend(idx.iter().map(|&i| labels[i]));
        Ok(vec![metric(&s, &y)?])
    })?;
    Ok(out[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::roc_auc;

    fn sample(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
        let mut rng = RngStream::new(seed, 4);
        let y: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
        let s = y.iter().map(|&v| rng.normal() + if v { 1.0 } else { 0.0 }).collect();
        (s, y)
    }

    #[test]
    fn quantile_interpolates() {
        let d = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&d, 0.0), 1.0);
        assert_eq!(quantile(&d, 1.0), 5.0);
        assert_eq!(quantile(&d, 0.5), 3.0);
        assert_eq!(quantile(&d, 0.125), 1.5);
        assert_eq!(quantile(&[7.0], 0.3), 7.0);
    }

    #[test]
    fn constant_metric_has_degenerate_interval() {
        let (s, y) = sample(30, 1);
        let spec = BootstrapSpec {
            replications: 200,
            ..BootstrapSpec::default()
        };
        let iv = bootstrap_ci(|_, _| Ok(0.25), &s, &y, &spec).unwrap();
        assert_eq!((iv.point, iv.lo, iv.hi), (0.25, 0.25, 0.25));
    }

    #[test]
    fn same_seed_same_interval() {
        let (s, y) = sample(80, 2);
        let spec = BootstrapSpec {
            replications: 300,
            seed: 17,
            ..BootstrapSpec::default()
        };
        let a = bootstrap_ci(roc_auc, &s, &y, &spec).unwrap();
        let b = bootstrap_ci(roc_auc, &s, &y, &spec).unwrap();
        assert_eq!(a, b);
        assert!(a.lo <= a.point && a.point <= a.hi);
    }

    #[test]
    fn interval_narrows_with_sample_size() {
        let spec = BootstrapSpec {
            replications: 1000,
            seed: 3,
            ..BootstrapSpec::default()
        };
        let (s, y) = sample(50, 5);
        let small = bootstrap_ci(roc_auc, &s, &y, &spec).unwrap();
        let (s, y) = sample(500, 5);
        let large = bootstrap_ci(roc_auc, &s, &y, &spec).unwrap();
        assert!(small.hi - small.lo > large.hi - large.lo);
    }

    #[test]
    fn mostly_undefined_replicates_are_unstable() {
        // about a third of resamples miss the single positive
        let s: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let y: Vec<bool> = (0..40).map(|i| i == 0).collect();
        let spec = BootstrapSpec {
            replications: 200,
            ..BootstrapSpec::default()
        };
        let iv = bootstrap_ci(roc_auc, &s, &y, &spec);
        assert!(iv.is_ok_and(|iv| iv.undefined > 0));
        let flaky = |s: &[f64], _: &[bool]| if s[s.len() - 1] < 30.0 { Err(Error::UndefinedAuc) } else { Ok(1.0) };
        assert!(matches!(
            bootstrap_ci(flaky, &s, &y, &spec),
            Err(Error::UnstableCi { .. })
        ));
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let (s, y) = sample(10, 1);
        let bad = BootstrapSpec {
            confidence: 1.0,
            ..BootstrapSpec::default()
        };
        assert!(bootstrap_ci(roc_auc, &s, &y, &bad).is_err());
    }
}
