use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numcore::{LabelMatrix, Matrix, RngStream};

/// Class names of the pediatric chest radiograph label set, in column order.
pub const REFERENCE_CLASS_NAMES: [&str; 10] = [
    "Reticulonodular opacity",
    "Peribronchovascular interstitial opacity",
    "Other opacity",
    "Bronchial thickening",
    "Bronchitis",
    "Broncho-pneumonia",
    "Bronchiolitis",
    "Pneumonia",
    "Other disease",
    "No finding",
];

/// Overall class prevalence of the same label set (5,071 images).
pub const REFERENCE_PREVALENCE: [f64; 10] = [
    0.1173, 0.3155, 0.1317, 0.1357, 0.2075, 0.1292, 0.1193, 0.1008, 0.1165, 0.3759,
];

const NO_FINDING: usize = 9;

/// Relative prevalence error beyond which a generated dataset is rejected.
const FEASIBILITY_TOLERANCE: f64 = 0.20;
/// A deviation must also exceed this many binomial standard deviations, so
/// that small datasets are not rejected for ordinary sampling noise.
const FEASIBILITY_MIN_Z: f64 = 4.0;

const CALIBRATION_ROUNDS: usize = 40;
const CALIBRATION_SAMPLES: usize = 20_000;
const MAX_PROBABILITY: f64 = 0.98;
/// Empty non-exclusive rows are redrawn at most this often before one label
/// is forced; only specs that cannot be met ever get there.
const MAX_REDRAWS: usize = 64;

/// Recipe for a synthetic multi-label dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub num_samples: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Target marginal positive rate per class.
    pub prevalence: Vec<f64>,
    /// Symmetric pairwise boost factors, row-major `C x C`; diagonal ignored.
    pub cooccurrence: Vec<f64>,
    /// Class that never co-occurs with another positive label.
    pub exclusive_class: Option<usize>,
    pub signal_strength: f64,
    pub seed: u64,
    pub class_names: Vec<String>,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec::reference_default()
    }
}

impl GeneratorSpec {
    /// Ten classes at the reference prevalences, "No finding" exclusive,
    /// 5,071 samples of dimension 64.
    pub fn reference_default() -> Self {
        let c = REFERENCE_PREVALENCE.len();
        let mut co = vec![1.0; c * c];
        let mut boost = |a: usize, b: usize, f: f64| {
            co[a * c + b] = f;
            co[b * c + a] = f;
        };
        boost(1, 4, 1.6); // interstitial opacity / bronchitis
        boost(3, 4, 1.8); // bronchial thickening / bronchitis
        boost(5, 7, 1.5); // broncho-pneumonia / pneumonia
        boost(0, 1, 1.4); // reticulonodular / interstitial opacity
        boost(2, 7, 1.3); // other opacity / pneumonia
        boost(6, 1, 1.5); // bronchiolitis / interstitial opacity
        GeneratorSpec {
            num_samples: 3550 + 744 + 777,
            num_classes: c,
            feature_dim: 64,
            prevalence: REFERENCE_PREVALENCE.to_vec(),
            cooccurrence: co,
            exclusive_class: Some(NO_FINDING),
            signal_strength: 1.0,
            seed: 42,
            class_names: REFERENCE_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Independent classes at the given prevalences, no exclusive class.
    pub fn independent(num_samples: usize, prevalence: Vec<f64>, feature_dim: usize, seed: u64) -> Self {
        let c = prevalence.len();
        GeneratorSpec {
            num_samples,
            num_classes: c,
            feature_dim,
            prevalence,
            cooccurrence: vec![1.0; c * c],
            exclusive_class: None,
            signal_strength: 1.0,
            seed,
            class_names: super::default_class_names(c),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes;
        if c == 0 || self.num_samples == 0 || self.feature_dim == 0 {
            return Err(Error::Config(
                "generator needs positive sample count, class count and feature dimension".into(),
            ));
        }
        if self.prevalence.len() != c {
            return Err(Error::Config(format!("{} prevalences for {c} classes", self.prevalence.len())));
        }
        if let Some(k) = self.prevalence.iter().position(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::Config(format!(
                "prevalence of class {k} must lie in (0, 1), got {}",
                self.prevalence[k]
            )));
        }
        if self.cooccurrence.len() != c * c {
            return Err(Error::Config(format!("co-occurrence matrix must be {c}x{c}")));
        }
        for a in 0..c {
            for b in 0..c {
                let v = self.cooccurrence[a * c + b];
                if a != b && !(v.is_finite() && v >= 0.0) {
                    return Err(Error::Config(format!("co-occurrence ({a},{b}) must be non-negative")));
                }
                if a != b && v != self.cooccurrence[b * c + a] {
                    return Err(Error::Config(format!("co-occurrence matrix not symmetric at ({a},{b})")));
                }
            }
        }
        if let Some(e) = self.exclusive_class {
            if e >= c {
                return Err(Error::Config(format!("exclusive class {e} out of range")));
            }
            let rest = 1.0 - self.prevalence[e];
            if let Some(k) = (0..c).find(|&k| k != e && self.prevalence[k] >= rest) {
                return Err(Error::Config(format!(
                    "class {k} prevalence cannot be reached next to exclusive class {e}"
                )));
            }
        }
        if !(self.signal_strength.is_finite() && self.signal_strength > 0.0) {
            return Err(Error::Config("signal strength must be positive".into()));
        }
        if self.class_names.len() != c {
            return Err(Error::Config(format!("{} class names for {c} classes", self.class_names.len())));
        }
        Ok(())
    }

    fn boost(&self, from: usize, to: usize) -> f64 {
        self.cooccurrence[from * self.num_classes + to]
    }

    /// Targets for the non-exclusive classes, conditional on the sample not
    /// being exclusive.
    fn conditional_targets(&self) -> Vec<f64> {
        let scale = match self.exclusive_class {
            Some(e) => 1.0 / (1.0 - self.prevalence[e]),
            None => 1.0,
        };
        self.prevalence.iter().map(|p| p * scale).collect()
    }
}

/// Draws the labels of one sample.
///
/// The exclusive class is decided first. Otherwise classes are visited in a
/// random order and each is switched on with its base probability multiplied
/// by the boosts of the labels already on. When an exclusive class exists the
/// row must end up with at least one label, so empty rows are redrawn, up to
/// [`MAX_REDRAWS`] times before a random class is switched on.
fn draw_labels(spec: &GeneratorSpec, base: &[f64], order: &mut [usize], rng: &mut RngStream, row: &mut [bool]) {
    row.fill(false);
    if let Some(e) = spec.exclusive_class {
        if rng.uniform() < spec.prevalence[e] {
            row[e] = true;
            return;
        }
    }
    for _ in 0..MAX_REDRAWS {
        rng.shuffle(order);
        let mut any = false;
        for idx in 0..order.len() {
            let k = order[idx];
            let mut p = base[k];
            for &j in &order[..idx] {
                if row[j] {
                    p *= spec.boost(j, k);
                }
            }
            if rng.uniform() < p.min(MAX_PROBABILITY) {
                row[k] = true;
                any = true;
            }
        }
        if any || spec.exclusive_class.is_none() {
            return;
        }
    }
    if let Some(&k) = order.first() {
        row[k] = true;
    }
}

/// Fixed-point calibration of the base probabilities so that the simulated
/// marginals, after boosts and redraws, hit the targets.
fn calibrate(spec: &GeneratorSpec) -> Vec<f64> {
    let targets = spec.conditional_targets();
    let free: Vec<usize> = (0..spec.num_classes)
        .filter(|&k| Some(k) != spec.exclusive_class)
        .collect();
    let mut base = targets.clone();
    let mut rng = RngStream::named(spec.seed, "calibration");
    // only the non-exclusive branch is simulated
    let sim = GeneratorSpec {
        prevalence: spec
            .prevalence
            .iter()
            .enumerate()
            .map(|(k, &p)| if Some(k) == spec.exclusive_class { 0.0 } else { p })
            .collect(),
        ..spec.clone()
    };
    let mut order = free.clone();
    let mut row = vec![false; spec.num_classes];
    for _ in 0..CALIBRATION_ROUNDS {
        let mut counts = vec![0usize; spec.num_classes];
        for _ in 0..CALIBRATION_SAMPLES {
            draw_labels(&sim, &base, &mut order, &mut rng, &mut row);
            for (c, &y) in counts.iter_mut().zip(row.iter()) {
                *c += y as usize;
            }
        }
        for &k in &free {
            let rate = (counts[k] as f64 / CALIBRATION_SAMPLES as f64).max(1e-6);
            base[k] = (base[k] * targets[k] / rate).clamp(1e-4, MAX_PROBABILITY);
        }
    }
    base
}

fn unit_prototypes(spec: &GeneratorSpec) -> Matrix {
    let mut rng = RngStream::named(spec.seed, "prototypes");
    let d = spec.feature_dim;
    let mut protos = Matrix::zeros(spec.num_classes, d);
    for k in 0..spec.num_classes {
        let row = protos.row_mut(k);
        for v in row.iter_mut() {
            *v = rng.normal();
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        row.iter_mut().for_each(|v| *v /= norm);
    }
    protos
}

/// Generates a dataset from `spec`, deterministic in `spec.seed`.
///
/// Features are the sum of the unit prototypes of the positive classes plus
/// isotropic Gaussian noise with standard deviation `1 / signal_strength`.
pub fn generate_synthetic(spec: &GeneratorSpec) -> Result<Dataset> {
    spec.validate()?;
    let base = calibrate(spec);
    let protos = unit_prototypes(spec);

    let (n, c, d) = (spec.num_samples, spec.num_classes, spec.feature_dim);
    let mut labels = LabelMatrix::zeros(n, c);
    let mut features = Matrix::zeros(n, d);
    let mut rng = RngStream::named(spec.seed, "samples");
    let mut order: Vec<usize> = (0..c).filter(|&k| Some(k) != spec.exclusive_class).collect();
    let mut row = vec![false; c];
    let noise_sd = 1.0 / spec.signal_strength;
    for i in 0..n {
        draw_labels(spec, &base, &mut order, &mut rng, &mut row);
        let x = features.row_mut(i);
        for (k, &y) in row.iter().enumerate() {
            labels.set(i, k, y);
            if y {
                for (xv, &pv) in x.iter_mut().zip(protos.row(k)) {
                    *xv += pv;
                }
            }
        }
        for xv in x.iter_mut() {
            *xv += noise_sd * rng.normal();
        }
    }

    let counts = labels.column_counts();
    for k in 0..c {
        let p = spec.prevalence[k];
        let expected = p * n as f64;
        let dev = (counts[k] as f64 - expected).abs();
        let rel = dev / expected;
        let z = dev / (expected * (1.0 - p)).sqrt();
        if rel > FEASIBILITY_TOLERANCE && z > FEASIBILITY_MIN_Z {
            return Err(Error::Feasibility(format!(
                "class {k}: {} positives, target {:.1} ({:.0}% off)",
                counts[k],
                expected,
                rel * 100.0
            )));
        }
    }

    let ids = (0..n).map(|i| format!("s{i:05}")).collect();
    Dataset::new(ids, features, labels, spec.class_names.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unreachable_prevalence_is_infeasible() {
        // rows without the exclusive label must carry another one
        let mut spec = GeneratorSpec::independent(2000, vec![0.1, 0.1, 0.5], 8, 1);
        spec.exclusive_class = Some(2);
        assert!(matches!(generate_synthetic(&spec), Err(Error::Feasibility(_))));
    }

    #[test]
    fn small_datasets_tolerate_sampling_noise() {
        for seed in 0..5 {
            let spec = GeneratorSpec {
                num_samples: 300,
                ..small(seed)
            };
            generate_synthetic(&spec).unwrap();
        }
    }

    fn small(seed: u64) -> GeneratorSpec {
        GeneratorSpec {
            num_samples: 2000,
            ..GeneratorSpec {
                seed,
                ..GeneratorSpec::reference_default()
            }
        }
    }

    #[test]
    fn exclusive_class_never_cooccurs() {
        let ds = generate_synthetic(&small(3)).unwrap();
        for i in 0..ds.len() {
            let row = ds.labels().row(i);
            if row[NO_FINDING] {
                assert_eq!(row.iter().filter(|&&y| y).count(), 1, "row {i}");
            } else {
                assert!(row.iter().any(|&y| y), "row {i} is empty");
            }
        }
    }

    #[test]
    fn independent_prevalence_is_accurate() {
        let spec = GeneratorSpec::independent(10_000, vec![0.3, 0.1], 8, 11);
        let ds = generate_synthetic(&spec).unwrap();
        let p = ds.prevalence();
        assert!((p[0] - 0.3).abs() <= 0.02, "{p:?}");
        assert!((p[1] - 0.1).abs() <= 0.02, "{p:?}");
    }

    #[test]
    fn reference_prevalences_are_reproduced() {
        let spec = GeneratorSpec {
            num_samples: 10_000,
            ..GeneratorSpec::reference_default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        for (k, (&got, &want)) in ds.prevalence().iter().zip(REFERENCE_PREVALENCE.iter()).enumerate() {
            assert!((got - want).abs() <= 0.02, "class {k}: {got} vs {want}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(&small(5)).unwrap();
        let b = generate_synthetic(&small(5)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&small(6)).unwrap();
        assert_ne!(a.features(), c.features());
    }

    #[test]
    fn default_dataset_shows_imbalance() {
        let ds = generate_synthetic(&GeneratorSpec::reference_default()).unwrap();
        let p = ds.prevalence();
        let modal = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        assert_eq!(modal, NO_FINDING);
        assert!(p.iter().sum::<f64>() > 1.0);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = small(1);
        spec.prevalence[0] = 1.0;
        assert!(matches!(generate_synthetic(&spec), Err(Error::Config(_))));
        let mut spec = small(1);
        spec.cooccurrence[1] = 2.0;
        assert!(generate_synthetic(&spec).is_err());
        let mut spec = small(1);
        spec.prevalence[1] = 0.7;
        assert!(generate_synthetic(&spec).is_err());
    }
}
