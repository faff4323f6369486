//! Multi-label losses over sigmoid logits, each returning the mean loss and
//! its exact gradient with respect to the logits.
//!
//! Five variants are provided:
//!
//! - [`bce_loss`]: plain binary cross-entropy averaged over all `N x C` terms.
//! - [`weighted_bce_loss`]: positive terms scaled by `(N - n_k) / N`,
//!   negative terms by `n_k / N`.
//! - [`focal_loss`]: BCE terms modulated by `(1 - p_t)^gamma`.
//! - [`db_loss`] with [`LossKind::Db`]: distribution-balanced loss, i.e.
//!   re-balanced weights `r_hat` times a negative-tolerant BCE with class
//!   margins `v_k` and negative rescale `lambda`.
//! - [`db_loss`] with [`LossKind::ModifiedDb`]: as above, but the weight of an
//!   exclusive "no finding" class is damped by adding `c_hat` to its
//!   instance-level sampling frequency.
//!
//! Weights depend only on labels and class statistics, never on logits, so
//! the gradients are exact.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numcore::{sigmoid, softplus, LabelMatrix, Matrix};

// ---------------------------------------------------------------------------
// Class statistics
// ---------------------------------------------------------------------------

/// Per-class positive counts of a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    num_samples: usize,
    positives: Vec<usize>,
    c_hat: f64,
}

impl ClassStats {
    /// Builds statistics from raw counts; every count must lie in `1..=N`.
    pub fn from_counts(num_samples: usize, positives: Vec<usize>) -> Result<Self> {
        if positives.is_empty() {
            return Err(Error::Contract("class statistics need at least one class".into()));
        }
        for (k, &n) in positives.iter().enumerate() {
            if n == 0 {
                return Err(Error::DegenerateClass { class: k });
            }
            if n > num_samples {
                return Err(Error::Contract(format!(
                    "class {k} has {n} positives but only {num_samples} samples"
                )));
            }
        }
        let c = positives.len() as f64;
        let inv_sum: f64 = positives.iter().map(|&n| 1.0 / n as f64).sum();
        Ok(ClassStats {
            num_samples,
            positives,
            c_hat: inv_sum / (c * c),
        })
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn num_classes(&self) -> usize {
        self.positives.len()
    }

    pub fn positives(&self) -> &[usize] {
        &self.positives
    }

    /// `(1 / C^2) * sum_k 1 / n_k`.
    pub fn c_hat(&self) -> f64 {
        self.c_hat
    }
}

/// Counts positives per class and derives `c_hat`.
///
/// Fails with [`Error::DegenerateClass`] naming the first class without a
/// positive sample.
pub fn compute_class_stats(labels: &LabelMatrix, no_finding_index: Option<usize>) -> Result<ClassStats> {
    if let Some(nf) = no_finding_index {
        if nf >= labels.cols() {
            return Err(Error::Config(format!(
                "no-finding index {nf} out of range for {} classes",
                labels.cols()
            )));
        }
    }
    ClassStats::from_counts(labels.rows(), labels.column_counts())
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Bce,
    WeightedBce,
    Focal,
    Db,
    ModifiedDb,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Bce,
        LossKind::WeightedBce,
        LossKind::Focal,
        LossKind::Db,
        LossKind::ModifiedDb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Bce => "bce",
            LossKind::WeightedBce => "weighted-bce",
            LossKind::Focal => "focal",
            LossKind::Db => "db",
            LossKind::ModifiedDb => "modified-db",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "bce" => Ok(LossKind::Bce),
            "weighted-bce" | "wbce" => Ok(LossKind::WeightedBce),
            "focal" => Ok(LossKind::Focal),
            "db" => Ok(LossKind::Db),
            "modified-db" | "mdb" => Ok(LossKind::ModifiedDb),
            other => Err(Error::Config(format!("unknown loss variant '{other}'"))),
        }
    }
}

/// Hyperparameters shared by all loss variants.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Lift of the smoothed weight.
    pub alpha: f64,
    /// Slope of the smoothing sigmoid.
    pub beta: f64,
    /// Offset of the smoothing sigmoid.
    pub mu: f64,
    /// Scale of the class margins.
    pub kappa: f64,
    /// Rescale of the negative branch.
    pub lambda: f64,
    /// Focal exponent.
    pub gamma: f64,
    pub no_finding_index: Option<usize>,
    pub variant: LossKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.1,
            beta: 10.0,
            mu: 0.2,
            kappa: 0.05,
            lambda: 5.0,
            gamma: 2.0,
            no_finding_index: None,
            variant: LossKind::Bce,
        }
    }
}

impl LossConfig {
    pub fn with_variant(mut self, variant: LossKind) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let finite = [self.alpha, self.beta, self.mu, self.kappa, self.lambda, self.gamma];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("loss hyperparameters must be finite".into()));
        }
        if self.beta <= 0.0 {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if self.lambda <= 0.0 {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.gamma < 0.0 {
            return Err(Error::Config(format!("gamma must be non-negative, got {}", self.gamma)));
        }
        if let Some(nf) = self.no_finding_index {
            if nf >= num_classes {
                return Err(Error::Config(format!(
                    "no-finding index {nf} out of range for {num_classes} classes"
                )));
            }
        }
        if self.variant == LossKind::ModifiedDb && self.no_finding_index.is_none() {
            return Err(Error::Config("modified-db requires a no-finding class index".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Outputs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// Mean loss over all `N x C` terms.
    pub value: f64,
    /// `d value / d logits`, same shape as the logits.
    pub grad_logits: Matrix,
}

/// Per-entry weights `r` or `r_hat`, shaped like the labels.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix(pub Matrix);

impl WeightMatrix {
    pub fn values(&self) -> &Matrix {
        &self.0
    }
}

fn check_pair(logits: &Matrix, labels: &LabelMatrix) -> Result<()> {
    if logits.shape() != labels.shape() {
        return Err(Error::Shape(format!(
            "logits are {}x{} but labels are {}x{}",
            logits.rows(),
            logits.cols(),
            labels.rows(),
            labels.cols()
        )));
    }
    if logits.rows() == 0 || logits.cols() == 0 {
        return Err(Error::Shape("empty logit matrix".into()));
    }
    if !logits.is_finite() {
        return Err(Error::Domain("logits contain non-finite values".into()));
    }
    Ok(())
}

fn check_stats(labels: &LabelMatrix, stats: &ClassStats) -> Result<()> {
    if stats.num_classes() != labels.cols() {
        return Err(Error::Contract(format!(
            "class statistics cover {} classes but labels have {}",
            stats.num_classes(),
            labels.cols()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Re-balanced weights
// ---------------------------------------------------------------------------

/// Raw re-balancing weights `r_k = P_k^C / P^I`.
///
/// `P_k^C = 1 / (C n_k)` and `P^I = (1 / C) sum_{j: y_j = 1} 1 / n_j`, so
/// the `1 / C` factors cancel. Every class of a row, positive or negative,
/// receives its ratio. When `modified` names the no-finding class, rows that
/// are positive for it get `r = P^C / (P^I + c_hat)` in that column.
///
/// Rows without any positive label have no instance-level frequency; they get
/// `r = 1` everywhere.
pub fn rebalance_weights(
    labels: &LabelMatrix,
    stats: &ClassStats,
    modified: Option<usize>,
) -> Result<WeightMatrix> {
    check_stats(labels, stats)?;
    let c = labels.cols();
    if let Some(nf) = modified {
        if nf >= c {
            return Err(Error::Config(format!("no-finding index {nf} out of range for {c} classes")));
        }
    }
    let cf = c as f64;
    let class_freq: Vec<f64> = stats
        .positives()
        .iter()
        .map(|&n| 1.0 / (cf * n as f64))
        .collect();

    let mut r = Matrix::zeros(labels.rows(), c);
    for i in 0..labels.rows() {
        let y = labels.row(i);
        let instance: f64 = y
            .iter()
            .zip(&class_freq)
            .filter(|(&yk, _)| yk)
            .map(|(_, &p)| p)
            .sum();
        let row = r.row_mut(i);
        if instance == 0.0 {
            row.fill(1.0);
            continue;
        }
        for (k, w) in row.iter_mut().enumerate() {
            *w = class_freq[k] / instance;
        }
        if let Some(nf) = modified {
            if y[nf] {
                row[nf] = class_freq[nf] / (instance + stats.c_hat());
            }
        }
    }
    Ok(WeightMatrix(r))
}

/// Smoothed weights `r_hat = alpha + 1 / (1 + exp(-beta (r - mu)))`.
pub fn smooth_weights(r: &WeightMatrix, config: &LossConfig) -> Result<WeightMatrix> {
    if config.beta <= 0.0 {
        return Err(Error::Config(format!("beta must be positive, got {}", config.beta)));
    }
    let (alpha, beta, mu) = (config.alpha, config.beta, config.mu);
    Ok(WeightMatrix(r.0.map(|v| alpha + sigmoid(beta * (v - mu)))))
}

/// Class margins `v_k = kappa * ln(N / n_k - 1)`.
pub fn class_margins(stats: &ClassStats, kappa: f64) -> Result<Vec<f64>> {
    let n = stats.num_samples() as f64;
    stats
        .positives()
        .iter()
        .enumerate()
        .map(|(k, &nk)| {
            if nk >= stats.num_samples() {
                return Err(Error::MarginUndefined {
                    class: k,
                    count: nk,
                });
            }
            Ok(kappa * (n / nk as f64 - 1.0).ln())
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Loss variants
// ---------------------------------------------------------------------------

pub fn bce_loss(logits: &Matrix, labels: &LabelMatrix) -> Result<LossOutput> {
    check_pair(logits, labels)?;
    let scale = 1.0 / (logits.rows() * logits.cols()) as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut total = 0.0;
    for i in 0..logits.rows() {
        let (z_row, y_row) = (logits.row(i), labels.row(i));
        for (k, g) in grad.row_mut(i).iter_mut().enumerate() {
            let z = z_row[k];
            if y_row[k] {
                total += softplus(-z);
                *g = (sigmoid(z) - 1.0) * scale;
            } else {
                total += softplus(z);
                *g = sigmoid(z) * scale;
            }
        }
    }
    Ok(LossOutput {
        value: total * scale,
        grad_logits: grad,
    })
}

pub fn weighted_bce_loss(logits: &Matrix, labels: &LabelMatrix, stats: &ClassStats) -> Result<LossOutput> {
    check_pair(logits, labels)?;
    check_stats(labels, stats)?;
    let n = stats.num_samples() as f64;
    let w_pos: Vec<f64> = stats.positives().iter().map(|&nk| (n - nk as f64) / n).collect();
    let w_neg: Vec<f64> = stats.positives().iter().map(|&nk| nk as f64 / n).collect();

    let scale = 1.0 / (logits.rows() * logits.cols()) as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut total = 0.0;
    for i in 0..logits.rows() {
        let (z_row, y_row) = (logits.row(i), labels.row(i));
        for (k, g) in grad.row_mut(i).iter_mut().enumerate() {
            let z = z_row[k];
            if y_row[k] {
                total += w_pos[k] * softplus(-z);
                *g = -w_pos[k] * sigmoid(-z) * scale;
            } else {
                total += w_neg[k] * softplus(z);
                *g = w_neg[k] * sigmoid(z) * scale;
            }
        }
    }
    Ok(LossOutput {
        value: total * scale,
        grad_logits: grad,
    })
}

/// Focal loss without a class-balancing factor.
///
/// With `s = +1` for positives and `-1` for negatives, `u = s z` and
/// `q = sigmoid(u)`, each term is `(1 - q)^gamma softplus(-u)` and
/// `d/dz = -s (1 - q)^gamma [gamma q softplus(-u) + (1 - q)]`.
pub fn focal_loss(logits: &Matrix, labels: &LabelMatrix, gamma: f64) -> Result<LossOutput> {
    check_pair(logits, labels)?;
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::Config(format!("gamma must be non-negative, got {gamma}")));
    }
    let scale = 1.0 / (logits.rows() * logits.cols()) as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut total = 0.0;
    for i in 0..logits.rows() {
        let (z_row, y_row) = (logits.row(i), labels.row(i));
        for (k, g) in grad.row_mut(i).iter_mut().enumerate() {
            let s = if y_row[k] { 1.0 } else { -1.0 };
            let u = s * z_row[k];
            let q = sigmoid(u);
            let miss = sigmoid(-u);
            let ce = softplus(-u);
            let modulator = if gamma == 0.0 { 1.0 } else { miss.powf(gamma) };
            total += modulator * ce;
            *g = -s * modulator * (gamma * q * ce + miss) * scale;
        }
    }
    Ok(LossOutput {
        value: total * scale,
        grad_logits: grad,
    })
}

/// Negative-tolerant BCE with per-entry weights.
///
/// Each term is `w [y softplus(-(z - v)) + (1 - y) softplus(lambda (z - v)) / lambda]`,
/// averaged over all entries. [`db_loss`] calls this with `w = r_hat`.
pub fn db_loss_weighted(
    logits: &Matrix,
    labels: &LabelMatrix,
    margins: &[f64],
    lambda: f64,
    weights: &Matrix,
) -> Result<LossOutput> {
    check_pair(logits, labels)?;
    if margins.len() != logits.cols() {
        return Err(Error::Shape(format!(
            "{} margins for {} classes",
            margins.len(),
            logits.cols()
        )));
    }
    if !logits.same_shape(weights) {
        return Err(Error::Shape("weight matrix shape differs from logits".into()));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }
    let scale = 1.0 / (logits.rows() * logits.cols()) as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut total = 0.0;
    for i in 0..logits.rows() {
        let (z_row, y_row, w_row) = (logits.row(i), labels.row(i), weights.row(i));
        for (k, g) in grad.row_mut(i).iter_mut().enumerate() {
            let shifted = z_row[k] - margins[k];
            let w = w_row[k];
            if y_row[k] {
                total += w * softplus(-shifted);
                *g = -w * sigmoid(-shifted) * scale;
            } else {
                total += w * softplus(lambda * shifted) / lambda;
                *g = w * sigmoid(lambda * shifted) * scale;
            }
        }
    }
    Ok(LossOutput {
        value: total * scale,
        grad_logits: grad,
    })
}

/// Smoothed re-balanced weights for a batch, as used by the DB variants.
pub fn db_weights(labels: &LabelMatrix, stats: &ClassStats, config: &LossConfig) -> Result<WeightMatrix> {
    let modified = match config.variant {
        LossKind::ModifiedDb => Some(config.no_finding_index.ok_or_else(|| {
            Error::Config("modified-db requires a no-finding class index".into())
        })?),
        _ => None,
    };
    let raw = rebalance_weights(labels, stats, modified)?;
    smooth_weights(&raw, config)
}

/// Distribution-balanced loss, original or modified per `config.variant`.
pub fn db_loss(
    logits: &Matrix,
    labels: &LabelMatrix,
    stats: &ClassStats,
    config: &LossConfig,
) -> Result<LossOutput> {
    if !matches!(config.variant, LossKind::Db | LossKind::ModifiedDb) {
        return Err(Error::Config(format!(
            "db_loss called with variant {}",
            config.variant
        )));
    }
    config.validate(labels.cols())?;
    check_pair(logits, labels)?;
    check_stats(labels, stats)?;
    let weights = db_weights(labels, stats, config)?;
    let margins = class_margins(stats, config.kappa)?;
    db_loss_weighted(logits, labels, &margins, config.lambda, &weights.0)
}

/// Routes to the loss selected by `config.variant`.
pub fn loss_dispatch(
    logits: &Matrix,
    labels: &LabelMatrix,
    stats: &ClassStats,
    config: &LossConfig,
) -> Result<LossOutput> {
    config.validate(labels.cols())?;
    match config.variant {
        LossKind::Bce => bce_loss(logits, labels),
        LossKind::WeightedBce => weighted_bce_loss(logits, labels, stats),
        LossKind::Focal => focal_loss(logits, labels, config.gamma),
        LossKind::Db | LossKind::ModifiedDb => db_loss(logits, labels, stats, config),
    }
}
