//! Mini-batch SGD with classical momentum under a triangular cyclical
//! learning rate.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{bce_loss, compute_class_stats, focal_loss, loss_dispatch, LossConfig, LossKind, LossOutput};
use crate::metrics::roc_auc;
use crate::model::{backward, forward, predict_proba, square_shape, Architecture, Gradients, ModelParams};
use crate::numcore::{LabelMatrix, Matrix, RngStream};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Peak of the cycle; `6 * base_lr` when unset.
    pub max_lr: Option<f64>,
    /// Steps from trough to peak; four epochs of batches when unset.
    pub cycle_steps: Option<usize>,
    pub momentum: f64,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 80,
            batch_size: 32,
            base_lr: 1e-3,
            max_lr: None,
            cycle_steps: None,
            momentum: 0.9,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn max_lr(&self) -> f64 {
        self.max_lr.unwrap_or(6.0 * self.base_lr)
    }

    pub fn cycle_steps(&self, train_size: usize) -> usize {
        self.cycle_steps
            .unwrap_or_else(|| 4 * train_size.div_ceil(self.batch_size.max(1)))
            .max(2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.max_lr() >= self.base_lr && self.max_lr().is_finite()) {
            return Err(Error::Config(format!(
                "max_lr {} is below base_lr {}",
                self.max_lr(),
                self.base_lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if matches!(self.cycle_steps, Some(s) if s < 2) {
            return Err(Error::Config("cycle_steps must be at least 2".into()));
        }
        Ok(())
    }
}

/// Learning rate at a global step: linear from `base` up to `max` over
/// `cycle_steps` steps, back down over the next `cycle_steps`, repeating.
pub fn triangular_lr(step: usize, base_lr: f64, max_lr: f64, cycle_steps: usize) -> f64 {
    let cs = cycle_steps.max(1);
    let pos = step % (2 * cs);
    let frac = if pos <= cs {
        pos as f64 / cs as f64
    } else {
        (2 * cs - pos) as f64 / cs as f64
    };
    base_lr + (max_lr - base_lr) * frac
}

/// `v <- momentum * v + g`, then `theta <- theta - lr * v`.
pub fn sgd_momentum_step(
    params: &mut ModelParams,
    grads: &Gradients,
    velocity: &mut Gradients,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    let tensors = params.tensors_mut();
    let aligned = grads.0.len() == tensors.len()
        && velocity.0.len() == tensors.len()
        && tensors
            .iter()
            .zip(&grads.0)
            .zip(&velocity.0)
            .all(|((t, g), v)| t.data.len() == g.len() && g.len() == v.len());
    if !aligned {
        return Err(Error::Contract("parameter, gradient and velocity shapes disagree".into()));
    }
    for ((t, g), v) in tensors.iter_mut().zip(&grads.0).zip(velocity.0.iter_mut()) {
        for ((theta, &gi), vi) in t.data.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = momentum * *vi + gi;
            *theta -= lr * *vi;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses.
    pub train_loss: f64,
    pub val_mean_auc: f64,
    /// Rate used by the last step of the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_mean_auc,lr\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, r.val_mean_auc, r.lr);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation mean AUC.
    pub best: ModelParams,
    /// 1-based; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    /// Parameters after the last epoch.
    pub last: ModelParams,
    pub history: TrainHistory,
}

/// Mean AUC over the classes whose labels are two-sided.
pub fn mean_auc(probs: &Matrix, labels: &LabelMatrix) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0;
    for k in 0..labels.cols() {
        match roc_auc(&probs.column(k), &labels.column(k)) {
            Ok(a) => {
                sum += a;
                count += 1;
            }
            Err(Error::UndefinedAuc) => {}
            Err(e) => return Err(e),
        }
    }
    if count == 0 {
        return Err(Error::UndefinedAuc);
    }
    Ok(sum / count as f64)
}

/// Initial parameters for a dataset, drawn from the `init` substream.
pub fn init_model(arch: Architecture, dataset: &Dataset, seed: u64) -> Result<ModelParams> {
    let shape = match arch {
        Architecture::TinyCnn => Some(square_shape(dataset.feature_dim()).ok_or_else(|| {
            Error::Shape(format!(
                "tiny-cnn needs square images; {} features is not a square",
                dataset.feature_dim()
            ))
        })?),
        _ => None,
    };
    ModelParams::init(
        arch,
        dataset.feature_dim(),
        dataset.num_classes(),
        shape,
        &mut RngStream::named(seed, "init"),
    )
}

/// Sample order for one epoch, a pure function of `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    RngStream::named(seed, "shuffle").derive(epoch as u64).shuffle(&mut order);
    order
}

/// Trains `init` on `train_set`, selecting on `val_set`.
///
/// Class statistics for the weighted and distribution-balanced losses come
/// from `train_set` only. A non-finite logit, loss, gradient or parameter
/// aborts with [`Error::Divergence`].
pub fn train(init: ModelParams, train_set: &Dataset, val_set: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Contract("training and validation sets must be nonempty".into()));
    }
    for ds in [train_set, val_set] {
        if ds.feature_dim() != init.input_dim() || ds.num_classes() != init.num_classes() {
            return Err(Error::Shape(format!(
                "dataset is {}x{} (features x classes), model expects {}x{}",
                ds.feature_dim(),
                ds.num_classes(),
                init.input_dim(),
                init.num_classes()
            )));
        }
    }
    config.loss.validate(train_set.num_classes())?;
    let stats = match config.loss.variant {
        LossKind::Bce | LossKind::Focal => None,
        _ => Some(compute_class_stats(train_set.labels(), config.loss.no_finding_index)?),
    };
    let loss_fn = |logits: &Matrix, labels: &LabelMatrix| -> Result<LossOutput> {
        match (&stats, config.loss.variant) {
            (_, LossKind::Bce) => bce_loss(logits, labels),
            (_, LossKind::Focal) => focal_loss(logits, labels, config.loss.gamma),
            (Some(s), _) => loss_dispatch(logits, labels, s, &config.loss),
            (None, _) => unreachable!("statistics computed for weighted variants"),
        }
    };

    let n = train_set.len();
    let cycle = config.cycle_steps(n);
    let max_lr = config.max_lr();
    let mut params = init.clone();
    let mut velocity = Gradients::zeros_like(&params);
    let mut history = TrainHistory::default();
    let mut best = init;
    let mut best_auc = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut step = 0usize;

    for epoch in 1..=config.epochs {
        let order = epoch_order(n, config.seed, epoch);
        let mut loss_sum = 0.0;
        let mut lr = config.base_lr;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let x = train_set.features().select_rows(batch);
            let y = train_set.labels().select_rows(batch);
            let (logits, trace) = forward(&params, &x)?;
            if let Some(&bad) = logits.as_slice().iter().find(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    step: b,
                    value: bad,
                });
            }
            let out = loss_fn(&logits, &y)?;
            let grads = backward(&params, &trace, &out.grad_logits)?;
            let grads_finite = grads.0.iter().flatten().all(|g| g.is_finite());
            if !out.value.is_finite() || !grads_finite {
                return Err(Error::Divergence {
                    epoch,
                    step: b,
                    value: out.value,
                });
            }
            lr = triangular_lr(step, config.base_lr, max_lr, cycle);
            sgd_momentum_step(&mut params, &grads, &mut velocity, lr, config.momentum)?;
            if let Some(&bad) = params.tensors().iter().flat_map(|t| &t.data).find(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    step: b,
                    value: bad,
                });
            }
            loss_sum += out.value * batch.len() as f64;
            step += 1;
        }
        let val_probs = predict_proba(&params, val_set.features())?;
        let val_auc = mean_auc(&val_probs, val_set.labels())?;
        history.records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            val_mean_auc: val_auc,
            lr,
        });
        if val_auc > best_auc {
            best_auc = val_auc;
            best = params.clone();
            best_epoch = Some(epoch);
        }
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: params,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, GeneratorSpec};
    use crate::losses::LossKind;

    fn toy(seed: u64) -> (Dataset, Dataset) {
        let spec = GeneratorSpec {
            signal_strength: 2.0,
            ..GeneratorSpec::independent(260, vec![0.5, 0.3], 4, seed)
        };
        let ds = generate_synthetic(&spec).unwrap();
        let idx: Vec<usize> = (0..ds.len()).collect();
        (ds.subset(&idx[..200]), ds.subset(&idx[200..]))
    }

    #[test]
    fn triangular_lr_examples() {
        assert_eq!(triangular_lr(0, 1e-3, 6e-3, 10), 1e-3);
        assert_eq!(triangular_lr(10, 1e-3, 6e-3, 10), 6e-3);
        assert_eq!(triangular_lr(20, 1e-3, 6e-3, 10), 1e-3);
        assert!((triangular_lr(5, 0.0, 1.0, 10) - 0.5).abs() < 1e-15);
        assert!((triangular_lr(15, 0.0, 1.0, 10) - 0.5).abs() < 1e-15);
        assert_eq!(triangular_lr(25, 0.0, 1.0, 10), triangular_lr(5, 0.0, 1.0, 10));
    }

    fn scalar_model(theta: f64) -> ModelParams {
        let mut p = ModelParams::zeros(Architecture::Linear, 1, 1, None).unwrap();
        p.tensors_mut()[0].data[0] = theta;
        p
    }

    #[test]
    fn momentum_hand_iteration() {
        let mut p = scalar_model(1.0);
        let mut v = Gradients::zeros_like(&p);
        let g = Gradients(vec![vec![2.0], vec![0.0]]);
        sgd_momentum_step(&mut p, &g, &mut v, 0.1, 0.9).unwrap();
        assert_eq!(v.0[0][0], 2.0);
        assert!((p.tensors()[0].data[0] - 0.8).abs() < 1e-15);
        sgd_momentum_step(&mut p, &g, &mut v, 0.1, 0.9).unwrap();
        assert!((v.0[0][0] - 3.8).abs() < 1e-15);
        assert!((p.tensors()[0].data[0] - 0.42).abs() < 1e-15);
    }

    #[test]
    fn momentum_special_cases() {
        let mut p = scalar_model(1.0);
        let mut v = Gradients::zeros_like(&p);
        sgd_momentum_step(&mut p, &Gradients(vec![vec![3.0], vec![0.0]]), &mut v, 0.1, 0.0).unwrap();
        assert!((p.tensors()[0].data[0] - 0.7).abs() < 1e-15);
        let mut v = Gradients(vec![vec![2.0], vec![0.0]]);
        let mut p = scalar_model(1.0);
        let zero = Gradients::zeros_like(&p);
        sgd_momentum_step(&mut p, &zero, &mut v, 0.1, 0.5).unwrap();
        assert!((p.tensors()[0].data[0] - 0.9).abs() < 1e-15);
        let bad = Gradients(vec![vec![1.0, 2.0]]);
        assert!(matches!(
            sgd_momentum_step(&mut p, &bad, &mut v, 0.1, 0.5),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let (tr, va) = toy(1);
        let init = init_model(Architecture::Linear, &tr, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(init.clone(), &tr, &va, &cfg).unwrap();
        assert_eq!(out.best, init);
        assert_eq!(out.last, init);
        assert!(out.history.records.is_empty());
        assert_eq!(out.best_epoch, None);
    }

    #[test]
    fn bce_training_reduces_loss_and_is_deterministic() {
        let (tr, va) = toy(2);
        let cfg = TrainConfig {
            seed: 4,
            ..TrainConfig::default()
        };
        let init = init_model(Architecture::Linear, &tr, cfg.seed).unwrap();
        let (z, _) = forward(&init, tr.features()).unwrap();
        let initial = bce_loss(&z, tr.labels()).unwrap().value;
        let a = train(init.clone(), &tr, &va, &cfg).unwrap();
        let (z, _) = forward(&a.last, tr.features()).unwrap();
        let fin = bce_loss(&z, tr.labels()).unwrap().value;
        assert!(fin < initial, "{fin} >= {initial}");
        assert_eq!(a.history.records.len(), 80);
        let b = train(init, &tr, &va, &cfg).unwrap();
        assert_eq!(a.last, b.last);
        assert_eq!(a.history, b.history);
        let csv = a.history.to_csv();
        assert_eq!(csv.lines().count(), 81);
        assert!(csv.starts_with("epoch,train_loss,val_mean_auc,lr\n1,"));
    }

    #[test]
    fn validation_labels_do_not_affect_trajectory() {
        let (tr, va) = toy(3);
        let mut flipped = va.labels().clone();
        for i in 0..flipped.rows() {
            for k in 0..flipped.cols() {
                flipped.set(i, k, !flipped.get(i, k));
            }
        }
        let va2 = Dataset::new(va.ids().to_vec(), va.features().clone(), flipped, va.class_names().to_vec()).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            loss: LossConfig::default().with_variant(LossKind::Db),
            ..TrainConfig::default()
        };
        let init = init_model(Architecture::Mlp, &tr, 1).unwrap();
        let a = train(init.clone(), &tr, &va, &cfg).unwrap();
        let b = train(init, &tr, &va2, &cfg).unwrap();
        assert_eq!(a.last, b.last);
        let la: Vec<f64> = a.history.records.iter().map(|r| r.train_loss).collect();
        let lb: Vec<f64> = b.history.records.iter().map(|r| r.train_loss).collect();
        assert_eq!(la, lb);
    }

    #[test]
    fn single_full_batch_step_descends() {
        let (tr, _) = toy(5);
        let mut rng = RngStream::new(9, 0);
        let mut params = ModelParams::init(Architecture::Mlp, 4, 2, None, &mut rng).unwrap();
        let cfg = LossConfig::default().with_variant(LossKind::Focal);
        let (z, trace) = forward(&params, tr.features()).unwrap();
        let before = focal_loss(&z, tr.labels(), cfg.gamma).unwrap();
        let grads = backward(&params, &trace, &before.grad_logits).unwrap();
        let mut v = Gradients::zeros_like(&params);
        sgd_momentum_step(&mut params, &grads, &mut v, 1e-4, 0.0).unwrap();
        let (z, _) = forward(&params, tr.features()).unwrap();
        let after = focal_loss(&z, tr.labels(), cfg.gamma).unwrap();
        assert!(after.value < before.value);
    }

    #[test]
    fn shuffle_is_pure_in_seed_and_epoch() {
        assert_eq!(epoch_order(50, 1, 3), epoch_order(50, 1, 3));
        assert_ne!(epoch_order(50, 1, 3), epoch_order(50, 1, 4));
        assert_ne!(epoch_order(50, 1, 3), epoch_order(50, 2, 3));
    }

    #[test]
    fn exploding_learning_rate_reports_divergence() {
        let (tr, va) = toy(6);
        let cfg = TrainConfig {
            base_lr: 1e150,
            momentum: 0.0,
            ..TrainConfig::default()
        };
        let init = init_model(Architecture::Mlp, &tr, 0).unwrap();
        let err = train(init, &tr, &va, &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            TrainConfig { momentum: 1.0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { max_lr: Some(1e-4), ..TrainConfig::default() },
            TrainConfig { cycle_steps: Some(1), ..TrainConfig::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
