//! Incremental-classification objectives and prediction-time bias removal.
//!
//! During an increment the model sees `n` old classes (known only through a
//! frozen teacher and replayed samples) and `m` new ones. Training minimizes
//! a convex combination of
//!
//! * a distillation term that holds the first `n` logits close to the
//!   teacher's temperature-softened output distribution, and
//! * plain cross-entropy over all `n + m` classes,
//!
//! weighted `lambda` and `1 - lambda`. Because the replayed old-class data is
//! heavily outnumbered, the trained head over-scores new classes; prediction
//! multiplies new-class probabilities by a scalar `beta <= 1` chosen on a
//! small validation set to undo that bias.

use crate::data::LabeledBatch;
use crate::error::{Error, Result};
use crate::net::{ClassifierNet, FrozenClassifier};
use crate::optim::{Sgd, SgdConfig};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Softening temperature applied to both teacher and student logits inside
/// the distillation term.
pub const DEFAULT_TEMPERATURE: f64 = 2.0;

/// Fraction of epochs after which the learning rate drops by 10x.
const LR_DROP_AT: f64 = 0.7;

/// Shape of one increment's objective.
#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    /// Distillation weight in `[0, 1]`; cross-entropy gets `1 - lambda`.
    pub lambda: f64,
    pub temperature: f64,
    pub old_classes: usize,
    pub new_classes: usize,
}

impl LossConfig {
    pub fn new(lambda: f64, old_classes: usize, new_classes: usize) -> Result<LossConfig> {
        let cfg = LossConfig {
            lambda,
            temperature: DEFAULT_TEMPERATURE,
            old_classes,
            new_classes,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_temperature(mut self, temperature: f64) -> LossConfig {
        self.temperature = temperature;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::contract(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::contract(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.old_classes == 0 || self.new_classes == 0 {
            return Err(Error::contract(format!(
                "an increment needs old and new classes, got {} old / {} new",
                self.old_classes, self.new_classes
            )));
        }
        Ok(())
    }

    pub fn total_classes(&self) -> usize {
        self.old_classes + self.new_classes
    }
}

/// Prediction-time scaling of new-class probabilities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiasCorrection {
    /// Multiplier in `[0, 1]` applied to the last `new_classes` columns.
    pub beta: f64,
    pub old_classes: usize,
    pub new_classes: usize,
}

impl BiasCorrection {
    pub fn new(beta: f64, old_classes: usize, new_classes: usize) -> Result<BiasCorrection> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::contract(format!(
                "beta must lie in [0, 1], got {beta}"
            )));
        }
        Ok(BiasCorrection {
            beta,
            old_classes,
            new_classes,
        })
    }

    /// `beta = 1`: predictions are left untouched.
    pub fn identity(old_classes: usize, new_classes: usize) -> BiasCorrection {
        BiasCorrection {
            beta: 1.0,
            old_classes,
            new_classes,
        }
    }

    pub fn total_classes(&self) -> usize {
        self.old_classes + self.new_classes
    }
}

/// The canonical `beta` search grid: `0.0, 0.1, ..., 1.0`.
pub fn beta_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Distillation term.
///
/// The teacher's logits over the `n` old classes and the student's first `n`
/// logits are both softened by `cfg.temperature` and renormalized over those
/// `n` classes alone; the loss is the batch-mean cross-entropy between the
/// two distributions. Gradients flow only through `new_logits`.
pub fn distillation_loss(
    teacher: &FrozenClassifier,
    new_logits: &Tensor,
    batch_inputs: &Tensor,
    cfg: &LossConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    let n = cfg.old_classes;
    if teacher.class_count() != n {
        return Err(Error::contract(format!(
            "teacher knows {} classes but the loss expects {} old classes",
            teacher.class_count(),
            n
        )));
    }
    let (batch, cols) = new_logits.dims2();
    if cols != cfg.total_classes() {
        return Err(Error::contract(format!(
            "logits have {cols} columns but the increment has {} classes",
            cfg.total_classes()
        )));
    }
    if batch == 0 {
        return Err(Error::contract("distillation over an empty batch"));
    }
    let target = teacher.forward(batch_inputs).softmax(cfg.temperature).detach();
    let student_logp = new_logits.slice_cols(0..n).log_softmax(cfg.temperature);
    Ok(target.mul(&student_logp).sum().scale(-1.0 / batch as f64))
}

/// Batch-mean cross-entropy at temperature 1 over all columns of `logits`.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (batch, k) = logits.dims2();
    if batch != labels.len() {
        return Err(Error::contract(format!(
            "{batch} logit rows but {} labels",
            labels.len()
        )));
    }
    if batch == 0 {
        return Err(Error::contract("cross-entropy over an empty batch"));
    }
    let mut onehot = vec![0.0; batch * k];
    for (i, &label) in labels.iter().enumerate() {
        if label == 0 || label > k {
            return Err(Error::contract(format!(
                "label {label} outside [1, {k}]"
            )));
        }
        onehot[i * k + (label - 1)] = 1.0;
    }
    let targets = Tensor::new(onehot, &[batch, k]);
    let logp = logits.log_softmax(1.0);
    Ok(targets.mul(&logp).sum().scale(-1.0 / batch as f64))
}

/// `lambda * distill + (1 - lambda) * ce`.
///
/// The endpoints short-circuit to the untouched input node, so `lambda = 0`
/// is exactly cross-entropy and `lambda = 1` exactly distillation, bit for
/// bit, gradients included.
pub fn combined_loss(distill: &Tensor, ce: &Tensor, cfg: &LossConfig) -> Tensor {
    if cfg.lambda == 0.0 {
        ce.clone()
    } else if cfg.lambda == 1.0 {
        distill.clone()
    } else {
        distill.scale(cfg.lambda).add(&ce.scale(1.0 - cfg.lambda))
    }
}

/// Scales the last `new_classes` probability columns by `beta`. Intended for
/// prediction only: scores are no longer normalized and the result carries no
/// gradient.
pub fn apply_bias(probabilities: &Tensor, bc: &BiasCorrection) -> Tensor {
    let (rows, cols) = probabilities.dims2();
    assert!(
        cols == bc.total_classes(),
        "bias correction covers {} classes but probabilities have {cols} columns",
        bc.total_classes()
    );
    let mut vals = probabilities.to_vec();
    for r in 0..rows {
        for c in bc.old_classes..cols {
            vals[r * cols + c] *= bc.beta;
        }
    }
    Tensor::new(vals, &[rows, cols])
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn predict_scores(net: &ClassifierNet, bc: &BiasCorrection, inputs: &Tensor) -> Tensor {
    assert!(
        net.class_count() == bc.total_classes(),
        "bias correction covers {} classes but the network has {}",
        bc.total_classes(),
        net.class_count()
    );
    let probs = net.forward(inputs).softmax(1.0).detach();
    apply_bias(&probs, bc)
}

/// Bias-corrected argmax labels (1-based). Ties resolve to the smallest
/// class index.
pub fn predict(net: &ClassifierNet, bc: &BiasCorrection, inputs: &Tensor) -> Vec<usize> {
    let scores = predict_scores(net, bc, inputs);
    let (rows, cols) = scores.dims2();
    let v = scores.values();
    (0..rows).map(|r| argmax(&v[r * cols..(r + 1) * cols]) + 1).collect()
}

fn accuracy_at_beta(probs: &[f64], rows: usize, cols: usize, bc: &BiasCorrection, labels: &[usize]) -> f64 {
    let mut hits = 0usize;
    let mut scored = vec![0.0; cols];
    for r in 0..rows {
        let row = &probs[r * cols..(r + 1) * cols];
        scored[..bc.old_classes].copy_from_slice(&row[..bc.old_classes]);
        for c in bc.old_classes..cols {
            scored[c] = row[c] * bc.beta;
        }
        if argmax(&scored) + 1 == labels[r] {
            hits += 1;
        }
    }
    hits as f64 / rows as f64
}

/// Picks the grid `beta` maximizing validation accuracy; ties resolve toward
/// the largest `beta` (the least intervention).
///
/// The validation set must contain at least one old-class and one new-class
/// sample, otherwise the estimate is vacuous and an error is returned.
pub fn estimate_bias(
    net: &ClassifierNet,
    old_classes: usize,
    validation: &LabeledBatch,
    grid: &[f64],
) -> Result<BiasCorrection> {
    if validation.is_empty() {
        return Err(Error::contract("empty validation set"));
    }
    if grid.is_empty() {
        return Err(Error::contract("empty beta grid"));
    }
    let total = net.class_count();
    if old_classes == 0 || old_classes >= total {
        return Err(Error::contract(format!(
            "old class count {old_classes} must split the network's {total} classes"
        )));
    }
    let new_classes = total - old_classes;
    if !validation.labels().iter().any(|&l| l <= old_classes) {
        return Err(Error::contract(
            "validation set has no old-class samples",
        ));
    }
    if !validation.labels().iter().any(|&l| l > old_classes) {
        return Err(Error::contract(
            "validation set has no new-class samples",
        ));
    }
    let probs = net.forward(validation.inputs()).softmax(1.0).detach();
    let (rows, cols) = probs.dims2();
    let pv = probs.to_vec();

    let mut best: Option<(f64, f64)> = None; // (accuracy, beta)
    for &beta in grid {
        let bc = BiasCorrection::new(beta, old_classes, new_classes)?;
        let acc = accuracy_at_beta(&pv, rows, cols, &bc, validation.labels());
        let better = match best {
            None => true,
            Some((best_acc, best_beta)) => {
                acc > best_acc || (acc == best_acc && beta > best_beta)
            }
        };
        if better {
            best = Some((acc, beta));
        }
    }
    let (_, beta) = best.unwrap();
    BiasCorrection::new(beta, old_classes, new_classes)
}

/// Epoch index at which the 10x learning-rate drop happens.
pub fn lr_drop_epoch(epochs: usize) -> usize {
    (epochs as f64 * LR_DROP_AT).ceil() as usize
}

struct TrainLoop<'a> {
    teacher: Option<(&'a FrozenClassifier, &'a LossConfig)>,
    opt: &'a SgdConfig,
    epochs: usize,
    batch_size: usize,
}

/// Shuffled minibatch SGD shared by incremental and plain training. The
/// learning rate is constant except for a single 10x drop at 70% of epochs.
fn run_train_loop(
    net: ClassifierNet,
    data: &LabeledBatch,
    loop_cfg: &TrainLoop,
    rng: &mut RngState,
) -> Result<ClassifierNet> {
    if data.is_empty() {
        return Err(Error::contract("training data is empty"));
    }
    if loop_cfg.epochs == 0 {
        return Err(Error::contract("epochs must be positive"));
    }
    if loop_cfg.batch_size == 0 {
        return Err(Error::contract("batch size must be positive"));
    }
    let mut sgd = Sgd::new(loop_cfg.opt.clone())?;
    let base_lr = loop_cfg.opt.learning_rate;
    let drop_at = lr_drop_epoch(loop_cfg.epochs);
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..loop_cfg.epochs {
        if epoch == drop_at && epoch > 0 {
            sgd.set_learning_rate(base_lr * 0.1);
        }
        rng.shuffle(&mut order);
        for chunk in order.chunks(loop_cfg.batch_size) {
            let batch = data.select(chunk);
            let logits = net.forward(batch.inputs());
            // Catch runaway weights before the softmax machinery, which
            // treats non-finite logits as a programmer error and panics.
            if !logits.values().iter().all(|v| v.is_finite()) {
                return Err(Error::Diverged {
                    iteration: step,
                    detail: "logits overflowed; lower the learning rate".into(),
                });
            }
            let ce = cross_entropy_loss(&logits, batch.labels())?;
            let loss = match loop_cfg.teacher {
                Some((teacher, cfg)) if cfg.lambda > 0.0 => {
                    let d = distillation_loss(teacher, &logits, batch.inputs(), cfg)?;
                    combined_loss(&d, &ce, cfg)
                }
                _ => ce,
            };
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    iteration: step,
                    detail: format!("loss became {value}"),
                });
            }
            loss.backward();
            sgd.step(net.params())?;
            step += 1;
        }
    }
    Ok(net)
}

/// Trains an expanded classifier on the union of replayed memory and new-class
/// data with the combined objective.
///
/// `memory` may be empty (distillation then constrains the new data only,
/// which is exactly the no-memory baseline). With `lambda = 0` the teacher is
/// never consulted and the trajectory is identical to plain cross-entropy
/// training on the same union.
#[allow(clippy::too_many_arguments)]
pub fn incremental_train(
    teacher: &FrozenClassifier,
    net: ClassifierNet,
    new_data: &LabeledBatch,
    memory: &LabeledBatch,
    cfg: &LossConfig,
    opt: &SgdConfig,
    epochs: usize,
    batch_size: usize,
    rng: &mut RngState,
) -> Result<ClassifierNet> {
    cfg.validate()?;
    if net.class_count() != cfg.total_classes() {
        return Err(Error::contract(format!(
            "network has {} outputs but the increment covers {} classes",
            net.class_count(),
            cfg.total_classes()
        )));
    }
    if new_data.is_empty() {
        return Err(Error::contract("no new-class training data"));
    }
    if let Some(bad) = new_data
        .labels()
        .iter()
        .find(|&&l| l <= cfg.old_classes || l > cfg.total_classes())
    {
        return Err(Error::contract(format!(
            "new-data label {bad} outside ({}, {}]",
            cfg.old_classes,
            cfg.total_classes()
        )));
    }
    if let Some(bad) = memory.labels().iter().find(|&&l| l > cfg.old_classes) {
        return Err(Error::contract(format!(
            "memory label {bad} outside [1, {}]",
            cfg.old_classes
        )));
    }
    let union = memory.concat(new_data)?;
    let loop_cfg = TrainLoop {
        teacher: Some((teacher, cfg)),
        opt,
        epochs,
        batch_size,
    };
    run_train_loop(net, &union, &loop_cfg, rng)
}

/// Plain cross-entropy training, used for the first increment and for joint
/// baselines. Shares the exact loop (shuffling, schedule) with
/// [`incremental_train`].
pub fn fit_classifier(
    net: ClassifierNet,
    data: &LabeledBatch,
    opt: &SgdConfig,
    epochs: usize,
    batch_size: usize,
    rng: &mut RngState,
) -> Result<ClassifierNet> {
    let max = data.max_label();
    if max > net.class_count() {
        return Err(Error::contract(format!(
            "label {max} outside [1, {}]",
            net.class_count()
        )));
    }
    let loop_cfg = TrainLoop {
        teacher: None,
        opt,
        epochs,
        batch_size,
    };
    run_train_loop(net, data, &loop_cfg, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SourceTag;

    fn rng() -> RngState {
        RngState::new(17)
    }

    fn teacher_over(n: usize) -> FrozenClassifier {
        ClassifierNet::new(&[2, 8, n], &mut rng()).unwrap().snapshot()
    }

    #[test]
    fn distillation_uniform_teacher_two_classes_is_ln2() {
        // A teacher with identical logits for both classes emits the uniform
        // distribution; matching student logits give loss exactly ln 2.
        let teacher = {
            let net = ClassifierNet::new(&[2, 4, 2], &mut rng()).unwrap();
            for p in net.params() {
                p.tensor().update_values(|v| v.iter_mut().for_each(|x| *x = 0.0));
            }
            net.snapshot()
        };
        let cfg = LossConfig::new(0.5, 2, 1).unwrap();
        let inputs = Tensor::new(vec![0.7, -0.3], &[1, 2]);
        let logits = Tensor::new(vec![0.0, 0.0, 5.0], &[1, 3]);
        let loss = distillation_loss(&teacher, &logits, &inputs, &cfg).unwrap();
        assert!((loss.item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn distillation_is_stationary_when_student_matches_teacher() {
        // If the student's old-class logits equal the teacher's exactly, the
        // gradient with respect to those logits vanishes.
        let teacher = teacher_over(3);
        let inputs = Tensor::new(vec![0.4, 0.6, -1.0, 0.2], &[2, 2]);
        let tlogits = teacher.forward(&inputs).to_vec();
        let mut vals = Vec::new();
        for r in 0..2 {
            vals.extend_from_slice(&tlogits[r * 3..(r + 1) * 3]);
            vals.push(0.3); // a new-class logit, arbitrary
        }
        let logits = Tensor::new(vals, &[2, 4]);
        logits.set_requires_grad(true);
        let cfg = LossConfig::new(1.0, 3, 1).unwrap();
        let loss = distillation_loss(&teacher, &logits, &inputs, &cfg).unwrap();
        loss.backward();
        for g in logits.grad().unwrap() {
            assert!(g.abs() < 1e-9, "expected stationarity, got gradient {g}");
        }
    }

    #[test]
    fn distillation_rejects_old_class_mismatch() {
        let teacher = teacher_over(3);
        let cfg = LossConfig::new(0.5, 2, 1).unwrap();
        let inputs = Tensor::zeros(&[1, 2]);
        let logits = Tensor::zeros(&[1, 3]);
        assert!(distillation_loss(&teacher, &logits, &inputs, &cfg).is_err());
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln_k() {
        let logits = Tensor::zeros(&[4, 5]);
        let loss = cross_entropy_loss(&logits, &[1, 2, 3, 5]).unwrap();
        assert!((loss.item() - (5.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rewards_correct_confidence() {
        let good = Tensor::new(vec![10.0, 0.0, 0.0], &[1, 3]);
        let bad = Tensor::new(vec![0.0, 10.0, 0.0], &[1, 3]);
        let lg = cross_entropy_loss(&good, &[1]).unwrap().item();
        let lb = cross_entropy_loss(&bad, &[1]).unwrap().item();
        assert!(lg < 1e-4);
        assert!(lb > 5.0);
    }

    #[test]
    fn cross_entropy_names_bad_label() {
        let logits = Tensor::zeros(&[1, 3]);
        let err = cross_entropy_loss(&logits, &[4]).unwrap_err();
        assert!(err.to_string().contains("label 4 outside [1, 3]"));
    }

    #[test]
    fn combined_endpoints_are_the_exact_inputs() {
        let d = Tensor::scalar(3.0);
        let c = Tensor::scalar(5.0);
        let cfg0 = LossConfig::new(0.0, 1, 1).unwrap();
        let cfg1 = LossConfig::new(1.0, 1, 1).unwrap();
        assert_eq!(combined_loss(&d, &c, &cfg0).item().to_bits(), 5.0f64.to_bits());
        assert_eq!(combined_loss(&d, &c, &cfg1).item().to_bits(), 3.0f64.to_bits());
        let cfg_mid = LossConfig::new(0.25, 1, 1).unwrap();
        assert!((combined_loss(&d, &c, &cfg_mid).item() - 4.5).abs() < 1e-15);
    }

    #[test]
    fn apply_bias_scales_only_new_columns() {
        let probs = Tensor::new(vec![0.2, 0.3, 0.5, 0.1, 0.1, 0.8], &[2, 3]);
        let bc = BiasCorrection::new(0.5, 2, 1).unwrap();
        let out = apply_bias(&probs, &bc);
        assert_eq!(out.to_vec(), vec![0.2, 0.3, 0.25, 0.1, 0.1, 0.4]);
    }

    #[test]
    fn apply_bias_identity_changes_nothing() {
        let probs = Tensor::new(vec![0.25, 0.25, 0.5], &[1, 3]);
        let out = apply_bias(&probs, &BiasCorrection::identity(1, 2));
        assert_eq!(out.to_vec(), probs.to_vec());
    }

    #[test]
    fn beta_zero_never_predicts_new_classes() {
        let net = ClassifierNet::new(&[2, 8, 4], &mut rng()).unwrap();
        let bc = BiasCorrection::new(0.0, 2, 2).unwrap();
        let inputs = {
            let mut r = rng();
            Tensor::new((0..40).map(|_| r.normal() * 3.0).collect(), &[20, 2])
        };
        for p in predict(&net, &bc, &inputs) {
            assert!(p <= 2, "beta 0 must suppress new classes, predicted {p}");
        }
    }

    #[test]
    fn predict_ties_resolve_to_smallest_class() {
        // Zero logits for every class: every probability ties.
        let net = ClassifierNet::new(&[2, 4, 3], &mut rng()).unwrap();
        for p in net.params() {
            p.tensor().update_values(|v| v.iter_mut().for_each(|x| *x = 0.0));
        }
        let preds = predict(
            &net,
            &BiasCorrection::identity(2, 1),
            &Tensor::new(vec![1.0, 2.0], &[1, 2]),
        );
        assert_eq!(preds, vec![1]);
    }

    #[test]
    fn estimate_bias_returns_grid_member_maximizing_validation_accuracy() {
        let mut r = rng();
        let net = ClassifierNet::new(&[2, 16, 4], &mut r).unwrap();
        let rows: Vec<Vec<f64>> = (0..40).map(|i| {
            let c = i % 4;
            let angle = c as f64 * std::f64::consts::FRAC_PI_2;
            vec![4.0 * angle.cos() + r.normal(), 4.0 * angle.sin() + r.normal()]
        }).collect();
        let labels: Vec<usize> = (0..40).map(|i| i % 4 + 1).collect();
        let val = LabeledBatch::from_rows(&rows, labels, SourceTag::NewData).unwrap();
        let grid = beta_grid();
        let bc = estimate_bias(&net, 2, &val, &grid).unwrap();
        assert!(grid.contains(&bc.beta));

        // Exhaustive check against direct evaluation of every grid member.
        let probs = net.forward(val.inputs()).softmax(1.0).detach();
        let (rows_n, cols) = probs.dims2();
        let pv = probs.to_vec();
        let mut best = (f64::NEG_INFINITY, -1.0);
        for &beta in &grid {
            let cand = BiasCorrection::new(beta, 2, 2).unwrap();
            let acc = accuracy_at_beta(&pv, rows_n, cols, &cand, val.labels());
            if acc > best.0 || (acc == best.0 && beta > best.1) {
                best = (acc, beta);
            }
        }
        assert_eq!(bc.beta, best.1);
    }

    #[test]
    fn estimate_bias_tie_breaks_toward_largest_beta() {
        // A network with all-zero weights scores every class equally, so
        // every beta gives identical accuracy; the largest must win.
        let net = ClassifierNet::new(&[2, 4, 4], &mut rng()).unwrap();
        for p in net.params() {
            p.tensor().update_values(|v| v.iter_mut().for_each(|x| *x = 0.0));
        }
        let val = LabeledBatch::from_rows(
            &[vec![0.0, 0.0], vec![1.0, 1.0]],
            vec![1, 3],
            SourceTag::NewData,
        )
        .unwrap();
        let bc = estimate_bias(&net, 2, &val, &beta_grid()).unwrap();
        assert_eq!(bc.beta, 1.0);
    }

    #[test]
    fn estimate_bias_contract_errors() {
        let net = ClassifierNet::new(&[2, 4, 4], &mut rng()).unwrap();
        let empty = LabeledBatch::empty(2, SourceTag::NewData);
        assert!(estimate_bias(&net, 2, &empty, &beta_grid()).is_err());

        let only_old = LabeledBatch::from_rows(&[vec![0.0, 0.0]], vec![1], SourceTag::NewData).unwrap();
        assert!(estimate_bias(&net, 2, &only_old, &beta_grid()).is_err());
        let only_new = LabeledBatch::from_rows(&[vec![0.0, 0.0]], vec![3], SourceTag::NewData).unwrap();
        assert!(estimate_bias(&net, 2, &only_new, &beta_grid()).is_err());
    }

    #[test]
    fn lr_drop_epoch_is_seventy_percent() {
        assert_eq!(lr_drop_epoch(10), 7);
        assert_eq!(lr_drop_epoch(40), 28);
        assert_eq!(lr_drop_epoch(1), 1); // never reached: no drop
    }

    fn two_cluster_batch(n_per: usize, labels: (usize, usize), seed: u64) -> LabeledBatch {
        let mut r = RngState::new(seed);
        let mut rows = Vec::new();
        let mut ls = Vec::new();
        for i in 0..2 * n_per {
            let (cx, label) = if i < n_per { (-4.0, labels.0) } else { (4.0, labels.1) };
            rows.push(vec![cx + r.normal(), r.normal()]);
            ls.push(label);
        }
        LabeledBatch::from_rows(&rows, ls, SourceTag::NewData).unwrap()
    }

    #[test]
    fn fit_classifier_learns_two_separated_classes() {
        let data = two_cluster_batch(50, (1, 2), 3);
        let net = ClassifierNet::new(&[2, 16, 2], &mut RngState::new(4)).unwrap();
        let opt = SgdConfig::new(0.1).unwrap().with_momentum(0.9);
        let net = fit_classifier(net, &data, &opt, 20, 16, &mut RngState::new(5)).unwrap();
        let preds = predict(&net, &BiasCorrection::identity(2, 0), data.inputs());
        let hits = preds.iter().zip(data.labels()).filter(|(p, l)| p == l).count();
        assert!(hits as f64 / data.len() as f64 > 0.99);
    }

    #[test]
    fn incremental_train_validates_label_ranges() {
        let teacher = teacher_over(2);
        let net = ClassifierNet::new(&[2, 8, 4], &mut rng()).unwrap();
        let cfg = LossConfig::new(0.5, 2, 2).unwrap();
        let opt = SgdConfig::new(0.1).unwrap();
        // New data carrying an old label is rejected.
        let bad_new = two_cluster_batch(4, (1, 3), 8);
        let err = incremental_train(
            &teacher,
            net,
            &bad_new,
            &LabeledBatch::empty(2, SourceTag::OldExemplar),
            &cfg,
            &opt,
            1,
            4,
            &mut rng(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("new-data label"));
    }

    #[test]
    fn incremental_train_rejects_empty_new_data() {
        let teacher = teacher_over(2);
        let net = ClassifierNet::new(&[2, 8, 4], &mut rng()).unwrap();
        let cfg = LossConfig::new(0.5, 2, 2).unwrap();
        let opt = SgdConfig::new(0.1).unwrap();
        let empty = LabeledBatch::empty(2, SourceTag::NewData);
        let mem = LabeledBatch::empty(2, SourceTag::OldExemplar);
        assert!(incremental_train(&teacher, net, &empty, &mem, &cfg, &opt, 1, 4, &mut rng()).is_err());
    }

    #[test]
    fn lambda_zero_ignores_the_teacher_entirely() {
        // Two teachers with different weights must produce the same trained
        // network when lambda is 0.
        let t1 = teacher_over(2);
        let t2 = {
            let net = ClassifierNet::new(&[2, 8, 2], &mut RngState::new(99)).unwrap();
            net.snapshot()
        };
        let new_data = two_cluster_batch(10, (3, 4), 12);
        let mem = LabeledBatch::empty(2, SourceTag::OldExemplar);
        let cfg = LossConfig::new(0.0, 2, 2).unwrap();
        let opt = SgdConfig::new(0.05).unwrap();
        let run = |teacher: &FrozenClassifier| {
            let base = ClassifierNet::new(&[2, 8, 2], &mut RngState::new(7)).unwrap();
            let net = base.expand_head(2, &mut RngState::new(8)).unwrap();
            incremental_train(teacher, net, &new_data, &mem, &cfg, &opt, 3, 4, &mut RngState::new(9)).unwrap()
        };
        let a = run(&t1);
        let b = run(&t2);
        for (pa, pb) in a.params().iter().zip(b.params()) {
            let va = pa.tensor().to_vec();
            let vb = pb.tensor().to_vec();
            assert_eq!(va.len(), vb.len());
            for (x, y) in va.iter().zip(&vb) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn distillation_reduces_forgetting_versus_plain_finetuning() {
        // Train on classes 1-2, then an increment with only classes 3-4
        // placed directly above the old clusters, so new-class training
        // reshapes the function exactly where the old classes live. With
        // lambda = 0.5 the old boundary must survive better than lambda = 0.
        let old_data = two_cluster_batch(60, (1, 2), 21);
        let new_data = {
            let mut r = RngState::new(22);
            let mut rows = Vec::new();
            let mut ls = Vec::new();
            for i in 0..120 {
                let (cx, label) = if i < 60 { (-4.0, 3) } else { (4.0, 4) };
                rows.push(vec![cx + r.normal(), 2.5 + r.normal()]);
                ls.push(label);
            }
            LabeledBatch::from_rows(&rows, ls, SourceTag::NewData).unwrap()
        };
        let opt = SgdConfig::new(0.05).unwrap().with_momentum(0.9);
        let base = ClassifierNet::new(&[2, 32, 2], &mut RngState::new(23)).unwrap();
        let base = fit_classifier(base, &old_data, &opt, 30, 16, &mut RngState::new(24)).unwrap();
        let teacher = base.snapshot();
        let mem = LabeledBatch::empty(2, SourceTag::OldExemplar);

        // Without a replay memory the new-class logits swamp the old ones for
        // any lambda, so measure what distillation actually protects: the
        // decision boundary among the old classes themselves.
        let old_pair_acc = |lambda: f64| {
            let cfg = LossConfig::new(lambda, 2, 2).unwrap();
            let net = base.expand_head(2, &mut RngState::new(25)).unwrap();
            let net =
                incremental_train(&teacher, net, &new_data, &mem, &cfg, &opt, 30, 16, &mut RngState::new(26))
                    .unwrap();
            let logits = net.forward(old_data.inputs());
            let hits = old_data
                .labels()
                .iter()
                .enumerate()
                .filter(|&(i, &l)| {
                    let row = logits.row(i);
                    let pred = if row[0] >= row[1] { 1 } else { 2 };
                    pred == l
                })
                .count();
            hits as f64 / old_data.len() as f64
        };

        let with_distill = old_pair_acc(0.5);
        let without = old_pair_acc(0.0);
        assert!(
            with_distill > without,
            "distillation should retain more: {with_distill} vs {without}"
        );
        assert!(with_distill > 0.9, "distilled old boundary decayed to {with_distill}");
    }
}
