//! The incremental benchmark protocol: classes arrive in equal parts under a
//! seeded order, each method trains through the shared loss machinery, and
//! every increment is evaluated on the cumulative test set.
//!
//! All methods draw the same fixed sequence of RNG forks per increment, so
//! two methods run under one seed see identical initializations, shuffles,
//! and holdouts wherever their configurations agree.

use std::time::Instant;

use incrlearn_core::{
    beta_grid, estimate_bias, fit_classifier, gan_train, generate_replay, incremental_train,
    l2_normalize_rows, predict, select_herding, select_random, BiasCorrection, ClassifierNet,
    Error, ExemplarBudget, ExemplarStore, GanConfig, GeneratorNet, LabeledBatch, LossConfig,
    ReplayFilter, Result, RngState, SgdConfig, SourceTag,
};

use crate::dataset::{load_dataset, DatasetSpec};
use crate::metrics::ConfusionMatrix;
use crate::report::{ExperimentReport, IncrementRecord, MemorySummary};

/// Validation samples held out per class for bias estimation.
const VALIDATION_PER_CLASS: usize = 5;
/// Generated replay is noisier, so its holdout is twice as deep.
const VALIDATION_PER_CLASS_GAN: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// New data only: no distillation, no memory, no correction.
    Finetune,
    /// Distillation on the new data alone, no replay memory.
    Lwf,
    /// Real exemplar replay with the combined loss and bias estimation.
    OursReal,
    /// Generated replay with the combined loss and bias estimation.
    OursGan,
}

impl Method {
    pub fn uses_distillation(self) -> bool {
        !matches!(self, Method::Finetune)
    }

    pub fn uses_memory(self) -> bool {
        matches!(self, Method::OursReal | Method::OursGan)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Finetune => "finetune",
            Method::Lwf => "lwf",
            Method::OursReal => "ours-real",
            Method::OursGan => "ours-gan",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Method> {
        match s {
            "finetune" => Ok(Method::Finetune),
            "lwf" => Ok(Method::Lwf),
            "ours-real" => Ok(Method::OursReal),
            "ours-gan" => Ok(Method::OursGan),
            other => Err(Error::contract(format!(
                "unknown method `{other}` (expected finetune, lwf, ours-real, or ours-gan)"
            ))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    Random,
    Herding,
}

impl Selection {
    pub fn as_str(self) -> &'static str {
        match self {
            Selection::Random => "random",
            Selection::Herding => "herding",
        }
    }
}

impl std::str::FromStr for Selection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Selection> {
        match s {
            "random" => Ok(Selection::Random),
            "herding" => Ok(Selection::Herding),
            other => Err(Error::contract(format!(
                "unknown selection `{other}` (expected random or herding)"
            ))),
        }
    }
}

impl std::fmt::Display for Selection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Prediction-time bias handling: estimated on a validation holdout each
/// increment, or fixed by the caller (`1.0` disables the correction).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BetaMode {
    Auto,
    Fixed(f64),
}

impl std::str::FromStr for BetaMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<BetaMode> {
        if s == "auto" {
            return Ok(BetaMode::Auto);
        }
        let value: f64 = s
            .parse()
            .map_err(|_| Error::contract(format!("beta must be `auto` or a number, got `{s}`")))?;
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::contract(format!(
                "beta must lie in [0, 1], got {value}"
            )));
        }
        Ok(BetaMode::Fixed(value))
    }
}

/// Adversarial settings sized for low-dimensional desk data: higher learning
/// rates and far fewer iterations than the library defaults, which are tuned
/// for wider critics on image features. The weight clip keeps its usual
/// value; on 2-D mixtures it yields serviceable but visibly imperfect
/// generators, which is the regime generative replay actually operates in.
pub fn desk_gan_config() -> GanConfig {
    GanConfig {
        generator_lr: 0.05,
        critic_lr: 0.05,
        clip: 0.01,
        iterations: 800,
        ..GanConfig::default()
    }
}

#[derive(Clone, Debug)]
pub struct ProtocolConfig {
    pub method: Method,
    pub total_classes: usize,
    /// Number of equal increments the classes are split into.
    pub parts: usize,
    /// Seeds the fixed class presentation order.
    pub class_order_seed: u64,
    /// Seeds initialization, shuffling, holdouts, selection, and replay.
    pub seed: u64,
    pub lambda: f64,
    pub beta: BetaMode,
    pub temperature: f64,
    /// Total real-exemplar budget, re-divided over all seen classes after
    /// every increment. Zero means no memory is kept.
    pub memory_size: usize,
    pub selection: Selection,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub opt: SgdConfig,
    pub gan: GanConfig,
    /// Replay confidence threshold (keep strictly above).
    pub theta: f64,
    /// Per-class cap on retained replay samples.
    pub top_k: usize,
}

impl ProtocolConfig {
    /// Per-method defaults for the desk-scale benchmark.
    pub fn new(method: Method, total_classes: usize, parts: usize, seed: u64) -> ProtocolConfig {
        let lambda = match method {
            Method::Finetune => 0.0,
            Method::OursReal => 0.5,
            // Without any replayed samples the distillation term is the only
            // thing holding the old classes; it needs most of the weight.
            Method::Lwf | Method::OursGan => 0.9,
        };
        let beta = if method.uses_memory() {
            BetaMode::Auto
        } else {
            BetaMode::Fixed(1.0)
        };
        ProtocolConfig {
            method,
            total_classes,
            parts,
            class_order_seed: seed,
            seed,
            lambda,
            beta,
            temperature: 2.0,
            memory_size: if method == Method::OursReal { 40 } else { 0 },
            selection: Selection::Herding,
            hidden: vec![64, 64],
            epochs: 40,
            batch_size: 32,
            // The library default step of 0.1 with momentum diverges on raw
            // 2-D inputs whose coordinates reach past +/-7; 0.03 is stable
            // across every method here.
            opt: SgdConfig {
                learning_rate: 0.03,
                ..SgdConfig::default()
            },
            gan: desk_gan_config(),
            theta: 0.5,
            // Replay quota per old class. Ten of these go to the bias
            // holdout, so the cap must stay above the holdout size or no
            // generated sample ever reaches training.
            top_k: 15,
        }
    }

    pub fn classes_per_part(&self) -> usize {
        self.total_classes / self.parts
    }

    pub fn validate(&self) -> Result<()> {
        if self.parts == 0 || self.total_classes == 0 {
            return Err(Error::contract("need at least one part and one class"));
        }
        if !self.total_classes.is_multiple_of(self.parts) {
            return Err(Error::contract(format!(
                "{} classes do not divide into {} equal parts",
                self.total_classes, self.parts
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::contract(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if let BetaMode::Fixed(b) = self.beta {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::contract(format!("beta must lie in [0, 1], got {b}")));
            }
        }
        if self.beta == BetaMode::Auto && !self.method.uses_memory() {
            return Err(Error::contract(format!(
                "method {} keeps no replay memory to estimate beta from; use a fixed beta",
                self.method
            )));
        }
        if self.method == Method::OursReal && self.memory_size == 0 && self.beta == BetaMode::Auto {
            return Err(Error::contract(
                "beta estimation needs a non-empty exemplar memory",
            ));
        }
        if !(0.0..1.0).contains(&self.theta) {
            return Err(Error::contract(format!(
                "theta must lie in [0, 1), got {}",
                self.theta
            )));
        }
        if self.top_k == 0 {
            return Err(Error::contract("top-k must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::contract("epochs and batch size must be positive"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::contract(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        self.opt.validate()?;
        self.gan.validate()?;
        Ok(())
    }

    fn validation_per_class(&self) -> usize {
        if self.method == Method::OursGan {
            VALIDATION_PER_CLASS_GAN
        } else {
            VALIDATION_PER_CLASS
        }
    }
}

/// The fixed presentation order: position `i` (0-based) holds the original
/// label presented as protocol class `i + 1`.
pub fn class_permutation(total_classes: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (1..=total_classes).collect();
    RngState::new(seed).shuffle(&mut order);
    order
}

/// Maps original labels to their 1-based rank in the presentation order.
fn relabel(batch: &LabeledBatch, order: &[usize]) -> Result<LabeledBatch> {
    let mut rank = vec![0usize; order.len() + 1];
    for (i, &orig) in order.iter().enumerate() {
        rank[orig] = i + 1;
    }
    let labels: Vec<usize> = batch
        .labels()
        .iter()
        .map(|&l| {
            rank.get(l).copied().filter(|&r| r != 0).ok_or_else(|| {
                Error::contract(format!(
                    "label {l} outside the {}-class protocol",
                    order.len()
                ))
            })
        })
        .collect::<Result<_>>()?;
    LabeledBatch::new(batch.inputs().clone(), labels, batch.source())
}

fn attach_increment(e: Error, t: usize) -> Error {
    match e {
        Error::Contract(m) => Error::Contract(format!("increment {t}: {m}")),
        Error::Diverged { iteration, detail } => Error::Diverged {
            iteration,
            detail: format!("increment {t}: {detail}"),
        },
        Error::Format(m) => Error::Format(format!("increment {t}: {m}")),
        other => other,
    }
}

fn source_name(tag: SourceTag) -> &'static str {
    match tag {
        SourceTag::OldExemplar => "old-exemplar",
        SourceTag::GanReplay => "gan-replay",
        SourceTag::NewData => "new-data",
    }
}

fn memory_summary(store: &ExemplarStore) -> MemorySummary {
    MemorySummary {
        source: source_name(store.source()).to_string(),
        total_samples: store.total_len(),
        per_class: store
            .class_ids()
            .iter()
            .map(|&c| (c, store.class_count_of(c)))
            .collect(),
        underfilled: store.manifest().underfilled.clone(),
    }
}

/// Top-1 accuracy of bias-corrected predictions on a labeled batch.
pub fn evaluate_accuracy(net: &ClassifierNet, bc: &BiasCorrection, batch: &LabeledBatch) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let predictions = predict(net, bc, batch.inputs());
    let hits = predictions
        .iter()
        .zip(batch.labels())
        .filter(|(p, l)| p == l)
        .count();
    hits as f64 / batch.len() as f64
}

/// Everything needed to keep probing the model after a run: the final
/// network, the last increment's class split, its validation holdout (when
/// one was drawn), and the full relabeled test set.
pub struct FinalState {
    pub net: ClassifierNet,
    pub old_classes: usize,
    pub new_classes: usize,
    pub validation: Option<LabeledBatch>,
    pub test: LabeledBatch,
}

pub struct RunOutcome {
    pub report: ExperimentReport,
    pub final_state: FinalState,
}

/// Per-increment RNG streams, drawn in a fixed order regardless of method so
/// different methods stay stream-aligned under one seed. Streams a method
/// does not use are simply dropped.
struct IncrementForks {
    init: RngState,
    holdout: RngState,
    train: RngState,
    select: RngState,
    gan: RngState,
    replay: RngState,
}

impl IncrementForks {
    fn draw(master: &mut RngState) -> IncrementForks {
        IncrementForks {
            init: master.fork(),
            holdout: master.fork(),
            train: master.fork(),
            select: master.fork(),
            gan: master.fork(),
            replay: master.fork(),
        }
    }
}

/// What one increment's training produced, before upkeep.
struct IncrementOutcome {
    net: ClassifierNet,
    bias: BiasCorrection,
    lambda: f64,
    validation: Option<LabeledBatch>,
    memory_used: Option<MemorySummary>,
}

/// Runs the full incremental protocol on the given dataset and reports every
/// increment.
pub fn run_protocol(cfg: &ProtocolConfig, data: &DatasetSpec) -> Result<RunOutcome> {
    cfg.validate()?;
    let (train, test) = load_dataset(data)?;
    for (name, batch) in [("train", &train), ("test", &test)] {
        let ids = batch.class_ids();
        if ids.len() != cfg.total_classes || ids.iter().enumerate().any(|(i, &c)| c != i + 1) {
            return Err(Error::contract(format!(
                "{name} set must cover classes 1..={} exactly, found {ids:?}",
                cfg.total_classes
            )));
        }
    }

    let order = class_permutation(cfg.total_classes, cfg.class_order_seed);
    let train = relabel(&train, &order)?;
    let test = relabel(&test, &order)?;

    let per_part = cfg.classes_per_part();
    let dim = train.dim();
    let mut widths = vec![dim];
    widths.extend_from_slice(&cfg.hidden);
    widths.push(per_part);

    let mut master = RngState::new(cfg.seed);
    let mut net: Option<ClassifierNet> = None;
    let mut store: Option<ExemplarStore> = None;
    let mut generators: Vec<GeneratorNet> = Vec::new();
    let mut increments = Vec::with_capacity(cfg.parts);
    let mut last_validation: Option<LabeledBatch> = None;

    for t in 1..=cfg.parts {
        let started = Instant::now();
        let mut forks = IncrementForks::draw(&mut master);
        let hi = t * per_part;
        let lo = hi - per_part + 1;
        let part_train = train.filter_label_range(lo, hi);
        let cum_test = test.filter_label_range(1, hi);
        if part_train.is_empty() || cum_test.is_empty() {
            return Err(Error::contract(format!(
                "increment {t}: no data for classes {lo}..={hi}"
            )));
        }

        let outcome = if t == 1 {
            first_increment(cfg, &widths, &part_train, &mut forks)
                .map_err(|e| attach_increment(e, t))?
        } else {
            let base = net.take().expect("a trained base network");
            later_increment(
                cfg,
                base,
                &part_train,
                store.as_ref(),
                &generators,
                lo,
                per_part,
                &mut forks,
            )
            .map_err(|e| attach_increment(e, t))?
        };

        let predictions = predict(&outcome.net, &outcome.bias, cum_test.inputs());
        let confusion = ConfusionMatrix::from_predictions(&predictions, cum_test.labels(), hi)
            .map_err(|e| attach_increment(e, t))?;
        let validation_top1 = outcome
            .validation
            .as_ref()
            .map(|v| evaluate_accuracy(&outcome.net, &outcome.bias, v));

        // Upkeep for the next increment: re-divide the exemplar budget over
        // every class seen so far, and train a generator on this part.
        if t < cfg.parts {
            if cfg.method == Method::OursReal && cfg.memory_size > 0 {
                let budget = ExemplarBudget::new(cfg.memory_size, hi)
                    .map_err(|e| attach_increment(e, t))?;
                let selected = match cfg.selection {
                    Selection::Random => select_random(&part_train, &budget, &mut forks.select),
                    Selection::Herding => {
                        let features =
                            l2_normalize_rows(&outcome.net.features(part_train.inputs()));
                        select_herding(&part_train, &features, &budget)
                    }
                }
                .map_err(|e| attach_increment(e, t))?;
                match &mut store {
                    Some(s) => {
                        s.truncate_per_class(budget.per_class_quota());
                        s.absorb(selected).map_err(|e| attach_increment(e, t))?;
                    }
                    None => store = Some(selected),
                }
            }
            if cfg.method == Method::OursGan {
                let (generator, _critic) = gan_train(&part_train, &cfg.gan, &mut forks.gan)
                    .map_err(|e| attach_increment(e, t))?;
                generators.push(generator);
            }
        }

        last_validation = outcome.validation;
        increments.push(IncrementRecord {
            increment: t,
            classes_seen: hi,
            top1: confusion.accuracy(),
            validation_top1,
            beta: outcome.bias.beta,
            lambda: outcome.lambda,
            seconds: started.elapsed().as_secs_f64(),
            per_class_accuracy: confusion.per_class_accuracy(),
            confusion,
            memory: outcome.memory_used,
        });
        net = Some(outcome.net);
    }

    let report = ExperimentReport {
        method: cfg.method.to_string(),
        seed: cfg.seed,
        total_classes: cfg.total_classes,
        parts: cfg.parts,
        increments,
    };
    report.validate()?;
    let final_state = FinalState {
        net: net.expect("at least one increment"),
        old_classes: cfg.total_classes - per_part,
        new_classes: per_part,
        validation: last_validation,
        test,
    };
    Ok(RunOutcome {
        report,
        final_state,
    })
}

/// The first increment is plain supervised training on the first part.
fn first_increment(
    cfg: &ProtocolConfig,
    widths: &[usize],
    part_train: &LabeledBatch,
    forks: &mut IncrementForks,
) -> Result<IncrementOutcome> {
    let fresh = ClassifierNet::new(widths, &mut forks.init)?;
    let trained = fit_classifier(
        fresh,
        part_train,
        &cfg.opt,
        cfg.epochs,
        cfg.batch_size,
        &mut forks.train,
    )?;
    let classes = trained.class_count();
    Ok(IncrementOutcome {
        net: trained,
        bias: BiasCorrection::identity(classes, 0),
        lambda: 0.0,
        validation: None,
        memory_used: None,
    })
}

/// Every later increment: expand the head, assemble replay memory, hold out
/// validation data when the bias is estimated, train with the combined loss,
/// then pick the bias scalar.
#[allow(clippy::too_many_arguments)]
fn later_increment(
    cfg: &ProtocolConfig,
    base: ClassifierNet,
    part_train: &LabeledBatch,
    store: Option<&ExemplarStore>,
    generators: &[GeneratorNet],
    lo: usize,
    per_part: usize,
    forks: &mut IncrementForks,
) -> Result<IncrementOutcome> {
    let teacher = base.snapshot();
    let expanded = base.expand_head(per_part, &mut forks.init)?;
    let old_classes = lo - 1;

    let (memory, memory_used) = match cfg.method {
        Method::OursReal => match store {
            Some(s) => (s.to_batch(), Some(memory_summary(s))),
            None => (
                LabeledBatch::empty(part_train.dim(), SourceTag::OldExemplar),
                None,
            ),
        },
        Method::OursGan => {
            let filter = ReplayFilter::new(cfg.theta, cfg.top_k)?;
            let replay =
                generate_replay(generators, &teacher, &filter, cfg.top_k, &mut forks.replay)?;
            let summary = memory_summary(&replay);
            (replay.to_batch(), Some(summary))
        }
        Method::Finetune | Method::Lwf => (
            LabeledBatch::empty(part_train.dim(), SourceTag::OldExemplar),
            None,
        ),
    };

    // The holdout is drawn only when the bias must be estimated, from the
    // replay memory (old classes) and the new part (new classes) alike.
    let (validation, memory_train, new_train) = match cfg.beta {
        BetaMode::Auto => {
            let per_class = cfg.validation_per_class();
            let (mem_held, mem_rest) = memory.split_holdout(per_class, &mut forks.holdout);
            let (new_held, new_rest) = part_train.split_holdout(per_class, &mut forks.holdout);
            let held = mem_held.concat(&new_held)?;
            (Some(held), mem_rest, new_rest)
        }
        BetaMode::Fixed(_) => (None, memory, part_train.clone()),
    };

    let lambda = if cfg.method.uses_distillation() {
        cfg.lambda
    } else {
        0.0
    };
    let loss_cfg =
        LossConfig::new(lambda, old_classes, per_part)?.with_temperature(cfg.temperature);
    let trained = incremental_train(
        &teacher,
        expanded,
        &new_train,
        &memory_train,
        &loss_cfg,
        &cfg.opt,
        cfg.epochs,
        cfg.batch_size,
        &mut forks.train,
    )?;

    let bias = match cfg.beta {
        BetaMode::Auto => {
            let held = validation.as_ref().expect("holdout exists in auto mode");
            estimate_bias(&trained, old_classes, held, &beta_grid())?
        }
        BetaMode::Fixed(b) => BiasCorrection::new(b, old_classes, per_part)?,
    };

    Ok(IncrementOutcome {
        net: trained,
        bias,
        lambda,
        validation,
        memory_used,
    })
}
