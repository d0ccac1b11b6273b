//! Incremental classifier learning on a scalar autodiff core.
//!
//! The crate trains small dense classifiers class-by-class without revisiting
//! full past datasets. A frozen copy of the previous model supplies softened
//! targets for the old classes, a replay memory (real exemplars or samples
//! from an adversarially trained generator) keeps the old decision regions
//! populated, and a scalar correction on the new-class probabilities removes
//! the prediction bias that small memories induce.
//!
//! Layering, bottom up:
//! - [`tensor`]: reverse-mode autodiff over row-major f64 tensors;
//! - [`rng`], [`error`]: seeded randomness and the crate-wide error type;
//! - [`optim`]: named parameters and SGD with momentum and weight decay;
//! - [`net`]: dense ReLU stacks — classifier (expandable head), frozen
//!   teacher snapshot, generator and critic;
//! - [`data`]: labeled batches with source tags and per-sample confidences;
//! - [`loss`]: distillation and cross-entropy terms, their convex blend,
//!   bias-corrected prediction, and the training loops;
//! - [`memory`]: exemplar stores (random / herding selection) and generative
//!   replay with pseudo-labeling and confidence filtering;
//! - [`checkpoint`]: manifest-plus-blob persistence for every network.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod loss;
pub mod memory;
pub mod net;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use checkpoint::{
    load_classifier, load_critic, load_generator, save_classifier, save_critic, save_generator,
    CheckpointManifest, NetKind,
};
pub use data::{LabeledBatch, SourceTag};
pub use error::{Error, Result};
pub use loss::{
    apply_bias, beta_grid, combined_loss, cross_entropy_loss, distillation_loss, estimate_bias,
    fit_classifier, incremental_train, lr_drop_epoch, predict, BiasCorrection, LossConfig,
    DEFAULT_TEMPERATURE,
};
pub use memory::{
    build_gan_memory, filter_replay, gan_train, generate_replay, l2_normalize_rows, pseudo_label,
    select_herding, select_random, ExemplarBudget, ExemplarStore, GanConfig, ReplayFilter,
};
pub use net::{ClassifierNet, CriticNet, FrozenClassifier, GeneratorNet, NEW_HEAD_INIT_STD};
pub use optim::{Parameter, Sgd, SgdConfig};
pub use rng::RngState;
pub use tensor::Tensor;
