//! Replay memories for old classes: real exemplar stores selected at random
//! or by herding, and generative stores filled by an adversarially trained
//! generator whose outputs are pseudo-labeled by the frozen classifier and
//! confidence-filtered.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{LabeledBatch, SourceTag};
use crate::error::{Error, Result};
use crate::net::{CriticNet, FrozenClassifier, GeneratorNet};
use crate::optim::{Sgd, SgdConfig};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Hidden widths shared by the generator and critic.
const GAN_HIDDEN: [usize; 2] = [64, 64];

/// Total sample budget split evenly over classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExemplarBudget {
    total_capacity: usize,
    per_class_quota: usize,
}

impl ExemplarBudget {
    /// `total_capacity` may be zero, which means "keep nothing".
    pub fn new(total_capacity: usize, class_count: usize) -> Result<ExemplarBudget> {
        if class_count == 0 {
            return Err(Error::contract("budget over zero classes"));
        }
        Ok(ExemplarBudget {
            total_capacity,
            per_class_quota: total_capacity / class_count,
        })
    }

    pub fn total_capacity(&self) -> usize {
        self.total_capacity
    }

    pub fn per_class_quota(&self) -> usize {
        self.per_class_quota
    }
}

/// Provenance and bookkeeping stored alongside the samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub source: SourceTag,
    pub dim: usize,
    pub class_counts: BTreeMap<usize, usize>,
    /// "random" or "herding" for real exemplar stores.
    pub selection: Option<String>,
    /// Confidence threshold and per-class cap for generative stores.
    pub filter: Option<FilterSummary>,
    /// Total samples generated while filling a generative store.
    pub attempts: Option<usize>,
    /// Classes that ended below their target count.
    pub underfilled: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub threshold: f64,
    pub top_k: usize,
}

/// Ordered per-class sample lists. The order within a class is a priority
/// order: truncating keeps a valid store.
#[derive(Clone, Debug)]
pub struct ExemplarStore {
    dim: usize,
    classes: BTreeMap<usize, Vec<Vec<f64>>>,
    manifest: StoreManifest,
}

impl ExemplarStore {
    fn new(dim: usize, source: SourceTag) -> ExemplarStore {
        ExemplarStore {
            dim,
            classes: BTreeMap::new(),
            manifest: StoreManifest {
                source,
                dim,
                class_counts: BTreeMap::new(),
                selection: None,
                filter: None,
                attempts: None,
                underfilled: Vec::new(),
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self) -> SourceTag {
        self.manifest.source
    }

    pub fn manifest(&self) -> &StoreManifest {
        &self.manifest
    }

    pub fn total_len(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_len() == 0
    }

    pub fn class_ids(&self) -> Vec<usize> {
        self.classes.keys().copied().collect()
    }

    pub fn class_count_of(&self, class: usize) -> usize {
        self.classes.get(&class).map_or(0, Vec::len)
    }

    pub fn samples_of(&self, class: usize) -> &[Vec<f64>] {
        self.classes.get(&class).map_or(&[], Vec::as_slice)
    }

    fn insert_class(&mut self, class: usize, rows: Vec<Vec<f64>>) {
        self.manifest.class_counts.insert(class, rows.len());
        self.classes.insert(class, rows);
    }

    /// Drops every class list down to `quota`, keeping the front of each
    /// priority order. Used when the budget is re-divided over more classes.
    pub fn truncate_per_class(&mut self, quota: usize) {
        for (class, rows) in self.classes.iter_mut() {
            rows.truncate(quota);
            self.manifest.class_counts.insert(*class, rows.len());
        }
    }

    pub fn remove_class(&mut self, class: usize) {
        self.classes.remove(&class);
        self.manifest.class_counts.remove(&class);
    }

    /// Merges `other`'s classes into this store; a class present in both is
    /// replaced by the incoming list.
    pub fn absorb(&mut self, other: ExemplarStore) -> Result<()> {
        if !other.is_empty() && other.dim != self.dim {
            return Err(Error::contract(format!(
                "cannot merge stores of dimension {} and {}",
                self.dim, other.dim
            )));
        }
        for (class, rows) in other.classes {
            self.insert_class(class, rows);
        }
        Ok(())
    }

    /// All samples as a batch, classes ascending, within-class priority order
    /// preserved.
    pub fn to_batch(&self) -> LabeledBatch {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (&class, samples) in &self.classes {
            for s in samples {
                rows.push(s.clone());
                labels.push(class);
            }
        }
        if rows.is_empty() {
            return LabeledBatch::empty(self.dim, self.manifest.source);
        }
        LabeledBatch::from_rows(&rows, labels, self.manifest.source).expect("store batch is well formed")
    }

    /// Writes `manifest.json`, `samples.bin` (little-endian f64 rows, classes
    /// ascending) and `labels.bin` (little-endian u32 per row) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(dir.join("manifest.json"), manifest + "\n")?;
        let mut samples = Vec::with_capacity(self.total_len() * self.dim * 8);
        let mut labels = Vec::with_capacity(self.total_len() * 4);
        for (&class, rows) in &self.classes {
            for row in rows {
                for v in row {
                    samples.extend_from_slice(&v.to_le_bytes());
                }
                labels.extend_from_slice(&u32::try_from(class).map_err(|_| {
                    Error::contract(format!("class id {class} exceeds the label format"))
                })?.to_le_bytes());
            }
        }
        fs::write(dir.join("samples.bin"), samples)?;
        fs::write(dir.join("labels.bin"), labels)?;
        Ok(())
    }

    /// Inverse of [`ExemplarStore::save`]; validates sizes against the
    /// manifest and reports offsets on mismatch.
    pub fn load(dir: &Path) -> Result<ExemplarStore> {
        let manifest: StoreManifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let samples = fs::read(dir.join("samples.bin"))?;
        let labels = fs::read(dir.join("labels.bin"))?;
        let total: usize = manifest.class_counts.values().sum();
        let expect_samples = total * manifest.dim * 8;
        if samples.len() != expect_samples {
            return Err(Error::format(format!(
                "samples.bin holds {} bytes but the manifest implies {expect_samples}",
                samples.len()
            )));
        }
        if labels.len() != total * 4 {
            return Err(Error::format(format!(
                "labels.bin holds {} bytes but the manifest implies {}",
                labels.len(),
                total * 4
            )));
        }
        let mut store = ExemplarStore::new(manifest.dim, manifest.source);
        for i in 0..total {
            let label = u32::from_le_bytes(labels[i * 4..(i + 1) * 4].try_into().unwrap()) as usize;
            let mut row = Vec::with_capacity(manifest.dim);
            for d in 0..manifest.dim {
                let off = (i * manifest.dim + d) * 8;
                row.push(f64::from_le_bytes(samples[off..off + 8].try_into().unwrap()));
            }
            store.classes.entry(label).or_default().push(row);
        }
        for (&class, rows) in &store.classes {
            let expect = manifest.class_counts.get(&class).copied().unwrap_or(0);
            if rows.len() != expect {
                return Err(Error::format(format!(
                    "class {class} holds {} samples but the manifest says {expect}",
                    rows.len()
                )));
            }
        }
        store.manifest = manifest;
        Ok(store)
    }
}

/// Uniform per-class selection without replacement, up to the quota. Classes
/// smaller than the quota keep everything.
pub fn select_random(
    data: &LabeledBatch,
    budget: &ExemplarBudget,
    rng: &mut RngState,
) -> Result<ExemplarStore> {
    if data.is_empty() {
        return Err(Error::contract("selecting exemplars from an empty batch"));
    }
    let quota = budget.per_class_quota();
    let mut store = ExemplarStore::new(data.dim(), SourceTag::OldExemplar);
    store.manifest.selection = Some("random".into());
    for class in data.class_ids() {
        let idx = data.indices_of_class(class);
        let chosen: Vec<usize> = if idx.len() <= quota {
            (0..idx.len()).collect()
        } else {
            rng.sample_indices(idx.len(), quota)
        };
        let rows: Vec<Vec<f64>> = chosen.iter().map(|&c| data.row(idx[c])).collect();
        store.insert_class(class, rows);
    }
    Ok(store)
}

/// Greedy mean-matching selection.
///
/// For each class, exemplars are picked one at a time so that after every
/// pick the mean of the picked feature vectors is as close as possible (in
/// L2) to the class's feature mean. `features` must hold one row per sample
/// of `data`; rows are expected to be L2-normalized by the caller. Ties
/// resolve to the lowest sample index, and the resulting within-class order
/// is the priority order used for later truncation.
pub fn select_herding(
    data: &LabeledBatch,
    features: &Tensor,
    budget: &ExemplarBudget,
) -> Result<ExemplarStore> {
    if data.is_empty() {
        return Err(Error::contract("selecting exemplars from an empty batch"));
    }
    let (rows, fdim) = features.dims2();
    if rows != data.len() {
        return Err(Error::contract(format!(
            "{} feature rows for {} samples",
            rows,
            data.len()
        )));
    }
    let quota = budget.per_class_quota();
    let fv = features.to_vec();
    let mut store = ExemplarStore::new(data.dim(), SourceTag::OldExemplar);
    store.manifest.selection = Some("herding".into());
    for class in data.class_ids() {
        let idx = data.indices_of_class(class);
        if idx.is_empty() {
            log::warn!("herding: class {class} has no samples, skipping");
            continue;
        }
        let mut mean = vec![0.0; fdim];
        for &i in &idx {
            for d in 0..fdim {
                mean[d] += fv[i * fdim + d];
            }
        }
        for v in mean.iter_mut() {
            *v /= idx.len() as f64;
        }

        let take = quota.min(idx.len());
        let mut picked_sum = vec![0.0; fdim];
        let mut remaining: Vec<usize> = idx.clone();
        let mut order = Vec::with_capacity(take);
        for t in 0..take {
            let count = (t + 1) as f64;
            let mut best_pos = 0;
            let mut best_dist = f64::INFINITY;
            for (pos, &i) in remaining.iter().enumerate() {
                let mut dist = 0.0;
                for d in 0..fdim {
                    let diff = mean[d] - (picked_sum[d] + fv[i * fdim + d]) / count;
                    dist += diff * diff;
                }
                if dist < best_dist {
                    best_dist = dist;
                    best_pos = pos;
                }
            }
            let winner = remaining.remove(best_pos);
            for d in 0..fdim {
                picked_sum[d] += fv[winner * fdim + d];
            }
            order.push(winner);
        }
        let rows: Vec<Vec<f64>> = order.iter().map(|&i| data.row(i)).collect();
        store.insert_class(class, rows);
    }
    Ok(store)
}

/// L2-normalizes each row; zero rows are left untouched.
pub fn l2_normalize_rows(features: &Tensor) -> Tensor {
    let (rows, cols) = features.dims2();
    let mut vals = features.to_vec();
    for r in 0..rows {
        let row = &mut vals[r * cols..(r + 1) * cols];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }
    Tensor::new(vals, &[rows, cols])
}

/// Adversarial training hyperparameters (weight-clipping variant).
#[derive(Clone, Debug, PartialEq)]
pub struct GanConfig {
    pub noise_dim: usize,
    /// Critic updates per generator update.
    pub critic_iters: usize,
    /// Weights are clamped into `[-clip, clip]` after every critic update.
    pub clip: f64,
    pub generator_lr: f64,
    pub critic_lr: f64,
    /// Generator updates in total.
    pub iterations: usize,
    pub batch_size: usize,
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.noise_dim == 0 || self.critic_iters == 0 || self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::contract(format!(
                "degenerate adversarial config: {self:?}"
            )));
        }
        if self.clip <= 0.0 || self.clip.is_nan() {
            return Err(Error::contract(format!(
                "clip bound must be positive, got {}",
                self.clip
            )));
        }
        if !(self.generator_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(Error::contract("learning rates must be positive"));
        }
        Ok(())
    }
}

impl Default for GanConfig {
    fn default() -> GanConfig {
        GanConfig {
            noise_dim: 8,
            critic_iters: 5,
            clip: 0.01,
            generator_lr: 0.05,
            critic_lr: 0.05,
            iterations: 3000,
            batch_size: 64,
        }
    }
}

fn batch_rows(data: &LabeledBatch, rng: &mut RngState, count: usize) -> Tensor {
    let dim = data.dim();
    let src = data.inputs().values();
    let mut vals = Vec::with_capacity(count * dim);
    for _ in 0..count {
        let i = rng.below(data.len());
        vals.extend_from_slice(&src[i * dim..(i + 1) * dim]);
    }
    drop(src);
    Tensor::new(vals, &[count, dim])
}

/// Trains an unconditional generator/critic pair on all samples of
/// `old_data` jointly.
///
/// Each outer iteration performs `critic_iters` critic updates, clipping the
/// critic's weights after every update, then one generator update. The
/// critic maximizes `mean(critic(real)) - mean(critic(fake))`; the generator
/// maximizes `mean(critic(fake))`.
pub fn gan_train(
    old_data: &LabeledBatch,
    cfg: &GanConfig,
    rng: &mut RngState,
) -> Result<(GeneratorNet, CriticNet)> {
    cfg.validate()?;
    if old_data.is_empty() {
        return Err(Error::contract("adversarial training needs data"));
    }
    let dim = old_data.dim();
    let mut gen_widths = vec![cfg.noise_dim];
    gen_widths.extend_from_slice(&GAN_HIDDEN);
    gen_widths.push(dim);
    let mut critic_widths = vec![dim];
    critic_widths.extend_from_slice(&GAN_HIDDEN);
    critic_widths.push(1);

    let generator = GeneratorNet::new(&gen_widths, &mut rng.fork())?;
    let critic = CriticNet::new(&critic_widths, &mut rng.fork())?;
    let plain = |lr: f64| SgdConfig::new(lr);
    let mut gen_opt = Sgd::new(plain(cfg.generator_lr)?)?;
    let mut critic_opt = Sgd::new(plain(cfg.critic_lr)?)?;

    for iter in 0..cfg.iterations {
        for _ in 0..cfg.critic_iters {
            let real = batch_rows(old_data, rng, cfg.batch_size);
            let noise = generator.sample_noise(cfg.batch_size, rng);
            // Detached: critic updates must not push gradients into the
            // generator's parameters.
            let fake = generator.forward(&noise).detach();
            let loss = critic.forward(&fake).mean().sub(&critic.forward(&real).mean());
            if !loss.item().is_finite() {
                return Err(Error::Diverged {
                    iteration: iter,
                    detail: format!("critic loss became {}", loss.item()),
                });
            }
            loss.backward();
            critic_opt.step(critic.params())?;
            critic.clip_weights(cfg.clip);
            debug_assert!(critic.max_abs_weight() <= cfg.clip);
        }
        let noise = generator.sample_noise(cfg.batch_size, rng);
        let score = critic.forward(&generator.forward(&noise)).mean();
        let loss = score.scale(-1.0);
        if !loss.item().is_finite() {
            return Err(Error::Diverged {
                iteration: iter,
                detail: format!("generator loss became {}", loss.item()),
            });
        }
        loss.backward();
        gen_opt.step(generator.params())?;
        // The generator loss flowed through the critic; drop those gradients
        // so the next critic update starts clean.
        critic.zero_grads();
    }
    Ok((generator, critic))
}

/// Draws `count` samples from the generator and labels each with the frozen
/// classifier's argmax class; the attached confidence is the winning class's
/// softmax probability. Labels are fixed at generation time.
pub fn pseudo_label(
    generator: &GeneratorNet,
    teacher: &FrozenClassifier,
    count: usize,
    rng: &mut RngState,
) -> Result<LabeledBatch> {
    if generator.output_dim() != teacher.input_dim() {
        return Err(Error::contract(format!(
            "generator emits dimension {} but the classifier expects {}",
            generator.output_dim(),
            teacher.input_dim()
        )));
    }
    if count == 0 {
        return Ok(LabeledBatch::empty(generator.output_dim(), SourceTag::GanReplay));
    }
    let noise = generator.sample_noise(count, rng);
    let samples = generator.forward(&noise).detach();
    let probs = teacher.forward(&samples).softmax(1.0);
    let (rows, cols) = probs.dims2();
    let pv = probs.values();
    let mut labels = Vec::with_capacity(rows);
    let mut confs = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &pv[r * cols..(r + 1) * cols];
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        labels.push(best + 1);
        confs.push(row[best]);
    }
    drop(pv);
    LabeledBatch::new(samples, labels, SourceTag::GanReplay)?.with_confidences(confs)
}

/// Confidence filter for generated replay batches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReplayFilter {
    /// Samples with confidence `<= threshold` are dropped.
    pub threshold: f64,
    /// At most this many samples survive per class.
    pub top_k: usize,
    /// Generation budget for store filling; total samples drawn.
    pub max_attempts: usize,
}

impl ReplayFilter {
    pub fn new(threshold: f64, top_k: usize) -> Result<ReplayFilter> {
        if !(0.0..1.0).contains(&threshold) {
            return Err(Error::contract(format!(
                "confidence threshold must lie in [0, 1), got {threshold}"
            )));
        }
        if top_k == 0 {
            return Err(Error::contract("top-k must be positive"));
        }
        Ok(ReplayFilter {
            threshold,
            top_k,
            max_attempts: 200 * top_k,
        })
    }

    pub fn with_max_attempts(mut self, max_attempts: usize) -> ReplayFilter {
        self.max_attempts = max_attempts;
        self
    }
}

/// Keeps, per class, the up-to-`top_k` most confident samples above the
/// threshold. Output is ordered class-ascending, then confidence descending
/// with generation index (input position) ascending as the tie-break; the
/// operation is idempotent.
pub fn filter_replay(batch: &LabeledBatch, filter: &ReplayFilter) -> Result<LabeledBatch> {
    let confs = batch.confidences().ok_or_else(|| {
        Error::contract("filtering requires per-sample confidences")
    })?;
    let mut per_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, (&label, &conf)) in batch.labels().iter().zip(confs).enumerate() {
        if conf > filter.threshold {
            per_class.entry(label).or_default().push(i);
        }
    }
    let mut keep = Vec::new();
    for (_, mut idx) in per_class {
        idx.sort_by(|&a, &b| {
            confs[b].partial_cmp(&confs[a]).unwrap().then(a.cmp(&b))
        });
        idx.truncate(filter.top_k);
        keep.extend(idx);
    }
    Ok(batch.select(&keep))
}

/// Fills a replay store from already-trained generators.
///
/// Rounds of generation and pseudo-labeling continue until every old class
/// holds `min(per_class_target, top_k)` retained samples or the generation
/// budget `filter.max_attempts` is exhausted. Classes still short at the end
/// are recorded as underfilled in the manifest; an empty class is a warning,
/// not an error.
pub fn generate_replay(
    generators: &[GeneratorNet],
    teacher: &FrozenClassifier,
    filter: &ReplayFilter,
    per_class_target: usize,
    rng: &mut RngState,
) -> Result<ExemplarStore> {
    if generators.is_empty() {
        return Err(Error::contract("no generators to replay from"));
    }
    let dim = generators[0].output_dim();
    for g in generators {
        if g.output_dim() != dim {
            return Err(Error::contract("generators disagree on sample dimension"));
        }
    }
    let n = teacher.class_count();
    let target = per_class_target.min(filter.top_k);
    let mut pool = LabeledBatch::empty(dim, SourceTag::GanReplay)
        .with_confidences(Vec::new())?;
    let mut attempts = 0usize;

    let round = (per_class_target.max(1) * n).max(64);
    while attempts < filter.max_attempts {
        let short = |pool: &LabeledBatch| {
            let counts = pool.count_per_class();
            (1..=n).any(|c| counts.get(&c).copied().unwrap_or(0) < target)
        };
        if target > 0 && !short(&pool) {
            break;
        }
        let chunk = round.min(filter.max_attempts - attempts);
        let per_gen = chunk.div_ceil(generators.len());
        for g in generators {
            let take = per_gen.min(filter.max_attempts - attempts);
            if take == 0 {
                break;
            }
            let labeled = pseudo_label(g, teacher, take, rng)?;
            attempts += take;
            pool = pool.concat(&labeled)?;
        }
        // Prune as we go so the pool stays bounded by n * top_k.
        pool = filter_replay(&pool, filter)?;
        if target == 0 {
            break;
        }
    }

    let mut store = ExemplarStore::new(dim, SourceTag::GanReplay);
    store.manifest.filter = Some(FilterSummary {
        threshold: filter.threshold,
        top_k: filter.top_k,
    });
    store.manifest.attempts = Some(attempts);
    for class in 1..=n {
        let idx = pool.indices_of_class(class);
        let rows: Vec<Vec<f64>> = idx.iter().take(target).map(|&i| pool.row(i)).collect();
        if rows.len() < target {
            store.manifest.underfilled.push(class);
            if rows.is_empty() {
                log::warn!("replay store: class {class} received no samples");
            }
        }
        store.insert_class(class, rows);
    }
    Ok(store)
}

/// Convenience composition: adversarial training on `old_data`, then store
/// filling via [`generate_replay`] with the single trained generator.
pub fn build_gan_memory(
    old_data: &LabeledBatch,
    teacher: &FrozenClassifier,
    cfg: &GanConfig,
    filter: &ReplayFilter,
    per_class_target: usize,
    rng: &mut RngState,
) -> Result<(ExemplarStore, GeneratorNet)> {
    let (generator, _critic) = gan_train(old_data, cfg, rng)?;
    let store = generate_replay(
        std::slice::from_ref(&generator),
        teacher,
        filter,
        per_class_target,
        rng,
    )?;
    Ok((store, generator))
}
