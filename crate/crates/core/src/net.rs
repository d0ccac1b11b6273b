//! Dense ReLU networks: the classifier with an expandable head, its frozen
//! snapshot used as a distillation teacher, and the generator/critic pair for
//! adversarial replay.
//!
//! All networks are stacks of fully connected layers with ReLU between hidden
//! layers and a linear output. Weights are stored `[fan_in x fan_out]`
//! row-major, so one output class corresponds to one column of the head.

use crate::error::{Error, Result};
use crate::optim::Parameter;
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Standard deviation for the weights of freshly added head columns. Small
/// enough that new-class logits start near zero and old-class behaviour is
/// not disturbed at the beginning of an increment.
pub const NEW_HEAD_INIT_STD: f64 = 0.01;

fn validate_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return Err(Error::contract(format!(
            "a network needs at least an input and an output width, got {widths:?}"
        )));
    }
    if widths.contains(&0) {
        return Err(Error::contract(format!(
            "layer widths must be positive, got {widths:?}"
        )));
    }
    Ok(())
}

/// He-style initialization: weights N(0, 2/fan_in), biases zero.
fn init_params(widths: &[usize], rng: &mut RngState) -> Vec<Parameter> {
    let mut params = Vec::with_capacity((widths.len() - 1) * 2);
    for l in 0..widths.len() - 1 {
        let (fan_in, fan_out) = (widths[l], widths[l + 1]);
        let std = (2.0 / fan_in as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.normal() * std).collect();
        params.push(Parameter::new(format!("w{l}"), w, &[fan_in, fan_out]));
        params.push(Parameter::new(format!("b{l}"), vec![0.0; fan_out], &[fan_out]));
    }
    params
}

fn check_input(widths: &[usize], batch: &Tensor) {
    let (_, d) = batch.dims2();
    assert!(
        d == widths[0],
        "input dimension mismatch: network expects {}, batch has {}",
        widths[0],
        d
    );
}

/// Forward through the dense stack; with `stop_before_head` the final linear
/// layer is skipped and the last hidden activation is returned.
fn forward_stack(widths: &[usize], params: &[Parameter], batch: &Tensor, stop_before_head: bool) -> Tensor {
    check_input(widths, batch);
    let layers = params.len() / 2;
    let upto = if stop_before_head { layers - 1 } else { layers };
    let mut x = batch.clone();
    for l in 0..upto {
        x = x.matmul(params[2 * l].tensor()).add_row(params[2 * l + 1].tensor());
        if l + 1 < layers {
            x = x.relu();
        }
    }
    x
}

macro_rules! debug_by_widths {
    ($ty:ident) => {
        impl std::fmt::Debug for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.debug_struct(stringify!($ty)).field("widths", &self.widths).finish()
            }
        }
    };
}
debug_by_widths!(ClassifierNet);
debug_by_widths!(FrozenClassifier);
debug_by_widths!(GeneratorNet);
debug_by_widths!(CriticNet);

/// Trainable classifier whose head can grow by whole classes.
pub struct ClassifierNet {
    widths: Vec<usize>,
    params: Vec<Parameter>,
    seed: u64,
}

impl ClassifierNet {
    /// `widths` runs input to output, e.g. `[2, 64, 64, 8]` for a 2-feature,
    /// 8-class model.
    pub fn new(widths: &[usize], rng: &mut RngState) -> Result<ClassifierNet> {
        validate_widths(widths)?;
        Ok(ClassifierNet {
            widths: widths.to_vec(),
            params: init_params(widths, rng),
            seed: rng.seed(),
        })
    }

    pub(crate) fn from_parts(widths: Vec<usize>, params: Vec<Parameter>, seed: u64) -> ClassifierNet {
        ClassifierNet { widths, params, seed }
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn class_count(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    /// Logits for a `[B x input_dim]` batch; gradient-tracked.
    pub fn forward(&self, batch: &Tensor) -> Tensor {
        forward_stack(&self.widths, &self.params, batch, false)
    }

    /// Last hidden activation (the head's input). For a single-layer network
    /// this is the batch itself.
    pub fn features(&self, batch: &Tensor) -> Tensor {
        forward_stack(&self.widths, &self.params, batch, true)
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.tensor().clear_grad();
        }
    }

    /// New classifier with `extra` additional output classes.
    ///
    /// Existing weights are copied value-for-value, so old-class logits are
    /// bitwise unchanged; the added head columns get N(0, 0.01^2) weights and
    /// zero biases.
    pub fn expand_head(&self, extra: usize, rng: &mut RngState) -> Result<ClassifierNet> {
        if extra == 0 {
            return Err(Error::contract(
                "expand_head needs at least one new class".to_string(),
            ));
        }
        let old_out = self.class_count();
        let new_out = old_out + extra;
        let mut widths = self.widths.clone();
        *widths.last_mut().unwrap() = new_out;

        let mut params: Vec<Parameter> = self
            .params
            .iter()
            .take(self.params.len() - 2)
            .map(|p| p.detached_copy(true))
            .collect();

        let head_in = self.widths[self.widths.len() - 2];
        let old_w = self.params[self.params.len() - 2].tensor().to_vec();
        let old_b = self.params[self.params.len() - 1].tensor().to_vec();

        let fresh: Vec<f64> = (0..head_in * extra)
            .map(|_| rng.normal() * NEW_HEAD_INIT_STD)
            .collect();
        let mut w = Vec::with_capacity(head_in * new_out);
        for h in 0..head_in {
            w.extend_from_slice(&old_w[h * old_out..(h + 1) * old_out]);
            w.extend_from_slice(&fresh[h * extra..(h + 1) * extra]);
        }
        let mut b = old_b;
        b.resize(new_out, 0.0);

        let l = self.widths.len() - 2;
        params.push(Parameter::new(format!("w{l}"), w, &[head_in, new_out]));
        params.push(Parameter::new(format!("b{l}"), b, &[new_out]));
        Ok(ClassifierNet {
            widths,
            params,
            seed: self.seed,
        })
    }

    /// Immutable deep copy for use as a distillation teacher.
    pub fn snapshot(&self) -> FrozenClassifier {
        FrozenClassifier {
            widths: self.widths.clone(),
            params: self.params.iter().map(|p| p.detached_copy(false)).collect(),
        }
    }
}

/// Read-only classifier snapshot. Its outputs carry no gradient, so forward
/// passes build no graph.
pub struct FrozenClassifier {
    widths: Vec<usize>,
    params: Vec<Parameter>,
}

impl FrozenClassifier {
    pub fn layer_widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn class_count(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn forward(&self, batch: &Tensor) -> Tensor {
        forward_stack(&self.widths, &self.params, batch, false)
    }

    pub fn features(&self, batch: &Tensor) -> Tensor {
        forward_stack(&self.widths, &self.params, batch, true)
    }
}

/// Noise-to-sample generator: linear output, ReLU hidden layers.
pub struct GeneratorNet {
    widths: Vec<usize>,
    params: Vec<Parameter>,
    seed: u64,
}

impl GeneratorNet {
    pub fn new(widths: &[usize], rng: &mut RngState) -> Result<GeneratorNet> {
        validate_widths(widths)?;
        Ok(GeneratorNet {
            widths: widths.to_vec(),
            params: init_params(widths, rng),
            seed: rng.seed(),
        })
    }

    pub(crate) fn from_parts(widths: Vec<usize>, params: Vec<Parameter>, seed: u64) -> GeneratorNet {
        GeneratorNet { widths, params, seed }
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn noise_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn forward(&self, noise: &Tensor) -> Tensor {
        forward_stack(&self.widths, &self.params, noise, false)
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.tensor().clear_grad();
        }
    }

    /// `[count x noise_dim]` standard-normal noise batch.
    pub fn sample_noise(&self, count: usize, rng: &mut RngState) -> Tensor {
        let vals: Vec<f64> = (0..count * self.noise_dim()).map(|_| rng.normal()).collect();
        Tensor::new(vals, &[count, self.noise_dim()])
    }
}

/// Scalar-output critic scoring sample realism.
pub struct CriticNet {
    widths: Vec<usize>,
    params: Vec<Parameter>,
    seed: u64,
}

impl CriticNet {
    pub fn new(widths: &[usize], rng: &mut RngState) -> Result<CriticNet> {
        validate_widths(widths)?;
        if *widths.last().unwrap() != 1 {
            return Err(Error::contract(format!(
                "a critic must end in a single output, got widths {widths:?}"
            )));
        }
        Ok(CriticNet {
            widths: widths.to_vec(),
            params: init_params(widths, rng),
            seed: rng.seed(),
        })
    }

    pub(crate) fn from_parts(widths: Vec<usize>, params: Vec<Parameter>, seed: u64) -> CriticNet {
        CriticNet { widths, params, seed }
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    /// `[B x 1]` scores.
    pub fn forward(&self, batch: &Tensor) -> Tensor {
        forward_stack(&self.widths, &self.params, batch, false)
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.tensor().clear_grad();
        }
    }

    /// Clamps every weight and bias into `[-c, c]`.
    pub fn clip_weights(&self, c: f64) {
        assert!(c > 0.0, "clip bound must be positive, got {c}");
        for p in &self.params {
            p.tensor().update_values(|vals| {
                for v in vals.iter_mut() {
                    *v = v.clamp(-c, c);
                }
            });
        }
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.tensor().to_vec())
            .fold(0.0, |acc, v| acc.max(v.abs()))
    }
}
