//! Epoch loop: augmentation, the three relaxation phases, the centered gradient and a
//! Nesterov update, plus evaluation, checkpoints and weight histograms.
//!
//! All randomness of epoch `e` comes from a ChaCha stream keyed by `(seed, e)`, so an
//! epoch can be replayed from a checkpoint without saving generator internals.

mod augment;
mod checkpoint;
mod histogram;
mod optimizer;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use augment::{augment, hflip, AugmentConfig, Normalization};
pub use checkpoint::{hash_config, Checkpoint};
pub use histogram::{export_weight_histograms, write_histograms_csv, WeightHistogram};
pub use optimizer::{nesterov_step, OptimizerState};

use crate::data::LabeledDataset;
use crate::energy::Parameters;
use crate::gradients::{cep_gradient, ep_gradient_onesided, Estimator};
use crate::numerics::{Scalar, Tensor};
use crate::relaxation::{relax_free, relax_nudged, squared_error, RelaxationConfig};
use crate::topology::NetworkTopology;
use crate::{Error, Result};

/// Upper bound (exclusive) on the nudge strength; training stalls from about here on.
pub const BETA_MAX: f64 = 0.8;
/// Range of nudge strengths that trains stably.
pub const BETA_STABLE: (f64, f64) = (0.1, 0.4);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate of the shallowest parameter group.
    pub lr: f64,
    /// Group at depth `d` uses `lr · lr_growth^d`.
    pub lr_growth: f64,
    /// Explicit per-parameter learning rates, overriding the geometric rule.
    pub lr_overrides: BTreeMap<String, f64>,
    /// Cosine decay of every group's rate to zero over `epochs`.
    pub cosine: bool,
    pub momentum: f64,
    pub weight_decay: f64,
    pub estimator: Estimator,
    pub seed: u64,
    /// Weights start uniform in `±init_gain / sqrt(fan_in)`.
    pub init_gain: f64,
    pub relaxation: RelaxationConfig,
    pub augment: AugmentConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            beta: 0.25,
            epochs: 20,
            batch_size: 128,
            lr: 0.02,
            lr_growth: 1.0,
            lr_overrides: BTreeMap::new(),
            cosine: true,
            momentum: 0.9,
            weight_decay: 5e-4,
            estimator: Estimator::Cep,
            seed: 0,
            init_gain: 0.6,
            relaxation: RelaxationConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainingConfig {
    /// Rejects unusable settings; returns warnings for usable but risky ones.
    pub fn validate(&self) -> Result<Vec<String>> {
        if !(self.beta > 0.0 && self.beta < BETA_MAX) {
            return Err(Error::Config(format!(
                "beta = {} is outside (0, {BETA_MAX}): nudges of {BETA_MAX} and above prevent \
                 learning progress; the stable range is [{}, {}]",
                self.beta, BETA_STABLE.0, BETA_STABLE.1
            )));
        }
        if !matches!(self.estimator, Estimator::Cep | Estimator::EpOnesided) {
            return Err(Error::Config(format!(
                "training estimator must be cep or ep_onesided, got {}",
                self.estimator.label()
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr_growth > 0.0) || self.lr_overrides.values().any(|&v| !(v >= 0.0)) {
            return Err(Error::Config("learning rates must be >= 0 and lr_growth > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("momentum must be in [0, 1) and weight_decay >= 0".into()));
        }
        if !(self.init_gain > 0.0) {
            return Err(Error::Config("init_gain must be positive".into()));
        }
        if !(self.augment.input_scale > 0.0 && self.augment.input_scale.is_finite()) {
            return Err(Error::Config("augment.input_scale must be positive".into()));
        }
        self.relaxation.validate()?;
        let mut warnings = Vec::new();
        if self.beta < BETA_STABLE.0 || self.beta > BETA_STABLE.1 {
            warnings.push(format!(
                "beta = {} is outside the stable range [{}, {}]",
                self.beta, BETA_STABLE.0, BETA_STABLE.1
            ));
        }
        Ok(warnings)
    }

    /// Base learning rate of one parameter before scheduling.
    pub fn base_lr(&self, topology: &NetworkTopology, id: &str) -> f64 {
        if let Some(&v) = self.lr_overrides.get(id) {
            return v;
        }
        let depth = topology.param_depth(id).unwrap_or(0);
        self.lr * self.lr_growth.powi(depth as i32)
    }

    /// Multiplier applied to every base rate during `epoch` (0-based).
    pub fn schedule_factor(&self, epoch: usize) -> f64 {
        if !self.cosine || self.epochs == 0 {
            return 1.0;
        }
        let t = (epoch.min(self.epochs) as f64) / self.epochs as f64;
        0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// A topology and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub topology: NetworkTopology,
    pub params: Parameters<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(topology: NetworkTopology, params: Parameters<T>) -> Result<Self> {
        params.check(&topology)?;
        Ok(Self { topology, params })
    }

    /// Uniform fan-in scaled initialization from `seed`.
    pub fn init(topology: NetworkTopology, gain: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Parameters::init_uniform(&topology, gain, &mut rng);
        Self { topology, params }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub loss: f64,
    pub accuracy: f64,
    /// Mean over batches of the last-step residual of the free phase.
    pub free_residual: f64,
    /// Same for the nudged phases (averaged over `+β` and `−β`).
    pub nudge_residual: f64,
    pub batches: usize,
    pub nudged_phases: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub loss: f64,
    pub accuracy: f64,
    pub free_residual: f64,
}

/// Generator for everything random in `epoch`.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// One-hot targets shaped like the output state.
pub fn one_hot<T: Scalar>(topology: &NetworkTopology, labels: &[usize]) -> Result<Tensor<T>> {
    let out = topology.state(topology.output_index());
    let classes = out.numel();
    let mut t = Tensor::zeros(&out.batch_shape(labels.len()));
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::InvalidArgument(format!(
                "label {l} does not fit an output of {classes} units"
            )));
        }
        t.data_mut()[i * classes + l] = T::one();
    }
    Ok(t)
}

/// Index of the largest output per sample; ties resolve to the lowest class.
pub fn predictions<T: Scalar>(output: &Tensor<T>) -> Vec<usize> {
    let per = output.sample_len();
    output
        .data()
        .chunks(per)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn check_data<T: Scalar>(model: &Model<T>, data: &LabeledDataset) -> Result<()> {
    let want = model.topology.input_shape();
    let flat = want[1] == 1 && want[2] == 1 && data.image_shape().iter().product::<usize>() == want[0];
    if data.image_shape() != want && !flat {
        return Err(Error::ShapeMismatch(format!(
            "dataset images {:?} but the network input is {want:?}",
            data.image_shape()
        )));
    }
    if data.class_count > model.topology.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} classes but the network output has {}",
            data.class_count,
            model.topology.num_classes()
        )));
    }
    Ok(())
}

/// Augmented batch, reshaped to the network input (images flatten into a dense input).
fn batch_input<T: Scalar>(
    topology: &NetworkTopology,
    data: &LabeledDataset,
    indices: &[usize],
    augmentation: &AugmentConfig,
    norm: Option<&Normalization>,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<T>> {
    let shape = data.image_shape();
    let per = shape.iter().product::<usize>();
    let src = data.images.data();
    let mut out = Vec::with_capacity(indices.len() * per);
    for &i in indices {
        let img = augment(&src[i * per..(i + 1) * per], shape, rng, augmentation, norm);
        out.extend(img.into_iter().map(|v| T::lit(v as f64)));
    }
    let [c, h, w] = topology.input_shape();
    Tensor::new(vec![indices.len(), c, h, w], out)
}

/// One pass over `data` in a seeded random order.
///
/// Every batch runs the free phase from zero states, then the `+β` phase (and the `−β`
/// phase for the centered estimator) from the free fixed point, and takes one Nesterov
/// step. Parameter groups whose scheduled rate is zero are left untouched.
pub fn train_epoch<T: Scalar>(
    model: &mut Model<T>,
    data: &LabeledDataset,
    config: &TrainingConfig,
    opt: &mut OptimizerState<T>,
    epoch: usize,
    norm: Option<&Normalization>,
) -> Result<EpochMetrics> {
    config.validate()?;
    check_data(model, data)?;
    let mut rng = epoch_rng(config.seed, epoch);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);

    let factor = config.schedule_factor(epoch);
    let rates: BTreeMap<String, f64> = model
        .params
        .tensors
        .keys()
        .map(|id| (id.clone(), config.base_lr(&model.topology, id) * factor))
        .collect();
    let beta = T::lit(config.beta);
    let (mut loss_sum, mut correct) = (0.0f64, 0usize);
    let (mut free_res, mut nudge_res) = (0.0f64, 0.0f64);
    let mut batches = 0;
    let mut nudged_phases = 0;

    for chunk in order.chunks(config.batch_size) {
        let input = batch_input::<T>(&model.topology, data, chunk, &config.augment, norm, &mut rng)?;
        let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
        let target = one_hot::<T>(&model.topology, &labels)?;
        let (topo, params) = (&model.topology, &model.params);

        let free = relax_free(topo, params, &input, &config.relaxation, None)?;
        let losses = squared_error(free.states.output(), &target)?;
        let batch_loss: f64 = losses.iter().map(|l| l.as_f64()).sum();
        if !batch_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss at epoch {epoch}, batch {batches}"
            )));
        }
        loss_sum += batch_loss;
        correct += predictions(free.states.output())
            .iter()
            .zip(&labels)
            .filter(|(p, l)| p == l)
            .count();
        free_res += free.trace.final_residual();

        let pos = relax_nudged(topo, params, &input, &target, beta, &config.relaxation, free.states.clone())?;
        let grads = match config.estimator {
            Estimator::EpOnesided => {
                nudged_phases += 1;
                nudge_res += pos.trace.final_residual();
                ep_gradient_onesided(topo, params, &free.states, &pos.states, config.beta)?
            }
            _ => {
                let neg = relax_nudged(topo, params, &input, &target, -beta, &config.relaxation, free.states)?;
                nudged_phases += 2;
                nudge_res += 0.5 * (pos.trace.final_residual() + neg.trace.final_residual());
                cep_gradient(topo, params, &pos.states, &neg.states, config.beta)?
            }
        };
        grads.ensure_finite()?;
        let mut grads = grads;
        grads.grads.retain(|id, _| rates.get(id).is_some_and(|&r| r > 0.0));
        if !grads.grads.is_empty() {
            nesterov_step(
                &mut model.params,
                &grads,
                opt,
                |id| rates[id],
                config.momentum,
                config.weight_decay,
            )?;
        }
        batches += 1;
    }
    let n = data.len().max(1) as f64;
    let b = batches.max(1) as f64;
    Ok(EpochMetrics {
        loss: loss_sum / n,
        accuracy: correct as f64 / n,
        free_residual: free_res / b,
        nudge_residual: nudge_res / b,
        batches,
        nudged_phases,
    })
}

/// Free-phase accuracy and mean loss, in dataset order, without augmentation.
///
/// Losses are accumulated per sample in order, so the result does not depend on
/// `batch_size`.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    data: &LabeledDataset,
    relaxation: &RelaxationConfig,
    norm: Option<&Normalization>,
    batch_size: usize,
) -> Result<EvalMetrics> {
    check_data(model, data)?;
    let batch_size = batch_size.max(1);
    let eval_aug = AugmentConfig {
        normalize: norm.is_some(),
        ..AugmentConfig::none()
    };
    // evaluation draws nothing from this generator
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut loss_sum, mut correct, mut res_sum, mut batches) = (0.0f64, 0usize, 0.0f64, 0usize);
    let order: Vec<usize> = (0..data.len()).collect();
    for chunk in order.chunks(batch_size) {
        let input = batch_input::<T>(&model.topology, data, chunk, &eval_aug, norm, &mut rng)?;
        let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
        let target = one_hot::<T>(&model.topology, &labels)?;
        let free = relax_free(&model.topology, &model.params, &input, relaxation, None)?;
        for l in squared_error(free.states.output(), &target)? {
            loss_sum += l.as_f64();
        }
        correct += predictions(free.states.output())
            .iter()
            .zip(&labels)
            .filter(|(p, l)| p == l)
            .count();
        res_sum += free.trace.final_residual();
        batches += 1;
    }
    let n = data.len().max(1) as f64;
    Ok(EvalMetrics {
        loss: loss_sum / n,
        accuracy: correct as f64 / n,
        free_residual: res_sum / batches.max(1) as f64,
    })
}
