//! Two-view self-supervised pre-training loop.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, TensorMap};
use crate::cropping::{make_two_views, CropStrategy};
use crate::datasets::{generate_shapes, load_labeled_dir, LabeledDataset};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{build_default_nets, ModelConfig, ModelParams, NetSpecs};
use crate::nn::Gradients;
use crate::objective::{l2_normalize, symmetrized_loss};
use crate::optim::{cosine_lr, ema_tau, ema_update, lars_step, slots, EmaConfig, OptimConfig, OptimState};
use crate::policy::{load_policy_file, PolicySource, RandAugmentConfig};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    /// Procedurally rendered shapes.
    Synthetic { n_per_class: usize, image_side: usize, seed: u64 },
    /// `root/<class>/*.ppm`.
    Directory { path: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic { n_per_class: 500, image_side: 32, seed: 0 }
    }
}

impl DataSource {
    pub fn load(&self) -> Result<LabeledDataset> {
        match self {
            DataSource::Synthetic { n_per_class, image_side, seed } => {
                generate_shapes(*seed, *n_per_class, *image_side)
            }
            DataSource::Directory { path } => load_labeled_dir(path),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandAugmentSettings {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: f64,
}

impl Default for RandAugmentSettings {
    fn default() -> Self {
        Self { n: 2, m: 9.0 }
    }
}

/// Full pre-training configuration. `optimizer.batch_size`,
/// `optimizer.total_steps` and `ema.total_steps` are derived from the rest
/// and overwritten before use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub view_side: usize,
    pub crop_strategy: CropStrategy,
    pub randaugment: RandAugmentSettings,
    /// Sub-policy file used instead of RandAugment when set.
    pub policy_file: Option<PathBuf>,
    pub optimizer: OptimConfig,
    pub ema: EmaConfig,
    pub model: ModelConfig,
    pub seed: u64,
    /// 0 writes a checkpoint only at the end.
    pub checkpoint_every: usize,
    pub checkpoint_path: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
    pub data: DataSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 256,
            view_side: 32,
            crop_strategy: CropStrategy::Uniform,
            randaugment: RandAugmentSettings::default(),
            policy_file: None,
            optimizer: OptimConfig::default(),
            ema: EmaConfig::default(),
            model: ModelConfig::default(),
            seed: 0,
            checkpoint_every: 0,
            checkpoint_path: None,
            log_path: None,
            data: DataSource::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size {} < 2", self.batch_size)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        RandAugmentConfig::new(self.randaugment.n, self.randaugment.m)?;
        Ok(())
    }

    pub fn policy(&self) -> Result<PolicySource> {
        match &self.policy_file {
            Some(path) => Ok(PolicySource::SubPolicies(load_policy_file(path)?)),
            None => Ok(PolicySource::RandAugment(RandAugmentConfig::new(self.randaugment.n, self.randaugment.m)?)),
        }
    }

    pub fn net_specs(&self) -> Result<NetSpecs> {
        build_default_nets(self.view_side, &self.model)
    }
}

/// Optimizer steps taken per epoch: full batches only, or a single batch
/// of everything when the dataset is smaller than one batch.
pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    (n / batch_size).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub loss: f64,
    pub lr: f64,
    pub tau: f64,
    pub emb_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub tau: f64,
    pub emb_std: f64,
    pub secs: f64,
}

/// Mean over dimensions of the per-dimension standard deviation of
/// l2-normalized rows.
pub fn embedding_std(z: &Tensor<f32>) -> f64 {
    let n = z.rows();
    if n == 0 || z.cols() == 0 {
        return 0.0;
    }
    let zn = l2_normalize(z);
    let d = zn.cols();
    let mut total = 0.0;
    for j in 0..d {
        let mean = (0..n).map(|r| zn.row(r)[j] as f64).sum::<f64>() / n as f64;
        let var = (0..n).map(|r| (zn.row(r)[j] as f64 - mean).powi(2)).sum::<f64>() / n as f64;
        total += var.sqrt();
    }
    total / d as f64
}

/// Row-major pixels scaled to [0, 1], one image per row.
pub fn images_to_tensor(images: &[Image]) -> Result<Tensor<f32>> {
    let cols = images.first().map_or(0, |i| i.pixels().len());
    let mut data = Vec::with_capacity(images.len() * cols);
    for img in images {
        if img.pixels().len() != cols {
            return Err(Error::ShapeMismatch("images in a batch differ in size".into()));
        }
        data.extend(img.pixels().iter().map(|&p| p as f32 / 255.0));
    }
    Tensor::from_vec(&[images.len(), cols], data)
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: ModelParams,
    pub state: OptimState,
    /// Completed epochs.
    pub epoch: usize,
    policy: PolicySource,
    optim: OptimConfig,
    ema: EmaConfig,
}

const META_EPOCH: &str = "meta.epoch";
const META_STEP: &str = "meta.step";
const MOMENTUM_PREFIX: &str = "optim.";

impl Trainer {
    /// Fresh model for a dataset of `n` items.
    pub fn new(config: TrainConfig, n: usize) -> Result<Self> {
        config.validate()?;
        let model = ModelParams::init(&config.net_specs()?, config.seed)?;
        Self::assemble(config, n, model, OptimState::new(), 0)
    }

    fn assemble(config: TrainConfig, n: usize, model: ModelParams, state: OptimState, epoch: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let total = (config.epochs * steps_per_epoch(n, config.batch_size)) as u64;
        let optim = OptimConfig { batch_size: config.batch_size, total_steps: total, ..config.optimizer.clone() };
        optim.validate()?;
        let ema = EmaConfig { total_steps: total, ..config.ema.clone() };
        ema.validate()?;
        let policy = config.policy()?;
        Ok(Self { config, model, state, epoch, policy, optim, ema })
    }

    pub fn optim_config(&self) -> &OptimConfig {
        &self.optim
    }

    pub fn ema_config(&self) -> &EmaConfig {
        &self.ema
    }

    pub fn policy(&self) -> &PolicySource {
        &self.policy
    }

    pub fn total_steps(&self) -> u64 {
        self.optim.total_steps
    }

    /// Model, momentum buffers and progress counters.
    pub fn to_tensor_map(&self) -> TensorMap {
        let mut map = TensorMap::new();
        self.model.export(&mut map);
        for (name, buf) in &self.state.buffers {
            map.insert(format!("{MOMENTUM_PREFIX}{name}"), buf.clone());
        }
        map.insert(META_EPOCH.into(), Tensor::full(&[1], self.epoch as f32));
        map.insert(META_STEP.into(), Tensor::full(&[1], self.state.step as f32));
        map
    }

    pub fn from_tensor_map(config: TrainConfig, n: usize, map: &TensorMap) -> Result<Self> {
        config.validate()?;
        let model = ModelParams::import(&config.net_specs()?, map)?;
        let mut state = OptimState::new();
        for (name, t) in map.range(MOMENTUM_PREFIX.to_string()..) {
            let Some(param) = name.strip_prefix(MOMENTUM_PREFIX) else { break };
            state.buffers.insert(param.to_string(), t.clone());
        }
        let meta = |key: &str| -> Result<f32> {
            map.get(key)
                .and_then(|t| t.data().first().copied())
                .ok_or_else(|| Error::Config(format!("checkpoint lacks {key}")))
        };
        state.step = meta(META_STEP)? as u64;
        let epoch = meta(META_EPOCH)? as usize;
        Self::assemble(config, n, model, state, epoch)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(&self.to_tensor_map(), path)
    }

    pub fn resume(config: TrainConfig, n: usize, path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensor_map(config, n, &load_checkpoint(path)?)
    }

    /// One update on a batch. `seeds[i]` drives both views of `images[i]`.
    pub fn pretrain_step(&mut self, images: &[&Image], seeds: &[u64]) -> Result<StepMetrics> {
        if images.len() < 2 {
            return Err(Error::BatchTooSmall(images.len()));
        }
        if images.len() != seeds.len() {
            return Err(Error::ShapeMismatch(format!("{} images but {} seeds", images.len(), seeds.len())));
        }
        let step = self.state.step;
        let lr = cosine_lr(step, &self.optim)?;
        let tau = ema_tau(step, &self.ema);
        let (strategy, side, policy) = (self.config.crop_strategy, self.config.view_side, &self.policy);
        let views: Vec<(Image, Image)> = images
            .par_iter()
            .zip(seeds.par_iter())
            .map(|(img, &seed)| make_two_views(img, strategy, policy, side, &mut Rng::new(seed)))
            .collect::<Result<_>>()?;
        let (first, second): (Vec<Image>, Vec<Image>) = views.into_iter().unzip();
        let x1 = images_to_tensor(&first)?;
        let x2 = images_to_tensor(&second)?;

        let m = &mut self.model;
        let (h1, te1) = m.encoder.forward_train(&x1)?;
        let (z1, tp1) = m.projector.forward_train(&h1)?;
        let (p1, tq1) = m.predictor.forward_train(&z1)?;
        let (h2, te2) = m.encoder.forward_train(&x2)?;
        let (z2, tp2) = m.projector.forward_train(&h2)?;
        let (p2, tq2) = m.predictor.forward_train(&z2)?;
        let zt1 = m.target_projector.forward_eval(&m.target_encoder.forward_eval(&x1)?)?;
        let zt2 = m.target_projector.forward_eval(&m.target_encoder.forward_eval(&x2)?)?;

        let (loss, g1, g2) = symmetrized_loss(&p1, &zt2, &p2, &zt1)?;

        let backprop = |m: &ModelParams, tq, tp, te, g: &Tensor<f32>| -> Result<[Gradients<f32>; 3]> {
            let (dz, gq) = m.predictor.backward(tq, g)?;
            let (dh, gg) = m.projector.backward(tp, &dz)?;
            let gf = m.encoder.param_grads(te, &dh)?;
            Ok([gf, gg, gq])
        };
        let [mut gf, mut gg, mut gq] = backprop(m, &tq1, &tp1, &te1, &g1)?;
        let [gf2, gg2, gq2] = backprop(m, &tq2, &tp2, &te2, &g2)?;
        gf.add_assign(&gf2)?;
        gg.add_assign(&gg2)?;
        gq.add_assign(&gq2)?;

        let mut all = slots(crate::model::ENCODER, &mut m.encoder, &gf)?;
        all.extend(slots(crate::model::PROJECTOR, &mut m.projector, &gg)?);
        all.extend(slots(crate::model::PREDICTOR, &mut m.predictor, &gq)?);
        lars_step(all, &mut self.state, &self.optim, lr)?;

        ema_update(&mut m.target_encoder, &m.encoder, tau)?;
        ema_update(&mut m.target_projector, &m.projector, tau)?;

        Ok(StepMetrics { loss: loss as f64, lr, tau, emb_std: embedding_std(&z1) })
    }

    /// Train the next epoch. Batch order and view seeds depend only on the
    /// config seed and the epoch index.
    pub fn run_epoch(&mut self, ds: &LabeledDataset) -> Result<EpochMetrics> {
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let start = Instant::now();
        let epoch = self.epoch;
        let epoch_seed = derive_seed(self.config.seed, epoch as u64);
        let mut order: Vec<usize> = (0..ds.len()).collect();
        Rng::new(epoch_seed).shuffle(&mut order);
        let batch = self.config.batch_size.min(ds.len());
        let steps = steps_per_epoch(ds.len(), self.config.batch_size);
        let mut loss_sum = 0.0;
        let mut last = None;
        for chunk in order.chunks_exact(batch).take(steps) {
            let images: Vec<&Image> = chunk.iter().map(|&i| &ds.items[i].image).collect();
            let seeds: Vec<u64> = chunk.iter().map(|&i| derive_seed(epoch_seed, i as u64)).collect();
            let m = self.pretrain_step(&images, &seeds)?;
            loss_sum += m.loss;
            last = Some(m);
        }
        let last = last.ok_or(Error::BatchTooSmall(ds.len()))?;
        self.epoch += 1;
        Ok(EpochMetrics {
            epoch,
            loss: loss_sum / steps as f64,
            lr: last.lr,
            tau: last.tau,
            emb_std: last.emb_std,
            secs: start.elapsed().as_secs_f64(),
        })
    }

    /// Train until `until_epoch` (capped at the configured total), logging
    /// and checkpointing as configured.
    pub fn run_until(&mut self, ds: &LabeledDataset, until_epoch: usize) -> Result<Vec<EpochMetrics>> {
        let until = until_epoch.min(self.config.epochs);
        let mut log = match &self.config.log_path {
            Some(path) => {
                let mut opts = OpenOptions::new();
                opts.create(true);
                if self.epoch == 0 {
                    opts.write(true).truncate(true);
                } else {
                    opts.append(true);
                }
                Some(opts.open(path)?)
            }
            None => None,
        };
        let mut metrics = Vec::new();
        while self.epoch < until {
            let m = self.run_epoch(ds)?;
            if let Some(f) = log.as_mut() {
                writeln!(f, "{}", serde_json::to_string(&m)?)?;
            }
            metrics.push(m);
            if let Some(path) = &self.config.checkpoint_path {
                let every = self.config.checkpoint_every;
                if self.epoch == self.config.epochs || (every > 0 && self.epoch.is_multiple_of(every)) {
                    self.save(path)?;
                }
            }
        }
        Ok(metrics)
    }
}

pub fn run_pretraining(ds: &LabeledDataset, cfg: &TrainConfig) -> Result<(ModelParams, Vec<EpochMetrics>)> {
    let mut trainer = Trainer::new(cfg.clone(), ds.len())?;
    let metrics = trainer.run_until(ds, cfg.epochs)?;
    Ok((trainer.model, metrics))
}
