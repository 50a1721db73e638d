//! Evaluation protocols: linear probe on frozen features, end-to-end
//! fine-tuning on a labeled fraction, and top-k scoring.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{label_fraction_split, LabeledDataset};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{LayerSpec, NetSpec, Network};
use crate::objective::softmax_cross_entropy;
use crate::optim::{sgd_step, slots, OptimState};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;
use crate::trainer::images_to_tensor;
use crate::transforms::resize_bilinear;

const FEATURE_CHUNK: usize = 256;

/// Minibatch SGD settings shared by the linear probe and fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { epochs: 100, lr: 0.1, batch_size: 64, momentum: 0.9, weight_decay: 0.0, seed: 0 }
    }
}

impl SgdConfig {
    pub fn finetune_default() -> Self {
        Self { epochs: 60, lr: 0.02, batch_size: 32, momentum: 0.9, weight_decay: 0.0, seed: 0 }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0 && self.momentum >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Config("SGD coefficients must be finite and non-negative".into()));
        }
        Ok(())
    }

    fn lr_at(&self, step: usize, total: usize) -> f64 {
        self.lr * 0.5 * (1.0 + (PI * step as f64 / total as f64).cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    pub top1: f64,
    /// Absent when there are five classes or fewer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top5: Option<f64>,
    pub per_class: Vec<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub config: serde_json::Value,
}

/// Fraction of rows whose label ranks among the `k` largest logits.
/// Equal logits rank the lower class index first.
pub fn topk_accuracy(logits: &Tensor<f32>, labels: &[usize], k: usize) -> Result<f64> {
    let classes = logits.cols();
    if k == 0 || k > classes {
        return Err(Error::BadK { k, classes });
    }
    if logits.rows() != labels.len() || labels.is_empty() {
        return Err(Error::ShapeMismatch(format!("{} rows for {} labels", logits.rows(), labels.len())));
    }
    let mut hits = 0usize;
    for (r, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::BadLabel { label: y, classes });
        }
        let row = logits.row(r);
        let rank = row.iter().enumerate().filter(|&(j, &v)| v > row[y] || (v == row[y] && j < y)).count();
        hits += usize::from(rank < k);
    }
    Ok(hits as f64 / labels.len() as f64)
}

fn report(
    protocol: &str,
    logits: &Tensor<f32>,
    labels: &[usize],
    n_train: usize,
    config: serde_json::Value,
) -> Result<EvalReport> {
    let classes = logits.cols();
    let top1 = topk_accuracy(logits, labels, 1)?;
    let top5 = if classes > 5 { Some(topk_accuracy(logits, labels, 5)?) } else { None };
    let mut correct = vec![0usize; classes];
    let mut count = vec![0usize; classes];
    for (r, &y) in labels.iter().enumerate() {
        count[y] += 1;
        let row = logits.row(r);
        let best = (0..classes).fold(0, |b, j| if row[j] > row[b] { j } else { b });
        correct[y] += usize::from(best == y);
    }
    let per_class = correct.iter().zip(&count).map(|(&c, &n)| if n == 0 { 0.0 } else { c as f64 / n as f64 }).collect();
    Ok(EvalReport { protocol: protocol.into(), top1, top5, per_class, n_train, n_test: labels.len(), config })
}

/// Whole image resized to `side`, scaled to [0, 1].
pub fn prepare_inputs(ds: &LabeledDataset, side: usize) -> Result<Tensor<f32>> {
    let resized: Vec<Image> =
        ds.items.par_iter().map(|it| resize_bilinear(&it.image, side, side)).collect::<Result<_>>()?;
    images_to_tensor(&resized)
}

fn forward_chunked(net: &Network<f32>, x: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (n, d) = (x.rows(), net.spec().output_dim());
    let mut out = Vec::with_capacity(n * d);
    for start in (0..n).step_by(FEATURE_CHUNK) {
        let end = (start + FEATURE_CHUNK).min(n);
        let rows = gather(x, &(start..end).collect::<Vec<_>>());
        out.extend_from_slice(net.forward_eval(&rows)?.data());
    }
    Tensor::from_vec(&[n, d], out)
}

/// Frozen eval-mode encoder outputs, one row per item.
pub fn extract_features(encoder: &Network<f32>, ds: &LabeledDataset, side: usize) -> Result<Tensor<f32>> {
    forward_chunked(encoder, &prepare_inputs(ds, side)?)
}

fn gather(x: &Tensor<f32>, idx: &[usize]) -> Tensor<f32> {
    let mut data = Vec::with_capacity(idx.len() * x.cols());
    for &i in idx {
        data.extend_from_slice(x.row(i));
    }
    Tensor::from_vec(&[idx.len(), x.cols()], data).expect("gathered rows")
}

/// Per-column affine map fitted on training features.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub scale: Vec<f32>,
}

impl Standardizer {
    pub fn fit(x: &Tensor<f32>) -> Self {
        let (n, d) = (x.rows().max(1) as f64, x.cols());
        let mut mean = vec![0.0f64; d];
        for r in 0..x.rows() {
            for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0f64; d];
        for r in 0..x.rows() {
            for ((s, &v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v as f64 - m).powi(2);
            }
        }
        Self {
            mean: mean.iter().map(|&m| m as f32).collect(),
            scale: var.iter().map(|&s| (1.0 / ((s / n).sqrt() + 1e-6)) as f32).collect(),
        }
    }

    pub fn apply(&self, x: &Tensor<f32>) -> Tensor<f32> {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) * s;
            }
        }
        out
    }
}

pub fn class_count(train: &[usize], test: &[usize]) -> usize {
    train.iter().chain(test).max().map_or(0, |&m| m + 1)
}

/// Run `cfg.epochs` of shuffled minibatch SGD, calling `step` with each
/// batch's indices and learning rate. Batches smaller than `min_batch` are
/// skipped.
fn sgd_epochs(
    n: usize,
    cfg: &SgdConfig,
    min_batch: usize,
    mut step: impl FnMut(&[usize], f64) -> Result<()>,
) -> Result<()> {
    let per_epoch = (0..n).step_by(cfg.batch_size).filter(|&s| (n - s).min(cfg.batch_size) >= min_batch).count();
    let total = (per_epoch * cfg.epochs).max(1);
    let mut t = 0;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        Rng::new(derive_seed(cfg.seed, epoch as u64)).shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < min_batch {
                continue;
            }
            step(chunk, cfg.lr_at(t, total))?;
            t += 1;
        }
    }
    Ok(())
}

/// Softmax-regression head fitted by momentum SGD.
pub fn train_linear_head(x: &Tensor<f32>, labels: &[usize], classes: usize, cfg: &SgdConfig) -> Result<Network<f32>> {
    cfg.validate()?;
    if x.rows() != labels.len() || labels.is_empty() {
        return Err(Error::ShapeMismatch(format!("{} rows for {} labels", x.rows(), labels.len())));
    }
    let spec = NetSpec::new(vec![LayerSpec::linear(x.cols(), classes)])?;
    let mut head = Network::<f32>::init(&spec, derive_seed(cfg.seed, u64::MAX))?;
    let mut state = OptimState::new();
    sgd_epochs(labels.len(), cfg, 1, |idx, lr| {
        let xb = gather(x, idx);
        let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let (logits, trace) = head.forward_train(&xb)?;
        let (_, dlogits) = softmax_cross_entropy(&logits, &yb)?;
        let grads = head.param_grads(&trace, &dlogits)?;
        sgd_step(slots("head", &mut head, &grads)?, &mut state, lr, cfg.momentum, cfg.weight_decay)
    })?;
    Ok(head)
}

/// Linear probe on precomputed features; features are standardized with
/// training-set statistics first.
pub fn linear_eval_features(
    train_x: &Tensor<f32>,
    train_y: &[usize],
    test_x: &Tensor<f32>,
    test_y: &[usize],
    cfg: &SgdConfig,
) -> Result<EvalReport> {
    let classes = class_count(train_y, test_y);
    if classes < 2 {
        return Err(Error::Config("linear evaluation needs at least two classes".into()));
    }
    let norm = Standardizer::fit(train_x);
    let head = train_linear_head(&norm.apply(train_x), train_y, classes, cfg)?;
    let logits = head.forward_eval(&norm.apply(test_x))?;
    report("linear", &logits, test_y, train_y.len(), serde_json::to_value(cfg)?)
}

pub fn linear_eval(
    encoder: &Network<f32>,
    train: &LabeledDataset,
    test: &LabeledDataset,
    side: usize,
    cfg: &SgdConfig,
) -> Result<EvalReport> {
    let train_x = extract_features(encoder, train, side)?;
    let test_x = extract_features(encoder, test, side)?;
    linear_eval_features(&train_x, &train.labels(), &test_x, &test.labels(), cfg)
}

/// Train a copy of `encoder` plus a fresh linear head end to end on a
/// stratified `fraction` of `train`, then score on `test`.
pub fn finetune_fraction(
    encoder: &Network<f32>,
    train: &LabeledDataset,
    test: &LabeledDataset,
    fraction: f64,
    side: usize,
    cfg: &SgdConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    let (labeled, _) = label_fraction_split(train, fraction, cfg.seed)?;
    let labels = labeled.labels();
    let classes = class_count(&labels, &test.labels()).max(train.num_classes());
    if classes < 2 {
        return Err(Error::Config("fine-tuning needs at least two classes".into()));
    }
    if labeled.len() < 2 {
        return Err(Error::BatchTooSmall(labeled.len()));
    }
    let x = prepare_inputs(&labeled, side)?;
    let mut enc = encoder.clone();
    let head_spec = NetSpec::new(vec![LayerSpec::linear(enc.spec().output_dim(), classes)])?;
    let mut head = Network::<f32>::init(&head_spec, derive_seed(cfg.seed, u64::MAX))?;
    let mut state = OptimState::new();
    sgd_epochs(labels.len(), cfg, 2, |idx, lr| {
        let xb = gather(&x, idx);
        let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let (h, te) = enc.forward_train(&xb)?;
        let (logits, th) = head.forward_train(&h)?;
        let (_, dlogits) = softmax_cross_entropy(&logits, &yb)?;
        let (dh, gh) = head.backward(&th, &dlogits)?;
        let ge = enc.param_grads(&te, &dh)?;
        let mut all = slots("encoder", &mut enc, &ge)?;
        all.extend(slots("head", &mut head, &gh)?);
        sgd_step(all, &mut state, lr, cfg.momentum, cfg.weight_decay)
    })?;
    let feats = extract_features(&enc, test, side)?;
    let logits = head.forward_eval(&feats)?;
    let mut config = serde_json::to_value(cfg)?;
    config["fraction"] = fraction.into();
    report("finetune", &logits, &test.labels(), labeled.len(), config)
}
