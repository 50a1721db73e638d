//! Checks with fixed tolerances, shared by the per-area suites and the
//! acceptance report. Each returns a short detail string on success and a
//! description of the first violation otherwise.

use std::path::Path;
use std::process::Command;

use mass_core::checkpoint::{encode_checkpoint, load_checkpoint};
use mass_core::cropping::{sample_crop, CropStrategy};
use mass_core::model::ModelConfig;
use mass_core::nn::{NetSpec, Network, ParamRole};
use mass_core::objective::symmetrized_loss;
use mass_core::optim::{
    cosine_lr, ema_tau, ema_tensor, lars_step, scaled_lr, slots, EmaConfig, OptimConfig, OptimState, ParamSlot,
};
use mass_core::policy::{apply_policy, sample_randaugment, RandAugmentConfig};
use mass_core::rng::Rng;
use mass_core::tensor::Tensor;
use mass_core::trainer::{DataSource, TrainConfig, Trainer};
use mass_core::transforms::{
    adjust, affine_sample, autocontrast, blend, equalize, invert, posterize, solarize, solarize_add, AdjustVariant,
    TransformKind,
};

use super::*;

pub type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T, E: std::fmt::Display>(r: std::result::Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// Ops whose zero-magnitude parameters are exact identities.
pub const ZERO_MAGNITUDE_IDENTITIES: [TransformKind; 13] = [
    TransformKind::Posterize,
    TransformKind::Solarize,
    TransformKind::SolarizeAdd,
    TransformKind::Sharpness,
    TransformKind::Color,
    TransformKind::RandBrightness,
    TransformKind::RandContrast,
    TransformKind::RandSaturation,
    TransformKind::RandHue,
    TransformKind::ShearX,
    TransformKind::ShearY,
    TransformKind::TranslateX,
    TransformKind::TranslateY,
];

pub fn transform_identities() -> Check {
    let mut rng = Rng::new(11);
    for i in 0..50 {
        let (h, w) = (rng.range_inclusive(1, 24), rng.range_inclusive(1, 24));
        let img = random_image(&mut rng, h, w);
        let other = random_image(&mut rng, h, w);
        let same = |name: &str, out: &mut dyn FnMut() -> mass_core::Result<Image>| -> Result<(), String> {
            ensure(ok(out())? == img, || format!("{name} changed image {i} ({h}x{w})"))
        };
        same("solarize(256)", &mut || solarize(&img, 256))?;
        same("posterize(8)", &mut || posterize(&img, 8))?;
        same("solarize_add(0)", &mut || solarize_add(&img, 0, 128))?;
        for v in 0..4 {
            let variant = AdjustVariant::from_index(v).unwrap();
            same(&format!("adjust({variant}, 1)"), &mut || adjust(variant, &img, 1.0))?;
        }
        for kind in [TransformKind::ShearX, TransformKind::ShearY, TransformKind::TranslateX, TransformKind::TranslateY]
        {
            same(&format!("{kind}(0)"), &mut || affine_sample(&img, kind, 0.0))?;
        }
        same("blend(f=0)", &mut || blend(&img, &other, 0.0))?;
        ensure(ok(blend(&other, &img, 1.0))? == img, || format!("blend(f=1) on image {i}"))?;
        ensure(invert(&invert(&img)) == img, || format!("invert twice on image {i}"))?;

        let cfg = RandAugmentConfig { n_ops: 4, magnitude: 0.0, search_space: ZERO_MAGNITUDE_IDENTITIES.to_vec() };
        let mut prng = Rng::new(i);
        let ops = sample_randaugment(&cfg, &mut prng);
        let out = ok(apply_policy(&img, &ops, &mut prng))?;
        ensure(out == img, || format!("M=0 pipeline {ops:?} changed image {i}"))?;
    }
    Ok("50 images".into())
}

pub fn transform_oracles() -> Check {
    let mut rng = Rng::new(12);
    for i in 0..200 {
        let img = random_image(&mut rng, 8, 8);
        // Narrow-range images exercise the degenerate branches too.
        let img = if i % 4 == 0 { img.map_channels(|v| 100 + v % 3) } else { img };
        ensure(equalize(&img) == naive_equalize(&img), || format!("equalize differs on image {i}"))?;
        ensure(autocontrast(&img) == naive_autocontrast(&img), || format!("autocontrast differs on image {i}"))?;
    }
    for i in 0..20 {
        let (h, w) = (rng.range_inclusive(1, 12), rng.range_inclusive(2, 12));
        let img = random_image(&mut rng, h, w);
        for amount in [1.0 / w as f64, -1.0 / w as f64] {
            let got = ok(affine_sample(&img, TransformKind::TranslateX, amount))?;
            ensure(got == brute_translate_x(&img, amount), || format!("TranslateX({amount}) differs on image {i}"))?;
        }
    }
    Ok("200 images".into())
}

pub fn gradient_checks() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..10 {
        for (name, spec) in layer_specs() {
            let e = network_grad_error(&spec, 4, seed);
            ensure(e <= FD_TOL, || format!("{name} seed {seed}: rel err {e:e}"))?;
            worst = worst.max(e);
        }
        for (name, e) in [
            ("cosine_loss", cosine_grad_error(seed)),
            ("symmetrized_loss", symmetrized_grad_error(seed)),
            ("softmax_cross_entropy", cross_entropy_grad_error(seed)),
        ] {
            ensure(e <= FD_TOL, || format!("{name} seed {seed}: rel err {e:e}"))?;
            worst = worst.max(e);
        }
    }
    Ok(format!("max rel err {worst:.2e}"))
}

pub fn loss_bounds() -> Check {
    let mut rng = Rng::new(13);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..1000 {
        let (n, d) = (rng.range_inclusive(1, 8), rng.range_inclusive(1, 16));
        let scale = [1e-3, 1.0, 1e3][i % 3];
        let mut t = || {
            let mut m = random_tensor(&mut rng, n, d);
            m.data_mut().iter_mut().for_each(|v| *v *= scale);
            m
        };
        let (p1, z2, p2, z1) = (t(), t(), t(), t());
        let (a, _, _) = ok(symmetrized_loss(&p1, &z2, &p2, &z1))?;
        let (b, _, _) = ok(symmetrized_loss(&p2, &z1, &p1, &z2))?;
        ensure((-1.0..=1.0).contains(&a), || format!("batch {i}: loss {a} outside [-1, 1]"))?;
        ensure(a.to_bits() == b.to_bits(), || format!("batch {i}: swap changed {a} to {b}"))?;
        lo = lo.min(a);
        hi = hi.max(a);
    }
    Ok(format!("1000 batches, range [{lo:.3}, {hi:.3}]"))
}

/// Five LARS steps on an MLP with a fixed gradient sequence, so that only
/// the decay setting differs between runs.
fn exclusion_run(weight_decay: f64) -> Network<f64> {
    let spec = NetSpec::mlp(&[4, 5, 3]).unwrap();
    let mut net = Network::<f64>::init(&spec, 3).unwrap();
    let mut rng = Rng::new(4);
    let cfg = OptimConfig { weight_decay, ..Default::default() };
    let mut state = OptimState::new();
    for _ in 0..5 {
        let tensors = net
            .params()
            .iter()
            .map(|p| {
                let data = (0..p.tensor.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
                Tensor::from_vec(p.tensor.shape(), data).unwrap()
            })
            .collect();
        let grads = mass_core::nn::Gradients { tensors };
        lars_step(slots("net", &mut net, &grads).unwrap(), &mut state, &cfg, 0.5).unwrap();
    }
    net
}

pub fn optimizer_checks() -> Check {
    let big = OptimConfig { batch_size: 2048, ..Default::default() };
    let lr = scaled_lr(&big);
    ensure(lr == 2.4, || format!("scaled_lr(2048) = {lr}"))?;

    let cfg = OptimConfig { warmup_steps: 10, total_steps: 100, ..Default::default() };
    let (at_warm, at_end) = (ok(cosine_lr(10, &cfg))?, ok(cosine_lr(100, &cfg))?);
    ensure(at_warm == scaled_lr(&cfg), || format!("cosine_lr at warmup end = {at_warm}"))?;
    ensure(at_end == 0.0, || format!("cosine_lr at total = {at_end}"))?;

    let mut w = Tensor::from_vec(&[1], vec![1.0f64]).unwrap();
    let g = Tensor::from_vec(&[1], vec![0.5f64]).unwrap();
    let scalar = OptimConfig { weight_decay: 0.0, momentum: 0.0, trust_coefficient: 1e-3, ..Default::default() };
    let slot = ParamSlot { name: "w".into(), role: ParamRole::Weight, param: &mut w, grad: &g };
    ok(lars_step(vec![slot], &mut OptimState::new(), &scalar, 1.0))?;
    let w1 = w.data()[0];
    ensure((w1 - 0.999).abs() <= 1e-9, || format!("LARS scalar oracle gave {w1}"))?;

    let (a, b) = (exclusion_run(0.0), exclusion_run(1.5e-6));
    let mut weights_differ = false;
    for (pa, pb) in a.params().iter().zip(b.params()) {
        if pa.role == ParamRole::Weight {
            weights_differ |= pa.tensor != pb.tensor;
        } else {
            ensure(pa.tensor == pb.tensor, || format!("{} moved under weight decay", pa.name))?;
        }
    }
    ensure(weights_differ, || "weight decay had no effect on weights".into())?;
    Ok(format!("scaled_lr {lr}, LARS w' {w1:.12}"))
}

pub fn ema_checks() -> Check {
    let mut rng = Rng::new(14);
    let theta = random_tensor(&mut rng, 3, 4);
    let xi0 = random_tensor(&mut rng, 3, 4);

    let mut frozen = xi0.clone();
    ok(ema_tensor(&mut frozen, &theta, 1.0))?;
    ensure(frozen == xi0, || "tau = 1 moved the target".into())?;
    let mut copied = xi0.clone();
    ok(ema_tensor(&mut copied, &theta, 0.0))?;
    ensure(copied == theta, || "tau = 0 did not copy".into())?;

    let tau = 0.9;
    let mut xi = xi0.clone();
    for _ in 0..10 {
        ok(ema_tensor(&mut xi, &theta, tau))?;
    }
    let closed: Vec<f64> = theta.data().iter().zip(xi0.data()).map(|(t, x)| t + tau.powi(10) * (x - t)).collect();
    let e = rel_err(xi.data(), &closed);
    ensure(e <= 1e-6, || format!("closed form rel err {e:e}"))?;

    let cfg = EmaConfig { tau_base: 0.996, total_steps: 70 };
    let (t0, t1) = (ema_tau(0, &cfg), ema_tau(70, &cfg));
    ensure(t0 == 0.996 && t1 == 1.0, || format!("ema_tau endpoints {t0}, {t1}"))?;
    Ok(format!("closed form rel err {e:.1e}"))
}

pub fn crop_statistics() -> Check {
    let mut rng = Rng::new(15);
    let (h, w) = (224, 224);
    let ratios: Vec<f64> = (0..100_000)
        .map(|_| {
            let r = sample_crop(CropStrategy::Uniform, &mut rng, h, w).unwrap();
            (r.h as f64 / h as f64 + r.w as f64 / w as f64) / 2.0
        })
        .collect();
    let n = ratios.len() as f64;
    let mean = ratios.iter().sum::<f64>() / n;
    let std = (ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ensure(min >= 0.5 && max <= 1.0, || format!("ratio range [{min}, {max}]"))?;
    ensure((0.745..=0.755).contains(&mean), || format!("mean {mean}"))?;
    ensure((0.139..=0.150).contains(&std), || format!("std {std}"))?;

    for _ in 0..20_000 {
        let r = sample_crop(CropStrategy::Inception, &mut rng, h, w).unwrap();
        let (rh, rw) = (r.h as f64, r.w as f64);
        // Either side can be off by half a pixel after rounding.
        let (lo, hi) = ((rw - 0.5) / (rh + 0.5), (rw + 0.5) / (rh - 0.5));
        ensure(hi >= 0.75 && lo <= 4.0 / 3.0, || format!("inception crop {}x{} aspect {}", r.h, r.w, rw / rh))?;
        ensure(r.fits(h, w), || format!("inception crop {r:?} leaves the image"))?;
    }
    Ok(format!("mean {mean:.4} std {std:.4} min {min:.4} max {max:.4}"))
}

pub fn tiny_train_config(dir: &Path) -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 8,
        view_side: 12,
        model: ModelConfig {
            encoder_hidden: vec![32],
            feature_dim: 16,
            projector_hidden: 32,
            projection_dim: 8,
            predictor_hidden: 32,
        },
        data: DataSource::Synthetic { n_per_class: 6, image_side: 16, seed: 2 },
        checkpoint_path: Some(dir.join("model.ckpt")),
        log_path: Some(dir.join("train.jsonl")),
        seed: 5,
        ..Default::default()
    }
}

/// Log lines with the wall-clock field removed.
pub fn log_without_secs(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("secs");
            v
        })
        .collect()
}

fn pretrain_into(dir: &Path) -> Result<(Vec<u8>, Vec<serde_json::Value>), String> {
    let cfg = tiny_train_config(dir);
    let ds = ok(cfg.data.load())?;
    let mut t = ok(Trainer::new(cfg.clone(), ds.len()))?;
    ok(t.run_until(&ds, cfg.epochs))?;
    let bytes = ok(std::fs::read(cfg.checkpoint_path.as_ref().unwrap()))?;
    Ok((bytes, log_without_secs(cfg.log_path.as_ref().unwrap())))
}

pub fn mass_bin() -> &'static str {
    env!("CARGO_BIN_EXE_mass")
}

/// Every file under `dir`, sorted by name, with its contents.
pub fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn augment_into(dir: &Path, threads: usize) -> Result<Vec<(String, Vec<u8>)>, String> {
    let out = ok(Command::new(mass_bin())
        .args(["augment", "--synthetic", "3", "--image-side", "20", "--side", "16", "--views", "2"])
        .args(["--seed", "9", "--threads", &threads.to_string(), "--output"])
        .arg(dir)
        .output())?;
    ensure(out.status.success(), || format!("augment failed: {}", String::from_utf8_lossy(&out.stderr)))?;
    Ok(read_tree(dir))
}

pub fn determinism() -> Check {
    let tmp = ok(tempfile::tempdir())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        ok(std::fs::create_dir(d))?;
    }
    let (ckpt_a, log_a) = pretrain_into(&a)?;
    let (ckpt_b, log_b) = pretrain_into(&b)?;
    ensure(ckpt_a == ckpt_b, || "pretrain checkpoints differ".into())?;
    ensure(log_a == log_b, || "pretrain logs differ".into())?;

    let runs: Vec<_> = [(1, "x1"), (1, "y1"), (3, "x3")]
        .iter()
        .map(|&(threads, name)| augment_into(&tmp.path().join(name), threads))
        .collect::<Result<_, _>>()?;
    ensure(!runs[0].is_empty(), || "augment wrote nothing".into())?;
    ensure(runs[0] == runs[1], || "augment differs between identical runs".into())?;
    ensure(runs[0] == runs[2], || "augment differs between 1 and 3 threads".into())?;
    Ok(format!("checkpoint {} bytes, {} augment files", ckpt_a.len(), runs[0].len()))
}

pub fn checkpoint_round_trip() -> Check {
    let tmp = ok(tempfile::tempdir())?;
    let cfg = tiny_train_config(tmp.path());
    let ds = ok(cfg.data.load())?;
    let path = tmp.path().join("epoch1.ckpt");

    let mut t = ok(Trainer::new(cfg.clone(), ds.len()))?;
    ok(t.run_until(&ds, 1))?;
    ok(t.save(&path))?;
    let loaded = ok(load_checkpoint(&path))?;
    ensure(loaded == t.to_tensor_map(), || "reloaded tensors differ".into())?;
    ensure(ok(encode_checkpoint(&loaded))? == ok(std::fs::read(&path))?, || "re-encoding changed bytes".into())?;

    let mut straight = ok(Trainer::new(cfg.clone(), ds.len()))?;
    ok(straight.run_until(&ds, cfg.epochs))?;
    let mut resumed = ok(Trainer::resume(cfg.clone(), ds.len(), &path))?;
    ensure(resumed.epoch == 1, || format!("resumed at epoch {}", resumed.epoch))?;
    ok(resumed.run_until(&ds, cfg.epochs))?;
    ensure(straight.to_tensor_map() == resumed.to_tensor_map(), || "resumed run diverged".into())?;
    Ok(format!("{} tensors", loaded.len()))
}
