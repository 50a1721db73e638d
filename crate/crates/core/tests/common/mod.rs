//! Independent reference implementations shared by the integration suites.
#![allow(dead_code)]

pub mod criteria;

use mass_core::image::Image;
use mass_core::nn::{LayerSpec, NetSpec, Network};
use mass_core::objective::{cosine_loss, softmax_cross_entropy, symmetrized_loss};
use mass_core::rng::Rng;
use mass_core::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-6;

pub fn random_image(rng: &mut Rng, h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |_, _| [rng.range(256) as u8, rng.range(256) as u8, rng.range(256) as u8])
}

pub fn random_tensor(rng: &mut Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_vec(&[rows, cols], (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

/// Per-channel histogram equalization, written straight from the integer
/// recurrence with no shared LUT helper.
pub fn naive_equalize(img: &Image) -> Image {
    let mut out = img.clone();
    for c in 0..3 {
        let values: Vec<u8> = img.pixels().iter().skip(c).step_by(3).copied().collect();
        let mut hist = vec![0u64; 256];
        for &v in &values {
            hist[v as usize] += 1;
        }
        let used: Vec<usize> = (0..256).filter(|&i| hist[i] > 0).collect();
        if used.len() <= 1 {
            continue;
        }
        let last = *used.last().unwrap();
        let step = (values.len() as u64 - hist[last]) / 255;
        if step == 0 {
            continue;
        }
        let map = |v: u8| -> u8 {
            // Running count up to but excluding bin v.
            let below: u64 = hist[..v as usize].iter().sum();
            ((step / 2 + below) / step).min(255) as u8
        };
        for (i, px) in out.pixels_mut().chunks_exact_mut(3).enumerate() {
            px[c] = map(values[i]);
        }
    }
    out
}

pub fn naive_autocontrast(img: &Image) -> Image {
    let mut out = img.clone();
    for c in 0..3 {
        let values: Vec<u8> = img.pixels().iter().skip(c).step_by(3).copied().collect();
        let lo = *values.iter().min().unwrap() as f64;
        let hi = *values.iter().max().unwrap() as f64;
        if lo == hi {
            continue;
        }
        for (i, px) in out.pixels_mut().chunks_exact_mut(3).enumerate() {
            let v = (values[i] as f64 - lo) * 255.0 / (hi - lo);
            px[c] = v.clamp(0.0, 255.0).round() as u8;
        }
    }
    out
}

/// Horizontal shift by `amount * width` with bilinear sampling and a gray
/// fill for samples off the image.
pub fn brute_translate_x(img: &Image, amount: f64) -> Image {
    let (h, w) = (img.height(), img.width());
    Image::from_fn(h, w, |y, x| {
        let sx = x as f64 - amount * w as f64;
        let x0 = sx.floor();
        let fx = sx - x0;
        let sample = |xi: f64, c: usize| -> f64 {
            if xi < 0.0 || xi > (w - 1) as f64 {
                128.0
            } else {
                img.get(y, xi as usize)[c] as f64
            }
        };
        let mut px = [0u8; 3];
        for (c, p) in px.iter_mut().enumerate() {
            let v = sample(x0, c) * (1.0 - fx) + sample(x0 + 1.0, c) * fx;
            *p = v.clamp(0.0, 255.0).round() as u8;
        }
        px
    })
}

/// Norm-wise relative error between analytic and numeric gradients. The
/// denominator is floored at 1e-3: a linear bias feeding batch norm has an
/// identically zero gradient, and finite differences leave ~1e-11 of
/// rounding noise there.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / scale(analytic).max(scale(numeric)).max(1e-3)
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn numeric_grad(x: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + FD_STEP;
            let up = f(&probe);
            probe.data_mut()[i] = orig - FD_STEP;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Worst relative error over the input and every parameter of `spec`, with
/// the scalar objective `sum(Y * R)` for a fixed random `R`.
pub fn network_grad_error(spec: &NetSpec, batch: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let (din, dout) = spec.dims().unwrap();
    let mut net = Network::<f64>::init(spec, seed).unwrap();
    // Non-trivial affine parameters so their gradients are exercised.
    for p in net.params_mut() {
        for v in p.tensor.data_mut() {
            *v += rng.uniform(-0.3, 0.3);
        }
    }
    let x = random_tensor(&mut rng, batch, din);
    let r = random_tensor(&mut rng, batch, dout);
    let objective = |n: &Network<f64>, x: &Tensor<f64>| dot(&n.clone().forward_train(x).unwrap().0, &r);

    let (_, trace) = net.clone().forward_train(&x).unwrap();
    let (dx, grads) = net.backward(&trace, &r).unwrap();
    let mut worst = rel_err(dx.data(), &numeric_grad(&x, |xp| objective(&net, xp)));
    for (i, g) in grads.tensors.iter().enumerate() {
        let base = net.params()[i].tensor.clone();
        let numeric = numeric_grad(&base, |pp| {
            let mut n = net.clone();
            *n.params_mut()[i].tensor = pp.clone();
            objective(&n, &x)
        });
        worst = worst.max(rel_err(g.data(), &numeric));
    }
    worst
}

pub fn layer_specs() -> Vec<(&'static str, NetSpec)> {
    vec![
        ("linear", NetSpec::new(vec![LayerSpec::linear(5, 3)]).unwrap()),
        ("linear_no_bias", NetSpec::new(vec![LayerSpec::Linear { input: 4, output: 3, bias: false }]).unwrap()),
        ("batch_norm", NetSpec::new(vec![LayerSpec::batch_norm(4)]).unwrap()),
        ("relu", NetSpec::new(vec![LayerSpec::linear(4, 6), LayerSpec::Relu]).unwrap()),
        ("mlp", NetSpec::mlp(&[6, 8, 7, 3]).unwrap()),
    ]
}

pub fn cosine_grad_error(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let p = random_tensor(&mut rng, 5, 6);
    let z = random_tensor(&mut rng, 5, 6);
    let (_, g) = cosine_loss(&p, &z).unwrap();
    rel_err(g.data(), &numeric_grad(&p, |pp| cosine_loss(pp, &z).unwrap().0))
}

pub fn symmetrized_grad_error(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let [p1, z2, p2, z1] = std::array::from_fn(|_| random_tensor(&mut rng, 4, 5));
    let (_, g1, g2) = symmetrized_loss(&p1, &z2, &p2, &z1).unwrap();
    let n1 = numeric_grad(&p1, |p| symmetrized_loss(p, &z2, &p2, &z1).unwrap().0);
    let n2 = numeric_grad(&p2, |p| symmetrized_loss(&p1, &z2, p, &z1).unwrap().0);
    rel_err(g1.data(), &n1).max(rel_err(g2.data(), &n2))
}

pub fn cross_entropy_grad_error(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let logits = random_tensor(&mut rng, 6, 5);
    let labels: Vec<usize> = (0..6).map(|_| rng.range(5)).collect();
    let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
    rel_err(g.data(), &numeric_grad(&logits, |l| softmax_cross_entropy(l, &labels).unwrap().0))
}
