use crate::error::{Error, Result};
use crate::image::{to_channel, Image};

use super::TransformKind;

/// Color contributed by samples that land outside the source image.
pub const AFFINE_FILL: [u8; 3] = [128, 128, 128];

/// Affine warp by inverse mapping with bilinear sampling. Corners outside the
/// source contribute [`AFFINE_FILL`].
pub fn affine_sample(img: &Image, kind: TransformKind, amount: f64) -> Result<Image> {
    if !kind.is_geometric() {
        return Err(Error::BadKind(kind.name().to_string()));
    }
    if amount.is_nan() || amount.abs() > 1.0 {
        return Err(Error::BadParameter(format!("{kind} amount {amount}")));
    }
    let (h, w) = (img.height(), img.width());
    let (wf, hf) = (w as f64, h as f64);
    let src = img.pixels();
    let corner = |yy: i64, xx: i64, c: usize| -> f64 {
        if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
            AFFINE_FILL[c] as f64
        } else {
            src[(yy as usize * w + xx as usize) * 3 + c] as f64
        }
    };
    let mut out = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let (sx, sy) = match kind {
                TransformKind::ShearX => (xf + amount * yf, yf),
                TransformKind::ShearY => (xf, yf + amount * xf),
                TransformKind::TranslateX => (xf - amount * wf, yf),
                _ => (xf, yf - amount * hf),
            };
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            for c in 0..3 {
                let top = corner(y0, x0, c) * (1.0 - fx) + corner(y0, x0 + 1, c) * fx;
                let bottom = corner(y0 + 1, x0, c) * (1.0 - fx) + corner(y0 + 1, x0 + 1, c) * fx;
                out.push(to_channel(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    Image::new(h, w, out)
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidSize(format!("resize to {out_h}x{out_w}")));
    }
    let (h, w) = (img.height(), img.width());
    let axis = |n_out: usize, n_in: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = axis(out_w, w);
    let ys = axis(out_h, h);
    let src = img.pixels();
    let mut out = Vec::with_capacity(out_h * out_w * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let p = |yy: usize, xx: usize| src[(yy * w + xx) * 3 + c] as f64;
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.push(to_channel(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    Image::new(out_h, out_w, out)
}
