use crate::error::{Error, Result};
use crate::image::{to_channel, Image};

/// 3x3 smoothing with kernel `[[1,1,1],[1,5,1],[1,1,1]] / 13`. Border pixels
/// are copied unchanged.
pub fn smooth(img: &Image) -> Image {
    let (h, w) = (img.height(), img.width());
    let mut out = img.clone();
    if h < 3 || w < 3 {
        return out;
    }
    let src = img.pixels();
    let dst = out.pixels_mut();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            for c in 0..3 {
                let mut acc = 0u32;
                for dy in 0..3 {
                    for dx in 0..3 {
                        let weight = if dy == 1 && dx == 1 { 5 } else { 1 };
                        acc += weight * src[((y + dy - 1) * w + x + dx - 1) * 3 + c] as u32;
                    }
                }
                dst[(y * w + x) * 3 + c] = to_channel(acc as f64 / 13.0);
            }
        }
    }
    out
}

/// Normalized taps `w[-r..=r]` with `r = ceil(3 sigma)`.
pub fn gaussian_weights(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Symmetric reflection: -1 -> 0, n -> n - 1.
#[inline]
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Separable Gaussian blur before the final rounding, one `f64` per channel.
pub fn gaussian_blur_unrounded(img: &Image, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::BadParameter(format!("blur sigma {sigma}")));
    }
    let (h, w) = (img.height(), img.width());
    let taps = gaussian_weights(sigma);
    let r = (taps.len() / 2) as i64;
    let src = img.pixels();

    let mut horiz = vec![0.0f64; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (t, &wt) in taps.iter().enumerate() {
                let sx = reflect(x as i64 + t as i64 - r, w);
                let base = (y * w + sx) * 3;
                for c in 0..3 {
                    acc[c] += wt * src[base + c] as f64;
                }
            }
            horiz[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&acc);
        }
    }
    let mut out = vec![0.0f64; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (t, &wt) in taps.iter().enumerate() {
                let sy = reflect(y as i64 + t as i64 - r, h);
                let base = (sy * w + x) * 3;
                for c in 0..3 {
                    acc[c] += wt * horiz[base + c];
                }
            }
            out[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&acc);
        }
    }
    Ok(out)
}

pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    let values = gaussian_blur_unrounded(img, sigma)?;
    Image::new(img.height(), img.width(), values.into_iter().map(to_channel).collect())
}
