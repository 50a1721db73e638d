use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image::{to_channel, Image};

use super::{blend, check_factor, filter::smooth};

pub fn invert(img: &Image) -> Image {
    img.map_channels(|v| 255 - v)
}

/// Invert every channel value at or above `threshold` (`0..=256`).
pub fn solarize(img: &Image, threshold: u16) -> Result<Image> {
    if threshold > 256 {
        return Err(Error::BadParameter(format!("solarize threshold {threshold}")));
    }
    Ok(img.map_channels(|v| if v as u16 >= threshold { 255 - v } else { v }))
}

/// Add `add` to channel values strictly below `threshold`, saturating.
pub fn solarize_add(img: &Image, add: u8, threshold: u8) -> Result<Image> {
    if add > 110 {
        return Err(Error::BadParameter(format!("solarize_add amount {add}")));
    }
    Ok(img.map_channels(|v| if v < threshold { v.saturating_add(add) } else { v }))
}

/// Keep the top `bits` bits of each channel.
pub fn posterize(img: &Image, bits: u8) -> Result<Image> {
    if !(1..=8).contains(&bits) {
        return Err(Error::BadParameter(format!("posterize bits {bits}")));
    }
    let mask = 0xFFu8 << (8 - bits);
    Ok(img.map_channels(|v| v & mask))
}

fn map_per_channel(img: &Image, luts: &[[u8; 256]; 3]) -> Image {
    let mut out = img.clone();
    for px in out.pixels_mut().chunks_exact_mut(3) {
        for c in 0..3 {
            px[c] = luts[c][px[c] as usize];
        }
    }
    out
}

fn identity_lut() -> [u8; 256] {
    std::array::from_fn(|i| i as u8)
}

/// Stretch each channel so its minimum maps to 0 and its maximum to 255.
pub fn autocontrast(img: &Image) -> Image {
    let mut lo = [255u8; 3];
    let mut hi = [0u8; 3];
    for px in img.pixels().chunks_exact(3) {
        for c in 0..3 {
            lo[c] = lo[c].min(px[c]);
            hi[c] = hi[c].max(px[c]);
        }
    }
    let luts = std::array::from_fn(|c| {
        let (m, big_m) = (lo[c] as f64, hi[c] as f64);
        if hi[c] == lo[c] {
            return identity_lut();
        }
        std::array::from_fn(|v| {
            if (v as u8) < lo[c] || (v as u8) > hi[c] {
                return v as u8;
            }
            to_channel((v as f64 - m) * 255.0 / (big_m - m))
        })
    });
    map_per_channel(img, &luts)
}

/// Integer histogram-equalization table for one channel histogram.
pub fn equalize_lut(hist: &[u64; 256]) -> [u8; 256] {
    let last_nonzero = hist.iter().rposition(|&h| h > 0);
    let nonzero = hist.iter().filter(|&&h| h > 0).count();
    let Some(last) = last_nonzero else { return identity_lut() };
    if nonzero <= 1 {
        return identity_lut();
    }
    let total: u64 = hist.iter().sum();
    let step = (total - hist[last]) / 255;
    if step == 0 {
        return identity_lut();
    }
    let mut lut = [0u8; 256];
    let mut n = step / 2;
    for (i, slot) in lut.iter_mut().enumerate() {
        *slot = (n / step).min(255) as u8;
        n += hist[i];
    }
    lut
}

pub fn equalize(img: &Image) -> Image {
    let mut hists = [[0u64; 256]; 3];
    for px in img.pixels().chunks_exact(3) {
        for c in 0..3 {
            hists[c][px[c] as usize] += 1;
        }
    }
    let luts = std::array::from_fn(|c| equalize_lut(&hists[c]));
    map_per_channel(img, &luts)
}

/// ITU-R 601 luma before rounding.
#[inline]
pub fn luma(rgb: [u8; 3]) -> f64 {
    0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64
}

pub fn color_drop(img: &Image) -> Image {
    let mut out = img.clone();
    for px in out.pixels_mut().chunks_exact_mut(3) {
        let l = to_channel(luma([px[0], px[1], px[2]]));
        px.fill(l);
    }
    out
}

/// Degenerate image that [`adjust`] blends toward (factor 0) or away from
/// (factor > 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjustVariant {
    Sharpness,
    Saturation,
    Contrast,
    Brightness,
}

impl AdjustVariant {
    pub fn name(self) -> &'static str {
        match self {
            AdjustVariant::Sharpness => "sharpness",
            AdjustVariant::Saturation => "saturation",
            AdjustVariant::Contrast => "contrast",
            AdjustVariant::Brightness => "brightness",
        }
    }

    pub fn from_index(i: u32) -> Result<Self> {
        match i {
            0 => Ok(AdjustVariant::Sharpness),
            1 => Ok(AdjustVariant::Saturation),
            2 => Ok(AdjustVariant::Contrast),
            3 => Ok(AdjustVariant::Brightness),
            _ => Err(Error::BadVariant(i.to_string())),
        }
    }
}

impl fmt::Display for AdjustVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AdjustVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [AdjustVariant::Sharpness, AdjustVariant::Saturation, AdjustVariant::Contrast, AdjustVariant::Brightness]
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::BadVariant(s.to_string()))
    }
}

pub fn adjust(variant: AdjustVariant, img: &Image, factor: f64) -> Result<Image> {
    check_factor(factor)?;
    let base = match variant {
        AdjustVariant::Sharpness => smooth(img),
        AdjustVariant::Saturation => color_drop(img),
        AdjustVariant::Contrast => {
            let n = (img.height() * img.width()) as f64;
            let sum: f64 = img.pixels().chunks_exact(3).map(|px| to_channel(luma([px[0], px[1], px[2]])) as f64).sum();
            Image::filled(img.height(), img.width(), [to_channel(sum / n); 3])
        }
        AdjustVariant::Brightness => Image::filled(img.height(), img.width(), [0; 3]),
    };
    blend(&base, img, factor)
}

/// Hexcone RGB to HSV, all components in `[0, 1]`.
pub(crate) fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    (h, s, max)
}

pub(crate) fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match (sector as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Rotate hue by `delta` turns (`-0.5..=0.5`).
pub fn hue_shift(img: &Image, delta: f64) -> Result<Image> {
    if !(-0.5..=0.5).contains(&delta) {
        return Err(Error::BadParameter(format!("hue delta {delta}")));
    }
    let mut out = img.clone();
    for px in out.pixels_mut().chunks_exact_mut(3) {
        let (h, s, v) = rgb_to_hsv(px[0] as f64 / 255.0, px[1] as f64 / 255.0, px[2] as f64 / 255.0);
        let h = (h + delta).rem_euclid(1.0);
        let (r, g, b) = hsv_to_rgb(h, s, v);
        px[0] = to_channel(r * 255.0);
        px[1] = to_channel(g * 255.0);
        px[2] = to_channel(b * 255.0);
    }
    Ok(out)
}
