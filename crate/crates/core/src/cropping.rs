//! Crop samplers and the two-view builder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::policy::{apply_policy, PolicySource};
use crate::rng::Rng;
use crate::transforms::resize_bilinear;

pub const UNIFORM_RATIO_RANGE: (f64, f64) = (0.5, 1.0);
pub const INCEPTION_AREA_RANGE: (f64, f64) = (0.08, 1.0);
pub const INCEPTION_ASPECT_RANGE: (f64, f64) = (3.0 / 4.0, 4.0 / 3.0);
pub const INCEPTION_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x0: usize,
    pub y0: usize,
    pub h: usize,
    pub w: usize,
}

impl CropRect {
    pub fn full(height: usize, width: usize) -> Self {
        Self { x0: 0, y0: 0, h: height, w: width }
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.h >= 1 && self.w >= 1 && self.x0 + self.w <= width && self.y0 + self.h <= height
    }

    pub fn extract(&self, img: &Image) -> Result<Image> {
        img.crop(self.y0, self.x0, self.h, self.w)
    }
}

/// How each view's crop region is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CropStrategy {
    /// Linear ratio `r ~ U[0.5, 1]` applied to both sides.
    Uniform,
    /// Area fraction and log-aspect sampling.
    Inception,
    /// Always the whole image.
    Full,
}

impl std::str::FromStr for CropStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(CropStrategy::Uniform),
            "inception" => Ok(CropStrategy::Inception),
            "full" => Ok(CropStrategy::Full),
            _ => Err(Error::Config(format!("unknown crop strategy {s:?}"))),
        }
    }
}

fn check_size(height: usize, width: usize) -> Result<()> {
    if height < 2 || width < 2 {
        return Err(Error::ImageTooSmall { height, width });
    }
    Ok(())
}

pub fn sample_uniform_ratio(rng: &mut Rng) -> f64 {
    rng.uniform(UNIFORM_RATIO_RANGE.0, UNIFORM_RATIO_RANGE.1)
}

/// Aspect-preserving crop at linear scale `ratio` with a uniform offset.
pub fn uniform_crop_with_ratio(ratio: f64, rng: &mut Rng, height: usize, width: usize) -> Result<CropRect> {
    check_size(height, width)?;
    let h = ((ratio * height as f64).round() as usize).clamp(1, height);
    let w = ((ratio * width as f64).round() as usize).clamp(1, width);
    let x0 = rng.range_inclusive(0, width - w);
    let y0 = rng.range_inclusive(0, height - h);
    Ok(CropRect { x0, y0, h, w })
}

pub fn sample_uniform_crop(rng: &mut Rng, height: usize, width: usize) -> Result<CropRect> {
    check_size(height, width)?;
    let r = sample_uniform_ratio(rng);
    uniform_crop_with_ratio(r, rng, height, width)
}

pub fn sample_inception_crop(rng: &mut Rng, height: usize, width: usize, attempts: usize) -> Result<CropRect> {
    check_size(height, width)?;
    let area = (height * width) as f64;
    let (log_lo, log_hi) = (INCEPTION_ASPECT_RANGE.0.ln(), INCEPTION_ASPECT_RANGE.1.ln());
    for _ in 0..attempts {
        let a = rng.uniform(INCEPTION_AREA_RANGE.0, INCEPTION_AREA_RANGE.1);
        let aspect = rng.uniform(log_lo, log_hi).exp();
        let w = (a * area * aspect).sqrt().round() as usize;
        let h = (a * area / aspect).sqrt().round() as usize;
        if (1..=width).contains(&w) && (1..=height).contains(&h) {
            let x0 = rng.range_inclusive(0, width - w);
            let y0 = rng.range_inclusive(0, height - h);
            return Ok(CropRect { x0, y0, h, w });
        }
    }
    let side = height.min(width);
    Ok(CropRect { x0: (width - side) / 2, y0: (height - side) / 2, h: side, w: side })
}

pub fn sample_crop(strategy: CropStrategy, rng: &mut Rng, height: usize, width: usize) -> Result<CropRect> {
    match strategy {
        CropStrategy::Uniform => sample_uniform_crop(rng, height, width),
        CropStrategy::Inception => sample_inception_crop(rng, height, width, INCEPTION_ATTEMPTS),
        CropStrategy::Full => Ok(CropRect::full(height, width)),
    }
}

/// Crop, resize to `out_side` square, then apply a freshly sampled policy.
pub fn make_view(
    img: &Image,
    strategy: CropStrategy,
    policy: &PolicySource,
    out_side: usize,
    rng: &mut Rng,
) -> Result<Image> {
    if out_side < 8 {
        return Err(Error::InvalidSize(format!("view side {out_side} < 8")));
    }
    let rect = sample_crop(strategy, rng, img.height(), img.width())?;
    let view = resize_bilinear(&rect.extract(img)?, out_side, out_side)?;
    let ops = policy.sample(rng);
    apply_policy(&view, &ops, rng)
}

pub fn make_views(
    img: &Image,
    count: usize,
    strategy: CropStrategy,
    policy: &PolicySource,
    out_side: usize,
    rng: &mut Rng,
) -> Result<Vec<Image>> {
    (0..count).map(|_| make_view(img, strategy, policy, out_side, rng)).collect()
}

pub fn make_two_views(
    img: &Image,
    strategy: CropStrategy,
    policy: &PolicySource,
    out_side: usize,
    rng: &mut Rng,
) -> Result<(Image, Image)> {
    let first = make_view(img, strategy, policy, out_side, rng)?;
    let second = make_view(img, strategy, policy, out_side, rng)?;
    Ok((first, second))
}
