//! Pixel kernels behind the 18-op augmentation search space.
//!
//! Channel arithmetic runs in `f64`; results are clamped to `[0, 255]` and
//! rounded half away from zero.

mod color;
mod filter;
mod geometric;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{to_channel, Image};

pub use color::{
    adjust, autocontrast, color_drop, equalize, equalize_lut, hue_shift, invert, luma, posterize, solarize,
    solarize_add, AdjustVariant,
};
pub use filter::{gaussian_blur, gaussian_blur_unrounded, gaussian_weights, smooth};
pub use geometric::{affine_sample, resize_bilinear, AFFINE_FILL};

/// The extended RandAugment search space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TransformKind {
    AutoContrast,
    Equalize,
    Invert,
    Posterize,
    Solarize,
    Sharpness,
    Color,
    SolarizeAdd,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
    RandBrightness,
    RandContrast,
    RandSaturation,
    RandHue,
    RandBlur,
    ColorDrop,
}

impl TransformKind {
    pub const ALL: [TransformKind; 18] = [
        TransformKind::AutoContrast,
        TransformKind::Equalize,
        TransformKind::Invert,
        TransformKind::Posterize,
        TransformKind::Solarize,
        TransformKind::Sharpness,
        TransformKind::Color,
        TransformKind::SolarizeAdd,
        TransformKind::ShearX,
        TransformKind::ShearY,
        TransformKind::TranslateX,
        TransformKind::TranslateY,
        TransformKind::RandBrightness,
        TransformKind::RandContrast,
        TransformKind::RandSaturation,
        TransformKind::RandHue,
        TransformKind::RandBlur,
        TransformKind::ColorDrop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::AutoContrast => "AutoContrast",
            TransformKind::Equalize => "Equalize",
            TransformKind::Invert => "Invert",
            TransformKind::Posterize => "Posterize",
            TransformKind::Solarize => "Solarize",
            TransformKind::Sharpness => "Sharpness",
            TransformKind::Color => "Color",
            TransformKind::SolarizeAdd => "SolarizeAdd",
            TransformKind::ShearX => "ShearX",
            TransformKind::ShearY => "ShearY",
            TransformKind::TranslateX => "TranslateX",
            TransformKind::TranslateY => "TranslateY",
            TransformKind::RandBrightness => "RandBrightness",
            TransformKind::RandContrast => "RandContrast",
            TransformKind::RandSaturation => "RandSaturation",
            TransformKind::RandHue => "RandHue",
            TransformKind::RandBlur => "RandBlur",
            TransformKind::ColorDrop => "ColorDrop",
        }
    }

    /// Position in [`TransformKind::ALL`]; also the FFI discriminant.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_geometric(self) -> bool {
        matches!(
            self,
            TransformKind::ShearX | TransformKind::ShearY | TransformKind::TranslateX | TransformKind::TranslateY
        )
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == s).ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}

/// Per-channel `a + factor * (b - a)`.
pub fn blend(a: &Image, b: &Image, factor: f64) -> Result<Image> {
    if !a.same_dims(b) {
        return Err(Error::ShapeMismatch(format!(
            "blend {}x{} with {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    check_factor(factor)?;
    let pixels = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let x = x as f64;
            to_channel(x + factor * (y as f64 - x))
        })
        .collect();
    Image::new(a.height(), a.width(), pixels)
}

fn check_factor(factor: f64) -> Result<()> {
    if !(0.0..=2.0).contains(&factor) {
        return Err(Error::BadParameter(format!("blend factor {factor} outside [0, 2]")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eighteen_kinds_round_trip_names() {
        assert_eq!(TransformKind::ALL.len(), 18);
        for (i, k) in TransformKind::ALL.iter().enumerate() {
            assert_eq!(k.index(), i);
            assert_eq!(k.name().parse::<TransformKind>().unwrap(), *k);
        }
        assert!(matches!("Rotate".parse::<TransformKind>(), Err(Error::UnknownKind(_))));
    }

    #[test]
    fn blend_endpoints_and_midpoint() {
        let a = Image::filled(2, 2, [0, 10, 255]);
        let b = Image::filled(2, 2, [200, 20, 0]);
        assert_eq!(blend(&a, &b, 0.0).unwrap(), a);
        assert_eq!(blend(&a, &b, 1.0).unwrap(), b);
        assert_eq!(blend(&a, &b, 0.5).unwrap().get(0, 0), [100, 15, 128]);
        // Extrapolation clamps.
        assert_eq!(blend(&a, &b, 2.0).unwrap().get(1, 1), [255, 30, 0]);
    }

    #[test]
    fn blend_rejects_mismatch() {
        let a = Image::filled(2, 2, [0; 3]);
        let b = Image::filled(2, 3, [0; 3]);
        assert!(matches!(blend(&a, &b, 0.5), Err(Error::ShapeMismatch(_))));
        assert!(matches!(blend(&a, &a, 2.5), Err(Error::BadParameter(_))));
    }
}
