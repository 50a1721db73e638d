//! RandAugment-style policy engine over the 18-op search space, plus loading
//! of pre-searched sub-policy files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;
use crate::transforms::{self, AdjustVariant, TransformKind};

pub const MAX_MAGNITUDE: f64 = 10.0;

/// One step of a policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyOp {
    pub kind: TransformKind,
    pub magnitude: f64,
    pub probability: f64,
}

impl PolicyOp {
    pub fn new(kind: TransformKind, magnitude: f64, probability: f64) -> Result<Self> {
        check_magnitude(magnitude)?;
        if !(0.0..=1.0).contains(&probability) {
            return Err(Error::OutOfRange("probability".into()));
        }
        Ok(Self { kind, magnitude, probability })
    }

    /// Always-applied op, as produced by RandAugment sampling.
    pub fn always(kind: TransformKind, magnitude: f64) -> Self {
        Self { kind, magnitude, probability: 1.0 }
    }
}

fn check_magnitude(m: f64) -> Result<()> {
    if !(0.0..=MAX_MAGNITUDE).contains(&m) {
        return Err(Error::BadMagnitude(m));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandAugmentConfig {
    pub n_ops: usize,
    pub magnitude: f64,
    pub search_space: Vec<TransformKind>,
}

impl Default for RandAugmentConfig {
    fn default() -> Self {
        Self { n_ops: 2, magnitude: 9.0, search_space: TransformKind::ALL.to_vec() }
    }
}

impl RandAugmentConfig {
    pub fn new(n_ops: usize, magnitude: f64) -> Result<Self> {
        let cfg = Self { n_ops, magnitude, ..Self::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_ops == 0 {
            return Err(Error::Config("RandAugment needs at least one op".into()));
        }
        check_magnitude(self.magnitude)?;
        if self.search_space.is_empty() {
            return Err(Error::Config("empty search space".into()));
        }
        let mut seen = self.search_space.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.search_space.len() {
            return Err(Error::Config("duplicate kinds in search space".into()));
        }
        Ok(())
    }
}

/// A transform with its concrete parameters resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResolvedOp {
    AutoContrast,
    Equalize,
    Invert,
    ColorDrop,
    Posterize { bits: u8 },
    Solarize { threshold: u16 },
    SolarizeAdd { add: u8 },
    Adjust { variant: AdjustVariant, factor: f64 },
    Hue { delta: f64 },
    Blur { sigma: f64 },
    Affine { kind: TransformKind, amount: f64 },
}

impl ResolvedOp {
    pub fn apply(&self, img: &Image) -> Result<Image> {
        match *self {
            ResolvedOp::AutoContrast => Ok(transforms::autocontrast(img)),
            ResolvedOp::Equalize => Ok(transforms::equalize(img)),
            ResolvedOp::Invert => Ok(transforms::invert(img)),
            ResolvedOp::ColorDrop => Ok(transforms::color_drop(img)),
            ResolvedOp::Posterize { bits } => transforms::posterize(img, bits),
            ResolvedOp::Solarize { threshold } => transforms::solarize(img, threshold),
            ResolvedOp::SolarizeAdd { add } => transforms::solarize_add(img, add, 128),
            ResolvedOp::Adjust { variant, factor } => transforms::adjust(variant, img, factor),
            ResolvedOp::Hue { delta } => transforms::hue_shift(img, delta),
            ResolvedOp::Blur { sigma } => transforms::gaussian_blur(img, sigma),
            ResolvedOp::Affine { kind, amount } => transforms::affine_sample(img, kind, amount),
        }
    }
}

fn signed(rng: &mut Rng, v: f64) -> f64 {
    if rng.coin() {
        -v
    } else {
        v
    }
}

/// Map a magnitude in `[0, 10]` to concrete parameters. Signs are fair
/// coins; stochastic factors are uniform draws whose width grows with `M`.
pub fn magnitude_to_params(kind: TransformKind, magnitude: f64, rng: &mut Rng) -> Result<ResolvedOp> {
    check_magnitude(magnitude)?;
    let lam = magnitude / MAX_MAGNITUDE;
    let random_factor = |rng: &mut Rng| rng.uniform(1.0 - 0.8 * lam, 1.0 + 0.8 * lam).max(0.0);
    Ok(match kind {
        TransformKind::AutoContrast => ResolvedOp::AutoContrast,
        TransformKind::Equalize => ResolvedOp::Equalize,
        TransformKind::Invert => ResolvedOp::Invert,
        TransformKind::ColorDrop => ResolvedOp::ColorDrop,
        TransformKind::Posterize => ResolvedOp::Posterize { bits: 8 - (4.0 * lam).round() as u8 },
        TransformKind::Solarize => ResolvedOp::Solarize { threshold: 256 - (256.0 * lam).round() as u16 },
        TransformKind::SolarizeAdd => ResolvedOp::SolarizeAdd { add: (110.0 * lam).round() as u8 },
        TransformKind::Sharpness => {
            ResolvedOp::Adjust { variant: AdjustVariant::Sharpness, factor: 1.0 + signed(rng, 0.9 * lam) }
        }
        TransformKind::Color => {
            ResolvedOp::Adjust { variant: AdjustVariant::Saturation, factor: 1.0 + signed(rng, 0.9 * lam) }
        }
        TransformKind::RandBrightness => {
            ResolvedOp::Adjust { variant: AdjustVariant::Brightness, factor: random_factor(rng) }
        }
        TransformKind::RandContrast => {
            ResolvedOp::Adjust { variant: AdjustVariant::Contrast, factor: random_factor(rng) }
        }
        TransformKind::RandSaturation => {
            ResolvedOp::Adjust { variant: AdjustVariant::Saturation, factor: random_factor(rng) }
        }
        TransformKind::RandHue => ResolvedOp::Hue { delta: rng.uniform(-0.1 * lam, 0.1 * lam) },
        TransformKind::RandBlur => ResolvedOp::Blur { sigma: rng.uniform(0.1, 0.1 + 1.9 * lam) },
        TransformKind::ShearX | TransformKind::ShearY | TransformKind::TranslateX | TransformKind::TranslateY => {
            ResolvedOp::Affine { kind, amount: signed(rng, 0.3 * lam) }
        }
    })
}

/// `N` uniform draws with replacement from the search space.
pub fn sample_randaugment(cfg: &RandAugmentConfig, rng: &mut Rng) -> Vec<PolicyOp> {
    (0..cfg.n_ops)
        .map(|_| PolicyOp::always(cfg.search_space[rng.range(cfg.search_space.len())], cfg.magnitude))
        .collect()
}

/// Apply `ops` in order. Exactly one skip draw is consumed per op; parameter
/// draws happen only for ops that fire.
pub fn apply_policy(img: &Image, ops: &[PolicyOp], rng: &mut Rng) -> Result<Image> {
    let mut cur = img.clone();
    for op in ops {
        let u = rng.next_f64();
        if u < op.probability {
            cur = magnitude_to_params(op.kind, op.magnitude, rng)?.apply(&cur)?;
        }
    }
    Ok(cur)
}

pub type SubPolicy = Vec<PolicyOp>;

/// Where each view's augmentation policy comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySource {
    /// No augmentation.
    Identity,
    /// Fresh RandAugment sample per view.
    RandAugment(RandAugmentConfig),
    /// One sub-policy chosen uniformly per view.
    SubPolicies(Vec<SubPolicy>),
}

impl PolicySource {
    pub fn sample(&self, rng: &mut Rng) -> Vec<PolicyOp> {
        match self {
            PolicySource::Identity => Vec::new(),
            PolicySource::RandAugment(cfg) => sample_randaugment(cfg, rng),
            PolicySource::SubPolicies(subs) if subs.is_empty() => Vec::new(),
            PolicySource::SubPolicies(subs) => subs[rng.range(subs.len())].clone(),
        }
    }

    pub fn describe(&self) -> serde_json::Value {
        match self {
            PolicySource::Identity => serde_json::json!({ "type": "identity" }),
            PolicySource::RandAugment(cfg) => serde_json::json!({
                "type": "randaugment",
                "n": cfg.n_ops,
                "m": cfg.magnitude,
                "search_space": cfg.search_space.iter().map(|k| k.name()).collect::<Vec<_>>(),
            }),
            PolicySource::SubPolicies(subs) => serde_json::json!({
                "type": "subpolicies",
                "count": subs.len(),
            }),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    subpolicies: Vec<Vec<PolicyFileOp>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFileOp {
    kind: String,
    prob: f64,
    magnitude: f64,
}

/// Parse `{"subpolicies": [[{"kind", "prob", "magnitude"}, ...], ...]}`.
pub fn parse_policy(text: &str) -> Result<Vec<SubPolicy>> {
    let file: PolicyFile =
        serde_json::from_str(text).map_err(|e| Error::ParseError { line: e.line(), msg: e.to_string() })?;
    file.subpolicies
        .into_iter()
        .enumerate()
        .map(|(i, sub)| {
            sub.into_iter()
                .enumerate()
                .map(|(j, op)| {
                    let kind: TransformKind = op.kind.parse()?;
                    if !(0.0..=1.0).contains(&op.prob) {
                        return Err(Error::OutOfRange(format!("subpolicies[{i}][{j}].prob")));
                    }
                    if !(0.0..=MAX_MAGNITUDE).contains(&op.magnitude) {
                        return Err(Error::OutOfRange(format!("subpolicies[{i}][{j}].magnitude")));
                    }
                    Ok(PolicyOp { kind, magnitude: op.magnitude, probability: op.prob })
                })
                .collect()
        })
        .collect()
}

pub fn load_policy_file(path: impl AsRef<Path>) -> Result<Vec<SubPolicy>> {
    parse_policy(&std::fs::read_to_string(path)?)
}
