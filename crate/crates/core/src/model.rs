//! The two-branch model: online encoder, projector and predictor, plus the
//! target encoder and projector that trail them by moving average.

use serde::{Deserialize, Serialize};

use crate::checkpoint::TensorMap;
use crate::error::{Error, Result};
use crate::nn::{NetSpec, Network};
use crate::rng::derive_seed;
use crate::tensor::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub projector_hidden: usize,
    pub projection_dim: usize,
    pub predictor_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder_hidden: vec![512, 512],
            feature_dim: 128,
            projector_hidden: 256,
            projection_dim: 64,
            predictor_hidden: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetSpecs {
    pub encoder: NetSpec,
    pub projector: NetSpec,
    pub predictor: NetSpec,
}

/// Encoder input is a flattened `view_side x view_side x 3` image.
pub fn build_default_nets(view_side: usize, cfg: &ModelConfig) -> Result<NetSpecs> {
    if view_side == 0 || cfg.feature_dim == 0 || cfg.projection_dim == 0 {
        return Err(Error::Config("model widths must be positive".into()));
    }
    let mut widths = vec![view_side * view_side * 3];
    widths.extend(&cfg.encoder_hidden);
    widths.push(cfg.feature_dim);
    Ok(NetSpecs {
        encoder: NetSpec::mlp(&widths)?,
        projector: NetSpec::mlp(&[cfg.feature_dim, cfg.projector_hidden, cfg.projection_dim])?,
        predictor: NetSpec::mlp(&[cfg.projection_dim, cfg.predictor_hidden, cfg.projection_dim])?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    pub encoder: Network<T>,
    pub projector: Network<T>,
    pub predictor: Network<T>,
    pub target_encoder: Network<T>,
    pub target_projector: Network<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// Fresh online networks; the target starts as an exact copy.
    pub fn init(specs: &NetSpecs, seed: u64) -> Result<Self> {
        let encoder = Network::init(&specs.encoder, derive_seed(seed, 0))?;
        let projector = Network::init(&specs.projector, derive_seed(seed, 1))?;
        let predictor = Network::init(&specs.predictor, derive_seed(seed, 2))?;
        Ok(Self { target_encoder: encoder.clone(), target_projector: projector.clone(), encoder, projector, predictor })
    }

    pub fn specs(&self) -> NetSpecs {
        NetSpecs {
            encoder: self.encoder.spec().clone(),
            projector: self.projector.spec().clone(),
            predictor: self.predictor.spec().clone(),
        }
    }
}

pub const ENCODER: &str = "online.encoder";
pub const PROJECTOR: &str = "online.projector";
pub const PREDICTOR: &str = "online.predictor";
pub const TARGET_ENCODER: &str = "target.encoder";
pub const TARGET_PROJECTOR: &str = "target.projector";

impl ModelParams<f32> {
    pub fn export(&self, map: &mut TensorMap) {
        self.encoder.export(ENCODER, map);
        self.projector.export(PROJECTOR, map);
        self.predictor.export(PREDICTOR, map);
        self.target_encoder.export(TARGET_ENCODER, map);
        self.target_projector.export(TARGET_PROJECTOR, map);
    }

    pub fn import(specs: &NetSpecs, map: &TensorMap) -> Result<Self> {
        Ok(Self {
            encoder: Network::import(&specs.encoder, ENCODER, map)?,
            projector: Network::import(&specs.projector, PROJECTOR, map)?,
            predictor: Network::import(&specs.predictor, PREDICTOR, map)?,
            target_encoder: Network::import(&specs.encoder, TARGET_ENCODER, map)?,
            target_projector: Network::import(&specs.projector, TARGET_PROJECTOR, map)?,
        })
    }
}
