//! The temperature (T), masker (M) and masked-temperature (MT) networks.
//!
//! All three share one decoder shape: a fully connected layer lifts the
//! normalized `(P, V, t)` triple to a coarse feature grid, then `S` stages
//! of trilinear ×2 upsampling, 3×3×3 convolution and leaky ReLU grow it to
//! the crop size. A last convolution maps to one channel, followed by a
//! valved leaky ReLU (T, MT) or a sigmoid (M).

mod infer;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use infer::{infer_field, predict_composite, predict_mask, predict_temperature, Inference, MASK_THRESHOLD};
pub use train::{masker_init, mt_setup, train_mcnn, train_mtcnn, train_tcnn, MaskSource, Trainer};

use crate::dataset::{CropSpec, InputRanges, NormalizationSpec};
use crate::error::{Error, Result};
use crate::physics::MaterialProperties;
use crate::tensor::{Checkpoint, LayerSpec, Network, NetworkSpec, TrainingRecord, DEFAULT_LEAKY_SLOPE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    T,
    M,
    Mt,
}

impl Role {
    pub fn tag(self) -> &'static str {
        match self {
            Role::T => "t",
            Role::M => "m",
            Role::Mt => "mt",
        }
    }

    /// File name of this role's checkpoint inside a checkpoint directory.
    pub fn checkpoint_name(self) -> String {
        format!("{}.ckpt", self.tag())
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag.to_ascii_lowercase().as_str() {
            "t" => Some(Role::T),
            "m" => Some(Role::M),
            "mt" => Some(Role::Mt),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskLoss {
    Bce,
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub coarse: [usize; 3],
    /// Channels of the coarse grid and of the first stage.
    pub channels: usize,
    /// Upsampling stages; channels halve after each one.
    pub stages: usize,
    pub leaky_slope: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub adam_epsilon: f64,
    pub scheduler_factor: f64,
    pub scheduler_patience: usize,
    pub min_learning_rate: f64,
    pub mask_loss: MaskLoss,
    /// Start M and MT from the T weights.
    pub transfer_weights: bool,
    pub mt_masks: MaskSource,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            coarse: [4, 2, 2],
            channels: 128,
            stages: 4,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            batch_size: 4,
            max_epochs: 300,
            seed: 0,
            learning_rate: 2e-4,
            adam_epsilon: 1e-8,
            scheduler_factor: 0.2,
            scheduler_patience: 3,
            min_learning_rate: 1e-7,
            mask_loss: MaskLoss::Bce,
            transfer_weights: true,
            mt_masks: MaskSource::GroundTruth,
        }
    }
}

impl SurrogateConfig {
    /// Coarse grid sized so that `stages` doublings reach `crop`.
    pub fn for_crop(crop: [usize; 3], stages: usize) -> Result<Self> {
        let f = 1 << stages;
        if crop.iter().any(|&c| c % f != 0 || c == 0) {
            return Err(Error::Config(format!(
                "crop {crop:?} is not divisible by 2^{stages} on every axis"
            )));
        }
        Ok(SurrogateConfig {
            coarse: [crop[0] / f, crop[1] / f, crop[2] / f],
            stages,
            ..Default::default()
        })
    }

    pub fn output_dims(&self) -> [usize; 3] {
        self.coarse.map(|c| c << self.stages)
    }

    /// Output channels of stage `k` (0-based).
    pub fn stage_channels(&self, k: usize) -> usize {
        (self.channels >> k).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.coarse.contains(&0) || self.channels == 0 {
            return bad(format!(
                "coarse grid {:?} and channel count {} must be positive",
                self.coarse, self.channels
            ));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad(format!("leaky slope must be in (0, 1), got {}", self.leaky_slope));
        }
        if !(self.learning_rate > 0.0) || !(self.scheduler_factor > 0.0 && self.scheduler_factor < 1.0) {
            return bad("learning rate must be positive and the scheduler factor in (0, 1)".into());
        }
        Ok(())
    }

    /// Check that the network output matches `crop`.
    pub fn check_crop(&self, crop: &CropSpec) -> Result<()> {
        if self.output_dims() != crop.window {
            return Err(Error::Config(format!(
                "coarse grid {:?} × 2^{} = {:?} does not match the crop window {:?}",
                self.coarse,
                self.stages,
                self.output_dims(),
                crop.window
            )));
        }
        Ok(())
    }
}

/// Layer stack for `role`.
pub fn build_network(config: &SurrogateConfig, role: Role) -> Result<NetworkSpec> {
    config.validate()?;
    let [cx, cy, cz] = config.coarse;
    let c0 = config.channels;
    let mut layers = vec![
        LayerSpec::FullyConnected {
            in_features: 3,
            out_features: c0 * cx * cy * cz,
        },
        LayerSpec::Reshape { shape: vec![c0, cx, cy, cz] },
    ];
    let mut channels = c0;
    for k in 0..config.stages {
        let out = config.stage_channels(k);
        layers.push(LayerSpec::TrilinearUpsample);
        layers.push(LayerSpec::Conv3d {
            in_channels: channels,
            out_channels: out,
        });
        layers.push(LayerSpec::LeakyRelu {
            slope: config.leaky_slope,
        });
        channels = out;
    }
    layers.push(LayerSpec::Conv3d {
        in_channels: channels,
        out_channels: 1,
    });
    layers.push(match role {
        Role::T | Role::Mt => LayerSpec::ValvedLeakyRelu {
            slope: config.leaky_slope,
        },
        Role::M => LayerSpec::Sigmoid,
    });
    Ok(NetworkSpec {
        input_shape: vec![3],
        layers,
    })
}

/// Everything besides the weights that a trained model carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateMeta {
    pub role: Role,
    pub config: SurrogateConfig,
    pub history: Vec<TrainingRecord>,
    pub input_ranges: InputRanges,
    pub normalization: NormalizationSpec,
    pub crop: CropSpec,
    pub material: MaterialProperties,
    pub domain: DomainInfo,
}

/// Simulation geometry used to place an inferred crop in the domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainInfo {
    pub grid: [usize; 3],
    pub cell_size: f64,
    pub beam_start: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct Surrogate {
    pub meta: SurrogateMeta,
    pub network: Network,
}

impl Surrogate {
    pub fn role(&self) -> Role {
        self.meta.role
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::to_value(&self.meta).expect("metadata serializes");
        Checkpoint::from_network(&self.network, self.meta.config.seed, meta)
    }

    pub fn from_checkpoint(path: &Path, ck: &Checkpoint) -> Result<Self> {
        let meta: SurrogateMeta = serde_json::from_value(ck.metadata.clone()).map_err(|e| Error::Malformed {
            path: path.into(),
            what: "surrogate checkpoint metadata",
            detail: e.to_string(),
        })?;
        let expected = build_network(&meta.config, meta.role)?;
        if expected != ck.spec {
            return Err(Error::Malformed {
                path: path.into(),
                what: "surrogate checkpoint",
                detail: format!("layer stack does not match the {:?} network for its config", meta.role),
            });
        }
        Ok(Surrogate {
            network: ck.to_network()?,
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(path, &Checkpoint::load(path)?)
    }

    /// Load and insist on a role.
    pub fn load_role(path: &Path, role: Role) -> Result<Self> {
        let s = Self::load(path)?;
        if s.role() != role {
            return Err(Error::Config(format!(
                "{} holds a {:?} model, expected {:?}",
                path.display(),
                s.role(),
                role
            )));
        }
        Ok(s)
    }
}
