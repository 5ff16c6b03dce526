//! Named model scales. `full` mirrors the reference configuration (224px
//! inputs, base-scale backbones); `toy` is small enough that the whole
//! test suite trains and gradient-checks on a CPU in seconds. Tests never
//! instantiate full-scale weights.

use alloc::vec;

use serde::{Deserialize, Serialize};

use crate::encoders::{MANetConfig, ResNetConfig, ViTConfig};
use crate::error::{CoreError, Result};
use crate::fusion::FusionHeadConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Toy,
    Full,
}

impl core::str::FromStr for Preset {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Preset::Toy),
            "full" => Ok(Preset::Full),
            other => Err(CoreError::Config(alloc::format!(
                "unknown preset '{other}' (expected 'toy' or 'full')"
            ))),
        }
    }
}

impl Preset {
    pub fn image_size(&self) -> usize {
        match self {
            Preset::Toy => 64,
            Preset::Full => 224,
        }
    }

    pub fn vit(&self) -> ViTConfig {
        match self {
            Preset::Toy => vit_toy(),
            Preset::Full => ViTConfig::default(),
        }
    }

    pub fn manet(&self) -> MANetConfig {
        match self {
            Preset::Toy => manet_toy(),
            Preset::Full => MANetConfig::default(),
        }
    }

    pub fn resnet(&self) -> ResNetConfig {
        match self {
            Preset::Toy => resnet_toy(),
            Preset::Full => ResNetConfig::default(),
        }
    }

    /// Hidden widths and dropout for the fusion MLP; `input_dim` is filled in
    /// from the attached encoders.
    pub fn head(&self, input_dim: usize, num_classes: usize) -> FusionHeadConfig {
        match self {
            Preset::Toy => FusionHeadConfig::new(input_dim, vec![32], num_classes, 0.1),
            Preset::Full => FusionHeadConfig::new(input_dim, vec![512], num_classes, 0.3),
        }
    }
}

/// 16 tokens of 16x16 patches over 64px inputs, 32-dim embeddings.
pub fn vit_toy() -> ViTConfig {
    ViTConfig {
        patch_size: 16,
        embed_dim: 32,
        depth: 2,
        num_heads: 4,
        mlp_ratio: 2.0,
    }
}

/// Two scales, four gated regions, 16-dim branches, so 32-dim output.
pub fn manet_toy() -> MANetConfig {
    MANetConfig {
        stem_channels: 4,
        branch_dim: 16,
        scales: vec![3, 5],
        attention_regions: 4,
        branch_weight_init: [0.0, 0.0],
    }
}

/// One bottleneck per stage at width 8, projected to 16 dims.
pub fn resnet_toy() -> ResNetConfig {
    ResNetConfig {
        stage_blocks: [1, 1, 1, 1],
        base_width: 8,
        backbone_dim: 256,
        projection_dim: 16,
    }
}

/// Sum of encoder output dims for an ensemble at this preset.
pub fn ensemble_input_dim(preset: Preset) -> usize {
    preset.vit().output_dim() + preset.manet().output_dim() + preset.resnet().output_dim()
}
