use serde::{Deserialize, Serialize};

/// Which temporal modules are inserted into the spatial backbone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalVariant {
    /// Image model applied frame by frame.
    None,
    /// Temporal transformers only.
    Tt,
    /// Temporal transformers plus 1-D temporal convolutions.
    TtTc,
    /// Temporal transformers plus pseudo-3D (spatial then temporal) convolutions.
    TtP3d,
}

impl TemporalVariant {
    pub fn has_transformer(self) -> bool {
        self != TemporalVariant::None
    }

    pub fn has_temporal_conv(self) -> bool {
        matches!(self, TemporalVariant::TtTc | TemporalVariant::TtP3d)
    }

    pub fn has_p3d_spatial_conv(self) -> bool {
        self == TemporalVariant::TtP3d
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub latent_channels: usize,
    pub base_width: usize,
    pub level_multipliers: Vec<usize>,
    pub context_dim: usize,
    pub context_tokens: usize,
    /// Attention heads at the first level; deeper levels keep `head_dim` and
    /// scale the head count with the level width.
    pub num_heads: usize,
    pub head_dim: usize,
    pub norm_groups: usize,
    pub ff_mult: usize,
    pub train_frames: usize,
    pub temporal_variant: TemporalVariant,
    /// Relative positions are clipped to `[-k, k]`; `None` means `train_frames - 1`.
    #[serde(default)]
    pub rel_pos_clip: Option<usize>,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            latent_channels: 12,
            base_width: 32,
            level_multipliers: vec![1, 2],
            context_dim: 32,
            context_tokens: 8,
            num_heads: 2,
            head_dim: 16,
            norm_groups: 8,
            ff_mult: 2,
            train_frames: 16,
            temporal_variant: TemporalVariant::TtP3d,
            rel_pos_clip: None,
        }
    }
}

impl DenoiserConfig {
    /// Small widths used by gradient and property checks.
    pub fn tiny(latent_channels: usize, variant: TemporalVariant) -> Self {
        Self {
            latent_channels,
            base_width: 8,
            level_multipliers: vec![1, 2],
            context_dim: 6,
            context_tokens: 3,
            num_heads: 2,
            head_dim: 4,
            norm_groups: 2,
            ff_mult: 2,
            train_frames: 4,
            temporal_variant: variant,
            rel_pos_clip: None,
        }
    }

    pub fn rel_clip(&self) -> usize {
        self.rel_pos_clip.unwrap_or(self.train_frames.saturating_sub(1))
    }

    pub fn level_width(&self, level: usize) -> usize {
        self.base_width * self.level_multipliers[level]
    }

    pub fn heads_for(&self, width: usize) -> usize {
        width / self.head_dim
    }

    /// Spatial downsampling factor between the input and the deepest level.
    pub fn spatial_divisor(&self) -> usize {
        1 << self.level_multipliers.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if self.latent_channels == 0 {
            bad.push("model.latent_channels must be >= 1".into());
        }
        if self.level_multipliers.is_empty() || self.level_multipliers.contains(&0) {
            bad.push("model.level_multipliers must be non-empty and positive".into());
        }
        if self.head_dim == 0 || self.num_heads * self.head_dim != self.base_width {
            bad.push(format!(
                "model.num_heads * model.head_dim must equal model.base_width ({} * {} != {})",
                self.num_heads, self.head_dim, self.base_width
            ));
        }
        if self.norm_groups == 0 || self.base_width % self.norm_groups != 0 {
            bad.push(format!("model.norm_groups ({}) must divide model.base_width ({})", self.norm_groups, self.base_width));
        }
        if self.context_dim == 0 || self.context_tokens == 0 {
            bad.push("model.context_dim and model.context_tokens must be >= 1".into());
        }
        if self.ff_mult == 0 {
            bad.push("model.ff_mult must be >= 1".into());
        }
        if self.train_frames == 0 {
            bad.push("model.train_frames must be >= 1".into());
        }
        bad
    }
}
