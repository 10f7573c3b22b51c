//! Network, loss and training settings.

use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};

/// Slope of the leaky rectifier used after every hidden layer.
pub const LEAKY_SLOPE: f64 = 0.01;
/// Latent log-variances are clamped into this range.
pub const LOGVAR_RANGE: (f64, f64) = (-10.0, 10.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldHeadKind {
    /// Raw 3-vector projected onto the tangent plane.
    Direction,
    /// One angle about the normal, measured from a reference tangent.
    RotationAngle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub input_resolution: u32,
    /// Channels after the input projection, then after each stride-2 level.
    pub encoder_channels: Vec<usize>,
    /// Channels of each decoder level, coarse to fine.
    pub decoder_channels: Vec<usize>,
    pub encoder_convs_per_level: usize,
    pub decoder_convs_per_level: usize,
    pub residual_blocks_per_level: usize,
    pub latent_dim: usize,
    pub head_hidden: usize,
    pub field_head_kind: FieldHeadKind,
    /// Concatenate the normal to the field-head input.
    pub field_head_uses_normal: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_resolution: 64,
            encoder_channels: vec![8, 16, 32, 64, 64],
            decoder_channels: vec![64, 32, 16],
            encoder_convs_per_level: 1,
            decoder_convs_per_level: 2,
            residual_blocks_per_level: 1,
            latent_dim: 64,
            head_hidden: 32,
            field_head_kind: FieldHeadKind::Direction,
            field_head_uses_normal: false,
        }
    }
}

impl NetworkConfig {
    /// Full-size channel layout at input resolution 256.
    pub fn full_scale() -> Self {
        Self {
            input_resolution: 256,
            encoder_channels: vec![16, 32, 64, 128, 128],
            decoder_channels: vec![128, 64, 32],
            latent_dim: 128,
            ..Self::default()
        }
    }

    pub fn encoder_levels(&self) -> usize {
        self.encoder_channels.len().saturating_sub(1)
    }

    pub fn latent_resolution(&self) -> u32 {
        self.input_resolution >> self.encoder_levels()
    }

    /// Resolution of decoder level `d` (1-based).
    pub fn decoder_resolution(&self, d: usize) -> u32 {
        self.latent_resolution() << d
    }

    pub fn output_resolution(&self) -> u32 {
        self.decoder_resolution(self.decoder_channels.len())
    }

    pub fn output_channels(&self) -> usize {
        *self.decoder_channels.last().unwrap_or(&self.latent_dim)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NetError::Config(m));
        let r = self.input_resolution;
        if !r.is_power_of_two() || r < 2 {
            return bad(format!("input_resolution {r} is not a power of two >= 2"));
        }
        if self.encoder_channels.len() < 2 {
            return bad("encoder_channels needs the input width and at least one level".into());
        }
        if (r >> self.encoder_levels()) == 0 || (r >> self.encoder_levels()) << self.encoder_levels() != r {
            return bad(format!("{} encoder levels do not fit resolution {r}", self.encoder_levels()));
        }
        if self.decoder_channels.is_empty() {
            return bad("decoder_channels is empty".into());
        }
        if self.output_resolution() > r {
            return bad(format!(
                "decoder output resolution {} exceeds input resolution {r}",
                self.output_resolution()
            ));
        }
        let all = self.encoder_channels.iter().chain(&self.decoder_channels);
        if all.copied().chain([self.latent_dim, self.head_hidden]).any(|c| c == 0) {
            return bad("channel counts must be positive".into());
        }
        if self.encoder_convs_per_level < 1 {
            return bad("encoder_convs_per_level must be >= 1".into());
        }
        if self.decoder_convs_per_level < 2 {
            return bad("decoder_convs_per_level must be >= 2".into());
        }
        Ok(())
    }
}

/// Weights of the four loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub occupancy: f64,
    pub cross_field: f64,
    pub sdf: f64,
    pub kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            occupancy: 1.0,
            cross_field: 1.0,
            sdf: 1.0,
            kl: 1e-6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.occupancy, self.cross_field, self.sdf, self.kl];
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(NetError::Config(format!("loss weights must be nonnegative: {w:?}")));
        }
        Ok(())
    }
}

/// Optimizer, sampling and augmentation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Write a checkpoint after every this many epochs (0 disables).
    pub checkpoint_every_epochs: usize,
    /// Surface points supervised by the cross-field loss per shape and step.
    pub points_per_step: usize,
    /// Shell queries supervised by the SDF loss per shape and step.
    pub queries_per_step: usize,
    /// Point-drop rate is drawn uniformly from `[0, max_point_drop]`.
    pub max_point_drop: f64,
    /// Random rotation, uniform over SO(3).
    pub rotate: bool,
    /// Half-width of the supervised shell (in normalized units).
    pub shell_epsilon: f64,
    /// Extra occupancy margin in cells of the finest decoder level; a voxel
    /// is occupied when `|sdf(center)| < shell_epsilon + margin * h`.
    pub occupancy_margin_cells: f64,
    pub loss_weights: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 16,
            max_steps: 5000,
            checkpoint_every_epochs: 0,
            points_per_step: 2048,
            queries_per_step: 2048,
            max_point_drop: 0.5,
            rotate: true,
            shell_epsilon: 0.02,
            occupancy_margin_cells: 3f64.sqrt() / 2.0,
            loss_weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NetError::Config(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if self.batch_size == 0 || self.points_per_step == 0 || self.queries_per_step == 0 {
            return bad("batch and sample counts must be positive".into());
        }
        if !(0.0..1.0).contains(&self.max_point_drop) {
            return bad(format!("max_point_drop {} must lie in [0, 1)", self.max_point_drop));
        }
        if !(self.shell_epsilon > 0.0) || !(self.occupancy_margin_cells >= 0.0) {
            return bad("shell epsilon must be positive and margin nonnegative".into());
        }
        self.loss_weights.validate()
    }
}
