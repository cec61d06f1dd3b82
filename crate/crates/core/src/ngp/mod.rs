//! Multi-resolution hash encoding plus a compact MLP, fitted to a 2-D image.
//!
//! This is the quality oracle of the search: it is small enough to train in
//! minutes on one core, yet it has the same quantizable structure as a full
//! hash-grid radiance field (per-level feature tables, MLP weights, MLP
//! activations).

mod checkpoint;
mod hash;
mod image;
mod model;
mod quant;
mod trace;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use hash::{hash_index, HASH_PRIME_Y};
pub use image::{psnr, read_ppm, write_ppm, RenderTarget, PSNR_CAP_DB};
pub use model::{Corners, ForwardTrace, ModelGrad, ToyNgpModel};
pub use quant::QuantState;
pub use trace::{export_trace, export_trace_tiled, DEFAULT_TILE_SIDE};
pub use train::{
    calibration_coords, finetune, train, FinetuneOptions, TrainLogRecord, TrainOptions, Trainer,
    CALIBRATION_SAMPLES,
};

use crate::quantizer::QuantError;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid oracle config: {0}")]
    Config(String),
    #[error("level {level} out of range (model has {num_levels})")]
    LevelOutOfRange { level: usize, num_levels: usize },
    #[error("point ({0}, {1}) is outside the unit square")]
    OutsideUnitSquare(f64, f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("policy does not match the model: {0}")]
    Policy(#[from] crate::policy::PolicyError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NgpConfig {
    pub num_levels: usize,
    pub features_per_level: usize,
    pub table_size_log2: u32,
    pub base_resolution: u32,
    pub growth_factor: f64,
    pub mlp_hidden_layers: usize,
    pub mlp_width: usize,
    pub output_channels: usize,
}

impl Default for NgpConfig {
    fn default() -> Self {
        Self {
            num_levels: 12,
            features_per_level: 2,
            table_size_log2: 14,
            base_resolution: 16,
            growth_factor: 1.5,
            mlp_hidden_layers: 2,
            mlp_width: 64,
            output_channels: 3,
        }
    }
}

impl NgpConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        let fail = |m: &str| Err(OracleError::Config(m.to_string()));
        if self.num_levels == 0 || self.num_levels > u16::MAX as usize {
            return fail("num_levels must be in [1, 65535]");
        }
        if self.features_per_level == 0 {
            return fail("features_per_level must be >= 1");
        }
        if !(1..=24).contains(&self.table_size_log2) {
            return fail("table_size_log2 must be in [1, 24]");
        }
        if self.base_resolution == 0 {
            return fail("base_resolution must be >= 1");
        }
        if !(self.growth_factor >= 1.0 && self.growth_factor.is_finite()) {
            return fail("growth_factor must be finite and >= 1");
        }
        if self.mlp_width == 0 || self.output_channels == 0 {
            return fail("mlp_width and output_channels must be >= 1");
        }
        let res: Vec<u64> = (0..self.num_levels)
            .map(|l| self.resolution_u64(l))
            .collect();
        if res.windows(2).any(|w| w[1] < w[0]) || res.iter().any(|&r| r > u32::MAX as u64 / 2) {
            return fail("per-level resolutions must be nondecreasing and fit in 31 bits");
        }
        Ok(())
    }

    fn resolution_u64(&self, level: usize) -> u64 {
        (self.base_resolution as f64 * self.growth_factor.powi(level as i32)).floor() as u64
    }

    /// Grid resolution `N_l = floor(base * growth^l)` of a level.
    pub fn resolution(&self, level: usize) -> u32 {
        self.resolution_u64(level) as u32
    }

    pub fn table_capacity(&self) -> usize {
        1usize << self.table_size_log2
    }

    /// Vertices of the dense grid at `level`, `(N_l + 1)^2`.
    pub fn dense_vertices(&self, level: usize) -> u64 {
        let side = self.resolution(level) as u64 + 1;
        side * side
    }

    /// Whether `level` is stored densely (collision-free).
    pub fn is_dense(&self, level: usize) -> bool {
        self.dense_vertices(level) <= self.table_capacity() as u64
    }

    /// Allocated entries at `level`: the dense vertex count for small levels,
    /// the hash table capacity otherwise.
    pub fn level_entries(&self, level: usize) -> usize {
        self.dense_vertices(level).min(self.table_capacity() as u64) as usize
    }

    pub fn encoding_dim(&self) -> usize {
        self.num_levels * self.features_per_level
    }

    /// Number of dense layers in the MLP (hidden layers plus the output layer).
    pub fn mlp_layers(&self) -> usize {
        self.mlp_hidden_layers + 1
    }

    /// `(inputs, outputs)` of each MLP layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.mlp_layers());
        let mut inputs = self.encoding_dim();
        for _ in 0..self.mlp_hidden_layers {
            dims.push((inputs, self.mlp_width));
            inputs = self.mlp_width;
        }
        dims.push((inputs, self.output_channels));
        dims
    }

    /// Memory layout of the feature tables, as seen by the accelerator model.
    pub fn trace_layout(&self) -> crate::sim::TraceLayout {
        crate::sim::TraceLayout {
            features_per_level: self.features_per_level as u32,
            level_entries: (0..self.num_levels)
                .map(|l| self.level_entries(l) as u32)
                .collect(),
        }
    }
}
