//! Trace-driven timing model of a hash-grid accelerator.
//!
//! Three stages are modeled:
//!
//! * **Encoding**: coarse hash levels go through a direct-mapped grid cache
//!   backed by DRAM; fine levels are served from a subgrid buffer that always
//!   hits.
//! * **Subgrid prefetch**: every time the trace moves to a new tile of pixels,
//!   the fine-level entries that tile touches are streamed in from DRAM.
//! * **MLP**: each layer runs as a GEMM on a `P x P` bitserial systolic array.
//!
//! Hash-level bit widths change the size of table entries, which moves entries
//! across cache lines and changes prefetch volume. MLP bit widths scale the
//! bitserial GEMM time.

mod cache;
mod engine;
mod gemm;
mod trace;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CacheOutcome, GridCache};
pub use engine::{simulate, simulate_with_cache, EncodingStats, Simulator};
pub use gemm::gemm_cycles;
pub use trace::{
    read_trace, write_trace, AccessTrace, GemmDescriptor, HashAccess, TraceLayout, TRACE_MAGIC,
    TRACE_VERSION,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid hardware config: {0}")]
    Config(String),
    #[error("invalid trace: {0}")]
    Trace(String),
    #[error("policy does not cover {0}")]
    UnresolvedUnit(String),
    #[error("malformed trace file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Timing and memory parameters of the modeled accelerator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HwConfig {
    pub clock_ghz: f64,
    /// Side of the systolic array.
    pub systolic_dim: u32,
    pub grid_cache_bytes: u32,
    pub cache_line_bytes: u32,
    /// Levels below this index use the grid cache; `None` means half the levels.
    pub coarse_level_split: Option<usize>,
    pub dram_fixed_latency_cycles: u64,
    /// Sustained DRAM bandwidth, resolved to 1/1000 byte per cycle.
    pub dram_bytes_per_cycle: f64,
    /// Pixels per subgrid tile (and per GEMM batch tile).
    pub subgrid_pixels: u32,
    /// Overlap encoding with the MLP instead of running the stages back to back.
    pub stage_overlap: bool,
}

impl Default for HwConfig {
    fn default() -> Self {
        Self {
            clock_ghz: 1.0,
            systolic_dim: 16,
            grid_cache_bytes: 32 * 1024,
            cache_line_bytes: 64,
            coarse_level_split: None,
            dram_fixed_latency_cycles: 100,
            // LPDDR4-3200 on a 64-bit channel at 1 GHz.
            dram_bytes_per_cycle: 25.6,
            subgrid_pixels: 32 * 32,
            stage_overlap: false,
        }
    }
}

impl HwConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |m: &str| Err(SimError::Config(m.to_string()));
        if self.systolic_dim == 0 {
            return fail("systolic_dim must be >= 1");
        }
        if self.cache_line_bytes == 0 || self.grid_cache_bytes == 0 {
            return fail("cache sizes must be positive");
        }
        if !self.grid_cache_bytes.is_multiple_of(self.cache_line_bytes) {
            return fail("grid_cache_bytes must be a multiple of cache_line_bytes");
        }
        if self.bandwidth_milli() == 0 {
            return fail("dram_bytes_per_cycle must be at least 0.001");
        }
        if self.subgrid_pixels == 0 {
            return fail("subgrid_pixels must be >= 1");
        }
        if !(self.clock_ghz > 0.0) {
            return fail("clock_ghz must be positive");
        }
        Ok(())
    }

    pub fn num_lines(&self) -> u64 {
        (self.grid_cache_bytes / self.cache_line_bytes) as u64
    }

    pub fn coarse_split(&self, num_levels: usize) -> usize {
        self.coarse_level_split
            .unwrap_or(num_levels / 2)
            .min(num_levels)
    }

    fn bandwidth_milli(&self) -> u64 {
        if self.dram_bytes_per_cycle.is_finite() && self.dram_bytes_per_cycle > 0.0 {
            (self.dram_bytes_per_cycle * 1000.0).round() as u64
        } else {
            0
        }
    }

    /// Cycles to stream `bytes` at the configured bandwidth, rounded up.
    pub fn transfer_cycles(&self, bytes: u64) -> u64 {
        (bytes * 1000).div_ceil(self.bandwidth_milli())
    }

    /// Cost of one grid-cache miss: fixed latency plus one line transfer.
    pub fn miss_cycles(&self) -> u64 {
        self.dram_fixed_latency_cycles + self.transfer_cycles(self.cache_line_bytes as u64)
    }
}

/// Latency and memory statistics of one simulated run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub total_cycles: u64,
    pub encoding_cycles: u64,
    pub mlp_cycles: u64,
    pub subgrid_prefetch_cycles: u64,
    pub subgrid_prefetch_bytes: u64,
    pub dram_bytes: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub pixel_count: u64,
    /// Total cycles per output sample (one pixel is one ray).
    pub cycles_per_ray: f64,
}
