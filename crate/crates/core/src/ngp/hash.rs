use super::{NgpConfig, OracleError};

/// Multiplier applied to the second grid coordinate; the first uses 1.
pub const HASH_PRIME_Y: u64 = 2_654_435_761;

/// Table slot of grid vertex `(x, y)` at `level`.
///
/// Levels whose dense grid fits in the table use the row-major vertex index
/// `y * (N_l + 1) + x`; larger levels use `(x XOR y * 2654435761) mod 2^T`.
pub fn hash_index(
    coord: (u32, u32),
    level: usize,
    config: &NgpConfig,
) -> Result<usize, OracleError> {
    if level >= config.num_levels {
        return Err(OracleError::LevelOutOfRange {
            level,
            num_levels: config.num_levels,
        });
    }
    Ok(slot(coord, level, config))
}

#[inline]
pub(crate) fn slot((x, y): (u32, u32), level: usize, config: &NgpConfig) -> usize {
    if config.is_dense(level) {
        let side = config.resolution(level) as usize + 1;
        y as usize * side + x as usize
    } else {
        let mask = (1u64 << config.table_size_log2) - 1;
        ((x as u64 ^ (y as u64).wrapping_mul(HASH_PRIME_Y)) & mask) as usize
    }
}
