use super::{OracleError, ToyNgpModel};
use crate::sim::{AccessTrace, GemmDescriptor, HashAccess};

/// Side of the square pixel tiles the trace walks through.
pub const DEFAULT_TILE_SIDE: usize = 32;

/// Hash accesses and MLP work of rendering a `width x height` image, with
/// pixels visited in 32x32 tiles.
pub fn export_trace(
    model: &ToyNgpModel,
    width: usize,
    height: usize,
) -> Result<AccessTrace, OracleError> {
    export_trace_tiled(model, width, height, DEFAULT_TILE_SIDE)
}

/// Like [`export_trace`] with a custom tile side.
///
/// Pixel ids number pixels in visiting order: tiles row by row, and pixels
/// row by row inside a tile. For each pixel the four corners of every level
/// are emitted, levels coarse to fine. Every `tile_side^2` consecutive pixels
/// form one MLP batch with one GEMM descriptor per layer.
pub fn export_trace_tiled(
    model: &ToyNgpModel,
    width: usize,
    height: usize,
    tile_side: usize,
) -> Result<AccessTrace, OracleError> {
    if tile_side == 0 {
        return Err(OracleError::Dimension("tile side must be >= 1".into()));
    }
    let pixels = width * height;
    if pixels > u32::MAX as usize {
        return Err(OracleError::Dimension("image too large for a trace".into()));
    }
    let config = model.config();
    let levels = config.num_levels;
    let mut accesses = Vec::with_capacity(pixels * levels * 4);
    let mut pixel_id = 0u32;
    for ty in (0..height).step_by(tile_side) {
        for tx in (0..width).step_by(tile_side) {
            for y in ty..(ty + tile_side).min(height) {
                for x in tx..(tx + tile_side).min(width) {
                    let p = [
                        (x as f64 + 0.5) / width as f64,
                        (y as f64 + 0.5) / height as f64,
                    ];
                    for level in 0..levels {
                        for entry in model.corners(level, p).index {
                            accesses.push(HashAccess {
                                pixel_id,
                                level: level as u16,
                                entry,
                            });
                        }
                    }
                    pixel_id += 1;
                }
            }
        }
    }

    let batch = tile_side * tile_side;
    let dims = config.layer_dims();
    let mut gemms = Vec::with_capacity(pixels.div_ceil(batch) * dims.len());
    for start in (0..pixels).step_by(batch) {
        let m = (pixels - start).min(batch) as u32;
        for (layer, &(k, n)) in dims.iter().enumerate() {
            gemms.push(GemmDescriptor {
                layer_id: layer as u16,
                m,
                k: k as u32,
                n: n as u32,
            });
        }
    }
    Ok(AccessTrace {
        pixel_count: pixels as u32,
        layout: config.trace_layout(),
        accesses,
        gemms,
    })
}
