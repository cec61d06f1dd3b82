//! Binary model container.
//!
//! Layout (little-endian): magic `HNGP`, version `u32`, then the config block
//! `num_levels, features_per_level, table_size_log2, base_resolution` as `u32`,
//! `growth_factor` as `f64`, `mlp_hidden_layers, mlp_width, output_channels`
//! as `u32`. Parameters follow as `f32`: every level table in order, then for
//! each MLP layer its row-major `out x in` weight and its bias.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use super::{NgpConfig, OracleError, ToyNgpModel};
use crate::nn::Dense;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"HNGP";
pub const CHECKPOINT_VERSION: u32 = 1;

fn format_err(detail: impl Into<String>) -> OracleError {
    OracleError::Format {
        what: "HNGP checkpoint",
        detail: detail.into(),
    }
}

pub fn write_checkpoint<W: Write>(model: &ToyNgpModel, mut w: W) -> Result<(), OracleError> {
    let c = model.config();
    let mut buf = Vec::with_capacity(44 + model.param_count() * 4);
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [
        c.num_levels,
        c.features_per_level,
        c.table_size_log2 as usize,
        c.base_resolution as usize,
    ] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&c.growth_factor.to_le_bytes());
    for v in [c.mlp_hidden_layers, c.mlp_width, c.output_channels] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    let mut put = |v: f64| buf.extend_from_slice(&(v as f32).to_le_bytes());
    model.tables.iter().flatten().for_each(|&v| put(v));
    for layer in &model.layers {
        layer.weight.iter().for_each(|&v| put(v));
        layer.bias.iter().for_each(|&v| put(v));
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], OracleError> {
        let end = self.pos + N;
        let bytes = self
            .data
            .get(self.pos..end)
            .ok_or_else(|| format_err("truncated"))?;
        self.pos = end;
        Ok(bytes.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<u32, OracleError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>, OracleError> {
        if self.data.len() - self.pos < n * 4 {
            return Err(format_err("truncated parameters"));
        }
        (0..n)
            .map(|_| Ok(f32::from_le_bytes(self.take()?) as f64))
            .collect()
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ToyNgpModel, OracleError> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let mut cur = Cursor {
        data: &data,
        pos: 0,
    };
    if cur.take::<4>()? != CHECKPOINT_MAGIC {
        return Err(format_err("bad magic"));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let num_levels = cur.u32()? as usize;
    let features_per_level = cur.u32()? as usize;
    let table_size_log2 = cur.u32()?;
    let base_resolution = cur.u32()?;
    let growth_factor = f64::from_le_bytes(cur.take()?);
    let config = NgpConfig {
        num_levels,
        features_per_level,
        table_size_log2,
        base_resolution,
        growth_factor,
        mlp_hidden_layers: cur.u32()? as usize,
        mlp_width: cur.u32()? as usize,
        output_channels: cur.u32()? as usize,
    };
    config.validate().map_err(|e| format_err(e.to_string()))?;

    let tables = (0..config.num_levels)
        .map(|l| cur.f32s(config.level_entries(l) * config.features_per_level))
        .collect::<Result<Vec<_>, _>>()?;
    let layers = config
        .layer_dims()
        .into_iter()
        .map(|(inputs, outputs)| {
            let w = cur.f32s(inputs * outputs)?;
            let b = cur.f32s(outputs)?;
            Ok(Dense {
                weight: Array2::from_shape_vec((outputs, inputs), w).unwrap(),
                bias: Array1::from(b),
            })
        })
        .collect::<Result<Vec<_>, OracleError>>()?;
    if cur.pos != data.len() {
        return Err(format_err(format!(
            "{} trailing bytes",
            data.len() - cur.pos
        )));
    }
    ToyNgpModel::from_parts(config, tables, layers)
}
