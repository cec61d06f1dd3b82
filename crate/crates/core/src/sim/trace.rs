use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::SimError;

pub const TRACE_MAGIC: [u8; 4] = *b"HTRC";
pub const TRACE_VERSION: u32 = 1;

const ACCESS_RECORD_BYTES: usize = 10;
const GEMM_RECORD_BYTES: usize = 14;

/// Feature-table geometry the simulator needs to turn entry indices into
/// byte addresses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceLayout {
    pub features_per_level: u32,
    pub level_entries: Vec<u32>,
}

impl TraceLayout {
    pub fn level_count(&self) -> usize {
        self.level_entries.len()
    }

    /// Bytes of one table entry at `bits` per feature, `ceil(F * bits / 8)`.
    pub fn entry_bytes(&self, bits: u8) -> u32 {
        (self.features_per_level * bits as u32).div_ceil(8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashAccess {
    pub pixel_id: u32,
    pub level: u16,
    pub entry: u32,
}

/// One `M x K` by `K x N` product executed by MLP layer `layer_id`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GemmDescriptor {
    pub layer_id: u16,
    pub m: u32,
    pub k: u32,
    pub n: u32,
}

/// Ordered memory and compute events of rendering one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessTrace {
    pub pixel_count: u32,
    pub layout: TraceLayout,
    pub accesses: Vec<HashAccess>,
    pub gemms: Vec<GemmDescriptor>,
}

impl AccessTrace {
    pub fn empty(layout: TraceLayout) -> Self {
        Self {
            pixel_count: 0,
            layout,
            accesses: Vec::new(),
            gemms: Vec::new(),
        }
    }

    pub fn level_count(&self) -> usize {
        self.layout.level_count()
    }

    /// Number of MLP layers referenced by the descriptors.
    pub fn layer_count(&self) -> usize {
        self.gemms
            .iter()
            .map(|g| g.layer_id as usize + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.layout.features_per_level == 0 {
            return Err(SimError::Trace("features_per_level must be >= 1".into()));
        }
        for (i, a) in self.accesses.iter().enumerate() {
            let Some(&entries) = self.layout.level_entries.get(a.level as usize) else {
                return Err(SimError::Trace(format!(
                    "access {i}: level {} out of range",
                    a.level
                )));
            };
            if a.entry >= entries {
                return Err(SimError::Trace(format!(
                    "access {i}: entry {} >= table size {entries} of level {}",
                    a.entry, a.level
                )));
            }
            if a.pixel_id >= self.pixel_count {
                return Err(SimError::Trace(format!(
                    "access {i}: pixel {} >= {}",
                    a.pixel_id, self.pixel_count
                )));
            }
        }
        if let Some(g) = self.gemms.iter().find(|g| g.m == 0 || g.k == 0 || g.n == 0) {
            return Err(SimError::Trace(format!(
                "empty GEMM on layer {}",
                g.layer_id
            )));
        }
        Ok(())
    }
}

/// Writes the binary trace. The file format stores `4` accesses per pixel and
/// level, so traces of any other shape are rejected.
pub fn write_trace<W: Write>(trace: &AccessTrace, mut w: W) -> Result<(), SimError> {
    let levels = trace.level_count() as u64;
    if trace.accesses.len() as u64 != trace.pixel_count as u64 * levels * 4 {
        return Err(SimError::Trace(format!(
            "{} accesses do not match {} pixels x {levels} levels x 4 corners",
            trace.accesses.len(),
            trace.pixel_count
        )));
    }
    let mut buf = Vec::with_capacity(
        16 + trace.accesses.len() * ACCESS_RECORD_BYTES + trace.gemms.len() * GEMM_RECORD_BYTES,
    );
    buf.extend_from_slice(&TRACE_MAGIC);
    buf.extend_from_slice(&TRACE_VERSION.to_le_bytes());
    buf.extend_from_slice(&trace.pixel_count.to_le_bytes());
    buf.extend_from_slice(&(levels as u32).to_le_bytes());
    for a in &trace.accesses {
        buf.extend_from_slice(&a.pixel_id.to_le_bytes());
        buf.extend_from_slice(&a.level.to_le_bytes());
        buf.extend_from_slice(&a.entry.to_le_bytes());
    }
    for g in &trace.gemms {
        buf.extend_from_slice(&g.layer_id.to_le_bytes());
        buf.extend_from_slice(&g.m.to_le_bytes());
        buf.extend_from_slice(&g.k.to_le_bytes());
        buf.extend_from_slice(&g.n.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b[..4].try_into().unwrap())
}

fn le_u16(b: &[u8]) -> u16 {
    u16::from_le_bytes(b[..2].try_into().unwrap())
}

/// Reads a binary trace. The file does not carry table sizes, so the layout
/// of the model that produced it must be supplied.
pub fn read_trace<R: Read>(mut r: R, layout: TraceLayout) -> Result<AccessTrace, SimError> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    if data.len() < 16 {
        return Err(SimError::Format("truncated header".into()));
    }
    if data[..4] != TRACE_MAGIC {
        return Err(SimError::Format("bad magic".into()));
    }
    let version = le_u32(&data[4..]);
    if version != TRACE_VERSION {
        return Err(SimError::Format(format!("unsupported version {version}")));
    }
    let pixel_count = le_u32(&data[8..]);
    let levels = le_u32(&data[12..]) as usize;
    if levels != layout.level_count() {
        return Err(SimError::Format(format!(
            "trace has {levels} levels, layout has {}",
            layout.level_count()
        )));
    }
    let n_access = pixel_count as usize * levels * 4;
    let access_end = 16 + n_access * ACCESS_RECORD_BYTES;
    if data.len() < access_end {
        return Err(SimError::Format("truncated access records".into()));
    }
    let tail = data.len() - access_end;
    if !tail.is_multiple_of(GEMM_RECORD_BYTES) {
        return Err(SimError::Format(format!(
            "{tail} trailing bytes are not whole GEMM records"
        )));
    }
    let accesses = data[16..access_end]
        .chunks_exact(ACCESS_RECORD_BYTES)
        .map(|c| HashAccess {
            pixel_id: le_u32(c),
            level: le_u16(&c[4..]),
            entry: le_u32(&c[6..]),
        })
        .collect();
    let gemms = data[access_end..]
        .chunks_exact(GEMM_RECORD_BYTES)
        .map(|c| GemmDescriptor {
            layer_id: le_u16(c),
            m: le_u32(&c[2..]),
            k: le_u32(&c[6..]),
            n: le_u32(&c[10..]),
        })
        .collect();
    let trace = AccessTrace {
        pixel_count,
        layout,
        accesses,
        gemms,
    };
    trace
        .validate()
        .map_err(|e| SimError::Format(e.to_string()))?;
    Ok(trace)
}
