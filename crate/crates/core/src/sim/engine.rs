use std::collections::HashMap;
use std::sync::Arc;

use super::{gemm_cycles, AccessTrace, CacheOutcome, GridCache, HwConfig, SimError, SimReport};
use crate::policy::QuantPolicy;

/// Encoding-stage results, which depend on the policy only through the
/// per-level entry sizes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EncodingStats {
    pub encoding_cycles: u64,
    pub prefetch_cycles: u64,
    pub prefetch_bytes: u64,
    pub hits: u64,
    pub misses: u64,
}

/// Start of every level's table when entries are `entry_bytes` wide. Tables
/// are laid out back to back and aligned to cache lines.
fn level_bases(trace: &AccessTrace, config: &HwConfig, entry_bytes: u32) -> Vec<u64> {
    let line = config.cache_line_bytes as u64;
    let mut bases = Vec::with_capacity(trace.level_count());
    let mut next = 0u64;
    for &entries in &trace.layout.level_entries {
        bases.push(next);
        next += (entries as u64 * entry_bytes as u64).next_multiple_of(line);
    }
    bases
}

fn entry_bytes(trace: &AccessTrace, policy: &QuantPolicy) -> Vec<u32> {
    policy
        .hash_bits
        .iter()
        .map(|&b| trace.layout.entry_bytes(b))
        .collect()
}

/// Replays the hash accesses.
///
/// A coarse entry lives in line `tag_base(l) + floor(i * entry_bytes(l) / line)`
/// of a table region sized for 8-bit entries, so changing one level's width
/// never moves another level. The cache set is chosen by the entry's line in
/// the narrowest (1-bit) layout. Narrowing a level therefore only merges lines
/// that already share a set, which can turn misses into hits but never the
/// reverse.
fn encoding_stats(
    trace: &AccessTrace,
    entry_bytes: &[u32],
    config: &HwConfig,
    cache: &mut GridCache,
) -> EncodingStats {
    let split = config.coarse_split(trace.level_count());
    let line = config.cache_line_bytes as u64;
    let narrow = trace.layout.entry_bytes(1);
    let index_bases = level_bases(trace, config, narrow);
    let tag_bases = level_bases(trace, config, trace.layout.entry_bytes(8));
    let miss_cost = config.miss_cycles();
    let tile_pixels = config.subgrid_pixels;

    // Entry `e` of fine level `l` was fetched for the current run of the
    // trace iff `seen[l][e] == run`.
    let mut seen: Vec<Vec<u32>> = trace
        .layout
        .level_entries
        .iter()
        .enumerate()
        .map(|(l, &n)| {
            if l >= split {
                vec![0; n as usize]
            } else {
                Vec::new()
            }
        })
        .collect();
    let mut run = 0u32;
    let mut tile = None;
    let mut run_bytes = 0u64;

    let mut s = EncodingStats::default();
    for a in &trace.accesses {
        let t = a.pixel_id / tile_pixels;
        if tile != Some(t) {
            s.prefetch_cycles += config.transfer_cycles(run_bytes);
            s.prefetch_bytes += run_bytes;
            run_bytes = 0;
            run += 1;
            tile = Some(t);
        }
        let l = a.level as usize;
        let eb = entry_bytes[l] as u64;
        if l < split {
            let index = (index_bases[l] + a.entry as u64 * narrow as u64) / line;
            let tag = (tag_bases[l] + a.entry as u64 * eb) / line;
            match cache.access_line(index, tag) {
                CacheOutcome::Hit => {
                    s.hits += 1;
                    s.encoding_cycles += 1;
                }
                CacheOutcome::Miss => {
                    s.misses += 1;
                    s.encoding_cycles += miss_cost;
                }
            }
        } else {
            s.encoding_cycles += 1;
            let mark = &mut seen[l][a.entry as usize];
            if *mark != run {
                *mark = run;
                run_bytes += eb;
            }
        }
    }
    s.prefetch_cycles += config.transfer_cycles(run_bytes);
    s.prefetch_bytes += run_bytes;
    s
}

fn check_policy(trace: &AccessTrace, policy: &QuantPolicy) -> Result<(), SimError> {
    policy
        .validate()
        .map_err(|e| SimError::UnresolvedUnit(e.to_string()))?;
    if policy.hash_bits.len() != trace.level_count() {
        return Err(SimError::UnresolvedUnit(format!(
            "{} hash levels (policy has {})",
            trace.level_count(),
            policy.hash_bits.len()
        )));
    }
    if trace.layer_count() > policy.mlp_bits.len() {
        return Err(SimError::UnresolvedUnit(format!(
            "{} MLP layers (policy has {})",
            trace.layer_count(),
            policy.mlp_bits.len()
        )));
    }
    Ok(())
}

fn mlp_cycles(trace: &AccessTrace, policy: &QuantPolicy, config: &HwConfig) -> u64 {
    trace
        .gemms
        .iter()
        .map(|g| {
            let b = policy.mlp_bits[g.layer_id as usize];
            gemm_cycles(
                g.m as u64,
                g.k as u64,
                g.n as u64,
                b.activation,
                b.weight,
                config.systolic_dim as u64,
            )
        })
        .sum()
}

fn assemble(trace: &AccessTrace, enc: EncodingStats, mlp: u64, config: &HwConfig) -> SimReport {
    let total = if config.stage_overlap {
        (enc.encoding_cycles + enc.prefetch_cycles).max(mlp)
    } else {
        enc.encoding_cycles + enc.prefetch_cycles + mlp
    };
    let pixels = trace.pixel_count as u64;
    SimReport {
        total_cycles: total,
        encoding_cycles: enc.encoding_cycles,
        mlp_cycles: mlp,
        subgrid_prefetch_cycles: enc.prefetch_cycles,
        subgrid_prefetch_bytes: enc.prefetch_bytes,
        dram_bytes: enc.misses * config.cache_line_bytes as u64 + enc.prefetch_bytes,
        cache_hits: enc.hits,
        cache_misses: enc.misses,
        pixel_count: pixels,
        cycles_per_ray: if pixels == 0 {
            0.0
        } else {
            total as f64 / pixels as f64
        },
    }
}

/// Runs `trace` under `policy` from a cold cache.
pub fn simulate(
    trace: &AccessTrace,
    policy: &QuantPolicy,
    config: &HwConfig,
) -> Result<SimReport, SimError> {
    let mut cache = GridCache::new(config);
    simulate_with_cache(trace, policy, config, &mut cache)
}

/// Like [`simulate`], but starts from and updates the caller's cache.
pub fn simulate_with_cache(
    trace: &AccessTrace,
    policy: &QuantPolicy,
    config: &HwConfig,
    cache: &mut GridCache,
) -> Result<SimReport, SimError> {
    config.validate()?;
    trace.validate()?;
    check_policy(trace, policy)?;
    let enc = encoding_stats(trace, &entry_bytes(trace, policy), config, cache);
    Ok(assemble(
        trace,
        enc,
        mlp_cycles(trace, policy, config),
        config,
    ))
}

/// Cold-cache simulator bound to one trace and config.
///
/// Encoding results are memoized by per-level entry size, so policies that
/// differ only in MLP bits (or in hash bits that round to the same entry
/// size) reuse one cache replay.
#[derive(Debug, Clone)]
pub struct Simulator {
    trace: Arc<AccessTrace>,
    config: HwConfig,
    memo: HashMap<Vec<u32>, EncodingStats>,
}

impl Simulator {
    pub fn new(trace: Arc<AccessTrace>, config: HwConfig) -> Result<Self, SimError> {
        config.validate()?;
        trace.validate()?;
        Ok(Self {
            trace,
            config,
            memo: HashMap::new(),
        })
    }

    pub fn trace(&self) -> &AccessTrace {
        &self.trace
    }

    pub fn config(&self) -> &HwConfig {
        &self.config
    }

    pub fn simulate(&mut self, policy: &QuantPolicy) -> Result<SimReport, SimError> {
        check_policy(&self.trace, policy)?;
        let key = entry_bytes(&self.trace, policy);
        let enc = match self.memo.get(&key) {
            Some(&e) => e,
            None => {
                let mut cache = GridCache::new(&self.config);
                let e = encoding_stats(&self.trace, &key, &self.config, &mut cache);
                self.memo.insert(key, e);
                e
            }
        };
        Ok(assemble(
            &self.trace,
            enc,
            mlp_cycles(&self.trace, policy, &self.config),
            &self.config,
        ))
    }

    /// Report of the all-8-bit policy.
    pub fn baseline(&mut self) -> SimReport {
        let policy = QuantPolicy::uniform(self.trace.level_count(), self.trace.layer_count(), 8);
        self.simulate(&policy)
            .expect("uniform policy covers the trace")
    }

    /// Total cycles of the all-8-bit policy.
    pub fn baseline_cost(&mut self) -> u64 {
        self.baseline().total_cycles
    }
}
