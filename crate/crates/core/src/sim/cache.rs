use super::HwConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheOutcome {
    Hit,
    Miss,
}

/// Direct-mapped cache holding one line per set.
#[derive(Debug, Clone)]
pub struct GridCache {
    line_bytes: u64,
    /// Resident line of each set.
    lines: Vec<u64>,
}

const EMPTY: u64 = u64::MAX;

impl GridCache {
    pub fn new(config: &HwConfig) -> Self {
        Self {
            line_bytes: config.cache_line_bytes as u64,
            lines: vec![EMPTY; config.num_lines() as usize],
        }
    }

    /// Standard lookup of a byte address: set = line address mod set count.
    /// Installs the line on a miss.
    #[inline]
    pub fn access(&mut self, address: u64) -> CacheOutcome {
        let line = address / self.line_bytes;
        self.access_line(line, line)
    }

    /// Looks up `line` in the set selected by `index_line mod set count`.
    #[inline]
    pub fn access_line(&mut self, index_line: u64, line: u64) -> CacheOutcome {
        let set = (index_line % self.lines.len() as u64) as usize;
        if self.lines[set] == line {
            CacheOutcome::Hit
        } else {
            self.lines[set] = line;
            CacheOutcome::Miss
        }
    }

    pub fn clear(&mut self) {
        self.lines.fill(EMPTY);
    }
}
