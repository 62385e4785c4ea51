use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Nanos;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid cost model: {0}")]
    Invalid(&'static str),
}

/// Latency and bandwidth constants of the simulated SSD and host.
///
/// Channel count, page size and per-channel IOPS are the prototype's stated
/// figures; the rest are calibration defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    pub channels: u32,
    pub page_size: u64,
    /// Channel occupancy of one flash page read.
    pub t_page_read: Nanos,
    /// Host interface bandwidth in bytes per nanosecond (3.0 = 3 GB/s).
    pub pcie_bytes_per_ns: f64,
    /// Host-side cost to submit and reap one command.
    pub t_cmd_overhead: Nanos,
    /// SSD CPU time per (input, result) pair during config processing.
    pub t_cfg_per_pair: Nanos,
    /// SSD CPU time to process one completed page: fixed part.
    pub t_translate_base: Nanos,
    /// SSD CPU time per stored byte extracted and accumulated.
    pub t_translate_per_byte: f64,
    /// Host CPU accumulation is this many times faster than the SSD CPU.
    pub host_accum_speedup: f64,
    /// Latency of a page served from the SSD page cache.
    pub t_cache_hit: Nanos,
    /// Capacity of the SSD page cache in pages.
    pub page_cache_pages: usize,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            channels: 8,
            page_size: 16384,
            t_page_read: 100_000,
            pcie_bytes_per_ns: 3.0,
            t_cmd_overhead: 10_000,
            t_cfg_per_pair: 300,
            t_translate_base: 12_000,
            t_translate_per_byte: 16.0,
            host_accum_speedup: 10.0,
            t_cache_hit: 1_000,
            page_cache_pages: 256,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.channels == 0 {
            return Err(ConfigError::Invalid("channels must be at least 1"));
        }
        if self.page_size == 0 {
            return Err(ConfigError::Invalid("page_size must be positive"));
        }
        if !(self.pcie_bytes_per_ns > 0.0) {
            return Err(ConfigError::Invalid("pcie_bytes_per_ns must be positive"));
        }
        if !(self.host_accum_speedup > 0.0) {
            return Err(ConfigError::Invalid("host_accum_speedup must be positive"));
        }
        if !(self.t_translate_per_byte >= 0.0) {
            return Err(ConfigError::Invalid("t_translate_per_byte must be >= 0"));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let c: CostModel = toml::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let s = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("cost model serializes")
    }

    /// Blocks moved for a transfer of `bytes` (at least one).
    pub fn blocks_for(&self, bytes: u64) -> u64 {
        bytes.div_ceil(self.page_size).max(1)
    }

    /// Time on the host interface for `bytes`, padded to whole blocks.
    pub fn dma_time(&self, bytes: u64) -> Nanos {
        let padded = self.blocks_for(bytes) * self.page_size;
        (padded as f64 / self.pcie_bytes_per_ns).round() as Nanos
    }

    /// SSD CPU time to extract and accumulate `vectors` vectors of `bytes` each.
    pub fn translate_time(&self, vectors: u64, bytes_per_vector: u64) -> Nanos {
        if vectors == 0 {
            return 0;
        }
        self.t_translate_base
            + (self.t_translate_per_byte * (vectors * bytes_per_vector) as f64).round() as Nanos
    }

    /// Host CPU time to accumulate `vectors` vectors of `bytes` each.
    pub fn host_accum_time(&self, vectors: u64, bytes_per_vector: u64) -> Nanos {
        let bytes = (vectors * bytes_per_vector) as f64;
        (bytes * self.t_translate_per_byte / self.host_accum_speedup).round() as Nanos
    }

    /// Analytic sequential-read bandwidth in bytes per nanosecond (= GB/s).
    pub fn peak_read_bandwidth(&self) -> f64 {
        self.channels as f64 * self.page_size as f64 / self.t_page_read as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dma_examples() {
        let c = CostModel::default();
        assert_eq!(c.dma_time(16384), 5461);
        // padded to one block
        assert_eq!(c.dma_time(100), 5461);
        assert_eq!(c.dma_time(16385), 10923);
    }

    #[test]
    fn translate_example() {
        let c = CostModel::default();
        assert_eq!(c.translate_time(1, 128), 14_048);
        assert_eq!(c.host_accum_time(80, 128), 16_384);
        assert_eq!(c.translate_time(0, 128), 0);
    }

    #[test]
    fn peak_bandwidth() {
        let bw = CostModel::default().peak_read_bandwidth();
        assert!((bw - 1.31072).abs() < 1e-9);
    }

    #[test]
    fn toml_round_trip_and_partial() {
        let c = CostModel::default();
        assert_eq!(CostModel::from_toml_str(&c.to_toml_string()).unwrap(), c);
        let partial = CostModel::from_toml_str("channels = 4\nt_page_read = 50000\n").unwrap();
        assert_eq!(partial.channels, 4);
        assert_eq!(partial.page_size, 16384);
        assert!(CostModel::from_toml_str("channels = 0").is_err());
        assert!(CostModel::from_toml_str("bogus = 1").is_err());
    }
}
