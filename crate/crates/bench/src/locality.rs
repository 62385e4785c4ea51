//! Trace locality analysis: per-block reuse curves and set-associative LRU
//! cache characterization.

use std::collections::HashMap;

use recssd_core::table::LayoutMode;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LocalityError {
    #[error("empty trace")]
    EmptyTrace,
    #[error("{what} must be positive")]
    Zero { what: &'static str },
    #[error("capacity {capacity} is not a multiple of ways x line ({unit} bytes)")]
    Capacity { capacity: u64, unit: u64 },
}

/// Where a row lives on the storage medium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AddressMap {
    pub vector_bytes: u64,
    pub page_size: u64,
    pub layout: LayoutMode,
}

impl AddressMap {
    pub fn new(vector_bytes: u64, page_size: u64, layout: LayoutMode) -> Self {
        AddressMap {
            vector_bytes,
            page_size,
            layout,
        }
    }

    /// Byte address of the first byte of `id`.
    pub fn byte_addr(&self, id: u64) -> u64 {
        match self.layout {
            LayoutMode::OnePerPage => id * self.page_size,
            LayoutMode::Packed => {
                let per_page = (self.page_size / self.vector_bytes).max(1);
                (id / per_page) * self.page_size + (id % per_page) * self.vector_bytes
            }
        }
    }

    pub fn block(&self, id: u64, granularity: u64) -> u64 {
        self.byte_addr(id) / granularity
    }
}

/// Cumulative hit-count curve over blocks sorted by ascending hit count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReuseCdf {
    pub granularity: u64,
    /// `cumulative[i]` = hits on the `i + 1` least-used blocks.
    pub cumulative: Vec<u64>,
}

impl ReuseCdf {
    pub fn blocks(&self) -> usize {
        self.cumulative.len()
    }

    pub fn total(&self) -> u64 {
        self.cumulative.last().copied().unwrap_or(0)
    }

    /// Share of all hits that land on the hottest `fraction` of blocks.
    pub fn top_share(&self, fraction: f64) -> f64 {
        let n = self.blocks();
        let top = ((n as f64 * fraction).ceil() as usize).min(n);
        if top == 0 || self.total() == 0 {
            return 0.0;
        }
        let below = if top == n {
            0
        } else {
            self.cumulative[n - top - 1]
        };
        (self.total() - below) as f64 / self.total() as f64
    }

    /// Gini coefficient of the per-block hit counts: 0 for a uniform trace,
    /// approaching 1 when a few blocks take all hits. Reported as the curve's
    /// concavity index.
    pub fn concavity(&self) -> f64 {
        let n = self.blocks() as f64;
        let total = self.total() as f64;
        if n <= 1.0 || total == 0.0 {
            return 0.0;
        }
        // area under the normalized Lorenz curve by the trapezoid rule
        let mut area = 0.0;
        let mut prev = 0.0;
        for &c in &self.cumulative {
            let y = c as f64 / total;
            area += (prev + y) / 2.0 / n;
            prev = y;
        }
        1.0 - 2.0 * area
    }
}

/// Count accesses per `granularity`-byte block and return the sorted
/// cumulative curve.
pub fn reuse_cdf(
    ids: &[u64],
    granularity: u64,
    map: &AddressMap,
) -> Result<ReuseCdf, LocalityError> {
    if ids.is_empty() {
        return Err(LocalityError::EmptyTrace);
    }
    if granularity == 0 {
        return Err(LocalityError::Zero {
            what: "granularity",
        });
    }
    let mut counts: HashMap<u64, u64> = HashMap::new();
    for &id in ids {
        *counts.entry(map.block(id, granularity)).or_default() += 1;
    }
    let mut c: Vec<u64> = counts.into_values().collect();
    c.sort_unstable();
    let mut acc = 0;
    let cumulative = c
        .into_iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect();
    Ok(ReuseCdf {
        granularity,
        cumulative,
    })
}

/// Set-associative cache with true LRU replacement inside each set.
#[derive(Debug, Clone)]
pub struct SetAssocCache {
    ways: usize,
    sets: Vec<Vec<(u64, u64)>>,
    clock: u64,
    pub hits: u64,
    pub accesses: u64,
}

impl SetAssocCache {
    pub fn new(num_sets: usize, ways: usize) -> Self {
        SetAssocCache {
            ways,
            sets: vec![Vec::with_capacity(ways); num_sets],
            clock: 0,
            hits: 0,
            accesses: 0,
        }
    }

    /// Touch `line`; returns whether it hit.
    pub fn access(&mut self, line: u64) -> bool {
        self.clock += 1;
        self.accesses += 1;
        let idx = (line % self.sets.len() as u64) as usize;
        let set = &mut self.sets[idx];
        if let Some(e) = set.iter_mut().find(|e| e.0 == line) {
            e.1 = self.clock;
            self.hits += 1;
            return true;
        }
        if set.len() < self.ways {
            set.push((line, self.clock));
        } else {
            let victim = set
                .iter_mut()
                .min_by_key(|e| e.1)
                .expect("full set is non-empty");
            *victim = (line, self.clock);
        }
        false
    }

    pub fn hit_rate(&self) -> f64 {
        if self.accesses == 0 {
            0.0
        } else {
            self.hits as f64 / self.accesses as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CachePoint {
    pub capacity_bytes: u64,
    pub hit_rate: f64,
}

/// Hit rate of a `ways`-way LRU cache of `line`-byte lines at each capacity.
pub fn lru_characterize(
    ids: &[u64],
    map: &AddressMap,
    ways: usize,
    line: u64,
    capacities: &[u64],
) -> Result<Vec<CachePoint>, LocalityError> {
    if ids.is_empty() {
        return Err(LocalityError::EmptyTrace);
    }
    if ways == 0 || line == 0 {
        return Err(LocalityError::Zero {
            what: "ways and line",
        });
    }
    let unit = ways as u64 * line;
    let lines: Vec<u64> = ids.iter().map(|&id| map.block(id, line)).collect();
    capacities
        .iter()
        .map(|&capacity| {
            if capacity == 0 || capacity % unit != 0 {
                return Err(LocalityError::Capacity { capacity, unit });
            }
            let mut c = SetAssocCache::new((capacity / unit) as usize, ways);
            for &l in &lines {
                c.access(l);
            }
            Ok(CachePoint {
                capacity_bytes: capacity,
                hit_rate: c.hit_rate(),
            })
        })
        .collect()
}

/// Powers of two from `lo` to `hi` inclusive.
pub fn pow2_range(lo: u64, hi: u64) -> Vec<u64> {
    std::iter::successors(Some(lo), |&c| c.checked_mul(2))
        .take_while(|&c| c <= hi)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAGE: u64 = 16384;

    fn packed(vb: u64) -> AddressMap {
        AddressMap::new(vb, PAGE, LayoutMode::Packed)
    }

    #[test]
    fn packed_addresses_never_straddle_pages() {
        let m = packed(100);
        // 163 vectors fit per page
        assert_eq!(m.byte_addr(162), 16200);
        assert_eq!(m.byte_addr(163), PAGE);
        let o = AddressMap::new(100, PAGE, LayoutMode::OnePerPage);
        assert_eq!(o.byte_addr(3), 3 * PAGE);
    }

    #[test]
    fn uniform_trace_gives_linear_curve() {
        let ids: Vec<u64> = (0..64).flat_map(|i| [i * 128; 5]).collect();
        let c = reuse_cdf(&ids, 4096, &packed(128)).unwrap();
        assert_eq!(c.blocks(), 64);
        assert!(c
            .cumulative
            .iter()
            .enumerate()
            .all(|(i, &y)| y == 5 * (i as u64 + 1)));
        assert!(c.concavity().abs() < 1e-12);
    }

    #[test]
    fn single_hot_id_steps_at_the_end() {
        let mut ids: Vec<u64> = (0..10).map(|i| i * 1000).collect();
        ids.extend([7; 90]);
        let c = reuse_cdf(&ids, 256, &packed(128)).unwrap();
        let n = c.blocks();
        assert_eq!(c.cumulative[n - 2], 10);
        assert_eq!(c.total(), 100);
        assert!(c.top_share(0.1) > 0.9);
    }

    #[test]
    fn full_capacity_captures_all_reuse() {
        let ids: Vec<u64> = (0..1000).map(|i| (i * 7919) % 300).collect();
        let map = AddressMap::new(128, PAGE, LayoutMode::OnePerPage);
        // one page per row spans four lines, so only every fourth set is used
        let pts = lru_characterize(&ids, &map, 16, 4096, &[16 * 4096 * 1024]).unwrap();
        let unique = ids.iter().collect::<std::collections::HashSet<_>>().len();
        let want = 1.0 - unique as f64 / ids.len() as f64;
        assert!((pts[0].hit_rate - want).abs() < 0.01);
    }

    #[test]
    fn cycling_trace_thrashes_one_set() {
        let map = AddressMap::new(4096, 4096, LayoutMode::Packed);
        let ids: Vec<u64> = (0..2000).map(|i| i % 17).collect();
        let pts = lru_characterize(&ids, &map, 16, 4096, &[16 * 4096]).unwrap();
        assert_eq!(pts[0].hit_rate, 0.0);
    }

    #[test]
    fn capacity_must_be_whole_sets() {
        let map = packed(128);
        assert_eq!(
            lru_characterize(&[1], &map, 16, 4096, &[4096]),
            Err(LocalityError::Capacity {
                capacity: 4096,
                unit: 65536
            })
        );
        assert_eq!(pow2_range(64 << 10, 16 << 20).len(), 9);
    }
}
