//! Synthetic lookup traces with controllable temporal locality.
//!
//! Each lookup either reuses an id already in the trace's LRU stack or draws
//! a fresh id uniformly from the id space. A reuse picks a stack depth from
//! an exponential truncated to the current stack height (capped at
//! [`MAX_STACK_DEPTH`]) and moves that id to the top. The locality knob `K`
//! selects the reuse probability and the mean depth from [`LOCALITY_TABLE`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SimRng;
use crate::sls::SlsJob;
use crate::table::TableLayout;

/// Deepest stack position a reuse can reach.
pub const MAX_STACK_DEPTH: u64 = 65_536;

/// One calibrated locality point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalityPoint {
    pub k: f64,
    /// Probability that a lookup reuses an id from the stack.
    pub reuse_prob: f64,
    /// Mean of the (untruncated) exponential over stack depth.
    pub mean_depth: f64,
}

/// Calibrated constants for K = 0, 1, 2.
///
/// `reuse_prob` was fixed by bisection (see [`calibrate_reuse_prob`]) so that
/// 100k lookups over a 1M-row id space give 13%, 54% and 72% unique ids,
/// averaged over 8 seeds.
pub const LOCALITY_TABLE: [LocalityPoint; 3] = [
    LocalityPoint {
        k: 0.0,
        reuse_prob: 0.8706,
        mean_depth: 512.0,
    },
    LocalityPoint {
        k: 1.0,
        reuse_prob: 0.4583,
        mean_depth: 512.0,
    },
    LocalityPoint {
        k: 2.0,
        reuse_prob: 0.2767,
        mean_depth: 512.0,
    },
];

/// Parameters at locality `k`: linear interpolation between table points,
/// clamped to the end points outside `[0, 2]`.
pub fn locality_params(k: f64) -> LocalityPoint {
    let t = &LOCALITY_TABLE;
    if k <= t[0].k {
        return LocalityPoint { k, ..t[0] };
    }
    for w in t.windows(2) {
        if k <= w[1].k {
            let f = (k - w[0].k) / (w[1].k - w[0].k);
            return LocalityPoint {
                k,
                reuse_prob: w[0].reuse_prob + f * (w[1].reuse_prob - w[0].reuse_prob),
                mean_depth: w[0].mean_depth + f * (w[1].mean_depth - w[0].mean_depth),
            };
        }
    }
    LocalityPoint {
        k,
        ..t[t.len() - 1]
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("id space is empty")]
    EmptyIdSpace,
    #[error("indices per bag, bags per job and job count must all be at least 1")]
    EmptyShape,
    #[error("locality parameter must be a non-negative finite number, got {0}")]
    BadK(f64),
    #[error("stride {stride} maps consecutive lookups onto one page ({vectors_per_page} vectors per page)")]
    StrideTooSmall { stride: u64, vectors_per_page: u64 },
    #[error("bad trace file: {0}")]
    BadFile(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSpec {
    pub k: f64,
    pub id_space: u64,
    pub indices_per_bag: u32,
    pub bags_per_job: u32,
    pub num_jobs: u32,
    pub seed: u64,
    #[serde(default)]
    pub table_id: u32,
}

impl TraceSpec {
    pub fn num_lookups(&self) -> u64 {
        self.indices_per_bag as u64 * self.bags_per_job as u64 * self.num_jobs as u64
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        if self.id_space == 0 {
            return Err(TraceError::EmptyIdSpace);
        }
        if self.indices_per_bag == 0 || self.bags_per_job == 0 || self.num_jobs == 0 {
            return Err(TraceError::EmptyShape);
        }
        if !self.k.is_finite() || self.k < 0.0 {
            return Err(TraceError::BadK(self.k));
        }
        Ok(())
    }

    /// A flat stream of `lookups` ids shaped as one bag per lookup group.
    pub fn flat(k: f64, id_space: u64, lookups: u32, seed: u64) -> Self {
        TraceSpec {
            k,
            id_space,
            indices_per_bag: lookups,
            bags_per_job: 1,
            num_jobs: 1,
            seed,
            table_id: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LookupTrace {
    pub spec: TraceSpec,
    pub jobs: Vec<SlsJob>,
    pub unique_fraction: f64,
}

impl LookupTrace {
    /// All ids in emission order.
    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.jobs.iter().flat_map(|j| j.all_ids())
    }

    pub fn len(&self) -> usize {
        self.jobs.iter().map(|j| j.total_inputs).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn from_ids(spec: TraceSpec, ids: Vec<u64>) -> Self {
        let unique_fraction = unique_fraction(&ids);
        let l = spec.indices_per_bag as usize;
        let b = spec.bags_per_job as usize;
        let jobs = ids
            .chunks(l * b)
            .map(|job| SlsJob::new(spec.table_id, job.chunks(l).map(<[u64]>::to_vec).collect()))
            .collect();
        LookupTrace {
            spec,
            jobs,
            unique_fraction,
        }
    }

    /// Binary form: magic `RTRC`, version u32, then the spec fields
    /// (`k f64, id_space u64, L u32, B u32, jobs u32, seed u64, table u32`),
    /// then `num_lookups` ids as `u32`, all little-endian.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), TraceError> {
        let s = &self.spec;
        w.write_all(b"RTRC")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&s.k.to_le_bytes())?;
        w.write_all(&s.id_space.to_le_bytes())?;
        w.write_all(&s.indices_per_bag.to_le_bytes())?;
        w.write_all(&s.bags_per_job.to_le_bytes())?;
        w.write_all(&s.num_jobs.to_le_bytes())?;
        w.write_all(&s.seed.to_le_bytes())?;
        w.write_all(&s.table_id.to_le_bytes())?;
        for id in self.ids() {
            let id = u32::try_from(id).map_err(|_| TraceError::BadFile("id exceeds u32"))?;
            w.write_all(&id.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, TraceError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"RTRC" {
            return Err(TraceError::BadFile("magic"));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        let mut u32_ = |r: &mut R| -> io::Result<u32> {
            r.read_exact(&mut b4)?;
            Ok(u32::from_le_bytes(b4))
        };
        if u32_(&mut r)? != 1 {
            return Err(TraceError::BadFile("version"));
        }
        r.read_exact(&mut b8)?;
        let k = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let id_space = u64::from_le_bytes(b8);
        let indices_per_bag = u32_(&mut r)?;
        let bags_per_job = u32_(&mut r)?;
        let num_jobs = u32_(&mut r)?;
        r.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        let table_id = u32_(&mut r)?;
        let spec = TraceSpec {
            k,
            id_space,
            indices_per_bag,
            bags_per_job,
            num_jobs,
            seed,
            table_id,
        };
        spec.validate()?;
        let n = spec.num_lookups() as usize;
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            ids.push(u32_(&mut r)? as u64);
        }
        Ok(LookupTrace::from_ids(spec, ids))
    }
}

pub fn unique_fraction(ids: &[u64]) -> f64 {
    if ids.is_empty() {
        return 0.0;
    }
    let distinct: HashSet<u64> = ids.iter().copied().collect();
    distinct.len() as f64 / ids.len() as f64
}

/// LRU stack with O(log n) depth queries.
///
/// Each access gets a fresh timestamp; the stack order is descending
/// timestamp. A Fenwick tree over timestamps marks which are live, so the
/// id at depth `d` is the live timestamp of rank `d` from the newest.
struct LruStack {
    tree: Vec<u32>,
    live: u64,
    by_time: Vec<u64>,
    time_of: HashMap<u64, usize>,
    now: usize,
}

impl LruStack {
    fn new(capacity: usize) -> Self {
        LruStack {
            tree: vec![0; capacity + 1],
            live: 0,
            by_time: vec![0; capacity],
            time_of: HashMap::new(),
            now: 0,
        }
    }

    fn add(&mut self, t: usize, delta: i32) {
        let mut i = t + 1;
        while i < self.tree.len() {
            self.tree[i] = (self.tree[i] as i64 + delta as i64) as u32;
            i += i & i.wrapping_neg();
        }
    }

    /// Timestamp of the `rank`-th live entry counted from the oldest (0-based).
    fn select(&self, mut rank: u32) -> usize {
        let mut pos = 0usize;
        let mut step = self.tree.len().next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next < self.tree.len() && self.tree[next] <= rank {
                rank -= self.tree[next];
                pos = next;
            }
            step >>= 1;
        }
        pos
    }

    fn at_depth(&self, depth: u64) -> u64 {
        let rank = (self.live - 1 - depth) as u32;
        self.by_time[self.select(rank)]
    }

    fn touch(&mut self, id: u64) {
        if let Some(old) = self.time_of.insert(id, self.now) {
            self.add(old, -1);
        } else {
            self.live += 1;
        }
        self.by_time[self.now] = id;
        self.add(self.now, 1);
        self.now += 1;
    }
}

/// Draw a depth in `[0, height)` with P(d) proportional to exp(-d / mean).
fn truncated_exponential(rng: &mut SimRng, mean: f64, height: u64) -> u64 {
    let u = rng.unit();
    let tail = (-(height as f64) / mean).exp();
    let d = (-mean * (1.0 - u * (1.0 - tail)).ln()).floor();
    (d.max(0.0) as u64).min(height - 1)
}

/// Emit the id stream for a spec, with explicit locality parameters.
pub fn generate_ids_with(spec: &TraceSpec, params: LocalityPoint) -> Result<Vec<u64>, TraceError> {
    spec.validate()?;
    let n = spec.num_lookups() as usize;
    let mut rng = SimRng::new(spec.seed);
    let mut stack = LruStack::new(n);
    let cap = spec.id_space.min(MAX_STACK_DEPTH);
    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        let reuse = stack.live > 0 && rng.unit() < params.reuse_prob;
        let id = if reuse {
            let height = stack.live.min(cap);
            stack.at_depth(truncated_exponential(&mut rng, params.mean_depth, height))
        } else {
            rng.below(spec.id_space)
        };
        stack.touch(id);
        ids.push(id);
    }
    Ok(ids)
}

pub fn generate_trace(spec: &TraceSpec) -> Result<LookupTrace, TraceError> {
    let ids = generate_ids_with(spec, locality_params(spec.k))?;
    Ok(LookupTrace::from_ids(spec.clone(), ids))
}

/// Consecutive ids `start, start+1, ...`, wrapping at `id_space`.
pub fn seq_trace(
    n: u32,
    start: u64,
    id_space: u64,
    bags_per_job: u32,
    indices_per_bag: u32,
) -> Result<LookupTrace, TraceError> {
    if id_space == 0 {
        return Err(TraceError::EmptyIdSpace);
    }
    let ids = (0..n as u64).map(|i| (start + i) % id_space).collect();
    Ok(LookupTrace::from_ids(
        pattern_spec(n, id_space, bags_per_job, indices_per_bag),
        ids,
    ))
}

/// Ids `i * stride mod id_space`; every lookup lands on its own page until
/// the stream wraps.
pub fn str_trace(
    n: u32,
    stride: u64,
    layout: &TableLayout,
    bags_per_job: u32,
    indices_per_bag: u32,
) -> Result<LookupTrace, TraceError> {
    if stride < layout.vectors_per_page {
        return Err(TraceError::StrideTooSmall {
            stride,
            vectors_per_page: layout.vectors_per_page,
        });
    }
    let id_space = layout.num_rows;
    let ids = (0..n as u64).map(|i| (i * stride) % id_space).collect();
    Ok(LookupTrace::from_ids(
        pattern_spec(n, id_space, bags_per_job, indices_per_bag),
        ids,
    ))
}

fn pattern_spec(n: u32, id_space: u64, bags_per_job: u32, indices_per_bag: u32) -> TraceSpec {
    let per_job = (bags_per_job * indices_per_bag).max(1);
    TraceSpec {
        k: 0.0,
        id_space,
        indices_per_bag,
        bags_per_job,
        num_jobs: n.div_ceil(per_job),
        seed: 0,
        table_id: 0,
    }
}

/// Access counts per id.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceProfile {
    pub counts: BTreeMap<u64, u64>,
    /// Ids by descending count, ties by ascending id.
    pub hot: Vec<u64>,
    pub total: u64,
}

impl TraceProfile {
    /// Fraction of lookups covered by the hottest `fraction` of distinct ids.
    pub fn top_share(&self, fraction: f64) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let n = ((self.hot.len() as f64 * fraction).ceil() as usize).min(self.hot.len());
        let covered: u64 = self.hot[..n].iter().map(|id| self.counts[id]).sum();
        covered as f64 / self.total as f64
    }
}

pub fn profile_ids<I: IntoIterator<Item = u64>>(ids: I) -> TraceProfile {
    let mut counts = BTreeMap::new();
    let mut total = 0;
    for id in ids {
        *counts.entry(id).or_insert(0u64) += 1;
        total += 1;
    }
    let mut hot: Vec<u64> = counts.keys().copied().collect();
    hot.sort_by(|a, b| counts[b].cmp(&counts[a]).then(a.cmp(b)));
    TraceProfile { counts, hot, total }
}

pub fn profile_trace(trace: &LookupTrace) -> TraceProfile {
    profile_ids(trace.ids())
}

/// Human-readable summary: unique fraction and count percentiles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceStats {
    pub lookups: u64,
    pub distinct: u64,
    pub unique_fraction: f64,
    pub top1_share: f64,
    pub top10_share: f64,
    pub count_p50: u64,
    pub count_p90: u64,
    pub count_p99: u64,
    pub count_max: u64,
}

pub fn trace_stats(trace: &LookupTrace) -> TraceStats {
    let p = profile_trace(trace);
    let mut counts: Vec<u64> = p.counts.values().copied().collect();
    counts.sort_unstable();
    let pct = |q: f64| -> u64 {
        if counts.is_empty() {
            0
        } else {
            counts[((counts.len() - 1) as f64 * q).round() as usize]
        }
    };
    TraceStats {
        lookups: p.total,
        distinct: p.hot.len() as u64,
        unique_fraction: trace.unique_fraction,
        top1_share: p.top_share(0.01),
        top10_share: p.top_share(0.10),
        count_p50: pct(0.5),
        count_p90: pct(0.9),
        count_p99: pct(0.99),
        count_max: counts.last().copied().unwrap_or(0),
    }
}

/// Bisection for the reuse probability that yields `target` unique fraction,
/// averaged over `seeds` traces of `lookups` ids over `id_space`.
pub fn calibrate_reuse_prob(
    target: f64,
    mean_depth: f64,
    id_space: u64,
    lookups: u32,
    seeds: &[u64],
) -> f64 {
    let measure = |p: f64| -> f64 {
        let params = LocalityPoint {
            k: 0.0,
            reuse_prob: p,
            mean_depth,
        };
        let total: f64 = seeds
            .iter()
            .map(|&s| {
                let ids = generate_ids_with(&TraceSpec::flat(0.0, id_space, lookups, s), params)
                    .expect("valid calibration spec");
                unique_fraction(&ids)
            })
            .sum();
        total / seeds.len() as f64
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        // unique fraction falls as reuse probability rises
        if measure(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{AttrSize, EmbeddingTable, LayoutMode};

    #[test]
    fn lru_stack_depths() {
        let mut s = LruStack::new(16);
        for id in [10, 20, 30] {
            s.touch(id);
        }
        assert_eq!(s.at_depth(0), 30);
        assert_eq!(s.at_depth(2), 10);
        s.touch(10);
        assert_eq!(s.live, 3);
        assert_eq!(s.at_depth(0), 10);
        assert_eq!(s.at_depth(1), 30);
        assert_eq!(s.at_depth(2), 20);
    }

    #[test]
    fn lru_stack_matches_naive() {
        let mut rng = SimRng::new(1);
        let mut s = LruStack::new(5000);
        let mut naive: Vec<u64> = Vec::new();
        for _ in 0..5000 {
            let id = if !naive.is_empty() && rng.unit() < 0.5 {
                let d = rng.below(naive.len() as u64);
                assert_eq!(s.at_depth(d), naive[d as usize]);
                naive[d as usize]
            } else {
                rng.below(300)
            };
            naive.retain(|&x| x != id);
            naive.insert(0, id);
            s.touch(id);
            assert_eq!(s.live as usize, naive.len());
        }
    }

    #[test]
    fn single_id_space() {
        let spec = TraceSpec::flat(1.0, 1, 1000, 3);
        let t = generate_trace(&spec).unwrap();
        assert!(t.ids().all(|id| id == 0));
        assert_eq!(t.unique_fraction, 1.0 / 1000.0);
    }

    #[test]
    fn empty_id_space_rejected() {
        let spec = TraceSpec::flat(0.0, 0, 10, 3);
        assert!(matches!(
            generate_trace(&spec),
            Err(TraceError::EmptyIdSpace)
        ));
    }

    #[test]
    fn deterministic() {
        let spec = TraceSpec {
            k: 1.0,
            id_space: 5000,
            indices_per_bag: 20,
            bags_per_job: 4,
            num_jobs: 10,
            seed: 77,
            table_id: 2,
        };
        let a = generate_trace(&spec).unwrap();
        let b = generate_trace(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.jobs.len(), 10);
        assert!(a.jobs.iter().all(|j| j.bags.len() == 4 && j.table_id == 2));
        assert!(a.ids().all(|id| id < 5000));
    }

    #[test]
    fn interpolation() {
        let p = locality_params(0.5);
        let mid = 0.5 * (LOCALITY_TABLE[0].reuse_prob + LOCALITY_TABLE[1].reuse_prob);
        assert!((p.reuse_prob - mid).abs() < 1e-12);
        assert_eq!(
            locality_params(7.0).reuse_prob,
            LOCALITY_TABLE[2].reuse_prob
        );
    }

    #[test]
    fn seq_pattern() {
        let t = seq_trace(4, 10, 100, 1, 4).unwrap();
        assert_eq!(t.ids().collect::<Vec<_>>(), vec![10, 11, 12, 13]);
    }

    #[test]
    fn str_pattern_unique_pages() {
        let table = EmbeddingTable::seeded(0, 1 << 20, 32, AttrSize::Four, 1).unwrap();
        let layout = TableLayout::build(&table, LayoutMode::Packed, 16384, 0, 1 << 20).unwrap();
        let t = str_trace(3, 128, &layout, 1, 3).unwrap();
        let pages: Vec<u64> = t.ids().map(|id| layout.page_of(id)).collect();
        assert_eq!(pages, vec![0, 1, 2]);

        // 8192 pages: 10k lookups wrap once
        let t = str_trace(10_000, 128, &layout, 1, 100).unwrap();
        let distinct: HashSet<u64> = t.ids().map(|id| layout.page_of(id)).collect();
        assert_eq!(distinct.len() as u64, layout.num_pages().min(10_000));
        let big = EmbeddingTable::seeded(0, 1 << 21, 32, AttrSize::Four, 1).unwrap();
        let big = TableLayout::build(&big, LayoutMode::Packed, 16384, 0, 1 << 20).unwrap();
        let t = str_trace(10_000, 128, &big, 1, 100).unwrap();
        let distinct: HashSet<u64> = t.ids().map(|id| big.page_of(id)).collect();
        assert_eq!(distinct.len(), 10_000);

        assert!(matches!(
            str_trace(3, 64, &layout, 1, 3),
            Err(TraceError::StrideTooSmall { .. })
        ));
    }

    #[test]
    fn profile_small() {
        let p = profile_ids([1, 1, 2]);
        assert_eq!(p.counts[&1], 2);
        assert_eq!(p.counts[&2], 1);
        assert_eq!(p.hot, vec![1, 2]);
        assert_eq!(p.total, 3);
    }

    #[test]
    fn profile_ties_ascending() {
        let p = profile_ids([3, 2, 3, 2, 1]);
        assert_eq!(p.hot, vec![2, 3, 1]);
    }

    #[test]
    fn uniform_histogram_is_flat() {
        // no reuse: every lookup is a fresh uniform draw
        let params = LocalityPoint {
            k: 0.0,
            reuse_prob: 0.0,
            mean_depth: 1.0,
        };
        let spec = TraceSpec::flat(0.0, 1000, 100_000, 8);
        let ids = generate_ids_with(&spec, params).unwrap();
        let p = profile_ids(ids);
        let max = *p.counts.values().max().unwrap() as f64;
        let min = *p.counts.values().min().unwrap() as f64;
        assert_eq!(p.counts.len(), 1000);
        assert!(max / min <= 2.0, "max {max} min {min}");
        let expected = 100.0;
        let chi2: f64 = p
            .counts
            .values()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 999 degrees of freedom; 99.9th percentile is about 1143
        assert!(chi2 < 1143.0, "chi2 {chi2}");
    }

    #[test]
    fn file_round_trip() {
        let spec = TraceSpec {
            k: 2.0,
            id_space: 900,
            indices_per_bag: 3,
            bags_per_job: 2,
            num_jobs: 5,
            seed: 4,
            table_id: 1,
        };
        let t = generate_trace(&spec).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 8 + 8 + 4 * 3 + 8 + 4 + 30 * 4);
        assert_eq!(LookupTrace::read_from(buf.as_slice()).unwrap(), t);
    }
}
