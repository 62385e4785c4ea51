//! Recommendation-model workload definitions and end-to-end runs.

use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flashsim::{check_log, ConfigError, CostModel, Nanos};
use crate::ftl::FtlConfig;
use crate::host::{
    build_partition, Batch, BatchResult, Breakdown, HostConfig, HostError, Method, OpCounters,
    PipelineConfig, Storage, System,
};
use crate::rng::derive_seed;
use crate::sls::SlsJob;
use crate::table::{AttrSize, EmbeddingTable, LayoutMode};
use crate::tracegen::{generate_ids_with, locality_params, LocalityPoint, TraceError, TraceSpec};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Host(#[from] HostError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    EmbeddingDominated,
    MlpDominated,
}

/// Dense compute per batch: `base_ns + per_sample_ns * B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpCost {
    pub base_ns: Nanos,
    pub per_sample_ns: Nanos,
}

impl MlpCost {
    pub fn latency(&self, batch_size: u32) -> Nanos {
        self.base_ns + self.per_sample_ns * batch_size as Nanos
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub tables: u32,
    pub dim: u32,
    pub attr_size: AttrSize,
    pub indices_per_bag: u32,
    #[serde(default = "default_rows")]
    pub rows: u64,
    pub mlp: MlpCost,
    pub category: Category,
    #[serde(default = "default_layout")]
    pub layout: LayoutMode,
}

fn default_rows() -> u64 {
    1_000_000
}

fn default_layout() -> LayoutMode {
    LayoutMode::OnePerPage
}

/// Names of the dense-compute-bound presets.
pub const MLP_DOMINATED: [&str; 5] = ["wnd", "mtwnd", "din", "dien", "ncf"];

impl ModelConfig {
    fn embedding(name: &str, dim: u32, l: u32, t: u32, mlp: MlpCost) -> Self {
        ModelConfig {
            name: name.into(),
            tables: t,
            dim,
            attr_size: AttrSize::Four,
            indices_per_bag: l,
            rows: default_rows(),
            mlp,
            category: Category::EmbeddingDominated,
            layout: default_layout(),
        }
    }

    pub fn rm1() -> Self {
        Self::embedding(
            "rm1",
            32,
            80,
            8,
            MlpCost {
                base_ns: 50_000,
                per_sample_ns: 60_000,
            },
        )
    }

    pub fn rm2() -> Self {
        Self::embedding(
            "rm2",
            64,
            120,
            32,
            MlpCost {
                base_ns: 100_000,
                per_sample_ns: 120_000,
            },
        )
    }

    pub fn rm3() -> Self {
        Self::embedding(
            "rm3",
            32,
            20,
            10,
            MlpCost {
                base_ns: 50_000,
                per_sample_ns: 40_000,
            },
        )
    }

    /// A model whose few, short embedding lookups are dwarfed by dense layers.
    pub fn mlp_dominated(name: &str) -> Option<Self> {
        let (base_ns, per_sample_ns) = match name {
            "wnd" => (1_000_000, 2_000_000),
            "mtwnd" => (2_000_000, 4_000_000),
            "din" => (1_500_000, 3_000_000),
            "dien" => (3_000_000, 6_000_000),
            "ncf" => (800_000, 1_800_000),
            _ => return None,
        };
        Some(ModelConfig {
            name: name.into(),
            tables: 2,
            dim: 32,
            attr_size: AttrSize::Four,
            indices_per_bag: 1,
            rows: default_rows(),
            mlp: MlpCost {
                base_ns,
                per_sample_ns,
            },
            category: Category::MlpDominated,
            layout: default_layout(),
        })
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "rm1" => Some(Self::rm1()),
            "rm2" => Some(Self::rm2()),
            "rm3" => Some(Self::rm3()),
            _ => Self::mlp_dominated(name),
        }
    }

    pub fn presets() -> Vec<Self> {
        let mut v = vec![Self::rm1(), Self::rm2(), Self::rm3()];
        v.extend(MLP_DOMINATED.iter().filter_map(|n| Self::mlp_dominated(n)));
        v
    }

    pub fn with_rows(mut self, rows: u64) -> Self {
        self.rows = rows;
        self
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.tables == 0 || self.dim == 0 || self.indices_per_bag == 0 || self.rows == 0 {
            return Err(WorkloadError::Invalid(format!(
                "{}: tables, dim, indices_per_bag and rows must be positive",
                self.name
            )));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, WorkloadError> {
        let m: ModelConfig = toml::from_str(s).map_err(ConfigError::Parse)?;
        m.validate()?;
        Ok(m)
    }

    pub fn from_file(path: &Path) -> Result<Self, WorkloadError> {
        let s = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    /// Tables with procedurally generated contents, one seed per table.
    pub fn build_tables(&self, seed: u64) -> Result<Vec<Arc<EmbeddingTable>>, WorkloadError> {
        (0..self.tables)
            .map(|t| {
                EmbeddingTable::seeded(
                    t,
                    self.rows,
                    self.dim,
                    self.attr_size,
                    derive_seed(seed, TABLE_STREAM + t as u64),
                )
                .map(Arc::new)
                .map_err(|e| WorkloadError::Invalid(e.to_string()))
            })
            .collect()
    }
}

const TABLE_STREAM: u64 = 1 << 32;
const PROFILE_STREAM: u64 = 2 << 32;

/// How lookup ids are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexPattern {
    /// Independent uniform ids.
    Uniform,
    /// Stack-distance locality generator at parameter K.
    Locality(f64),
}

impl IndexPattern {
    fn params(&self) -> LocalityPoint {
        match *self {
            IndexPattern::Uniform => LocalityPoint {
                k: f64::INFINITY,
                reuse_prob: 0.0,
                mean_depth: 1.0,
            },
            IndexPattern::Locality(k) => locality_params(k),
        }
    }
}

fn table_ids(
    model: &ModelConfig,
    pattern: IndexPattern,
    batch_size: u32,
    num_batches: u32,
    seed: u64,
) -> Result<Vec<Vec<u64>>, WorkloadError> {
    (0..model.tables)
        .map(|t| {
            let spec = TraceSpec {
                k: match pattern {
                    IndexPattern::Locality(k) => k,
                    IndexPattern::Uniform => 0.0,
                },
                id_space: model.rows,
                indices_per_bag: model.indices_per_bag,
                bags_per_job: batch_size,
                num_jobs: num_batches,
                seed: derive_seed(seed, t as u64),
                table_id: t,
            };
            Ok(generate_ids_with(&spec, pattern.params())?)
        })
        .collect()
}

/// `num_batches` batches of one `B × L` job per table. Each table draws from
/// its own stream seeded from `seed`.
pub fn make_job_stream(
    model: &ModelConfig,
    pattern: IndexPattern,
    batch_size: u32,
    num_batches: u32,
    seed: u64,
) -> Result<Vec<Batch>, WorkloadError> {
    model.validate()?;
    if batch_size == 0 || num_batches == 0 {
        return Err(WorkloadError::Invalid(
            "batch size and count must be positive".into(),
        ));
    }
    let streams = table_ids(model, pattern, batch_size, num_batches, seed)?;
    let per_job = (batch_size * model.indices_per_bag) as usize;
    let l = model.indices_per_bag as usize;
    Ok((0..num_batches as usize)
        .map(|b| Batch {
            jobs: streams
                .iter()
                .enumerate()
                .map(|(t, ids)| {
                    let chunk = &ids[b * per_job..(b + 1) * per_job];
                    Arc::new(SlsJob::new(
                        t as u32,
                        chunk.chunks(l).map(<[u64]>::to_vec).collect(),
                    ))
                })
                .collect(),
            mlp_ns: model.mlp.latency(batch_size),
        })
        .collect())
}

/// Ids a profiling run would see: same shape, independent seed.
pub fn profile_stream(
    model: &ModelConfig,
    pattern: IndexPattern,
    batch_size: u32,
    num_batches: u32,
    seed: u64,
) -> Result<Vec<Vec<u64>>, WorkloadError> {
    table_ids(
        model,
        pattern,
        batch_size,
        num_batches,
        derive_seed(seed, PROFILE_STREAM),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionSize {
    /// A fixed number of entries per table.
    Entries(usize),
    /// A fraction of the distinct ids seen while profiling.
    TouchedFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CachingConfig {
    /// Host LRU entries per table (conventional path only).
    pub host_lru: Option<usize>,
    /// SSD embedding cache slots (near-data path only; 0 disables).
    pub ssd_cache_slots: usize,
    /// Static partition (near-data path only).
    pub partition: Option<PartitionSize>,
}

impl Default for CachingConfig {
    fn default() -> Self {
        CachingConfig::none()
    }
}

impl CachingConfig {
    pub fn none() -> Self {
        CachingConfig {
            host_lru: None,
            ssd_cache_slots: 0,
            partition: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub storage: Storage,
    pub caching: CachingConfig,
    pub pipeline: PipelineConfig,
    pub batch_size: u32,
    pub pattern: IndexPattern,
    pub warmup_batches: u32,
    pub measured_batches: u32,
    pub seed: u64,
    pub cost: CostModel,
    pub ftl: FtlConfig,
    pub host: HostConfig,
    /// Record the device event log and audit it after the run.
    pub check_log: bool,
}

impl RunConfig {
    pub fn new(method: Method, batch_size: u32, pattern: IndexPattern, seed: u64) -> Self {
        RunConfig {
            method,
            storage: Storage::Ssd,
            caching: CachingConfig::none(),
            pipeline: PipelineConfig::serial(),
            batch_size,
            pattern,
            warmup_batches: 10,
            measured_batches: 50,
            seed,
            cost: CostModel::default(),
            ftl: FtlConfig::default(),
            host: HostConfig {
                functional: false,
                ..HostConfig::default()
            },
            check_log: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub batches: u32,
    pub mean_ns: f64,
    pub p50_ns: Nanos,
    pub p99_ns: Nanos,
    /// Batches per second over the measured window.
    pub throughput: f64,
    pub counters: OpCounters,
    /// Summed over measured near-data operations.
    pub breakdown: Breakdown,
    pub flash_reads: u64,
    /// Partition entries per table (0 when none).
    pub partition_entries: usize,
    /// Invariant violations reported by the simulator.
    pub violations: Vec<String>,
}

fn percentile(sorted: &[Nanos], p: f64) -> Nanos {
    if sorted.is_empty() {
        return 0;
    }
    let i = ((sorted.len() - 1) as f64 * p).round() as usize;
    sorted[i]
}

/// Summaries of the measured (post-warm-up) batches.
pub fn summarize(results: &[BatchResult], warmup: usize) -> LatencyStats {
    let measured = &results[warmup.min(results.len())..];
    let mut lat: Vec<Nanos> = measured.iter().map(BatchResult::latency).collect();
    lat.sort_unstable();
    let mut s = LatencyStats {
        batches: measured.len() as u32,
        mean_ns: if lat.is_empty() {
            0.0
        } else {
            lat.iter().sum::<Nanos>() as f64 / lat.len() as f64
        },
        p50_ns: percentile(&lat, 0.5),
        p99_ns: percentile(&lat, 0.99),
        ..LatencyStats::default()
    };
    if let (Some(first), Some(last)) = (measured.first(), measured.last()) {
        let from = if warmup > 0 {
            results[warmup - 1].compute_end
        } else {
            first.sls_start
        };
        let span = last.compute_end.saturating_sub(from);
        if span > 0 {
            s.throughput = measured.len() as f64 * 1e9 / span as f64;
        }
    }
    for b in measured {
        for op in &b.ops {
            s.counters.add(&op.counters);
            if let Some(bd) = &op.breakdown {
                s.breakdown.add(bd);
            }
        }
    }
    s
}

/// Build the system for a model and run warm-up plus measured batches.
pub fn end_to_end_latency(
    model: &ModelConfig,
    run: &RunConfig,
) -> Result<LatencyStats, WorkloadError> {
    let total = run.warmup_batches + run.measured_batches;
    let batches = make_job_stream(model, run.pattern, run.batch_size, total, run.seed)?;
    let tables = model
        .build_tables(run.seed)?
        .into_iter()
        .map(|t| (t, model.layout))
        .collect();
    let mut ftl = run.ftl.clone();
    let mut host = run.host.clone();
    ftl.ssd_cache_slots = match run.method {
        Method::Ndp => run.caching.ssd_cache_slots,
        Method::Baseline => 0,
    };
    if let Some(n) = run.caching.host_lru {
        host.host_cache_entries = n;
    }
    let mut sys = System::new(
        run.cost.clone(),
        ftl,
        host,
        run.storage,
        tables,
        run.check_log,
    )?;
    let mut partition_entries = 0;
    match run.method {
        Method::Baseline => {
            if let Some(n) = run.caching.host_lru {
                sys.set_host_lru(n);
            }
        }
        Method::Ndp => {
            if let Some(size) = run.caching.partition {
                let profile = profile_stream(model, run.pattern, run.batch_size, total, run.seed)?;
                for (t, ids) in profile.into_iter().enumerate() {
                    let cap = match size {
                        PartitionSize::Entries(n) => n,
                        PartitionSize::TouchedFraction(f) => {
                            let touched = ids.iter().collect::<HashSet<_>>().len();
                            (touched as f64 * f).round() as usize
                        }
                    };
                    partition_entries = cap;
                    sys.set_partition(build_partition(t as u32, ids, cap))?;
                }
            }
        }
    }
    let results = sys.run_batches(batches, run.method, run.pipeline)?;
    let mut s = summarize(&results, run.warmup_batches as usize);
    s.flash_reads = sys.ftl().flash().stats().flash_reads;
    s.partition_entries = partition_entries;
    s.violations = sys.violations();
    if run.check_log {
        s.violations
            .extend(check_log(sys.ftl().log().records(), &run.cost));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_model_table() {
        let shape = |m: ModelConfig| (m.dim, m.indices_per_bag, m.tables);
        assert_eq!(shape(ModelConfig::rm1()), (32, 80, 8));
        assert_eq!(shape(ModelConfig::rm2()), (64, 120, 32));
        assert_eq!(shape(ModelConfig::rm3()), (32, 20, 10));
        assert_eq!(ModelConfig::presets().len(), 8);
    }

    #[test]
    fn rm1_batch_of_four() {
        let b = make_job_stream(&ModelConfig::rm1(), IndexPattern::Locality(1.0), 4, 2, 9).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b[0].jobs.len(), 8);
        assert!(b[0]
            .jobs
            .iter()
            .all(|j| j.total_inputs == 320 && j.bags.len() == 4));
        assert_eq!(b[0].mlp_ns, ModelConfig::rm1().mlp.latency(4));
    }

    #[test]
    fn rm3_single_sample() {
        let b = make_job_stream(&ModelConfig::rm3(), IndexPattern::Uniform, 1, 1, 9).unwrap();
        assert_eq!(b[0].jobs.len(), 10);
        assert!(b[0].jobs.iter().all(|j| j.total_inputs == 20));
    }

    #[test]
    fn degenerate_single_lookup() {
        let mut m = ModelConfig::rm1();
        m.tables = 1;
        m.indices_per_bag = 1;
        let b = make_job_stream(&m, IndexPattern::Uniform, 1, 3, 0).unwrap();
        assert!(b
            .iter()
            .all(|b| b.jobs.len() == 1 && b.jobs[0].total_inputs == 1));
    }

    #[test]
    fn tables_get_independent_streams() {
        let b = make_job_stream(&ModelConfig::rm3(), IndexPattern::Uniform, 2, 1, 4).unwrap();
        assert_ne!(b[0].jobs[0].bags, b[0].jobs[1].bags);
        let again = make_job_stream(&ModelConfig::rm3(), IndexPattern::Uniform, 2, 1, 4).unwrap();
        assert_eq!(b[0].jobs[3], again[0].jobs[3]);
    }

    #[test]
    fn toml_round_trip() {
        let m = ModelConfig::rm2();
        let back = ModelConfig::from_toml_str(&m.to_toml_string()).unwrap();
        assert_eq!(back, m);
        assert!(ModelConfig::from_toml_str("name = \"x\"\nbogus = 1").is_err());
    }

    #[test]
    fn dram_latency_is_mlp_plus_accumulation() {
        let m = ModelConfig::rm3().with_rows(4096);
        let mut run = RunConfig::new(Method::Baseline, 2, IndexPattern::Uniform, 1);
        run.storage = Storage::Dram;
        run.warmup_batches = 1;
        run.measured_batches = 3;
        let s = end_to_end_latency(&m, &run).unwrap();
        let c = CostModel::default();
        let per_table = c.host_accum_time(40, 128);
        assert_eq!(s.p50_ns, m.mlp.latency(2) + 10 * per_table);
        assert_eq!(s.mean_ns, s.p50_ns as f64);
    }
}
