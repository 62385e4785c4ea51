//! Declarative experiment sweeps.
//!
//! An [`ExperimentSpec`] names a model and a set of axes. [`expand`] turns it
//! into one [`Cell`] per configuration, ordered by axis (outermost first:
//! locality, batch size, dim, attr size, indices per bag, tables, caching
//! mode, cache sizes, storage, method, repeat). [`run_sweep`] runs cells in parallel
//! and returns rows in that same order, so the CSV never depends on thread
//! timing.
//!
//! Seeds: repeat `r` of a spec with master seed `s` runs with
//! `derive_seed(s, r)`. Everything else (traces, table values, profiles) is
//! derived from that run seed by the workload generator.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use recssd_core::flashsim::CostModel;
use recssd_core::ftl::FtlConfig;
use recssd_core::host::{HostConfig, Method, PipelineConfig, Storage};
use recssd_core::rng::derive_seed;
use recssd_core::table::{AttrSize, LayoutMode};
use recssd_core::workloads::{
    end_to_end_latency, CachingConfig, IndexPattern, LatencyStats, MlpCost, ModelConfig,
    PartitionSize, RunConfig,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing spec: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown model {0:?} (not a preset or a readable file)")]
    UnknownModel(String),
    #[error("invalid spec: {0}")]
    Invalid(String),
    #[error("writing csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Trace locality axis value: `"uniform"` or a locality parameter K.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LocalityRepr", into = "LocalityRepr")]
pub enum Locality {
    Uniform,
    K(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LocalityRepr {
    K(f64),
    Name(String),
}

impl TryFrom<LocalityRepr> for Locality {
    type Error = String;

    fn try_from(r: LocalityRepr) -> Result<Self, String> {
        match r {
            LocalityRepr::K(k) => Ok(Locality::K(k)),
            LocalityRepr::Name(s) => s.parse(),
        }
    }
}

impl From<Locality> for LocalityRepr {
    fn from(l: Locality) -> Self {
        match l {
            Locality::Uniform => LocalityRepr::Name("uniform".into()),
            Locality::K(k) => LocalityRepr::K(k),
        }
    }
}

impl FromStr for Locality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "uniform" => Ok(Locality::Uniform),
            _ => s
                .trim_start_matches("k=")
                .parse::<f64>()
                .map(Locality::K)
                .map_err(|_| format!("bad locality {s:?}: expected \"uniform\" or a number")),
        }
    }
}

impl fmt::Display for Locality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Locality::Uniform => f.write_str("uniform"),
            Locality::K(k) => write!(f, "{k}"),
        }
    }
}

impl From<Locality> for IndexPattern {
    fn from(l: Locality) -> Self {
        match l {
            Locality::Uniform => IndexPattern::Uniform,
            Locality::K(k) => IndexPattern::Locality(k),
        }
    }
}

/// Which caches are enabled, written as `none` or a `+`-joined subset of
/// `host-lru`, `ssd-cache`, `partition`.
///
/// The host LRU only serves the conventional path. The SSD cache and the
/// static partition only serve the near-data path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CachingMode {
    pub host_lru: bool,
    pub ssd_cache: bool,
    pub partition: bool,
}

impl CachingMode {
    pub const NONE: CachingMode = CachingMode {
        host_lru: false,
        ssd_cache: false,
        partition: false,
    };
}

impl FromStr for CachingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut m = CachingMode::NONE;
        if s == "none" {
            return Ok(m);
        }
        for part in s.split('+') {
            let flag = match part.trim() {
                "host-lru" => &mut m.host_lru,
                "ssd-cache" => &mut m.ssd_cache,
                "partition" => &mut m.partition,
                other => return Err(format!("unknown caching option {other:?}")),
            };
            if *flag {
                return Err(format!("caching option {part:?} repeated"));
            }
            *flag = true;
        }
        Ok(m)
    }
}

impl TryFrom<String> for CachingMode {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl fmt::Display for CachingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [
            (self.host_lru, "host-lru"),
            (self.ssd_cache, "ssd-cache"),
            (self.partition, "partition"),
        ]
        .iter()
        .filter(|p| p.0)
        .map(|p| p.1)
        .collect();
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join("+"))
        }
    }
}

impl From<CachingMode> for String {
    fn from(m: CachingMode) -> String {
        m.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    /// Preset name (`rm1`, `rm2`, `rm3`, `wnd`, ...) or a model TOML path,
    /// relative to the spec file.
    pub model: String,
    #[serde(default = "both_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "no_caching")]
    pub caching: Vec<CachingMode>,
    #[serde(default = "serial")]
    pub pipeline: PipelineConfig,
    #[serde(default = "ssd")]
    pub storages: Vec<Storage>,
    pub batch_sizes: Vec<u32>,
    #[serde(default = "uniform")]
    pub localities: Vec<Locality>,
    /// Empty axes keep the model's own value.
    #[serde(default)]
    pub dims: Vec<u32>,
    #[serde(default)]
    pub attr_sizes: Vec<AttrSize>,
    #[serde(default)]
    pub indices_per_bag: Vec<u32>,
    #[serde(default)]
    pub tables: Vec<u32>,
    /// Overrides the model's storage layout.
    #[serde(default)]
    pub layout: Option<LayoutMode>,
    /// Overrides the model's dense compute cost.
    #[serde(default)]
    pub mlp: Option<MlpCost>,
    /// Host LRU entries per table, swept when a mode includes `host-lru`.
    #[serde(default = "default_lru")]
    pub host_lru_entries: Vec<usize>,
    /// SSD cache slots, swept when a mode includes `ssd-cache`.
    #[serde(default = "default_ssd_slots")]
    pub ssd_cache_slots: Vec<usize>,
    /// Partition size as a fraction of profiled distinct ids, swept when a
    /// mode includes `partition`.
    #[serde(default = "default_fractions")]
    pub partition_fractions: Vec<f64>,
    #[serde(default = "default_rows")]
    pub rows: u64,
    #[serde(default = "default_warmup")]
    pub warmup_batches: u32,
    #[serde(default = "default_measured")]
    pub measured_batches: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub repeats: u32,
    #[serde(default)]
    pub cost: CostModel,
    #[serde(default)]
    pub ftl: FtlConfig,
    #[serde(default = "sweep_host")]
    pub host: HostConfig,
    /// Record and audit the device event log (slow; used by the fuzzer).
    #[serde(default)]
    pub check_log: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn both_methods() -> Vec<Method> {
    vec![Method::Baseline, Method::Ndp]
}
fn no_caching() -> Vec<CachingMode> {
    vec![CachingMode::NONE]
}
fn serial() -> PipelineConfig {
    PipelineConfig::serial()
}
fn ssd() -> Vec<Storage> {
    vec![Storage::Ssd]
}
fn uniform() -> Vec<Locality> {
    vec![Locality::Uniform]
}
fn default_lru() -> Vec<usize> {
    vec![2048]
}
fn default_ssd_slots() -> Vec<usize> {
    vec![FtlConfig::default().ssd_cache_slots]
}
fn default_fractions() -> Vec<f64> {
    vec![0.25]
}
fn default_rows() -> u64 {
    65_536
}
fn default_warmup() -> u32 {
    10
}
fn default_measured() -> u32 {
    50
}
fn one() -> u32 {
    1
}
fn sweep_host() -> HostConfig {
    HostConfig {
        functional: false,
        ..HostConfig::default()
    }
}

impl ExperimentSpec {
    /// Default axes for `model` over the given batch sizes.
    pub fn new(name: &str, model: &str, batch_sizes: Vec<u32>) -> Self {
        ExperimentSpec {
            name: name.into(),
            model: model.into(),
            methods: both_methods(),
            caching: no_caching(),
            pipeline: serial(),
            storages: ssd(),
            batch_sizes,
            localities: uniform(),
            dims: Vec::new(),
            attr_sizes: Vec::new(),
            indices_per_bag: Vec::new(),
            tables: Vec::new(),
            layout: None,
            mlp: None,
            host_lru_entries: default_lru(),
            ssd_cache_slots: default_ssd_slots(),
            partition_fractions: default_fractions(),
            rows: default_rows(),
            warmup_batches: default_warmup(),
            measured_batches: default_measured(),
            seed: 0,
            repeats: 1,
            cost: CostModel::default(),
            ftl: FtlConfig::default(),
            host: sweep_host(),
            check_log: false,
            output: None,
            base_dir: None,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, SpecError> {
        Ok(toml::from_str(s)?)
    }

    pub fn from_file(path: &Path) -> Result<Self, SpecError> {
        let s = std::fs::read_to_string(path).map_err(|source| SpecError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut spec = Self::from_toml_str(&s)?;
        spec.base_dir = path.parent().map(Path::to_path_buf);
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn load_model(&self) -> Result<ModelConfig, SpecError> {
        if let Some(m) = ModelConfig::preset(&self.model) {
            return Ok(m);
        }
        let path = match &self.base_dir {
            Some(dir) => dir.join(&self.model),
            None => PathBuf::from(&self.model),
        };
        ModelConfig::from_file(&path).map_err(|_| SpecError::UnknownModel(self.model.clone()))
    }

    fn validate(&self) -> Result<(), SpecError> {
        let empty = [
            ("methods", self.methods.is_empty()),
            ("caching", self.caching.is_empty()),
            ("storages", self.storages.is_empty()),
            ("batch_sizes", self.batch_sizes.is_empty()),
            ("localities", self.localities.is_empty()),
            ("host_lru_entries", self.host_lru_entries.is_empty()),
            ("ssd_cache_slots", self.ssd_cache_slots.is_empty()),
            ("partition_fractions", self.partition_fractions.is_empty()),
        ];
        if let Some((axis, _)) = empty.iter().find(|e| e.1) {
            return Err(SpecError::Invalid(format!("axis {axis} is empty")));
        }
        if self.repeats == 0 || self.measured_batches == 0 {
            return Err(SpecError::Invalid(
                "repeats and measured_batches must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One fully specified run.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub model: ModelConfig,
    pub method: Method,
    pub storage: Storage,
    pub caching: CachingMode,
    pub locality: Locality,
    pub batch_size: u32,
    pub host_lru: Option<usize>,
    pub ssd_cache_slots: Option<usize>,
    pub partition_fraction: Option<f64>,
    pub repeat: u32,
    pub seed: u64,
}

fn axis<T: Clone>(values: &[T], default: T) -> Vec<T> {
    if values.is_empty() {
        vec![default]
    } else {
        values.to_vec()
    }
}

fn opt_axis<T: Clone>(on: bool, values: &[T]) -> Vec<Option<T>> {
    if on {
        values.iter().cloned().map(Some).collect()
    } else {
        vec![None]
    }
}

/// All cells of a spec in axis order.
pub fn expand(spec: &ExperimentSpec) -> Result<Vec<Cell>, SpecError> {
    spec.validate()?;
    let mut base = spec.load_model()?.with_rows(spec.rows);
    if let Some(layout) = spec.layout {
        base.layout = layout;
    }
    if let Some(mlp) = spec.mlp {
        base.mlp = mlp;
    }
    let mut cells = Vec::new();
    for &locality in &spec.localities {
        for &batch_size in &spec.batch_sizes {
            for dim in axis(&spec.dims, base.dim) {
                for attr in axis(&spec.attr_sizes, base.attr_size) {
                    for l in axis(&spec.indices_per_bag, base.indices_per_bag) {
                        for t in axis(&spec.tables, base.tables) {
                            let mut model = base.clone();
                            model.dim = dim;
                            model.attr_size = attr;
                            model.indices_per_bag = l;
                            model.tables = t;
                            for &caching in &spec.caching {
                                for host_lru in opt_axis(caching.host_lru, &spec.host_lru_entries) {
                                    for ssd in opt_axis(caching.ssd_cache, &spec.ssd_cache_slots) {
                                        for part in
                                            opt_axis(caching.partition, &spec.partition_fractions)
                                        {
                                            for &storage in &spec.storages {
                                                for &method in &spec.methods {
                                                    for repeat in 0..spec.repeats {
                                                        cells.push(Cell {
                                                            model: model.clone(),
                                                            method,
                                                            storage,
                                                            caching,
                                                            locality,
                                                            batch_size,
                                                            host_lru,
                                                            ssd_cache_slots: ssd,
                                                            partition_fraction: part,
                                                            repeat,
                                                            seed: derive_seed(
                                                                spec.seed,
                                                                repeat as u64,
                                                            ),
                                                        });
                                                    }
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(cells)
}

/// The workload-level run configuration of a cell.
pub fn run_config(spec: &ExperimentSpec, cell: &Cell) -> RunConfig {
    let mut run = RunConfig::new(
        cell.method,
        cell.batch_size,
        cell.locality.into(),
        cell.seed,
    );
    run.storage = cell.storage;
    run.pipeline = spec.pipeline;
    run.warmup_batches = spec.warmup_batches;
    run.measured_batches = spec.measured_batches;
    run.cost = spec.cost.clone();
    run.ftl = spec.ftl.clone();
    run.host = spec.host.clone();
    run.check_log = spec.check_log;
    run.caching = CachingConfig {
        host_lru: cell.host_lru,
        ssd_cache_slots: cell.ssd_cache_slots.unwrap_or(0),
        partition: cell.partition_fraction.map(PartitionSize::TouchedFraction),
    };
    run
}

/// One CSV row. Latency columns are nanoseconds; breakdown columns are summed
/// over the measured near-data operations of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub experiment: String,
    pub model: String,
    pub method: Method,
    pub storage: Storage,
    pub caching: String,
    pub locality: String,
    pub batch_size: u32,
    pub dim: u32,
    pub attr_size: u32,
    pub indices_per_bag: u32,
    pub tables: u32,
    pub rows: u64,
    pub host_lru: Option<usize>,
    pub ssd_cache_slots: Option<usize>,
    pub partition_fraction: Option<f64>,
    pub repeat: u32,
    pub seed: u64,
    pub batches: Option<u32>,
    pub mean_ns: Option<f64>,
    pub p50_ns: Option<u64>,
    pub p99_ns: Option<u64>,
    pub throughput: Option<f64>,
    pub config_write_ns: Option<u64>,
    pub config_process_ns: Option<u64>,
    pub translation_ns: Option<u64>,
    pub flash_read_ns: Option<u64>,
    pub result_return_ns: Option<u64>,
    pub host_hit_rate: Option<f64>,
    pub partition_hit_rate: Option<f64>,
    pub ssd_hit_rate: Option<f64>,
    pub partition_entries: Option<usize>,
    pub lookups: Option<u64>,
    pub commands: Option<u64>,
    pub pages_read: Option<u64>,
    pub violations: usize,
    pub error: Option<String>,
}

impl Row {
    fn new(spec: &ExperimentSpec, cell: &Cell, result: &Result<LatencyStats, String>) -> Self {
        let stats = result.as_ref().ok();
        let m = &cell.model;
        Row {
            experiment: spec.name.clone(),
            model: m.name.clone(),
            method: cell.method,
            storage: cell.storage,
            caching: cell.caching.to_string(),
            locality: cell.locality.to_string(),
            batch_size: cell.batch_size,
            dim: m.dim,
            attr_size: m.attr_size.bytes(),
            indices_per_bag: m.indices_per_bag,
            tables: m.tables,
            rows: m.rows,
            host_lru: cell.host_lru,
            ssd_cache_slots: cell.ssd_cache_slots,
            partition_fraction: cell.partition_fraction,
            repeat: cell.repeat,
            seed: cell.seed,
            batches: stats.map(|s| s.batches),
            mean_ns: stats.map(|s| s.mean_ns),
            p50_ns: stats.map(|s| s.p50_ns),
            p99_ns: stats.map(|s| s.p99_ns),
            throughput: stats.map(|s| s.throughput),
            config_write_ns: stats.map(|s| s.breakdown.config_write),
            config_process_ns: stats.map(|s| s.breakdown.config_process),
            translation_ns: stats.map(|s| s.breakdown.translation),
            flash_read_ns: stats.map(|s| s.breakdown.flash_read),
            result_return_ns: stats.map(|s| s.breakdown.result_return),
            host_hit_rate: stats.map(|s| s.counters.host_hit_rate()),
            partition_hit_rate: stats.map(|s| s.counters.partition_hit_rate()),
            ssd_hit_rate: stats.map(|s| s.counters.ssd_hit_rate()),
            partition_entries: stats.map(|s| s.partition_entries),
            lookups: stats.map(|s| s.counters.lookups),
            commands: stats.map(|s| s.counters.commands),
            pages_read: stats.map(|s| s.flash_reads),
            violations: stats.map_or(0, |s| s.violations.len()),
            error: result.as_ref().err().cloned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<Row>,
    /// (row index, message) for every invariant violation reported.
    pub violations: Vec<(usize, String)>,
}

impl SweepResult {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SpecError> {
        write_rows(&self.rows, w)
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

pub fn write_rows<W: Write>(rows: &[Row], w: W) -> Result<(), SpecError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|source| SpecError::Io {
        path: "<csv>".into(),
        source,
    })?;
    Ok(())
}

pub fn read_rows<R: std::io::Read>(r: R) -> Result<Vec<Row>, SpecError> {
    let mut rd = csv::Reader::from_reader(r);
    Ok(rd.deserialize().collect::<Result<Vec<Row>, _>>()?)
}

pub fn run_cell(spec: &ExperimentSpec, cell: &Cell) -> Result<LatencyStats, String> {
    cell.model.validate().map_err(|e| e.to_string())?;
    end_to_end_latency(&cell.model, &run_config(spec, cell)).map_err(|e| e.to_string())
}

/// Run every cell of `spec`. Cells run in parallel; a cell that fails is
/// reported in its row's `error` column and the sweep continues.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<SweepResult, SpecError> {
    let cells = expand(spec)?;
    let results: Vec<(Row, Vec<String>)> = cells
        .par_iter()
        .map(|cell| {
            let r = run_cell(spec, cell);
            let v = r.as_ref().map(|s| s.violations.clone()).unwrap_or_default();
            (Row::new(spec, cell, &r), v)
        })
        .collect();
    let mut out = SweepResult {
        rows: Vec::with_capacity(results.len()),
        violations: Vec::new(),
    };
    for (i, (row, v)) in results.into_iter().enumerate() {
        out.violations.extend(v.into_iter().map(|m| (i, m)));
        out.rows.push(row);
    }
    Ok(out)
}

/// Mean baseline latency over mean near-data latency for rows that differ
/// only in method. Returned in the order the near-data rows appear.
pub fn speedups(rows: &[Row]) -> Vec<(&Row, f64)> {
    let key = |r: &Row| {
        (
            (
                r.model.clone(),
                r.storage,
                r.caching.clone(),
                r.locality.clone(),
            ),
            (
                r.batch_size,
                r.dim,
                r.attr_size,
                r.indices_per_bag,
                r.tables,
            ),
            (
                r.host_lru,
                r.ssd_cache_slots,
                r.partition_fraction,
                r.repeat,
            ),
        )
    };
    rows.iter()
        .filter(|r| r.method == Method::Ndp)
        .filter_map(|n| {
            let b = rows
                .iter()
                .find(|b| b.method == Method::Baseline && key(b) == key(n))?;
            Some((n, b.mean_ns? / n.mean_ns?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn caching_mode_round_trips() {
        for s in [
            "none",
            "host-lru",
            "ssd-cache+partition",
            "host-lru+ssd-cache+partition",
        ] {
            let m: CachingMode = s.parse().unwrap();
            assert_eq!(m.to_string(), s);
        }
        assert!("partition+partition".parse::<CachingMode>().is_err());
        assert!("l2".parse::<CachingMode>().is_err());
    }

    #[test]
    fn locality_parses_names_and_numbers() {
        let spec = ExperimentSpec::from_toml_str(
            "name = \"x\"\nmodel = \"rm1\"\nbatch_sizes = [1]\nlocalities = [\"uniform\", 0, 1.5]\n",
        )
        .unwrap();
        assert_eq!(
            spec.localities,
            [Locality::Uniform, Locality::K(0.0), Locality::K(1.5)]
        );
        assert_eq!("k=2".parse::<Locality>().unwrap(), Locality::K(2.0));
    }

    #[test]
    fn expansion_follows_axis_order() {
        let mut spec = ExperimentSpec::new("x", "rm3", vec![1, 8]);
        spec.localities = vec![Locality::K(0.0), Locality::K(2.0)];
        spec.caching = vec![CachingMode::NONE, "host-lru".parse().unwrap()];
        spec.host_lru_entries = vec![16, 32];
        let cells = expand(&spec).unwrap();
        // 2 localities x 2 batch sizes x (1 + 2 cache sizes) x 2 methods
        assert_eq!(cells.len(), 24);
        assert_eq!(cells[0].locality, Locality::K(0.0));
        assert_eq!(cells[0].batch_size, 1);
        assert_eq!(cells[2].host_lru, Some(16));
        assert_eq!(cells[1].method, Method::Ndp);
        assert_eq!(cells[12].locality, Locality::K(2.0));
    }

    #[test]
    fn empty_axis_is_rejected() {
        let spec = ExperimentSpec::new("x", "rm1", vec![]);
        assert!(matches!(expand(&spec), Err(SpecError::Invalid(_))));
        let spec = ExperimentSpec::new("x", "no-such-model", vec![1]);
        assert!(matches!(expand(&spec), Err(SpecError::UnknownModel(_))));
    }

    #[test]
    fn spec_toml_round_trip() {
        let mut spec = ExperimentSpec::new("x", "rm2", vec![1, 32]);
        spec.caching = vec!["ssd-cache+partition".parse().unwrap()];
        spec.attr_sizes = vec![AttrSize::One];
        let back = ExperimentSpec::from_toml_str(&spec.to_toml_string()).unwrap();
        assert_eq!(back, spec);
    }
}
