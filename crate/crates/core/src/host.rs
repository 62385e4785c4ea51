//! Host side: driver command costs, the conventional (block read) and
//! near-data SLS operators, host DRAM caching, static hot partitioning and
//! the SLS-worker / compute-worker executor.
//!
//! Everything runs inside one discrete-event simulation that also drives the
//! device model, so concurrent operations contend for the same channels, DMA
//! engine and SSD CPU.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flashsim::{CostModel, Nanos, SimClock, SimError};
use crate::ftl::{Completion, DeviceEvent, FlashStore, Ftl, FtlConfig, FtlStats, HostCommand};
use crate::lru::LruSet;
use crate::protocol::{
    result_block_count, ConfigBlob, NdpCommand, RequestIdAllocator, ResultBlob, SlbaCodec,
};
use crate::sls::{canonical_ids, SlsError, SlsJob, SlsOutput};
use crate::table::{EmbeddingTable, LayoutMode, TableError, TableLayout};

#[derive(Debug, Error)]
pub enum HostError {
    #[error("unknown table {0}")]
    UnknownTable(u32),
    #[error(transparent)]
    Sls(#[from] SlsError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("device error: {0}")]
    Device(String),
    #[error("request ids exhausted for table {0}")]
    RequestIds(u32),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("simulation invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HostConfig {
    /// Submission/completion queue pairs, one per SLS worker by default.
    pub driver_queues: usize,
    /// Plain reads one conventional SLS operation keeps in flight.
    pub baseline_queue_depth: usize,
    /// Host cache / static partition entries per table.
    pub host_cache_entries: usize,
    /// Compute real output vectors. Timing never depends on values, so large
    /// sweeps may turn this off.
    pub functional: bool,
}

impl Default for HostConfig {
    fn default() -> Self {
        HostConfig {
            driver_queues: 4,
            baseline_queue_depth: 1,
            host_cache_entries: 2048,
            functional: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Baseline,
    Ndp,
}

/// Where embedding tables live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Storage {
    Ssd,
    /// Zero-latency, unlimited-bandwidth backing store.
    Dram,
}

/// Profiled hot ids of one table, held in host memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaticPartition {
    pub table_id: u32,
    pub hot: HashSet<u64>,
}

impl StaticPartition {
    pub fn contains(&self, id: u64) -> bool {
        self.hot.contains(&id)
    }

    pub fn len(&self) -> usize {
        self.hot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hot.is_empty()
    }
}

/// Top `capacity` ids by profiled count; ties go to the smaller id.
pub fn build_partition<I>(table_id: u32, profile: I, capacity: usize) -> StaticPartition
where
    I: IntoIterator<Item = u64>,
{
    let mut counts: HashMap<u64, u64> = HashMap::new();
    for id in profile {
        *counts.entry(id).or_default() += 1;
    }
    let mut ranked: Vec<(u64, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    StaticPartition {
        table_id,
        hot: ranked
            .into_iter()
            .take(capacity)
            .map(|(id, _)| id)
            .collect(),
    }
}

/// Device-side time split of one near-data operation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakdown {
    pub config_write: Nanos,
    pub config_process: Nanos,
    pub translation: Nanos,
    pub flash_read: Nanos,
    pub result_return: Nanos,
}

impl Breakdown {
    /// Device time from submission to a completed result (excludes return).
    pub fn ftl_total(&self) -> Nanos {
        self.config_write + self.config_process + self.translation + self.flash_read
    }

    pub fn add(&mut self, o: &Breakdown) {
        self.config_write += o.config_write;
        self.config_process += o.config_process;
        self.translation += o.translation;
        self.flash_read += o.flash_read;
        self.result_return += o.result_return;
    }
}

/// Per-operation counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounters {
    pub lookups: u64,
    pub commands: u64,
    pub pages_requested: u64,
    pub host_cache_lookups: u64,
    pub host_cache_hits: u64,
    pub partition_lookups: u64,
    pub partition_hits: u64,
    pub ssd_cache_lookups: u64,
    pub ssd_cache_hits: u64,
}

impl OpCounters {
    pub fn add(&mut self, o: &OpCounters) {
        self.lookups += o.lookups;
        self.commands += o.commands;
        self.pages_requested += o.pages_requested;
        self.host_cache_lookups += o.host_cache_lookups;
        self.host_cache_hits += o.host_cache_hits;
        self.partition_lookups += o.partition_lookups;
        self.partition_hits += o.partition_hits;
        self.ssd_cache_lookups += o.ssd_cache_lookups;
        self.ssd_cache_hits += o.ssd_cache_hits;
    }
}

fn rate(hits: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

impl OpCounters {
    pub fn host_hit_rate(&self) -> f64 {
        rate(self.host_cache_hits, self.host_cache_lookups)
    }

    pub fn partition_hit_rate(&self) -> f64 {
        rate(self.partition_hits, self.partition_lookups)
    }

    pub fn ssd_hit_rate(&self) -> f64 {
        rate(self.ssd_cache_hits, self.ssd_cache_lookups)
    }
}

#[derive(Debug, Clone)]
pub struct OpResult {
    pub table_id: u32,
    pub method: Method,
    pub start: Nanos,
    pub end: Nanos,
    pub output: Option<SlsOutput>,
    pub counters: OpCounters,
    pub breakdown: Option<Breakdown>,
    pub error: Option<String>,
}

impl OpResult {
    pub fn latency(&self) -> Nanos {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Owner {
    Standalone,
    Pipeline { batch: usize },
}

#[derive(Debug)]
struct BaselineOp {
    /// Pages still to request, ascending.
    to_issue: VecDeque<u64>,
    inflight: usize,
    /// Values of every needed id, filled from hits and fetched pages.
    values: HashMap<u64, Vec<f32>>,
    needed: HashSet<u64>,
}

#[derive(Debug)]
struct NdpOp {
    rid: Option<u64>,
    slba: u64,
    num_results: u32,
    result_blocks: u32,
    host_ids: usize,
    ssd_out: Option<SlsOutput>,
    t_result: Nanos,
}

#[derive(Debug)]
enum OpKind {
    Baseline(BaselineOp),
    Ndp(NdpOp),
}

#[derive(Debug)]
struct OpState {
    job: Arc<SlsJob>,
    table: usize,
    start: Nanos,
    /// The issuing worker's host CPU is busy until here.
    host_free: Nanos,
    kind: OpKind,
    owner: Owner,
    counters: OpCounters,
    breakdown: Option<Breakdown>,
    failure: Option<String>,
}

/// Events of the full-system simulation.
#[derive(Debug, Clone)]
pub enum SimEvent {
    Device(DeviceEvent),
    Submit(HostCommand),
    OpStart { op: usize },
    OpFinish { op: usize },
    ComputeDone { batch: usize },
}

impl From<DeviceEvent> for SimEvent {
    fn from(e: DeviceEvent) -> Self {
        SimEvent::Device(e)
    }
}

struct HostTable {
    table: Arc<EmbeddingTable>,
    layout: TableLayout,
    lru: Option<LruSet<u64>>,
    partition: Option<StaticPartition>,
    rids: RequestIdAllocator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub sls_workers: usize,
    pub compute_workers: usize,
    /// Batches whose SLS work may be in progress before the oldest one has
    /// finished compute. 1 serializes batches completely.
    pub max_inflight_batches: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig::pipelined(4)
    }
}

impl PipelineConfig {
    /// One SLS operation at a time, and each batch's compute finishes before
    /// the next batch starts.
    pub fn serial() -> Self {
        PipelineConfig {
            sls_workers: 1,
            compute_workers: 1,
            max_inflight_batches: 1,
        }
    }

    pub fn pipelined(sls_workers: usize) -> Self {
        PipelineConfig {
            sls_workers,
            compute_workers: 1,
            max_inflight_batches: 2,
        }
    }
}

/// One inference batch: an SLS job per table, then dense compute.
#[derive(Debug, Clone)]
pub struct Batch {
    pub jobs: Vec<Arc<SlsJob>>,
    pub mlp_ns: Nanos,
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub sls_start: Nanos,
    pub sls_end: Nanos,
    pub compute_start: Nanos,
    pub compute_end: Nanos,
    pub ops: Vec<OpResult>,
}

impl BatchResult {
    pub fn latency(&self) -> Nanos {
        self.compute_end - self.sls_start
    }
}

struct PipelineState {
    cfg: PipelineConfig,
    method: Method,
    batches: Vec<Batch>,
    /// (batch, table) operations not yet started, in order.
    queue: VecDeque<(usize, usize)>,
    idle_workers: usize,
    remaining_ops: Vec<usize>,
    compute_queue: VecDeque<usize>,
    idle_compute: usize,
    computed: usize,
    results: Vec<BatchResult>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HostStats {
    pub counters: OpCounters,
    pub ops_completed: u64,
}

/// The simulated machine: host stack plus one SSD.
pub struct System {
    cost: CostModel,
    cfg: HostConfig,
    storage: Storage,
    clock: SimClock<SimEvent>,
    ftl: Ftl,
    codec: SlbaCodec,
    tables: Vec<HostTable>,
    table_index: HashMap<u32, usize>,
    ops: Vec<Option<OpState>>,
    free_ops: Vec<usize>,
    tag_owner: HashMap<u64, usize>,
    next_tag: u64,
    finished: Vec<OpResult>,
    pipeline: Option<PipelineState>,
    stats: HostStats,
    violations: Vec<String>,
}

impl System {
    /// Lay the tables out back to back on alignment boundaries.
    pub fn new(
        cost: CostModel,
        ftl_cfg: FtlConfig,
        cfg: HostConfig,
        storage: Storage,
        tables: Vec<(Arc<EmbeddingTable>, LayoutMode)>,
        log: bool,
    ) -> Result<Self, HostError> {
        let align = ftl_cfg.alignment;
        let mut store = FlashStore::new();
        let mut host_tables = Vec::new();
        let mut table_index = HashMap::new();
        let mut base = align;
        for (t, mode) in tables {
            let layout = TableLayout::build(&t, mode, cost.page_size, base, align)?;
            base += layout.num_pages().div_ceil(align).max(1) * align;
            store.insert(t.clone(), layout.clone());
            table_index.insert(t.table_id(), host_tables.len());
            host_tables.push(HostTable {
                table: t,
                layout,
                lru: None,
                partition: None,
                rids: RequestIdAllocator::new(align),
            });
        }
        Ok(System {
            ftl: Ftl::new(cost.clone(), ftl_cfg, store, log),
            codec: SlbaCodec::new(align),
            clock: SimClock::new(),
            tables: host_tables,
            table_index,
            ops: Vec::new(),
            free_ops: Vec::new(),
            tag_owner: HashMap::new(),
            next_tag: 0,
            finished: Vec::new(),
            pipeline: None,
            stats: HostStats::default(),
            violations: Vec::new(),
            storage,
            cost,
            cfg,
        })
    }

    pub fn now(&self) -> Nanos {
        self.clock.now()
    }

    pub fn ftl(&self) -> &Ftl {
        &self.ftl
    }

    pub fn cost(&self) -> &CostModel {
        &self.cost
    }

    pub fn host_config(&self) -> &HostConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &HostStats {
        &self.stats
    }

    pub fn ftl_stats(&self) -> &FtlStats {
        self.ftl.stats()
    }

    pub fn layout(&self, table_id: u32) -> Option<&TableLayout> {
        self.table_index
            .get(&table_id)
            .map(|&i| &self.tables[i].layout)
    }

    pub fn table(&self, table_id: u32) -> Option<&Arc<EmbeddingTable>> {
        self.table_index
            .get(&table_id)
            .map(|&i| &self.tables[i].table)
    }

    /// Host-model and device-model invariant violations seen so far.
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.violations.clone();
        v.extend(self.ftl.stats().violations.iter().cloned());
        v
    }

    /// Give every table a host LRU of `entries` vectors (0 removes them).
    pub fn set_host_lru(&mut self, entries: usize) {
        for t in &mut self.tables {
            t.lru = (entries > 0).then(|| LruSet::new(entries));
        }
    }

    pub fn set_partition(&mut self, p: StaticPartition) -> Result<(), HostError> {
        let i = *self
            .table_index
            .get(&p.table_id)
            .ok_or(HostError::UnknownTable(p.table_id))?;
        self.tables[i].partition = Some(p);
        Ok(())
    }

    pub fn partition(&self, table_id: u32) -> Option<&StaticPartition> {
        self.table_index
            .get(&table_id)
            .and_then(|&i| self.tables[i].partition.as_ref())
    }

    /// Run one SLS operation on an otherwise idle system.
    pub fn run_op(&mut self, job: &SlsJob, method: Method) -> Result<OpResult, HostError> {
        self.start_op(Arc::new(job.clone()), method, Owner::Standalone)?;
        self.run_to_idle()?;
        let r = self
            .finished
            .pop()
            .ok_or_else(|| HostError::Invariant("operation did not finish".into()))?;
        match &r.error {
            Some(msg) => Err(HostError::Device(msg.clone())),
            None => Ok(r),
        }
    }

    /// Conventional operator: page reads plus host-side accumulation.
    pub fn baseline_sls(&mut self, job: &SlsJob) -> Result<OpResult, HostError> {
        self.run_op(job, Method::Baseline)
    }

    /// Near-data operator: two commands, device-side accumulation.
    pub fn ndp_sls(&mut self, job: &SlsJob) -> Result<OpResult, HostError> {
        self.run_op(job, Method::Ndp)
    }

    fn run_to_idle(&mut self) -> Result<(), HostError> {
        while let Some((_, ev)) = self.clock.next_event() {
            self.dispatch(ev);
        }
        if !self.ftl.is_quiescent() {
            return Err(HostError::Invariant(
                "device not quiescent after run".into(),
            ));
        }
        let v = self.violations();
        if let Some(first) = v.first() {
            return Err(HostError::Invariant(first.clone()));
        }
        Ok(())
    }

    fn alloc_tag(&mut self, op: usize) -> u64 {
        let tag = self.next_tag;
        self.next_tag += 1;
        self.tag_owner.insert(tag, op);
        tag
    }

    fn start_op(
        &mut self,
        job: Arc<SlsJob>,
        method: Method,
        owner: Owner,
    ) -> Result<usize, HostError> {
        let table = *self
            .table_index
            .get(&job.table_id)
            .ok_or(HostError::UnknownTable(job.table_id))?;
        job.validate(&self.tables[table].table)?;
        let now = self.clock.now();
        let kind = match method {
            Method::Baseline => OpKind::Baseline(BaselineOp {
                to_issue: VecDeque::new(),
                inflight: 0,
                values: HashMap::new(),
                needed: HashSet::new(),
            }),
            Method::Ndp => OpKind::Ndp(NdpOp {
                rid: None,
                slba: 0,
                num_results: job.bags.len() as u32,
                result_blocks: 0,
                host_ids: 0,
                ssd_out: None,
                t_result: 0,
            }),
        };
        let state = OpState {
            counters: OpCounters {
                lookups: job.total_inputs as u64,
                ..OpCounters::default()
            },
            job,
            table,
            start: now,
            host_free: now,
            kind,
            owner,
            breakdown: None,
            failure: None,
        };
        let op = match self.free_ops.pop() {
            Some(i) => {
                self.ops[i] = Some(state);
                i
            }
            None => {
                self.ops.push(Some(state));
                self.ops.len() - 1
            }
        };
        self.clock.schedule(now, SimEvent::OpStart { op });
        Ok(op)
    }

    fn dispatch(&mut self, ev: SimEvent) {
        match ev {
            SimEvent::Device(d) => {
                self.ftl.handle(&mut self.clock, d);
                self.drain_completions();
            }
            SimEvent::Submit(hc) => {
                self.ftl.submit(&mut self.clock, hc);
                self.drain_completions();
            }
            SimEvent::OpStart { op } => self.begin(op),
            SimEvent::OpFinish { op } => self.finish(op),
            SimEvent::ComputeDone { batch } => self.compute_done(batch),
        }
    }

    fn drain_completions(&mut self) {
        for c in self.ftl.take_completions() {
            self.on_completion(c);
        }
    }

    fn op_mut(&mut self, op: usize) -> &mut OpState {
        self.ops[op].as_mut().expect("live op")
    }

    /// Charge `ns` of the op's host CPU starting no earlier than now.
    fn host_work(&mut self, op: usize, ns: Nanos) -> Nanos {
        let now = self.clock.now();
        let s = self.op_mut(op);
        s.host_free = s.host_free.max(now) + ns;
        s.host_free
    }

    fn submit_at(&mut self, op: usize, cmd: NdpCommand, payload: Option<Vec<u8>>) {
        let at = self.host_work(op, self.cost.t_cmd_overhead);
        let tag = self.alloc_tag(op);
        self.op_mut(op).counters.commands += 1;
        self.clock
            .schedule(at, SimEvent::Submit(HostCommand { tag, cmd, payload }));
    }

    fn finish_after_host(&mut self, op: usize, vectors: u64) {
        let ti = self.op_mut(op).table;
        let vb = self.tables[ti].table.vector_bytes();
        let at = self.host_work(op, self.cost.host_accum_time(vectors, vb));
        self.clock.schedule(at, SimEvent::OpFinish { op });
    }

    fn begin(&mut self, op: usize) {
        let (job, ti) = {
            let s = self.op_mut(op);
            (s.job.clone(), s.table)
        };
        if self.storage == Storage::Dram {
            self.finish_after_host(op, job.total_inputs as u64);
            return;
        }
        let is_baseline = matches!(self.op_mut(op).kind, OpKind::Baseline(_));
        if is_baseline {
            self.begin_baseline(op, &job, ti);
        } else {
            self.begin_ndp(op, &job, ti);
        }
    }

    fn begin_baseline(&mut self, op: usize, job: &SlsJob, ti: usize) {
        let functional = self.cfg.functional;
        let t = &mut self.tables[ti];
        let mut counters = OpCounters::default();
        let mut pages = BTreeSet::new();
        let mut needed = HashSet::new();
        let mut values = HashMap::new();
        let mut seen = HashSet::new();
        for id in job.all_ids() {
            let first = seen.insert(id);
            let hit = match &mut t.lru {
                Some(lru) => {
                    counters.host_cache_lookups += 1;
                    let hit = lru.touch(id) || !first;
                    if hit {
                        counters.host_cache_hits += 1;
                    }
                    hit
                }
                None => !first,
            };
            if first && !hit {
                pages.insert(t.layout.locate(id).0);
                needed.insert(id);
            } else if first && functional {
                values.insert(id, t.table.row(id).expect("validated id"));
            }
        }
        let s = self.op_mut(op);
        s.counters.host_cache_lookups += counters.host_cache_lookups;
        s.counters.host_cache_hits += counters.host_cache_hits;
        s.counters.pages_requested += pages.len() as u64;
        let OpKind::Baseline(b) = &mut s.kind else {
            unreachable!()
        };
        b.to_issue = pages.into_iter().collect();
        b.values = values;
        b.needed = needed;
        if b.to_issue.is_empty() {
            self.finish_after_host(op, job.total_inputs as u64);
        } else {
            self.issue_baseline(op);
        }
    }

    fn issue_baseline(&mut self, op: usize) {
        let qd = self.cfg.baseline_queue_depth.max(1);
        loop {
            let s = self.op_mut(op);
            let OpKind::Baseline(b) = &mut s.kind else {
                unreachable!()
            };
            if b.inflight >= qd {
                return;
            }
            let Some(lba) = b.to_issue.pop_front() else {
                return;
            };
            b.inflight += 1;
            self.submit_at(op, NdpCommand::plain_read(lba, 1), None);
        }
    }

    fn begin_ndp(&mut self, op: usize, job: &SlsJob, ti: usize) {
        let t = &mut self.tables[ti];
        let mut counters = OpCounters::default();
        let part = t.partition.as_ref();
        let mut host_ids = 0;
        if let Some(p) = part {
            for id in job.all_ids() {
                counters.partition_lookups += 1;
                if p.contains(id) {
                    counters.partition_hits += 1;
                    host_ids += 1;
                }
            }
        }
        let blob = ConfigBlob::from_job(job, t.table.attr_size(), t.table.dim(), |id| {
            !part.is_some_and(|p| p.contains(id))
        });
        let s = self.op_mut(op);
        s.counters.partition_lookups += counters.partition_lookups;
        s.counters.partition_hits += counters.partition_hits;
        if let OpKind::Ndp(n) = &mut s.kind {
            n.host_ids = host_ids;
        }
        if blob.pairs.is_empty() {
            self.finish_after_host(op, host_ids as u64);
            return;
        }
        let table_id = job.table_id;
        let base = self.tables[ti].layout.base_lba;
        let Some(rid) = self.tables[ti].rids.allocate() else {
            let s = self.op_mut(op);
            s.failure = Some(HostError::RequestIds(table_id).to_string());
            self.clock
                .schedule(self.clock.now(), SimEvent::OpFinish { op });
            return;
        };
        let slba = self
            .codec
            .encode(base, rid)
            .expect("aligned base and id in range");
        let dim = self.tables[ti].table.dim() as u64;
        let page = self.cost.page_size;
        let payload = blob.encode(page);
        let blocks = payload.len() as u64 / page;
        let s = self.op_mut(op);
        if let OpKind::Ndp(n) = &mut s.kind {
            n.rid = Some(rid);
            n.slba = slba;
            n.result_blocks = result_block_count(n.num_results as u64, dim, page) as u32;
        }
        self.submit_at(
            op,
            NdpCommand::sls_config(slba, blocks as u32),
            Some(payload),
        );
    }

    fn on_completion(&mut self, c: Completion) {
        let tag = match &c {
            Completion::PlainRead { tag, .. }
            | Completion::PlainWrite { tag }
            | Completion::ConfigWritten { tag, .. }
            | Completion::SlsResult { tag, .. } => *tag,
        };
        let Some(&op) = self.tag_owner.get(&tag) else {
            self.violations
                .push(format!("completion for unknown tag {tag}"));
            return;
        };
        match c {
            Completion::PlainRead { lba, last, .. } => {
                if last {
                    self.tag_owner.remove(&tag);
                }
                self.page_arrived(op, lba);
            }
            Completion::PlainWrite { .. } => {
                self.tag_owner.remove(&tag);
            }
            Completion::ConfigWritten { status, .. } => {
                self.tag_owner.remove(&tag);
                match status {
                    Ok(()) => {
                        let (slba, blocks) = match &self.op_mut(op).kind {
                            OpKind::Ndp(n) => (n.slba, n.result_blocks),
                            OpKind::Baseline(_) => unreachable!(),
                        };
                        self.submit_at(op, NdpCommand::sls_result(slba, blocks), None);
                    }
                    Err(msg) => self.fail(op, msg),
                }
            }
            Completion::SlsResult { status, report, .. } => {
                self.tag_owner.remove(&tag);
                let now = self.clock.now();
                let ti = self.op_mut(op).table;
                let dim = self.tables[ti].table.dim() as usize;
                let s = self.op_mut(op);
                s.counters.pages_requested += report.pages_requested;
                s.counters.ssd_cache_lookups += report.num_inputs;
                s.counters.ssd_cache_hits += report.ssd_cache_hits;
                let start = s.start;
                s.breakdown = Some(Breakdown {
                    config_write: report.t_config_received.saturating_sub(start),
                    config_process: report.cpu_config_ns,
                    translation: report.cpu_translate_ns,
                    flash_read: (report.t_complete - report.t_config_received)
                        .saturating_sub(report.cpu_config_ns + report.cpu_translate_ns),
                    result_return: now - report.t_complete,
                });
                let OpKind::Ndp(n) = &mut s.kind else {
                    unreachable!()
                };
                let rid = n.rid.take();
                n.t_result = now;
                let host_ids = n.host_ids;
                let num_results = n.num_results as usize;
                match status {
                    Ok(bytes) => match ResultBlob::decode(&bytes, num_results, dim) {
                        Ok(out) => n.ssd_out = Some(out),
                        Err(e) => s.failure = Some(e.to_string()),
                    },
                    Err(msg) => s.failure = Some(msg),
                }
                if let Some(rid) = rid {
                    self.tables[ti].rids.release(rid);
                }
                if host_ids > 0 {
                    self.finish_after_host(op, host_ids as u64);
                } else {
                    let at = self.host_work(op, 0);
                    self.clock.schedule(at, SimEvent::OpFinish { op });
                }
            }
        }
    }

    fn fail(&mut self, op: usize, msg: String) {
        let now = self.clock.now();
        let s = self.op_mut(op);
        s.failure = Some(msg);
        if let OpKind::Ndp(n) = &mut s.kind {
            if let Some(rid) = n.rid.take() {
                let ti = s.table;
                self.tables[ti].rids.release(rid);
            }
        }
        self.clock.schedule(now, SimEvent::OpFinish { op });
    }

    fn page_arrived(&mut self, op: usize, lba: u64) {
        let functional = self.cfg.functional;
        let ti = self.op_mut(op).table;
        let t = &mut self.tables[ti];
        let page = lba - t.layout.base_lba;
        let rows = t.layout.rows_on_page(page);
        let bytes = if functional {
            Some(t.layout.read_page(&t.table, lba).expect("mapped page"))
        } else {
            None
        };
        if let Some(lru) = &mut t.lru {
            for r in rows.clone() {
                lru.insert(r);
            }
        }
        let vb = t.layout.vector_bytes as usize;
        let table = t.table.clone();
        let s = self.ops[op].as_mut().expect("live op");
        let OpKind::Baseline(b) = &mut s.kind else {
            unreachable!()
        };
        for r in rows {
            if b.needed.remove(&r) {
                if let Some(bytes) = &bytes {
                    let slot = (r - (page * t.layout.vectors_per_page)) as usize;
                    let v = table.decode_vector(&bytes[slot * vb..(slot + 1) * vb]);
                    b.values.insert(r, v);
                }
            }
        }
        b.inflight -= 1;
        let done = b.inflight == 0 && b.to_issue.is_empty();
        let lookups = s.job.total_inputs as u64;
        if done {
            if !b.needed.is_empty() {
                self.violations
                    .push(format!("op {op}: {} ids never fetched", b.needed.len()));
            }
            self.finish_after_host(op, lookups);
        } else {
            self.issue_baseline(op);
        }
    }

    fn finish(&mut self, op: usize) {
        let now = self.clock.now();
        let s = self.ops[op].take().expect("live op");
        self.free_ops.push(op);
        // values came through the device model only when storage is flash
        let device_data = self.storage == Storage::Ssd;
        let t = &self.tables[s.table];
        let dim = t.table.dim() as usize;
        let output = if s.failure.is_some() || !self.cfg.functional {
            None
        } else {
            let mut out = match &s.kind {
                OpKind::Ndp(n) => n
                    .ssd_out
                    .clone()
                    .unwrap_or_else(|| SlsOutput::zeros(s.job.bags.len(), dim)),
                OpKind::Baseline(_) => SlsOutput::zeros(s.job.bags.len(), dim),
            };
            for (bi, bag) in s.job.bags.iter().enumerate() {
                let acc = out.bag_mut(bi);
                for id in canonical_ids(&bag.input_ids) {
                    match &s.kind {
                        OpKind::Baseline(b) if device_data => {
                            for (a, v) in acc.iter_mut().zip(&b.values[&id]) {
                                *a += v;
                            }
                        }
                        OpKind::Ndp(_) if device_data => {
                            if t.partition.as_ref().is_some_and(|p| p.contains(id)) {
                                t.table.accumulate_row(id, acc).expect("validated id");
                            }
                        }
                        _ => t.table.accumulate_row(id, acc).expect("validated id"),
                    }
                }
            }
            Some(out)
        };
        let method = match s.kind {
            OpKind::Baseline(_) => Method::Baseline,
            OpKind::Ndp(_) => Method::Ndp,
        };
        self.stats.counters.add(&s.counters);
        self.stats.ops_completed += 1;
        let result = OpResult {
            table_id: s.job.table_id,
            method,
            start: s.start,
            end: now,
            output,
            counters: s.counters,
            breakdown: s.breakdown,
            error: s.failure,
        };
        match s.owner {
            Owner::Standalone => self.finished.push(result),
            Owner::Pipeline { batch } => self.pipeline_op_done(batch, result),
        }
    }

    /// Run a stream of batches through SLS workers and compute workers.
    pub fn run_batches(
        &mut self,
        batches: Vec<Batch>,
        method: Method,
        cfg: PipelineConfig,
    ) -> Result<Vec<BatchResult>, HostError> {
        let n = batches.len();
        let mut queue = VecDeque::new();
        for (b, batch) in batches.iter().enumerate() {
            for t in 0..batch.jobs.len() {
                queue.push_back((b, t));
            }
        }
        let start = self.clock.now();
        self.pipeline = Some(PipelineState {
            cfg,
            method,
            remaining_ops: batches.iter().map(|b| b.jobs.len()).collect(),
            results: (0..n)
                .map(|_| BatchResult {
                    sls_start: Nanos::MAX,
                    sls_end: start,
                    compute_start: 0,
                    compute_end: 0,
                    ops: Vec::new(),
                })
                .collect(),
            batches,
            queue,
            idle_workers: cfg.sls_workers.max(1),
            compute_queue: VecDeque::new(),
            idle_compute: cfg.compute_workers.max(1),
            computed: 0,
        });
        // batches with no tables go straight to compute
        for b in 0..n {
            if self.pipeline.as_ref().expect("pipeline").remaining_ops[b] == 0 {
                self.batch_sls_done(b);
            }
        }
        self.feed_workers()?;
        while let Some((_, ev)) = self.clock.next_event() {
            self.dispatch(ev);
        }
        let p = self.pipeline.take().expect("pipeline");
        if p.computed != n {
            return Err(HostError::Invariant(format!(
                "{} of {n} batches completed",
                p.computed
            )));
        }
        if let Some(e) = p
            .results
            .iter()
            .flat_map(|r| &r.ops)
            .find_map(|o| o.error.clone())
        {
            return Err(HostError::Device(e));
        }
        let v = self.violations();
        if let Some(first) = v.first() {
            return Err(HostError::Invariant(first.clone()));
        }
        Ok(p.results)
    }

    fn feed_workers(&mut self) -> Result<(), HostError> {
        loop {
            let p = self.pipeline.as_mut().expect("pipeline");
            if p.idle_workers == 0 {
                return Ok(());
            }
            let Some(&(b, t)) = p.queue.front() else {
                return Ok(());
            };
            if b >= p.computed + p.cfg.max_inflight_batches.max(1) {
                return Ok(());
            }
            p.queue.pop_front();
            p.idle_workers -= 1;
            let job = p.batches[b].jobs[t].clone();
            let method = p.method;
            let now = self.clock.now();
            let r = &mut p.results[b];
            r.sls_start = r.sls_start.min(now);
            self.start_op(job, method, Owner::Pipeline { batch: b })?;
        }
    }

    fn pipeline_op_done(&mut self, batch: usize, result: OpResult) {
        let now = self.clock.now();
        let p = self.pipeline.as_mut().expect("pipeline");
        p.idle_workers += 1;
        p.remaining_ops[batch] -= 1;
        let r = &mut p.results[batch];
        r.sls_end = r.sls_end.max(now);
        r.ops.push(result);
        if p.remaining_ops[batch] == 0 {
            self.batch_sls_done(batch);
        }
        if let Err(e) = self.feed_workers() {
            self.violations.push(e.to_string());
        }
    }

    fn batch_sls_done(&mut self, batch: usize) {
        let p = self.pipeline.as_mut().expect("pipeline");
        p.compute_queue.push_back(batch);
        self.start_compute();
    }

    fn start_compute(&mut self) {
        let now = self.clock.now();
        let p = self.pipeline.as_mut().expect("pipeline");
        while p.idle_compute > 0 {
            let Some(b) = p.compute_queue.pop_front() else {
                break;
            };
            p.idle_compute -= 1;
            let r = &mut p.results[b];
            if r.sls_start == Nanos::MAX {
                r.sls_start = now;
                r.sls_end = now;
            }
            r.compute_start = now;
            let end = now + p.batches[b].mlp_ns;
            self.clock.schedule(end, SimEvent::ComputeDone { batch: b });
        }
    }

    fn compute_done(&mut self, batch: usize) {
        let now = self.clock.now();
        let p = self.pipeline.as_mut().expect("pipeline");
        p.results[batch].compute_end = now;
        p.idle_compute += 1;
        p.computed += 1;
        self.start_compute();
        if let Err(e) = self.feed_workers() {
            self.violations.push(e.to_string());
        }
    }
}

#[cfg(test)]
#[path = "host_tests.rs"]
mod tests;
