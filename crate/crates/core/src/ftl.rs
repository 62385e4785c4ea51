//! Flash translation layer with near-data SLS support.
//!
//! Plain block reads flow straight to the page-level scheduler. An SLS
//! request arrives as a write-like command carrying a [`ConfigBlob`]; the
//! FTL allocates a request entry, pulls the blob over DMA, splits the input
//! pairs by flash page (serving what it can from the embedding cache), feeds
//! page reads into the channel queues round-robin across entries, extracts
//! and accumulates each returned page, and finally returns the result blocks
//! on the matching read-like command.
//!
//! The SSD CPU is a single serial resource. The page-level scheduler runs on
//! it too: new flash reads are only issued between CPU tasks, so long
//! translation work delays issue.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::flashsim::{
    CostModel, CpuCategory, DmaEngine, DmaTicket, EventLog, FlashArray, LogRecord, Nanos,
    PageTicket, SimClock,
};
use crate::protocol::{result_block_count, ConfigBlob, NdpCommand, Opcode, ResultBlob, SlbaCodec};
use crate::sls::SlsOutput;
use crate::table::{EmbeddingTable, TableLayout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FtlConfig {
    /// Entries in the pending-SLS-request buffer.
    pub sls_buffer_capacity: usize,
    /// Page requests pulled from one entry per scheduler iteration.
    pub pull_quantum: usize,
    /// Reads the page-level scheduler keeps per channel (in service + waiting).
    pub ll_queue_depth: u32,
    /// Direct-mapped embedding cache slots; 0 disables the cache.
    pub ssd_cache_slots: usize,
    /// Table alignment in logical blocks.
    pub alignment: u64,
}

impl Default for FtlConfig {
    fn default() -> Self {
        FtlConfig {
            sls_buffer_capacity: 32,
            pull_quantum: 8,
            ll_queue_depth: 1,
            ssd_cache_slots: 8192,
            alignment: crate::protocol::DEFAULT_ALIGNMENT,
        }
    }
}

/// Tables resident on flash, keyed by base LBA.
#[derive(Debug, Clone, Default)]
pub struct FlashStore {
    tables: BTreeMap<u64, (Arc<EmbeddingTable>, TableLayout)>,
}

impl FlashStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, table: Arc<EmbeddingTable>, layout: TableLayout) {
        self.tables.insert(layout.base_lba, (table, layout));
    }

    pub fn by_base(&self, base: u64) -> Option<&(Arc<EmbeddingTable>, TableLayout)> {
        self.tables.get(&base)
    }

    /// The table whose pages cover `lba`.
    pub fn by_lba(&self, lba: u64) -> Option<&(Arc<EmbeddingTable>, TableLayout)> {
        self.tables
            .range(..=lba)
            .next_back()
            .map(|(_, v)| v)
            .filter(|(_, l)| l.contains_lba(lba))
    }

    /// Stored bytes of block `lba`; unmapped blocks read as zeros.
    pub fn read_page(&self, lba: u64, page_size: u64) -> Vec<u8> {
        match self.by_lba(lba) {
            Some((t, l)) => l.read_page(t, lba).expect("layout rows are in range"),
            None => vec![0; page_size as usize],
        }
    }
}

/// Direct-mapped cache of embedding vectors in SSD DRAM. Slot index is
/// `input_id mod num_slots`; the tag is `(table_id, input_id)`; a fill
/// always replaces the slot's occupant.
#[derive(Debug, Clone)]
pub struct EmbeddingCacheSsd {
    slots: Vec<Option<(u32, u64)>>,
}

impl EmbeddingCacheSsd {
    pub fn new(num_slots: usize) -> Self {
        EmbeddingCacheSsd {
            slots: vec![None; num_slots],
        }
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    fn index(&self, id: u64) -> Option<usize> {
        if self.slots.is_empty() {
            None
        } else {
            Some((id % self.slots.len() as u64) as usize)
        }
    }

    pub fn lookup(&self, table_id: u32, id: u64) -> bool {
        self.index(id)
            .is_some_and(|i| self.slots[i] == Some((table_id, id)))
    }

    pub fn insert(&mut self, table_id: u32, id: u64) {
        if let Some(i) = self.index(id) {
            self.slots[i] = Some((table_id, id));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntryState {
    Allocated,
    Configured,
    Processing,
    Complete,
}

impl EntryState {
    fn name(self) -> &'static str {
        match self {
            EntryState::Allocated => "allocated",
            EntryState::Configured => "configured",
            EntryState::Processing => "processing",
            EntryState::Complete => "complete",
        }
    }
}

/// The input pairs that one flash page serves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PagePlan {
    pub lba: u64,
    /// Indices into the entry's sorted pair list.
    pub pairs: Vec<u32>,
}

/// Timing and work record of one SLS request.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntryReport {
    pub num_inputs: u64,
    pub num_results: u64,
    pub t_allocated: Nanos,
    pub t_config_received: Nanos,
    pub t_configured: Nanos,
    pub t_complete: Nanos,
    pub cpu_config_ns: Nanos,
    pub cpu_translate_ns: Nanos,
    pub ssd_cache_hits: u64,
    pub pages_requested: u64,
    pub page_cache_hits: u64,
}

/// One pending SLS request.
#[derive(Debug, Clone)]
pub struct SlsRequestEntry {
    pub key: (u64, u64),
    pub slba: u64,
    /// Raw config bytes as received.
    pub input_config: Vec<u8>,
    pub state: EntryState,
    pub failure: Option<String>,
    config: Option<ConfigBlob>,
    table: Option<Arc<EmbeddingTable>>,
    /// Per-page index lists of pairs that missed the embedding cache.
    pub page_plans: Vec<PagePlan>,
    pub pages_outstanding: u64,
    pub inputs_accumulated: u64,
    pub results_finalized: u64,
    /// Page plans not yet handed to the channel queues.
    pub pending_flash: VecDeque<usize>,
    /// Host read commands waiting for results.
    pub pending_host: VecDeque<(u64, u32)>,
    staged: Vec<f32>,
    staged_count: u64,
    pub scratchpad: SlsOutput,
    returning: bool,
    pub report: EntryReport,
}

impl SlsRequestEntry {
    fn new(key: (u64, u64), slba: u64, payload: Vec<u8>, now: Nanos) -> Self {
        SlsRequestEntry {
            key,
            slba,
            input_config: payload,
            state: EntryState::Allocated,
            failure: None,
            config: None,
            table: None,
            page_plans: Vec::new(),
            pages_outstanding: 0,
            inputs_accumulated: 0,
            results_finalized: 0,
            pending_flash: VecDeque::new(),
            pending_host: VecDeque::new(),
            staged: Vec::new(),
            staged_count: 0,
            scratchpad: SlsOutput::zeros(0, 0),
            returning: false,
            report: EntryReport {
                t_allocated: now,
                ..EntryReport::default()
            },
        }
    }

    pub fn config(&self) -> Option<&ConfigBlob> {
        self.config.as_ref()
    }
}

/// A command as delivered by the host, tagged for completion matching.
#[derive(Debug, Clone)]
pub struct HostCommand {
    pub tag: u64,
    pub cmd: NdpCommand,
    pub payload: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Completion {
    /// One block of a plain read has been transferred; `last` marks the
    /// final block of the command.
    PlainRead {
        tag: u64,
        lba: u64,
        last: bool,
    },
    PlainWrite {
        tag: u64,
    },
    ConfigWritten {
        tag: u64,
        status: Result<(), String>,
    },
    SlsResult {
        tag: u64,
        status: Result<Vec<u8>, String>,
        report: EntryReport,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PageOwner {
    Plain { tag: u64 },
    Sls { slot: usize, plan: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmaPurpose {
    ConfigIn { slot: usize },
    PlainOut { tag: u64, lba: u64 },
    ResultOut { slot: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeviceEvent {
    Page {
        ticket: PageTicket,
        owner: PageOwner,
    },
    Dma {
        ticket: DmaTicket,
        purpose: DmaPurpose,
    },
    /// A config task's processing part ends and its cache-hit translation
    /// begins. Only logs; the task itself finishes at `CpuDone`.
    CpuSplit,
    CpuDone,
}

#[derive(Debug, Clone)]
struct ConfigPlan {
    blob: Result<ConfigBlob, String>,
    hits: Vec<u32>,
    plans: Vec<PagePlan>,
}

#[derive(Debug, Clone)]
enum CpuTask {
    Config { slot: usize },
    Translate { slot: usize, plan: usize },
}

fn task_slot(task: &CpuTask) -> usize {
    match *task {
        CpuTask::Config { slot } | CpuTask::Translate { slot, .. } => slot,
    }
}

#[derive(Debug, Clone)]
struct RunningTask {
    task: CpuTask,
    start: Nanos,
    /// End of the config-processing part (== start for translations).
    split: Nanos,
    end: Nanos,
    plan: Option<ConfigPlan>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FtlStats {
    pub ssd_cache_lookups: u64,
    pub ssd_cache_hits: u64,
    pub cpu_config_ns: Nanos,
    pub cpu_translate_ns: Nanos,
    pub entries_completed: u64,
    pub deferred: u64,
    pub plain_reads: u64,
    pub scheduler_iterations: u64,
    pub violations: Vec<String>,
}

pub struct Ftl {
    cost: CostModel,
    cfg: FtlConfig,
    codec: SlbaCodec,
    flash: FlashArray,
    dma: DmaEngine,
    store: FlashStore,
    ssd_cache: EmbeddingCacheSsd,
    slots: Vec<Option<SlsRequestEntry>>,
    by_key: HashMap<(u64, u64), usize>,
    rr: usize,
    /// Pages issued per slot in the current round-robin round.
    round_issued: Vec<usize>,
    last_turn: Option<usize>,
    deferred: VecDeque<HostCommand>,
    plain_queue: VecDeque<(u64, u64)>,
    plain_remaining: HashMap<u64, u32>,
    cpu_ready: VecDeque<CpuTask>,
    cpu_running: Option<RunningTask>,
    early_reads: Vec<(u64, u64, u32)>,
    config_tags: HashMap<usize, u64>,
    completions: Vec<Completion>,
    stats: FtlStats,
    log: EventLog,
}

impl Ftl {
    pub fn new(cost: CostModel, cfg: FtlConfig, store: FlashStore, log: bool) -> Self {
        Ftl {
            flash: FlashArray::new(&cost),
            dma: DmaEngine::new(&cost),
            codec: SlbaCodec::new(cfg.alignment),
            ssd_cache: EmbeddingCacheSsd::new(cfg.ssd_cache_slots),
            slots: (0..cfg.sls_buffer_capacity).map(|_| None).collect(),
            by_key: HashMap::new(),
            rr: 0,
            round_issued: vec![0; cfg.sls_buffer_capacity],
            last_turn: None,
            deferred: VecDeque::new(),
            plain_queue: VecDeque::new(),
            plain_remaining: HashMap::new(),
            cpu_ready: VecDeque::new(),
            cpu_running: None,
            early_reads: Vec::new(),
            config_tags: HashMap::new(),
            completions: Vec::new(),
            stats: FtlStats::default(),
            log: EventLog::new(log),
            store,
            cost,
            cfg,
        }
    }

    pub fn cost(&self) -> &CostModel {
        &self.cost
    }

    pub fn config(&self) -> &FtlConfig {
        &self.cfg
    }

    pub fn store(&self) -> &FlashStore {
        &self.store
    }

    pub fn flash(&self) -> &FlashArray {
        &self.flash
    }

    pub fn dma(&self) -> &DmaEngine {
        &self.dma
    }

    pub fn stats(&self) -> &FtlStats {
        &self.stats
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn ssd_cache(&self) -> &EmbeddingCacheSsd {
        &self.ssd_cache
    }

    pub fn entry(&self, slot: usize) -> Option<&SlsRequestEntry> {
        self.slots.get(slot).and_then(Option::as_ref)
    }

    pub fn slot_of(&self, slba: u64) -> Option<usize> {
        self.by_key.get(&self.codec.decode(slba)).copied()
    }

    pub fn active_entries(&self) -> usize {
        self.by_key.len()
    }

    pub fn cpu_busy(&self) -> bool {
        self.cpu_running.is_some()
    }

    /// Completions produced since the last call.
    pub fn take_completions(&mut self) -> Vec<Completion> {
        std::mem::take(&mut self.completions)
    }

    fn violation(&mut self, msg: String) {
        self.stats.violations.push(msg);
    }

    fn set_state(&mut self, slot: usize, state: EntryState, now: Nanos) {
        let entry = self.slots[slot].as_mut().expect("live entry");
        if state < entry.state {
            let msg = format!(
                "entry {slot}: illegal transition {:?} -> {:?}",
                entry.state, state
            );
            self.violation(msg);
            return;
        }
        if state == entry.state {
            return;
        }
        entry.state = state;
        self.log.push(LogRecord::Entry {
            time: now,
            entry: slot as u32,
            state: state.name(),
        });
    }

    /// Accept a command from the host.
    pub fn submit<E: From<DeviceEvent>>(&mut self, clock: &mut SimClock<E>, hc: HostCommand) {
        let now = clock.now();
        let kind = match (hc.cmd.opcode, hc.cmd.ndp) {
            (Opcode::Read, false) => "read",
            (Opcode::Write, false) => "write",
            (Opcode::Write, true) => "sls_config",
            (Opcode::Read, true) => "sls_result",
        };
        self.log.push(LogRecord::Command {
            time: now,
            kind,
            slba: hc.cmd.slba,
            blocks: hc.cmd.num_blocks,
        });
        match (hc.cmd.opcode, hc.cmd.ndp) {
            (Opcode::Read, false) => {
                self.plain_remaining.insert(hc.tag, hc.cmd.num_blocks);
                for i in 0..hc.cmd.num_blocks as u64 {
                    self.plain_queue.push_back((hc.tag, hc.cmd.slba + i));
                }
            }
            (Opcode::Write, false) => {
                // tables are loaded before the run; later writes are no-ops
                self.completions
                    .push(Completion::PlainWrite { tag: hc.tag });
            }
            (Opcode::Write, true) => self.accept_config(clock, hc),
            (Opcode::Read, true) => self.accept_result_read(clock, hc),
        }
        self.pump(clock);
    }

    fn accept_config<E: From<DeviceEvent>>(&mut self, clock: &mut SimClock<E>, hc: HostCommand) {
        let now = clock.now();
        let key = self.codec.decode(hc.cmd.slba);
        if self.by_key.contains_key(&key) || self.deferred.iter().any(|d| d.cmd.slba == hc.cmd.slba)
        {
            self.completions.push(Completion::ConfigWritten {
                tag: hc.tag,
                status: Err(format!("request {} already active", hc.cmd.slba)),
            });
            return;
        }
        if self.store.by_base(key.0).is_none() {
            self.completions.push(Completion::ConfigWritten {
                tag: hc.tag,
                status: Err(format!("no table at base {}", key.0)),
            });
            return;
        }
        let Some(slot) = self.slots.iter().position(Option::is_none) else {
            self.stats.deferred += 1;
            self.log.push(LogRecord::Deferred {
                time: now,
                slba: hc.cmd.slba,
            });
            self.deferred.push_back(hc);
            return;
        };
        let payload = hc.payload.unwrap_or_default();
        let bytes = (hc.cmd.num_blocks as u64 * self.cost.page_size).max(payload.len() as u64);
        self.slots[slot] = Some(SlsRequestEntry::new(key, hc.cmd.slba, payload, now));
        self.by_key.insert(key, slot);
        let slba = hc.cmd.slba;
        let early: Vec<(u64, u32)> = self
            .early_reads
            .iter()
            .filter(|r| r.0 == slba)
            .map(|r| (r.1, r.2))
            .collect();
        self.early_reads.retain(|r| r.0 != slba);
        self.slots[slot]
            .as_mut()
            .expect("just allocated")
            .pending_host
            .extend(early);
        self.log.push(LogRecord::Entry {
            time: now,
            entry: slot as u32,
            state: EntryState::Allocated.name(),
        });
        let ticket = self.dma.transfer(now, bytes);
        // the write command completes once its payload is in device memory
        self.config_tags.insert(slot, hc.tag);
        clock.schedule(
            ticket.complete,
            DeviceEvent::Dma {
                ticket,
                purpose: DmaPurpose::ConfigIn { slot },
            }
            .into(),
        );
    }

    fn accept_result_read<E: From<DeviceEvent>>(
        &mut self,
        clock: &mut SimClock<E>,
        hc: HostCommand,
    ) {
        let key = self.codec.decode(hc.cmd.slba);
        if let Some(&slot) = self.by_key.get(&key) {
            let entry = self.slots[slot].as_mut().expect("live entry");
            entry.pending_host.push_back((hc.tag, hc.cmd.num_blocks));
            self.try_return(clock, slot);
        } else if self.deferred.iter().any(|d| d.cmd.slba == hc.cmd.slba) {
            self.early_reads
                .push((hc.cmd.slba, hc.tag, hc.cmd.num_blocks));
        } else {
            self.completions.push(Completion::SlsResult {
                tag: hc.tag,
                status: Err(format!("no active request at slba {}", hc.cmd.slba)),
                report: EntryReport::default(),
            });
        }
    }

    /// Advance a device event.
    pub fn handle<E: From<DeviceEvent>>(&mut self, clock: &mut SimClock<E>, ev: DeviceEvent) {
        let now = clock.now();
        match ev {
            DeviceEvent::Page { ticket, owner } => {
                self.flash.complete(&ticket, &mut self.log);
                match owner {
                    PageOwner::Plain { tag } => {
                        let dma = self.dma.transfer(now, self.cost.page_size);
                        clock.schedule(
                            dma.complete,
                            DeviceEvent::Dma {
                                ticket: dma,
                                purpose: DmaPurpose::PlainOut {
                                    tag,
                                    lba: ticket.lba,
                                },
                            }
                            .into(),
                        );
                    }
                    PageOwner::Sls { slot, plan } => {
                        self.cpu_ready.push_back(CpuTask::Translate { slot, plan });
                    }
                }
            }
            DeviceEvent::Dma { ticket, purpose } => {
                let what = match purpose {
                    DmaPurpose::ConfigIn { .. } => "config_in",
                    DmaPurpose::PlainOut { .. } => "page_out",
                    DmaPurpose::ResultOut { .. } => "result_out",
                };
                self.log.push(LogRecord::Dma {
                    start: ticket.start,
                    end: ticket.complete,
                    bytes: ticket.bytes,
                    what,
                });
                match purpose {
                    DmaPurpose::ConfigIn { slot } => {
                        let entry = self.slots[slot].as_mut().expect("live entry");
                        entry.report.t_config_received = now;
                        let tag = self.config_tags.remove(&slot).expect("config tag");
                        self.completions.push(Completion::ConfigWritten {
                            tag,
                            status: Ok(()),
                        });
                        self.cpu_ready.push_back(CpuTask::Config { slot });
                    }
                    DmaPurpose::PlainOut { tag, lba } => {
                        let left = self.plain_remaining.get_mut(&tag).expect("plain tag");
                        *left -= 1;
                        let last = *left == 0;
                        if last {
                            self.plain_remaining.remove(&tag);
                        }
                        self.completions
                            .push(Completion::PlainRead { tag, lba, last });
                    }
                    DmaPurpose::ResultOut { slot } => {
                        let entry = self.slots[slot].take().expect("live entry");
                        let (tag, _) = *entry.pending_host.front().expect("host read");
                        let bytes = ResultBlob::encode(&entry.scratchpad, self.cost.page_size);
                        self.completions.push(Completion::SlsResult {
                            tag,
                            status: Ok(bytes),
                            report: entry.report.clone(),
                        });
                        self.release(clock, slot, entry);
                    }
                }
            }
            DeviceEvent::CpuSplit => {
                if let Some(run) = &self.cpu_running {
                    self.log.push(LogRecord::Cpu {
                        start: run.start,
                        end: run.split,
                        category: CpuCategory::ConfigProcess,
                        entry: task_slot(&run.task) as u32,
                    });
                }
                return;
            }
            DeviceEvent::CpuDone => self.finish_task(clock),
        }
        self.pump(clock);
    }

    /// Free a slot and admit deferred configs into it.
    fn release<E: From<DeviceEvent>>(
        &mut self,
        clock: &mut SimClock<E>,
        slot: usize,
        entry: SlsRequestEntry,
    ) {
        self.by_key.remove(&entry.key);
        self.slots[slot] = None;
        if entry.pending_host.len() > 1 {
            self.violation(format!(
                "entry {slot}: {} result reads for one request",
                entry.pending_host.len()
            ));
        }
        while self.slots.iter().any(Option::is_none) {
            let Some(hc) = self.deferred.pop_front() else {
                break;
            };
            self.accept_config(clock, hc);
        }
    }

    /// Start the result transfer once the entry is complete and the host
    /// has asked for it.
    fn try_return<E: From<DeviceEvent>>(&mut self, clock: &mut SimClock<E>, slot: usize) {
        let now = clock.now();
        let entry = self.slots[slot].as_mut().expect("live entry");
        if entry.state != EntryState::Complete || entry.returning || entry.pending_host.is_empty() {
            return;
        }
        entry.returning = true;
        if let Some(msg) = entry.failure.clone() {
            let entry = self.slots[slot].take().expect("live entry");
            let (tag, _) = entry.pending_host[0];
            self.completions.push(Completion::SlsResult {
                tag,
                status: Err(msg),
                report: entry.report.clone(),
            });
            self.release(clock, slot, entry);
            return;
        }
        let blocks = result_block_count(
            entry.scratchpad.num_bags() as u64,
            entry.scratchpad.dim as u64,
            self.cost.page_size,
        );
        let ticket = self.dma.transfer(now, blocks * self.cost.page_size);
        clock.schedule(
            ticket.complete,
            DeviceEvent::Dma {
                ticket,
                purpose: DmaPurpose::ResultOut { slot },
            }
            .into(),
        );
    }

    /// The page-level scheduler. It only runs while the SSD CPU is idle and
    /// hands the CPU the next ready task before returning.
    fn pump<E: From<DeviceEvent>>(&mut self, clock: &mut SimClock<E>) {
        if self.cpu_running.is_some() {
            return;
        }
        let mut idle = 0;
        loop {
            self.stats.scheduler_iterations += 1;
            let mut progress = self.issue_plain(clock);
            if !self.by_key.is_empty() {
                progress |= self.take_turn(clock);
            }
            if let Some(task) = self.cpu_ready.pop_front() {
                self.start_task(clock, task);
                return;
            }
            if progress {
                idle = 0;
            } else {
                idle += 1;
                if idle >= self.by_key.len().max(1) {
                    return;
                }
            }
        }
    }

    /// Give the turn to the first entry at or after the round-robin pointer
    /// that can issue a page. The pointer only moves past entries that issue,
    /// so freed channels go to entries in turn rather than to whoever the
    /// pointer happens to rest on.
    fn take_turn<E: From<DeviceEvent>>(&mut self, clock: &mut SimClock<E>) -> bool {
        let n = self.slots.len();
        for k in 0..n {
            let slot = (self.rr + k) % n;
            let ready = self.slots[slot].as_ref().is_some_and(|e| {
                matches!(e.state, EntryState::Configured | EntryState::Processing)
                    && !e.pending_flash.is_empty()
            });
            if !ready {
                continue;
            }
            if self.last_turn.is_some_and(|last| slot <= last) {
                self.round_issued.iter_mut().for_each(|c| *c = 0);
            }
            if self.pull_from(clock, slot) {
                self.last_turn = Some(slot);
                self.rr = (slot + 1) % n;
                return true;
            }
        }
        false
    }

    fn has_room(&self, lba: u64) -> bool {
        self.flash.is_cached(lba)
            || self.flash.outstanding(self.flash.channel_of(lba)) < self.cfg.ll_queue_depth
    }

    fn channels_full(&self) -> bool {
        (0..self.flash.num_channels()).all(|c| self.flash.outstanding(c) >= self.cfg.ll_queue_depth)
    }

    fn issue_plain<E: From<DeviceEvent>>(&mut self, clock: &mut SimClock<E>) -> bool {
        let now = clock.now();
        let mut progress = false;
        let mut i = 0;
        while i < self.plain_queue.len() {
            let (tag, lba) = self.plain_queue[i];
            if !self.has_room(lba) {
                i += 1;
                continue;
            }
            self.plain_queue.remove(i);
            let ticket = self.flash.submit_page_read(now, lba);
            self.stats.plain_reads += 1;
            clock.schedule(
                ticket.complete,
                DeviceEvent::Page {
                    ticket,
                    owner: PageOwner::Plain { tag },
                }
                .into(),
            );
            progress = true;
        }
        progress
    }

    /// Move up to one quantum of page requests from an entry to the channel
    /// queues, skipping requests whose channel is full.
    fn pull_from<E: From<DeviceEvent>>(&mut self, clock: &mut SimClock<E>, slot: usize) -> bool {
        let now = clock.now();
        let ready = matches!(
            self.slots[slot].as_ref().map(|e| e.state),
            Some(EntryState::Configured | EntryState::Processing)
        );
        if !ready {
            return false;
        }
        let mut taken = 0;
        let mut i = 0;
        loop {
            let entry = self.slots[slot].as_ref().expect("live entry");
            if taken >= self.cfg.pull_quantum || i >= entry.pending_flash.len() {
                break;
            }
            let plan = entry.pending_flash[i];
            let lba = entry.page_plans[plan].lba;
            if !self.has_room(lba) {
                if self.channels_full() {
                    break;
                }
                i += 1;
                continue;
            }
            let ticket = self.flash.submit_page_read(now, lba);
            let entry = self.slots[slot].as_mut().expect("live entry");
            entry.pending_flash.remove(i);
            entry.pages_outstanding += 1;
            entry.report.pages_requested += 1;
            if ticket.cached {
                entry.report.page_cache_hits += 1;
            }
            clock.schedule(
                ticket.complete,
                DeviceEvent::Page {
                    ticket,
                    owner: PageOwner::Sls { slot, plan },
                }
                .into(),
            );
            taken += 1;
        }
        if taken > 0 {
            self.set_state(slot, EntryState::Processing, now);
            self.round_issued[slot] += taken;
            if self.round_issued[slot] > self.cfg.pull_quantum {
                let msg = format!(
                    "entry {slot}: {} pages in one round",
                    self.round_issued[slot]
                );
                self.violation(msg);
            }
        }
        taken > 0
    }

    /// Parse and validate a received config, and split it into cache hits
    /// and per-page work.
    fn plan_config(&self, slot: usize) -> (ConfigPlan, Nanos, Nanos) {
        let entry = self.slots[slot].as_ref().expect("live entry");
        let (table, layout) = self
            .store
            .by_base(entry.key.0)
            .expect("table checked on accept");
        let blob = ConfigBlob::decode(&entry.input_config)
            .map_err(|e| e.to_string())
            .and_then(|b| {
                if b.attr_size != table.attr_size().bytes() || b.vec_len != table.dim() {
                    Err(format!(
                        "config shape {}x{} does not match table {}x{}",
                        b.vec_len,
                        b.attr_size,
                        table.dim(),
                        table.attr_size().bytes()
                    ))
                } else if let Some(&(id, _)) = b.pairs.iter().find(|p| p.0 >= table.num_rows()) {
                    Err(format!("input id {id} beyond {} rows", table.num_rows()))
                } else {
                    Ok(b)
                }
            });
        let Ok(b) = &blob else {
            let plan = ConfigPlan {
                blob,
                hits: Vec::new(),
                plans: Vec::new(),
            };
            return (plan, self.cost.t_cfg_per_pair, 0);
        };
        let tid = table.table_id();
        let mut hits = Vec::new();
        let mut plans: Vec<PagePlan> = Vec::new();
        for (i, &(id, _)) in b.pairs.iter().enumerate() {
            if self.ssd_cache.lookup(tid, id) {
                hits.push(i as u32);
                continue;
            }
            let (lba, _) = layout.locate(id);
            match plans.last_mut() {
                Some(p) if p.lba == lba => p.pairs.push(i as u32),
                _ => plans.push(PagePlan {
                    lba,
                    pairs: vec![i as u32],
                }),
            }
        }
        let cfg_ns = self.cost.t_cfg_per_pair * b.pairs.len() as u64;
        let hit_ns = hits.len() as u64 * self.cost.translate_time(1, table.vector_bytes());
        (ConfigPlan { blob, hits, plans }, cfg_ns, hit_ns)
    }

    fn start_task<E: From<DeviceEvent>>(&mut self, clock: &mut SimClock<E>, task: CpuTask) {
        let now = clock.now();
        let (plan, split, end) = match task {
            CpuTask::Config { slot } => {
                let (plan, cfg_ns, hit_ns) = self.plan_config(slot);
                (Some(plan), now + cfg_ns, now + cfg_ns + hit_ns)
            }
            CpuTask::Translate { slot, plan } => {
                let entry = self.slots[slot].as_ref().expect("live entry");
                let table = entry.table.as_ref().expect("configured entry");
                let n = entry.page_plans[plan].pairs.len() as u64;
                (
                    None,
                    now,
                    now + self.cost.translate_time(n, table.vector_bytes()),
                )
            }
        };
        self.cpu_running = Some(RunningTask {
            task,
            start: now,
            split,
            end,
            plan,
        });
        if split > now && end > split {
            // keeps the log in time order when other events land in between
            clock.schedule(split, DeviceEvent::CpuSplit.into());
        }
        clock.schedule(end, DeviceEvent::CpuDone.into());
    }

    fn finish_task<E: From<DeviceEvent>>(&mut self, clock: &mut SimClock<E>) {
        let now = clock.now();
        let Some(run) = self.cpu_running.take() else {
            self.violation(format!("cpu completion at {now} with no running task"));
            return;
        };
        let slot = task_slot(&run.task);
        if run.split > run.start && run.end == run.split {
            self.log.push(LogRecord::Cpu {
                start: run.start,
                end: run.split,
                category: CpuCategory::ConfigProcess,
                entry: slot as u32,
            });
        }
        if run.end > run.split {
            self.log.push(LogRecord::Cpu {
                start: run.split,
                end: run.end,
                category: CpuCategory::Translation,
                entry: slot as u32,
            });
        }
        let cfg_ns = run.split - run.start;
        let tr_ns = run.end - run.split;
        self.stats.cpu_config_ns += cfg_ns;
        self.stats.cpu_translate_ns += tr_ns;
        {
            let entry = self.slots[slot].as_mut().expect("live entry");
            entry.report.cpu_config_ns += cfg_ns;
            entry.report.cpu_translate_ns += tr_ns;
        }
        match run.task {
            CpuTask::Config { .. } => {
                let plan = run.plan.expect("config plan");
                match plan.blob {
                    Err(msg) => {
                        let entry = self.slots[slot].as_mut().expect("live entry");
                        entry.failure = Some(msg);
                        entry.report.t_configured = now;
                        entry.report.t_complete = now;
                        self.set_state(slot, EntryState::Complete, now);
                    }
                    Ok(blob) => self.apply_config(slot, blob, plan.hits, plan.plans, now),
                }
            }
            CpuTask::Translate { plan, .. } => {
                let entry = self.slots[slot].as_mut().expect("live entry");
                let table = entry.table.clone().expect("configured entry");
                let blob = entry.config.as_ref().expect("configured entry");
                let dim = table.dim() as usize;
                let ids: Vec<(u32, u64)> = entry.page_plans[plan]
                    .pairs
                    .iter()
                    .map(|&i| (i, blob.pairs[i as usize].0))
                    .collect();
                for &(i, id) in &ids {
                    let i = i as usize;
                    table
                        .read_row_into(id, &mut entry.staged[i * dim..(i + 1) * dim])
                        .expect("validated id");
                }
                entry.staged_count += ids.len() as u64;
                entry.inputs_accumulated = entry.staged_count;
                entry.pages_outstanding -= 1;
                for &(_, id) in &ids {
                    self.ssd_cache.insert(table.table_id(), id);
                }
                self.maybe_finalize(slot, now);
            }
        }
        self.try_return(clock, slot);
    }

    fn apply_config(
        &mut self,
        slot: usize,
        blob: ConfigBlob,
        hits: Vec<u32>,
        plans: Vec<PagePlan>,
        now: Nanos,
    ) {
        let table = self
            .store
            .by_base(self.slots[slot].as_ref().expect("live entry").key.0)
            .expect("table checked on accept")
            .0
            .clone();
        let dim = table.dim() as usize;
        self.stats.ssd_cache_lookups += blob.pairs.len() as u64;
        self.stats.ssd_cache_hits += hits.len() as u64;
        let entry = self.slots[slot].as_mut().expect("live entry");
        entry.staged = vec![0.0; blob.pairs.len() * dim];
        for &i in &hits {
            let i = i as usize;
            table
                .read_row_into(blob.pairs[i].0, &mut entry.staged[i * dim..(i + 1) * dim])
                .expect("validated id");
        }
        entry.staged_count = hits.len() as u64;
        entry.inputs_accumulated = entry.staged_count;
        entry.report.num_inputs = blob.pairs.len() as u64;
        entry.report.num_results = blob.num_results as u64;
        entry.report.ssd_cache_hits = hits.len() as u64;
        entry.report.t_configured = now;
        entry.pending_flash = (0..plans.len()).collect();
        entry.page_plans = plans;
        entry.config = Some(blob);
        entry.table = Some(table);
        self.set_state(slot, EntryState::Configured, now);
        self.maybe_finalize(slot, now);
    }

    /// Sum staged vectors into the scratchpad in pair order once every input
    /// has arrived. Pairs are sorted by input id, so each bag is reduced in
    /// ascending id order whatever order the pages came back in.
    fn maybe_finalize(&mut self, slot: usize, now: Nanos) {
        let entry = self.slots[slot].as_mut().expect("live entry");
        let blob = entry.config.as_ref().expect("configured entry");
        if entry.staged_count < blob.pairs.len() as u64 {
            return;
        }
        let dim = entry.table.as_ref().expect("configured entry").dim() as usize;
        let mut out = SlsOutput::zeros(blob.num_results as usize, dim);
        for (i, &(_, r)) in blob.pairs.iter().enumerate() {
            let src = &entry.staged[i * dim..(i + 1) * dim];
            for (a, v) in out.bag_mut(r as usize).iter_mut().zip(src) {
                *a += v;
            }
        }
        entry.results_finalized = blob.num_results as u64;
        entry.scratchpad = out;
        entry.staged = Vec::new();
        entry.report.t_complete = now;
        let mut problems = Vec::new();
        if entry.pages_outstanding != 0 || !entry.pending_flash.is_empty() {
            problems.push(format!(
                "entry {slot}: complete with {} pages outstanding, {} pending",
                entry.pages_outstanding,
                entry.pending_flash.len()
            ));
        }
        if entry.staged_count != blob.pairs.len() as u64 {
            problems.push(format!(
                "entry {slot}: accumulated {} of {} inputs",
                entry.staged_count,
                blob.pairs.len()
            ));
        }
        for p in problems {
            self.violation(p);
        }
        self.stats.entries_completed += 1;
        self.set_state(slot, EntryState::Complete, now);
    }

    /// True when nothing is queued or in flight inside the device.
    pub fn is_quiescent(&self) -> bool {
        self.by_key.is_empty()
            && self.deferred.is_empty()
            && self.plain_queue.is_empty()
            && self.plain_remaining.is_empty()
            && self.cpu_ready.is_empty()
            && self.cpu_running.is_none()
    }
}

#[cfg(test)]
#[path = "ftl_tests.rs"]
mod tests;
