use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{self, Write};

use super::{CostModel, Nanos};

/// SSD CPU work categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CpuCategory {
    ConfigProcess,
    Translation,
}

impl CpuCategory {
    pub fn name(self) -> &'static str {
        match self {
            CpuCategory::ConfigProcess => "config_process",
            CpuCategory::Translation => "translation",
        }
    }
}

/// One line of the event log. Records are appended when the event that ends
/// them fires, so the log is ordered by [`time`](LogRecord::time).
#[derive(Debug, Clone, PartialEq)]
pub enum LogRecord {
    PageRead {
        channel: u32,
        lba: u64,
        enqueued: Nanos,
        start: Nanos,
        end: Nanos,
        cached: bool,
    },
    Dma {
        start: Nanos,
        end: Nanos,
        bytes: u64,
        what: &'static str,
    },
    Cpu {
        start: Nanos,
        end: Nanos,
        category: CpuCategory,
        entry: u32,
    },
    Command {
        time: Nanos,
        kind: &'static str,
        slba: u64,
        blocks: u32,
    },
    Entry {
        time: Nanos,
        entry: u32,
        state: &'static str,
    },
    Deferred {
        time: Nanos,
        slba: u64,
    },
}

impl LogRecord {
    pub fn time(&self) -> Nanos {
        match *self {
            LogRecord::PageRead { end, .. } => end,
            LogRecord::Dma { end, .. } => end,
            LogRecord::Cpu { end, .. } => end,
            LogRecord::Command { time, .. } => time,
            LogRecord::Entry { time, .. } => time,
            LogRecord::Deferred { time, .. } => time,
        }
    }

    pub fn event_type(&self) -> &'static str {
        match self {
            LogRecord::PageRead { cached: true, .. } => "page_cache_hit",
            LogRecord::PageRead { .. } => "page_read",
            LogRecord::Dma { .. } => "dma",
            LogRecord::Cpu { category, .. } => category.name(),
            LogRecord::Command { .. } => "command",
            LogRecord::Entry { .. } => "entry",
            LogRecord::Deferred { .. } => "deferred",
        }
    }

    pub fn detail(&self) -> String {
        let mut s = String::new();
        match self {
            LogRecord::PageRead {
                channel,
                lba,
                enqueued,
                start,
                ..
            } => write!(s, "ch={channel} lba={lba} enq={enqueued} start={start}"),
            LogRecord::Dma {
                start, bytes, what, ..
            } => write!(s, "{what} bytes={bytes} start={start}"),
            LogRecord::Cpu { start, entry, .. } => write!(s, "entry={entry} start={start}"),
            LogRecord::Command {
                kind, slba, blocks, ..
            } => {
                write!(s, "{kind} slba={slba} blocks={blocks}")
            }
            LogRecord::Entry { entry, state, .. } => write!(s, "entry={entry} {state}"),
            LogRecord::Deferred { slba, .. } => write!(s, "slba={slba}"),
        }
        .expect("write to string");
        s
    }
}

#[derive(Debug, Clone, Default)]
pub struct EventLog {
    enabled: bool,
    records: Vec<LogRecord>,
}

impl EventLog {
    pub fn new(enabled: bool) -> Self {
        EventLog {
            enabled,
            records: Vec::new(),
        }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn push(&mut self, r: LogRecord) {
        if self.enabled {
            self.records.push(r);
        }
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    /// `time_ns,event_type,detail` lines with a header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time_ns,event_type,detail")?;
        for r in &self.records {
            writeln!(w, "{},{},{}", r.time(), r.event_type(), r.detail())?;
        }
        Ok(())
    }
}

/// Check the hardware-model invariants over a log. Returns one message per
/// violation.
pub fn check_log(records: &[LogRecord], cost: &CostModel) -> Vec<String> {
    let mut v = Vec::new();
    let mut last = 0;
    for (i, r) in records.iter().enumerate() {
        if r.time() < last {
            v.push(format!("record {i}: time {} before {}", r.time(), last));
        }
        last = r.time();
    }

    // Per-channel FIFO service: each uncached read starts exactly when the
    // channel frees up or when it was enqueued, whichever is later.
    let mut chan_end: HashMap<u32, Nanos> = HashMap::new();
    let mut ends = Vec::new();
    for r in records {
        if let LogRecord::PageRead {
            channel,
            enqueued,
            start,
            end,
            cached: false,
            ..
        } = *r
        {
            if channel >= cost.channels {
                v.push(format!("read on channel {channel} >= {}", cost.channels));
            }
            let prev = chan_end.get(&channel).copied().unwrap_or(0);
            if start < prev {
                v.push(format!(
                    "channel {channel}: read starts at {start} before {prev}"
                ));
            }
            if start != enqueued.max(prev) {
                v.push(format!(
                    "channel {channel}: idle with queued work (enq {enqueued}, free {prev}, start {start})"
                ));
            }
            if end - start != cost.t_page_read || end - enqueued < cost.t_page_read {
                v.push(format!(
                    "channel {channel}: read latency {} below page read time",
                    end - enqueued
                ));
            }
            chan_end.insert(channel, end);
            ends.push(end);
        }
    }
    ends.sort_unstable();
    let mut lo = 0;
    for hi in 0..ends.len() {
        while ends[hi] - ends[lo] >= cost.t_page_read {
            lo += 1;
        }
        if hi - lo + 1 > cost.channels as usize {
            v.push(format!(
                "{} reads completed within one page-read window ending {}",
                hi - lo + 1,
                ends[hi]
            ));
        }
    }

    let mut cpu: Vec<(Nanos, Nanos)> = Vec::new();
    let mut dma: Vec<(Nanos, Nanos)> = Vec::new();
    for r in records {
        match *r {
            LogRecord::Cpu { start, end, .. } => cpu.push((start, end)),
            LogRecord::Dma { start, end, .. } => dma.push((start, end)),
            _ => {}
        }
    }
    for (name, mut spans) in [("ssd cpu", cpu), ("dma", dma)] {
        spans.sort_unstable();
        for w in spans.windows(2) {
            if w[1].0 < w[0].1 {
                v.push(format!("{name}: interval {:?} overlaps {:?}", w[1], w[0]));
            }
        }
    }
    v
}
