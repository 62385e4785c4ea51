use crate::lru::LruSet;

use super::{CostModel, EventLog, LogRecord, Nanos};

/// An issued page read. The owner schedules a completion event at
/// `complete` and hands the ticket back to [`FlashArray::complete`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PageTicket {
    pub lba: u64,
    pub channel: u32,
    pub enqueued: Nanos,
    pub start: Nanos,
    pub complete: Nanos,
    pub cached: bool,
}

#[derive(Debug, Clone, Default)]
struct Channel {
    busy_until: Nanos,
    outstanding: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlashStats {
    pub flash_reads: u64,
    pub cache_hits: u64,
}

/// Flash channels with FIFO service plus the SSD page cache.
///
/// A page lives on channel `lba mod C`. An uncached read starts when its
/// channel is free and occupies it for `t_page_read`; a cached read
/// completes after `t_cache_hit` and uses no channel time.
#[derive(Debug, Clone)]
pub struct FlashArray {
    t_page_read: Nanos,
    t_cache_hit: Nanos,
    channels: Vec<Channel>,
    page_cache: LruSet<u64>,
    stats: FlashStats,
}

impl FlashArray {
    pub fn new(cost: &CostModel) -> Self {
        FlashArray {
            t_page_read: cost.t_page_read,
            t_cache_hit: cost.t_cache_hit,
            channels: vec![Channel::default(); cost.channels as usize],
            page_cache: LruSet::new(cost.page_cache_pages),
            stats: FlashStats::default(),
        }
    }

    pub fn num_channels(&self) -> u32 {
        self.channels.len() as u32
    }

    pub fn channel_of(&self, lba: u64) -> u32 {
        (lba % self.channels.len() as u64) as u32
    }

    /// Reads issued to `channel` and not yet completed (cache hits excluded).
    pub fn outstanding(&self, channel: u32) -> u32 {
        self.channels[channel as usize].outstanding
    }

    pub fn is_cached(&self, lba: u64) -> bool {
        self.page_cache.contains(&lba)
    }

    pub fn stats(&self) -> FlashStats {
        self.stats
    }

    pub fn submit_page_read(&mut self, now: Nanos, lba: u64) -> PageTicket {
        let channel = self.channel_of(lba);
        if self.page_cache.touch(lba) {
            self.stats.cache_hits += 1;
            return PageTicket {
                lba,
                channel,
                enqueued: now,
                start: now,
                complete: now + self.t_cache_hit,
                cached: true,
            };
        }
        self.stats.flash_reads += 1;
        let ch = &mut self.channels[channel as usize];
        let start = ch.busy_until.max(now);
        ch.busy_until = start + self.t_page_read;
        ch.outstanding += 1;
        PageTicket {
            lba,
            channel,
            enqueued: now,
            start,
            complete: ch.busy_until,
            cached: false,
        }
    }

    /// Retire a read at its completion time and fill the page cache.
    pub fn complete(&mut self, ticket: &PageTicket, log: &mut EventLog) {
        if !ticket.cached {
            self.channels[ticket.channel as usize].outstanding -= 1;
            self.page_cache.insert(ticket.lba);
        }
        log.push(LogRecord::PageRead {
            channel: ticket.channel,
            lba: ticket.lba,
            enqueued: ticket.enqueued,
            start: ticket.start,
            end: ticket.complete,
            cached: ticket.cached,
        });
    }
}

/// A single resource that serves requests one at a time, in arrival order.
#[derive(Debug, Clone, Default)]
pub struct SerialResource {
    busy_until: Nanos,
    busy_total: Nanos,
}

impl SerialResource {
    /// Reserve `duration` after everything already queued; `(start, end)`.
    pub fn reserve(&mut self, now: Nanos, duration: Nanos) -> (Nanos, Nanos) {
        let start = self.busy_until.max(now);
        self.busy_until = start + duration;
        self.busy_total += duration;
        (start, self.busy_until)
    }

    pub fn is_idle(&self, now: Nanos) -> bool {
        self.busy_until <= now
    }

    pub fn busy_until(&self) -> Nanos {
        self.busy_until
    }

    pub fn busy_total(&self) -> Nanos {
        self.busy_total
    }
}

/// The host-interface DMA engine: one transfer at a time.
#[derive(Debug, Clone)]
pub struct DmaEngine {
    cost: CostModel,
    engine: SerialResource,
    bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DmaTicket {
    pub start: Nanos,
    pub complete: Nanos,
    pub bytes: u64,
}

impl DmaEngine {
    pub fn new(cost: &CostModel) -> Self {
        DmaEngine {
            cost: cost.clone(),
            engine: SerialResource::default(),
            bytes: 0,
        }
    }

    /// Queue a transfer of `bytes` (padded to whole blocks).
    pub fn transfer(&mut self, now: Nanos, bytes: u64) -> DmaTicket {
        let padded = self.cost.blocks_for(bytes) * self.cost.page_size;
        let (start, complete) = self.engine.reserve(now, self.cost.dma_time(bytes));
        self.bytes += padded;
        DmaTicket {
            start,
            complete,
            bytes: padded,
        }
    }

    pub fn bytes_moved(&self) -> u64 {
        self.bytes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_striping() {
        let c = CostModel::default();
        let mut f = FlashArray::new(&c);
        let t: Vec<PageTicket> = (0..8).map(|lba| f.submit_page_read(0, lba)).collect();
        assert!(t.iter().all(|t| t.complete == c.t_page_read));
        let channels: std::collections::HashSet<u32> = t.iter().map(|t| t.channel).collect();
        assert_eq!(channels.len(), 8);
    }

    #[test]
    fn same_channel_serializes() {
        let c = CostModel::default();
        let mut f = FlashArray::new(&c);
        let a = f.submit_page_read(0, 3);
        let b = f.submit_page_read(0, 11);
        assert_eq!(a.complete, c.t_page_read);
        assert_eq!(b.complete, 2 * c.t_page_read);
        assert_eq!(f.outstanding(3), 2);
    }

    #[test]
    fn cache_hit_skips_channel() {
        let c = CostModel::default();
        let mut f = FlashArray::new(&c);
        let mut log = EventLog::new(true);
        let a = f.submit_page_read(0, 5);
        f.complete(&a, &mut log);
        let b = f.submit_page_read(a.complete, 5);
        assert!(b.cached);
        assert_eq!(b.complete - a.complete, c.t_cache_hit);
        assert_eq!(
            f.stats(),
            FlashStats {
                flash_reads: 1,
                cache_hits: 1
            }
        );
    }

    #[test]
    fn dma_serializes() {
        let c = CostModel::default();
        let mut d = DmaEngine::new(&c);
        let a = d.transfer(0, 16384);
        let b = d.transfer(0, 16384);
        assert_eq!(a.complete, 5461);
        assert!((b.complete as i64 - 10_923).abs() <= 1);
        let small = d.transfer(b.complete, 100);
        assert_eq!(small.bytes, 16384);
    }
}
