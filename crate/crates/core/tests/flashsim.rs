use proptest::prelude::*;
use recssd_core::flashsim::{check_log, CostModel, LogRecord, SimClock};
use recssd_core::ftl::{DeviceEvent, FlashStore, Ftl, FtlConfig, HostCommand};
use recssd_core::protocol::NdpCommand;

fn cold() -> CostModel {
    CostModel {
        page_cache_pages: 0,
        ..CostModel::default()
    }
}

/// Submit every (lba, blocks) read at t = 0 and run to completion.
fn stream(cost: CostModel, reads: &[(u64, u32)]) -> Vec<LogRecord> {
    let mut ftl = Ftl::new(cost, FtlConfig::default(), FlashStore::new(), true);
    let mut clock: SimClock<DeviceEvent> = SimClock::new();
    for (tag, &(lba, blocks)) in reads.iter().enumerate() {
        ftl.submit(
            &mut clock,
            HostCommand {
                tag: tag as u64,
                cmd: NdpCommand::plain_read(lba, blocks),
                payload: None,
            },
        );
    }
    while let Some((_, ev)) = clock.next_event() {
        ftl.handle(&mut clock, ev);
    }
    assert!(ftl.is_quiescent());
    ftl.log().records().to_vec()
}

fn page_reads(log: &[LogRecord]) -> Vec<(u32, u64, u64, u64, bool)> {
    log.iter()
        .filter_map(|r| match *r {
            LogRecord::PageRead {
                channel,
                enqueued,
                start,
                end,
                cached,
                ..
            } => Some((channel, enqueued, start, end, cached)),
            _ => None,
        })
        .collect()
}

#[test]
fn sequential_stream_reaches_channel_bandwidth() {
    let cost = cold();
    let reads: Vec<(u64, u32)> = (0..64).map(|i| (i * 128, 128)).collect();
    let log = stream(cost.clone(), &reads);
    let pages = page_reads(&log);
    assert_eq!(pages.len(), 64 * 128);
    let last = pages.iter().map(|p| p.3).max().unwrap();
    let gbps = (pages.len() as u64 * cost.page_size) as f64 / last as f64;
    // channels x page / page read time, from the defaults
    let expected = 8.0 * 16384.0 / 100_000.0;
    assert!((gbps - expected).abs() / expected < 0.01, "{gbps} GB/s");
    assert!((gbps - 1.31).abs() / 1.31 < 0.01, "{gbps} GB/s");
    assert!(check_log(&log, &cost).is_empty());
}

#[test]
fn identical_streams_give_identical_logs() {
    let reads: Vec<(u64, u32)> = (0..40)
        .map(|i| ((i * 7919) % 5000, 1 + (i % 5) as u32))
        .collect();
    let cost = CostModel::default();
    assert_eq!(stream(cost.clone(), &reads), stream(cost, &reads));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_streams_respect_the_hardware_model(
        reads in prop::collection::vec((0u64..4096, 1u32..9), 1..60),
        channels in 1u32..12,
        cache in 0usize..32,
    ) {
        let cost = CostModel { channels, page_cache_pages: cache, ..CostModel::default() };
        let log = stream(cost.clone(), &reads);
        let v = check_log(&log, &cost);
        prop_assert!(v.is_empty(), "{:?}", v);
        let pages = page_reads(&log);
        prop_assert_eq!(pages.len() as u64, reads.iter().map(|r| r.1 as u64).sum::<u64>());
        for &(_, enq, _, end, cached) in &pages {
            if !cached {
                prop_assert!(end - enq >= cost.t_page_read);
            }
        }
        // no window of one page-read time holds more than C uncached starts
        let mut starts: Vec<u64> = pages.iter().filter(|p| !p.4).map(|p| p.2).collect();
        starts.sort_unstable();
        for (i, &s) in starts.iter().enumerate() {
            let n = starts[i..].iter().take_while(|&&x| x < s + cost.t_page_read).count();
            prop_assert!(n as u32 <= channels, "{} starts in window at {}", n, s);
        }
    }
}
