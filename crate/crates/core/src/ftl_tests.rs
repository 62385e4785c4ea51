use super::*;
use crate::flashsim::check_log;
use crate::protocol::{NdpCommand, DEFAULT_ALIGNMENT};
use crate::sls::{sls_reference, SlsJob};
use crate::table::{AttrSize, LayoutMode};

const P: u64 = 16384;

fn store_with(rows: u64, dim: u32, mode: LayoutMode) -> (FlashStore, Arc<EmbeddingTable>) {
    let t = Arc::new(EmbeddingTable::seeded(3, rows, dim, AttrSize::Four, 77).unwrap());
    let layout = TableLayout::build(&t, mode, P, DEFAULT_ALIGNMENT, DEFAULT_ALIGNMENT).unwrap();
    let mut s = FlashStore::new();
    s.insert(t.clone(), layout);
    (s, t)
}

fn ftl(cfg: FtlConfig, store: FlashStore) -> Ftl {
    Ftl::new(CostModel::default(), cfg, store, true)
}

fn config_cmd(tag: u64, rid: u64, job: &SlsJob, t: &EmbeddingTable) -> HostCommand {
    let blob = ConfigBlob::from_job(job, t.attr_size(), t.dim(), |_| true);
    let bytes = blob.encode(P);
    HostCommand {
        tag,
        cmd: NdpCommand::sls_config(DEFAULT_ALIGNMENT + rid, (bytes.len() as u64 / P) as u32),
        payload: Some(bytes),
    }
}

fn result_cmd(tag: u64, rid: u64, job: &SlsJob, t: &EmbeddingTable) -> HostCommand {
    let blocks = result_block_count(job.bags.len() as u64, t.dim() as u64, P);
    HostCommand {
        tag,
        cmd: NdpCommand::sls_result(DEFAULT_ALIGNMENT + rid, blocks as u32),
        payload: None,
    }
}

/// Drive the device: submit each write at t=0, and the matching read as soon
/// as the write completes. Returns (completion time, completion) pairs.
fn run(f: &mut Ftl, jobs: &[SlsJob], t: &EmbeddingTable) -> Vec<(Nanos, Completion)> {
    let mut clock: SimClock<DeviceEvent> = SimClock::new().with_ceiling(10_000_000);
    for (i, job) in jobs.iter().enumerate() {
        f.submit(&mut clock, config_cmd(i as u64, i as u64, job, t));
    }
    let mut done = Vec::new();
    loop {
        for c in f.take_completions() {
            if let Completion::ConfigWritten {
                tag,
                status: Ok(()),
            } = &c
            {
                let i = *tag as usize;
                f.submit(&mut clock, result_cmd(1000 + *tag, i as u64, &jobs[i], t));
            }
            done.push((clock.now(), c));
        }
        match clock.next_event() {
            Some((_, ev)) => f.handle(&mut clock, ev),
            None => break,
        }
    }
    for c in f.take_completions() {
        done.push((clock.now(), c));
    }
    done
}

fn results(done: &[(Nanos, Completion)]) -> Vec<(Nanos, u64, Vec<u8>, EntryReport)> {
    done.iter()
        .filter_map(|(t, c)| match c {
            Completion::SlsResult {
                tag,
                status: Ok(b),
                report,
            } => Some((*t, *tag, b.clone(), report.clone())),
            _ => None,
        })
        .collect()
}

#[test]
fn single_request_timeline() {
    let (store, t) = store_with(1000, 32, LayoutMode::Packed);
    let mut f = ftl(FtlConfig::default(), store);
    // three inputs on page 0, two bags
    let job = SlsJob::new(3, vec![vec![1, 5], vec![9]]);
    let done = run(&mut f, std::slice::from_ref(&job), &t);
    let r = results(&done);
    assert_eq!(r.len(), 1);
    let c = CostModel::default();
    let config_in = c.dma_time(P);
    let cfg = 3 * c.t_cfg_per_pair;
    let tr = c.translate_time(3, 128);
    let out = c.dma_time(P);
    assert_eq!(r[0].0, config_in + cfg + c.t_page_read + tr + out);
    let rep = &r[0].3;
    assert_eq!(rep.t_config_received, config_in);
    assert_eq!(rep.t_configured, config_in + cfg);
    assert_eq!(rep.cpu_config_ns, cfg);
    assert_eq!(rep.cpu_translate_ns, tr);
    assert_eq!(rep.pages_requested, 1);
    let want = sls_reference(&t, &job).unwrap();
    let got = ResultBlob::decode(&r[0].2, 2, 32).unwrap();
    assert!(got.bits_eq(&want));
    assert!(check_log(f.log().records(), f.cost()).is_empty());
    assert!(f.is_quiescent());
}

#[test]
fn results_match_reference_across_pages() {
    let (store, t) = store_with(5000, 16, LayoutMode::Packed);
    let mut f = ftl(FtlConfig::default(), store);
    let mut rng = crate::rng::SimRng::new(4);
    let jobs: Vec<SlsJob> = (0..40)
        .map(|_| {
            let bags = (0..1 + rng.below(6))
                .map(|_| (0..rng.below(30)).map(|_| rng.below(5000)).collect())
                .collect();
            SlsJob::new(3, bags)
        })
        .collect();
    let done = run(&mut f, &jobs, &t);
    let r = results(&done);
    assert_eq!(r.len(), jobs.len());
    for (_, tag, bytes, _) in r {
        let job = &jobs[(tag - 1000) as usize];
        let want = sls_reference(&t, job).unwrap();
        let got = ResultBlob::decode(&bytes, job.bags.len(), 16).unwrap();
        assert!(got.bits_eq(&want), "job {tag}");
    }
    assert!(f.stats().deferred > 0);
    assert!(
        f.stats().violations.is_empty(),
        "{:?}",
        f.stats().violations
    );
    assert!(check_log(f.log().records(), f.cost()).is_empty());
    assert!(f.is_quiescent());
}

#[test]
fn buffer_full_defers_then_admits() {
    let (store, t) = store_with(1 << 12, 32, LayoutMode::OnePerPage);
    let cfg = FtlConfig {
        ssd_cache_slots: 0,
        ..FtlConfig::default()
    };
    let mut f = ftl(cfg, store);
    let jobs: Vec<SlsJob> = (0..33).map(|i| SlsJob::new(3, vec![vec![i * 7]])).collect();
    let done = run(&mut f, &jobs, &t);
    assert_eq!(results(&done).len(), 33);
    assert_eq!(f.stats().deferred, 1);
    let deferred = f
        .log()
        .records()
        .iter()
        .filter(|r| matches!(r, LogRecord::Deferred { .. }))
        .count();
    assert_eq!(deferred, 1);
    // the 33rd config is only acknowledged after a slot frees up
    let ack = |tag: u64| {
        done.iter()
            .find(|(_, c)| matches!(c, Completion::ConfigWritten { tag: t, .. } if *t == tag))
            .unwrap()
            .0
    };
    let first_result = results(&done).iter().map(|r| r.0).min().unwrap();
    assert!(ack(32) > first_result);
}

#[test]
fn ssd_cache_serves_repeat_without_flash() {
    let (store, t) = store_with(1 << 12, 32, LayoutMode::OnePerPage);
    let mut f = ftl(FtlConfig::default(), store);
    let job = SlsJob::new(3, vec![vec![10, 20, 30]]);
    run(&mut f, std::slice::from_ref(&job), &t);
    let reads = f.flash().stats().flash_reads;
    assert_eq!(reads, 3);
    let done = run(&mut f, std::slice::from_ref(&job), &t);
    let r = results(&done);
    assert_eq!(f.flash().stats().flash_reads, reads);
    assert_eq!(r[0].3.ssd_cache_hits, 3);
    assert_eq!(r[0].3.pages_requested, 0);
    let c = CostModel::default();
    assert_eq!(r[0].3.cpu_translate_ns, 3 * c.translate_time(1, 128));
    let got = ResultBlob::decode(&r[0].2, 1, 32).unwrap();
    assert!(got.bits_eq(&sls_reference(&t, &job).unwrap()));
}

#[test]
fn direct_mapped_conflict_evicts() {
    let mut c = EmbeddingCacheSsd::new(8);
    c.insert(1, 3);
    assert!(c.lookup(1, 3));
    assert!(!c.lookup(2, 3));
    c.insert(1, 11);
    assert!(!c.lookup(1, 3));
    assert!(c.lookup(1, 11));
    let off = EmbeddingCacheSsd::new(0);
    assert!(!off.lookup(1, 3));
}

#[test]
fn malformed_config_fails_cleanly() {
    let (store, _t) = store_with(100, 32, LayoutMode::Packed);
    let mut f = ftl(FtlConfig::default(), store);
    let mut clock: SimClock<DeviceEvent> = SimClock::new();
    let mut bytes = vec![0u8; P as usize];
    bytes[0] = 3; // bad attribute size
    f.submit(
        &mut clock,
        HostCommand {
            tag: 1,
            cmd: NdpCommand::sls_config(DEFAULT_ALIGNMENT, 1),
            payload: Some(bytes),
        },
    );
    f.submit(
        &mut clock,
        HostCommand {
            tag: 2,
            cmd: NdpCommand::sls_result(DEFAULT_ALIGNMENT, 1),
            payload: None,
        },
    );
    clock.run_until_idle(|c, ev| f.handle(c, ev)).unwrap();
    let done = f.take_completions();
    assert!(done.iter().any(|c| matches!(
        c,
        Completion::SlsResult {
            tag: 2,
            status: Err(_),
            ..
        }
    )));
    assert!(f.is_quiescent());
}

#[test]
fn unknown_request_and_table_are_rejected() {
    let (store, _t) = store_with(100, 32, LayoutMode::Packed);
    let mut f = ftl(FtlConfig::default(), store);
    let mut clock: SimClock<DeviceEvent> = SimClock::new();
    f.submit(
        &mut clock,
        HostCommand {
            tag: 1,
            cmd: NdpCommand::sls_result(DEFAULT_ALIGNMENT + 5, 1),
            payload: None,
        },
    );
    f.submit(
        &mut clock,
        HostCommand {
            tag: 2,
            cmd: NdpCommand::sls_config(7 * DEFAULT_ALIGNMENT, 1),
            payload: Some(vec![0; P as usize]),
        },
    );
    let done = f.take_completions();
    assert!(matches!(
        done[0],
        Completion::SlsResult {
            tag: 1,
            status: Err(_),
            ..
        }
    ));
    assert!(matches!(
        done[1],
        Completion::ConfigWritten {
            tag: 2,
            status: Err(_)
        }
    ));
}

#[test]
fn plain_reads_stripe_and_return_each_block() {
    let (store, _t) = store_with(1 << 12, 32, LayoutMode::OnePerPage);
    let cfg = FtlConfig {
        ll_queue_depth: 4,
        ..FtlConfig::default()
    };
    let mut f = ftl(cfg, store);
    let mut clock: SimClock<DeviceEvent> = SimClock::new();
    f.submit(
        &mut clock,
        HostCommand {
            tag: 9,
            cmd: NdpCommand::plain_read(DEFAULT_ALIGNMENT, 8),
            payload: None,
        },
    );
    let end = clock.run_until_idle(|c, ev| f.handle(c, ev)).unwrap();
    let done = f.take_completions();
    assert_eq!(done.len(), 8);
    assert_eq!(
        done.iter()
            .filter(|c| matches!(c, Completion::PlainRead { last: true, .. }))
            .count(),
        1
    );
    let c = CostModel::default();
    // all eight pages read in parallel, then eight serialized transfers
    assert_eq!(end, c.t_page_read + 8 * c.dma_time(P));
    assert!(check_log(f.log().records(), f.cost()).is_empty());
}

#[test]
fn entries_share_channels_round_robin() {
    let (store, t) = store_with(1 << 14, 32, LayoutMode::OnePerPage);
    let cfg = FtlConfig {
        ssd_cache_slots: 0,
        ..FtlConfig::default()
    };
    let mut f = ftl(cfg, store);
    // two requests of 64 distinct pages each
    let a = SlsJob::new(3, vec![(0..64).collect()]);
    let b = SlsJob::new(3, vec![(1000..1064).collect()]);
    let done = run(&mut f, &[a, b], &t);
    let r = results(&done);
    assert_eq!(r.len(), 2);
    let gap = r[0].0.abs_diff(r[1].0);
    // interleaved service: both finish near the end rather than one after the other
    assert!(gap < 20 * f.cost().t_page_read, "gap {gap}");
    let states: Vec<&str> = f
        .log()
        .records()
        .iter()
        .filter_map(|r| match r {
            LogRecord::Entry {
                entry: 0, state, ..
            } => Some(*state),
            _ => None,
        })
        .collect();
    assert_eq!(
        &states[..4],
        &["allocated", "configured", "processing", "complete"]
    );
}

fn no_cache() -> FtlConfig {
    FtlConfig {
        ssd_cache_slots: 0,
        ..FtlConfig::default()
    }
}

#[test]
fn small_request_is_not_starved_by_large_one() {
    let (store, t) = store_with(1 << 14, 32, LayoutMode::OnePerPage);
    let big = SlsJob::new(3, vec![(0..400).collect()]);
    let small = SlsJob::new(3, vec![vec![5000]]);
    let mut alone = ftl(no_cache(), store.clone());
    let a = results(&run(&mut alone, std::slice::from_ref(&big), &t));
    let mut both = ftl(no_cache(), store);
    let r = results(&run(&mut both, &[big, small], &t));
    let small_done = r.iter().find(|x| x.1 == 1001).unwrap().0;
    assert!(small_done <= a[0].0, "{small_done} > {}", a[0].0);
    assert!(small_done < a[0].0 / 4);
    assert!(
        both.stats().violations.is_empty(),
        "{:?}",
        both.stats().violations
    );
}

#[test]
fn identical_requests_finish_together() {
    let (store, t) = store_with(1 << 14, 32, LayoutMode::OnePerPage);
    let jobs: Vec<SlsJob> = (0..4)
        .map(|i| SlsJob::new(3, vec![(i * 1000..i * 1000 + 64).collect()]))
        .collect();
    let mut f = ftl(no_cache(), store);
    let r = results(&run(&mut f, &jobs, &t));
    let first = r.iter().map(|x| x.0).min().unwrap();
    let last = r.iter().map(|x| x.0).max().unwrap();
    let c = f.cost();
    let quantum = f.config().pull_quantum as u64;
    let turn = quantum * (c.t_page_read + c.translate_time(1, 128)) + c.dma_time(P);
    assert!(last - first <= turn, "spread {} > {turn}", last - first);
    assert!(
        f.stats().violations.is_empty(),
        "{:?}",
        f.stats().violations
    );
}

#[test]
fn pulls_alternate_between_entries() {
    let (store, t) = store_with(1 << 14, 32, LayoutMode::OnePerPage);
    let cfg = FtlConfig {
        ll_queue_depth: 64,
        ..no_cache()
    };
    let q = cfg.pull_quantum as u64;
    // A's long config keeps the CPU busy until B's config is queued behind it
    let a = SlsJob::new(3, vec![(0..2 * q).flat_map(|i| [i; 20]).collect()]);
    let b = SlsJob::new(3, vec![(100..100 + 2 * q).collect()]);
    let mut f = ftl(cfg, store);
    run(&mut f, &[a, b], &t);
    let mut per_channel: Vec<Vec<(Nanos, bool)>> = vec![Vec::new(); f.cost().channels as usize];
    for r in f.log().records() {
        if let LogRecord::PageRead {
            channel,
            lba,
            start,
            ..
        } = *r
        {
            per_channel[channel as usize].push((start, lba - DEFAULT_ALIGNMENT >= 100));
        }
    }
    assert!(
        f.stats().violations.is_empty(),
        "{:?}",
        f.stats().violations
    );
    // each channel serves A, B, A, B in issue order
    for ch in &mut per_channel {
        ch.sort();
        let owners: Vec<bool> = ch.iter().map(|x| x.1).collect();
        assert_eq!(owners, [false, true, false, true]);
    }
}
