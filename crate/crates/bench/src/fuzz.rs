//! Randomized invariant sweep.
//!
//! Each iteration draws a small random experiment (model shape, caching,
//! pipeline, cost constants, FTL sizing), runs it with the device event log
//! enabled and audits the log. Any reported violation or failed run is a
//! finding. Iteration `i` of a fuzz run with seed `s` uses
//! `derive_seed(s, i)`, so a finding replays from its seed alone.

use std::time::{Duration, Instant};

use recssd_core::host::PipelineConfig;
use recssd_core::rng::{derive_seed, SimRng};
use recssd_core::table::{AttrSize, LayoutMode};
use recssd_core::workloads::MlpCost;

use crate::experiment::{expand, run_cell, CachingMode, ExperimentSpec, Locality};

#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    pub iteration: u64,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FuzzReport {
    pub iterations: u64,
    pub cells: u64,
    pub findings: Vec<Finding>,
}

fn pick<T: Copy>(rng: &mut SimRng, xs: &[T]) -> T {
    xs[rng.below(xs.len() as u64) as usize]
}

fn range(rng: &mut SimRng, lo: u64, hi: u64) -> u64 {
    lo + rng.below(hi - lo + 1)
}

/// A random single-configuration spec (both methods) drawn from `seed`.
pub fn random_spec(seed: u64) -> ExperimentSpec {
    let mut rng = SimRng::new(seed);
    let mut s = ExperimentSpec::new("fuzz", "rm1", vec![range(&mut rng, 1, 16) as u32]);
    s.seed = seed;
    s.rows = range(&mut rng, 16, 4096);
    s.dims = vec![range(&mut rng, 1, 64) as u32];
    s.attr_sizes = vec![pick(
        &mut rng,
        &[AttrSize::One, AttrSize::Two, AttrSize::Four],
    )];
    s.indices_per_bag = vec![range(&mut rng, 1, 40) as u32];
    s.tables = vec![range(&mut rng, 1, 4) as u32];
    s.localities = vec![pick(
        &mut rng,
        &[
            Locality::Uniform,
            Locality::K(0.0),
            Locality::K(1.0),
            Locality::K(2.0),
        ],
    )];
    s.caching = vec![CachingMode {
        host_lru: rng.below(2) == 0,
        ssd_cache: rng.below(2) == 0,
        partition: rng.below(3) == 0,
    }];
    s.host_lru_entries = vec![range(&mut rng, 1, 512) as usize];
    s.ssd_cache_slots = vec![pick(&mut rng, &[1, 16, 1024])];
    s.partition_fractions = vec![pick(&mut rng, &[0.05, 0.25, 0.5, 1.0])];
    s.pipeline = if rng.below(2) == 0 {
        PipelineConfig::serial()
    } else {
        PipelineConfig {
            sls_workers: range(&mut rng, 1, 6) as usize,
            compute_workers: range(&mut rng, 1, 2) as usize,
            max_inflight_batches: range(&mut rng, 1, 3) as usize,
        }
    };
    s.warmup_batches = range(&mut rng, 0, 2) as u32;
    s.measured_batches = range(&mut rng, 1, 5) as u32;

    let c = &mut s.cost;
    c.channels = range(&mut rng, 1, 16) as u32;
    c.page_size = pick(&mut rng, &[4096, 16384]);
    c.t_page_read = range(&mut rng, 10_000, 200_000);
    c.t_cmd_overhead = range(&mut rng, 0, 20_000);
    c.t_cfg_per_pair = range(&mut rng, 0, 1_000);
    c.t_translate_base = range(&mut rng, 0, 20_000);
    c.t_translate_per_byte = range(&mut rng, 0, 32) as f64;
    c.t_cache_hit = range(&mut rng, 0, 5_000);
    c.page_cache_pages = range(&mut rng, 0, 64) as usize;

    let f = &mut s.ftl;
    f.sls_buffer_capacity = range(&mut rng, 1, 32) as usize;
    f.pull_quantum = range(&mut rng, 1, 16) as usize;
    f.ll_queue_depth = range(&mut rng, 1, 4) as u32;

    s.layout = Some(pick(
        &mut rng,
        &[LayoutMode::Packed, LayoutMode::OnePerPage],
    ));
    s.mlp = Some(MlpCost {
        base_ns: range(&mut rng, 0, 100_000),
        per_sample_ns: range(&mut rng, 0, 50_000),
    });
    s.host.baseline_queue_depth = range(&mut rng, 1, 4) as usize;
    s.host.driver_queues = range(&mut rng, 1, 4) as usize;
    s.host.functional = rng.below(2) == 0;
    s.check_log = true;
    s
}

/// Run random specs until `budget` elapses or `max_iterations` is reached.
pub fn fuzz(seed: u64, budget: Duration, max_iterations: Option<u64>) -> FuzzReport {
    let start = Instant::now();
    let mut report = FuzzReport::default();
    let mut i = 0;
    while start.elapsed() < budget && max_iterations.is_none_or(|m| i < m) {
        let it_seed = derive_seed(seed, i);
        let spec = random_spec(it_seed);
        let mut found = Vec::new();
        match expand(&spec) {
            Err(e) => found.push(format!("spec rejected: {e}")),
            Ok(cells) => {
                for cell in cells {
                    report.cells += 1;
                    let method = cell.method;
                    match run_cell(&spec, &cell) {
                        Ok(stats) => found
                            .extend(stats.violations.iter().map(|v| format!("{method:?}: {v}"))),
                        Err(e) => found.push(format!("{method:?}: run failed: {e}")),
                    }
                }
            }
        }
        report
            .findings
            .extend(found.into_iter().map(|message| Finding {
                iteration: i,
                seed: it_seed,
                message,
            }));
        i += 1;
        report.iterations = i;
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_specs_are_reproducible_and_valid() {
        for seed in 0..20 {
            let a = random_spec(seed);
            assert_eq!(a, random_spec(seed));
            assert_eq!(expand(&a).unwrap().len(), 2);
        }
    }

    #[test]
    fn short_fuzz_is_clean() {
        let r = fuzz(1, Duration::from_secs(60), Some(12));
        assert_eq!(r.iterations, 12);
        assert!(r.findings.is_empty(), "{:?}", r.findings);
    }
}
