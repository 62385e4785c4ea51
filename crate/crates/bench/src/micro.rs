//! Standalone SLS operator benchmark over sequential and strided id streams.
//!
//! Each configuration runs one SLS operation on a cold system per method: no
//! host cache, empty SSD caches. Sequential ids pack many lookups into each
//! page; strided ids put every lookup on its own page.

use std::sync::Arc;

use recssd_core::flashsim::CostModel;
use recssd_core::ftl::FtlConfig;
use recssd_core::host::{HostConfig, HostError, Method, OpResult, Storage, System};
use recssd_core::protocol::DEFAULT_ALIGNMENT;
use recssd_core::sls::SlsJob;
use recssd_core::table::{AttrSize, EmbeddingTable, LayoutMode, TableError, TableLayout};
use recssd_core::tracegen::{seq_trace, str_trace, TraceError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MicroError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Host(#[from] HostError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    Seq,
    Str,
}

impl Pattern {
    pub fn name(self) -> &'static str {
        match self {
            Pattern::Seq => "seq",
            Pattern::Str => "str",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MicroSpec {
    pub patterns: Vec<Pattern>,
    pub batch_sizes: Vec<u32>,
    pub indices_per_bag: u32,
    pub rows: u64,
    pub dim: u32,
    pub attr_size: AttrSize,
    pub layout: LayoutMode,
    pub seed: u64,
    pub cost: CostModel,
    pub ftl: FtlConfig,
    pub host: HostConfig,
}

impl Default for MicroSpec {
    fn default() -> Self {
        MicroSpec {
            patterns: vec![Pattern::Seq, Pattern::Str],
            batch_sizes: vec![1, 4, 8, 16, 32],
            indices_per_bag: 80,
            rows: 1 << 20,
            dim: 32,
            attr_size: AttrSize::Four,
            layout: LayoutMode::Packed,
            seed: 0,
            cost: CostModel::default(),
            ftl: FtlConfig::default(),
            host: HostConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroRow {
    pub pattern: Pattern,
    pub batch_size: u32,
    pub baseline_ns: u64,
    pub ndp_ns: u64,
    pub speedup: f64,
    pub config_write_ns: u64,
    pub config_process_ns: u64,
    pub translation_ns: u64,
    pub flash_read_ns: u64,
    pub result_return_ns: u64,
    /// Translation over total FTL time of the near-data run.
    pub translation_share: f64,
    pub baseline_commands: u64,
    pub ndp_commands: u64,
    pub ndp_pages: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MicroResult {
    pub rows: Vec<MicroRow>,
    pub violations: Vec<String>,
}

fn job(
    spec: &MicroSpec,
    table: &EmbeddingTable,
    pattern: Pattern,
    b: u32,
) -> Result<SlsJob, MicroError> {
    let n = b * spec.indices_per_bag;
    let trace = match pattern {
        Pattern::Seq => seq_trace(n, 0, spec.rows, b, spec.indices_per_bag)?,
        Pattern::Str => {
            let layout = TableLayout::build(
                table,
                spec.layout,
                spec.cost.page_size,
                DEFAULT_ALIGNMENT,
                DEFAULT_ALIGNMENT,
            )?;
            let stride = layout.vectors_per_page;
            str_trace(n, stride, &layout, b, spec.indices_per_bag)?
        }
    };
    let ids: Vec<u64> = trace.ids().collect();
    let bags = ids
        .chunks(spec.indices_per_bag.max(1) as usize)
        .map(<[u64]>::to_vec)
        .collect();
    Ok(SlsJob::new(table.table_id(), bags))
}

fn cold_run(
    spec: &MicroSpec,
    table: &Arc<EmbeddingTable>,
    job: &SlsJob,
    method: Method,
) -> Result<(OpResult, Vec<String>), MicroError> {
    let mut sys = System::new(
        spec.cost.clone(),
        spec.ftl.clone(),
        spec.host.clone(),
        Storage::Ssd,
        vec![(table.clone(), spec.layout)],
        false,
    )?;
    let r = sys.run_op(job, method)?;
    Ok((r, sys.violations()))
}

pub fn run_micro(spec: &MicroSpec) -> Result<MicroResult, MicroError> {
    let table = Arc::new(EmbeddingTable::seeded(
        0,
        spec.rows,
        spec.dim,
        spec.attr_size,
        spec.seed,
    )?);
    let mut out = MicroResult::default();
    for &pattern in &spec.patterns {
        for &b in &spec.batch_sizes {
            let job = job(spec, &table, pattern, b)?;
            let (base, v1) = cold_run(spec, &table, &job, Method::Baseline)?;
            let (ndp, v2) = cold_run(spec, &table, &job, Method::Ndp)?;
            out.violations.extend(v1.into_iter().chain(v2));
            if let (Some(x), Some(y)) = (&base.output, &ndp.output) {
                if !x.bits_eq(y) {
                    out.violations.push(format!(
                        "{pattern:?} B={b}: near-data output differs from baseline"
                    ));
                }
            }
            let bd = ndp.breakdown.unwrap_or_default();
            let ftl = bd.ftl_total();
            out.rows.push(MicroRow {
                pattern,
                batch_size: b,
                baseline_ns: base.latency(),
                ndp_ns: ndp.latency(),
                speedup: base.latency() as f64 / ndp.latency().max(1) as f64,
                config_write_ns: bd.config_write,
                config_process_ns: bd.config_process,
                translation_ns: bd.translation,
                flash_read_ns: bd.flash_read,
                result_return_ns: bd.result_return,
                translation_share: if ftl == 0 {
                    0.0
                } else {
                    bd.translation as f64 / ftl as f64
                },
                baseline_commands: base.counters.commands,
                ndp_commands: ndp.counters.commands,
                ndp_pages: ndp.counters.pages_requested,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> MicroSpec {
        MicroSpec {
            batch_sizes: vec![1, 2],
            indices_per_bag: 8,
            rows: 1 << 12,
            ..MicroSpec::default()
        }
    }

    #[test]
    fn patterns_touch_expected_pages() {
        let r = run_micro(&small()).unwrap();
        assert!(r.violations.is_empty(), "{:?}", r.violations);
        let seq = &r.rows[1];
        assert_eq!((seq.pattern, seq.batch_size), (Pattern::Seq, 2));
        // 16 consecutive 128-byte vectors share one page
        assert_eq!(seq.baseline_commands, 1);
        assert_eq!(seq.ndp_pages, 1);
        let strided = &r.rows[3];
        assert_eq!(strided.pattern, Pattern::Str);
        assert_eq!(strided.baseline_commands, 16);
        assert_eq!(strided.ndp_pages, 16);
        assert!(r.rows.iter().all(|x| x.ndp_commands == 2));
    }
}
