//! gnuplot-compatible data files: `#` comment headers, whitespace-separated
//! columns, and two blank lines between data blocks so `index N` selects a
//! series.

use std::collections::BTreeMap;
use std::io::{self, Write};

use crate::experiment::{speedups, Row};
use crate::locality::{CachePoint, ReuseCdf};
use crate::micro::{MicroRow, Pattern};

/// Near-data speedup over baseline vs batch size, one block per
/// (model, caching, locality) series. Repeats are averaged.
pub fn write_speedup_dat<W: Write>(rows: &[Row], mut w: W) -> io::Result<()> {
    let mut series: BTreeMap<(String, String, String), BTreeMap<u32, Vec<f64>>> = BTreeMap::new();
    for (r, s) in speedups(rows) {
        series
            .entry((r.model.clone(), r.caching.clone(), r.locality.clone()))
            .or_default()
            .entry(r.batch_size)
            .or_default()
            .push(s);
    }
    for (i, ((model, caching, locality), points)) in series.iter().enumerate() {
        if i > 0 {
            writeln!(w, "\n")?;
        }
        writeln!(w, "# model={model} caching={caching} locality={locality}")?;
        writeln!(w, "# batch_size speedup")?;
        for (b, v) in points {
            writeln!(w, "{b} {:.6}", v.iter().sum::<f64>() / v.len() as f64)?;
        }
    }
    Ok(())
}

/// Operator benchmark latencies and breakdown, one block per pattern.
pub fn write_micro_dat<W: Write>(rows: &[MicroRow], mut w: W) -> io::Result<()> {
    let mut first = true;
    for pattern in [Pattern::Seq, Pattern::Str] {
        let block: Vec<&MicroRow> = rows.iter().filter(|r| r.pattern == pattern).collect();
        if block.is_empty() {
            continue;
        }
        if !first {
            writeln!(w, "\n")?;
        }
        first = false;
        writeln!(w, "# pattern={}", pattern.name())?;
        writeln!(
            w,
            "# batch_size baseline_ns ndp_ns speedup config_write config_process translation flash_read result_return"
        )?;
        for r in block {
            writeln!(
                w,
                "{} {} {} {:.6} {} {} {} {} {}",
                r.batch_size,
                r.baseline_ns,
                r.ndp_ns,
                r.speedup,
                r.config_write_ns,
                r.config_process_ns,
                r.translation_ns,
                r.flash_read_ns,
                r.result_return_ns
            )?;
        }
    }
    Ok(())
}

/// One block per granularity; x is the block rank normalized to [0, 1] and y
/// the cumulative hit share.
pub fn write_cdf_dat<W: Write>(curves: &[ReuseCdf], mut w: W) -> io::Result<()> {
    for (i, c) in curves.iter().enumerate() {
        if i > 0 {
            writeln!(w, "\n")?;
        }
        writeln!(
            w,
            "# granularity={} blocks={} concavity={:.4}",
            c.granularity,
            c.blocks(),
            c.concavity()
        )?;
        writeln!(w, "# rank_fraction hit_fraction")?;
        let n = c.blocks() as f64;
        let total = c.total().max(1) as f64;
        for (k, &y) in c.cumulative.iter().enumerate() {
            writeln!(w, "{:.6} {:.6}", (k + 1) as f64 / n, y as f64 / total)?;
        }
    }
    Ok(())
}

pub fn write_lru_dat<W: Write>(label: &str, points: &[CachePoint], mut w: W) -> io::Result<()> {
    writeln!(w, "# {label}")?;
    writeln!(w, "# capacity_bytes hit_rate")?;
    for p in points {
        writeln!(w, "{} {:.6}", p.capacity_bytes, p.hit_rate)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::locality::{reuse_cdf, AddressMap};
    use recssd_core::table::LayoutMode;

    #[test]
    fn cdf_blocks_are_separated_for_gnuplot_index() {
        let map = AddressMap::new(128, 16384, LayoutMode::Packed);
        let ids = [1u64, 1, 2, 900, 4000];
        let curves = [
            reuse_cdf(&ids, 256, &map).unwrap(),
            reuse_cdf(&ids, 4096, &map).unwrap(),
        ];
        let mut out = Vec::new();
        write_cdf_dat(&curves, &mut out).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert_eq!(s.matches("\n\n\n#").count(), 1);
        assert!(s.trim_end().ends_with("1.000000 1.000000"));
    }
}
