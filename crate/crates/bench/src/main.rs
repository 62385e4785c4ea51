use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use recssd_bench::experiment::{run_sweep, ExperimentSpec};
use recssd_bench::fuzz::fuzz;
use recssd_bench::locality::{lru_characterize, pow2_range, reuse_cdf, AddressMap};
use recssd_bench::micro::{run_micro, MicroSpec};
use recssd_bench::plot;
use recssd_core::table::{AttrSize, LayoutMode};
use recssd_core::tracegen::{generate_trace, trace_stats, LookupTrace, TraceSpec};

#[derive(Parser)]
#[command(
    name = "recssd-bench",
    about = "Sweeps and locality tools for the near-data SLS simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment spec; writes <name>.csv and <name>_speedup.dat.
    Sweep {
        /// Experiment spec (TOML).
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long, default_value = "results")]
        out: PathBuf,
        /// Overrides the spec's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Use 10^6 rows per table instead of the spec's row count.
        #[arg(long)]
        full_scale: bool,
    },
    /// SEQ/STR operator benchmark; writes micro.csv and micro.dat.
    Micro {
        /// Optional micro spec (TOML); defaults otherwise.
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long, default_value = "results")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Unique fraction and count percentiles of a trace.
    TraceStats {
        #[command(flatten)]
        trace: TraceArgs,
        /// Also save the generated trace in binary form.
        #[arg(long)]
        save: Option<PathBuf>,
    },
    /// Cumulative hit-count curves per block granularity.
    ReuseCdf {
        #[command(flatten)]
        trace: TraceArgs,
        #[command(flatten)]
        geometry: Geometry,
        #[arg(long, value_delimiter = ',', default_value = "256,1024,4096")]
        granularity: Vec<u64>,
        #[arg(short, long, default_value = "results/reuse_cdf.dat")]
        out: PathBuf,
    },
    /// Hit rate of a set-associative LRU page cache over a capacity sweep.
    LruChar {
        #[command(flatten)]
        trace: TraceArgs,
        #[command(flatten)]
        geometry: Geometry,
        #[arg(long, default_value_t = 16)]
        ways: usize,
        #[arg(long, default_value_t = 4096)]
        line: u64,
        /// Smallest capacity in bytes; doubled up to --max-capacity.
        #[arg(long, default_value_t = 64 << 10)]
        min_capacity: u64,
        #[arg(long, default_value_t = 16 << 20)]
        max_capacity: u64,
        #[arg(short, long, default_value = "results/lru_char.dat")]
        out: PathBuf,
    },
    /// Randomized invariant sweep; exits non-zero on any finding.
    Fuzz {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 600)]
        secs: u64,
        #[arg(long)]
        max_iterations: Option<u64>,
    },
}

/// A trace file, or generator parameters.
#[derive(Args)]
struct TraceArgs {
    /// Binary trace file; overrides the generator flags.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(short, long, default_value_t = 0.0)]
    k: f64,
    #[arg(long, default_value_t = 1_000_000)]
    id_space: u64,
    #[arg(long, default_value_t = 100_000)]
    lookups: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TraceArgs {
    fn load(&self) -> Result<LookupTrace> {
        match &self.trace {
            Some(p) => {
                let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
                Ok(LookupTrace::read_from(BufReader::new(f))?)
            }
            None => Ok(generate_trace(&TraceSpec::flat(
                self.k,
                self.id_space,
                self.lookups,
                self.seed,
            ))?),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Layout {
    Packed,
    OnePerPage,
}

#[derive(Args)]
struct Geometry {
    #[arg(long, default_value_t = 32)]
    dim: u32,
    #[arg(long, default_value_t = 4)]
    attr_size: u32,
    #[arg(long, default_value_t = 16384)]
    page_size: u64,
    #[arg(long, value_enum, default_value_t = Layout::Packed)]
    layout: Layout,
}

impl Geometry {
    fn map(&self) -> Result<AddressMap> {
        let attr = AttrSize::try_from(self.attr_size)?;
        let layout = match self.layout {
            Layout::Packed => LayoutMode::Packed,
            Layout::OnePerPage => LayoutMode::OnePerPage,
        };
        Ok(AddressMap::new(
            self.dim as u64 * attr.bytes() as u64,
            self.page_size,
            layout,
        ))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn report_violations(violations: &[String]) -> ExitCode {
    if violations.is_empty() {
        return ExitCode::SUCCESS;
    }
    for v in violations.iter().take(20) {
        eprintln!("violation: {v}");
    }
    eprintln!("{} invariant violation(s)", violations.len());
    ExitCode::from(2)
}

fn sweep(config: &Path, out: &Path, seed: Option<u64>, full_scale: bool) -> Result<ExitCode> {
    let mut spec = ExperimentSpec::from_file(config)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    if full_scale {
        spec.rows = 1_000_000;
    }
    let result = run_sweep(&spec)?;
    let out = spec.output.clone().unwrap_or_else(|| out.to_path_buf());
    let csv_path = out.join(format!("{}.csv", spec.name));
    result.write_csv(create(&csv_path)?)?;
    let dat_path = out.join(format!("{}_speedup.dat", spec.name));
    let mut dat = create(&dat_path)?;
    plot::write_speedup_dat(&result.rows, &mut dat)?;
    dat.flush()?;
    let failed = result.rows.iter().filter(|r| r.error.is_some()).count();
    println!(
        "{}: {} rows ({failed} failed) -> {}",
        spec.name,
        result.rows.len(),
        csv_path.display()
    );
    for r in result.rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("row error: {}", r.error.as_deref().unwrap_or_default());
    }
    let v: Vec<String> = result
        .violations
        .iter()
        .map(|(i, m)| format!("row {i}: {m}"))
        .collect();
    Ok(report_violations(&v))
}

fn micro(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<ExitCode> {
    let mut spec = match config {
        Some(p) => {
            let s = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<MicroSpec>(&s)?
        }
        None => MicroSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let r = run_micro(&spec)?;
    let mut w = csv::Writer::from_writer(create(&out.join("micro.csv"))?);
    for row in &r.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    let mut dat = create(&out.join("micro.dat"))?;
    plot::write_micro_dat(&r.rows, &mut dat)?;
    dat.flush()?;
    for row in &r.rows {
        println!(
            "{} B={:<3} baseline {:>10} ns  ndp {:>10} ns  speedup {:.2}  translation share {:.2}",
            row.pattern.name(),
            row.batch_size,
            row.baseline_ns,
            row.ndp_ns,
            row.speedup,
            row.translation_share
        );
    }
    Ok(report_violations(&r.violations))
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Sweep {
            config,
            out,
            seed,
            full_scale,
        } => sweep(&config, &out, seed, full_scale),
        Cmd::Micro { config, out, seed } => micro(config.as_deref(), &out, seed),
        Cmd::TraceStats { trace, save } => {
            let t = trace.load()?;
            if let Some(p) = save {
                let mut w = create(&p)?;
                t.write_to(&mut w)?;
                w.flush()?;
            }
            print!("{}", toml::to_string(&trace_stats(&t))?);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::ReuseCdf {
            trace,
            geometry,
            granularity,
            out,
        } => {
            let ids: Vec<u64> = trace.load()?.ids().collect();
            let map = geometry.map()?;
            let curves = granularity
                .iter()
                .map(|&g| reuse_cdf(&ids, g, &map))
                .collect::<Result<Vec<_>, _>>()?;
            for c in &curves {
                println!(
                    "granularity {:>5}: {} blocks, concavity {:.3}, top 5% share {:.3}",
                    c.granularity,
                    c.blocks(),
                    c.concavity(),
                    c.top_share(0.05)
                );
            }
            let mut w = create(&out)?;
            plot::write_cdf_dat(&curves, &mut w)?;
            w.flush()?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::LruChar {
            trace,
            geometry,
            ways,
            line,
            min_capacity,
            max_capacity,
            out,
        } => {
            let ids: Vec<u64> = trace.load()?.ids().collect();
            let capacities = pow2_range(min_capacity, max_capacity);
            if capacities.is_empty() {
                bail!("empty capacity range");
            }
            let points = lru_characterize(&ids, &geometry.map()?, ways, line, &capacities)?;
            for p in &points {
                println!("{:>10} B  hit rate {:.4}", p.capacity_bytes, p.hit_rate);
            }
            let mut w = create(&out)?;
            plot::write_lru_dat(
                &format!("k={} ways={ways} line={line}", trace.k),
                &points,
                &mut w,
            )?;
            w.flush()?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Fuzz {
            seed,
            secs,
            max_iterations,
        } => {
            let r = fuzz(seed, Duration::from_secs(secs), max_iterations);
            println!(
                "{} iterations, {} cells, {} findings",
                r.iterations,
                r.cells,
                r.findings.len()
            );
            let v: Vec<String> = r
                .findings
                .iter()
                .map(|f| format!("iteration {} (seed {}): {}", f.iteration, f.seed, f.message))
                .collect();
            Ok(report_violations(&v))
        }
    }
}
