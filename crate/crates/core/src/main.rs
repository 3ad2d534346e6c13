use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use nmpsim::harness::{emit_report, run_simulation, SimConfig};
use nmpsim::trace::{
    active_page_distribution, affinity_analysis, classify_page_accesses, generate_kernel_trace,
    parse_trace, serialize_trace, KernelKind, Quadrant, SizeParams, DEFAULT_CLASS_EDGES,
};

#[derive(Parser)]
#[command(name = "nmpsim", version, about = "Near-memory-processing cube network simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Classify,
    Active,
    Affinity,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a configured workload and write its report.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `sim.seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
        /// Summary file or report directory to compute speedup against.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Also write per-packet, migration and training logs.
        #[arg(long)]
        events: bool,
    },
    /// Write a synthetic kernel trace.
    GenTrace {
        #[arg(long)]
        kind: KernelKind,
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print page-level statistics of a trace.
    Analyze {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Epoch length for `active`, in cycles.
        #[arg(long, default_value_t = 1000)]
        epoch: u64,
        /// Ops issued per cycle for `active`.
        #[arg(long, default_value_t = 4.0)]
        issue_rate: f64,
        /// Bins per axis for `affinity`.
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Simulate { config, seed, out, baseline, events } => {
            let text = fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let mut cfg = SimConfig::parse(&text)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.record_events |= events;
            let report = run_simulation(&cfg)?;
            emit_report(&report, &out, baseline.as_deref())
                .with_context(|| format!("writing report to {}", out.display()))?;
            print!("{}", fs::read_to_string(out.join("summary.txt"))?);
        }
        Cmd::GenTrace { kind, n, seed, out } => {
            let t = generate_kernel_trace(kind, &SizeParams::new(n), seed)?;
            fs::write(&out, serialize_trace(&t)).with_context(|| format!("writing {}", out.display()))?;
            println!("{} ops -> {}", t.ops.len(), out.display());
        }
        Cmd::Analyze { trace, mode, epoch, issue_rate, bins } => {
            let text = fs::read_to_string(&trace).with_context(|| format!("reading {}", trace.display()))?;
            let t = parse_trace(&text)?;
            match mode {
                Mode::Classify => {
                    let counts = classify_page_accesses(&t, &DEFAULT_CLASS_EDGES)?;
                    println!("min_accesses,pages");
                    for (edge, c) in std::iter::once(&0).chain(&DEFAULT_CLASS_EDGES).zip(&counts) {
                        println!("{edge},{c}");
                    }
                }
                Mode::Active => {
                    println!("mean_active_pages = {:.6}", active_page_distribution(&t, epoch, issue_rate));
                }
                Mode::Affinity => {
                    let p = affinity_analysis(&t, bins)?;
                    println!("quadrant,pages");
                    for (q, c) in Quadrant::ALL.iter().zip(p.quadrant_counts) {
                        println!("{},{c}", q.label());
                    }
                }
            }
        }
    }
    Ok(())
}
