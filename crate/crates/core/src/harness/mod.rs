//! Simulation driver, configuration, metrics and reporting.

mod config;
mod metrics;
mod sim;

use std::fs;

pub use config::{HostConfig, PagingConfig, Remapper, SimConfig, TraceSource};
pub use metrics::{
    compute_energy, compute_utilization, emit_report, format_speedup, read_baseline_opc,
    summary_text, EnergyBreakdown, EnergyTallies, IntervalStat, MetricsReport, MigrationSummary,
    RepeatSummary,
};

use crate::agent::{Agent, AgentError};
use crate::trace::{generate_kernel_trace, parse_trace, OpTrace, SizeParams, TraceError};
use sim::Simulator;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("trace error: {0}")]
    Trace(#[from] TraceError),
    #[error("cannot read trace {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("agent error: {0}")]
    Agent(#[from] AgentError),
    #[error("fatal at cycle {cycle}: {message}")]
    Internal { cycle: u64, message: String },
}

/// Loads or generates every trace source; the i-th gets process id i.
pub fn load_traces(cfg: &SimConfig) -> Result<Vec<OpTrace>, SimError> {
    cfg.traces
        .iter()
        .enumerate()
        .map(|(i, src)| {
            let t = match src {
                TraceSource::File(path) => {
                    let text = fs::read_to_string(path)
                        .map_err(|e| SimError::Io { path: path.display().to_string(), source: e })?;
                    parse_trace(&text)?
                }
                TraceSource::Generate { kind, n, seed } => {
                    generate_kernel_trace(*kind, &SizeParams::new(*n), *seed)?
                }
            };
            Ok(t.with_pid(i as u32))
        })
        .collect()
}

fn label(cfg: &SimConfig) -> String {
    match cfg.remapper {
        Remapper::None => cfg.technique.name().to_string(),
        r => format!("{}+{}", cfg.technique.name(), r.name()),
    }
}

/// Runs `trace` `cfg.repeats` times. Machine state is rebuilt for every
/// repeat; the agent (network, replay memory, exploration schedule) carries
/// over. The returned report describes the final repeat and lists every
/// repeat in `repeats`.
pub fn run_trace(cfg: &SimConfig, trace: &OpTrace) -> Result<MetricsReport, SimError> {
    cfg.validate()?;
    trace.validate()?;
    if trace.page_size != cfg.geometry.page_size {
        return Err(SimError::Config(format!(
            "trace page size {} differs from configured {}",
            trace.page_size, cfg.geometry.page_size
        )));
    }
    let mut agent = match cfg.remapper {
        Remapper::Aimm => {
            let mut ac = cfg.agent.clone();
            ac.seed = cfg.seed;
            Some(Agent::new(ac, cfg.mesh.cubes(), cfg.mesh.corner_cubes().len())?)
        }
        _ => None,
    };
    let mut repeats = Vec::with_capacity(cfg.repeats);
    let mut last = None;
    for r in 0..cfg.repeats {
        if let Some(a) = agent.as_mut() {
            a.begin_episode();
        }
        let rep = Simulator::new(cfg, trace).run(agent.as_mut())?;
        repeats.push(rep.repeat_summary(r + 1));
        last = Some(rep);
    }
    let mut report = last.expect("at least one repeat");
    report.label = label(cfg);
    report.repeats = repeats;
    if cfg.record_events {
        if let Some(a) = &agent {
            report.agent_log = a.log.clone();
        }
    }
    Ok(report)
}

/// Loads the configured traces, interleaves them when there are several,
/// and runs them.
pub fn run_simulation(cfg: &SimConfig) -> Result<MetricsReport, SimError> {
    cfg.validate()?;
    let traces = load_traces(cfg)?;
    match traces.len() {
        0 => Err(SimError::Config("no workload traces configured".into())),
        1 => run_trace(cfg, &traces[0]),
        _ => run_multiprogram(cfg, &traces),
    }
}

/// Runs several programs at once. Each trace is renumbered to a distinct
/// process id and issue slots alternate round-robin between them; NMP
/// tables, page-info caches and the migration system are shared.
pub fn run_multiprogram(cfg: &SimConfig, traces: &[OpTrace]) -> Result<MetricsReport, SimError> {
    if traces.len() > cfg.max_processes {
        return Err(SimError::Config(format!(
            "{} processes exceed the limit of {}",
            traces.len(),
            cfg.max_processes
        )));
    }
    let renumbered: Vec<OpTrace> =
        traces.iter().enumerate().map(|(i, t)| t.with_pid(i as u32)).collect();
    let merged = OpTrace::interleave(&renumbered)?;
    run_trace(cfg, &merged)
}
