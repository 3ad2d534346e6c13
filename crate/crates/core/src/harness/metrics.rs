use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::agent::TrainLogRow;
use crate::memnet::NetEvent;

/// Network energy per bit per hop, pJ.
pub const NETWORK_PJ_PER_BIT_HOP: f64 = 5.0;
/// DRAM energy per bit accessed, pJ.
pub const MEMORY_PJ_PER_BIT: f64 = 12.0;
pub const PAGE_INFO_PJ: f64 = 50.0;
pub const NMP_BUFFER_PJ: f64 = 122.0;
pub const MIGRATION_QUEUE_PJ: f64 = 26.89;
pub const MDMA_PJ: f64 = 106.2;
pub const WEIGHT_PJ: f64 = 244.0;
pub const REPLAY_PJ: f64 = 2300.0;
pub const STATE_PJ: f64 = 106.0;

/// Raw event counts the energy model prices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EnergyTallies {
    /// Σ packet bits × hops.
    pub packet_bit_hops: u64,
    pub memory_access_bits: u64,
    pub page_info_accesses: u64,
    pub nmp_buffer_accesses: u64,
    pub migration_queue_accesses: u64,
    pub mdma_accesses: u64,
    pub weight_accesses: u64,
    pub replay_accesses: u64,
    pub state_accesses: u64,
}

/// Energy per component in pJ.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnergyBreakdown {
    pub network: f64,
    pub memory: f64,
    pub page_info: f64,
    pub nmp_buffer: f64,
    pub migration_queue: f64,
    pub mdma: f64,
    pub weight: f64,
    pub replay: f64,
    pub state: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    /// Components in summation order, without the total.
    pub fn components(&self) -> [(&'static str, f64); 9] {
        [
            ("network", self.network),
            ("memory", self.memory),
            ("page_info", self.page_info),
            ("nmp_buffer", self.nmp_buffer),
            ("migration_queue", self.migration_queue),
            ("mdma", self.mdma),
            ("weight", self.weight),
            ("replay", self.replay),
            ("state", self.state),
        ]
    }
}

pub fn compute_energy(t: &EnergyTallies) -> EnergyBreakdown {
    let mut e = EnergyBreakdown {
        network: t.packet_bit_hops as f64 * NETWORK_PJ_PER_BIT_HOP,
        memory: t.memory_access_bits as f64 * MEMORY_PJ_PER_BIT,
        page_info: t.page_info_accesses as f64 * PAGE_INFO_PJ,
        nmp_buffer: t.nmp_buffer_accesses as f64 * NMP_BUFFER_PJ,
        migration_queue: t.migration_queue_accesses as f64 * MIGRATION_QUEUE_PJ,
        mdma: t.mdma_accesses as f64 * MDMA_PJ,
        weight: t.weight_accesses as f64 * WEIGHT_PJ,
        replay: t.replay_accesses as f64 * REPLAY_PJ,
        state: t.state_accesses as f64 * STATE_PJ,
        total: 0.0,
    };
    e.total = e.components().iter().map(|(_, v)| v).sum();
    e
}

/// Σc / (N · max c). `None` when nothing completed.
pub fn compute_utilization(per_cube: &[u64]) -> Option<f64> {
    let max = *per_cube.iter().max()?;
    if max == 0 {
        return None;
    }
    let sum: u64 = per_cube.iter().sum();
    Some(sum as f64 / (per_cube.len() as f64 * max as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntervalStat {
    pub start_cycle: u64,
    pub cycles: u64,
    pub completions: u64,
    /// Completions per cycle, plus delivered migration packets when the run
    /// counts them.
    pub opc: f64,
    /// Mean network hops per op completed in the interval.
    pub avg_hops: Option<f64>,
    pub row_hit_rate: Option<f64>,
    pub per_cube: Vec<u64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MigrationSummary {
    pub requested: u64,
    pub completed: u64,
    pub aborted: u64,
    pub dropped: u64,
    pub avg_latency: Option<f64>,
    pub pages_migrated: u64,
    pub pages_touched: u64,
    pub fraction_pages_migrated: f64,
    /// Operand accesses made after their page's first completed migration.
    pub fraction_accesses_migrated: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RepeatSummary {
    pub repeat: usize,
    pub cycles: u64,
    pub ops_completed: u64,
    pub opc: f64,
    pub avg_hop_count: f64,
    pub migrations: u64,
}

/// Raw totals handed over by the simulator at the end of a repeat.
pub(crate) struct RunTotals {
    pub cycles: u64,
    pub ops_completed: u64,
    pub timeline: Vec<IntervalStat>,
    pub total_hops: u64,
    pub per_cube_completions: Vec<u64>,
    pub latency_sum: u64,
    pub host_executed: u64,
    pub remapped_ops: u64,
    pub migration: MigrationSummary,
    pub row_hit_rate: Option<f64>,
    pub per_cube_row_hit: Vec<Option<f64>>,
    pub energy: EnergyTallies,
    pub net_events: Vec<NetEvent>,
    pub migration_log: Vec<String>,
    pub agent_ticks: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub label: String,
    pub cycles: u64,
    pub ops_completed: u64,
    /// Always `ops_completed / cycles`.
    pub opc: f64,
    pub timeline: Vec<IntervalStat>,
    /// Mean network hops per completed op, over every packet the op caused.
    pub avg_hop_count: f64,
    pub per_cube_completions: Vec<u64>,
    pub compute_utilization: Option<f64>,
    pub avg_op_latency: f64,
    /// PEI ops that ran on the host.
    pub host_executed: u64,
    /// Ops whose compute site came from the compute remap table.
    pub remapped_ops: u64,
    pub migration: MigrationSummary,
    pub row_hit_rate: Option<f64>,
    pub per_cube_row_hit: Vec<Option<f64>>,
    pub energy_tallies: EnergyTallies,
    pub energy: EnergyBreakdown,
    pub agent_ticks: u64,
    /// One entry per repeat, in order; the other fields describe the last.
    pub repeats: Vec<RepeatSummary>,
    pub net_events: Vec<NetEvent>,
    pub migration_log: Vec<String>,
    pub agent_log: Vec<TrainLogRow>,
}

impl MetricsReport {
    pub(crate) fn new(r: RunTotals) -> Self {
        let n = r.ops_completed.max(1) as f64;
        Self {
            label: String::new(),
            cycles: r.cycles,
            ops_completed: r.ops_completed,
            opc: if r.cycles > 0 { r.ops_completed as f64 / r.cycles as f64 } else { 0.0 },
            timeline: r.timeline,
            avg_hop_count: r.total_hops as f64 / n,
            compute_utilization: compute_utilization(&r.per_cube_completions),
            per_cube_completions: r.per_cube_completions,
            avg_op_latency: r.latency_sum as f64 / n,
            host_executed: r.host_executed,
            remapped_ops: r.remapped_ops,
            migration: r.migration,
            row_hit_rate: r.row_hit_rate,
            per_cube_row_hit: r.per_cube_row_hit,
            energy: compute_energy(&r.energy),
            energy_tallies: r.energy,
            agent_ticks: r.agent_ticks,
            repeats: Vec::new(),
            net_events: r.net_events,
            migration_log: r.migration_log,
            agent_log: Vec::new(),
        }
    }

    pub fn repeat_summary(&self, repeat: usize) -> RepeatSummary {
        RepeatSummary {
            repeat,
            cycles: self.cycles,
            ops_completed: self.ops_completed,
            opc: self.opc,
            avg_hop_count: self.avg_hop_count,
            migrations: self.migration.completed,
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

/// `current / baseline` OPC, formatted as `1.23x`.
pub fn format_speedup(opc: f64, baseline_opc: f64) -> String {
    format!("{:.2}x", opc / baseline_opc)
}

/// Reads `opc = ...` from a summary written by [`emit_report`]. `path` may
/// be the summary file or the directory holding it.
pub fn read_baseline_opc(path: &Path) -> io::Result<f64> {
    let file = if path.is_dir() { path.join("summary.txt") } else { path.to_path_buf() };
    let text = fs::read_to_string(&file)?;
    text.lines()
        .filter_map(|l| l.split_once('='))
        .find(|(k, _)| k.trim() == "opc")
        .and_then(|(_, v)| v.trim().parse().ok())
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, format!("no opc in {}", file.display())))
}

/// Plain-text `key = value` summary. `baseline` is a label and its OPC.
pub fn summary_text(r: &MetricsReport, baseline: Option<(&str, f64)>) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("run", r.label.clone());
    kv("cycles", r.cycles.to_string());
    kv("ops_completed", r.ops_completed.to_string());
    kv("opc", format!("{:.6}", r.opc));
    if let Some((name, base)) = baseline {
        kv("baseline", name.to_string());
        kv("speedup", format_speedup(r.opc, base));
    }
    kv("avg_hop_count", format!("{:.6}", r.avg_hop_count));
    kv("avg_op_latency", format!("{:.6}", r.avg_op_latency));
    kv("compute_utilization", opt(r.compute_utilization));
    kv("host_executed", r.host_executed.to_string());
    kv("remapped_ops", r.remapped_ops.to_string());
    kv("row_hit_rate", opt(r.row_hit_rate));
    let m = &r.migration;
    kv("migrations_requested", m.requested.to_string());
    kv("migrations_completed", m.completed.to_string());
    kv("migrations_aborted", m.aborted.to_string());
    kv("migrations_dropped", m.dropped.to_string());
    kv("migration_avg_latency", opt(m.avg_latency));
    kv("fraction_pages_migrated", format!("{:.6}", m.fraction_pages_migrated));
    kv("fraction_accesses_migrated", format!("{:.6}", m.fraction_accesses_migrated));
    kv("agent_ticks", r.agent_ticks.to_string());
    kv("energy_total_nj", format!("{:.6}", r.energy.total / 1000.0));
    kv("repeats", r.repeats.len().to_string());
    s
}

fn write(path: PathBuf, body: String, out: &mut Vec<PathBuf>) -> io::Result<()> {
    fs::write(&path, body)?;
    out.push(path);
    Ok(())
}

/// Writes the report into `dir`:
///
/// * `summary.txt`: `key = value` lines
/// * `timeline.csv`: `interval,start_cycle,cycles,ops,opc,avg_hops,row_hit_rate`
/// * `cubes.csv`: `cube,completions,row_hit_rate`
/// * `repeats.csv`: `repeat,cycles,ops,opc,avg_hop_count,migrations`
/// * `energy.csv`: `component,nj`, ending with `total`
///
/// and, when the run recorded them, `events.csv`
/// (`cycle,event,packet_id,cube`), `migrations.csv` and `training.csv`.
pub fn emit_report(r: &MetricsReport, dir: &Path, baseline: Option<&Path>) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let base = match baseline {
        Some(p) => Some((p.display().to_string(), read_baseline_opc(p)?)),
        None => None,
    };
    let mut out = Vec::new();
    write(
        dir.join("summary.txt"),
        summary_text(r, base.as_ref().map(|(n, o)| (n.as_str(), *o))),
        &mut out,
    )?;

    let mut t = String::from("interval,start_cycle,cycles,ops,opc,avg_hops,row_hit_rate\n");
    for (i, iv) in r.timeline.iter().enumerate() {
        let _ = writeln!(
            t,
            "{i},{},{},{},{:.6},{},{}",
            iv.start_cycle,
            iv.cycles,
            iv.completions,
            iv.opc,
            opt(iv.avg_hops),
            opt(iv.row_hit_rate)
        );
    }
    write(dir.join("timeline.csv"), t, &mut out)?;

    let mut c = String::from("cube,completions,row_hit_rate\n");
    for (i, (n, h)) in r.per_cube_completions.iter().zip(&r.per_cube_row_hit).enumerate() {
        let _ = writeln!(c, "{i},{n},{}", opt(*h));
    }
    write(dir.join("cubes.csv"), c, &mut out)?;

    let mut rp = String::from("repeat,cycles,ops,opc,avg_hop_count,migrations\n");
    for s in &r.repeats {
        let _ = writeln!(
            rp,
            "{},{},{},{:.6},{:.6},{}",
            s.repeat, s.cycles, s.ops_completed, s.opc, s.avg_hop_count, s.migrations
        );
    }
    write(dir.join("repeats.csv"), rp, &mut out)?;

    let mut e = String::from("component,nj\n");
    for (k, v) in r.energy.components() {
        let _ = writeln!(e, "{k},{:.6}", v / 1000.0);
    }
    let _ = writeln!(e, "total,{:.6}", r.energy.total / 1000.0);
    write(dir.join("energy.csv"), e, &mut out)?;

    if !r.net_events.is_empty() {
        let mut ev = String::from("cycle,event,packet_id,cube\n");
        for x in &r.net_events {
            let _ = writeln!(ev, "{},{},{},{}", x.cycle, x.event, x.packet_id, x.cube);
        }
        write(dir.join("events.csv"), ev, &mut out)?;
    }
    if !r.migration_log.is_empty() {
        let mut m = String::from(
            "vpage,src_cube,dst_cube,mode,start_cycle,end_cycle,aborted\n",
        );
        for row in &r.migration_log {
            m.push_str(row);
            m.push('\n');
        }
        write(dir.join("migrations.csv"), m, &mut out)?;
    }
    if !r.agent_log.is_empty() {
        let mut a = String::from("tick,epsilon,loss,reward,action,interval\n");
        for row in &r.agent_log {
            let _ = writeln!(
                a,
                "{},{:.6},{},{},{},{}",
                row.tick,
                row.epsilon,
                opt(row.loss),
                row.reward.map_or_else(|| "NA".into(), |v| v.to_string()),
                row.action.id(),
                row.interval
            );
        }
        write(dir.join("training.csv"), a, &mut out)?;
    }
    Ok(out)
}
