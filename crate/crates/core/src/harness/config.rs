use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use super::SimError;
use crate::agent::AgentConfig;
use crate::memnet::{CubeId, DramGeometry, DramTiming, MeshConfig};
use crate::offload::Technique;
use crate::paging::AllocPolicy;
use crate::trace::KernelKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Remapper {
    #[default]
    None,
    Tom,
    Aimm,
}

impl Remapper {
    pub const ALL: [Remapper; 3] = [Remapper::None, Remapper::Tom, Remapper::Aimm];

    pub fn name(self) -> &'static str {
        match self {
            Remapper::None => "none",
            Remapper::Tom => "TOM",
            Remapper::Aimm => "AIMM",
        }
    }
}

impl FromStr for Remapper {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Remapper::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown remapper `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TraceSource {
    File(PathBuf),
    Generate { kind: KernelKind, n: u64, seed: u64 },
}

impl FromStr for TraceSource {
    type Err = String;

    /// `file:<path>` or `gen:<kind>:<n>[:<seed>]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(TraceSource::File(PathBuf::from(path)));
        }
        let Some(rest) = s.strip_prefix("gen:") else {
            return Err(format!("trace source `{s}` must start with file: or gen:"));
        };
        let parts: Vec<&str> = rest.split(':').collect();
        if !(2..=3).contains(&parts.len()) {
            return Err(format!("expected gen:<kind>:<n>[:<seed>], got `{s}`"));
        }
        let kind = parts[0].parse()?;
        let n = parts[1].parse().map_err(|_| format!("bad element count `{}`", parts[1]))?;
        let seed = match parts.get(2) {
            Some(v) => v.parse().map_err(|_| format!("bad seed `{v}`"))?,
            None => 0,
        };
        Ok(TraceSource::Generate { kind, n, seed })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PagingConfig {
    pub policy: AllocPolicy,
    pub migration_queue: usize,
    pub dma_channels: usize,
    pub os_interrupt: u64,
    pub hoard_chunk: u64,
    /// Allocate every page in this cube when it has room (hotspot runs).
    pub pin_cube: Option<CubeId>,
}

impl Default for PagingConfig {
    fn default() -> Self {
        Self {
            policy: AllocPolicy::Default,
            migration_queue: 128,
            dma_channels: 1,
            os_interrupt: 50,
            hoard_chunk: 64,
            pin_cube: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HostConfig {
    pub cores: usize,
    pub issue_width: usize,
    pub mc_queue: usize,
    pub cache_bytes: u64,
    pub cache_line: u64,
    pub cache_ways: usize,
    pub mshr: usize,
}

impl Default for HostConfig {
    fn default() -> Self {
        Self {
            cores: 16,
            issue_width: 4,
            mc_queue: 64,
            cache_bytes: 32 * 1024,
            cache_line: 64,
            cache_ways: 8,
            mshr: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub mesh: MeshConfig,
    pub geometry: DramGeometry,
    pub timing: DramTiming,
    pub nmp_table_entries: usize,
    /// Cycles between op issues on one cube's NMP ALU.
    pub nmp_alu_interval: u64,
    pub paging: PagingConfig,
    pub host: HostConfig,
    pub technique: Technique,
    pub remapper: Remapper,
    pub page_info_entries: usize,
    pub compute_remap_entries: usize,
    pub counter_decay: f64,
    pub tom_epoch: u64,
    pub tom_candidates: usize,
    pub agent: AgentConfig,
    /// Timeline interval when no agent sets the clock.
    pub stats_interval: u64,
    pub traces: Vec<TraceSource>,
    pub max_processes: usize,
    pub repeats: usize,
    pub seed: u64,
    pub max_cycles: u64,
    /// Keep per-packet, migration and training logs for the report.
    pub record_events: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        let mesh = MeshConfig::default();
        Self {
            geometry: DramGeometry::new(mesh.cubes()),
            mesh,
            timing: DramTiming::default(),
            nmp_table_entries: 512,
            nmp_alu_interval: 1,
            paging: PagingConfig::default(),
            host: HostConfig::default(),
            technique: Technique::Bnmp,
            remapper: Remapper::None,
            page_info_entries: 128,
            compute_remap_entries: 128,
            counter_decay: 0.125,
            tom_epoch: 1000,
            tom_candidates: 8,
            agent: AgentConfig::default(),
            stats_interval: 100,
            traces: Vec::new(),
            max_processes: 4,
            repeats: 1,
            seed: 0,
            max_cycles: 50_000_000,
            record_events: false,
        }
    }
}

fn parse<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T, SimError>
where
    T::Err: Display,
{
    v.parse::<T>()
        .map_err(|e| SimError::Config(format!("line {line}: {key}: {e}")))
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool, SimError> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(SimError::Config(format!("line {line}: {key}: expected a boolean"))),
    }
}

impl SimConfig {
    /// Parses `section.key = value` lines over the defaults. `#` starts a
    /// comment. Unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut c = SimConfig::default();
        let mut geometry_cubes_set = false;
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((key, value)) = body.split_once('=') else {
                return Err(SimError::Config(format!("line {line}: expected `section.key = value`")));
            };
            let (key, v) = (key.trim(), value.trim());
            if !seen.insert(key) {
                return Err(SimError::Config(format!("line {line}: duplicate key `{key}`")));
            }
            match key {
                "mesh.width" => c.mesh.width = parse(line, key, v)?,
                "mesh.height" => c.mesh.height = parse(line, key, v)?,
                "mesh.link_bits" => c.mesh.link_bits = parse(line, key, v)?,
                "mesh.router_stages" => c.mesh.router_stages = parse(line, key, v)?,
                "mesh.vc_count" => c.mesh.vc_count = parse(line, key, v)?,
                "mesh.vc_depth" => c.mesh.vc_depth = parse(line, key, v)?,
                "mesh.port_count" => c.mesh.port_count = parse(line, key, v)?,
                "cube.capacity_bytes" => c.geometry.cube_bytes = parse(line, key, v)?,
                "cube.vaults" => c.geometry.vaults = parse(line, key, v)?,
                "cube.banks" => c.geometry.banks = parse(line, key, v)?,
                "cube.row_bytes" => c.geometry.row_bytes = parse(line, key, v)?,
                "cube.nmp_table_entries" => c.nmp_table_entries = parse(line, key, v)?,
                "cube.nmp_alu_interval" => c.nmp_alu_interval = parse(line, key, v)?,
                "cube.row_hit_cycles" => c.timing.row_hit = parse(line, key, v)?,
                "cube.row_miss_cycles" => c.timing.row_miss = parse(line, key, v)?,
                "cube.crossbar_cycles" => c.timing.crossbar = parse(line, key, v)?,
                "cube.burst_cycles" => c.timing.burst = parse(line, key, v)?,
                "paging.page_size" => c.geometry.page_size = parse(line, key, v)?,
                "paging.policy" => c.paging.policy = parse(line, key, v)?,
                "paging.migration_queue" => c.paging.migration_queue = parse(line, key, v)?,
                "paging.dma_channels" => c.paging.dma_channels = parse(line, key, v)?,
                "paging.os_interrupt" => c.paging.os_interrupt = parse(line, key, v)?,
                "paging.hoard_chunk" => c.paging.hoard_chunk = parse(line, key, v)?,
                "paging.pin_cube" => {
                    c.paging.pin_cube = match v {
                        "none" => None,
                        _ => Some(parse(line, key, v)?),
                    }
                }
                "host.cores" => c.host.cores = parse(line, key, v)?,
                "host.issue_width" => c.host.issue_width = parse(line, key, v)?,
                "host.mc_queue" => c.host.mc_queue = parse(line, key, v)?,
                "host.cache_bytes" => c.host.cache_bytes = parse(line, key, v)?,
                "host.cache_line" => c.host.cache_line = parse(line, key, v)?,
                "host.cache_ways" => c.host.cache_ways = parse(line, key, v)?,
                "host.mshr" => c.host.mshr = parse(line, key, v)?,
                "offload.technique" => c.technique = parse(line, key, v)?,
                "offload.page_info_entries" => c.page_info_entries = parse(line, key, v)?,
                "offload.compute_remap_entries" => c.compute_remap_entries = parse(line, key, v)?,
                "offload.counter_decay" => c.counter_decay = parse(line, key, v)?,
                "remap.remapper" => c.remapper = parse(line, key, v)?,
                "remap.tom_epoch" => c.tom_epoch = parse(line, key, v)?,
                "remap.tom_candidates" => c.tom_candidates = parse(line, key, v)?,
                "agent.gamma" => c.agent.gamma = parse(line, key, v)?,
                "agent.epsilon_start" => c.agent.epsilon_start = parse(line, key, v)?,
                "agent.epsilon_end" => c.agent.epsilon_end = parse(line, key, v)?,
                "agent.epsilon_decay_ticks" => c.agent.epsilon_decay_ticks = parse(line, key, v)?,
                "agent.learning_rate" => c.agent.learning_rate = parse(line, key, v)?,
                "agent.batch_size" => c.agent.batch_size = parse(line, key, v)?,
                "agent.train_period" => c.agent.train_period = parse(line, key, v)?,
                "agent.replay_capacity" => c.agent.replay_capacity = parse(line, key, v)?,
                "agent.hidden" => {
                    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                    if parts.len() != 2 {
                        return Err(SimError::Config(format!("line {line}: {key}: expected two widths")));
                    }
                    c.agent.hidden = [parse(line, key, parts[0])?, parse(line, key, parts[1])?];
                }
                "agent.state_len" => c.agent.state_len = parse(line, key, v)?,
                "agent.target_sync" => c.agent.target_sync = parse(line, key, v)?,
                "agent.reward_tol" => c.agent.reward_tol = parse(line, key, v)?,
                "agent.history" => c.agent.history = parse(line, key, v)?,
                "agent.access_scale" => c.agent.norm.access_scale = parse(line, key, v)?,
                "agent.latency_scale" => c.agent.norm.latency_scale = parse(line, key, v)?,
                "agent.migration_latency_scale" => {
                    c.agent.norm.migration_latency_scale = parse(line, key, v)?
                }
                "workload.traces" => {
                    c.traces = v
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| parse(line, key, s))
                        .collect::<Result<_, _>>()?;
                }
                "workload.max_processes" => c.max_processes = parse(line, key, v)?,
                "sim.repeats" => c.repeats = parse(line, key, v)?,
                "sim.seed" => c.seed = parse(line, key, v)?,
                "sim.max_cycles" => c.max_cycles = parse(line, key, v)?,
                "sim.events" => c.record_events = parse_bool(line, key, v)?,
                "sim.stats_interval" => c.stats_interval = parse(line, key, v)?,
                "sim.geometry_follows_mesh" => geometry_cubes_set = !parse_bool(line, key, v)?,
                _ => return Err(SimError::Config(format!("line {line}: unknown key `{key}`"))),
            }
        }
        if !geometry_cubes_set {
            c.geometry.cubes = c.mesh.cubes();
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let err = |m: String| Err(SimError::Config(m));
        self.mesh.validate().map_err(|e| SimError::Config(e.to_string()))?;
        self.geometry.validate().map_err(|e| SimError::Config(e.to_string()))?;
        if self.geometry.cubes != self.mesh.cubes() {
            return err(format!(
                "{} cubes of memory for a {}-cube mesh",
                self.geometry.cubes,
                self.mesh.cubes()
            ));
        }
        self.agent.validate().map_err(|e| SimError::Config(e.to_string()))?;
        if self.host.cores == 0 || self.host.issue_width == 0 || self.host.mc_queue == 0 {
            return err("cores, issue width and MC queue must be positive".into());
        }
        if self.nmp_alu_interval == 0 {
            return err("NMP ALU interval must be positive".into());
        }
        if self.nmp_table_entries == 0 || self.repeats == 0 || self.stats_interval == 0 {
            return err("NMP table, repeats and stats interval must be positive".into());
        }
        if self.paging.pin_cube.is_some_and(|c| c >= self.mesh.cubes()) {
            return err("pin cube outside the mesh".into());
        }
        if !(self.counter_decay > 0.0 && self.counter_decay <= 1.0) {
            return err("counter decay must lie in (0, 1]".into());
        }
        if self.tom_epoch == 0 || self.tom_candidates == 0 {
            return err("TOM epoch and candidate count must be positive".into());
        }
        if self.traces.len() > self.max_processes {
            return err(format!(
                "{} traces exceed the {}-process limit",
                self.traces.len(),
                self.max_processes
            ));
        }
        Ok(())
    }
}
