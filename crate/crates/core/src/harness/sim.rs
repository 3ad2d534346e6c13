use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::config::{Remapper, SimConfig};
use super::metrics::{EnergyTallies, IntervalStat, MetricsReport, MigrationSummary};
use super::SimError;
use crate::agent::{Agent, TickInput};
use crate::memnet::{
    CubeId, CubeState, DramAddr, FrameMapping, Network, Packet, PacketKind, Sink,
};
use crate::offload::{
    line_key, pei_host_filter, schedule_op, tom_epoch_select, CandidateSelector,
    ComputeRemapTable, HostCache, OpPlacement, Operand, OperandLoc, PageEvent, PageInfoCache,
    PeiDecision, SystemCounters, Technique, TomSample,
};
use crate::paging::{MigrationEvent, MigrationSystem, PageTable, Translation};
use crate::trace::{OpTrace, VPage};

const CONTROL_BITS: u32 = 128;
const DATA_BITS: u32 = 512;
/// Cycles an NMP ALU or a host core spends on one op.
const ALU_CYCLES: u64 = 1;
/// Most recent ops TOM scores at each epoch.
const TOM_WINDOW: usize = 4096;
/// Cycles without a completion before the run is declared stuck.
const STALL_LIMIT: u64 = 1_000_000;

const OPERANDS: [Operand; 3] = [Operand::Dest, Operand::Src1, Operand::Src2];

fn slot(o: Operand) -> usize {
    match o {
        Operand::Dest => 0,
        Operand::Src1 => 1,
        Operand::Src2 => 2,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Msg {
    /// MC to compute cube: run this op.
    Offload,
    /// Read an operand and send it back to the requester.
    Fetch(Operand),
    /// An operand value for the op's compute site.
    Operand(Operand),
    /// Result forwarded from the compute cube to the destination cube.
    Result,
    /// Completion notice to the issuing MC.
    Done,
    Migration(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Ev {
    /// A local operand read at the compute cube finished.
    LocalRead { op: usize, operand: usize },
    /// A fetched operand was read at its owner; send it back.
    ServeFetch { op: usize, operand: usize, to: CubeId, to_host: bool },
    Compute { op: usize },
    /// The destination write finished at `cube`.
    WriteDone { op: usize, cube: CubeId },
}

#[derive(Clone, Debug, Default)]
struct OpSlot {
    mc: usize,
    core: usize,
    dispatched: u64,
    compute: CubeId,
    forward_to: Option<CubeId>,
    pages: [Option<VPage>; 3],
    frames: [Option<u64>; 3],
    addrs: [Option<DramAddr>; 3],
    pending: u32,
    host: bool,
    hops: u64,
}

#[derive(Clone, Debug)]
struct Mc {
    cube: CubeId,
    queue: VecDeque<usize>,
    deferred: Vec<usize>,
}

enum Dispatch {
    Sent,
    Deferred,
    Stall,
}

#[derive(Clone, Debug, Default)]
struct Window {
    start: u64,
    completions: u64,
    hops: u64,
    per_cube: Vec<u64>,
    migration_packets: u64,
    row_hits: Vec<u64>,
    row_accesses: Vec<u64>,
}

/// One repeat of one workload. Every piece of machine state lives here and
/// is dropped at the end of the repeat; only the agent outlives it.
pub(crate) struct Simulator<'a> {
    cfg: &'a SimConfig,
    trace: &'a OpTrace,
    net: Network<Msg>,
    cubes: Vec<CubeState>,
    pt: PageTable,
    mig: MigrationSystem,
    mcs: Vec<Mc>,
    info: Vec<PageInfoCache>,
    remap: ComputeRemapTable,
    counters: SystemCounters,
    selector: CandidateSelector,
    caches: Vec<HostCache>,
    mapping: FrameMapping,
    tom_candidates: Vec<FrameMapping>,
    tom_current: usize,
    tom_window: VecDeque<TomSample>,
    slots: Vec<OpSlot>,
    events: BTreeMap<u64, Vec<Ev>>,
    /// Cycle each cube's NMP ALU can take its next op.
    alu_free: Vec<u64>,
    next_issue: usize,
    completed: u64,
    last_progress: u64,
    window: Window,
    timeline: Vec<IntervalStat>,
    interval: u64,
    per_cube: Vec<u64>,
    total_hops: u64,
    latency_sum: u64,
    host_executed: u64,
    remapped: u64,
    memory_accesses: u64,
    nmp_buffer_accesses: u64,
    page_accesses: BTreeMap<VPage, u64>,
    migrated: BTreeSet<VPage>,
    accesses_to_migrated: u64,
    operand_accesses: u64,
}

impl<'a> Simulator<'a> {
    pub(crate) fn new(cfg: &'a SimConfig, trace: &'a OpTrace) -> Self {
        let n = cfg.mesh.cubes();
        let mut net = Network::new(cfg.mesh.clone());
        if cfg.record_events {
            net.enable_event_log();
        }
        let cubes = (0..n)
            .map(|c| {
                CubeState::new(c, cfg.geometry.vaults, cfg.geometry.banks, cfg.timing, cfg.nmp_table_entries)
            })
            .collect();
        let mut pt = PageTable::new(cfg.geometry, cfg.paging.policy)
            .with_pin_cube(cfg.paging.pin_cube)
            .with_chunk_frames(cfg.paging.hoard_chunk);
        for p in trace.processes.values() {
            pt.register_process(p);
        }
        let corners = cfg.mesh.corner_cubes();
        let mut mig = MigrationSystem::new(
            cfg.paging.migration_queue,
            cfg.paging.dma_channels,
            DATA_BITS,
            corners[0],
        )
        .with_os_interrupt(cfg.paging.os_interrupt);
        if cfg.record_events {
            mig.enable_log();
        }
        let mcs: Vec<Mc> = corners
            .iter()
            .map(|&cube| Mc { cube, queue: VecDeque::new(), deferred: Vec::new() })
            .collect();
        let m = mcs.len();
        let mut counters = SystemCounters::new(n, m);
        counters.alpha = cfg.counter_decay;
        let h = &cfg.host;
        let tom_candidates = if cfg.remapper == Remapper::Tom {
            FrameMapping::candidates(&cfg.geometry, cfg.tom_candidates)
        } else {
            vec![FrameMapping::IDENTITY]
        };
        Self {
            cfg,
            trace,
            net,
            cubes,
            pt,
            mig,
            info: (0..m).map(|_| PageInfoCache::with_history(cfg.page_info_entries, cfg.agent.history)).collect(),
            mcs,
            remap: ComputeRemapTable::new(cfg.compute_remap_entries),
            counters,
            selector: CandidateSelector::default(),
            caches: (0..h.cores).map(|_| HostCache::new(h.cache_bytes, h.cache_line, h.cache_ways, h.mshr)).collect(),
            mapping: tom_candidates[0],
            tom_candidates,
            tom_current: 0,
            tom_window: VecDeque::new(),
            slots: vec![OpSlot::default(); trace.ops.len()],
            events: BTreeMap::new(),
            alu_free: vec![0; n],
            next_issue: 0,
            completed: 0,
            last_progress: 0,
            window: Window { per_cube: vec![0; n], row_hits: vec![0; n], row_accesses: vec![0; n], ..Window::default() },
            timeline: Vec::new(),
            interval: cfg.stats_interval,
            per_cube: vec![0; n],
            total_hops: 0,
            latency_sum: 0,
            host_executed: 0,
            remapped: 0,
            memory_accesses: 0,
            nmp_buffer_accesses: 0,
            page_accesses: BTreeMap::new(),
            migrated: BTreeSet::new(),
            accesses_to_migrated: 0,
            operand_accesses: 0,
        }
    }

    fn fatal(cycle: u64, what: impl std::fmt::Display) -> SimError {
        SimError::Internal { cycle, message: what.to_string() }
    }

    fn schedule(&mut self, at: u64, ev: Ev) {
        self.events.entry(at).or_default().push(ev);
    }

    fn dram(&mut self, now: u64, addr: &DramAddr) -> Result<u64, SimError> {
        self.memory_accesses += 1;
        let (ready, _) = self.cubes[addr.cube]
            .schedule_access(now, addr)
            .map_err(|e| Self::fatal(now, e))?;
        Ok(ready)
    }

    fn send(&mut self, pkt: Packet<Msg>, now: u64) {
        self.net.inject(pkt, now);
    }

    /// Runs the trace to completion. `agent` is consulted only when the
    /// remapper is AIMM.
    pub(crate) fn run(mut self, mut agent: Option<&mut Agent>) -> Result<MetricsReport, SimError> {
        let total = self.trace.ops.len() as u64;
        let use_agent = self.cfg.remapper == Remapper::Aimm && agent.is_some();
        if use_agent {
            self.interval = agent.as_ref().map_or(self.cfg.stats_interval, |a| a.interval());
        }
        let tally_start = agent.as_ref().map(|a| a.tallies.clone()).unwrap_or_default();
        let mut next_boundary = self.interval;
        let mut next_tom = self.cfg.tom_epoch;
        let mut t = 0u64;
        while self.completed < total {
            if t >= self.cfg.max_cycles {
                return Err(Self::fatal(t, "cycle limit reached before the trace drained"));
            }
            if t - self.last_progress > STALL_LIMIT {
                return Err(Self::fatal(t, format!("no op completed for {STALL_LIMIT} cycles")));
            }
            for pkt in self.net.step(t) {
                self.deliver(pkt, t)?;
            }
            while let Some(entry) = self.events.first_entry() {
                if *entry.key() > t {
                    break;
                }
                for ev in entry.remove() {
                    self.handle(ev, t)?;
                }
            }
            self.step_migrations(t)?;
            for m in 0..self.mcs.len() {
                self.dispatch_mc(m, t)?;
            }
            self.issue(t);
            t += 1;

            if self.cfg.remapper == Remapper::Tom && t >= next_tom {
                self.tom_epoch();
                next_tom = t + self.cfg.tom_epoch;
            }
            if t >= next_boundary && self.completed < total {
                let len = t - self.window.start;
                self.close_interval(t)?;
                if use_agent {
                    let a = agent.as_deref_mut().expect("checked");
                    self.agent_tick(a, t, len)?;
                    self.interval = a.interval();
                }
                next_boundary = t + self.interval;
            }
        }
        if t > self.window.start {
            self.close_interval(t)?;
        }
        if !self.pt.frames_conserved() {
            return Err(Self::fatal(t, "frame pool not conserved"));
        }
        let tallies = match agent.as_deref() {
            Some(a) if use_agent => (
                a.tallies.weight_accesses - tally_start.weight_accesses,
                a.tallies.replay_accesses - tally_start.replay_accesses,
                a.tallies.state_accesses - tally_start.state_accesses,
            ),
            _ => (0, 0, 0),
        };
        Ok(self.finish(t, tallies, agent.as_deref()))
    }

    fn issue(&mut self, _t: u64) {
        let h = &self.cfg.host;
        for _ in 0..h.issue_width {
            let Some(op) = self.trace.ops.get(self.next_issue) else { return };
            let core = (op.seq_id % h.cores as u64) as usize;
            let m = core * self.mcs.len() / h.cores;
            let mc = &mut self.mcs[m];
            if mc.queue.len() + mc.deferred.len() >= h.mc_queue {
                return;
            }
            mc.queue.push_back(self.next_issue);
            self.slots[self.next_issue].core = core;
            self.slots[self.next_issue].mc = m;
            self.next_issue += 1;
        }
    }

    fn dispatch_mc(&mut self, m: usize, t: u64) -> Result<(), SimError> {
        let mut i = 0;
        while i < self.mcs[m].deferred.len() {
            let op = self.mcs[m].deferred[i];
            match self.try_dispatch(op, t)? {
                Dispatch::Sent => {
                    self.mcs[m].deferred.remove(i);
                    return Ok(());
                }
                Dispatch::Deferred => i += 1,
                Dispatch::Stall => return Ok(()),
            }
        }
        let Some(&op) = self.mcs[m].queue.front() else { return Ok(()) };
        match self.try_dispatch(op, t)? {
            Dispatch::Sent => {
                self.mcs[m].queue.pop_front();
            }
            Dispatch::Deferred => {
                self.mcs[m].queue.pop_front();
                self.mcs[m].deferred.push(op);
            }
            Dispatch::Stall => {}
        }
        Ok(())
    }

    fn try_dispatch(&mut self, idx: usize, t: u64) -> Result<Dispatch, SimError> {
        let op = &self.trace.ops[idx];
        let vaddrs = [Some(op.dest), Some(op.src1), op.src2];
        let mut frames = [None; 3];
        let mut addrs = [None; 3];
        let mut pages = [None; 3];
        for (k, v) in vaddrs.iter().enumerate() {
            let Some(v) = *v else { continue };
            match self.pt.translate(v, op.pid).map_err(|e| Self::fatal(t, e))? {
                Translation::Deferred => return Ok(Dispatch::Deferred),
                Translation::Ready { frame, paddr } => {
                    frames[k] = Some(frame);
                    addrs[k] = Some(
                        self.cfg.geometry.locate(paddr, &self.mapping).map_err(|e| Self::fatal(t, e))?,
                    );
                    pages[k] = Some(self.trace.page_of(op.pid, v));
                }
            }
        }
        let loc = |k: usize| {
            pages[k].zip(addrs[k]).map(|(page, a)| OperandLoc { page, cube: a.cube })
        };
        let placement = OpPlacement {
            dest: loc(0).expect("dest present"),
            src1: loc(1).expect("src1 present"),
            src2: loc(2),
        };
        let sched = schedule_op(&placement, self.cfg.technique, &self.remap);
        let core = self.slots[idx].core;
        let m = self.slots[idx].mc;

        if self.cfg.technique == Technique::Pei {
            let line = self.cfg.host.cache_line;
            let lines: Vec<u64> =
                vaddrs.iter().flatten().map(|&v| line_key(op.pid, v, line)).collect();
            let any_hit = lines.iter().any(|&l| self.caches[core].probe(l));
            if !any_hit && self.cubes[sched.compute_cube].nmp_table.is_full() {
                return Ok(Dispatch::Stall);
            }
            match pei_host_filter(&lines, &mut self.caches[core]) {
                PeiDecision::Stall => return Ok(Dispatch::Stall),
                PeiDecision::HostExecute { misses } => {
                    self.dispatch_host(idx, t, &misses, frames, addrs, pages);
                    return Ok(Dispatch::Sent);
                }
                PeiDecision::Offload => {}
            }
        }

        if !self.cubes[sched.compute_cube].nmp_table.insert(idx as u64) {
            return Ok(Dispatch::Stall);
        }
        self.nmp_buffer_accesses += 1;
        if sched.remapped {
            self.remapped += 1;
        }
        for f in frames.iter().flatten() {
            self.pt.acquire(*f);
        }
        self.note_accesses(m, &pages, &addrs, sched.compute_cube);
        if self.cfg.remapper == Remapper::Tom {
            if self.tom_window.len() == TOM_WINDOW {
                self.tom_window.pop_front();
            }
            self.tom_window.push_back(TomSample {
                dest: frames[0].expect("dest"),
                src1: frames[1].expect("src1"),
                src2: frames[2],
            });
        }
        let s = &mut self.slots[idx];
        s.dispatched = t;
        s.compute = sched.compute_cube;
        s.forward_to = sched.forward_to;
        s.pages = pages;
        s.frames = frames;
        s.addrs = addrs;
        let pkt = Packet::new(PacketKind::NmpReq, self.mcs[m].cube, sched.compute_cube, CONTROL_BITS, Msg::Offload)
            .from_host()
            .with_op(idx as u64);
        self.send(pkt, t);
        Ok(Dispatch::Sent)
    }

    fn dispatch_host(
        &mut self,
        idx: usize,
        t: u64,
        misses: &[usize],
        frames: [Option<u64>; 3],
        addrs: [Option<DramAddr>; 3],
        pages: [Option<VPage>; 3],
    ) {
        self.host_executed += 1;
        let m = self.slots[idx].mc;
        let mc_cube = self.mcs[m].cube;
        for p in pages.iter().flatten() {
            self.info[m].touch(*p, PageEvent::Access);
            self.count_page_access(*p);
        }
        let s = &mut self.slots[idx];
        s.dispatched = t;
        s.host = true;
        s.pages = pages;
        s.frames = frames;
        s.addrs = addrs;
        s.pending = misses.len() as u32;
        for &k in misses {
            let f = frames[k].expect("missed operand is present");
            self.pt.acquire(f);
            let cube = addrs[k].expect("present").cube;
            let pkt = Packet::new(PacketKind::DataReq, mc_cube, cube, CONTROL_BITS, Msg::Fetch(OPERANDS[k]))
                .from_host()
                .with_op(idx as u64);
            self.send(pkt, t);
        }
        if misses.is_empty() {
            self.schedule(t + ALU_CYCLES, Ev::Compute { op: idx });
        }
    }

    fn count_page_access(&mut self, p: VPage) {
        *self.page_accesses.entry(p).or_default() += 1;
        self.operand_accesses += 1;
        if self.migrated.contains(&p) {
            self.accesses_to_migrated += 1;
        }
    }

    fn note_accesses(
        &mut self,
        m: usize,
        pages: &[Option<VPage>; 3],
        addrs: &[Option<DramAddr>; 3],
        compute: CubeId,
    ) {
        let mut seen = BTreeSet::new();
        for (p, a) in pages.iter().zip(addrs) {
            let (Some(p), Some(a)) = (p, a) else { continue };
            self.count_page_access(*p);
            if seen.insert(*p) {
                self.info[m].touch(*p, PageEvent::Access);
                self.info[m].touch(*p, PageEvent::Hops(self.cfg.mesh.manhattan(a.cube, compute)));
            }
        }
        let src1_cube = addrs[1].expect("src1").cube;
        let dest = pages[0].expect("dest");
        self.info[m].touch(dest, PageEvent::Placement { compute, src1: src1_cube });
    }

    fn deliver(&mut self, pkt: Packet<Msg>, t: u64) -> Result<(), SimError> {
        if let Msg::Migration(id) = pkt.msg {
            match pkt.kind {
                PacketKind::MigrationData => {
                    self.window.migration_packets += 1;
                    if let Some(ack) = self.mig.on_data_delivered(id) {
                        let p = Packet::new(ack.kind, ack.src_cube, ack.dst_cube, ack.bits, Msg::Migration(id));
                        let p = if ack.to_host { p.to_host() } else { p };
                        self.send(p, t);
                    }
                }
                _ => self.mig.on_ack(id, t),
            }
            return Ok(());
        }
        let idx = pkt.op_ref.ok_or_else(|| Self::fatal(t, "op packet without an op"))? as usize;
        self.slots[idx].hops += u64::from(pkt.hop_count);
        match pkt.msg {
            Msg::Offload => self.start_compute(idx, t)?,
            Msg::Fetch(o) => {
                let k = slot(o);
                let addr = self.slots[idx].addrs[k].ok_or_else(|| Self::fatal(t, "fetch of absent operand"))?;
                let ready = self.dram(t, &addr)?;
                self.schedule(
                    ready,
                    Ev::ServeFetch { op: idx, operand: k, to: pkt.src_cube, to_host: pkt.source == Sink::Host },
                );
            }
            Msg::Operand(o) => {
                self.slots[idx].pending -= 1;
                if self.slots[idx].host {
                    let line = line_key(
                        self.trace.ops[idx].pid,
                        self.operand_vaddr(idx, o),
                        self.cfg.host.cache_line,
                    );
                    let c = &mut self.caches[self.slots[idx].core];
                    c.fill(line);
                    c.mshr_release();
                } else {
                    self.nmp_buffer_accesses += 1;
                }
                if self.slots[idx].pending == 0 {
                    self.ready_to_compute(idx, t);
                }
            }
            Msg::Result => {
                let addr = self.slots[idx].addrs[0].expect("dest");
                // read-modify-write of the destination element
                let r = self.dram(t, &addr)?;
                let w = self.dram(r, &addr)?;
                self.schedule(w, Ev::WriteDone { op: idx, cube: addr.cube });
            }
            Msg::Done => self.complete(idx, t),
            Msg::Migration(_) => unreachable!(),
        }
        Ok(())
    }

    fn operand_vaddr(&self, idx: usize, o: Operand) -> u64 {
        let op = &self.trace.ops[idx];
        match o {
            Operand::Dest => op.dest,
            Operand::Src1 => op.src1,
            Operand::Src2 => op.src2.unwrap_or(op.src1),
        }
    }

    /// The op reached its compute cube: read local operands, fetch the rest.
    fn start_compute(&mut self, idx: usize, t: u64) -> Result<(), SimError> {
        let s = self.slots[idx].clone();
        let mut pending = 0;
        for (k, addr) in s.addrs.iter().enumerate() {
            let Some(a) = *addr else { continue };
            if k == 0 && s.forward_to.is_some() {
                continue;
            }
            pending += 1;
            if a.cube == s.compute {
                let ready = self.dram(t, &a)?;
                self.schedule(ready, Ev::LocalRead { op: idx, operand: k });
            } else {
                let pkt = Packet::new(PacketKind::DataReq, s.compute, a.cube, CONTROL_BITS, Msg::Fetch(OPERANDS[k]))
                    .with_op(idx as u64);
                self.send(pkt, t);
            }
        }
        self.slots[idx].pending = pending;
        Ok(())
    }

    fn handle(&mut self, ev: Ev, t: u64) -> Result<(), SimError> {
        match ev {
            Ev::LocalRead { op, operand } => {
                if operand != 0 {
                    self.release(op, operand);
                }
                self.slots[op].pending -= 1;
                if self.slots[op].pending == 0 {
                    self.ready_to_compute(op, t);
                }
            }
            Ev::ServeFetch { op, operand, to, to_host } => {
                if operand != 0 || self.slots[op].host {
                    self.release(op, operand);
                }
                let from = self.slots[op].addrs[operand].expect("served operand").cube;
                let p = Packet::new(PacketKind::DataResp, from, to, DATA_BITS, Msg::Operand(OPERANDS[operand]))
                    .with_op(op as u64);
                self.send(if to_host { p.to_host() } else { p }, t);
            }
            Ev::Compute { op } => {
                let s = self.slots[op].clone();
                if s.host {
                    // the write lands in the host cache
                    self.complete(op, t);
                    return Ok(());
                }
                match s.forward_to {
                    Some(dst) => {
                        self.retire_nmp(op, s.compute, t)?;
                        let p = Packet::new(PacketKind::DataResp, s.compute, dst, DATA_BITS, Msg::Result)
                            .with_op(op as u64);
                        self.send(p, t);
                    }
                    None => {
                        let a = s.addrs[0].expect("dest");
                        let done = self.dram(t, &a)?;
                        self.schedule(done, Ev::WriteDone { op, cube: a.cube });
                    }
                }
            }
            Ev::WriteDone { op, cube } => {
                self.release(op, 0);
                if self.slots[op].forward_to.is_none() {
                    self.retire_nmp(op, cube, t)?;
                }
                let mc_cube = self.mcs[self.slots[op].mc].cube;
                let p = Packet::new(PacketKind::Ack, cube, mc_cube, CONTROL_BITS, Msg::Done)
                    .to_host()
                    .with_op(op as u64);
                self.send(p, t);
            }
        }
        Ok(())
    }

    /// All operands are in. Host ops run at once; NMP ops queue for their
    /// cube's ALU, which accepts one op every `nmp_alu_interval` cycles.
    fn ready_to_compute(&mut self, op: usize, t: u64) {
        let s = &self.slots[op];
        if s.host {
            self.schedule(t + ALU_CYCLES, Ev::Compute { op });
            return;
        }
        let c = s.compute;
        let start = t.max(self.alu_free[c]);
        self.alu_free[c] = start + self.cfg.nmp_alu_interval;
        self.schedule(start + ALU_CYCLES, Ev::Compute { op });
    }

    fn release(&mut self, op: usize, operand: usize) {
        if let Some(f) = self.slots[op].frames[operand] {
            self.pt.release(f);
        }
    }

    fn retire_nmp(&mut self, op: usize, cube: CubeId, t: u64) -> Result<(), SimError> {
        self.nmp_buffer_accesses += 1;
        self.cubes[cube].nmp_table.retire(op as u64).map_err(|e| Self::fatal(t, e))
    }

    fn complete(&mut self, idx: usize, t: u64) {
        let s = &self.slots[idx];
        let latency = t - s.dispatched;
        self.completed += 1;
        self.last_progress = t;
        self.latency_sum += latency;
        self.total_hops += s.hops;
        self.window.completions += 1;
        self.window.hops += s.hops;
        if !s.host {
            self.per_cube[s.compute] += 1;
            self.window.per_cube[s.compute] += 1;
        }
        let m = s.mc;
        let pages = s.pages;
        let mut seen = BTreeSet::new();
        for p in pages.iter().flatten() {
            if seen.insert(*p) {
                self.info[m].update_if_present(*p, PageEvent::Latency(latency));
            }
        }
    }

    fn step_migrations(&mut self, t: u64) -> Result<(), SimError> {
        let (pkts, evs) = self.mig.step(&mut self.pt, t).map_err(|e| Self::fatal(t, e))?;
        for p in pkts {
            if p.kind == PacketKind::MigrationData {
                // read at the source, write at the destination
                self.memory_accesses += 2;
            }
            let pkt = Packet::new(p.kind, p.src_cube, p.dst_cube, p.bits, Msg::Migration(p.migration));
            self.send(if p.to_host { pkt.to_host() } else { pkt }, t);
        }
        for ev in evs {
            if let MigrationEvent::Completed { vpage, latency, .. } = ev {
                self.migrated.insert(vpage);
                for c in &mut self.info {
                    c.update_if_present(vpage, PageEvent::Migration(latency));
                }
            }
        }
        Ok(())
    }

    fn tom_epoch(&mut self) {
        let window: Vec<TomSample> = self.tom_window.drain(..).collect();
        self.tom_current = tom_epoch_select(
            &window,
            &self.tom_candidates,
            &self.cfg.geometry,
            &self.cfg.mesh,
            self.cfg.technique,
            self.tom_current,
        );
        self.mapping = self.tom_candidates[self.tom_current];
    }

    fn close_interval(&mut self, t: u64) -> Result<(), SimError> {
        let w = &mut self.window;
        let len = t - w.start;
        let mut rh_total = (0u64, 0u64);
        let mut row_hit = Vec::with_capacity(self.cubes.len());
        for (c, cube) in self.cubes.iter().enumerate() {
            let hits = cube.row_buffer_hits - w.row_hits[c];
            let acc = cube.row_buffer_accesses - w.row_accesses[c];
            rh_total.0 += hits;
            rh_total.1 += acc;
            row_hit.push((acc > 0).then(|| hits as f64 / acc as f64));
            w.row_hits[c] = cube.row_buffer_hits;
            w.row_accesses[c] = cube.row_buffer_accesses;
        }
        let extra = if self.cfg.technique == Technique::Pei && self.cfg.remapper == Remapper::Aimm {
            w.migration_packets
        } else {
            0
        };
        self.timeline.push(IntervalStat {
            start_cycle: w.start,
            cycles: len,
            completions: w.completions,
            opc: (w.completions + extra) as f64 / len as f64,
            avg_hops: (w.completions > 0).then(|| w.hops as f64 / w.completions as f64),
            row_hit_rate: (rh_total.1 > 0).then(|| rh_total.0 as f64 / rh_total.1 as f64),
            per_cube: w.per_cube.clone(),
        });
        let occupancy: Vec<f64> = self
            .cubes
            .iter()
            .map(|c| c.nmp_table.occupancy() as f64 / c.nmp_table.capacity() as f64)
            .collect();
        let mcq: Vec<f64> = self
            .mcs
            .iter()
            .map(|m| (m.queue.len() + m.deferred.len()) as f64 / self.cfg.host.mc_queue as f64)
            .collect();
        self.counters.update(&occupancy, &row_hit, &mcq);
        w.start = t;
        w.completions = 0;
        w.hops = 0;
        w.migration_packets = 0;
        w.per_cube.iter_mut().for_each(|c| *c = 0);
        Ok(())
    }

    fn agent_tick(&mut self, agent: &mut Agent, t: u64, _len: u64) -> Result<(), SimError> {
        let last = self.timeline.last().expect("interval just closed");
        let done: u64 = last.per_cube.iter().sum();
        let share: Vec<f64> = last
            .per_cube
            .iter()
            .map(|&c| if done > 0 { c as f64 / done as f64 } else { 0.0 })
            .collect();
        let opc = last.opc;
        let pick = self.selector.select(&self.info);
        let host_cube = pick.as_ref().and_then(|(_, e)| self.pt.cube_of(e.vpage));
        let outcome = agent.tick(&TickInput {
            counters: &self.counters,
            candidate: pick.as_ref().map(|(_, e)| e),
            host_cube,
            completion_share: &share,
            opc,
            mesh: &self.cfg.mesh,
        })?;
        let (Some(o), Some((m, entry))) = (outcome, pick) else { return Ok(()) };
        self.info[m].update_if_present(entry.vpage, PageEvent::Action(o.action.id() as u8));
        match o.effect {
            crate::agent::ActionEffect::Migrate { page, dst } => {
                self.mig.request(&self.pt, page, dst, t).map_err(|e| Self::fatal(t, e))?;
            }
            crate::agent::ActionEffect::RemapCompute { page, cube } => self.remap.insert(page, cube),
            crate::agent::ActionEffect::Interval(_) | crate::agent::ActionEffect::None => {}
        }
        Ok(())
    }

    fn finish(self, cycles: u64, agent_tallies: (u64, u64, u64), agent: Option<&Agent>) -> MetricsReport {
        let st = &self.mig.stats;
        let pages_touched = self.page_accesses.len() as u64;
        let migration = MigrationSummary {
            requested: st.requested,
            completed: st.completed,
            aborted: st.aborted,
            dropped: st.dropped_full + st.dropped_in_flight + st.dropped_noop,
            avg_latency: (st.completed > 0).then(|| st.latency_sum as f64 / st.completed as f64),
            pages_migrated: self.migrated.len() as u64,
            pages_touched,
            fraction_pages_migrated: if pages_touched > 0 {
                self.migrated.len() as f64 / pages_touched as f64
            } else {
                0.0
            },
            fraction_accesses_migrated: if self.operand_accesses > 0 {
                self.accesses_to_migrated as f64 / self.operand_accesses as f64
            } else {
                0.0
            },
        };
        let energy = EnergyTallies {
            packet_bit_hops: self.net.bit_hops(),
            memory_access_bits: self.memory_accesses * u64::from(DATA_BITS),
            page_info_accesses: self.info.iter().map(|c| c.accesses).sum::<u64>() + self.remap.accesses,
            nmp_buffer_accesses: self.nmp_buffer_accesses,
            migration_queue_accesses: st.queue_accesses,
            mdma_accesses: st.dma_accesses,
            weight_accesses: agent_tallies.0,
            replay_accesses: agent_tallies.1,
            state_accesses: agent_tallies.2,
        };
        let per_cube_row_hit: Vec<Option<f64>> = self.cubes.iter().map(|c| c.row_hit_rate()).collect();
        let (hits, acc) = self
            .cubes
            .iter()
            .fold((0, 0), |(h, a), c| (h + c.row_buffer_hits, a + c.row_buffer_accesses));
        MetricsReport::new(super::metrics::RunTotals {
            cycles,
            ops_completed: self.completed,
            timeline: self.timeline,
            total_hops: self.total_hops,
            per_cube_completions: self.per_cube,
            latency_sum: self.latency_sum,
            host_executed: self.host_executed,
            remapped_ops: self.remapped,
            migration,
            row_hit_rate: (acc > 0).then(|| hits as f64 / acc as f64),
            per_cube_row_hit,
            energy,
            net_events: self.net.event_log().map(<[_]>::to_vec).unwrap_or_default(),
            migration_log: self.mig.log().iter().map(|r| r.csv_row()).collect(),
            agent_ticks: agent.map_or(0, |a| a.ticks()),
        })
    }
}
