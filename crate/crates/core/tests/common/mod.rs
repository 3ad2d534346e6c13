//! Independent oracles and the acceptance checks built on them. Each
//! `criterion_*` returns a one-line detail on success and a diagnostic on
//! failure; the per-module suites assert on them and the acceptance runner
//! prints them.
#![allow(dead_code)]

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use nmpsim::agent::{
    apply_action, compute_reward, select_action, train_step, Action, ActionContext, ActionEffect,
    Dense, Experience, QNetwork, INTERVALS,
};
use nmpsim::harness::{compute_energy, run_simulation, EnergyTallies, SimConfig};
use nmpsim::memnet::{DramGeometry, FrameMapping, MeshConfig, Network, Packet, PacketKind};
use nmpsim::offload::{tom_epoch_select, Technique, TomSample};
use nmpsim::paging::{
    AllocPolicy, MigrationEvent, MigrationSystem, PageTable, RequestOutcome, Translation,
};
use nmpsim::trace::{
    affinity_analysis, classify_page_accesses, generate_kernel_trace, KernelKind, OpTrace,
    Permission, Process, Region, SizeParams, VPage, DEFAULT_CLASS_EDGES,
};

pub type Check = Result<String, String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    }};
}

// ---------------------------------------------------------------- mesh

/// Hop distance from first principles: cube ids are row-major.
pub fn oracle_hops(width: usize, a: usize, b: usize) -> u32 {
    let (ax, ay) = (a % width, a / width);
    let (bx, by) = (b % width, b / width);
    (ax.abs_diff(bx) + ay.abs_diff(by)) as u32
}

pub const ROUTING_PAIRS: usize = 10_000;
pub const ROUTING_BUDGET_SECS: f64 = 5.0;

/// Injects `pairs` random packets on a `w × h` mesh and returns the number
/// whose delivered hop count disagrees with the oracle.
pub fn routing_mismatches(w: usize, h: usize, pairs: usize, seed: u64) -> Result<usize, String> {
    let cfg = MeshConfig::new(w, h);
    let mut net: Network<usize> = Network::new(cfg);
    let mut r = rng(seed);
    let mut want = Vec::with_capacity(pairs);
    for i in 0..pairs {
        let (s, d) = (r.gen_range(0..w * h), r.gen_range(0..w * h));
        want.push(oracle_hops(w, s, d));
        net.inject(Packet::new(PacketKind::DataReq, s, d, 128, i), 0);
    }
    let mut got = vec![None; pairs];
    let mut cycle = 0;
    while net.delivered() < pairs as u64 {
        ensure!(cycle < 10_000_000, "{w}x{h}: network stalled at cycle {cycle}");
        for p in net.step(cycle) {
            got[p.msg] = Some(p.hop_count);
        }
        cycle += 1;
    }
    Ok(want.iter().zip(&got).filter(|(w, g)| Some(**w) != **g).count())
}

pub fn criterion_routing() -> Check {
    let start = Instant::now();
    for (w, h) in [(4, 4), (8, 8)] {
        let bad = routing_mismatches(w, h, ROUTING_PAIRS, 0x5eed + w as u64)?;
        ensure!(bad == 0, "{w}x{h}: {bad} of {ROUTING_PAIRS} packets off the Manhattan distance");
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < ROUTING_BUDGET_SECS, "took {secs:.2} s, budget {ROUTING_BUDGET_SECS} s");
    Ok(format!("2 x {ROUTING_PAIRS} pairs on 4x4 and 8x8 match Manhattan in {secs:.2} s"))
}

pub const LOSSLESS_PACKETS: u64 = 50_000;

pub fn criterion_lossless() -> Check {
    let cfg = MeshConfig::default();
    let cubes = cfg.cubes();
    let mut net: Network<u64> = Network::new(cfg);
    let mut r = rng(0x1055);
    let mut seen = vec![false; LOSSLESS_PACKETS as usize];
    let (mut injected, mut delivered) = (0u64, 0u64);
    let mut cycle = 0u64;
    while delivered < LOSSLESS_PACKETS {
        ensure!(cycle < 5_000_000, "stalled with {} packets resident", net.count_resident());
        let burst = r.gen_range(0..=8u64).min(LOSSLESS_PACKETS - injected);
        for _ in 0..burst {
            let kind = *PacketKind::ALL.choose(&mut r).expect("kinds");
            let bits = if r.gen_bool(0.5) { 128 } else { 512 };
            let mut p = Packet::new(kind, r.gen_range(0..cubes), r.gen_range(0..cubes), bits, injected);
            if r.gen_bool(0.3) {
                p = p.from_host();
            }
            if r.gen_bool(0.3) {
                p = p.to_host();
            }
            net.inject(p, cycle);
            injected += 1;
        }
        for p in net.step(cycle) {
            let i = p.msg as usize;
            ensure!(!seen[i], "packet {i} delivered twice");
            seen[i] = true;
            delivered += 1;
        }
        ensure!(
            net.injected() == injected && injected == delivered + net.count_resident(),
            "cycle {cycle}: injected {injected} != delivered {delivered} + resident {}",
            net.count_resident()
        );
        ensure!(net.credits_within_bounds(), "cycle {cycle}: credit overflow");
        cycle += 1;
    }
    ensure!(seen.iter().all(|s| *s), "some packets never arrived");
    Ok(format!("{LOSSLESS_PACKETS} packets, balance held for {cycle} cycles, 0 drops"))
}

// ---------------------------------------------------------------- DRAM

pub fn small_geometry(cubes: usize) -> DramGeometry {
    DramGeometry { cubes, cube_bytes: 64 << 10, vaults: 32, banks: 8, row_bytes: 256, page_size: 4096 }
}

/// Enumerates every physical byte address and checks that `dram_map` hits
/// each DRAM coordinate exactly once and `dram_unmap` inverts it.
pub fn dram_bijection(g: &DramGeometry) -> Check {
    let rows = g.cube_bytes / (g.row_bytes * (g.vaults * g.banks) as u64);
    let slots = g.cubes as u64 * g.vaults as u64 * g.banks as u64 * rows * g.row_bytes;
    ensure!(slots == g.total_bytes(), "coordinate space {slots} != {} bytes", g.total_bytes());
    let mut seen = vec![false; slots as usize];
    for paddr in 0..g.total_bytes() {
        let a = g.dram_map(paddr).map_err(|e| format!("{paddr:#x}: {e}"))?;
        ensure!(
            a.cube < g.cubes && a.vault < g.vaults && a.bank < g.banks && a.row < rows && a.column < g.row_bytes,
            "{paddr:#x} -> {a:?} out of range"
        );
        let idx = (((a.cube as u64 * g.vaults as u64 + a.vault as u64) * g.banks as u64 + a.bank as u64) * rows
            + a.row)
            * g.row_bytes
            + a.column;
        ensure!(!seen[idx as usize], "{paddr:#x} collides at {a:?}");
        seen[idx as usize] = true;
        ensure!(g.dram_unmap(&a) == paddr, "unmap({a:?}) != {paddr:#x}");
    }
    ensure!(g.dram_map(g.total_bytes()).is_err(), "address past the end accepted");
    Ok(format!("{} addresses over {} cubes map one-to-one", g.total_bytes(), g.cubes))
}

pub fn criterion_dram() -> Check {
    dram_bijection(&small_geometry(16))
}

// ---------------------------------------------------------------- migration

#[derive(Clone, Copy, Debug, Default)]
pub struct CoherenceTally {
    /// Read-only accesses that translated before a remap and finished after.
    pub ro_straddles: u64,
    /// Read-write translations refused while the page was locked.
    pub rw_deferrals: u64,
    pub completed: u64,
    pub aborted: u64,
}

#[derive(Clone, Copy, Debug)]
pub struct Interleaving {
    pub seed: u64,
    pub channels: usize,
    pub os_interrupt: u64,
    pub max_net_delay: u64,
    pub max_hold: u64,
    pub request_p: f64,
    pub cycles: u64,
}

struct Access {
    page: VPage,
    frame: u64,
    perm: Permission,
    done_at: u64,
}

enum Wire {
    Data(u64),
    Ack(u64),
}

const COHERENCE_PAGES: u64 = 8;
const RO_PAGES: u64 = 4;

/// Drives a page table and migration engine under random requests, random
/// access lifetimes and random packet latencies, checking coherence and
/// frame conservation after every cycle.
pub fn migration_interleaving(p: &Interleaving) -> Result<CoherenceTally, String> {
    let g = small_geometry(4);
    let mut pt = PageTable::new(g, AllocPolicy::Default);
    let mut proc = Process::new(0, COHERENCE_PAGES * g.page_size);
    proc.regions.push(Region { start: 0, end: RO_PAGES * g.page_size, perm: Permission::ReadOnly });
    pt.register_process(&proc);
    let pages: Vec<VPage> = (0..COHERENCE_PAGES).map(|vpn| VPage { pid: 0, vpn }).collect();
    for pg in &pages {
        pt.touch(*pg).map_err(|e| e.to_string())?;
    }
    let mut m = MigrationSystem::new(4, p.channels, 512, 0).with_os_interrupt(p.os_interrupt);
    let mut r = rng(p.seed);
    let mut wire: BTreeMap<u64, Vec<Wire>> = BTreeMap::new();
    let mut accesses: Vec<Access> = Vec::new();
    let mut dst_of: BTreeMap<u64, usize> = BTreeMap::new();
    let mut tally = CoherenceTally::default();

    let mut t = 0u64;
    loop {
        let live = t < p.cycles;
        if !live && m.is_idle() && accesses.is_empty() && wire.is_empty() {
            break;
        }
        ensure!(t < p.cycles + 200_000, "did not drain by cycle {t}");

        if let Some(batch) = wire.remove(&t) {
            for w in batch {
                match w {
                    Wire::Data(id) => {
                        if let Some(ack) = m.on_data_delivered(id) {
                            let d = t + 1 + r.gen_range(0..=p.max_net_delay);
                            wire.entry(d).or_default().push(Wire::Ack(ack.migration));
                        }
                    }
                    Wire::Ack(id) => m.on_ack(id, t),
                }
            }
        }

        let mut keep = Vec::with_capacity(accesses.len());
        for a in accesses.drain(..) {
            if a.done_at > t {
                keep.push(a);
                continue;
            }
            let cur = pt.entry(a.page).ok_or("access to unmapped page")?.frame;
            match a.perm {
                Permission::ReadWrite => ensure!(
                    cur == a.frame,
                    "cycle {t}: read-write access to {} served from stale frame {} (current {cur})",
                    a.page,
                    a.frame
                ),
                Permission::ReadOnly => {
                    if cur != a.frame {
                        tally.ro_straddles += 1;
                        ensure!(
                            pt.owner_of(a.frame).is_none(),
                            "cycle {t}: old frame {} reowned while a read was in flight",
                            a.frame
                        );
                    }
                }
            }
            pt.release(a.frame);
        }
        accesses = keep;

        let (pkts, events) = m.step(&mut pt, t).map_err(|e| e.to_string())?;
        for pk in pkts {
            let d = t + 1 + r.gen_range(0..=p.max_net_delay);
            wire.entry(d).or_default().push(Wire::Data(pk.migration));
        }
        for ev in events {
            match ev {
                MigrationEvent::Completed { id, vpage, .. } => {
                    tally.completed += 1;
                    ensure!(
                        pt.cube_of(vpage) == dst_of.get(&id).copied(),
                        "migration {id} finished with {vpage} outside its destination"
                    );
                }
                MigrationEvent::Aborted { .. } => tally.aborted += 1,
            }
        }

        if live {
            if r.gen_bool(p.request_p) {
                let pg = *pages.choose(&mut r).expect("pages");
                let dst = r.gen_range(0..g.cubes);
                if let RequestOutcome::Queued(id) = m.request(&pt, pg, dst, t).map_err(|e| e.to_string())? {
                    dst_of.insert(id, dst);
                }
            }
            for _ in 0..r.gen_range(0..=3) {
                let pg = *pages.choose(&mut r).expect("pages");
                let vaddr = pg.vpn * g.page_size + r.gen_range(0..g.page_size);
                let e = *pt.entry(pg).ok_or("unmapped")?;
                match pt.translate(vaddr, 0).map_err(|e| e.to_string())? {
                    Translation::Ready { frame, .. } => {
                        ensure!(frame == e.frame && !e.locked, "cycle {t}: translation bypassed a lock");
                        pt.acquire(frame);
                        let done_at = t + 1 + r.gen_range(0..=p.max_hold);
                        accesses.push(Access { page: pg, frame, perm: e.perm, done_at });
                    }
                    Translation::Deferred => {
                        ensure!(
                            e.locked && e.perm == Permission::ReadWrite,
                            "cycle {t}: {} deferred without a blocking migration",
                            pg
                        );
                        tally.rw_deferrals += 1;
                    }
                }
            }
        }

        ensure!(pt.frames_conserved(), "cycle {t}: frame pool not conserved");
        ensure!(pt.is_injective(), "cycle {t}: two pages share a frame");
        t += 1;
    }
    ensure!(pt.retiring_frames() == 0, "{} frames never retired", pt.retiring_frames());
    Ok(tally)
}

pub const COHERENCE_CASES: u32 = 1000;

pub fn criterion_migration() -> Check {
    let mut runner = TestRunner::new(PtConfig {
        cases: COHERENCE_CASES,
        failure_persistence: None,
        ..PtConfig::default()
    });
    let total = Cell::new(CoherenceTally::default());
    let strategy = (any::<u64>(), 1usize..=2, 0u64..80, 0u64..6, 0u64..48, 0.01f64..0.2);
    let res = runner.run(&strategy, |(seed, channels, os_interrupt, max_net_delay, max_hold, request_p)| {
        let p = Interleaving { seed, channels, os_interrupt, max_net_delay, max_hold, request_p, cycles: 300 };
        let t = migration_interleaving(&p).map_err(TestCaseError::fail)?;
        let mut acc = total.get();
        acc.ro_straddles += t.ro_straddles;
        acc.rw_deferrals += t.rw_deferrals;
        acc.completed += t.completed;
        acc.aborted += t.aborted;
        total.set(acc);
        Ok(())
    });
    res.map_err(|e| e.to_string())?;
    let t = total.get();
    ensure!(t.ro_straddles > 0, "no read-only access ever straddled a remap");
    ensure!(t.rw_deferrals > 0, "no read-write access was ever held back by a lock");
    Ok(format!(
        "{COHERENCE_CASES} interleavings, {} migrations, {} read-only straddles, {} blocked accesses",
        t.completed, t.ro_straddles, t.rw_deferrals
    ))
}

// ---------------------------------------------------------------- Q-network

pub struct OracleForward {
    pub pre: Vec<f64>,
    pub q: Vec<f64>,
}

fn dense(l: &Dense, x: &[f64]) -> Vec<f64> {
    (0..l.outputs)
        .map(|o| {
            let row = &l.w[o * l.inputs..(o + 1) * l.inputs];
            let mut acc = l.b[o];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            acc
        })
        .collect()
}

/// Straight-line dueling forward pass; `pre` holds both hidden layers'
/// pre-activations.
pub fn oracle_forward(net: &QNetwork, s: &[f64]) -> OracleForward {
    let z1 = dense(&net.l1, s);
    let h1: Vec<f64> = z1.iter().map(|z| if *z > 0.0 { *z } else { 0.0 }).collect();
    let z2 = dense(&net.l2, &h1);
    let h2: Vec<f64> = z2.iter().map(|z| if *z > 0.0 { *z } else { 0.0 }).collect();
    let v = dense(&net.value, &h2)[0];
    let a = dense(&net.advantage, &h2);
    let mean = a.iter().sum::<f64>() / a.len() as f64;
    let q = a.iter().map(|x| v + x - mean).collect();
    OracleForward { pre: z1.into_iter().chain(z2).collect(), q }
}

pub fn oracle_loss(net: &QNetwork, samples: &[(Vec<f64>, usize, f64)]) -> f64 {
    samples
        .iter()
        .map(|(s, a, y)| {
            let e = oracle_forward(net, s).q[*a] - y;
            e * e
        })
        .sum::<f64>()
        / samples.len() as f64
}

pub const FD_STEP: f64 = 1e-4;
pub const FD_REL_TOL: f64 = 1e-3;
/// Gradients below this magnitude are compared absolutely.
pub const FD_FLOOR: f64 = 1e-7;
pub const MIN_PREACT: f64 = 1e-2;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

pub fn random_net(r: &mut ChaCha8Rng, input: usize, hidden: [usize; 2], actions: usize) -> QNetwork {
    let mut net = QNetwork::new(input, hidden, actions, r);
    let n = Normal::new(0.0, 0.1).expect("std");
    let mut p = net.params();
    for (k, v) in p.iter_mut().enumerate() {
        // biases are zero after He init; give them some spread too
        if *v == 0.0 || k % 7 == 0 {
            *v += n.sample(r);
        }
    }
    net.set_params(&p);
    net
}

/// Draws a batch whose inputs keep every hidden pre-activation at least
/// `MIN_PREACT` away from the ReLU kink. `None` if that takes too long.
pub fn kink_free_batch(
    net: &QNetwork,
    r: &mut ChaCha8Rng,
    batch: usize,
) -> Option<Vec<(Vec<f64>, usize, f64)>> {
    let mut out = Vec::with_capacity(batch);
    'sample: for _ in 0..batch {
        for _ in 0..5000 {
            let s: Vec<f64> = (0..net.input_len()).map(|_| r.gen_range(-1.0..1.0)).collect();
            if oracle_forward(net, &s).pre.iter().all(|z| z.abs() > MIN_PREACT) {
                let a = r.gen_range(0..net.actions());
                let y = r.gen_range(-2.0..2.0);
                out.push((s, a, y));
                continue 'sample;
            }
        }
        return None;
    }
    Some(out)
}

/// Largest relative error between `loss_and_grad` and central differences
/// of the oracle loss over the parameter indices `which`.
pub fn gradient_check(net: &QNetwork, samples: &[(Vec<f64>, usize, f64)], which: &[usize]) -> f64 {
    let refs: Vec<(&[f64], usize, f64)> = samples.iter().map(|(s, a, y)| (s.as_slice(), *a, *y)).collect();
    let (loss, grad) = net.loss_and_grad(&refs);
    assert!((loss - oracle_loss(net, samples)).abs() <= 1e-9 * loss.abs().max(1.0));
    let g = grad.params();
    let base = net.params();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for &k in which {
        let mut p = base.clone();
        p[k] = base[k] + FD_STEP;
        probe.set_params(&p);
        let up = oracle_loss(&probe, samples);
        p[k] = base[k] - FD_STEP;
        probe.set_params(&p);
        let down = oracle_loss(&probe, samples);
        let fd = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(g[k], fd));
    }
    worst
}

pub const RANDOM_NETS: usize = 100;

/// Worst relative gradient error over `RANDOM_NETS` small nets (every
/// parameter) and one full-size net (sampled parameters).
pub fn gradient_suite() -> Result<(f64, usize), String> {
    let mut r = rng(0x9ad);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut nets = 0;
    while nets < RANDOM_NETS {
        let input = r.gen_range(2..=10);
        let hidden = [r.gen_range(2..=10), r.gen_range(2..=10)];
        let actions = r.gen_range(2..=8);
        let net = random_net(&mut r, input, hidden, actions);
        let size = r.gen_range(1..=4);
        let Some(batch) = kink_free_batch(&net, &mut r, size) else { continue };
        let all: Vec<usize> = (0..net.param_count()).collect();
        worst = worst.max(gradient_check(&net, &batch, &all));
        checked += all.len();
        nets += 1;
    }
    let mut big = None;
    for _ in 0..20 {
        let net = random_net(&mut r, 144, [256, 256], Action::COUNT);
        if let Some(b) = kink_free_batch(&net, &mut r, 1) {
            big = Some((net, b));
            break;
        }
    }
    let (net, batch) = big.ok_or("no kink-free input for the full-size net")?;
    let which: Vec<usize> = (0..300).map(|_| r.gen_range(0..net.param_count())).collect();
    worst = worst.max(gradient_check(&net, &batch, &which));
    checked += which.len();
    Ok((worst, checked))
}

pub const DUELING_TOL: f64 = 1e-6;

/// Largest |ΔQ| when every advantage output is shifted by one constant.
pub fn dueling_shift_error() -> f64 {
    let mut r = rng(0xd0e1);
    let mut worst: f64 = 0.0;
    for _ in 0..RANDOM_NETS {
        let input = r.gen_range(2..=16);
        let hidden = [r.gen_range(2..=16), r.gen_range(2..=16)];
        let net = random_net(&mut r, input, hidden, Action::COUNT);
        let mut shifted = net.clone();
        let c = r.gen_range(-100.0..100.0);
        shifted.advantage.b.iter_mut().for_each(|b| *b += c);
        for _ in 0..5 {
            let s: Vec<f64> = (0..input).map(|_| r.gen_range(-1.0..1.0)).collect();
            let q0 = net.forward(&s).expect("shape");
            let q1 = shifted.forward(&s).expect("shape");
            for (a, b) in q0.iter().zip(&q1) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

pub fn criterion_rl_numerics() -> Check {
    let dq = dueling_shift_error();
    ensure!(dq <= DUELING_TOL, "advantage shift moved Q by {dq:e}");
    let (worst, n) = gradient_suite()?;
    ensure!(worst <= FD_REL_TOL, "gradient relative error {worst:e} > {FD_REL_TOL:e}");
    Ok(format!("max |dQ| {dq:.1e} under shifts; max grad rel err {worst:.1e} over {n} params"))
}

// ---------------------------------------------------------------- actions

/// The diagonal partner from coordinates.
pub fn oracle_diagonal(w: usize, h: usize, c: usize) -> usize {
    let (x, y) = (c % w, c / w);
    (h - 1 - y) * w + (w - 1 - x)
}

pub fn oracle_neighbors(w: usize, h: usize, c: usize) -> BTreeSet<usize> {
    let (x, y) = ((c % w) as i64, (c / w) as i64);
    [(1, 0), (-1, 0), (0, 1), (0, -1)]
        .into_iter()
        .map(|(dx, dy)| (x + dx, y + dy))
        .filter(|&(nx, ny)| nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64)
        .map(|(nx, ny)| ny as usize * w + nx as usize)
        .collect()
}

pub fn criterion_reward_actions() -> Check {
    ensure!(compute_reward(1.0, 1.2, 0.01) == 1, "rising OPC not rewarded");
    ensure!(compute_reward(1.0, 0.8, 0.01) == -1, "falling OPC not penalised");
    ensure!(compute_reward(1.0, 1.0, 0.01) == 0, "flat OPC not neutral");

    let mut r = rng(0xac7);
    let mut checked = 0;
    for (w, h) in [(4, 4), (8, 8), (4, 2)] {
        let mesh = MeshConfig::new(w, h);
        for compute in 0..w * h {
            let host = (compute + 3) % (w * h);
            let src1 = (compute + 5) % (w * h);
            let page = VPage { pid: 1, vpn: 42 };
            let ctx = ActionContext { page, host_cube: host, compute_cube: compute, src1_cube: Some(src1), mesh: &mesh };
            let near = oracle_neighbors(w, h, compute);
            let far = oracle_diagonal(w, h, compute);
            let mut idx = 1;
            let mut near_hit = BTreeSet::new();
            for _ in 0..64 {
                match apply_action(Action::NearDataRemap, &ctx, &mut idx, &mut r) {
                    ActionEffect::Migrate { page: p, dst } if p == page && near.contains(&dst) => {
                        near_hit.insert(dst);
                    }
                    e => return Err(format!("near data remap from {compute}: {e:?}")),
                }
                match apply_action(Action::NearComputeRemap, &ctx, &mut idx, &mut r) {
                    ActionEffect::RemapCompute { page: p, cube } if p == page && near.contains(&cube) => {}
                    e => return Err(format!("near compute remap from {compute}: {e:?}")),
                }
            }
            ensure!(near_hit == near, "near remap from {compute} never reached {near:?}");
            let fixed = [
                (Action::DefaultMapping, ActionEffect::None),
                (Action::FarDataRemap, ActionEffect::Migrate { page, dst: far }),
                (Action::FarComputeRemap, ActionEffect::RemapCompute { page, cube: far }),
                (Action::SourceComputeRemap, ActionEffect::RemapCompute { page, cube: src1 }),
            ];
            for (a, want) in fixed {
                let got = apply_action(a, &ctx, &mut idx, &mut r);
                ensure!(got == want, "{a:?} from {compute}: {got:?}, want {want:?}");
            }
            ensure!(idx == 1, "non-interval actions moved the interval");
            let no_src = ActionContext { src1_cube: None, ..ctx };
            let got = apply_action(Action::SourceComputeRemap, &no_src, &mut idx, &mut r);
            ensure!(
                got == ActionEffect::RemapCompute { page, cube: host },
                "source remap without a source: {got:?}"
            );
            checked += 1;
        }
    }

    let mesh = MeshConfig::default();
    let ctx = ActionContext { page: VPage { pid: 0, vpn: 0 }, host_cube: 0, compute_cube: 0, src1_cube: None, mesh: &mesh };
    let mut idx = 0;
    let mut seen = Vec::new();
    for _ in 0..5 {
        if let ActionEffect::Interval(i) = apply_action(Action::IncreaseInterval, &ctx, &mut idx, &mut r) {
            seen.push(i);
        }
    }
    ensure!(seen == [125, 167, 250, 250, 250], "increase walk {seen:?}");
    seen.clear();
    for _ in 0..5 {
        if let ActionEffect::Interval(i) = apply_action(Action::DecreaseInterval, &ctx, &mut idx, &mut r) {
            seen.push(i);
        }
    }
    ensure!(seen == [167, 125, 100, 100, 100], "decrease walk {seen:?}");
    ensure!(INTERVALS == [100, 125, 167, 250], "interval set changed");
    Ok(format!("3 reward signs; 8 actions on {checked} compute cubes across 3 meshes; clamps at 100/250"))
}

pub const EPSILON_DRAWS: usize = 80_000;

/// Per-action frequencies of `select_action` at ε = 1.
pub fn epsilon_one_shares() -> Vec<f64> {
    let mut r = rng(0xe951);
    let net = random_net(&mut r, 8, [8, 8], Action::COUNT);
    let s = vec![0.5; 8];
    let mut counts = [0usize; Action::COUNT];
    for _ in 0..EPSILON_DRAWS {
        counts[select_action(&net, &s, 1.0, &mut r).expect("shape").id()] += 1;
    }
    counts.iter().map(|c| *c as f64 / EPSILON_DRAWS as f64).collect()
}

/// Losses of `steps` SGD steps on one fixed batch of terminal transitions.
pub fn terminal_batch_losses(steps: usize, lr: f64) -> Vec<f64> {
    let mut r = rng(0x7e57);
    let mut net = random_net(&mut r, 32, [32, 32], Action::COUNT);
    let batch: Vec<Experience> = (0..16)
        .map(|_| Experience {
            s: (0..32).map(|_| r.gen_range(-1.0..1.0)).collect(),
            a: Action::ALL[r.gen_range(0..Action::COUNT)],
            r: [-1, 0, 1][r.gen_range(0..3)],
            s_next: vec![0.0; 32],
            terminal: true,
        })
        .collect();
    (0..steps).map(|_| train_step(&mut net, None, &batch, 0.95, lr).expect("finite")).collect()
}

// ---------------------------------------------------------------- TOM

/// Cube of `frame` under `m`, from the bit layout: the identity reads the
/// cube field directly; a swap at `s` moves bits `[s, s+w)` into it.
pub fn oracle_cube(g: &DramGeometry, m: &FrameMapping, frame: u64) -> usize {
    let fpc_bits = g.frames_per_cube().trailing_zeros();
    let width = g.cubes.trailing_zeros();
    match m.swap_shift {
        None => (frame >> fpc_bits) as usize,
        Some(s) => ((frame >> s) & ((1 << width) - 1)) as usize,
    }
}

/// Bytes × hops for one window, rebuilt from the technique definitions.
pub fn oracle_tom_score(
    window: &[TomSample],
    g: &DramGeometry,
    m: &FrameMapping,
    width: usize,
    technique: Technique,
) -> u64 {
    window
        .iter()
        .map(|s| {
            let d = oracle_cube(g, m, s.dest);
            let s1 = oracle_cube(g, m, s.src1);
            let at = if technique == Technique::Bnmp { d } else { s1 };
            let mut hops = oracle_hops(width, s1, at);
            if let Some(s2) = s.src2 {
                hops += oracle_hops(width, oracle_cube(g, m, s2), at);
            }
            hops += oracle_hops(width, at, d);
            64 * u64::from(hops)
        })
        .sum()
}

pub fn oracle_tom_select(
    window: &[TomSample],
    cands: &[FrameMapping],
    g: &DramGeometry,
    width: usize,
    technique: Technique,
) -> usize {
    let mut best = 0;
    let mut best_score = u64::MAX;
    for (i, c) in cands.iter().enumerate() {
        let s = oracle_tom_score(window, g, c, width, technique);
        if s < best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

pub const TOM_TRIALS: usize = 100;
pub const TOM_WINDOW: usize = 20;

pub fn criterion_tom() -> Check {
    let g = DramGeometry::new(16);
    let mesh = MeshConfig::default();
    let all = FrameMapping::candidates(&g, 8);
    let mut r = rng(0x70);
    let mut agree = 0;
    let mut distinct_winners = BTreeSet::new();
    for trial in 0..TOM_TRIALS {
        let technique = Technique::ALL[trial % 3];
        let mut cands = all.clone();
        cands.shuffle(&mut r);
        cands.truncate(3);
        // a few hot frames so co-location is possible
        let pool: Vec<u64> = (0..6).map(|_| r.gen_range(0..g.total_frames())).collect();
        let window: Vec<TomSample> = (0..TOM_WINDOW)
            .map(|_| TomSample {
                dest: *pool.choose(&mut r).expect("pool"),
                src1: *pool.choose(&mut r).expect("pool"),
                src2: r.gen_bool(0.7).then(|| *pool.choose(&mut r).expect("pool")),
            })
            .collect();
        let want = oracle_tom_select(&window, &cands, &g, mesh.width, technique);
        let got = tom_epoch_select(&window, &cands, &g, &mesh, technique, 0);
        distinct_winners.insert(want);
        if got == want {
            agree += 1;
        }
    }
    ensure!(agree == TOM_TRIALS, "{agree}/{TOM_TRIALS} trials agree with the brute-force scorer");
    Ok(format!("{agree}/{TOM_TRIALS} windows agree; winners span {} candidate slots", distinct_winners.len()))
}

// ---------------------------------------------------------------- harness runs

pub fn parse_cfg(text: &str) -> SimConfig {
    SimConfig::parse(text).unwrap_or_else(|e| panic!("config: {e}"))
}

pub const DETERMINISM_TRACE: &str = "gen:mac:2048:3";

/// Runs the CLI twice per technique × remapper and compares every output
/// file byte for byte.
pub fn criterion_determinism(bin: &Path) -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut combos = 0;
    for tech in ["BNMP", "LDB", "PEI"] {
        for remap in ["none", "TOM", "AIMM"] {
            let cfg = dir.path().join(format!("{tech}_{remap}.cfg"));
            std::fs::write(
                &cfg,
                format!(
                    "offload.technique = {tech}\nremap.remapper = {remap}\nsim.repeats = 2\nworkload.traces = {DETERMINISM_TRACE}\n"
                ),
            )
            .map_err(|e| e.to_string())?;
            let mut outs = Vec::new();
            for run in 0..2 {
                let out = dir.path().join(format!("{tech}_{remap}_{run}"));
                let st = Command::new(bin)
                    .args(["simulate", "--seed", "11", "--events", "--config"])
                    .arg(&cfg)
                    .arg("--out")
                    .arg(&out)
                    .output()
                    .map_err(|e| e.to_string())?;
                ensure!(st.status.success(), "{tech}+{remap}: {}", String::from_utf8_lossy(&st.stderr));
                outs.push(read_dir_bytes(&out)?);
            }
            ensure!(!outs[0].is_empty(), "{tech}+{remap}: no report files");
            let names: Vec<&String> = outs[0].keys().collect();
            ensure!(outs[0] == outs[1], "{tech}+{remap}: reports differ among {names:?}");
            combos += 1;
        }
    }
    Ok(format!("{combos} technique x remapper combos byte-identical across two runs"))
}

fn read_dir_bytes(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let e = e.map_err(|e| e.to_string())?;
        let bytes = std::fs::read(e.path()).map_err(|e| e.to_string())?;
        out.insert(e.file_name().to_string_lossy().into_owned(), bytes);
    }
    Ok(out)
}

/// Hotspot workload: every page allocated in cube 0, ops issued from all
/// four memory controllers.
pub const HOTSPOT_TRACE: &str = "gen:pr:16384:1";
pub const HOTSPOT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
pub const HOTSPOT_REPEATS: usize = 5;
pub const HOTSPOT_EPS_DECAY: u64 = 500;
pub const HOTSPOT_MIN_PASS: usize = 3;
pub const HOTSPOT_BUDGET_SECS: f64 = 600.0;

pub fn hotspot_config(remapper: &str, repeats: usize, seed: u64) -> SimConfig {
    parse_cfg(&format!(
        "offload.technique = BNMP\n\
         remap.remapper = {remapper}\n\
         paging.pin_cube = 0\n\
         sim.repeats = {repeats}\n\
         sim.seed = {seed}\n\
         agent.epsilon_decay_ticks = {HOTSPOT_EPS_DECAY}\n\
         workload.traces = {HOTSPOT_TRACE}\n"
    ))
}

#[derive(Clone, Debug)]
pub struct HotspotSeed {
    pub seed: u64,
    pub baseline_opc: f64,
    pub first_opc: f64,
    pub first_hops: f64,
    pub last_opc: f64,
    pub last_hops: f64,
}

pub struct Hotspot {
    pub seeds: Vec<HotspotSeed>,
    pub secs: f64,
}

/// Baseline and learning runs for every seed, computed once per process.
pub fn hotspot() -> &'static Result<Hotspot, String> {
    static CELL: OnceLock<Result<Hotspot, String>> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let seeds = std::thread::scope(|sc| {
            let handles: Vec<_> = HOTSPOT_SEEDS
                .iter()
                .map(|&seed| {
                    sc.spawn(move || -> Result<HotspotSeed, String> {
                        let base = run_simulation(&hotspot_config("none", 1, seed)).map_err(|e| e.to_string())?;
                        let aimm = run_simulation(&hotspot_config("AIMM", HOTSPOT_REPEATS, seed))
                            .map_err(|e| e.to_string())?;
                        let (first, last) = (&aimm.repeats[0], &aimm.repeats[HOTSPOT_REPEATS - 1]);
                        Ok(HotspotSeed {
                            seed,
                            baseline_opc: base.opc,
                            first_opc: first.opc,
                            first_hops: first.avg_hop_count,
                            last_opc: last.opc,
                            last_hops: last.avg_hop_count,
                        })
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("hotspot worker panicked")).collect::<Result<Vec<_>, _>>()
        })?;
        Ok(Hotspot { seeds, secs: start.elapsed().as_secs_f64() })
    })
}

pub fn criterion_convergence() -> Check {
    let h = hotspot().as_ref().map_err(Clone::clone)?;
    let pass: Vec<&HotspotSeed> =
        h.seeds.iter().filter(|s| s.last_opc > s.first_opc && s.last_hops < s.first_hops).collect();
    let detail: Vec<String> = h
        .seeds
        .iter()
        .map(|s| format!("s{} opc {:.3}->{:.3} hops {:.2}->{:.2}", s.seed, s.first_opc, s.last_opc, s.first_hops, s.last_hops))
        .collect();
    let line = format!("{}/5 seeds improve [{}] in {:.0} s", pass.len(), detail.join("; "), h.secs);
    ensure!(h.secs < HOTSPOT_BUDGET_SECS, "{line}: over the time budget");
    ensure!(pass.len() >= HOTSPOT_MIN_PASS, "{line}");
    Ok(line)
}

pub fn criterion_baseline_order() -> Check {
    let h = hotspot().as_ref().map_err(Clone::clone)?;
    let pass = h.seeds.iter().filter(|s| s.last_opc >= s.baseline_opc).count();
    let detail: Vec<String> =
        h.seeds.iter().map(|s| format!("s{} {:.3} vs {:.3}", s.seed, s.last_opc, s.baseline_opc)).collect();
    let line = format!("{pass}/5 seeds at or above BNMP [{}]", detail.join("; "));
    ensure!(pass >= HOTSPOT_MIN_PASS, "{line}");
    Ok(line)
}

// ---------------------------------------------------------------- energy

/// Per-unit prices in pJ, in report order.
pub const UNIT_PJ: [f64; 9] = [5.0, 12.0, 50.0, 122.0, 26.89, 106.2, 244.0, 2300.0, 106.0];

pub fn tallies_from(v: [u64; 9]) -> EnergyTallies {
    EnergyTallies {
        packet_bit_hops: v[0],
        memory_access_bits: v[1],
        page_info_accesses: v[2],
        nmp_buffer_accesses: v[3],
        migration_queue_accesses: v[4],
        mdma_accesses: v[5],
        weight_accesses: v[6],
        replay_accesses: v[7],
        state_accesses: v[8],
    }
}

pub fn criterion_energy() -> Check {
    let net = compute_energy(&EnergyTallies { packet_bit_hops: 512 * 3, ..Default::default() });
    ensure!(net.network == 7680.0 && net.total == 7680.0, "512 bits x 3 hops -> {} pJ", net.network);
    let mem = compute_energy(&EnergyTallies { memory_access_bits: 512, ..Default::default() });
    ensure!(mem.memory == 6144.0 && mem.total == 6144.0, "512-bit access -> {} pJ", mem.memory);
    let rep = compute_energy(&EnergyTallies { replay_accesses: 100, ..Default::default() });
    ensure!(rep.replay == 230_000.0, "100 replay accesses -> {} pJ", rep.replay);
    for k in 0..9 {
        let mut v = [0; 9];
        v[k] = 1;
        let e = compute_energy(&tallies_from(v));
        let got = e.components()[k].1;
        ensure!(got == UNIT_PJ[k] && e.total == UNIT_PJ[k], "unit tally {k}: {got} pJ, want {}", UNIT_PJ[k]);
    }
    let mut r = rng(0xe6);
    for _ in 0..1000 {
        let v: [u64; 9] = std::array::from_fn(|_| r.gen_range(0..1_000_000_000));
        let e = compute_energy(&tallies_from(v));
        let mut sum = 0.0f64;
        for (k, (_, c)) in e.components().iter().enumerate() {
            ensure!(*c == v[k] as f64 * UNIT_PJ[k], "component {k} mispriced");
            sum += c;
        }
        ensure!(e.total.to_bits() == sum.to_bits(), "total {} != component sum {sum}", e.total);
    }
    Ok("7680 pJ / 6144 pJ / 230 nJ exact; 9 unit prices; total bit-equal to component sum on 1000 tallies".into())
}

// ---------------------------------------------------------------- analytics

pub fn distinct_pages(t: &OpTrace) -> BTreeSet<VPage> {
    t.ops
        .iter()
        .flat_map(|op| {
            [Some(op.dest), Some(op.src1), op.src2]
                .into_iter()
                .flatten()
                .map(move |a| VPage { pid: op.pid, vpn: a / t.page_size })
        })
        .collect()
}

pub const ANALYTICS_SEEDS: u64 = 50;
pub const ANALYTICS_N: u64 = 512;

pub fn criterion_analytics() -> Check {
    let mut traces = 0;
    for kind in KernelKind::ALL {
        for seed in 0..ANALYTICS_SEEDS {
            let t = generate_kernel_trace(kind, &SizeParams::new(ANALYTICS_N), seed).map_err(|e| e.to_string())?;
            let pages = distinct_pages(&t).len() as u64;
            let bins: u64 = classify_page_accesses(&t, &DEFAULT_CLASS_EDGES).map_err(|e| e.to_string())?.iter().sum();
            let aff = affinity_analysis(&t, 10).map_err(|e| e.to_string())?;
            let quads: u64 = aff.quadrant_counts.iter().sum();
            ensure!(
                bins == pages && quads == pages,
                "{} seed {seed}: {pages} pages, bins sum {bins}, quadrants sum {quads}",
                kind.name()
            );
            traces += 1;
        }
    }
    Ok(format!("{traces} traces ({} kernels x {ANALYTICS_SEEDS} seeds): bins and quadrants sum to page count", KernelKind::ALL.len()))
}

/// Radix and edge weights by direct pairwise scan of each op's pages.
pub fn oracle_affinity(t: &OpTrace) -> (BTreeMap<VPage, u64>, BTreeMap<(VPage, VPage), u64>) {
    let mut weights: BTreeMap<(VPage, VPage), u64> = BTreeMap::new();
    let mut radix: BTreeMap<VPage, u64> = distinct_pages(t).into_iter().map(|p| (p, 0)).collect();
    for op in &t.ops {
        let mut ps: Vec<VPage> = [Some(op.dest), Some(op.src1), op.src2]
            .into_iter()
            .flatten()
            .map(|a| VPage { pid: op.pid, vpn: a / t.page_size })
            .collect();
        ps.sort();
        ps.dedup();
        for i in 0..ps.len() {
            for j in i + 1..ps.len() {
                *weights.entry((ps[i], ps[j])).or_default() += 1;
            }
        }
    }
    for (a, b) in weights.keys() {
        *radix.get_mut(a).expect("page") += 1;
        *radix.get_mut(b).expect("page") += 1;
    }
    (radix, weights)
}

/// Mean distinct pages per epoch by a direct sweep over epoch windows.
pub fn oracle_active_pages(t: &OpTrace, epoch: u64, issue_rate: f64) -> f64 {
    let cycle = |seq: u64| (seq as f64 / issue_rate).floor() as u64;
    let first = t.ops.iter().map(|o| cycle(o.seq_id) / epoch).min();
    let last = t.ops.iter().map(|o| cycle(o.seq_id) / epoch).max();
    let (Some(first), Some(last)) = (first, last) else { return 0.0 };
    let mut total = 0usize;
    for e in first..=last {
        let mut set = BTreeSet::new();
        for op in t.ops.iter().filter(|o| cycle(o.seq_id) / epoch == e) {
            for a in [Some(op.dest), Some(op.src1), op.src2].into_iter().flatten() {
                set.insert((op.pid, a / t.page_size));
            }
        }
        total += set.len();
    }
    total as f64 / (last - first + 1) as f64
}

/// Least-squares slope of log(count) on log(rank) for the descending
/// page-count sequence.
pub fn zipf_exponent(counts: &[u64]) -> f64 {
    let mut c: Vec<u64> = counts.iter().copied().filter(|c| *c > 0).collect();
    c.sort_unstable_by(|a, b| b.cmp(a));
    let pts: Vec<(f64, f64)> = c.iter().enumerate().map(|(i, v)| (((i + 1) as f64).ln(), (*v as f64).ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    -sxy / sxx
}
