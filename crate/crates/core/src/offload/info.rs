use std::collections::{BTreeMap, VecDeque};

use crate::memnet::CubeId;
use crate::trace::VPage;

/// Entries kept per page history.
pub const HISTORY_LEN: usize = 4;

/// Fixed-length history; the oldest value falls out first.
#[derive(Clone, Debug, PartialEq)]
pub struct History {
    cap: usize,
    buf: VecDeque<f64>,
}

impl History {
    pub fn new(cap: usize) -> Self {
        Self { cap, buf: VecDeque::with_capacity(cap) }
    }

    pub fn push(&mut self, v: f64) {
        if self.cap == 0 {
            return;
        }
        if self.buf.len() == self.cap {
            self.buf.pop_front();
        }
        self.buf.push_back(v);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn latest(&self) -> Option<f64> {
        self.buf.back().copied()
    }

    /// Newest first, zero-filled to the full length.
    pub fn padded(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.buf.iter().rev().copied().collect();
        out.resize(self.cap, 0.0);
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PageInfoEntry {
    pub vpage: VPage,
    pub access_count: u64,
    pub migration_count: u64,
    pub hops: History,
    pub latencies: History,
    pub migration_latencies: History,
    pub actions: History,
    /// Compute cube of the most recent op that touched the page.
    pub last_compute_cube: Option<CubeId>,
    /// Host cube of the first source of the most recent op.
    pub last_src1_cube: Option<CubeId>,
    inserted: u64,
}

impl PageInfoEntry {
    fn new(vpage: VPage, h: usize, inserted: u64) -> Self {
        Self {
            vpage,
            access_count: 0,
            migration_count: 0,
            hops: History::new(h),
            latencies: History::new(h),
            migration_latencies: History::new(h),
            actions: History::new(h),
            last_compute_cube: None,
            last_src1_cube: None,
            inserted,
        }
    }

    pub fn migrations_per_access(&self) -> f64 {
        if self.access_count == 0 {
            0.0
        } else {
            self.migration_count as f64 / self.access_count as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PageEvent {
    Access,
    Hops(u32),
    Latency(u64),
    /// A completed migration and its latency.
    Migration(u64),
    Action(u8),
    Placement { compute: CubeId, src1: CubeId },
}

/// Fully associative per-MC cache of page records with least-frequently-used
/// replacement (ties go to the oldest entry). Victims are dropped.
#[derive(Clone, Debug)]
pub struct PageInfoCache {
    capacity: usize,
    history: usize,
    entries: BTreeMap<VPage, PageInfoEntry>,
    clock: u64,
    pub accesses: u64,
    pub evictions: u64,
}

impl PageInfoCache {
    pub fn new(capacity: usize) -> Self {
        Self::with_history(capacity, HISTORY_LEN)
    }

    pub fn with_history(capacity: usize, history: usize) -> Self {
        Self { capacity, history, entries: BTreeMap::new(), clock: 0, accesses: 0, evictions: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, page: VPage) -> Option<&PageInfoEntry> {
        self.entries.get(&page)
    }

    pub fn entries(&self) -> impl Iterator<Item = &PageInfoEntry> {
        self.entries.values()
    }

    fn victim(&self) -> Option<VPage> {
        self.entries.values().min_by_key(|e| (e.access_count, e.inserted)).map(|e| e.vpage)
    }

    /// Finds or allocates the entry for `page` and applies `ev`.
    pub fn touch(&mut self, page: VPage, ev: PageEvent) {
        if self.capacity == 0 {
            return;
        }
        self.accesses += 1;
        if !self.entries.contains_key(&page) {
            if self.entries.len() >= self.capacity {
                let v = self.victim().expect("full cache has a victim");
                self.entries.remove(&v);
                self.evictions += 1;
            }
            self.clock += 1;
            self.entries.insert(page, PageInfoEntry::new(page, self.history, self.clock));
        }
        let e = self.entries.get_mut(&page).expect("just inserted");
        match ev {
            PageEvent::Access => e.access_count += 1,
            PageEvent::Hops(h) => e.hops.push(f64::from(h)),
            PageEvent::Latency(l) => e.latencies.push(l as f64),
            PageEvent::Migration(l) => {
                e.migration_count += 1;
                e.migration_latencies.push(l as f64);
            }
            PageEvent::Action(a) => e.actions.push(f64::from(a)),
            PageEvent::Placement { compute, src1 } => {
                e.last_compute_cube = Some(compute);
                e.last_src1_cube = Some(src1);
            }
        }
    }

    /// Applies `ev` only if the page is already resident.
    pub fn update_if_present(&mut self, page: VPage, ev: PageEvent) {
        if self.entries.contains_key(&page) {
            self.touch(page, ev);
        }
    }

    /// Most-accessed resident entry; ties go to the lowest page.
    pub fn hottest(&self) -> Option<&PageInfoEntry> {
        self.entries.values().max_by(|a, b| {
            a.access_count.cmp(&b.access_count).then_with(|| b.vpage.cmp(&a.vpage))
        })
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// Round-robin over memory controllers when the agent asks for a page.
#[derive(Clone, Debug, Default)]
pub struct CandidateSelector {
    cursor: usize,
}

impl CandidateSelector {
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Serves the hottest page of the first nonempty cache at or after the
    /// cursor; the cursor then moves past the MC that served.
    pub fn select(&mut self, caches: &[PageInfoCache]) -> Option<(usize, PageInfoEntry)> {
        let n = caches.len();
        for k in 0..n {
            let mc = (self.cursor + k) % n;
            if let Some(e) = caches[mc].hottest() {
                self.cursor = (mc + 1) % n;
                return Some((mc, e.clone()));
            }
        }
        None
    }
}

/// Running averages of per-cube NMP-table occupancy and row-buffer hit
/// rate, and per-MC queue occupancy, all normalized to [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct SystemCounters {
    pub alpha: f64,
    pub nmp_occupancy: Vec<f64>,
    pub row_hit_rate: Vec<f64>,
    pub mc_queue: Vec<f64>,
}

impl SystemCounters {
    pub const DECAY: f64 = 0.125;

    pub fn new(cubes: usize, mcs: usize) -> Self {
        Self {
            alpha: Self::DECAY,
            nmp_occupancy: vec![0.0; cubes],
            row_hit_rate: vec![0.0; cubes],
            mc_queue: vec![0.0; mcs],
        }
    }

    fn blend(avg: &mut [f64], sample: &[f64], alpha: f64) {
        for (a, s) in avg.iter_mut().zip(sample) {
            *a += alpha * (s.clamp(0.0, 1.0) - *a);
        }
    }

    /// Folds one sample in. A `None` hit rate (no accesses in the window)
    /// leaves that cube's average alone.
    pub fn update(&mut self, nmp_occupancy: &[f64], row_hit: &[Option<f64>], mc_queue: &[f64]) {
        Self::blend(&mut self.nmp_occupancy, nmp_occupancy, self.alpha);
        for (a, s) in self.row_hit_rate.iter_mut().zip(row_hit) {
            if let Some(s) = s {
                *a += self.alpha * (s.clamp(0.0, 1.0) - *a);
            }
        }
        Self::blend(&mut self.mc_queue, mc_queue, self.alpha);
    }
}
