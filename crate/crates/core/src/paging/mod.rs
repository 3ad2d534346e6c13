//! Virtual-to-physical paging: per-cube frame pools, default and HOARD-style
//! allocation, and the page-migration manager.

mod migration;

pub use migration::{
    DropReason, MigrationEvent, MigrationMode, MigrationPacket, MigrationRecord, MigrationState,
    MigrationStats, MigrationSystem, RequestOutcome,
};

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::memnet::{CubeId, DramGeometry};
use crate::trace::{Permission, Process, VPage};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PagingError {
    #[error("out of memory: no free frame in any cube")]
    OutOfMemory,
    #[error("segmentation fault: pid {pid} address {vaddr:#x}")]
    Segfault { pid: u32, vaddr: u64 },
    #[error("page {0} is not mapped")]
    InvalidPage(VPage),
    #[error("invalid paging configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AllocPolicy {
    /// Per-process round-robin striping across cubes.
    #[default]
    Default,
    /// Per-process chunks of contiguous frames, each chunk inside one cube.
    Hoard,
}

impl FromStr for AllocPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "default" => Ok(AllocPolicy::Default),
            "hoard" => Ok(AllocPolicy::Hoard),
            _ => Err(format!("unknown allocation policy `{s}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PageEntry {
    pub frame: u64,
    pub perm: Permission,
    /// Set while a blocking migration owns the page.
    pub locked: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Translation {
    Ready { frame: u64, paddr: u64 },
    /// The page is locked by a blocking migration; retry after it completes.
    Deferred,
}

#[derive(Clone, Debug, Default)]
struct CubePool {
    /// Next never-used frame offset inside the cube.
    fresh: u64,
    recycled: Vec<u64>,
}

#[derive(Clone, Debug)]
struct ProcState {
    extent: u64,
    regions: Process,
    rr_cursor: usize,
    /// HOARD chunk: next frame and frames left.
    chunk: Option<(u64, u64)>,
}

/// Page table plus physical frame pools. Frames are global frame numbers;
/// a frame's cube is `frame / frames_per_cube`.
#[derive(Clone, Debug)]
pub struct PageTable {
    geom: DramGeometry,
    policy: AllocPolicy,
    chunk_frames: u64,
    pin_cube: Option<CubeId>,
    entries: BTreeMap<VPage, PageEntry>,
    owners: BTreeMap<u64, VPage>,
    pools: Vec<CubePool>,
    procs: BTreeMap<u32, ProcState>,
    refs: BTreeMap<u64, u32>,
    reserved: u64,
    retiring: Vec<u64>,
}

impl PageTable {
    pub const HOARD_CHUNK_FRAMES: u64 = 64;

    pub fn new(geom: DramGeometry, policy: AllocPolicy) -> Self {
        Self {
            geom,
            policy,
            chunk_frames: Self::HOARD_CHUNK_FRAMES,
            pin_cube: None,
            entries: BTreeMap::new(),
            owners: BTreeMap::new(),
            pools: vec![CubePool::default(); geom.cubes],
            procs: BTreeMap::new(),
            refs: BTreeMap::new(),
            reserved: 0,
            retiring: Vec::new(),
        }
    }

    /// Every first-touch allocation prefers `cube` (hotspot placement).
    pub fn with_pin_cube(mut self, cube: Option<CubeId>) -> Self {
        self.pin_cube = cube;
        self
    }

    pub fn with_chunk_frames(mut self, frames: u64) -> Self {
        self.chunk_frames = frames.max(1);
        self
    }

    pub fn geometry(&self) -> &DramGeometry {
        &self.geom
    }

    pub fn register_process(&mut self, p: &Process) {
        self.procs.insert(
            p.id,
            ProcState { extent: p.extent, regions: p.clone(), rr_cursor: 0, chunk: None },
        );
    }

    pub fn entry(&self, page: VPage) -> Option<&PageEntry> {
        self.entries.get(&page)
    }

    pub fn mapped_pages(&self) -> impl Iterator<Item = (&VPage, &PageEntry)> {
        self.entries.iter()
    }

    pub fn mapped_count(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn owner_of(&self, frame: u64) -> Option<VPage> {
        self.owners.get(&frame).copied()
    }

    pub fn cube_of_frame(&self, frame: u64) -> CubeId {
        self.geom.cube_of_frame(frame)
    }

    /// Identity-mapping cube of a mapped page.
    pub fn cube_of(&self, page: VPage) -> Option<CubeId> {
        self.entries.get(&page).map(|e| self.cube_of_frame(e.frame))
    }

    fn cube_free(&self, cube: CubeId) -> u64 {
        let p = &self.pools[cube];
        self.geom.frames_per_cube() - p.fresh + p.recycled.len() as u64
    }

    /// Frames not mapped, not reserved for an in-flight migration and not
    /// awaiting retirement. HOARD chunk remainders count as free.
    pub fn free_frames(&self) -> u64 {
        let pools: u64 = (0..self.geom.cubes).map(|c| self.cube_free(c)).sum();
        let chunks: u64 = self.procs.values().filter_map(|p| p.chunk.map(|c| c.1)).sum();
        pools + chunks
    }

    /// Frames claimed for migrations whose page table update is pending.
    pub fn reserved_frames(&self) -> u64 {
        self.reserved
    }

    /// Old frames of completed migrations still draining accesses.
    pub fn retiring_frames(&self) -> u64 {
        self.retiring.len() as u64
    }

    fn take_from_cube(&mut self, cube: CubeId) -> Option<u64> {
        let fpc = self.geom.frames_per_cube();
        let p = &mut self.pools[cube];
        if let Some(f) = p.recycled.pop() {
            return Some(f);
        }
        (p.fresh < fpc).then(|| {
            p.fresh += 1;
            cube as u64 * fpc + p.fresh - 1
        })
    }

    /// Claims `n` contiguous fresh frames in `cube`.
    fn take_chunk(&mut self, cube: CubeId, n: u64) -> Option<u64> {
        let fpc = self.geom.frames_per_cube();
        let p = &mut self.pools[cube];
        (fpc - p.fresh >= n).then(|| {
            p.fresh += n;
            cube as u64 * fpc + p.fresh - n
        })
    }

    /// Takes a free frame, honouring `preferred` when that cube has one.
    pub fn allocate_frame(
        &mut self,
        pid: u32,
        preferred: Option<CubeId>,
    ) -> Result<u64, PagingError> {
        let cubes = self.geom.cubes;
        if let Some(c) = preferred.filter(|&c| c < cubes) {
            if let Some(f) = self.take_from_cube(c) {
                return Ok(f);
            }
        }
        match self.policy {
            AllocPolicy::Default => {
                let start = self.procs.get(&pid).map_or(0, |p| p.rr_cursor);
                for k in 0..cubes {
                    let c = (start + k) % cubes;
                    if let Some(f) = self.take_from_cube(c) {
                        if let Some(p) = self.procs.get_mut(&pid) {
                            p.rr_cursor = (c + 1) % cubes;
                        }
                        return Ok(f);
                    }
                }
                Err(PagingError::OutOfMemory)
            }
            AllocPolicy::Hoard => {
                let home = pid as usize % cubes;
                if !self.procs.contains_key(&pid) {
                    return (0..cubes)
                        .find_map(|k| self.take_from_cube((home + k) % cubes))
                        .ok_or(PagingError::OutOfMemory);
                }
                if let Some(p) = self.procs.get_mut(&pid) {
                    if let Some((next, left)) = p.chunk {
                        p.chunk = (left > 1).then_some((next + 1, left - 1));
                        return Ok(next);
                    }
                }
                let n = self.chunk_frames;
                let claimed = (0..cubes).find_map(|k| self.take_chunk((home + k) % cubes, n));
                match claimed {
                    Some(base) => {
                        if let Some(p) = self.procs.get_mut(&pid) {
                            p.chunk = (n > 1).then_some((base + 1, n - 1));
                        }
                        Ok(base)
                    }
                    None => (0..cubes)
                        .find_map(|k| self.take_from_cube((home + k) % cubes))
                        .ok_or(PagingError::OutOfMemory),
                }
            }
        }
    }

    fn check_extent(&self, pid: u32, vaddr: u64) -> Result<&ProcState, PagingError> {
        match self.procs.get(&pid) {
            Some(p) if vaddr < p.extent => Ok(p),
            _ => Err(PagingError::Segfault { pid, vaddr }),
        }
    }

    /// Maps `page` on first touch. Returns the entry either way.
    pub fn touch(&mut self, page: VPage) -> Result<PageEntry, PagingError> {
        if let Some(e) = self.entries.get(&page) {
            return Ok(*e);
        }
        let vaddr = page.vpn * self.geom.page_size;
        let perm = self.check_extent(page.pid, vaddr)?.regions.permission_of(vaddr);
        let frame = self.allocate_frame(page.pid, self.pin_cube)?;
        let e = PageEntry { frame, perm, locked: false };
        self.entries.insert(page, e);
        self.owners.insert(frame, page);
        Ok(e)
    }

    pub fn translate(&mut self, vaddr: u64, pid: u32) -> Result<Translation, PagingError> {
        self.check_extent(pid, vaddr)?;
        let page = VPage { pid, vpn: vaddr / self.geom.page_size };
        let e = self.touch(page)?;
        if e.locked {
            return Ok(Translation::Deferred);
        }
        let paddr = e.frame * self.geom.page_size + vaddr % self.geom.page_size;
        Ok(Translation::Ready { frame: e.frame, paddr })
    }

    /// Notes an access in flight against `frame` (translated, not yet
    /// performed).
    pub fn acquire(&mut self, frame: u64) {
        *self.refs.entry(frame).or_default() += 1;
    }

    pub fn release(&mut self, frame: u64) {
        match self.refs.get_mut(&frame) {
            Some(n) if *n > 1 => *n -= 1,
            Some(_) => {
                self.refs.remove(&frame);
            }
            None => debug_assert!(false, "release of idle frame {frame}"),
        }
    }

    pub fn outstanding(&self, frame: u64) -> u32 {
        self.refs.get(&frame).copied().unwrap_or(0)
    }

    fn set_locked(&mut self, page: VPage, locked: bool) {
        if let Some(e) = self.entries.get_mut(&page) {
            e.locked = locked;
        }
    }

    fn reserve_in_cube(&mut self, cube: CubeId) -> Option<u64> {
        let f = self.take_from_cube(cube)?;
        self.reserved += 1;
        Some(f)
    }

    /// Points `page` at `new_frame` and queues the old frame for retirement.
    fn remap(&mut self, page: VPage, new_frame: u64) -> Result<u64, PagingError> {
        let e = self.entries.get_mut(&page).ok_or(PagingError::InvalidPage(page))?;
        let old = std::mem::replace(&mut e.frame, new_frame);
        e.locked = false;
        self.owners.remove(&old);
        self.owners.insert(new_frame, page);
        self.reserved -= 1;
        self.retiring.push(old);
        Ok(old)
    }

    /// Returns drained retiring frames to their pools.
    fn collect_retired(&mut self) -> usize {
        let mut freed = 0;
        let mut keep = Vec::with_capacity(self.retiring.len());
        for f in std::mem::take(&mut self.retiring) {
            if self.outstanding(f) == 0 {
                let cube = self.cube_of_frame(f);
                self.pools[cube].recycled.push(f);
                freed += 1;
            } else {
                keep.push(f);
            }
        }
        self.retiring = keep;
        freed
    }

    /// free + mapped + reserved + retiring = total.
    pub fn frames_conserved(&self) -> bool {
        self.free_frames() + self.mapped_count() + self.reserved + self.retiring_frames()
            == self.geom.total_frames()
    }

    /// No two pages share a frame.
    pub fn is_injective(&self) -> bool {
        self.owners.len() == self.entries.len()
            && self.entries.iter().all(|(p, e)| self.owners.get(&e.frame) == Some(p))
    }

    /// Pages grouped by HOARD chunk index; used to check chunk exclusivity.
    pub fn chunk_owners(&self) -> BTreeMap<u64, Vec<u32>> {
        let mut out: BTreeMap<u64, Vec<u32>> = BTreeMap::new();
        for (p, e) in &self.entries {
            let owners = out.entry(e.frame / self.chunk_frames).or_default();
            if !owners.contains(&p.pid) {
                owners.push(p.pid);
            }
        }
        out
    }
}
