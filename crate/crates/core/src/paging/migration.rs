use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use super::{PageTable, PagingError};
use crate::memnet::{CubeId, PacketKind};
use crate::trace::{Permission, VPage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MigrationMode {
    /// Read-write pages: locked for the whole transfer.
    Blocking,
    /// Read-only pages: the old frame stays readable until the remap.
    NonBlocking,
}

impl MigrationMode {
    pub fn for_permission(p: Permission) -> Self {
        match p {
            Permission::ReadWrite => MigrationMode::Blocking,
            Permission::ReadOnly => MigrationMode::NonBlocking,
        }
    }
}

impl fmt::Display for MigrationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MigrationMode::Blocking => "blocking",
            MigrationMode::NonBlocking => "non_blocking",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MigrationState {
    Queued,
    /// Granted; a blocking page waits here for old-frame accesses to drain.
    Draining,
    DmaActive,
    AwaitingAck,
    /// Acked; the OS interrupt that rewrites the page table is pending.
    Updating,
    Complete,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MigrationRecord {
    pub id: u64,
    pub vpage: VPage,
    pub src_cube: CubeId,
    pub dst_cube: CubeId,
    pub mode: MigrationMode,
    pub state: MigrationState,
    pub enqueue_cycle: u64,
    /// DMA grant cycle.
    pub start_cycle: u64,
    pub ack_cycle: Option<u64>,
    pub end_cycle: u64,
    pub aborted: bool,
    pub old_frame: u64,
    pub new_frame: Option<u64>,
    packets: u32,
    sent: u32,
    delivered: u32,
}

impl MigrationRecord {
    /// ack_cycle − start_cycle, once acked.
    pub fn latency(&self) -> Option<u64> {
        self.ack_cycle.map(|a| a - self.start_cycle)
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.vpage, self.src_cube, self.dst_cube, self.mode, self.start_cycle, self.end_cycle, self.aborted
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropReason {
    QueueFull,
    InFlight,
    NoOp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RequestOutcome {
    Queued(u64),
    Dropped(DropReason),
}

/// A packet the migration engine wants injected.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MigrationPacket {
    pub migration: u64,
    pub kind: PacketKind,
    pub src_cube: CubeId,
    pub dst_cube: CubeId,
    pub bits: u32,
    /// Addressed to the migration manager on the memory-controller link.
    pub to_host: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MigrationEvent {
    Completed { id: u64, vpage: VPage, latency: u64 },
    Aborted { id: u64, vpage: VPage },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MigrationStats {
    pub requested: u64,
    pub queued: u64,
    pub dropped_full: u64,
    pub dropped_in_flight: u64,
    pub dropped_noop: u64,
    pub aborted: u64,
    pub completed: u64,
    pub latency_sum: u64,
    pub data_packets: u64,
    pub ack_packets: u64,
    pub queue_accesses: u64,
    pub dma_accesses: u64,
}

/// Migration queue, DMA engine and manager. The page table is passed in on
/// every call so the owner keeps a single mutable borrow at a time.
#[derive(Clone, Debug)]
pub struct MigrationSystem {
    capacity: usize,
    channels: usize,
    os_interrupt: u64,
    payload_bits: u32,
    manager_cube: CubeId,
    queue: VecDeque<u64>,
    records: BTreeMap<u64, MigrationRecord>,
    active: Vec<u64>,
    busy: BTreeSet<VPage>,
    next_id: u64,
    pub stats: MigrationStats,
    finished: Option<Vec<MigrationRecord>>,
}

impl MigrationSystem {
    pub const QUEUE_ENTRIES: usize = 128;
    pub const OS_INTERRUPT_CYCLES: u64 = 50;

    pub fn new(capacity: usize, channels: usize, payload_bits: u32, manager_cube: CubeId) -> Self {
        Self {
            capacity,
            channels: channels.max(1),
            os_interrupt: Self::OS_INTERRUPT_CYCLES,
            payload_bits,
            manager_cube,
            queue: VecDeque::new(),
            records: BTreeMap::new(),
            active: Vec::new(),
            busy: BTreeSet::new(),
            next_id: 0,
            stats: MigrationStats::default(),
            finished: None,
        }
    }

    pub fn with_os_interrupt(mut self, cycles: u64) -> Self {
        self.os_interrupt = cycles;
        self
    }

    /// Keeps finished records for the migration event log.
    pub fn enable_log(&mut self) {
        self.finished = Some(Vec::new());
    }

    pub fn log(&self) -> &[MigrationRecord] {
        self.finished.as_deref().unwrap_or(&[])
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn in_flight(&self, page: VPage) -> bool {
        self.busy.contains(&page)
    }

    pub fn is_idle(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, id: u64) -> Option<&MigrationRecord> {
        self.records.get(&id)
    }

    /// Migrations granted to the DMA and not yet complete, in grant order.
    pub fn active(&self) -> impl Iterator<Item = &MigrationRecord> {
        self.active.iter().map(|id| &self.records[id])
    }

    fn packets_per_page(&self, pt: &PageTable) -> u32 {
        (pt.geometry().page_size * 8).div_ceil(u64::from(self.payload_bits)) as u32
    }

    pub fn request(
        &mut self,
        pt: &PageTable,
        vpage: VPage,
        dst_cube: CubeId,
        cycle: u64,
    ) -> Result<RequestOutcome, PagingError> {
        let entry = *pt.entry(vpage).ok_or(PagingError::InvalidPage(vpage))?;
        if dst_cube >= pt.geometry().cubes {
            return Err(PagingError::Config(format!("cube {dst_cube} outside the mesh")));
        }
        self.stats.requested += 1;
        let src_cube = pt.cube_of_frame(entry.frame);
        let reason = if dst_cube == src_cube {
            Some(DropReason::NoOp)
        } else if self.busy.contains(&vpage) {
            Some(DropReason::InFlight)
        } else if self.queue.len() >= self.capacity {
            Some(DropReason::QueueFull)
        } else {
            None
        };
        if let Some(r) = reason {
            match r {
                DropReason::NoOp => self.stats.dropped_noop += 1,
                DropReason::InFlight => self.stats.dropped_in_flight += 1,
                DropReason::QueueFull => self.stats.dropped_full += 1,
            }
            return Ok(RequestOutcome::Dropped(r));
        }
        let id = self.next_id;
        self.next_id += 1;
        self.records.insert(
            id,
            MigrationRecord {
                id,
                vpage,
                src_cube,
                dst_cube,
                mode: MigrationMode::for_permission(entry.perm),
                state: MigrationState::Queued,
                enqueue_cycle: cycle,
                start_cycle: cycle,
                ack_cycle: None,
                end_cycle: cycle,
                aborted: false,
                old_frame: entry.frame,
                new_frame: None,
                packets: self.packets_per_page(pt),
                sent: 0,
                delivered: 0,
            },
        );
        self.queue.push_back(id);
        self.busy.insert(vpage);
        self.stats.queued += 1;
        self.stats.queue_accesses += 1;
        Ok(RequestOutcome::Queued(id))
    }

    fn finish(&mut self, id: u64, cycle: u64) -> MigrationRecord {
        self.active.retain(|&a| a != id);
        let mut rec = self.records.remove(&id).expect("finishing unknown migration");
        rec.end_cycle = cycle;
        self.busy.remove(&rec.vpage);
        if let Some(log) = &mut self.finished {
            log.push(rec.clone());
        }
        rec
    }

    /// Advances the DMA engine by one cycle.
    pub fn step(
        &mut self,
        pt: &mut PageTable,
        cycle: u64,
    ) -> Result<(Vec<MigrationPacket>, Vec<MigrationEvent>), PagingError> {
        let mut packets = Vec::new();
        let mut events = Vec::new();
        pt.collect_retired();

        for id in self.active.clone() {
            let rec = &self.records[&id];
            if rec.state == MigrationState::Updating
                && cycle >= rec.ack_cycle.unwrap_or(cycle) + self.os_interrupt
            {
                let (vpage, new) = (rec.vpage, rec.new_frame.expect("acked without a frame"));
                pt.remap(vpage, new)?;
                self.records.get_mut(&id).expect("active").state = MigrationState::Complete;
                let rec = self.finish(id, cycle);
                let latency = rec.latency().unwrap_or(0);
                self.stats.completed += 1;
                self.stats.latency_sum += latency;
                events.push(MigrationEvent::Completed { id, vpage, latency });
            }
        }
        pt.collect_retired();

        while self.active.len() < self.channels {
            let Some(id) = self.queue.pop_front() else { break };
            self.stats.queue_accesses += 1;
            let rec = self.records.get_mut(&id).expect("queued migration has a record");
            rec.state = MigrationState::Draining;
            rec.start_cycle = cycle;
            if rec.mode == MigrationMode::Blocking {
                let page = rec.vpage;
                pt.set_locked(page, true);
            }
            self.active.push(id);
        }

        for id in self.active.clone() {
            let rec = self.records.get_mut(&id).expect("active migration has a record");
            match rec.state {
                MigrationState::Draining => {
                    if rec.mode == MigrationMode::Blocking && pt.outstanding(rec.old_frame) > 0 {
                        continue;
                    }
                    match pt.reserve_in_cube(rec.dst_cube) {
                        Some(f) => {
                            rec.new_frame = Some(f);
                            rec.state = MigrationState::DmaActive;
                        }
                        None => {
                            let page = rec.vpage;
                            pt.set_locked(page, false);
                            rec.aborted = true;
                            self.finish(id, cycle);
                            self.stats.aborted += 1;
                            events.push(MigrationEvent::Aborted { id, vpage: page });
                            continue;
                        }
                    }
                    emit_data(rec, self.payload_bits, &mut packets, &mut self.stats);
                }
                MigrationState::DmaActive => {
                    emit_data(rec, self.payload_bits, &mut packets, &mut self.stats);
                }
                _ => {}
            }
        }
        Ok((packets, events))
    }

    /// A data packet reached the destination cube. Returns the
    /// acknowledgement to inject once the whole page has arrived.
    pub fn on_data_delivered(&mut self, id: u64) -> Option<MigrationPacket> {
        let rec = self.records.get_mut(&id)?;
        rec.delivered += 1;
        self.stats.dma_accesses += 1;
        if rec.delivered < rec.packets {
            return None;
        }
        rec.state = MigrationState::AwaitingAck;
        self.stats.ack_packets += 1;
        Some(MigrationPacket {
            migration: id,
            kind: PacketKind::MigrationAck,
            src_cube: rec.dst_cube,
            dst_cube: self.manager_cube,
            bits: 128,
            to_host: true,
        })
    }

    pub fn on_ack(&mut self, id: u64, cycle: u64) {
        if let Some(rec) = self.records.get_mut(&id) {
            rec.ack_cycle = Some(cycle);
            rec.state = MigrationState::Updating;
        }
    }
}

/// One data packet per cycle from the old frame's cube.
fn emit_data(
    rec: &mut MigrationRecord,
    bits: u32,
    out: &mut Vec<MigrationPacket>,
    stats: &mut MigrationStats,
) {
    if rec.sent >= rec.packets {
        return;
    }
    rec.sent += 1;
    stats.data_packets += 1;
    stats.dma_accesses += 1;
    out.push(MigrationPacket {
        migration: rec.id,
        kind: PacketKind::MigrationData,
        src_cube: rec.src_cube,
        dst_cube: rec.dst_cube,
        bits,
        to_host: false,
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memnet::DramGeometry;
    use crate::paging::{AllocPolicy, Translation};
    use crate::trace::{Process, Region};

    fn setup(perm: Permission) -> (PageTable, MigrationSystem, VPage) {
        let mut pt = PageTable::new(DramGeometry::new(4), AllocPolicy::Default);
        let mut p = Process::new(0, 1 << 20);
        if perm == Permission::ReadOnly {
            p.regions.push(Region { start: 0, end: 1 << 20, perm });
        }
        pt.register_process(&p);
        let page = VPage { pid: 0, vpn: 0 };
        pt.touch(page).unwrap();
        (pt, MigrationSystem::new(128, 1, 512, 0), page)
    }

    /// Drives one migration to completion, delivering every packet on the
    /// cycle it is emitted. Returns the completion cycle.
    fn run(pt: &mut PageTable, m: &mut MigrationSystem, mut cycle: u64) -> u64 {
        loop {
            let (pkts, events) = m.step(pt, cycle).unwrap();
            for p in pkts {
                if let Some(ack) = m.on_data_delivered(p.migration) {
                    m.on_ack(ack.migration, cycle);
                }
            }
            if !events.is_empty() {
                return cycle;
            }
            cycle += 1;
        }
    }

    #[test]
    fn page_moves_as_sixty_four_packets() {
        let (mut pt, mut m, page) = setup(Permission::ReadWrite);
        m.request(&pt, page, 3, 0).unwrap();
        run(&mut pt, &mut m, 0);
        assert_eq!(m.stats.data_packets, 64);
        assert_eq!(pt.cube_of(page), Some(3));
        assert!(pt.frames_conserved());
    }

    #[test]
    fn mode_follows_permission() {
        let (pt, mut m, page) = setup(Permission::ReadWrite);
        let RequestOutcome::Queued(id) = m.request(&pt, page, 1, 0).unwrap() else { panic!() };
        assert_eq!(m.record(id).unwrap().mode, MigrationMode::Blocking);
        let (pt, mut m, page) = setup(Permission::ReadOnly);
        let RequestOutcome::Queued(id) = m.request(&pt, page, 1, 0).unwrap() else { panic!() };
        assert_eq!(m.record(id).unwrap().mode, MigrationMode::NonBlocking);
    }

    #[test]
    fn drops_noop_duplicate_and_overflow() {
        let mut pt = PageTable::new(DramGeometry::new(4), AllocPolicy::Default);
        pt.register_process(&Process::new(0, 1 << 30));
        let pages: Vec<VPage> = (0..130).map(|vpn| VPage { pid: 0, vpn }).collect();
        for p in &pages {
            pt.touch(*p).unwrap();
        }
        let mut m = MigrationSystem::new(128, 1, 512, 0);
        let home = pt.cube_of(pages[0]).unwrap();
        assert_eq!(m.request(&pt, pages[0], home, 0).unwrap(), RequestOutcome::Dropped(DropReason::NoOp));
        let mut queued = 0;
        for p in &pages[..129] {
            let dst = (pt.cube_of(*p).unwrap() + 1) % 4;
            if matches!(m.request(&pt, *p, dst, 0).unwrap(), RequestOutcome::Queued(_)) {
                queued += 1;
            }
        }
        assert_eq!(queued, 128);
        assert_eq!(m.stats.dropped_full, 1);
        let dst = (pt.cube_of(pages[0]).unwrap() + 1) % 4;
        assert_eq!(m.request(&pt, pages[0], dst, 0).unwrap(), RequestOutcome::Dropped(DropReason::InFlight));
    }

    #[test]
    fn unmapped_page_is_invalid() {
        let (pt, mut m, _) = setup(Permission::ReadWrite);
        let ghost = VPage { pid: 0, vpn: 99 };
        assert_eq!(m.request(&pt, ghost, 1, 0), Err(PagingError::InvalidPage(ghost)));
    }

    #[test]
    fn blocking_defers_then_serves_new_frame() {
        let (mut pt, mut m, page) = setup(Permission::ReadWrite);
        let Translation::Ready { frame: old, .. } = pt.translate(0, 0).unwrap() else { panic!() };
        m.request(&pt, page, 2, 0).unwrap();
        let (pkts, _) = m.step(&mut pt, 0).unwrap();
        for p in pkts {
            m.on_data_delivered(p.migration);
        }
        assert_eq!(pt.translate(0, 0).unwrap(), Translation::Deferred);
        run(&mut pt, &mut m, 1);
        let Translation::Ready { frame: new, .. } = pt.translate(0, 0).unwrap() else { panic!() };
        assert_ne!(old, new);
        assert_eq!(pt.cube_of_frame(new), 2);
        // the old frame is back in its pool
        assert_eq!(pt.retiring_frames(), 0);
        assert!(pt.frames_conserved());
    }

    #[test]
    fn blocking_waits_for_outstanding_accesses() {
        let (mut pt, mut m, page) = setup(Permission::ReadWrite);
        let old = pt.entry(page).unwrap().frame;
        pt.acquire(old);
        m.request(&pt, page, 1, 0).unwrap();
        for c in 0..10 {
            let (pkts, _) = m.step(&mut pt, c).unwrap();
            assert!(pkts.is_empty());
        }
        pt.release(old);
        let (pkts, _) = m.step(&mut pt, 10).unwrap();
        assert_eq!(pkts.len(), 1);
    }

    #[test]
    fn non_blocking_reads_old_frame_in_flight() {
        let (mut pt, mut m, page) = setup(Permission::ReadOnly);
        let old = pt.entry(page).unwrap().frame;
        m.request(&pt, page, 3, 0).unwrap();
        for c in 0..5 {
            m.step(&mut pt, c).unwrap();
            assert_eq!(pt.translate(8, 0).unwrap(), Translation::Ready { frame: old, paddr: old * 4096 + 8 });
        }
    }

    #[test]
    fn non_blocking_old_frame_retires_after_drain() {
        let (mut pt, mut m, page) = setup(Permission::ReadOnly);
        let old = pt.entry(page).unwrap().frame;
        pt.acquire(old);
        m.request(&pt, page, 3, 0).unwrap();
        let done = run(&mut pt, &mut m, 0);
        assert_ne!(pt.entry(page).unwrap().frame, old);
        assert_eq!(pt.retiring_frames(), 1);
        assert!(pt.frames_conserved());
        pt.release(old);
        m.step(&mut pt, done + 1).unwrap();
        assert_eq!(pt.retiring_frames(), 0);
        assert!(pt.frames_conserved());
    }

    #[test]
    fn latency_is_ack_minus_grant() {
        // 64 packets, one per cycle from the grant at cycle 5; the last is
        // delivered and acked at cycle 68.
        let (mut pt, mut m, page) = setup(Permission::ReadWrite);
        m.request(&pt, page, 1, 0).unwrap();
        m.enable_log();
        let done = run(&mut pt, &mut m, 5);
        let rec = &m.log()[0];
        assert_eq!(rec.start_cycle, 5);
        assert_eq!(rec.ack_cycle, Some(68));
        assert_eq!(rec.latency(), Some(63));
        assert_eq!(done, 68 + MigrationSystem::OS_INTERRUPT_CYCLES);
    }

    #[test]
    fn full_destination_aborts() {
        let g = DramGeometry { cube_bytes: 1 << 16, ..DramGeometry::new(2) };
        let mut pt = PageTable::new(g, AllocPolicy::Default);
        pt.register_process(&Process::new(0, 1 << 30));
        for vpn in 0..g.total_frames() {
            pt.touch(VPage { pid: 0, vpn }).unwrap();
        }
        let page = VPage { pid: 0, vpn: 0 };
        let mut m = MigrationSystem::new(128, 1, 512, 0);
        m.request(&pt, page, 1, 0).unwrap();
        let (_, events) = m.step(&mut pt, 0).unwrap();
        assert!(matches!(events[..], [MigrationEvent::Aborted { .. }]));
        assert_eq!(pt.cube_of(page), Some(0));
        assert!(!pt.entry(page).unwrap().locked);
        assert!(pt.frames_conserved());
    }
}
