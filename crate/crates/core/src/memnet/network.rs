use std::collections::{BTreeMap, VecDeque};

use super::{route_next_hop, CubeId, MeshConfig, Port};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PacketKind {
    NmpReq,
    DataReq,
    DataResp,
    Ack,
    MigrationData,
    MigrationAck,
}

impl PacketKind {
    pub const ALL: [PacketKind; 6] = [
        PacketKind::NmpReq,
        PacketKind::DataReq,
        PacketKind::DataResp,
        PacketKind::Ack,
        PacketKind::MigrationData,
        PacketKind::MigrationAck,
    ];

    /// Virtual-channel class. Each protocol message class travels in its
    /// own VC so request/response dependencies cannot close a cycle.
    pub fn vc_class(self) -> usize {
        match self {
            PacketKind::NmpReq => 0,
            PacketKind::DataReq => 1,
            PacketKind::DataResp => 2,
            PacketKind::Ack => 3,
            PacketKind::MigrationData | PacketKind::MigrationAck => 4,
        }
    }

    pub fn is_migration(self) -> bool {
        matches!(self, PacketKind::MigrationData | PacketKind::MigrationAck)
    }

    pub fn name(self) -> &'static str {
        match self {
            PacketKind::NmpReq => "NMP_REQ",
            PacketKind::DataReq => "DATA_REQ",
            PacketKind::DataResp => "DATA_RESP",
            PacketKind::Ack => "ACK",
            PacketKind::MigrationData => "MIGRATION_DATA",
            PacketKind::MigrationAck => "MIGRATION_ACK",
        }
    }
}

/// Where a packet enters or leaves a router: the cube's logic die or the
/// attached memory controller.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sink {
    Cube,
    Host,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Packet<M> {
    pub id: u64,
    pub kind: PacketKind,
    pub src_cube: CubeId,
    pub dst_cube: CubeId,
    pub source: Sink,
    pub sink: Sink,
    pub payload_bits: u32,
    pub hop_count: u32,
    pub inject_cycle: u64,
    pub deliver_cycle: u64,
    pub op_ref: Option<u64>,
    pub msg: M,
}

impl<M> Packet<M> {
    pub fn new(kind: PacketKind, src_cube: CubeId, dst_cube: CubeId, payload_bits: u32, msg: M) -> Self {
        Self {
            id: 0,
            kind,
            src_cube,
            dst_cube,
            source: Sink::Cube,
            sink: Sink::Cube,
            payload_bits,
            hop_count: 0,
            inject_cycle: 0,
            deliver_cycle: 0,
            op_ref: None,
            msg,
        }
    }

    pub fn from_host(mut self) -> Self {
        self.source = Sink::Host;
        self
    }

    pub fn to_host(mut self) -> Self {
        self.sink = Sink::Host;
        self
    }

    pub fn with_op(mut self, seq_id: u64) -> Self {
        self.op_ref = Some(seq_id);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetEvent {
    pub cycle: u64,
    pub event: &'static str,
    pub packet_id: u64,
    pub cube: CubeId,
}

struct Router<M> {
    /// Input buffers indexed `port * vc_count + vc`.
    bufs: Vec<VecDeque<Packet<M>>>,
    /// Network-interface queues for the Local and Host injection ports,
    /// indexed `[sink][vc]`.
    nic: [Vec<VecDeque<Packet<M>>>; 2],
    busy_until: [u64; 4],
    /// Free downstream buffers per mesh output and VC.
    credits: [Vec<usize>; 4],
    rr: [usize; 4],
    buffered: usize,
    queued: usize,
}

/// Input-queued virtual-channel mesh with credit flow control and
/// virtual cut-through at packet granularity.
///
/// A packet that wins an output at cycle `t` arrives downstream at
/// `t + router_stages + ceil(bits / link_bits)`; the link is busy for the
/// serialization time. Packets are ejected on arrival at their destination
/// router. Nothing is ever dropped: a full downstream VC stalls the head.
pub struct Network<M> {
    cfg: MeshConfig,
    routers: Vec<Router<M>>,
    transit: BTreeMap<u64, Vec<(CubeId, Port, Packet<M>)>>,
    local: Vec<Packet<M>>,
    injected: u64,
    delivered: u64,
    next_id: u64,
    bit_hops: u64,
    log: Option<Vec<NetEvent>>,
}

impl<M> Network<M> {
    pub fn new(cfg: MeshConfig) -> Self {
        let vcs = cfg.vc_count;
        let routers = (0..cfg.cubes())
            .map(|r| {
                let c = cfg.coord(r);
                let credit = |p: Port| {
                    let exists = match p {
                        Port::North => c.y + 1 < cfg.height,
                        Port::East => c.x + 1 < cfg.width,
                        Port::South => c.y > 0,
                        Port::West => c.x > 0,
                        _ => false,
                    };
                    vec![if exists { cfg.vc_depth } else { 0 }; vcs]
                };
                Router {
                    bufs: (0..Port::ALL.len() * vcs).map(|_| VecDeque::new()).collect(),
                    nic: [
                        (0..vcs).map(|_| VecDeque::new()).collect(),
                        (0..vcs).map(|_| VecDeque::new()).collect(),
                    ],
                    busy_until: [0; 4],
                    credits: Port::MESH.map(credit),
                    rr: [0; 4],
                    buffered: 0,
                    queued: 0,
                }
            })
            .collect();
        Self {
            cfg,
            routers,
            transit: BTreeMap::new(),
            local: Vec::new(),
            injected: 0,
            delivered: 0,
            next_id: 0,
            bit_hops: 0,
            log: None,
        }
    }

    pub fn config(&self) -> &MeshConfig {
        &self.cfg
    }

    pub fn enable_event_log(&mut self) {
        self.log = Some(Vec::new());
    }

    pub fn event_log(&self) -> Option<&[NetEvent]> {
        self.log.as_deref()
    }

    pub fn injected(&self) -> u64 {
        self.injected
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn in_flight(&self) -> u64 {
        self.injected - self.delivered
    }

    /// Σ payload_bits × hops over all link traversals so far.
    pub fn bit_hops(&self) -> u64 {
        self.bit_hops
    }

    pub fn is_idle(&self) -> bool {
        self.in_flight() == 0
    }

    /// Packets physically held anywhere in the network; equals
    /// [`Network::in_flight`] at every cycle.
    pub fn count_resident(&self) -> u64 {
        let transit: usize = self.transit.values().map(Vec::len).sum();
        let routers: usize = self
            .routers
            .iter()
            .map(|r| {
                r.bufs.iter().map(VecDeque::len).sum::<usize>()
                    + r.nic.iter().flatten().map(VecDeque::len).sum::<usize>()
            })
            .sum();
        (transit + routers + self.local.len()) as u64
    }

    /// Smallest credit count over all mesh outputs; never negative by type,
    /// never above the VC depth.
    pub fn credits_within_bounds(&self) -> bool {
        self.routers
            .iter()
            .all(|r| r.credits.iter().flatten().all(|&c| c <= self.cfg.vc_depth))
    }

    fn serialization(&self, bits: u32) -> u64 {
        u64::from(bits.div_ceil(self.cfg.link_bits).max(1))
    }

    fn record(&mut self, cycle: u64, event: &'static str, packet_id: u64, cube: CubeId) {
        if let Some(log) = &mut self.log {
            log.push(NetEvent { cycle, event, packet_id, cube });
        }
    }

    /// Queues a packet at its source router's network interface. Returns the
    /// assigned packet id.
    pub fn inject(&mut self, mut pkt: Packet<M>, cycle: u64) -> u64 {
        assert!(pkt.src_cube < self.routers.len() && pkt.dst_cube < self.routers.len());
        pkt.id = self.next_id;
        pkt.inject_cycle = cycle;
        pkt.hop_count = 0;
        self.next_id += 1;
        self.injected += 1;
        let id = pkt.id;
        self.record(cycle, "inject", id, pkt.src_cube);
        if pkt.src_cube == pkt.dst_cube {
            self.local.push(pkt);
        } else {
            let vc = pkt.kind.vc_class() % self.cfg.vc_count;
            let r = &mut self.routers[pkt.src_cube];
            let idx = match pkt.source {
                Sink::Cube => 0,
                Sink::Host => 1,
            };
            r.nic[idx][vc].push_back(pkt);
            r.queued += 1;
        }
        id
    }

    fn neighbor(&self, r: CubeId, p: Port) -> CubeId {
        let c = self.cfg.coord(r);
        let n = match p {
            Port::North => super::Coord { x: c.x, y: c.y + 1 },
            Port::East => super::Coord { x: c.x + 1, y: c.y },
            Port::South => super::Coord { x: c.x, y: c.y - 1 },
            Port::West => super::Coord { x: c.x - 1, y: c.y },
            _ => unreachable!("not a mesh port"),
        };
        self.cfg.cube_at(n)
    }

    fn deliver(&mut self, mut pkt: Packet<M>, cycle: u64, out: &mut Vec<Packet<M>>) {
        debug_assert_eq!(pkt.hop_count, self.cfg.manhattan(pkt.src_cube, pkt.dst_cube));
        pkt.deliver_cycle = cycle;
        self.delivered += 1;
        self.record(cycle, "deliver", pkt.id, pkt.dst_cube);
        out.push(pkt);
    }

    /// Advances the network by one cycle and returns the packets delivered
    /// in it. Cycles must be presented in increasing order.
    pub fn step(&mut self, cycle: u64) -> Vec<Packet<M>> {
        let vcs = self.cfg.vc_count;
        let depth = self.cfg.vc_depth;
        let mut out = Vec::new();

        for pkt in std::mem::take(&mut self.local) {
            self.deliver(pkt, cycle, &mut out);
        }

        // Link arrivals. Ejecting packets hand their reserved credit back.
        while let Some(entry) = self.transit.first_entry() {
            if *entry.key() > cycle {
                break;
            }
            for (r, inport, pkt) in entry.remove() {
                let vc = pkt.kind.vc_class() % vcs;
                if pkt.dst_cube == r {
                    let up = self.neighbor(r, inport);
                    self.routers[up].credits[inport.opposite() as usize][vc] += 1;
                    self.deliver(pkt, cycle, &mut out);
                } else {
                    self.record(cycle, "hop", pkt.id, r);
                    let router = &mut self.routers[r];
                    router.bufs[inport as usize * vcs + vc].push_back(pkt);
                    router.buffered += 1;
                }
            }
        }

        // Network interfaces into injection-port buffers.
        for router in &mut self.routers {
            if router.queued == 0 {
                continue;
            }
            for (i, port) in [Port::Local, Port::Host].into_iter().enumerate() {
                for vc in 0..vcs {
                    let buf = port as usize * vcs + vc;
                    while router.bufs[buf].len() < depth {
                        let Some(pkt) = router.nic[i][vc].pop_front() else { break };
                        router.bufs[buf].push_back(pkt);
                        router.queued -= 1;
                        router.buffered += 1;
                    }
                }
            }
        }

        // Switch allocation: one winner per free mesh output, round-robin
        // over (input port, vc) heads.
        let total = Port::ALL.len() * vcs;
        let mut credit_returns: Vec<(CubeId, usize, usize)> = Vec::new();
        let mut launches: Vec<(u64, CubeId, Port, Packet<M>)> = Vec::new();
        for r in 0..self.routers.len() {
            if self.routers[r].buffered == 0 {
                continue;
            }
            let here = self.cfg.coord(r);
            for out_port in Port::MESH {
                let o = out_port as usize;
                let router = &self.routers[r];
                if router.busy_until[o] > cycle {
                    continue;
                }
                let start = router.rr[o];
                let winner = (0..total).map(|k| (start + k) % total).find(|&idx| {
                    let vc = idx % vcs;
                    router.bufs[idx].front().is_some_and(|p| {
                        route_next_hop(here, self.cfg.coord(p.dst_cube)) == out_port
                            && router.credits[o][vc] > 0
                    })
                });
                let Some(idx) = winner else { continue };
                let vc = idx % vcs;
                let ser = self.serialization(router.bufs[idx].front().expect("winner has a head").payload_bits);
                let router = &mut self.routers[r];
                let mut pkt = router.bufs[idx].pop_front().expect("winner has a head");
                router.buffered -= 1;
                router.credits[o][vc] -= 1;
                router.rr[o] = (idx + 1) % total;
                let inport = Port::ALL[idx / vcs];
                if Port::MESH.contains(&inport) {
                    credit_returns.push((r, inport as usize, vc));
                }
                router.busy_until[o] = cycle + ser;
                pkt.hop_count += 1;
                self.bit_hops += u64::from(pkt.payload_bits);
                let arrive = cycle + self.cfg.router_stages + ser;
                launches.push((arrive, self.neighbor(r, out_port), out_port.opposite(), pkt));
            }
        }
        for (r, inport, vc) in credit_returns {
            let up = self.neighbor(r, Port::ALL[inport]);
            self.routers[up].credits[Port::ALL[inport].opposite() as usize][vc] += 1;
        }
        for (arrive, next, inport, pkt) in launches {
            self.transit.entry(arrive).or_default().push((next, inport, pkt));
        }
        out
    }
}
