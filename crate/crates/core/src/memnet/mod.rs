//! Memory-cube mesh: XY-routed virtual-channel network, per-cube DRAM
//! row-buffer state and NMP-op tables, and the physical-to-DRAM map.

mod cube;
mod dram;
mod network;

pub use cube::{AccessResult, CubeState, DramTiming, NmpTable};
pub use dram::{DramAddr, DramGeometry, FrameMapping};
pub use network::{NetEvent, Network, Packet, PacketKind, Sink};

use std::fmt;

pub type CubeId = usize;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MemError {
    #[error("invalid address: {0}")]
    InvalidAddress(String),
    #[error("internal consistency: {0}")]
    Consistency(String),
    #[error("invalid mesh configuration: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MeshConfig {
    pub width: usize,
    pub height: usize,
    /// Link bandwidth in bits per cycle.
    pub link_bits: u32,
    pub router_stages: u64,
    pub vc_count: usize,
    pub port_count: usize,
    /// Packet buffers per virtual channel (one credit each).
    pub vc_depth: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            width: 4,
            height: 4,
            link_bits: 128,
            router_stages: 3,
            vc_count: 5,
            port_count: 6,
            vc_depth: 4,
        }
    }
}

impl MeshConfig {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, ..Self::default() }
    }

    pub fn cubes(&self) -> usize {
        self.width * self.height
    }

    pub fn validate(&self) -> Result<(), MemError> {
        if self.width == 0 || self.height == 0 || self.width > 8 || self.height > 8 {
            return Err(MemError::Config(format!(
                "mesh {}x{} outside 1..=8 per side",
                self.width, self.height
            )));
        }
        if self.port_count != Port::ALL.len() {
            return Err(MemError::Config(format!("routers have {} ports", Port::ALL.len())));
        }
        if self.vc_count == 0 || self.vc_depth == 0 || self.link_bits == 0 || self.router_stages == 0 {
            return Err(MemError::Config("vc_count, vc_depth, link_bits and router_stages must be positive".into()));
        }
        Ok(())
    }

    pub fn coord(&self, cube: CubeId) -> Coord {
        Coord { x: cube % self.width, y: cube / self.width }
    }

    pub fn cube_at(&self, c: Coord) -> CubeId {
        c.y * self.width + c.x
    }

    pub fn manhattan(&self, a: CubeId, b: CubeId) -> u32 {
        let (a, b) = (self.coord(a), self.coord(b));
        (a.x.abs_diff(b.x) + a.y.abs_diff(b.y)) as u32
    }

    /// Largest Manhattan distance on the mesh.
    pub fn diameter(&self) -> u32 {
        (self.width + self.height - 2) as u32
    }

    /// Mesh neighbours of `cube` in N, E, S, W order.
    pub fn neighbors(&self, cube: CubeId) -> Vec<CubeId> {
        let c = self.coord(cube);
        Port::MESH
            .iter()
            .filter_map(|&p| self.step(c, p))
            .map(|n| self.cube_at(n))
            .collect()
    }

    /// The cube at `(W-1-x, H-1-y)`.
    pub fn diagonal_opposite(&self, cube: CubeId) -> CubeId {
        let c = self.coord(cube);
        self.cube_at(Coord { x: self.width - 1 - c.x, y: self.height - 1 - c.y })
    }

    /// Corner cubes hosting the memory controllers: (0,0), (W-1,0), (0,H-1),
    /// (W-1,H-1), deduplicated for degenerate meshes.
    pub fn corner_cubes(&self) -> Vec<CubeId> {
        let (w, h) = (self.width - 1, self.height - 1);
        let mut out: Vec<CubeId> = Vec::with_capacity(4);
        for c in [Coord { x: 0, y: 0 }, Coord { x: w, y: 0 }, Coord { x: 0, y: h }, Coord { x: w, y: h }] {
            let id = self.cube_at(c);
            if !out.contains(&id) {
                out.push(id);
            }
        }
        out
    }

    fn step(&self, c: Coord, p: Port) -> Option<Coord> {
        match p {
            Port::North if c.y + 1 < self.height => Some(Coord { x: c.x, y: c.y + 1 }),
            Port::East if c.x + 1 < self.width => Some(Coord { x: c.x + 1, y: c.y }),
            Port::South if c.y > 0 => Some(Coord { x: c.x, y: c.y - 1 }),
            Port::West if c.x > 0 => Some(Coord { x: c.x - 1, y: c.y }),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coord {
    pub x: usize,
    pub y: usize,
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Router ports. North is +y, East is +x.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Port {
    North = 0,
    East = 1,
    South = 2,
    West = 3,
    /// Cube logic die.
    Local = 4,
    /// Memory-controller link (corner cubes only).
    Host = 5,
}

impl Port {
    pub const ALL: [Port; 6] = [Port::North, Port::East, Port::South, Port::West, Port::Local, Port::Host];
    pub const MESH: [Port; 4] = [Port::North, Port::East, Port::South, Port::West];

    pub fn opposite(self) -> Port {
        match self {
            Port::North => Port::South,
            Port::South => Port::North,
            Port::East => Port::West,
            Port::West => Port::East,
            other => other,
        }
    }
}

/// Static XY routing: correct X first, then Y. `cur == dst` yields the
/// local ejection port.
pub fn route_next_hop(cur: Coord, dst: Coord) -> Port {
    use std::cmp::Ordering::*;
    match (dst.x.cmp(&cur.x), dst.y.cmp(&cur.y)) {
        (Greater, _) => Port::East,
        (Less, _) => Port::West,
        (Equal, Greater) => Port::North,
        (Equal, Less) => Port::South,
        (Equal, Equal) => Port::Local,
    }
}
