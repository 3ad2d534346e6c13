//! Memory-controller side: NMP-op scheduling (BNMP, LDB, PEI), the compute
//! remap table, TOM mapping selection, the PEI host cache, and the page
//! information cache and system counters that feed the agent.

mod info;
mod pei;
mod tom;

pub use info::{
    CandidateSelector, History, PageEvent, PageInfoCache, PageInfoEntry, SystemCounters,
    HISTORY_LEN,
};
pub use pei::{line_key, pei_host_filter, HostCache, PeiDecision};
pub use tom::{tom_epoch_select, tom_score, TomSample};

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use crate::memnet::CubeId;
use crate::trace::VPage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Technique {
    /// Compute at the destination operand's cube.
    #[default]
    Bnmp,
    /// Compute at the first source's cube and forward the result.
    Ldb,
    /// Execute on the host when an operand hits in the core's cache,
    /// otherwise offload like `Ldb`.
    Pei,
}

impl Technique {
    pub const ALL: [Technique; 3] = [Technique::Bnmp, Technique::Ldb, Technique::Pei];

    pub fn name(self) -> &'static str {
        match self {
            Technique::Bnmp => "BNMP",
            Technique::Ldb => "LDB",
            Technique::Pei => "PEI",
        }
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Technique {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Technique::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown technique `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Operand {
    Dest = 0,
    Src1 = 1,
    Src2 = 2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OperandLoc {
    pub page: VPage,
    pub cube: CubeId,
}

/// Where an op's operands live when it is scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OpPlacement {
    pub dest: OperandLoc,
    pub src1: OperandLoc,
    pub src2: Option<OperandLoc>,
}

impl OpPlacement {
    pub fn get(&self, o: Operand) -> Option<OperandLoc> {
        match o {
            Operand::Dest => Some(self.dest),
            Operand::Src1 => Some(self.src1),
            Operand::Src2 => self.src2,
        }
    }

    pub fn sources(&self) -> impl Iterator<Item = (Operand, OperandLoc)> {
        [(Operand::Src1, Some(self.src1)), (Operand::Src2, self.src2)]
            .into_iter()
            .filter_map(|(o, l)| l.map(|l| (o, l)))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub compute_cube: CubeId,
    /// Sources not resident at the compute cube, one DATA_REQ each.
    pub fetch: Vec<(Operand, CubeId)>,
    /// Destination cube when the result must travel there.
    pub forward_to: Option<CubeId>,
    pub remapped: bool,
}

/// Picks the compute cube: a compute-remap entry for the dest, src1 or src2
/// page (in that order) wins; otherwise the technique's default.
pub fn schedule_op(p: &OpPlacement, technique: Technique, remap: &ComputeRemapTable) -> Schedule {
    let suggested = [Some(p.dest), Some(p.src1), p.src2]
        .into_iter()
        .flatten()
        .find_map(|l| remap.get(l.page));
    let compute_cube = suggested.unwrap_or(match technique {
        Technique::Bnmp => p.dest.cube,
        Technique::Ldb | Technique::Pei => p.src1.cube,
    });
    Schedule {
        compute_cube,
        fetch: p.sources().filter(|(_, l)| l.cube != compute_cube).map(|(o, l)| (o, l.cube)).collect(),
        forward_to: (p.dest.cube != compute_cube).then_some(p.dest.cube),
        remapped: suggested.is_some(),
    }
}

/// Bounded page → compute-cube suggestions, oldest entry evicted first.
#[derive(Clone, Debug)]
pub struct ComputeRemapTable {
    capacity: usize,
    map: BTreeMap<VPage, CubeId>,
    order: VecDeque<VPage>,
    pub accesses: u64,
}

impl ComputeRemapTable {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, map: BTreeMap::new(), order: VecDeque::new(), accesses: 0 }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, page: VPage) -> Option<CubeId> {
        self.map.get(&page).copied()
    }

    pub fn insert(&mut self, page: VPage, cube: CubeId) {
        if self.capacity == 0 {
            return;
        }
        self.accesses += 1;
        if self.map.insert(page, cube).is_none() {
            self.order.push_back(page);
            while self.map.len() > self.capacity {
                let old = self.order.pop_front().expect("order tracks map");
                self.map.remove(&old);
            }
        }
    }

    pub fn remove(&mut self, page: VPage) {
        if self.map.remove(&page).is_some() {
            self.order.retain(|p| *p != page);
        }
    }

    pub fn clear(&mut self) {
        self.map.clear();
        self.order.clear();
    }
}

impl Default for ComputeRemapTable {
    fn default() -> Self {
        Self::new(128)
    }
}
