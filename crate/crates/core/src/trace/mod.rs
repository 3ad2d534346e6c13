//! NMP-op traces: the op format, synthetic kernel generators, the text
//! format, and the workload analyses (access classification, active pages,
//! page affinity).

mod analysis;
mod gen;
mod text;

pub use analysis::{
    active_page_distribution, affinity_analysis, classify_page_accesses, AffinityProfile,
    Quadrant, DEFAULT_CLASS_EDGES,
};
pub use gen::{generate_kernel_trace, KernelKind, SizeParams};
pub use text::{parse_trace, serialize_trace};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

/// Bytes per kernel element.
pub const ELEMENT_BYTES: u64 = 8;

/// Default page size (4 KiB).
pub const DEFAULT_PAGE_SIZE: u64 = 4096;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("trace invariant violated: {0}")]
    Invalid(String),
}

/// Reduction operator applied as `dest += src1 OP src2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Add,
    Mac,
    Min,
    Max,
}

impl OpKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Add => "ADD",
            OpKind::Mac => "MAC",
            OpKind::Min => "MIN",
            OpKind::Max => "MAX",
        }
    }

    /// Whether the operator may be issued with a single source.
    pub fn allows_single_source(self) -> bool {
        !matches!(self, OpKind::Mac)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "ADD" => Ok(OpKind::Add),
            "MAC" => Ok(OpKind::Mac),
            "MIN" => Ok(OpKind::Min),
            "MAX" => Ok(OpKind::Max),
            other => Err(format!("unknown op kind `{other}`")),
        }
    }
}

/// One near-memory operation `dest += src1 OP src2`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NmpOp {
    pub seq_id: u64,
    pub kind: OpKind,
    pub dest: u64,
    pub src1: u64,
    pub src2: Option<u64>,
    pub pid: u32,
}

impl NmpOp {
    /// Operand addresses in `dest, src1, src2` order.
    pub fn operands(&self) -> impl Iterator<Item = u64> + '_ {
        [Some(self.dest), Some(self.src1), self.src2].into_iter().flatten()
    }
}

/// Page of a process's virtual address space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VPage {
    pub pid: u32,
    pub vpn: u64,
}

impl fmt::Display for VPage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{:#x}", self.pid, self.vpn)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Permission {
    ReadOnly,
    ReadWrite,
}

/// Half-open virtual range `[start, end)` carrying a permission.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
    pub start: u64,
    pub end: u64,
    pub perm: Permission,
}

/// A process's virtual extent `[0, extent)` and its read-only regions.
/// Anything not covered by a region is read-write.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Process {
    pub id: u32,
    pub extent: u64,
    pub regions: Vec<Region>,
}

impl Process {
    pub fn new(id: u32, extent: u64) -> Self {
        Self { id, extent, regions: Vec::new() }
    }

    pub fn permission_of(&self, vaddr: u64) -> Permission {
        self.regions
            .iter()
            .find(|r| r.start <= vaddr && vaddr < r.end)
            .map_or(Permission::ReadWrite, |r| r.perm)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpTrace {
    pub page_size: u64,
    pub processes: BTreeMap<u32, Process>,
    pub ops: Vec<NmpOp>,
}

impl OpTrace {
    pub fn new(page_size: u64) -> Self {
        Self { page_size, processes: BTreeMap::new(), ops: Vec::new() }
    }

    pub fn page_of(&self, pid: u32, vaddr: u64) -> VPage {
        VPage { pid, vpn: vaddr / self.page_size }
    }

    /// Distinct pages touched by `op`, in operand order.
    pub fn op_pages(&self, op: &NmpOp) -> Vec<VPage> {
        let mut pages: Vec<VPage> = Vec::with_capacity(3);
        for addr in op.operands() {
            let p = self.page_of(op.pid, addr);
            if !pages.contains(&p) {
                pages.push(p);
            }
        }
        pages
    }

    pub fn permission_of(&self, page: VPage) -> Permission {
        self.processes
            .get(&page.pid)
            .map_or(Permission::ReadWrite, |p| p.permission_of(page.vpn * self.page_size))
    }

    /// Checks ordering, process membership, extents and operand arity.
    pub fn validate(&self) -> Result<(), TraceError> {
        if !self.page_size.is_power_of_two() {
            return Err(TraceError::Invalid(format!(
                "page size {} is not a power of two",
                self.page_size
            )));
        }
        let mut prev: Option<u64> = None;
        for op in &self.ops {
            if prev.is_some_and(|p| op.seq_id <= p) {
                return Err(TraceError::Invalid(format!(
                    "seq_id {} does not increase",
                    op.seq_id
                )));
            }
            prev = Some(op.seq_id);
            let proc = self.processes.get(&op.pid).ok_or_else(|| {
                TraceError::Invalid(format!("op {} names unknown process {}", op.seq_id, op.pid))
            })?;
            if let Some(addr) = op.operands().find(|&a| a >= proc.extent) {
                return Err(TraceError::Invalid(format!(
                    "op {} address {addr:#x} outside extent {:#x}",
                    op.seq_id, proc.extent
                )));
            }
            if op.src2.is_none() && !op.kind.allows_single_source() {
                return Err(TraceError::Invalid(format!(
                    "op {} ({}) requires two sources",
                    op.seq_id, op.kind
                )));
            }
        }
        Ok(())
    }

    /// Merges per-process traces into one stream, interleaving round-robin
    /// by issue slot. Sequence ids are renumbered in merged order.
    pub fn interleave(traces: &[OpTrace]) -> Result<OpTrace, TraceError> {
        let page_size = traces.first().map_or(DEFAULT_PAGE_SIZE, |t| t.page_size);
        let mut merged = OpTrace::new(page_size);
        for t in traces {
            if t.page_size != page_size {
                return Err(TraceError::InvalidParameter(
                    "traces disagree on page size".into(),
                ));
            }
            for (id, p) in &t.processes {
                if merged.processes.insert(*id, p.clone()).is_some() {
                    return Err(TraceError::InvalidParameter(format!(
                        "process id {id} appears in more than one trace"
                    )));
                }
            }
        }
        let mut cursors = vec![0usize; traces.len()];
        let mut seq = 0u64;
        loop {
            let mut any = false;
            for (t, cur) in traces.iter().zip(cursors.iter_mut()) {
                if let Some(op) = t.ops.get(*cur) {
                    merged.ops.push(NmpOp { seq_id: seq, ..op.clone() });
                    seq += 1;
                    *cur += 1;
                    any = true;
                }
            }
            if !any {
                break;
            }
        }
        Ok(merged)
    }

    /// Returns a copy of this trace with every process id replaced by `pid`.
    pub fn with_pid(&self, pid: u32) -> OpTrace {
        let mut out = self.clone();
        out.processes = self
            .processes
            .values()
            .map(|p| (pid, Process { id: pid, ..p.clone() }))
            .collect();
        for op in &mut out.ops {
            op.pid = pid;
        }
        out
    }
}
