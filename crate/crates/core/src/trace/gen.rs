//! Synthetic kernel trace generators.
//!
//! `Mac` and `Rd` follow their kernels exactly. The `*Like` kinds
//! approximate the access character of larger applications:
//!
//! - `SpmvLike`: `y[row] += val[k] * x[col]`, eight nonzeros per row, with
//!   the page of `x[col]` drawn from a Zipf law over `hot_pages` pages.
//! - `PrLike`: `next[v] += rank[u] * inv_deg[u]` with uniform `u, v` over
//!   `4n` vertices; many pages, little reuse per page.
//! - `BpLike`: weight update `w[o][i] += delta[o] * act[i]` over a 64-input
//!   layer; large resident weight matrix, small hot working set.
//! - `KmLike`: distance accumulation `dist[p][c] += pt[p][d] * cent[c][d]`
//!   for 4 clusters in 4 dimensions; the centroid page is reused by every op.
//!
//! Input arrays are declared read-only; outputs are read-write.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use super::{
    NmpOp, OpKind, OpTrace, Permission, Process, Region, TraceError, DEFAULT_PAGE_SIZE,
    ELEMENT_BYTES,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KernelKind {
    Mac,
    Rd,
    SpmvLike,
    PrLike,
    BpLike,
    KmLike,
}

impl KernelKind {
    pub const ALL: [KernelKind; 6] = [
        KernelKind::Mac,
        KernelKind::Rd,
        KernelKind::SpmvLike,
        KernelKind::PrLike,
        KernelKind::BpLike,
        KernelKind::KmLike,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Mac => "MAC",
            KernelKind::Rd => "RD",
            KernelKind::SpmvLike => "SPMV_LIKE",
            KernelKind::PrLike => "PR_LIKE",
            KernelKind::BpLike => "BP_LIKE",
            KernelKind::KmLike => "KM_LIKE",
        }
    }
}

impl FromStr for KernelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.to_ascii_uppercase().replace('-', "_");
        KernelKind::ALL
            .into_iter()
            .find(|k| k.name() == up || k.name().trim_end_matches("_LIKE") == up)
            .ok_or_else(|| format!("unknown kernel kind `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SizeParams {
    /// Primary element count (vector length, nonzeros, edges, weights or
    /// points depending on the kernel).
    pub n: u64,
    /// Zipf exponent for `SpmvLike` column pages.
    pub exponent: f64,
    /// Number of `x` pages `SpmvLike` draws from.
    pub hot_pages: u64,
}

impl SizeParams {
    pub fn new(n: u64) -> Self {
        Self { n, exponent: 1.0, hot_pages: 16 }
    }
}

impl Default for SizeParams {
    fn default() -> Self {
        Self::new(1024)
    }
}

/// Lays out page-aligned arrays in one process's address space.
struct Layout {
    page: u64,
    next: u64,
    regions: Vec<Region>,
}

impl Layout {
    fn new(page: u64) -> Self {
        Self { page, next: 0, regions: Vec::new() }
    }

    fn array(&mut self, elements: u64, perm: Permission) -> u64 {
        let base = self.next;
        let bytes = (elements * ELEMENT_BYTES).max(1);
        self.next += bytes.div_ceil(self.page) * self.page;
        if perm == Permission::ReadOnly {
            self.regions.push(Region { start: base, end: self.next, perm });
        }
        base
    }

    fn into_trace(self, ops: Vec<NmpOp>) -> OpTrace {
        let mut trace = OpTrace::new(self.page);
        let mut proc = Process::new(0, self.next);
        proc.regions = self.regions;
        trace.processes.insert(0, proc);
        trace.ops = ops;
        trace
    }
}

struct OpSink(Vec<NmpOp>);

impl OpSink {
    fn push(&mut self, kind: OpKind, dest: u64, src1: u64, src2: Option<u64>) {
        let seq_id = self.0.len() as u64;
        self.0.push(NmpOp { seq_id, kind, dest, src1, src2, pid: 0 });
    }
}

const fn elem(base: u64, i: u64) -> u64 {
    base + ELEMENT_BYTES * i
}

/// Generates a deterministic trace for `(kind, params, seed)`; process id 0.
pub fn generate_kernel_trace(
    kind: KernelKind,
    params: &SizeParams,
    seed: u64,
) -> Result<OpTrace, TraceError> {
    if params.n == 0 {
        return Err(TraceError::InvalidParameter("n must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layout = Layout::new(DEFAULT_PAGE_SIZE);
    let mut ops = OpSink(Vec::new());
    let n = params.n;

    match kind {
        KernelKind::Mac => {
            let a = layout.array(n, Permission::ReadOnly);
            let b = layout.array(n, Permission::ReadOnly);
            let d = layout.array(n, Permission::ReadWrite);
            for i in 0..n {
                ops.push(OpKind::Mac, elem(d, i), elem(a, i), Some(elem(b, i)));
            }
        }
        KernelKind::Rd => {
            let v = layout.array(n, Permission::ReadOnly);
            let half = n.div_ceil(2);
            let p = layout.array(half, Permission::ReadWrite);
            let q = layout.array(half, Permission::ReadWrite);
            let acc = layout.array(1, Permission::ReadWrite);
            let mut level: Vec<u64> = (0..n).map(|i| elem(v, i)).collect();
            let mut out_base = [p, q];
            if level.len() == 1 {
                ops.push(OpKind::Add, acc, level[0], None);
            }
            while level.len() > 1 {
                let next_len = level.len().div_ceil(2);
                let mut next: Vec<u64> = if next_len == 1 {
                    vec![acc]
                } else {
                    (0..next_len as u64).map(|j| elem(out_base[0], j)).collect()
                };
                for (j, pair) in level.chunks(2).enumerate() {
                    match pair {
                        [a, b] => ops.push(OpKind::Add, next[j], *a, Some(*b)),
                        // an odd element rides up to the next level unchanged
                        [a] => next[j] = *a,
                        _ => unreachable!(),
                    }
                }
                level = next;
                out_base.swap(0, 1);
            }
        }
        KernelKind::SpmvLike => {
            if params.hot_pages == 0 || !(params.exponent.is_finite() && params.exponent > 0.0) {
                return Err(TraceError::InvalidParameter(
                    "SPMV_LIKE needs hot_pages > 0 and a positive exponent".into(),
                ));
            }
            const NNZ_PER_ROW: u64 = 8;
            let per_page = layout.page / ELEMENT_BYTES;
            let vals = layout.array(n, Permission::ReadOnly);
            let x = layout.array(params.hot_pages * per_page, Permission::ReadOnly);
            let y = layout.array(n.div_ceil(NNZ_PER_ROW), Permission::ReadWrite);
            let zipf = Zipf::new(params.hot_pages, params.exponent)
                .map_err(|e| TraceError::InvalidParameter(e.to_string()))?;
            for k in 0..n {
                let page = zipf.sample(&mut rng) as u64 - 1;
                let col = page * per_page + rng.gen_range(0..per_page);
                ops.push(OpKind::Mac, elem(y, k / NNZ_PER_ROW), elem(vals, k), Some(elem(x, col)));
            }
        }
        KernelKind::PrLike => {
            let vertices = 4 * n;
            let rank = layout.array(vertices, Permission::ReadOnly);
            let inv_deg = layout.array(vertices, Permission::ReadOnly);
            let next = layout.array(vertices, Permission::ReadWrite);
            for _ in 0..n {
                let u = rng.gen_range(0..vertices);
                let v = rng.gen_range(0..vertices);
                ops.push(OpKind::Mac, elem(next, v), elem(rank, u), Some(elem(inv_deg, u)));
            }
        }
        KernelKind::BpLike => {
            const INPUTS: u64 = 64;
            let outputs = n.div_ceil(INPUTS);
            let delta = layout.array(outputs, Permission::ReadOnly);
            let act = layout.array(INPUTS, Permission::ReadOnly);
            let w = layout.array(outputs * INPUTS, Permission::ReadWrite);
            for k in 0..n {
                let (o, i) = (k / INPUTS, k % INPUTS);
                ops.push(OpKind::Mac, elem(w, k), elem(delta, o), Some(elem(act, i)));
            }
        }
        KernelKind::KmLike => {
            const CLUSTERS: u64 = 4;
            const DIMS: u64 = 4;
            let pts = layout.array(n * DIMS, Permission::ReadOnly);
            let cent = layout.array(CLUSTERS * DIMS, Permission::ReadOnly);
            let dist = layout.array(n * CLUSTERS, Permission::ReadWrite);
            for p in 0..n {
                for c in 0..CLUSTERS {
                    for d in 0..DIMS {
                        ops.push(
                            OpKind::Mac,
                            elem(dist, p * CLUSTERS + c),
                            elem(pts, p * DIMS + d),
                            Some(elem(cent, c * DIMS + d)),
                        );
                    }
                }
            }
        }
    }

    let trace = layout.into_trace(ops.0);
    debug_assert!(trace.validate().is_ok());
    Ok(trace)
}
