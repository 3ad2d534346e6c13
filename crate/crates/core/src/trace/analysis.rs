//! Workload characterization over op traces.

use std::collections::{BTreeMap, BTreeSet};

use super::{OpTrace, TraceError, VPage};

/// Default access-count bin edges for [`classify_page_accesses`].
pub const DEFAULT_CLASS_EDGES: [u64; 4] = [8, 64, 512, 4096];

/// Counts pages per access-count bin. With edges `e1 < … < ek` the bins are
/// `[0,e1), [e1,e2), …, [ek,∞)`. Every operand reference is one access.
pub fn classify_page_accesses(trace: &OpTrace, bin_edges: &[u64]) -> Result<Vec<u64>, TraceError> {
    if bin_edges.is_empty() || bin_edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(TraceError::InvalidParameter(
            "bin edges must be nonempty and strictly ascending".into(),
        ));
    }
    let mut counts: BTreeMap<VPage, u64> = BTreeMap::new();
    for op in &trace.ops {
        for addr in op.operands() {
            *counts.entry(trace.page_of(op.pid, addr)).or_default() += 1;
        }
    }
    let mut bins = vec![0u64; bin_edges.len() + 1];
    for c in counts.values() {
        bins[bin_edges.partition_point(|&e| e <= *c)] += 1;
    }
    Ok(bins)
}

/// Mean number of distinct pages touched per epoch, where op `seq_id` is
/// nominally issued at cycle `seq_id / issue_rate`. Epochs between the first
/// and the last occupied one count even when empty.
pub fn active_page_distribution(trace: &OpTrace, epoch_cycles: u64, issue_rate: f64) -> f64 {
    assert!(epoch_cycles > 0, "epoch must be positive");
    assert!(issue_rate > 0.0 && issue_rate.is_finite(), "issue rate must be positive");
    let mut epochs: BTreeMap<u64, BTreeSet<VPage>> = BTreeMap::new();
    for op in &trace.ops {
        let cycle = (op.seq_id as f64 / issue_rate).floor() as u64;
        let set = epochs.entry(cycle / epoch_cycles).or_default();
        set.extend(trace.op_pages(op));
    }
    let (Some(first), Some(last)) = (epochs.keys().next(), epochs.keys().next_back()) else {
        return 0.0;
    };
    let span = (last - first + 1) as f64;
    epochs.values().map(|s| s.len() as f64).sum::<f64>() / span
}

/// Quadrants of the radix × edge-weight affinity grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Quadrant {
    LowRadixLowWeight = 0,
    LowRadixHighWeight = 1,
    HighRadixLowWeight = 2,
    HighRadixHighWeight = 3,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [
        Quadrant::LowRadixLowWeight,
        Quadrant::LowRadixHighWeight,
        Quadrant::HighRadixLowWeight,
        Quadrant::HighRadixHighWeight,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Quadrant::LowRadixLowWeight => "low_radix_low_weight",
            Quadrant::LowRadixHighWeight => "low_radix_high_weight",
            Quadrant::HighRadixLowWeight => "high_radix_low_weight",
            Quadrant::HighRadixHighWeight => "high_radix_high_weight",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AffinityProfile {
    pub n_bins: usize,
    /// Indexed by `Quadrant as usize`.
    pub quadrant_counts: [u64; 4],
    pub per_page_radix: BTreeMap<VPage, u64>,
    /// Keyed by the ordered pair `(lo, hi)`, `lo < hi`.
    pub per_edge_weight: BTreeMap<(VPage, VPage), u64>,
    pub per_page_quadrant: BTreeMap<VPage, Quadrant>,
}

impl AffinityProfile {
    /// Sum of the weights of all edges incident to `page`.
    pub fn incident_weight(&self, page: VPage) -> u64 {
        self.per_edge_weight
            .iter()
            .filter(|((a, b), _)| *a == page || *b == page)
            .map(|(_, w)| *w)
            .sum()
    }
}

/// Linear bin of `v` over `[0, max]` into `n` bins.
fn bin_of(v: u64, max: u64, n: usize) -> usize {
    ((v as u128 * n as u128) / (max as u128 + 1)) as usize
}

/// Builds the page co-access graph (pages touched by the same op are
/// adjacent), bins every page by radix and incident edge weight into an
/// `n_bins × n_bins` grid, and folds the grid into quadrants at bin
/// `n_bins / 2`.
pub fn affinity_analysis(trace: &OpTrace, n_bins: usize) -> Result<AffinityProfile, TraceError> {
    if n_bins < 2 {
        return Err(TraceError::InvalidParameter("n_bins must be at least 2".into()));
    }
    let mut pages: BTreeSet<VPage> = BTreeSet::new();
    let mut edges: BTreeMap<(VPage, VPage), u64> = BTreeMap::new();
    for op in &trace.ops {
        let ps = trace.op_pages(op);
        pages.extend(ps.iter().copied());
        for i in 0..ps.len() {
            for j in i + 1..ps.len() {
                let key = if ps[i] < ps[j] { (ps[i], ps[j]) } else { (ps[j], ps[i]) };
                *edges.entry(key).or_default() += 1;
            }
        }
    }

    let mut radix: BTreeMap<VPage, u64> = pages.iter().map(|p| (*p, 0)).collect();
    let mut weight: BTreeMap<VPage, u64> = pages.iter().map(|p| (*p, 0)).collect();
    for (&(a, b), &w) in &edges {
        *radix.get_mut(&a).unwrap() += 1;
        *radix.get_mut(&b).unwrap() += 1;
        *weight.get_mut(&a).unwrap() += w;
        *weight.get_mut(&b).unwrap() += w;
    }
    let max_radix = radix.values().copied().max().unwrap_or(0);
    let max_weight = weight.values().copied().max().unwrap_or(0);
    let split = n_bins / 2;

    let mut quadrant_counts = [0u64; 4];
    let mut per_page_quadrant = BTreeMap::new();
    for p in &pages {
        let high_r = bin_of(radix[p], max_radix, n_bins) >= split;
        let high_w = bin_of(weight[p], max_weight, n_bins) >= split;
        let q = match (high_r, high_w) {
            (false, false) => Quadrant::LowRadixLowWeight,
            (false, true) => Quadrant::LowRadixHighWeight,
            (true, false) => Quadrant::HighRadixLowWeight,
            (true, true) => Quadrant::HighRadixHighWeight,
        };
        quadrant_counts[q as usize] += 1;
        per_page_quadrant.insert(*p, q);
    }

    Ok(AffinityProfile {
        n_bins,
        quadrant_counts,
        per_page_radix: radix,
        per_edge_weight: edges,
        per_page_quadrant,
    })
}
