use super::{schedule_op, ComputeRemapTable, OpPlacement, OperandLoc, Technique};
use crate::memnet::{DramGeometry, FrameMapping, MeshConfig};
use crate::trace::VPage;

/// Bytes moved per remote operand or forwarded result.
const OPERAND_BYTES: u64 = 64;

/// One profiled op: the physical frames of dest, src1 and src2.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TomSample {
    pub dest: u64,
    pub src1: u64,
    pub src2: Option<u64>,
}

/// Bytes × hops of operand and result movement the window would incur
/// under `mapping`.
pub fn tom_score(
    window: &[TomSample],
    mapping: &FrameMapping,
    geom: &DramGeometry,
    mesh: &MeshConfig,
    technique: Technique,
) -> u64 {
    let empty = ComputeRemapTable::new(0);
    let loc = |frame: u64| OperandLoc {
        page: VPage { pid: 0, vpn: frame },
        cube: mapping.cube_of_frame(geom, frame),
    };
    window
        .iter()
        .map(|s| {
            let p = OpPlacement { dest: loc(s.dest), src1: loc(s.src1), src2: s.src2.map(loc) };
            let sched = schedule_op(&p, technique, &empty);
            let fetch: u64 = sched
                .fetch
                .iter()
                .map(|&(_, c)| u64::from(mesh.manhattan(c, sched.compute_cube)))
                .sum();
            let fwd = sched.forward_to.map_or(0, |d| u64::from(mesh.manhattan(sched.compute_cube, d)));
            (fetch + fwd) * OPERAND_BYTES
        })
        .sum()
}

/// Index of the least-movement candidate; ties go to the lowest index. An
/// empty window keeps `current`.
pub fn tom_epoch_select(
    window: &[TomSample],
    candidates: &[FrameMapping],
    geom: &DramGeometry,
    mesh: &MeshConfig,
    technique: Technique,
    current: usize,
) -> usize {
    if window.is_empty() || candidates.is_empty() {
        return current;
    }
    candidates
        .iter()
        .enumerate()
        .map(|(i, m)| (tom_score(window, m, geom, mesh, technique), i))
        .min()
        .map(|(_, i)| i)
        .unwrap_or(current)
}
