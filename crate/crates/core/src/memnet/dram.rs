use super::{CubeId, MemError};

/// Physical memory geometry. All sizes are powers of two.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DramGeometry {
    pub cubes: usize,
    pub cube_bytes: u64,
    pub vaults: usize,
    pub banks: usize,
    pub row_bytes: u64,
    pub page_size: u64,
}

impl DramGeometry {
    pub fn new(cubes: usize) -> Self {
        Self { cubes, cube_bytes: 1 << 30, vaults: 32, banks: 8, row_bytes: 256, page_size: 4096 }
    }

    pub fn validate(&self) -> Result<(), MemError> {
        let pow2 = [self.cube_bytes, self.vaults as u64, self.banks as u64, self.row_bytes, self.page_size];
        if pow2.iter().any(|v| !v.is_power_of_two()) {
            return Err(MemError::Config("cube size, vaults, banks, row and page sizes must be powers of two".into()));
        }
        if self.row_bytes * self.vaults as u64 * self.banks as u64 > self.cube_bytes || self.page_size > self.cube_bytes {
            return Err(MemError::Config("cube too small for its geometry".into()));
        }
        if self.cubes == 0 {
            return Err(MemError::Config("no cubes".into()));
        }
        Ok(())
    }

    pub fn total_bytes(&self) -> u64 {
        self.cubes as u64 * self.cube_bytes
    }

    pub fn frames_per_cube(&self) -> u64 {
        self.cube_bytes / self.page_size
    }

    pub fn total_frames(&self) -> u64 {
        self.cubes as u64 * self.frames_per_cube()
    }

    pub fn rows_per_bank(&self) -> u64 {
        self.cube_bytes / (self.row_bytes * self.vaults as u64 * self.banks as u64)
    }

    /// Home cube of a frame under the identity mapping.
    pub fn cube_of_frame(&self, frame: u64) -> CubeId {
        (frame / self.frames_per_cube()) as CubeId
    }

    /// Maps a physical address to its DRAM location. Within a cube the
    /// offset splits, from the least significant end, into column, vault,
    /// bank and row, so consecutive rows stripe across vaults first.
    pub fn dram_map(&self, paddr: u64) -> Result<DramAddr, MemError> {
        if paddr >= self.total_bytes() {
            return Err(MemError::InvalidAddress(format!(
                "{paddr:#x} beyond {:#x}",
                self.total_bytes()
            )));
        }
        let cube = (paddr / self.cube_bytes) as CubeId;
        let off = paddr % self.cube_bytes;
        let column = off % self.row_bytes;
        let rest = off / self.row_bytes;
        let vault = (rest % self.vaults as u64) as usize;
        let rest = rest / self.vaults as u64;
        let bank = (rest % self.banks as u64) as usize;
        let row = rest / self.banks as u64;
        Ok(DramAddr { cube, vault, bank, row, column })
    }

    /// Inverse of [`DramGeometry::dram_map`].
    pub fn dram_unmap(&self, a: &DramAddr) -> u64 {
        let off = ((a.row * self.banks as u64 + a.bank as u64) * self.vaults as u64 + a.vault as u64)
            * self.row_bytes
            + a.column;
        a.cube as u64 * self.cube_bytes + off
    }

    /// Locates `paddr` after applying a frame permutation.
    pub fn locate(&self, paddr: u64, mapping: &FrameMapping) -> Result<DramAddr, MemError> {
        let frame = mapping.apply(self, paddr / self.page_size);
        self.dram_map(frame * self.page_size + paddr % self.page_size)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DramAddr {
    pub cube: CubeId,
    pub vault: usize,
    pub bank: usize,
    pub row: u64,
    pub column: u64,
}

/// Physical-to-DRAM frame permutation used by epoch remapping.
///
/// The identity keeps the cube index in the high frame bits. A swap at
/// `shift` exchanges the cube-index field with the equally wide frame field
/// starting at bit `shift`, so consecutive frames spread across cubes at a
/// `2^shift` frame granularity. Every candidate is a bijection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct FrameMapping {
    pub swap_shift: Option<u32>,
}

impl FrameMapping {
    pub const IDENTITY: FrameMapping = FrameMapping { swap_shift: None };

    fn cube_bits(g: &DramGeometry) -> Option<u32> {
        g.cubes.is_power_of_two().then(|| g.cubes.trailing_zeros())
    }

    pub fn apply(&self, g: &DramGeometry, frame: u64) -> u64 {
        let Some(shift) = self.swap_shift else { return frame };
        let Some(width) = Self::cube_bits(g) else { return frame };
        let high = g.frames_per_cube().trailing_zeros();
        let mask = (1u64 << width) - 1;
        let lo = (frame >> shift) & mask;
        let hi = (frame >> high) & mask;
        let cleared = frame & !(mask << shift) & !(mask << high);
        cleared | (hi << shift) | (lo << high)
    }

    /// Cube of a physical frame under this mapping.
    pub fn cube_of_frame(&self, g: &DramGeometry, frame: u64) -> CubeId {
        g.cube_of_frame(self.apply(g, frame))
    }

    /// Up to `count` candidates: the identity followed by evenly spaced
    /// field swaps that fit below the cube field.
    pub fn candidates(g: &DramGeometry, count: usize) -> Vec<FrameMapping> {
        let mut out = vec![FrameMapping::IDENTITY];
        let (Some(width), true) = (Self::cube_bits(g), count > 1) else { return out };
        if width == 0 {
            return out;
        }
        let high = g.frames_per_cube().trailing_zeros();
        if high < width {
            return out;
        }
        let room = high - width;
        let step = (room / (count as u32 - 1).max(1)).max(1);
        let mut shift = 0;
        while out.len() < count && shift <= room {
            out.push(FrameMapping { swap_shift: Some(shift) });
            shift += step;
        }
        out
    }
}
