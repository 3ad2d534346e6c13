use std::collections::BTreeSet;

use super::{CubeId, DramAddr, MemError};

/// DRAM timing at the network clock.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DramTiming {
    pub row_hit: u64,
    pub row_miss: u64,
    /// Vault crossbar arbitration.
    pub crossbar: u64,
    /// Cycles a bank stays busy for a row hit (data burst).
    pub burst: u64,
}

impl Default for DramTiming {
    fn default() -> Self {
        Self { row_hit: 18, row_miss: 42, crossbar: 1, burst: 4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AccessResult {
    pub latency: u64,
    pub hit: bool,
}

#[derive(Clone, Debug, Default)]
struct Bank {
    open_row: Option<u64>,
    free_at: u64,
}

/// Bounded table of outstanding NMP ops on a cube's logic die.
#[derive(Clone, Debug)]
pub struct NmpTable {
    capacity: usize,
    entries: BTreeSet<u64>,
}

impl NmpTable {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, entries: BTreeSet::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn occupancy(&self) -> usize {
        self.entries.len()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    /// Accepts the op unless the table is full (or it is already present).
    pub fn insert(&mut self, op: u64) -> bool {
        !self.is_full() && self.entries.insert(op)
    }

    pub fn retire(&mut self, op: u64) -> Result<(), MemError> {
        if self.entries.remove(&op) {
            Ok(())
        } else {
            Err(MemError::Consistency(format!("retire of absent NMP entry {op}")))
        }
    }
}

/// One memory cube: `vaults × banks` open-row state plus the NMP-op table.
#[derive(Clone, Debug)]
pub struct CubeState {
    pub cube_id: CubeId,
    banks_per_vault: usize,
    banks: Vec<Bank>,
    timing: DramTiming,
    pub nmp_table: NmpTable,
    pub row_buffer_hits: u64,
    pub row_buffer_accesses: u64,
}

impl CubeState {
    pub fn new(cube_id: CubeId, vaults: usize, banks_per_vault: usize, timing: DramTiming, nmp_entries: usize) -> Self {
        Self {
            cube_id,
            banks_per_vault,
            banks: vec![Bank::default(); vaults * banks_per_vault],
            timing,
            nmp_table: NmpTable::new(nmp_entries),
            row_buffer_hits: 0,
            row_buffer_accesses: 0,
        }
    }

    pub fn vaults(&self) -> usize {
        self.banks.len() / self.banks_per_vault
    }

    fn bank_index(&self, vault: usize, bank: usize) -> Result<usize, MemError> {
        if vault >= self.vaults() || bank >= self.banks_per_vault {
            return Err(MemError::InvalidAddress(format!(
                "vault {vault} bank {bank} outside {}x{}",
                self.vaults(),
                self.banks_per_vault
            )));
        }
        Ok(vault * self.banks_per_vault + bank)
    }

    /// Open-page access: a hit iff the bank's open row is `row`. The row is
    /// left open.
    pub fn cube_access(&mut self, vault: usize, bank: usize, row: u64) -> Result<AccessResult, MemError> {
        let i = self.bank_index(vault, bank)?;
        let b = &mut self.banks[i];
        let hit = b.open_row == Some(row);
        b.open_row = Some(row);
        self.row_buffer_accesses += 1;
        if hit {
            self.row_buffer_hits += 1;
        }
        let latency = if hit { self.timing.row_hit } else { self.timing.row_miss };
        Ok(AccessResult { latency, hit })
    }

    /// Queues an access behind earlier ones to the same bank and returns the
    /// cycle its data is ready.
    pub fn schedule_access(&mut self, now: u64, addr: &DramAddr) -> Result<(u64, bool), MemError> {
        let i = self.bank_index(addr.vault, addr.bank)?;
        let start = (now + self.timing.crossbar).max(self.banks[i].free_at);
        let r = self.cube_access(addr.vault, addr.bank, addr.row)?;
        let occupancy = if r.hit {
            self.timing.burst
        } else {
            self.timing.row_miss - self.timing.row_hit + self.timing.burst
        };
        self.banks[i].free_at = start + occupancy;
        Ok((start + r.latency, r.hit))
    }

    pub fn row_hit_rate(&self) -> Option<f64> {
        (self.row_buffer_accesses > 0).then(|| self.row_buffer_hits as f64 / self.row_buffer_accesses as f64)
    }
}
