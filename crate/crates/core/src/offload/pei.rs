/// Cache-line key for `vaddr` of process `pid`.
pub fn line_key(pid: u32, vaddr: u64, line_bytes: u64) -> u64 {
    (u64::from(pid) << 48) | (vaddr / line_bytes)
}

/// Per-core set-associative LRU cache with a miss-status holding register
/// file. Only tags are modeled.
#[derive(Clone, Debug)]
pub struct HostCache {
    line_bytes: u64,
    ways: usize,
    /// Per set: `(tag, last use)`.
    sets: Vec<Vec<(u64, u64)>>,
    clock: u64,
    mshr_capacity: usize,
    mshr_used: usize,
    pub hits: u64,
    pub misses: u64,
}

impl HostCache {
    pub fn new(bytes: u64, line_bytes: u64, ways: usize, mshr_capacity: usize) -> Self {
        let n_sets = (bytes / line_bytes / ways as u64).max(1) as usize;
        Self {
            line_bytes,
            ways,
            sets: vec![Vec::with_capacity(ways); n_sets],
            clock: 0,
            mshr_capacity,
            mshr_used: 0,
            hits: 0,
            misses: 0,
        }
    }

    /// 32 KiB, 64-byte lines, 8 ways, 16 MSHRs.
    pub fn default_core() -> Self {
        Self::new(32 * 1024, 64, 8, 16)
    }

    pub fn line_bytes(&self) -> u64 {
        self.line_bytes
    }

    fn set_of(&self, line: u64) -> usize {
        (line % self.sets.len() as u64) as usize
    }

    pub fn probe(&self, line: u64) -> bool {
        self.sets[self.set_of(line)].iter().any(|(t, _)| *t == line)
    }

    /// Updates recency on a hit.
    pub fn access(&mut self, line: u64) -> bool {
        self.clock += 1;
        let now = self.clock;
        let s = self.set_of(line);
        match self.sets[s].iter_mut().find(|(t, _)| *t == line) {
            Some(entry) => {
                entry.1 = now;
                self.hits += 1;
                true
            }
            None => {
                self.misses += 1;
                false
            }
        }
    }

    /// Installs `line`, evicting the least recently used way if needed.
    pub fn fill(&mut self, line: u64) {
        self.clock += 1;
        let now = self.clock;
        let s = self.set_of(line);
        let ways = self.ways;
        let set = &mut self.sets[s];
        if let Some(entry) = set.iter_mut().find(|(t, _)| *t == line) {
            entry.1 = now;
            return;
        }
        if set.len() >= ways {
            let lru = set.iter().enumerate().min_by_key(|(_, (_, u))| *u).map(|(i, _)| i).unwrap();
            set.swap_remove(lru);
        }
        set.push((line, now));
    }

    pub fn mshr_free(&self) -> usize {
        self.mshr_capacity - self.mshr_used
    }

    pub fn mshr_in_use(&self) -> usize {
        self.mshr_used
    }

    pub fn mshr_alloc(&mut self) -> bool {
        if self.mshr_used < self.mshr_capacity {
            self.mshr_used += 1;
            true
        } else {
            false
        }
    }

    pub fn mshr_release(&mut self) {
        debug_assert!(self.mshr_used > 0);
        self.mshr_used = self.mshr_used.saturating_sub(1);
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PeiDecision {
    /// Run on the host; the listed operand positions missed and are fetched
    /// through the memory controller (one MSHR each, already allocated).
    HostExecute { misses: Vec<usize> },
    Offload,
    /// Not enough MSHRs for the misses; retry later.
    Stall,
}

/// Probes every operand line. Any hit sends the op to the host. When the op
/// is offloaded its lines are installed anyway: the cache doubles as the
/// locality monitor that steers later ops on the same lines to the host.
pub fn pei_host_filter(lines: &[u64], cache: &mut HostCache) -> PeiDecision {
    let hit: Vec<bool> = lines.iter().map(|&l| cache.probe(l)).collect();
    if !hit.iter().any(|&h| h) {
        for &l in lines {
            cache.access(l);
            cache.fill(l);
        }
        return PeiDecision::Offload;
    }
    let misses: Vec<usize> = (0..lines.len()).filter(|&i| !hit[i]).collect();
    if misses.len() > cache.mshr_free() {
        return PeiDecision::Stall;
    }
    for (i, &l) in lines.iter().enumerate() {
        cache.access(l);
        if !hit[i] {
            assert!(cache.mshr_alloc());
        }
    }
    PeiDecision::HostExecute { misses }
}
