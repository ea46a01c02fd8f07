//! Per-core L1/L2, address-sliced shared LLC, windowed DRAM and the PCIe
//! link used by NIC-issued steering fills.
//!
//! The hierarchy is inclusive: a block in L1 is also in that core's L2 and
//! in its LLC slice. Evictions back-invalidate the levels above.

mod cache;
mod dram;
mod pcie;

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

pub use cache::SetAssocCache;
pub use dram::{Dram, DramConfig};
pub use pcie::{PcieConfig, PcieLedger, PcieUsage};

use crate::time::{ns, Time};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    L1,
    L2,
    Llc,
    Dram,
}

impl Level {
    pub fn name(self) -> &'static str {
        match self {
            Level::L1 => "L1",
            Level::L2 => "L2",
            Level::Llc => "LLC",
            Level::Dram => "DRAM",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CacheConfig {
    pub l1_bytes: u64,
    pub l1_ways: usize,
    pub l1_latency: u64,
    pub l2_bytes: u64,
    pub l2_ways: usize,
    pub l2_latency: u64,
    pub llc_bytes_per_core: u64,
    pub llc_ways: usize,
    pub llc_latency: u64,
    pub block_bytes: u64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            l1_bytes: 32 << 10,
            l1_ways: 8,
            l1_latency: 2,
            l2_bytes: 256 << 10,
            l2_ways: 8,
            l2_latency: 3,
            llc_bytes_per_core: 1 << 20,
            llc_ways: 16,
            llc_latency: 30,
            block_bytes: 64,
        }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<(), crate::ConfigError> {
        use crate::ConfigError;
        if !self.block_bytes.is_power_of_two() {
            return Err(ConfigError::invalid("memsys.block_bytes", "must be a power of two"));
        }
        for (name, bytes, ways) in [
            ("memsys.l1", self.l1_bytes, self.l1_ways),
            ("memsys.l2", self.l2_bytes, self.l2_ways),
            ("memsys.llc", self.llc_bytes_per_core, self.llc_ways),
        ] {
            let blocks = bytes / self.block_bytes;
            if !bytes.is_power_of_two() || bytes < self.block_bytes {
                return Err(ConfigError::invalid(format!("{name}_bytes"), "must be a power-of-two multiple of block_bytes"));
            }
            if ways == 0 || !blocks.is_multiple_of(ways as u64) {
                return Err(ConfigError::invalid(format!("{name}_ways"), "must divide the block count"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccessResult {
    pub level_hit: Level,
    pub latency_cycles: u64,
    /// Cycles spent waiting for a DRAM contention window (part of latency).
    pub contention_cycles: u64,
    pub fills: Vec<(Level, usize, usize)>,
}

/// Event counters for power and bandwidth reporting.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MemStats {
    pub core_accesses: u64,
    pub l1_accesses: u64,
    pub l1_misses: u64,
    pub l2_accesses: u64,
    pub llc_accesses: u64,
    pub core_dram_accesses: u64,
    pub nic_fills: u64,
    pub nic_fill_dram: u64,
}

#[derive(Clone, Debug)]
struct CoreCaches {
    l1: SetAssocCache,
    l2: SetAssocCache,
    llc: SetAssocCache,
}

#[derive(Clone, Debug)]
pub struct MemorySystem {
    cfg: CacheConfig,
    pcie_cfg: PcieConfig,
    cycle: Time,
    dram_cycles: u64,
    cores: Vec<CoreCaches>,
    pub dram: Dram,
    pending: BinaryHeap<Reverse<(Time, u64, usize, u64)>>,
    /// Earliest outstanding fill per (core, block).
    pending_by_block: HashMap<(usize, u64), Time>,
    seq: u64,
    pub stats: MemStats,
    pub pcie: PcieLedger,
}

impl MemorySystem {
    pub fn new(cfg: &CacheConfig, dram: &DramConfig, pcie: &PcieConfig, cores: usize, cycle: Time) -> Self {
        let n = cores.max(1) as u64;
        let caches = (0..cores.max(1))
            .map(|_| CoreCaches {
                l1: SetAssocCache::new(cfg.l1_bytes, cfg.l1_ways, cfg.block_bytes),
                l2: SetAssocCache::new(cfg.l2_bytes, cfg.l2_ways, cfg.block_bytes),
                llc: SetAssocCache::with_stride(cfg.llc_bytes_per_core, cfg.llc_ways, cfg.block_bytes, n),
            })
            .collect();
        let dram = Dram::new(dram);
        MemorySystem {
            dram_cycles: dram.latency().div_ceil(cycle),
            cfg: cfg.clone(),
            pcie_cfg: pcie.clone(),
            cycle,
            cores: caches,
            dram,
            pending: BinaryHeap::new(),
            pending_by_block: HashMap::new(),
            seq: 0,
            stats: MemStats::default(),
            pcie: PcieLedger::default(),
        }
    }

    pub fn cache_config(&self) -> &CacheConfig {
        &self.cfg
    }

    pub fn pcie_config(&self) -> &PcieConfig {
        &self.pcie_cfg
    }

    pub fn cycle(&self) -> Time {
        self.cycle
    }

    pub fn num_cores(&self) -> usize {
        self.cores.len()
    }

    pub fn dram_cycles(&self) -> u64 {
        self.dram_cycles
    }

    /// Latency of an access that misses everywhere and meets no contention.
    pub fn cold_miss_cycles(&self) -> u64 {
        self.cfg.l1_latency + self.cfg.l2_latency + self.cfg.llc_latency + self.dram_cycles
    }

    /// Configured latency contributed by `level` to an access served there.
    pub fn level_cycles(&self, level: Level) -> u64 {
        match level {
            Level::L1 => self.cfg.l1_latency,
            Level::L2 => self.cfg.l2_latency,
            Level::Llc => self.cfg.llc_latency,
            Level::Dram => self.dram_cycles,
        }
    }

    pub fn block_of(&self, addr: u64) -> u64 {
        addr / self.cfg.block_bytes
    }

    fn slice_of(&self, block: u64) -> usize {
        (block % self.cores.len() as u64) as usize
    }

    fn fill_llc(&mut self, block: u64, fills: &mut Vec<(Level, usize, usize)>) {
        let s = self.slice_of(block);
        let ((set, way), evicted) = self.cores[s].llc.insert(block);
        fills.push((Level::Llc, set, way));
        if let Some(victim) = evicted {
            for c in self.cores.iter_mut() {
                c.l2.invalidate(victim);
                c.l1.invalidate(victim);
            }
        }
    }

    fn fill_l2(&mut self, core: usize, block: u64, fills: &mut Vec<(Level, usize, usize)>) {
        let ((set, way), evicted) = self.cores[core].l2.insert(block);
        fills.push((Level::L2, set, way));
        if let Some(victim) = evicted {
            self.cores[core].l1.invalidate(victim);
        }
    }

    fn fill_l1(&mut self, core: usize, block: u64, fills: &mut Vec<(Level, usize, usize)>) {
        let ((set, way), _) = self.cores[core].l1.insert(block);
        fills.push((Level::L1, set, way));
    }

    fn install_fill(&mut self, core: usize, block: u64) {
        let mut fills = Vec::new();
        self.fill_llc(block, &mut fills);
        self.fill_l2(core, block, &mut fills);
        self.fill_l1(core, block, &mut fills);
    }

    /// Applies steering fills that completed at or before `now`.
    pub fn apply_pending(&mut self, now: Time) {
        while let Some(&Reverse((t, _, core, block))) = self.pending.peek() {
            if t > now {
                break;
            }
            self.pending.pop();
            if self.pending_by_block.get(&(core, block)) == Some(&t) {
                self.pending_by_block.remove(&(core, block));
                self.install_fill(core, block);
            }
        }
    }

    /// Installs the fill for this one block early when it has completed by
    /// `now`, leaving other pending fills to [`apply_pending`].
    ///
    /// [`apply_pending`]: MemorySystem::apply_pending
    fn apply_pending_block(&mut self, core: usize, block: u64, now: Time) {
        if let Some(&t) = self.pending_by_block.get(&(core, block)) {
            if t <= now {
                self.pending_by_block.remove(&(core, block));
                self.install_fill(core, block);
            }
        }
    }

    pub fn pending_fills(&self) -> usize {
        self.pending_by_block.len()
    }

    /// A demand access from `core` at time `now`.
    pub fn core_access(&mut self, core: usize, addr: u64, _is_write: bool, now: Time) -> AccessResult {
        let block = self.block_of(addr);
        self.apply_pending_block(core, block, now);
        let cfg = &self.cfg;
        let (l1, l2, llc) = (cfg.l1_latency, cfg.l2_latency, cfg.llc_latency);
        self.stats.core_accesses += 1;
        self.stats.l1_accesses += 1;
        if self.cores[core].l1.touch(block) {
            return AccessResult { level_hit: Level::L1, latency_cycles: l1, contention_cycles: 0, fills: Vec::new() };
        }
        self.stats.l1_misses += 1;
        self.stats.l2_accesses += 1;
        let mut fills = Vec::new();
        if self.cores[core].l2.touch(block) {
            self.fill_l1(core, block, &mut fills);
            return AccessResult { level_hit: Level::L2, latency_cycles: l1 + l2, contention_cycles: 0, fills };
        }
        self.stats.llc_accesses += 1;
        let slice = self.slice_of(block);
        if self.cores[slice].llc.touch(block) {
            self.fill_l2(core, block, &mut fills);
            self.fill_l1(core, block, &mut fills);
            return AccessResult { level_hit: Level::Llc, latency_cycles: l1 + l2 + llc, contention_cycles: 0, fills };
        }
        self.stats.core_dram_accesses += 1;
        let arrive = now + (l1 + l2 + llc) * self.cycle;
        let start = self.dram.schedule(arrive);
        let contention = (start - arrive).div_ceil(self.cycle);
        self.fill_llc(block, &mut fills);
        self.fill_l2(core, block, &mut fills);
        self.fill_l1(core, block, &mut fills);
        AccessResult {
            level_hit: Level::Dram,
            latency_cycles: l1 + l2 + llc + self.dram_cycles + contention,
            contention_cycles: contention,
            fills,
        }
    }

    /// A NIC-issued read whose block is installed into `core`'s private
    /// caches on completion. Returns the completion time.
    pub fn nic_steering_fill(&mut self, core: usize, addr: u64, now: Time) -> Time {
        let block = self.block_of(addr);
        let one_way = ns(self.pcie_cfg.one_way_latency_ns);
        self.stats.nic_fills += 1;
        self.stats.llc_accesses += 1;
        self.pcie.request_bytes += self.pcie_cfg.request_header_bytes;
        self.pcie.data_bytes += self.pcie_cfg.completion_header_bytes + self.cfg.block_bytes;
        let at_llc = now + one_way;
        let llc_done = at_llc + self.cfg.llc_latency * self.cycle;
        let slice = self.slice_of(block);
        let data_ready = if self.cores[slice].llc.contains(block) {
            llc_done
        } else {
            self.stats.nic_fill_dram += 1;
            self.dram.access(llc_done)
        };
        let done = data_ready + one_way;
        self.seq += 1;
        self.pending.push(Reverse((done, self.seq, core, block)));
        let e = self.pending_by_block.entry((core, block)).or_insert(done);
        *e = (*e).min(done);
        done
    }

    pub fn l1_contains(&self, core: usize, addr: u64) -> bool {
        self.cores[core].l1.contains(self.block_of(addr))
    }

    pub fn l2_contains(&self, core: usize, addr: u64) -> bool {
        self.cores[core].l2.contains(self.block_of(addr))
    }

    pub fn llc_contains(&self, addr: u64) -> bool {
        let b = self.block_of(addr);
        self.cores[self.slice_of(b)].llc.contains(b)
    }

    pub fn l1(&self, core: usize) -> &SetAssocCache {
        &self.cores[core].l1
    }

    /// Structural inclusion check: L1 within L2 within the LLC.
    pub fn check_inclusion(&self) -> Result<(), String> {
        for (i, c) in self.cores.iter().enumerate() {
            for b in c.l1.blocks() {
                if !c.l2.contains(b) {
                    return Err(format!("core {i}: L1 block {b:#x} missing from L2"));
                }
            }
            for b in c.l2.blocks() {
                let s = self.slice_of(b);
                if !self.cores[s].llc.contains(b) {
                    return Err(format!("core {i}: L2 block {b:#x} missing from LLC slice {s}"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys(cores: usize) -> MemorySystem {
        MemorySystem::new(&CacheConfig::default(), &DramConfig::default(), &PcieConfig::default(), cores, 250)
    }

    #[test]
    fn cold_then_warm() {
        let mut m = sys(1);
        let r = m.core_access(0, 0x1234, false, 0);
        assert_eq!((r.level_hit, r.latency_cycles), (Level::Dram, 215));
        let r = m.core_access(0, 0x1200, false, 100_000);
        assert_eq!((r.level_hit, r.latency_cycles), (Level::L1, 2));
    }

    #[test]
    fn defaults_validate() {
        CacheConfig::default().validate().unwrap();
        let bad = CacheConfig { l1_ways: 7, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
