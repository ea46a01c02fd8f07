//! Synthetic request traces.
//!
//! HASH_CHAIN mimics a chained hash-table lookup: a pc-relative load of the
//! bucket array, a mask of the key hash, an indexed bucket load and a walk
//! down the bucket's node list comparing tags. TREE_WALK descends a
//! fixed-fanout radix tree one key digit per level.
//!
//! Both emit a little non-critical work around the lookup so a request is
//! not all pointer chasing.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use std::collections::HashMap;

use super::{AluOp, RegisterId, RequestMarker, Trace, TraceEvent, TraceRecord, KEY_ARG_REG};
use crate::error::ConfigError;

use RegisterId::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WorkloadKind {
    HashChain,
    TreeWalk,
}

impl WorkloadKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "hash_chain" => Some(WorkloadKind::HashChain),
            "tree_walk" => Some(WorkloadKind::TreeWalk),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WorkloadKind::HashChain => "hash_chain",
            WorkloadKind::TreeWalk => "tree_walk",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticWorkloadSpec {
    pub kind: WorkloadKind,
    /// Bucket count for HASH_CHAIN (power of two).
    pub buckets: u64,
    /// Fanout for TREE_WALK (power of two).
    pub fanout: u64,
    pub population: u64,
    /// Geometric parameter of the number of nodes in front of an item.
    pub chain_p: f64,
    pub zipf: f64,
    pub request_count: u64,
    pub payload_bytes: u64,
    pub header_bytes: u64,
    /// Non-critical instructions per request, split around the lookup.
    pub work_insts: u64,
}

impl Default for SyntheticWorkloadSpec {
    fn default() -> Self {
        SyntheticWorkloadSpec {
            kind: WorkloadKind::HashChain,
            buckets: 1 << 16,
            fanout: 16,
            population: 50_000,
            chain_p: 0.5,
            zipf: 0.99,
            request_count: 20_000,
            payload_bytes: 16,
            header_bytes: 48,
            work_insts: 40,
        }
    }
}

impl SyntheticWorkloadSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.population == 0 {
            return Err(ConfigError::invalid("population", "must be >= 1"));
        }
        if self.population > 1 << 26 {
            return Err(ConfigError::invalid("population", "at most 2^26 items"));
        }
        if self.request_count == 0 {
            return Err(ConfigError::invalid("request_count", "must be >= 1"));
        }
        if !(self.chain_p > 0.0 && self.chain_p <= 1.0) {
            return Err(ConfigError::invalid("chain_p", "must lie in (0, 1]"));
        }
        if !(self.zipf >= 0.0 && self.zipf.is_finite()) {
            return Err(ConfigError::invalid("zipf", "must be a finite value >= 0"));
        }
        match self.kind {
            WorkloadKind::HashChain => {
                if !self.buckets.is_power_of_two() || self.buckets > 1 << 30 {
                    return Err(ConfigError::invalid("buckets", "must be a power of two <= 2^30"));
                }
            }
            WorkloadKind::TreeWalk => {
                if !self.fanout.is_power_of_two() || !(2..=256).contains(&self.fanout) {
                    return Err(ConfigError::invalid("fanout", "must be a power of two in [2, 256]"));
                }
            }
        }
        Ok(())
    }

    pub fn packet_bytes(&self) -> u64 {
        self.payload_bytes + self.header_bytes
    }
}

/// Code addresses of the HASH_CHAIN template.
pub struct HashChainPcs;

impl HashChainPcs {
    pub const KEY_TAG: u64 = 0x41b560;
    pub const BASE_LOAD: u64 = 0x41b571;
    pub const MASK: u64 = 0x41b574;
    pub const BUCKET_LOAD: u64 = 0x41b578;
    pub const ENTER_JUMP: u64 = 0x41b57c;
    pub const NEXT_LOAD: u64 = 0x41b580;
    pub const TAG_LOAD: u64 = 0x41b589;
    pub const TAG_CMP: u64 = 0x41b58d;
    pub const EXIT_BRANCH: u64 = 0x41b590;
    pub const LOOP_JUMP: u64 = 0x41b592;
    pub const EXIT: u64 = 0x41b5b8;
    pub const WORK_BEFORE: u64 = 0x410000;
    pub const WORK_AFTER: u64 = 0x41c000;
}

/// Code addresses of the TREE_WALK template.
pub struct TreeWalkPcs;

impl TreeWalkPcs {
    pub const ROOT_LOAD: u64 = 0x420100;
    pub const COPY_ROOT: u64 = 0x420107;
    pub const COPY_KEY: u64 = 0x42010a;
    pub const DIGIT: u64 = 0x420110;
    pub const SHIFT: u64 = 0x420114;
    pub const CHILD_LOAD: u64 = 0x420118;
    pub const COPY_NODE: u64 = 0x42011d;
    pub const FLAG_LOAD: u64 = 0x420120;
    pub const DESCEND: u64 = 0x420123;
    pub const VALUE_LOAD: u64 = 0x420125;
    pub const RESULT: u64 = 0x420129;
    pub const WORK_BEFORE: u64 = 0x41f000;
    pub const WORK_AFTER: u64 = 0x421000;
}

const GLOBAL_SLOT: u64 = 0x78_0200;
const BUCKET_BASE: u64 = 0x10_0000_0000;
const NODE_BASE: u64 = 0x20_0000_0000;
const STACK_TOP: u64 = 0x7fff_ff00_0000;
// Node structs start 32 bytes into a 128-byte slot, so the next pointer
// and the tag land in different cache blocks.
const NODE_BYTES: u64 = 128;
const NODE_STRUCT_OFF: u64 = 32;
const NEXT_OFF: i32 = 0x10;
const TAG_OFF: i32 = 0x34;

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Inverse-CDF Zipf sampler over ranks 0..n. A larger exponent maps every
/// uniform draw to the same or a more popular rank.
struct ZipfTable {
    cdf: Vec<f64>,
}

impl ZipfTable {
    fn new(n: u64, s: f64) -> Self {
        let mut cdf = Vec::with_capacity(n as usize);
        let mut acc = 0.0;
        for k in 1..=n {
            acc += (k as f64).powf(-s);
            cdf.push(acc);
        }
        for c in cdf.iter_mut() {
            *c /= acc;
        }
        ZipfTable { cdf }
    }

    fn rank(&self, u: f64) -> usize {
        self.cdf.partition_point(|&c| c < u).min(self.cdf.len() - 1)
    }
}

struct Emitter {
    events: Vec<TraceEvent>,
    regs: [u64; RegisterId::COUNT],
}

impl Emitter {
    fn push(&mut self, r: TraceRecord) {
        if let (Some(d), Some(v)) = (r.dest, r.value) {
            self.regs[d.index()] = v;
        }
        self.events.push(TraceEvent::Record(r));
    }

    fn begin(&mut self, id: u64, key_hash: u64) {
        self.regs[KEY_ARG_REG.index()] = key_hash;
        self.events.push(TraceEvent::Marker(RequestMarker::begin(id, key_hash)));
    }

    fn end(&mut self, id: u64) {
        self.events.push(TraceEvent::Marker(RequestMarker::end(id)));
    }

    fn load(&mut self, pc: u64, dest: RegisterId, base: RegisterId, index: Option<RegisterId>, scale: u8, disp: i32, value: u64) {
        let mut rec = TraceRecord::load(pc, dest, Some(base), index, scale, disp, 0, value);
        rec.eff_addr = rec.compute_addr(|r| Some(self.regs[r.index()]));
        self.push(rec);
    }

    fn alu_imm(&mut self, pc: u64, op: AluOp, dest: RegisterId, src: RegisterId, imm: i32) {
        let v = op.eval(self.regs[src.index()], imm as i64 as u64);
        self.push(TraceRecord::alu(pc, op, Some(dest), Some(src), None, imm, v));
    }

    fn flags(&mut self, pc: u64, op: AluOp, a: RegisterId, b: RegisterId) {
        self.push(TraceRecord::alu(pc, op, None, Some(a), Some(b), 0, None));
    }

    fn regmove(&mut self, pc: u64, dest: RegisterId, src: RegisterId) {
        let v = self.regs[src.index()];
        self.push(TraceRecord::regmove(pc, dest, src, v));
    }

    /// Non-critical filler: register arithmetic on r10..r14 with an
    /// occasional stack load. `moves` swaps half the arithmetic for
    /// register moves.
    fn work(&mut self, base_pc: u64, count: u64, salt: u64, moves: bool) {
        const SCRATCH: [RegisterId; 5] = [R10, R11, R12, R13, R14];
        const OPS: [AluOp; 4] = [AluOp::Add, AluOp::Xor, AluOp::Shl, AluOp::MovImm];
        for i in 0..count {
            let pc = base_pc + 4 * i;
            if i == 0 {
                self.push(TraceRecord::other(pc, Some(Rsp), Some(STACK_TOP)));
                continue;
            }
            let d = SCRATCH[(i % 5) as usize];
            let s = SCRATCH[((i + 2) % 5) as usize];
            if i % 8 == 7 {
                let slot = (i / 8 % 4) as i32 * 8 + 0x20;
                let v = splitmix64(salt ^ i);
                self.load(pc, d, Rsp, None, 1, slot, v);
            } else if moves && i % 2 == 1 {
                self.regmove(pc, d, s);
            } else {
                let imm = ((splitmix64(salt.wrapping_add(i)) & 0x3f) as i32) + 1;
                self.alu_imm(pc, OPS[(i % 4) as usize], d, s, imm);
            }
        }
    }
}

/// Deterministically synthesizes a request trace from `spec` and `seed`.
pub fn generate_trace(spec: &SyntheticWorkloadSpec, seed: u64) -> Result<Trace, ConfigError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zipf = ZipfTable::new(spec.population, spec.zipf);
    let mut popularity: Vec<u64> = (0..spec.population).collect();
    popularity.shuffle(&mut rng);
    match spec.kind {
        WorkloadKind::HashChain => Ok(hash_chain(spec, seed, &mut rng, &zipf, &popularity)),
        WorkloadKind::TreeWalk => Ok(tree_walk(spec, seed, &mut rng, &zipf, &popularity)),
    }
}

fn item_hash(seed: u64, key: u64) -> u64 {
    splitmix64(key ^ splitmix64(seed ^ 0x6b65_7973))
}

fn hash_chain(spec: &SyntheticWorkloadSpec, seed: u64, rng: &mut ChaCha8Rng, zipf: &ZipfTable, popularity: &[u64]) -> Trace {
    let mask = spec.buckets - 1;
    let geo = Geometric::new(spec.chain_p).expect("chain_p validated");

    // Node ids: items are 0..population, fillers follow.
    let mut chains: HashMap<u64, Vec<u64>> = HashMap::new();
    let mut item_pos: Vec<(u64, usize)> = Vec::with_capacity(spec.population as usize);
    let mut next_filler = spec.population;
    for key in 0..spec.population {
        let bucket = item_hash(seed, key) & mask;
        let chain = chains.entry(bucket).or_default();
        let fillers = geo.sample(rng).min(4096);
        for _ in 0..fillers {
            chain.push(next_filler);
            next_filler += 1;
        }
        item_pos.push((bucket, chain.len()));
        chain.push(key);
    }
    let mut slots: Vec<u64> = (0..next_filler).collect();
    slots.shuffle(rng);
    let addr = |node: u64| NODE_BASE + slots[node as usize] * NODE_BYTES + NODE_STRUCT_OFF;
    let tag = |node: u64| {
        let t = splitmix64(node ^ 0x7461_6773);
        if node < spec.population {
            t | 1
        } else {
            t & !1
        }
    };

    let mut em = Emitter { events: Vec::new(), regs: [0; RegisterId::COUNT] };
    let before = spec.work_insts / 2;
    let after = spec.work_insts - before;
    for id in 0..spec.request_count {
        let key = popularity[zipf.rank(rng.random::<f64>())];
        let hash = item_hash(seed, key);
        let (bucket, depth) = item_pos[key as usize];
        let chain = &chains[&bucket];

        em.begin(id, hash);
        em.work(HashChainPcs::WORK_BEFORE, before, id, false);
        em.push(TraceRecord::other(HashChainPcs::KEY_TAG, Some(Rbp), Some(tag(key))));
        em.load(HashChainPcs::BASE_LOAD, Rax, Rip, None, 1, (GLOBAL_SLOT - HashChainPcs::BASE_LOAD) as i32, BUCKET_BASE);
        em.alu_imm(HashChainPcs::MASK, AluOp::And, Rdx, Rdx, mask as i32);
        em.load(HashChainPcs::BUCKET_LOAD, Rbx, Rax, Some(Rdx), 8, 0, addr(chain[0]));
        em.push(TraceRecord::branch(HashChainPcs::ENTER_JUMP, HashChainPcs::TAG_LOAD, true));
        for j in 0..=depth {
            if j > 0 {
                em.load(HashChainPcs::NEXT_LOAD, Rbx, Rbx, None, 1, NEXT_OFF, addr(chain[j]));
            }
            em.load(HashChainPcs::TAG_LOAD, Rax, Rbx, None, 1, TAG_OFF, tag(chain[j]));
            em.flags(HashChainPcs::TAG_CMP, AluOp::Cmp, Rbp, Rax);
            em.push(TraceRecord::branch(HashChainPcs::EXIT_BRANCH, HashChainPcs::EXIT, j == depth));
            if j < depth {
                em.push(TraceRecord::branch(HashChainPcs::LOOP_JUMP, HashChainPcs::NEXT_LOAD, true));
            }
        }
        em.work(HashChainPcs::WORK_AFTER, after, id ^ 0x5a5a, false);
        em.end(id);
    }
    Trace::new(em.events)
}

fn tree_walk(spec: &SyntheticWorkloadSpec, _seed: u64, rng: &mut ChaCha8Rng, zipf: &ZipfTable, popularity: &[u64]) -> Trace {
    let fanout = spec.fanout;
    let bits = fanout.trailing_zeros();
    let mut levels = 1u32;
    while fanout.saturating_pow(levels) < spec.population {
        levels += 1;
    }
    let node_bytes = (8 + 8 * fanout).div_ceil(64) * 64;

    // Node ids keyed by (depth, key prefix); depth `levels` holds leaves.
    let mut ids: HashMap<(u32, u64), u64> = HashMap::new();
    ids.insert((0, 0), 0);
    for key in 0..spec.population {
        for depth in 1..=levels {
            let prefix = key & ((1u64 << (bits * depth)) - 1);
            let n = ids.len() as u64;
            ids.entry((depth, prefix)).or_insert(n);
        }
    }
    let mut slots: Vec<u64> = (0..ids.len() as u64).collect();
    slots.shuffle(rng);
    let addr = |depth: u32, prefix: u64| NODE_BASE + slots[ids[&(depth, prefix)] as usize] * node_bytes;
    let root = addr(0, 0);

    let mut em = Emitter { events: Vec::new(), regs: [0; RegisterId::COUNT] };
    let before = spec.work_insts / 2;
    let after = spec.work_insts - before;
    for id in 0..spec.request_count {
        let key = popularity[zipf.rank(rng.random::<f64>())];
        em.begin(id, key);
        em.work(TreeWalkPcs::WORK_BEFORE, before, id, true);
        em.load(TreeWalkPcs::ROOT_LOAD, Rax, Rip, None, 1, (GLOBAL_SLOT - TreeWalkPcs::ROOT_LOAD) as i32, root);
        em.regmove(TreeWalkPcs::COPY_ROOT, Rbx, Rax);
        em.regmove(TreeWalkPcs::COPY_KEY, R9, Rdx);
        for depth in 1..=levels {
            em.alu_imm(TreeWalkPcs::DIGIT, AluOp::And, Rcx, R9, (fanout - 1) as i32);
            em.alu_imm(TreeWalkPcs::SHIFT, AluOp::Shr, R9, R9, bits as i32);
            let child = addr(depth, key & ((1u64 << (bits * depth)) - 1));
            em.load(TreeWalkPcs::CHILD_LOAD, Rbx, Rbx, Some(Rcx), 8, 8, child);
            em.regmove(TreeWalkPcs::COPY_NODE, Rdi, Rbx);
            let leaf = depth == levels;
            em.load(TreeWalkPcs::FLAG_LOAD, Rax, Rdi, None, 1, 0, leaf as u64);
            em.push(TraceRecord::branch(TreeWalkPcs::DESCEND, TreeWalkPcs::DIGIT, !leaf));
        }
        em.load(TreeWalkPcs::VALUE_LOAD, Rsi, Rbx, None, 1, 8, splitmix64(key));
        em.regmove(TreeWalkPcs::RESULT, Rax, Rsi);
        em.work(TreeWalkPcs::WORK_AFTER, after, id ^ 0x5a5a, true);
        em.end(id);
    }
    Trace::new(em.events)
}
