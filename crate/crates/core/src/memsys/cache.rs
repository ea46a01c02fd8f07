/// One set-associative cache array with true LRU (per-way use stamps).
#[derive(Clone, Debug)]
pub struct SetAssocCache {
    sets: usize,
    ways: usize,
    tags: Vec<Option<u64>>,
    stamps: Vec<u64>,
    clock: u64,
    /// Blocks are divided by this before set indexing (LLC slices).
    stride: u64,
}

impl SetAssocCache {
    pub fn new(bytes: u64, ways: usize, block_bytes: u64) -> Self {
        Self::with_stride(bytes, ways, block_bytes, 1)
    }

    pub fn with_stride(bytes: u64, ways: usize, block_bytes: u64, stride: u64) -> Self {
        let blocks = (bytes / block_bytes) as usize;
        let sets = (blocks / ways).max(1);
        SetAssocCache {
            sets,
            ways,
            tags: vec![None; sets * ways],
            stamps: vec![0; sets * ways],
            clock: 0,
            stride: stride.max(1),
        }
    }

    pub fn sets(&self) -> usize {
        self.sets
    }

    pub fn ways(&self) -> usize {
        self.ways
    }

    pub fn set_of(&self, block: u64) -> usize {
        ((block / self.stride) % self.sets as u64) as usize
    }

    fn find(&self, block: u64) -> Option<usize> {
        let base = self.set_of(block) * self.ways;
        (base..base + self.ways).find(|&i| self.tags[i] == Some(block))
    }

    pub fn contains(&self, block: u64) -> bool {
        self.find(block).is_some()
    }

    /// Hit test that refreshes the block's LRU position.
    pub fn touch(&mut self, block: u64) -> bool {
        match self.find(block) {
            Some(i) => {
                self.clock += 1;
                self.stamps[i] = self.clock;
                true
            }
            None => false,
        }
    }

    /// Installs `block` as most recently used. Returns `(set, way)` and the
    /// block evicted to make room, if any.
    pub fn insert(&mut self, block: u64) -> ((usize, usize), Option<u64>) {
        let set = self.set_of(block);
        let base = set * self.ways;
        self.clock += 1;
        if let Some(i) = self.find(block) {
            self.stamps[i] = self.clock;
            return ((set, i - base), None);
        }
        let victim = (base..base + self.ways)
            .find(|&i| self.tags[i].is_none())
            .unwrap_or_else(|| (base..base + self.ways).min_by_key(|&i| self.stamps[i]).unwrap());
        let evicted = self.tags[victim].replace(block);
        self.stamps[victim] = self.clock;
        ((set, victim - base), evicted)
    }

    pub fn invalidate(&mut self, block: u64) -> bool {
        match self.find(block) {
            Some(i) => {
                self.tags[i] = None;
                self.stamps[i] = 0;
                true
            }
            None => false,
        }
    }

    /// Resident blocks of one set, least recently used first.
    pub fn set_contents(&self, set: usize) -> Vec<u64> {
        let base = set * self.ways;
        let mut v: Vec<(u64, u64)> = (base..base + self.ways)
            .filter_map(|i| self.tags[i].map(|t| (self.stamps[i], t)))
            .collect();
        v.sort_unstable();
        v.into_iter().map(|(_, t)| t).collect()
    }

    pub fn blocks(&self) -> impl Iterator<Item = u64> + '_ {
        self.tags.iter().flatten().copied()
    }

    pub fn valid_blocks(&self) -> usize {
        self.tags.iter().filter(|t| t.is_some()).count()
    }
}
