/// One set as an explicit recency list, least recent first.
#[derive(Clone, Debug, Default)]
pub struct LruList {
    pub ways: usize,
    pub blocks: Vec<u64>,
}

impl LruList {
    pub fn new(ways: usize) -> Self {
        LruList { ways, blocks: Vec::new() }
    }

    /// Returns (hit, evicted).
    pub fn access(&mut self, block: u64) -> (bool, Option<u64>) {
        if let Some(i) = self.blocks.iter().position(|&b| b == block) {
            self.blocks.remove(i);
            self.blocks.push(block);
            return (true, None);
        }
        self.blocks.push(block);
        let evicted = if self.blocks.len() > self.ways { Some(self.blocks.remove(0)) } else { None };
        (false, evicted)
    }
}

/// A whole cache as a vector of recency lists.
pub struct LruCache {
    pub sets: Vec<LruList>,
}

impl LruCache {
    pub fn new(sets: usize, ways: usize) -> Self {
        LruCache { sets: vec![LruList::new(ways); sets] }
    }

    pub fn set_of(&self, block: u64) -> usize {
        (block % self.sets.len() as u64) as usize
    }

    pub fn access(&mut self, block: u64) -> (bool, Option<u64>) {
        let s = self.set_of(block);
        self.sets[s].access(block)
    }
}
