//! Minimal fixed-capacity bitset used for adjacency rows and
//! touched-cluster sets, where the hot operation is intersection popcount.

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct BitSet {
    blocks: Vec<u64>,
}

impl BitSet {
    pub fn new(capacity: usize) -> Self {
        BitSet {
            blocks: vec![0; capacity.div_ceil(64)],
        }
    }

    pub fn set(&mut self, i: usize) {
        self.blocks[i / 64] |= 1u64 << (i % 64);
    }

    pub fn contains(&self, i: usize) -> bool {
        (self.blocks[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn count(&self) -> usize {
        self.blocks.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// |self ∩ other|; both sets must share a capacity.
    pub fn intersection_count(&self, other: &BitSet) -> usize {
        debug_assert_eq!(self.blocks.len(), other.blocks.len());
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

}
