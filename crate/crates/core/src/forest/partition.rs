use std::collections::BTreeSet;
use std::ops::Range;

use super::mesh::Forest;
use super::quadrant::Quadrant;

/// Contiguous segments of the global leaf order, one per rank.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    bounds: Vec<usize>,
}

impl Partition {
    pub fn from_bounds(bounds: Vec<usize>) -> Self {
        assert!(bounds.len() >= 2 && bounds[0] == 0);
        assert!(bounds.windows(2).all(|w| w[0] <= w[1]));
        Partition { bounds }
    }

    /// Splits `weights` into `ranks` contiguous segments. Leaf `i` goes to rank
    /// `floor(S_i * P / W)` where `S_i` is the total weight before it, so each
    /// segment's load is within one leaf weight of `W / P`.
    pub fn by_weight(weights: &[u64], ranks: usize) -> Self {
        assert!(ranks >= 1);
        let total: u128 = weights.iter().map(|&w| w as u128).sum();
        let mut bounds = vec![0usize; ranks + 1];
        let mut prefix: u128 = 0;
        let mut owner_prev = 0usize;
        for (i, &w) in weights.iter().enumerate() {
            let owner = if total == 0 {
                0
            } else {
                ((prefix * ranks as u128) / total) as usize
            };
            // ranks owner_prev+1 ..= owner start at i
            for r in (owner_prev + 1)..=owner {
                bounds[r] = i;
            }
            owner_prev = owner;
            prefix += w as u128;
        }
        for b in bounds.iter_mut().skip(owner_prev + 1) {
            *b = weights.len();
        }
        Partition { bounds }
    }

    pub fn by_count(leaves: usize, ranks: usize) -> Self {
        Partition::by_weight(&vec![1; leaves], ranks)
    }

    /// Moves each split point back to the start of any complete leaf family it
    /// would cut, so every coarsenable family lives on a single rank.
    pub fn keep_families(mut self, forest: &Forest) -> Self {
        let n = forest.num_leaves();
        for r in 1..self.bounds.len() - 1 {
            let b = self.bounds[r];
            if b == 0 || b >= n {
                continue;
            }
            let q = forest.leaf(b);
            let cid = q.child_id();
            if q.level == 0 || cid == 0 || b < cid {
                continue;
            }
            let start = b - cid;
            let parent = q.parent().unwrap();
            let family = (start..start + 4).all(|i| i < n && forest.leaf(i).parent() == Some(parent) && forest.leaf(i).level == q.level);
            if family {
                self.bounds[r] = start.max(self.bounds[r - 1]);
            }
        }
        self
    }

    pub fn num_ranks(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn num_leaves(&self) -> usize {
        *self.bounds.last().unwrap()
    }

    pub fn bounds(&self) -> &[usize] {
        &self.bounds
    }

    pub fn range(&self, rank: usize) -> Range<usize> {
        self.bounds[rank]..self.bounds[rank + 1]
    }

    pub fn owner(&self, leaf_index: usize) -> usize {
        self.bounds.partition_point(|&b| b <= leaf_index) - 1
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.bounds.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Partition of the forest's leaves by weight; see [`Partition::by_weight`].
pub fn partition(forest: &Forest, ranks: usize, weights: &[u64]) -> Partition {
    assert_eq!(weights.len(), forest.num_leaves());
    Partition::by_weight(weights, ranks)
}

/// A non-local leaf adjacent to some rank-local leaf.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct GhostLeaf {
    pub index: usize,
    pub leaf: Quadrant,
    pub owner: usize,
}

/// Non-local leaves whose data some leaf of `rank` needs for its ghost cells
/// (face and corner neighbors), in SFC order.
pub fn build_ghost_layer(forest: &Forest, part: &Partition, rank: usize) -> Vec<GhostLeaf> {
    let range = part.range(rank);
    let mut set = BTreeSet::new();
    for i in range.clone() {
        for n in forest.halo(&forest.leaf(i)) {
            let j = forest.index_of(&n).expect("neighbor is a leaf");
            if !range.contains(&j) {
                set.insert(j);
            }
        }
    }
    set.into_iter()
        .map(|j| GhostLeaf {
            index: j,
            leaf: forest.leaf(j),
            owner: part.owner(j),
        })
        .collect()
}

/// Local leaves of `rank` that other ranks hold as ghosts: `(leaf index, receiver)`,
/// sorted by receiver then leaf. Derived from the receivers' ghost layers so the
/// two always agree.
pub fn build_mirrors(forest: &Forest, part: &Partition, rank: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for r in 0..part.num_ranks() {
        if r == rank {
            continue;
        }
        out.extend(
            build_ghost_layer(forest, part, r)
                .into_iter()
                .filter(|g| g.owner == rank)
                .map(|g| (g.index, r)),
        );
    }
    out
}
