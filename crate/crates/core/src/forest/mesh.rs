use std::collections::BTreeSet;
use std::io::Write;
use std::ops::Range;

use super::connectivity::{BlockConnectivity, Face};
use super::quadrant::{Quadrant, MAX_LEVEL, ROOT_LEN};
use crate::error::{Error, Result};

/// How a neighbor's frame relates to the frame of the leaf that looked it up.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NeighborTransform {
    /// Face of the neighbor that touches the querying leaf.
    pub face: Face,
    /// Tangential coordinate runs the other way in the neighbor.
    pub reversed: bool,
    /// The neighbor lives in a different block (or is reached through a block face).
    pub across_blocks: bool,
}

/// Result of a face-neighbor lookup in a 2:1 balanced forest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FaceNeighborSet {
    SameSize(Quadrant, NeighborTransform),
    /// Two finer leaves, ordered along the face in the querying leaf's frame.
    HalfSize([Quadrant; 2], NeighborTransform),
    DoubleSize(Quadrant, NeighborTransform),
    DomainBoundary,
}

impl FaceNeighborSet {
    pub fn leaves(&self) -> Vec<Quadrant> {
        match self {
            FaceNeighborSet::SameSize(q, _) | FaceNeighborSet::DoubleSize(q, _) => vec![*q],
            FaceNeighborSet::HalfSize(qs, _) => qs.to_vec(),
            FaceNeighborSet::DomainBoundary => vec![],
        }
    }

    pub fn transform(&self) -> Option<NeighborTransform> {
        match self {
            FaceNeighborSet::SameSize(_, t)
            | FaceNeighborSet::DoubleSize(_, t)
            | FaceNeighborSet::HalfSize(_, t) => Some(*t),
            FaceNeighborSet::DomainBoundary => None,
        }
    }
}

/// A forest of quadtrees: per-block leaf lists in z-order plus block gluing.
///
/// The global leaf order (the space-filling curve) is block 0's leaves, then
/// block 1's, and so on.
#[derive(Clone, Debug, PartialEq)]
pub struct Forest {
    conn: BlockConnectivity,
    trees: Vec<Vec<Quadrant>>,
    offsets: Vec<usize>,
}

fn touches_side(leaf: &Quadrant, region: &Quadrant, face: Face) -> bool {
    match face {
        Face::Left => leaf.x == region.x,
        Face::Right => leaf.x + leaf.len() == region.x + region.len(),
        Face::Bottom => leaf.y == region.y,
        Face::Top => leaf.y + leaf.len() == region.y + region.len(),
    }
}

impl Forest {
    /// Every block refined uniformly to `level`.
    pub fn new_uniform(conn: BlockConnectivity, level: u8) -> Self {
        assert!(level <= MAX_LEVEL);
        let n = 1u32 << level;
        let trees = (0..conn.num_blocks() as u32)
            .map(|t| {
                let mut v: Vec<Quadrant> = (0..n)
                    .flat_map(|j| (0..n).map(move |i| Quadrant::from_level_coords(t, level, i, j)))
                    .collect();
                v.sort_by_key(|q| q.morton());
                v
            })
            .collect();
        let mut f = Forest {
            conn,
            trees,
            offsets: vec![],
        };
        f.rebuild_offsets();
        f
    }

    /// Builds a forest from an arbitrary leaf list, checking that each block is
    /// tiled exactly.
    pub fn from_leaves(conn: BlockConnectivity, leaves: impl IntoIterator<Item = Quadrant>) -> Result<Self> {
        let mut trees = vec![Vec::new(); conn.num_blocks()];
        for q in leaves {
            if !q.is_valid() || q.tree as usize >= trees.len() {
                return Err(Error::Connectivity(format!("invalid leaf {q:?}")));
            }
            trees[q.tree as usize].push(q);
        }
        for (b, tree) in trees.iter_mut().enumerate() {
            tree.sort_by_key(|q| q.sfc_key());
            let mut next = 0u64;
            for q in tree.iter() {
                if q.morton() != next {
                    return Err(Error::Connectivity(format!(
                        "block {b} leaves overlap or leave a gap at {q:?}"
                    )));
                }
                next += q.area() as u64;
            }
            if next != (ROOT_LEN as u64) * (ROOT_LEN as u64) {
                return Err(Error::Connectivity(format!("block {b} is not covered")));
            }
        }
        let mut f = Forest {
            conn,
            trees,
            offsets: vec![],
        };
        f.rebuild_offsets();
        Ok(f)
    }

    fn rebuild_offsets(&mut self) {
        self.offsets.clear();
        self.offsets.push(0);
        let mut acc = 0;
        for t in &self.trees {
            acc += t.len();
            self.offsets.push(acc);
        }
    }

    pub fn connectivity(&self) -> &BlockConnectivity {
        &self.conn
    }

    pub fn num_blocks(&self) -> usize {
        self.trees.len()
    }

    pub fn num_leaves(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn tree_leaves(&self, block: usize) -> &[Quadrant] {
        &self.trees[block]
    }

    /// Leaves in global space-filling-curve order.
    pub fn leaves(&self) -> impl Iterator<Item = &Quadrant> + '_ {
        self.trees.iter().flatten()
    }

    pub fn leaf(&self, index: usize) -> Quadrant {
        let b = self.offsets.partition_point(|&o| o <= index) - 1;
        self.trees[b][index - self.offsets[b]]
    }

    pub fn min_level(&self) -> u8 {
        self.leaves().map(|q| q.level).min().unwrap_or(0)
    }

    pub fn max_level(&self) -> u8 {
        self.leaves().map(|q| q.level).max().unwrap_or(0)
    }

    /// Global index of the leaf equal to `q` or containing it.
    pub fn find_containing(&self, q: &Quadrant) -> Option<usize> {
        let tree = self.trees.get(q.tree as usize)?;
        let m = q.morton();
        let pos = tree.partition_point(|l| l.morton() <= m);
        if pos == 0 {
            return None;
        }
        let cand = &tree[pos - 1];
        cand.contains(q).then(|| self.offsets[q.tree as usize] + pos - 1)
    }

    /// Global index of the leaf exactly equal to `q`.
    pub fn index_of(&self, q: &Quadrant) -> Option<usize> {
        self.find_containing(q).filter(|&i| self.leaf(i) == *q)
    }

    pub fn contains_leaf(&self, q: &Quadrant) -> bool {
        self.index_of(q).is_some()
    }

    /// Global index range of leaves lying inside `q`.
    pub fn leaves_inside(&self, q: &Quadrant) -> Range<usize> {
        let tree = &self.trees[q.tree as usize];
        let lo_m = q.morton();
        let hi_m = lo_m + q.area() as u64;
        let lo = tree.partition_point(|l| l.morton() < lo_m);
        let hi = tree.partition_point(|l| l.morton() < hi_m);
        let off = self.offsets[q.tree as usize];
        (off + lo)..(off + hi)
    }

    /// The same-size region across `face`, expressed in the block where it lives.
    pub fn across(&self, q: &Quadrant, face: Face) -> Option<(Quadrant, NeighborTransform)> {
        if let Some(n) = q.sibling_across(face) {
            return Some((
                n,
                NeighborTransform {
                    face: face.opposite(),
                    reversed: false,
                    across_blocks: false,
                },
            ));
        }
        self.conn
            .transform_across(q, face)
            .map(|(n, g, reversed)| {
                (
                    n,
                    NeighborTransform {
                        face: g,
                        reversed,
                        across_blocks: true,
                    },
                )
            })
    }

    /// All leaves sharing part of `face` with `q`, without assuming balance.
    pub fn leaves_touching(&self, q: &Quadrant, face: Face) -> Vec<Quadrant> {
        let Some((n, t)) = self.across(q, face) else {
            return vec![];
        };
        if let Some(i) = self.find_containing(&n) {
            return vec![self.leaf(i)];
        }
        self.leaves_inside(&n)
            .map(|i| self.leaf(i))
            .filter(|l| touches_side(l, &n, t.face))
            .collect()
    }

    /// Neighbor lookup across one face of leaf `q`. Requires a 2:1 balanced forest.
    pub fn face_neighbor(&self, q: &Quadrant, face: Face) -> FaceNeighborSet {
        let Some((n, t)) = self.across(q, face) else {
            return FaceNeighborSet::DomainBoundary;
        };
        if let Some(i) = self.find_containing(&n) {
            let l = self.leaf(i);
            return if l.level == n.level {
                FaceNeighborSet::SameSize(l, t)
            } else {
                debug_assert_eq!(l.level + 1, n.level, "forest not 2:1 balanced");
                FaceNeighborSet::DoubleSize(l, t)
            };
        }
        let ids: [usize; 2] = match t.face {
            Face::Left => [0, 2],
            Face::Right => [1, 3],
            Face::Bottom => [0, 1],
            Face::Top => [2, 3],
        };
        let mut pair = [n.child(ids[0]), n.child(ids[1])];
        if t.reversed {
            pair.swap(0, 1);
        }
        debug_assert!(
            pair.iter().all(|c| self.contains_leaf(c)),
            "forest not 2:1 balanced"
        );
        FaceNeighborSet::HalfSize(pair, t)
    }

    pub fn refine_leaf(&mut self, q: &Quadrant) -> Result<()> {
        self.refine_leaves(std::slice::from_ref(q))
    }

    /// Replaces each listed leaf by its four children.
    pub fn refine_leaves(&mut self, leaves: &[Quadrant]) -> Result<()> {
        if leaves.is_empty() {
            return Ok(());
        }
        let set: BTreeSet<Quadrant> = leaves.iter().copied().collect();
        for q in &set {
            if !self.contains_leaf(q) {
                return Err(Error::LeafNotFound(*q));
            }
            if q.level >= MAX_LEVEL {
                return Err(Error::RefineAtMaxLevel(*q));
            }
        }
        for (b, tree) in self.trees.iter_mut().enumerate() {
            if !set.iter().any(|q| q.tree as usize == b) {
                continue;
            }
            let mut out = Vec::with_capacity(tree.len() + 3 * set.len());
            for l in tree.iter() {
                if set.contains(l) {
                    out.extend_from_slice(&l.children());
                } else {
                    out.push(*l);
                }
            }
            *tree = out;
        }
        self.rebuild_offsets();
        Ok(())
    }

    /// True if all four children of `parent` are leaves.
    pub fn is_complete_family(&self, parent: &Quadrant) -> bool {
        parent.level < MAX_LEVEL && parent.children().iter().all(|c| self.contains_leaf(c))
    }

    pub fn coarsen_family(&mut self, parent: &Quadrant) -> Result<()> {
        self.coarsen_families(std::slice::from_ref(parent))
    }

    /// Replaces each listed parent's four leaf children by the parent.
    pub fn coarsen_families(&mut self, parents: &[Quadrant]) -> Result<()> {
        if parents.is_empty() {
            return Ok(());
        }
        for p in parents {
            if !self.is_complete_family(p) {
                return Err(Error::IncompleteFamily(*p));
            }
        }
        let set: BTreeSet<Quadrant> = parents.iter().copied().collect();
        for tree in self.trees.iter_mut() {
            let mut out = Vec::with_capacity(tree.len());
            let mut i = 0;
            while i < tree.len() {
                let l = tree[i];
                match l.parent() {
                    Some(p) if l.child_id() == 0 && set.contains(&p) => {
                        out.push(p);
                        i += 4;
                    }
                    _ => {
                        out.push(l);
                        i += 1;
                    }
                }
            }
            *tree = out;
        }
        self.rebuild_offsets();
        Ok(())
    }

    /// Leaves that must be refined once so that no face neighbor of theirs is
    /// more than one level finer.
    fn balance_violators(&self) -> BTreeSet<Quadrant> {
        let mut out = BTreeSet::new();
        for q in self.leaves() {
            for f in Face::ALL {
                if let Some((n, _)) = self.across(q, f) {
                    if let Some(i) = self.find_containing(&n) {
                        let l = self.leaf(i);
                        if l.level + 1 < q.level {
                            out.insert(l);
                        }
                    }
                }
            }
        }
        out
    }

    /// Leaf containing a reference point of `block` (possibly outside it, see
    /// [`BlockConnectivity::resolve_point`]), with the point in that leaf's block.
    pub fn locate_point(&self, block: usize, p: [f64; 2]) -> Option<(usize, [f64; 2])> {
        let (b, r) = self.conn.resolve_point(block, p)?;
        let scale = ROOT_LEN as f64;
        let x = ((r[0] * scale).floor() as u32).min(ROOT_LEN - 1);
        let y = ((r[1] * scale).floor() as u32).min(ROOT_LEN - 1);
        let probe = Quadrant {
            tree: b as u32,
            level: MAX_LEVEL,
            x,
            y,
        };
        self.find_containing(&probe).map(|i| (i, r))
    }

    /// Leaf touching corner `corner` of `q` from the diagonal side (corners
    /// numbered in z-order: 0 lower left, 1 lower right, 2 upper left, 3 upper
    /// right). `None` on a physical boundary.
    pub fn corner_neighbor(&self, q: &Quadrant, corner: usize) -> Option<Quadrant> {
        let s = ROOT_LEN as f64;
        let eps = 0.25 / s;
        let cx = (q.x + if corner & 1 == 1 { q.len() } else { 0 }) as f64 / s;
        let cy = (q.y + if corner & 2 == 2 { q.len() } else { 0 }) as f64 / s;
        let dx = if corner & 1 == 1 { eps } else { -eps };
        let dy = if corner & 2 == 2 { eps } else { -eps };
        self.locate_point(q.tree as usize, [cx + dx, cy + dy])
            .map(|(i, _)| self.leaf(i))
    }

    /// Leaves whose data fill some ghost cell of `q`: face neighbors followed by
    /// corner neighbors, without duplicates and without `q` itself.
    pub fn halo(&self, q: &Quadrant) -> Vec<Quadrant> {
        let mut out: Vec<Quadrant> = Vec::new();
        let candidates = Face::ALL
            .iter()
            .flat_map(|&f| self.leaves_touching(q, f))
            .chain((0..4).filter_map(|c| self.corner_neighbor(q, c)));
        for l in candidates {
            if l != *q && !out.contains(&l) {
                out.push(l);
            }
        }
        out
    }

    /// Refines until face-adjacent leaves (across block faces too) differ by at
    /// most one level. Returns the leaves that were refined, in refinement order.
    pub fn balance_2to1(&mut self) -> Result<Vec<Quadrant>> {
        let mut events = Vec::new();
        loop {
            let viol = self.balance_violators();
            if viol.is_empty() {
                return Ok(events);
            }
            let mut batch: Vec<Quadrant> = viol.into_iter().collect();
            batch.sort_by_key(|q| q.sfc_key());
            self.refine_leaves(&batch)?;
            events.extend(batch);
        }
    }

    pub fn is_balanced(&self) -> bool {
        self.balance_violators().is_empty()
    }

    /// Debug dump: one CSV row per leaf with its owner rank.
    pub fn write_leaf_csv<W: Write>(&self, mut w: W, owners: Option<&[usize]>) -> std::io::Result<()> {
        writeln!(w, "tree,level,x,y,morton,rank")?;
        for (i, q) in self.leaves().enumerate() {
            let (x, y) = q.level_coords();
            let rank = owners.map_or(0, |o| o[i]);
            writeln!(w, "{},{},{},{},{},{}", q.tree, q.level, x, y, q.level_index(), rank)?;
        }
        Ok(())
    }
}
