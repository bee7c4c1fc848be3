use std::fmt;

use super::connectivity::Face;

/// Deepest admissible refinement level. Coordinates are integers in units of
/// `2^-MAX_LEVEL` of a tree's side length.
pub const MAX_LEVEL: u8 = 29;

/// Side length of a tree's root quadrant in integer coordinate units.
pub const ROOT_LEN: u32 = 1 << MAX_LEVEL;

/// A node of one quadtree: tree index, level and lower-left corner.
///
/// `x` and `y` are multiples of the quadrant's side length `2^(MAX_LEVEL - level)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Quadrant {
    pub tree: u32,
    pub level: u8,
    pub x: u32,
    pub y: u32,
}

impl fmt::Debug for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let len = self.len();
        write!(
            f,
            "Q(t{} L{} {},{})",
            self.tree,
            self.level,
            self.x / len,
            self.y / len
        )
    }
}

/// Interleaves the bits of `x` and `y`; `x` provides the even bits.
pub fn interleave(x: u32, y: u32) -> u64 {
    fn spread(v: u32) -> u64 {
        let mut v = v as u64;
        v = (v | (v << 16)) & 0x0000_FFFF_0000_FFFF;
        v = (v | (v << 8)) & 0x00FF_00FF_00FF_00FF;
        v = (v | (v << 4)) & 0x0F0F_0F0F_0F0F_0F0F;
        v = (v | (v << 2)) & 0x3333_3333_3333_3333;
        v = (v | (v << 1)) & 0x5555_5555_5555_5555;
        v
    }
    spread(x) | (spread(y) << 1)
}

/// Z-order index of the quadrant's lower-left corner at the finest resolution.
pub fn morton_index(q: &Quadrant) -> u64 {
    interleave(q.x, q.y)
}

impl Quadrant {
    pub fn root(tree: u32) -> Self {
        Quadrant {
            tree,
            level: 0,
            x: 0,
            y: 0,
        }
    }

    /// Builds a quadrant from per-level integer indices `(i, j)` in `0..2^level`.
    pub fn from_level_coords(tree: u32, level: u8, i: u32, j: u32) -> Self {
        let len = 1u32 << (MAX_LEVEL - level);
        Quadrant {
            tree,
            level,
            x: i * len,
            y: j * len,
        }
    }

    #[inline]
    pub fn len(&self) -> u32 {
        1 << (MAX_LEVEL - self.level)
    }

    pub fn is_valid(&self) -> bool {
        if self.level > MAX_LEVEL {
            return false;
        }
        let mask = self.len() - 1;
        self.x < ROOT_LEN && self.y < ROOT_LEN && self.x & mask == 0 && self.y & mask == 0
    }

    pub fn morton(&self) -> u64 {
        morton_index(self)
    }

    /// Position of the quadrant in the z-order of all `4^level` quadrants of its level.
    pub fn level_index(&self) -> u64 {
        self.morton() >> (2 * (MAX_LEVEL - self.level) as u32)
    }

    /// Per-level integer coordinates.
    pub fn level_coords(&self) -> (u32, u32) {
        let shift = MAX_LEVEL - self.level;
        (self.x >> shift, self.y >> shift)
    }

    /// Child in z-order: 0 = SW, 1 = SE, 2 = NW, 3 = NE.
    pub fn child(&self, id: usize) -> Quadrant {
        debug_assert!(self.level < MAX_LEVEL);
        let half = self.len() >> 1;
        Quadrant {
            tree: self.tree,
            level: self.level + 1,
            x: self.x + if id & 1 != 0 { half } else { 0 },
            y: self.y + if id & 2 != 0 { half } else { 0 },
        }
    }

    pub fn children(&self) -> [Quadrant; 4] {
        [self.child(0), self.child(1), self.child(2), self.child(3)]
    }

    pub fn parent(&self) -> Option<Quadrant> {
        if self.level == 0 {
            return None;
        }
        let plen = self.len() << 1;
        Some(Quadrant {
            tree: self.tree,
            level: self.level - 1,
            x: self.x & !(plen - 1),
            y: self.y & !(plen - 1),
        })
    }

    /// Z-order position among siblings (0..4); 0 for the root.
    pub fn child_id(&self) -> usize {
        if self.level == 0 {
            return 0;
        }
        let len = self.len();
        ((self.x & len != 0) as usize) | (((self.y & len != 0) as usize) << 1)
    }

    pub fn ancestor(&self, level: u8) -> Quadrant {
        debug_assert!(level <= self.level);
        let len = 1u32 << (MAX_LEVEL - level);
        Quadrant {
            tree: self.tree,
            level,
            x: self.x & !(len - 1),
            y: self.y & !(len - 1),
        }
    }

    /// True if `other` lies inside `self` (or equals it).
    pub fn contains(&self, other: &Quadrant) -> bool {
        self.tree == other.tree
            && self.level <= other.level
            && other.ancestor(self.level) == *self
    }

    pub fn overlaps(&self, other: &Quadrant) -> bool {
        self.contains(other) || other.contains(self)
    }

    /// Whether the quadrant touches the given face of its tree.
    pub fn touches_tree_face(&self, face: Face) -> bool {
        match face {
            Face::Left => self.x == 0,
            Face::Right => self.x + self.len() == ROOT_LEN,
            Face::Bottom => self.y == 0,
            Face::Top => self.y + self.len() == ROOT_LEN,
        }
    }

    /// Same-size neighbor across `face` in this tree's coordinates, or `None`
    /// if it would lie outside the tree.
    pub fn sibling_across(&self, face: Face) -> Option<Quadrant> {
        if self.touches_tree_face(face) {
            return None;
        }
        let len = self.len();
        let mut n = *self;
        match face {
            Face::Left => n.x -= len,
            Face::Right => n.x += len,
            Face::Bottom => n.y -= len,
            Face::Top => n.y += len,
        }
        Some(n)
    }

    /// Area in units of the finest-level cells, for exact coverage checks.
    pub fn area(&self) -> u128 {
        let l = self.len() as u128;
        l * l
    }

    /// Ordering key of the space-filling curve: tree, then z-order, then level
    /// so ancestors sort before their first descendants.
    pub fn sfc_key(&self) -> (u32, u64, u8) {
        (self.tree, self.morton(), self.level)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_interleave(x: u32, y: u32) -> u64 {
        let mut out = 0u64;
        for b in 0..32 {
            out |= (((x >> b) & 1) as u64) << (2 * b);
            out |= (((y >> b) & 1) as u64) << (2 * b + 1);
        }
        out
    }

    #[test]
    fn root_morton_is_zero() {
        assert_eq!(morton_index(&Quadrant::root(0)), 0);
    }

    #[test]
    fn level2_oracle_enumeration() {
        // with L_max = 2 the level index equals the raw interleave of (i, j)
        for j in 0..4u32 {
            for i in 0..4u32 {
                let q = Quadrant::from_level_coords(0, 2, i, j);
                assert_eq!(q.level_index(), naive_interleave(i, j));
            }
        }
        assert_eq!(Quadrant::from_level_coords(0, 2, 1, 1).level_index(), 3);
    }

    #[test]
    fn children_follow_z_order() {
        let root = Quadrant::root(0);
        let kids = root.children();
        // (x,y)=(2,0) in L_max=2 units is the level-1 SE child
        assert_eq!(kids[1], Quadrant::from_level_coords(0, 1, 1, 0));
        let mut sorted = kids;
        sorted.sort_by_key(|q| q.sfc_key());
        assert_eq!(sorted, kids);
        assert_eq!(sorted.iter().position(|q| q.level_coords() == (1, 0)), Some(1));
        for (id, k) in kids.iter().enumerate() {
            assert_eq!(k.child_id(), id);
            assert_eq!(k.parent(), Some(root));
        }
    }

    #[test]
    fn ancestors_sort_before_descendants() {
        let q = Quadrant::from_level_coords(0, 3, 5, 6);
        let p = q.parent().unwrap();
        assert!(p.sfc_key() < q.sfc_key() || p.morton() == q.morton() && p.level < q.level);
        assert!(p.contains(&q));
        assert!(!q.contains(&p));
        assert!(p.contains(&p));
    }

    proptest::proptest! {
        #[test]
        fn interleave_matches_naive(x in 0u32..ROOT_LEN, y in 0u32..ROOT_LEN) {
            proptest::prop_assert_eq!(interleave(x, y), naive_interleave(x, y));
        }

        #[test]
        fn same_level_order_is_lexicographic_on_interleaved_bits(
            level in 1u8..10, a in 0u32..1024, b in 0u32..1024, c in 0u32..1024, d in 0u32..1024
        ) {
            let n = 1u32 << level;
            let q1 = Quadrant::from_level_coords(0, level, a % n, b % n);
            let q2 = Quadrant::from_level_coords(0, level, c % n, d % n);
            let k1 = naive_interleave(a % n, b % n);
            let k2 = naive_interleave(c % n, d % n);
            proptest::prop_assert_eq!(q1.morton().cmp(&q2.morton()), k1.cmp(&k2));
        }
    }
}
