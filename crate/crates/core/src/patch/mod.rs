//! Fixed-size cell-centered patches with ghost layers, plus the ghost-fill
//! and regrid transfer kernels that move data between them.

mod ghost;
mod transfer;

pub use ghost::{
    average_to_coarse_ghost, copy_same_level, corner_ghost_block, face_ghost_strip, fill_from_source,
    interpolate_to_fine_ghost,
};
pub use transfer::{average_new_coarse, family_spread, interpolate_new_fine, tag_patch, TagFlag};

use crate::error::{Error, Result};
use crate::forest::{Face, Quadrant, ROOT_LEN};

/// Ghost layer width on every side.
pub const GHOST: usize = 2;

pub fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

/// Origin and side length of a leaf in its block's reference coordinates.
pub fn leaf_extent(q: &Quadrant) -> ([f64; 2], f64) {
    let s = ROOT_LEN as f64;
    ([q.x as f64 / s, q.y as f64 / s], q.len() as f64 / s)
}

/// An `m x m` array of cell averages on one leaf, surrounded by `GHOST` layers.
///
/// Storage is row-major over the `(m + 2 GHOST)^2` extended array with `i`
/// running along the block's first coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    leaf: Quadrant,
    m: usize,
    q: Vec<f64>,
    time: f64,
    ghost_time: Option<f64>,
    previous: Option<(Vec<f64>, f64)>,
}

impl Patch {
    pub fn new(leaf: Quadrant, m: usize, time: f64) -> Self {
        assert!(m >= 4 && m % 2 == 0, "patch size must be even and at least 4");
        let n = m + 2 * GHOST;
        Patch {
            leaf,
            m,
            q: vec![0.0; n * n],
            time,
            ghost_time: None,
            previous: None,
        }
    }

    /// Patch whose interior cells take `f` at their centers.
    pub fn from_fn(leaf: Quadrant, m: usize, time: f64, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut p = Patch::new(leaf, m, time);
        for j in 0..m {
            for i in 0..m {
                let c = p.center(i as isize, j as isize);
                p.set_interior(i, j, f(c[0], c[1]));
            }
        }
        p
    }

    pub fn leaf(&self) -> Quadrant {
        self.leaf
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Side of the extended array.
    pub fn n(&self) -> usize {
        self.m + 2 * GHOST
    }

    /// Cell width in reference coordinates.
    pub fn dx(&self) -> f64 {
        leaf_extent(&self.leaf).1 / self.m as f64
    }

    /// Center of interior-relative cell `(i, j)`; negative or `>= m` indices are ghosts.
    pub fn center(&self, i: isize, j: isize) -> [f64; 2] {
        let (o, _) = leaf_extent(&self.leaf);
        let h = self.dx();
        [o[0] + (i as f64 + 0.5) * h, o[1] + (j as f64 + 0.5) * h]
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn set_time(&mut self, t: f64) {
        self.time = t;
    }

    pub fn data(&self) -> &[f64] {
        &self.q
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.q
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.n() + i
    }

    /// Value in the extended array.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.q[self.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.q[k] = v;
    }

    #[inline]
    pub fn interior(&self, i: usize, j: usize) -> f64 {
        self.get(i + GHOST, j + GHOST)
    }

    #[inline]
    pub fn set_interior(&mut self, i: usize, j: usize, v: f64) {
        self.set(i + GHOST, j + GHOST, v)
    }

    /// Interior cells in row-major order.
    pub fn interior_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.m * self.m);
        for j in 0..self.m {
            let row = self.idx(GHOST, j + GHOST);
            out.extend_from_slice(&self.q[row..row + self.m]);
        }
        out
    }

    pub fn set_interior_values(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.m * self.m);
        for j in 0..self.m {
            let row = self.idx(GHOST, j + GHOST);
            self.q[row..row + self.m].copy_from_slice(&values[j * self.m..(j + 1) * self.m]);
        }
        self.ghost_time = None;
    }

    pub fn ghost_time(&self) -> Option<f64> {
        self.ghost_time
    }

    pub fn ghosts_current(&self) -> bool {
        self.ghost_time == Some(self.time)
    }

    pub fn mark_ghosts_filled(&mut self) {
        self.ghost_time = Some(self.time);
    }

    pub fn invalidate_ghosts(&mut self) {
        self.ghost_time = None;
    }

    pub fn check_ghosts(&self) -> Result<()> {
        if self.ghosts_current() {
            Ok(())
        } else {
            Err(Error::GhostNotFilled {
                leaf: self.leaf,
                filled: self.ghost_time.unwrap_or(f64::NAN),
                patch: self.time,
            })
        }
    }

    /// Keeps a copy of the interior as the previous time level.
    pub fn save_previous(&mut self) {
        self.previous = Some((self.interior_values(), self.time));
    }

    pub fn previous(&self) -> Option<(&[f64], f64)> {
        self.previous.as_ref().map(|(v, t)| (v.as_slice(), *t))
    }

    pub fn clear_previous(&mut self) {
        self.previous = None;
    }

    /// Extended-array index of ghost cell `depth` (1-based) at tangential position `k` on `face`.
    pub fn ghost_index(&self, face: Face, depth: usize, k: usize) -> (usize, usize) {
        let (g, m) = (GHOST, self.m);
        match face {
            Face::Left => (g - depth, g + k),
            Face::Right => (g + m - 1 + depth, g + k),
            Face::Bottom => (g + k, g - depth),
            Face::Top => (g + k, g + m - 1 + depth),
        }
    }

    /// Writes a face strip laid out as `[(depth - 1) * m + k]`.
    pub fn set_face_ghosts(&mut self, face: Face, strip: &[f64]) {
        assert_eq!(strip.len(), GHOST * self.m);
        for d in 1..=GHOST {
            for k in 0..self.m {
                let (i, j) = self.ghost_index(face, d, k);
                self.set(i, j, strip[(d - 1) * self.m + k]);
            }
        }
    }

    pub fn face_ghosts(&self, face: Face) -> Vec<f64> {
        let mut out = Vec::with_capacity(GHOST * self.m);
        for d in 1..=GHOST {
            for k in 0..self.m {
                let (i, j) = self.ghost_index(face, d, k);
                out.push(self.get(i, j));
            }
        }
        out
    }

    /// Extended-array index of the corner ghost cell at depths `(dx, dy)`
    /// (1-based) off corner `corner` (z-order: 0 lower left .. 3 upper right).
    pub fn corner_index(&self, corner: usize, dx: usize, dy: usize) -> (usize, usize) {
        let (g, m) = (GHOST, self.m);
        let i = if corner & 1 == 1 { g + m - 1 + dx } else { g - dx };
        let j = if corner & 2 == 2 { g + m - 1 + dy } else { g - dy };
        (i, j)
    }

    /// Writes a corner block laid out as `[(dy - 1) * GHOST + (dx - 1)]`.
    pub fn set_corner_ghosts(&mut self, corner: usize, block: &[f64]) {
        assert_eq!(block.len(), GHOST * GHOST);
        for dy in 1..=GHOST {
            for dx in 1..=GHOST {
                let (i, j) = self.corner_index(corner, dx, dy);
                self.set(i, j, block[(dy - 1) * GHOST + dx - 1]);
            }
        }
    }

    /// Extrapolates a corner block from the face ghosts as
    /// `q(a,b) = q(a,e) + q(e,b) - q(e,e)`, exact for data affine in the cell index.
    pub fn extrapolate_corner(&mut self, corner: usize) {
        let (ei, ej) = self.corner_index(corner, 0, 0);
        let base = self.get(ei, ej);
        for dy in 1..=GHOST {
            for dx in 1..=GHOST {
                let (a, b) = self.corner_index(corner, dx, dy);
                let v = self.get(a, ej) + self.get(ei, b) - base;
                self.set(a, b, v);
            }
        }
    }

    pub fn fill_corners(&mut self) {
        for c in 0..4 {
            self.extrapolate_corner(c);
        }
    }

    pub fn view(&self) -> SourceView<'_> {
        SourceView {
            leaf: self.leaf,
            m: self.m,
            current: Frame {
                data: &self.q,
                stride: self.n(),
                offset: GHOST,
            },
            time: self.time,
            previous: self.previous.as_ref().map(|(v, t)| {
                (
                    Frame {
                        data: v,
                        stride: self.m,
                        offset: 0,
                    },
                    *t,
                )
            }),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Frame<'a> {
    data: &'a [f64],
    stride: usize,
    offset: usize,
}

impl Frame<'_> {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[(j + self.offset) * self.stride + i + self.offset]
    }
}

/// How to combine the two stored time levels of a source.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Blend {
    Current,
    Previous,
    /// `previous + a (current - previous)`.
    Mix(f64),
}

/// Read-only access to the interior of a leaf's data, local or received.
#[derive(Clone, Copy, Debug)]
pub struct SourceView<'a> {
    pub leaf: Quadrant,
    pub m: usize,
    current: Frame<'a>,
    time: f64,
    previous: Option<(Frame<'a>, f64)>,
}

impl<'a> SourceView<'a> {
    /// View of a bare `m x m` row-major interior with an optional earlier level.
    pub fn from_interior(leaf: Quadrant, m: usize, values: &'a [f64], time: f64, previous: Option<(&'a [f64], f64)>) -> Self {
        assert_eq!(values.len(), m * m);
        let frame = |data| Frame {
            data,
            stride: m,
            offset: 0,
        };
        SourceView {
            leaf,
            m,
            current: frame(values),
            time,
            previous: previous.map(|(v, t)| (frame(v), t)),
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Chooses time levels for target time `t`; exact matches are used verbatim.
    pub fn blend(&self, t: f64) -> Result<Blend> {
        if t == self.time {
            return Ok(Blend::Current);
        }
        if let Some((_, pt)) = self.previous {
            if t == pt {
                return Ok(Blend::Previous);
            }
            let (lo, hi) = if pt < self.time { (pt, self.time) } else { (self.time, pt) };
            if lo < t && t < hi {
                return Ok(Blend::Mix((t - pt) / (self.time - pt)));
            }
        }
        Err(Error::MissingTimeLevels {
            leaf: self.leaf,
            target: t,
        })
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize, blend: Blend) -> f64 {
        match blend {
            Blend::Current => self.current.at(i, j),
            Blend::Previous => self.previous.expect("blend checked").0.at(i, j),
            Blend::Mix(a) => {
                let p = self.previous.expect("blend checked").0.at(i, j);
                p + a * (self.current.at(i, j) - p)
            }
        }
    }

    /// Interior cell containing reference point `p`, if any.
    pub fn cell_at(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let (o, s) = leaf_extent(&self.leaf);
        let h = s / self.m as f64;
        let i = ((p[0] - o[0]) / h).floor();
        let j = ((p[1] - o[1]) / h).floor();
        let m = self.m as f64;
        if (0.0..m).contains(&i) && (0.0..m).contains(&j) {
            Some((i as usize, j as usize))
        } else {
            None
        }
    }
}
