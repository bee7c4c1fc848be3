use serde::{Deserialize, Serialize};

use super::quadrant::{Quadrant, ROOT_LEN};
use crate::error::{Error, Result};

/// Faces of a reference square, in p4est order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Face {
    Left = 0,
    Right = 1,
    Bottom = 2,
    Top = 3,
}

impl Face {
    pub const ALL: [Face; 4] = [Face::Left, Face::Right, Face::Bottom, Face::Top];

    pub fn from_index(i: usize) -> Face {
        Face::ALL[i]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn opposite(self) -> Face {
        match self {
            Face::Left => Face::Right,
            Face::Right => Face::Left,
            Face::Bottom => Face::Top,
            Face::Top => Face::Bottom,
        }
    }

    /// 0 for faces normal to x, 1 for faces normal to y.
    pub fn axis(self) -> usize {
        match self {
            Face::Left | Face::Right => 0,
            Face::Bottom | Face::Top => 1,
        }
    }

    /// True for the face at coordinate 1 along its axis.
    pub fn is_upper(self) -> bool {
        matches!(self, Face::Right | Face::Top)
    }
}

/// What lies across one face of a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaceLink {
    Boundary,
    /// The face is glued to `face` of `block`; `reversed` flips the tangential coordinate.
    Neighbor {
        block: usize,
        face: Face,
        reversed: bool,
    },
}

/// Inter-block face gluing of a forest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockConnectivity {
    links: Vec<[FaceLink; 4]>,
}

impl BlockConnectivity {
    /// Validates symmetry: if A.f links to (B, g, o) then B.g links to (A, f, o).
    pub fn new(links: Vec<[FaceLink; 4]>) -> Result<Self> {
        if links.is_empty() {
            return Err(Error::Connectivity("no blocks".into()));
        }
        for (a, faces) in links.iter().enumerate() {
            for f in Face::ALL {
                if let FaceLink::Neighbor {
                    block,
                    face,
                    reversed,
                } = faces[f.index()]
                {
                    let back = links
                        .get(block)
                        .map(|l| l[face.index()])
                        .ok_or_else(|| Error::Connectivity(format!("block {block} out of range")))?;
                    let expected = FaceLink::Neighbor {
                        block: a,
                        face: f,
                        reversed,
                    };
                    if back != expected {
                        return Err(Error::Connectivity(format!(
                            "block {a} face {f:?} -> block {block} face {face:?} is not reciprocated"
                        )));
                    }
                    if block == a && face == f {
                        return Err(Error::Connectivity(format!(
                            "block {a} face {f:?} is glued to itself"
                        )));
                    }
                }
            }
        }
        Ok(BlockConnectivity { links })
    }

    /// A single block with physical boundaries on every side.
    pub fn unit_square() -> Self {
        BlockConnectivity {
            links: vec![[FaceLink::Boundary; 4]],
        }
    }

    /// A single block glued to itself left/right and bottom/top.
    pub fn periodic_square() -> Self {
        let n = |face| FaceLink::Neighbor {
            block: 0,
            face,
            reversed: false,
        };
        BlockConnectivity {
            links: vec![[n(Face::Right), n(Face::Left), n(Face::Top), n(Face::Bottom)]],
        }
    }

    /// Two blocks glued along all four faces, each block covering one hemisphere.
    /// Boundary point `(xi, eta)` of block 0 coincides with `(xi, eta)` of block 1.
    pub fn two_tree_sphere() -> Self {
        let link = |block, face| FaceLink::Neighbor {
            block,
            face,
            reversed: false,
        };
        let faces = |other| {
            [
                link(other, Face::Left),
                link(other, Face::Right),
                link(other, Face::Bottom),
                link(other, Face::Top),
            ]
        };
        BlockConnectivity {
            links: vec![faces(1), faces(0)],
        }
    }

    /// Six blocks covering the surface of a cube, derived from 3D edge matching.
    pub fn cubed_sphere() -> Self {
        type V = [i32; 3];
        // (origin, xi axis, eta axis) of each cube face
        let frames: [(V, V, V); 6] = [
            ([0, 0, 0], [0, 1, 0], [0, 0, 1]),
            ([1, 0, 0], [0, 1, 0], [0, 0, 1]),
            ([0, 0, 0], [0, 0, 1], [1, 0, 0]),
            ([0, 1, 0], [0, 0, 1], [1, 0, 0]),
            ([0, 0, 0], [1, 0, 0], [0, 1, 0]),
            ([0, 0, 1], [1, 0, 0], [0, 1, 0]),
        ];
        let add = |p: V, q: V| [p[0] + q[0], p[1] + q[1], p[2] + q[2]];
        // endpoints of each face edge in tangential-increasing order
        let edge = |b: usize, f: Face| -> (V, V) {
            let (o, a, e) = frames[b];
            match f {
                Face::Left => (o, add(o, e)),
                Face::Right => (add(o, a), add(add(o, a), e)),
                Face::Bottom => (o, add(o, a)),
                Face::Top => (add(o, e), add(add(o, e), a)),
            }
        };
        let mut links = vec![[FaceLink::Boundary; 4]; 6];
        for a in 0..6 {
            for f in Face::ALL {
                let (p0, p1) = edge(a, f);
                'search: for b in 0..6 {
                    if b == a {
                        continue;
                    }
                    for g in Face::ALL {
                        let (q0, q1) = edge(b, g);
                        if (p0, p1) == (q0, q1) || (p0, p1) == (q1, q0) {
                            links[a][f.index()] = FaceLink::Neighbor {
                                block: b,
                                face: g,
                                reversed: p0 != q0,
                            };
                            break 'search;
                        }
                    }
                }
            }
        }
        BlockConnectivity::new(links).expect("cube faces glue symmetrically")
    }

    /// `nx` by `ny` blocks in a rectangle, all aligned, physical boundary outside.
    pub fn brick(nx: usize, ny: usize) -> Self {
        let id = |i: usize, j: usize| j * nx + i;
        let mut links = vec![[FaceLink::Boundary; 4]; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let n = |block, face| FaceLink::Neighbor {
                    block,
                    face,
                    reversed: false,
                };
                let l = &mut links[id(i, j)];
                if i > 0 {
                    l[0] = n(id(i - 1, j), Face::Right);
                }
                if i + 1 < nx {
                    l[1] = n(id(i + 1, j), Face::Left);
                }
                if j > 0 {
                    l[2] = n(id(i, j - 1), Face::Top);
                }
                if j + 1 < ny {
                    l[3] = n(id(i, j + 1), Face::Bottom);
                }
            }
        }
        BlockConnectivity { links }
    }

    pub fn num_blocks(&self) -> usize {
        self.links.len()
    }

    pub fn link(&self, block: usize, face: Face) -> FaceLink {
        self.links[block][face.index()]
    }

    /// Maps the same-size quadrant lying across `face` of the block that contains `q`
    /// (which must touch that face) into the neighboring block.
    pub fn transform_across(&self, q: &Quadrant, face: Face) -> Option<(Quadrant, Face, bool)> {
        debug_assert!(q.touches_tree_face(face));
        match self.link(q.tree as usize, face) {
            FaceLink::Boundary => None,
            FaceLink::Neighbor {
                block,
                face: nface,
                reversed,
            } => {
                let len = q.len();
                let t = if face.axis() == 0 { q.y } else { q.x };
                let t = if reversed { ROOT_LEN - len - t } else { t };
                let inner = if nface.is_upper() { ROOT_LEN - len } else { 0 };
                let (x, y) = if nface.axis() == 0 { (inner, t) } else { (t, inner) };
                Some((
                    Quadrant {
                        tree: block as u32,
                        level: q.level,
                        x,
                        y,
                    },
                    nface,
                    reversed,
                ))
            }
        }
    }

    /// Maps a reference point lying just outside `block` across `face` into the
    /// neighbor block. Points beyond a physical boundary give `None`.
    pub fn map_point(&self, block: usize, face: Face, p: [f64; 2]) -> Option<(usize, [f64; 2])> {
        match self.link(block, face) {
            FaceLink::Boundary => None,
            FaceLink::Neighbor {
                block: nb,
                face: nface,
                reversed,
            } => {
                let depth = match face {
                    Face::Left => -p[0],
                    Face::Right => p[0] - 1.0,
                    Face::Bottom => -p[1],
                    Face::Top => p[1] - 1.0,
                };
                let t = if face.axis() == 0 { p[1] } else { p[0] };
                let t = if reversed { 1.0 - t } else { t };
                let normal = if nface.is_upper() { 1.0 - depth } else { depth };
                let q = if nface.axis() == 0 { [normal, t] } else { [t, normal] };
                Some((nb, q))
            }
        }
    }
}

impl BlockConnectivity {
    /// Follows a reference point that may lie outside `block` through the face
    /// links, crossing the first-coordinate face before the second. Returns
    /// `None` when the path leaves the domain through a physical boundary.
    pub fn resolve_point(&self, mut block: usize, mut p: [f64; 2]) -> Option<(usize, [f64; 2])> {
        for _ in 0..4 {
            let face = if p[0] < 0.0 {
                Face::Left
            } else if p[0] >= 1.0 {
                Face::Right
            } else if p[1] < 0.0 {
                Face::Bottom
            } else if p[1] >= 1.0 {
                Face::Top
            } else {
                return Some((block, p));
            };
            (block, p) = self.map_point(block, face, p)?;
        }
        None
    }
}
