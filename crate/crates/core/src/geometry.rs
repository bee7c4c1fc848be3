//! Block mappings from reference coordinates to physical space, and the
//! prescribed velocity fields of the two example problems.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

pub type Vec3 = [f64; 3];

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Rotates `p` by `angle` about the unit vector `axis` (Rodrigues).
pub fn rotate(p: Vec3, axis: Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    let kxp = cross(axis, p);
    let kdp = dot(axis, p);
    [
        p[0] * c + kxp[0] * s + axis[0] * kdp * (1.0 - c),
        p[1] * c + kxp[1] * s + axis[1] * kdp * (1.0 - c),
        p[2] * c + kxp[2] * s + axis[2] * kdp * (1.0 - c),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockMapping {
    IdentityUnitSquare,
    /// Block 0 covers the upper hemisphere, block 1 the lower one. The square
    /// is folded onto a diamond, lifted onto an octahedron face pair and
    /// projected radially onto the unit sphere; the square's boundary lands on
    /// the equator identically for both blocks.
    TwoTreeHemisphere,
}

impl BlockMapping {
    fn sign(block: usize) -> f64 {
        if block == 0 {
            1.0
        } else {
            -1.0
        }
    }

    fn lifted(block: usize, xi: f64, eta: f64) -> Vec3 {
        let x = 2.0 * xi - 1.0;
        let y = 2.0 * eta - 1.0;
        let u = 0.5 * (x + y);
        let v = 0.5 * (x - y);
        let w = 1.0 - u.abs() - v.abs();
        [u, v, Self::sign(block) * w]
    }

    /// Physical position of reference point `(xi, eta)` of `block`.
    pub fn map(&self, block: usize, xi: f64, eta: f64) -> Vec3 {
        match self {
            BlockMapping::IdentityUnitSquare => [xi, eta, 0.0],
            BlockMapping::TwoTreeHemisphere => normalize(Self::lifted(block, xi, eta)),
        }
    }

    /// Columns `dX/dxi`, `dX/deta` of the mapping's Jacobian.
    pub fn jacobian(&self, block: usize, xi: f64, eta: f64) -> [Vec3; 2] {
        match self {
            BlockMapping::IdentityUnitSquare => [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            BlockMapping::TwoTreeHemisphere => {
                let l = Self::lifted(block, xi, eta);
                let (u, v) = (l[0], l[1]);
                let su = if u >= 0.0 { 1.0 } else { -1.0 };
                let sv = if v >= 0.0 { 1.0 } else { -1.0 };
                let s = Self::sign(block);
                let dxi = [1.0, 1.0, -s * (su + sv)];
                let deta = [1.0, -1.0, -s * (su - sv)];
                let r = norm(l);
                let p = [l[0] / r, l[1] / r, l[2] / r];
                let proj = |d: Vec3| {
                    let k = dot(p, d);
                    [
                        (d[0] - k * p[0]) / r,
                        (d[1] - k * p[1]) / r,
                        (d[2] - k * p[2]) / r,
                    ]
                };
                [proj(dxi), proj(deta)]
            }
        }
    }

    pub fn num_blocks(&self) -> usize {
        match self {
            BlockMapping::IdentityUnitSquare => 1,
            BlockMapping::TwoTreeHemisphere => 2,
        }
    }
}

/// Prescribed advection velocity, evaluated in computational coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityField {
    /// Streamfunction `(1/pi) sin^2(pi xi) sin^2(pi eta) cos(pi t / T)`.
    Swirl { period: f64 },
    /// Rigid body rotation about a unit `axis` at angular speed `omega`.
    RigidRotation { axis: Vec3, omega: f64 },
    /// Constant computational velocity.
    Uniform { u: f64, v: f64 },
}

fn sin_pi_sym(x: f64) -> f64 {
    // sin(pi x) == sin(pi (1 - x)); evaluating at the nearer end keeps it exactly zero on x = 0, 1
    (PI * x.min(1.0 - x)).sin()
}

fn swirl_psi(xi: f64, eta: f64) -> f64 {
    let a = sin_pi_sym(xi);
    let b = sin_pi_sym(eta);
    a * a * b * b / PI
}

impl VelocityField {
    /// Factor multiplying the spatial field at time `t`.
    pub fn time_factor(&self, t: f64) -> f64 {
        match *self {
            // cos(pi s) written as sin(pi (1/2 - s)) so it vanishes exactly at t = T/2
            VelocityField::Swirl { period } => (PI * (0.5 - t / period)).sin(),
            VelocityField::RigidRotation { .. } | VelocityField::Uniform { .. } => 1.0,
        }
    }

    /// Computational velocity `(dxi/dt, deta/dt)` at a point, without the time factor.
    pub fn point_velocity(&self, mapping: &BlockMapping, block: usize, xi: f64, eta: f64) -> [f64; 2] {
        match *self {
            VelocityField::Swirl { .. } => {
                // centered derivative of the streamfunction, used only for pointwise queries
                let h = 1e-6;
                let u = (swirl_psi(xi, eta + h) - swirl_psi(xi, eta - h)) / (2.0 * h);
                let v = -(swirl_psi(xi + h, eta) - swirl_psi(xi - h, eta)) / (2.0 * h);
                [u, v]
            }
            VelocityField::RigidRotation { axis, omega } => {
                let p = mapping.map(block, xi, eta);
                let w = cross(axis, p);
                let vel = [omega * w[0], omega * w[1], omega * w[2]];
                let [a, b] = mapping.jacobian(block, xi, eta);
                let (aa, ab, bb) = (dot(a, a), dot(a, b), dot(b, b));
                let (ra, rb) = (dot(a, vel), dot(b, vel));
                let det = aa * bb - ab * ab;
                [(bb * ra - ab * rb) / det, (aa * rb - ab * ra) / det]
            }
            VelocityField::Uniform { u, v } => [u, v],
        }
    }

    /// Spatial normal velocity through the vertical edge `xi = const`,
    /// `eta in [eta0, eta1]`, positive toward increasing `xi`.
    pub fn vertical_edge_speed(&self, mapping: &BlockMapping, block: usize, xi: f64, eta0: f64, eta1: f64) -> f64 {
        match self {
            VelocityField::Swirl { .. } => (swirl_psi(xi, eta1) - swirl_psi(xi, eta0)) / (eta1 - eta0),
            VelocityField::RigidRotation { .. } => {
                self.point_velocity(mapping, block, xi, 0.5 * (eta0 + eta1))[0]
            }
            VelocityField::Uniform { u, .. } => *u,
        }
    }

    /// Spatial normal velocity through the horizontal edge `eta = const`,
    /// `xi in [xi0, xi1]`, positive toward increasing `eta`.
    pub fn horizontal_edge_speed(&self, mapping: &BlockMapping, block: usize, xi0: f64, xi1: f64, eta: f64) -> f64 {
        match self {
            VelocityField::Swirl { .. } => -(swirl_psi(xi1, eta) - swirl_psi(xi0, eta)) / (xi1 - xi0),
            VelocityField::RigidRotation { .. } => {
                self.point_velocity(mapping, block, 0.5 * (xi0 + xi1), eta)[1]
            }
            VelocityField::Uniform { v, .. } => *v,
        }
    }

    /// A bound on the edge speeds when one is known in closed form.
    pub fn speed_bound(&self) -> Option<f64> {
        match self {
            // |d psi / d eta| = sin^2(pi xi) |sin(2 pi eta)| <= 1, and edge speeds are averages of it
            VelocityField::Swirl { .. } => Some(1.0),
            VelocityField::RigidRotation { .. } => None,
            VelocityField::Uniform { u, v } => Some(u.abs().max(v.abs())),
        }
    }
}

/// Normal velocity through an edge of a patch, including the time factor.
pub fn edge_normal_velocity(
    mapping: &BlockMapping,
    field: &VelocityField,
    block: usize,
    vertical: bool,
    fixed: f64,
    lo: f64,
    hi: f64,
    t: f64,
) -> f64 {
    let s = if vertical {
        field.vertical_edge_speed(mapping, block, fixed, lo, hi)
    } else {
        field.horizontal_edge_speed(mapping, block, lo, hi, fixed)
    };
    field.time_factor(t) * s
}

/// Initial data of the examples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// 0 for `xi < 1/2`, 1 otherwise.
    LeftRightStep,
    /// 1 where `x . normal >= 0` on the sphere, else 0.
    HalfSphere { normal: Vec3 },
    /// `exp(-sharpness |x - center|^2)` on the sphere.
    GaussianBump { center: Vec3, sharpness: f64 },
}

impl InitialCondition {
    pub fn value(&self, mapping: &BlockMapping, block: usize, xi: f64, eta: f64) -> f64 {
        match *self {
            InitialCondition::LeftRightStep => {
                if xi < 0.5 {
                    0.0
                } else {
                    1.0
                }
            }
            InitialCondition::HalfSphere { normal } => {
                if dot(mapping.map(block, xi, eta), normal) >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            InitialCondition::GaussianBump { center, sharpness } => {
                let p = mapping.map(block, xi, eta);
                let d = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
                (-sharpness * dot(d, d)).exp()
            }
        }
    }

    /// Exact solution at time `t` under rigid rotation, evaluated by rotating
    /// the point back to its starting position.
    pub fn rotated_value(&self, mapping: &BlockMapping, block: usize, xi: f64, eta: f64, axis: Vec3, angle: f64) -> f64 {
        let p = rotate(mapping.map(block, xi, eta), axis, -angle);
        match *self {
            InitialCondition::LeftRightStep => self.value(mapping, block, xi, eta),
            InitialCondition::HalfSphere { normal } => (dot(p, normal) >= 0.0) as u8 as f64,
            InitialCondition::GaussianBump { center, sharpness } => {
                let d = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
                (-sharpness * dot(d, d)).exp()
            }
        }
    }
}

/// Rotation axis tilted `degrees` away from the mapping poles toward +x.
pub fn tilted_axis(degrees: f64) -> Vec3 {
    let a = degrees.to_radians();
    [a.sin(), 0.0, a.cos()]
}

#[cfg(test)]
mod tests {
    use super::*;

    const SWIRL: VelocityField = VelocityField::Swirl { period: 4.0 };
    const SQ: BlockMapping = BlockMapping::IdentityUnitSquare;
    const SPH: BlockMapping = BlockMapping::TwoTreeHemisphere;

    #[test]
    fn swirl_vanishes_at_half_period() {
        assert_eq!(SWIRL.time_factor(2.0), 0.0);
        for k in 0..10 {
            let xi = 0.05 + 0.09 * k as f64;
            let s = edge_normal_velocity(&SQ, &SWIRL, 0, true, xi, 0.3, 0.4, 2.0);
            assert_eq!(s, 0.0);
        }
    }

    #[test]
    fn swirl_boundary_flux_is_zero() {
        for k in 0..16 {
            let a = k as f64 / 16.0;
            let b = a + 1.0 / 16.0;
            assert_eq!(SWIRL.vertical_edge_speed(&SQ, 0, 0.0, a, b), 0.0);
            assert_eq!(SWIRL.vertical_edge_speed(&SQ, 0, 1.0, a, b), 0.0);
            assert_eq!(SWIRL.horizontal_edge_speed(&SQ, 0, a, b, 0.0), 0.0);
            assert_eq!(SWIRL.horizontal_edge_speed(&SQ, 0, a, b, 1.0), 0.0);
        }
    }

    #[test]
    fn swirl_discrete_divergence_free() {
        let n = 37;
        let h = 1.0 / n as f64;
        for j in 0..n {
            for i in 0..n {
                let (x0, x1) = (i as f64 * h, (i + 1) as f64 * h);
                let (y0, y1) = (j as f64 * h, (j + 1) as f64 * h);
                let div = (SWIRL.vertical_edge_speed(&SQ, 0, x1, y0, y1)
                    - SWIRL.vertical_edge_speed(&SQ, 0, x0, y0, y1))
                    / h
                    + (SWIRL.horizontal_edge_speed(&SQ, 0, x0, x1, y1)
                        - SWIRL.horizontal_edge_speed(&SQ, 0, x0, x1, y0))
                        / h;
                assert!(div.abs() < 1e-12, "div {div} at {i},{j}");
            }
        }
    }

    #[test]
    fn hemispheres_share_the_equator() {
        for k in 0..=20 {
            let s = k as f64 / 20.0;
            for (xi, eta) in [(0.0, s), (1.0, s), (s, 0.0), (s, 1.0)] {
                let a = SPH.map(0, xi, eta);
                let b = SPH.map(1, xi, eta);
                assert!((a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);
                assert!(a[2].abs() < 1e-15);
            }
        }
        assert!((SPH.map(0, 0.5, 0.5)[2] - 1.0).abs() < 1e-15);
        assert!((SPH.map(1, 0.5, 0.5)[2] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn sphere_jacobian_matches_finite_differences() {
        let h = 1e-7;
        for &(b, xi, eta) in &[(0, 0.3, 0.2), (1, 0.7, 0.45), (0, 0.9, 0.6), (1, 0.1, 0.85)] {
            let [a, c] = SPH.jacobian(b, xi, eta);
            let p = SPH.map(b, xi + h, eta);
            let m = SPH.map(b, xi - h, eta);
            for k in 0..3 {
                assert!(((p[k] - m[k]) / (2.0 * h) - a[k]).abs() < 1e-6);
            }
            let p = SPH.map(b, xi, eta + h);
            let m = SPH.map(b, xi, eta - h);
            for k in 0..3 {
                assert!(((p[k] - m[k]) / (2.0 * h) - c[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rotation_fixed_points_are_stationary() {
        let axis = [0.0, 0.0, 1.0];
        let field = VelocityField::RigidRotation { axis, omega: 2.0 * PI };
        // the pole (center of block 0) is on the axis
        let v = field.point_velocity(&SPH, 0, 0.5, 0.5);
        assert!(v[0].abs() < 1e-12 && v[1].abs() < 1e-12);
    }

    #[test]
    fn cross_block_normal_speed_is_consistent() {
        let field = VelocityField::RigidRotation {
            axis: tilted_axis(30.0),
            omega: 2.0 * PI,
        };
        for k in 0..8 {
            let a = k as f64 / 8.0;
            let b = a + 0.125;
            // left face: outward is -xi in both blocks
            let s0 = field.vertical_edge_speed(&SPH, 0, 0.0, a, b);
            let s1 = field.vertical_edge_speed(&SPH, 1, 0.0, a, b);
            assert!((s0 + s1).abs() < 1e-12, "{s0} {s1}");
            let s0 = field.horizontal_edge_speed(&SPH, 0, a, b, 1.0);
            let s1 = field.horizontal_edge_speed(&SPH, 1, a, b, 1.0);
            assert!((s0 + s1).abs() < 1e-12, "{s0} {s1}");
        }
    }

    #[test]
    fn initial_conditions() {
        let ic = InitialCondition::LeftRightStep;
        assert_eq!(ic.value(&SQ, 0, 0.25, 0.5), 0.0);
        assert_eq!(ic.value(&SQ, 0, 0.75, 0.5), 1.0);
        let half = InitialCondition::HalfSphere {
            normal: normalize([1.0, 0.5, 0.8]),
        };
        for b in 0..2 {
            let mut seen = [false; 2];
            for j in 0..32 {
                for i in 0..32 {
                    let v = half.value(&SPH, b, (i as f64 + 0.5) / 32.0, (j as f64 + 0.5) / 32.0);
                    seen[v as usize] = true;
                }
            }
            assert_eq!(seen, [true, true], "block {b}");
        }
    }

    #[test]
    fn rotation_returns_after_full_period() {
        let axis = tilted_axis(30.0);
        let p = SPH.map(1, 0.2, 0.7);
        let r = rotate(p, axis, 2.0 * PI);
        for k in 0..3 {
            assert!((p[k] - r[k]).abs() < 1e-14);
        }
    }
}
