//! Unsplit second-order wave-propagation update for scalar advection on one patch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BlockMapping, VelocityField};
use crate::patch::{Patch, GHOST};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Limiter {
    None,
    Minmod,
    Mc,
    Vanleer,
}

/// Limiter function `phi(theta)`.
pub fn limiter_phi(theta: f64, kind: Limiter) -> f64 {
    match kind {
        Limiter::None => 1.0,
        Limiter::Minmod => theta.min(1.0).max(0.0),
        Limiter::Mc => (0.5 * (1.0 + theta)).min(2.0).min(2.0 * theta).max(0.0),
        Limiter::Vanleer => (theta + theta.abs()) / (1.0 + theta.abs()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiemannResult {
    pub wave: f64,
    pub speed: f64,
    /// Left-going fluctuation `A^- dq`.
    pub fluct_minus: f64,
    /// Right-going fluctuation `A^+ dq`.
    pub fluct_plus: f64,
}

/// Single-wave solution of the advection Riemann problem at an edge with normal speed `s`.
#[inline]
pub fn riemann_advect(ql: f64, qr: f64, s: f64) -> RiemannResult {
    let wave = qr - ql;
    RiemannResult {
        wave,
        speed: s,
        fluct_minus: s.min(0.0) * wave,
        fluct_plus: s.max(0.0) * wave,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub limiter: Limiter,
    pub second_order: bool,
    pub transverse: bool,
    pub cfl_desired: f64,
    pub cfl_max: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            limiter: Limiter::Mc,
            second_order: true,
            transverse: true,
            cfl_desired: 0.9,
            cfl_max: 1.0,
        }
    }
}

/// Largest stable step for speed `max_speed` on cells of width `dx`.
pub fn compute_dt(max_speed: f64, dx: f64, cfg: &SolverConfig) -> Result<f64> {
    if !(max_speed > 0.0) {
        return Err(Error::ZeroVelocityField);
    }
    Ok(cfg.cfl_desired * dx / max_speed)
}

/// Time-independent normal edge speeds over a patch's extended array; the
/// velocity at time `t` is `time_factor(t)` times these.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeVelocity {
    n: usize,
    /// Vertical edges, `(n + 1) x n`, index `j * (n + 1) + i` is the left edge of cell `(i, j)`.
    u: Vec<f64>,
    /// Horizontal edges, `n x (n + 1)`, index `j * n + i` is the bottom edge of cell `(i, j)`.
    v: Vec<f64>,
    field: VelocityField,
    /// Largest `|speed|` over edges bounding interior cells, without the time factor.
    interior_max: f64,
}

impl EdgeVelocity {
    pub fn new(patch: &Patch, mapping: &BlockMapping, field: &VelocityField) -> Self {
        let n = patch.n();
        let h = patch.dx();
        let block = patch.leaf().tree as usize;
        let o = patch.center(-(GHOST as isize), -(GHOST as isize));
        let (x0, y0) = (o[0] - 0.5 * h, o[1] - 0.5 * h);
        let x = |i: usize| x0 + i as f64 * h;
        let y = |j: usize| y0 + j as f64 * h;
        let mut u = vec![0.0; (n + 1) * n];
        let mut v = vec![0.0; n * (n + 1)];
        for j in 0..n {
            for i in 0..=n {
                u[j * (n + 1) + i] = field.vertical_edge_speed(mapping, block, x(i), y(j), y(j + 1));
            }
        }
        for j in 0..=n {
            for i in 0..n {
                v[j * n + i] = field.horizontal_edge_speed(mapping, block, x(i), x(i + 1), y(j));
            }
        }
        let g = GHOST;
        let mut s: f64 = 0.0;
        for j in g..n - g {
            for i in g..=n - g {
                s = s.max(u[j * (n + 1) + i].abs());
            }
        }
        for j in g..=n - g {
            for i in g..n - g {
                s = s.max(v[j * n + i].abs());
            }
        }
        EdgeVelocity {
            n,
            u,
            v,
            field: *field,
            interior_max: s,
        }
    }

    /// Largest `|speed|` over edges that bound interior cells, at time `t`.
    pub fn max_speed(&self, t: f64) -> f64 {
        self.interior_max * self.field.time_factor(t).abs()
    }
}

/// Reusable flux arrays for [`step_patch`].
#[derive(Default)]
pub struct Workspace {
    fm: Vec<f64>,
    fp: Vec<f64>,
    gm: Vec<f64>,
    gp: Vec<f64>,
    su: Vec<f64>,
    sv: Vec<f64>,
    line: Vec<f64>,
    wave: Vec<f64>,
    speed: Vec<f64>,
}

impl Workspace {
    fn reset(&mut self, n: usize) {
        for a in [&mut self.fm, &mut self.fp, &mut self.gm, &mut self.gp] {
            a.clear();
            a.resize((n + 1) * (n + 1), 0.0);
        }
        self.line.resize(n, 0.0);
        self.wave.resize(n + 1, 0.0);
        self.speed.resize(n + 1, 0.0);
    }
}

/// One directional sweep of the unsplit update, accumulating normal and
/// transverse fluctuations. `a` runs along the sweep and `b` across it.
#[inline(always)]
fn sweep<const X: bool>(
    q: &[f64],
    m: usize,
    dtdx: f64,
    cfg: &SolverConfig,
    ws: &mut Workspace,
    speeds: Option<(&[f64], &[f64])>,
    cfl: &mut f64,
) {
    let g = GHOST;
    let n = m + 2 * g;
    let stride = n + 1;
    let half = 0.5 * dtdx;
    let Workspace { fm, fp, gm, gp, su, sv, line, wave, speed } = ws;
    // unscaled edge speeds are used as they are when the time factor is one
    let (su, sv): (&[f64], &[f64]) = speeds.unwrap_or((su, sv));
    let (nm, np, tm, tp) = if X { (fm, fp, gm, gp) } else { (gm, gp, fm, fp) };
    for b in (g - 1)..(g + m + 1) {
        if X {
            line.copy_from_slice(&q[b * n..(b + 1) * n]);
        } else {
            for (a, l) in line.iter_mut().enumerate() {
                *l = q[a * n + b];
            }
        }
        for a in (g - 1)..=(g + m + 1) {
            wave[a] = line[a] - line[a - 1];
            speed[a] = if X { su[b * stride + a] } else { sv[a * n + b] };
        }
        let row_in = b >= g && b < g + m;
        for a in g..=(g + m) {
            let r = riemann_advect(line[a - 1], line[a], speed[a]);
            let (s, w) = (r.speed, r.wave);
            let mut amdq = r.fluct_minus;
            let mut apdq = r.fluct_plus;
            let mut cq = 0.0;
            if cfg.second_order && w != 0.0 {
                let up = if s > 0.0 { wave[a - 1] } else { wave[a + 1] };
                let phi = limiter_phi(up / w, cfg.limiter);
                cq = 0.5 * s.abs() * (1.0 - s.abs() * dtdx) * phi * w;
            }
            if row_in {
                let e = if X { b * stride + a } else { a * stride + b };
                *cfl = cfl.max(s.abs() * dtdx);
                nm[e] += amdq + cq;
                np[e] += -apdq + cq;
            }
            if !cfg.transverse {
                continue;
            }
            amdq += 2.0 * cq;
            apdq -= 2.0 * cq;
            // fluctuations enter cells a-1 and a; split them with the transverse speeds
            let mut split = |cell: usize, fl: f64| {
                // transverse edges: bottom/top of (cell, b) in x-sweeps, left/right in y-sweeps
                let (lo, hi, e0, e1) = if X {
                    (sv[b * n + cell], sv[(b + 1) * n + cell], b * stride + cell, (b + 1) * stride + cell)
                } else {
                    (su[cell * stride + b], su[cell * stride + b + 1], cell * stride + b, cell * stride + b + 1)
                };
                let bm = half * lo.min(0.0) * fl;
                let bp = half * hi.max(0.0) * fl;
                tm[e0] -= bm;
                tp[e0] -= bm;
                tm[e1] -= bp;
                tp[e1] -= bp;
            };
            if a > g {
                split(a - 1, amdq);
            }
            if a < g + m {
                split(a, apdq);
            }
        }
    }
}

/// Advances `patch` by `dt` and returns the local Courant number `max |s| dt / dx`.
///
/// The patch's ghost cells must have been filled at its current time. The
/// velocity is evaluated at the midpoint `t + dt / 2`.
pub fn step_patch(patch: &mut Patch, vel: &EdgeVelocity, dt: f64, cfg: &SolverConfig, ws: &mut Workspace) -> Result<f64> {
    patch.check_ghosts()?;
    let n = patch.n();
    let m = patch.m();
    let g = GHOST;
    debug_assert_eq!(vel.n, n);
    let dtdx = dt / patch.dx();
    let factor = vel.field.time_factor(patch.time() + 0.5 * dt);
    ws.reset(n);
    let scaled = factor != 1.0;
    if scaled {
        ws.su.clear();
        ws.su.extend(vel.u.iter().map(|&u| factor * u));
        ws.sv.clear();
        ws.sv.extend(vel.v.iter().map(|&v| factor * v));
    }
    let stride = n + 1;
    let mut cfl: f64 = 0.0;
    // sweeps along x (rows) then y (columns)
    let speeds = if scaled { None } else { Some((vel.u.as_slice(), vel.v.as_slice())) };
    sweep::<true>(patch.data(), m, dtdx, cfg, ws, speeds, &mut cfl);
    sweep::<false>(patch.data(), m, dtdx, cfg, ws, speeds, &mut cfl);

    let q = patch.data_mut();
    for j in g..g + m {
        for i in g..g + m {
            let dqx = ws.fm[j * stride + i + 1] - ws.fp[j * stride + i];
            let dqy = ws.gm[(j + 1) * stride + i] - ws.gp[j * stride + i];
            q[j * n + i] -= dtdx * (dqx + dqy);
        }
    }
    patch.set_time(patch.time() + dt);
    patch.invalidate_ghosts();
    Ok(cfl)
}
