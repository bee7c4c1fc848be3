//! The run loop: initial mesh, ghost filling, global or subcycled stepping and
//! regridding, all executed over the simulated ranks of a [`Cluster`].

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{BlockConnectivity, Face, FaceNeighborSet, Forest, Partition, Quadrant, MAX_LEVEL};
use crate::geometry::{normalize, tilted_axis, BlockMapping, InitialCondition, Vec3, VelocityField};
use crate::harness::{ordered_reduce_max, Cluster, RankView};
use crate::patch::{
    average_new_coarse, corner_ghost_block, face_ghost_strip, family_spread, interpolate_new_fine, leaf_extent, tag_patch,
    Patch, SourceView, TagFlag,
};
use crate::solver::{compute_dt, step_patch, EdgeVelocity, SolverConfig, Workspace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Example {
    Swirl,
    Sphere,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stepping {
    Global,
    Subcycle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    ByCount,
    ByWeight,
}

/// Which mirrored patches travel in a subcycled level advance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExchangeScope {
    /// Every level, every time.
    All,
    /// Only levels within two of the advancing level (the widest level gap
    /// between a patch and a ghost-cell source).
    Active,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwirlConfig {
    pub period: f64,
}

impl Default for SwirlConfig {
    fn default() -> Self {
        SwirlConfig { period: 4.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SphereInitial {
    HalfSphere,
    Bump,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SphereConfig {
    pub initial: SphereInitial,
    /// Normal of the plane separating q = 1 from q = 0.
    pub normal: Vec3,
    /// Tilt of the rotation axis away from the mapping poles, in degrees.
    pub axis_tilt: f64,
    pub omega: f64,
    pub bump_center: Vec3,
    pub bump_sharpness: f64,
}

impl Default for SphereConfig {
    fn default() -> Self {
        SphereConfig {
            initial: SphereInitial::HalfSphere,
            normal: [1.0, 0.0, 1.0],
            axis_tilt: 30.0,
            omega: 2.0 * std::f64::consts::PI,
            bump_center: [0.3, 0.5, 0.8],
            bump_sharpness: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub example: Example,
    /// Cells per patch side.
    pub m: usize,
    pub min_level: u8,
    pub max_level: u8,
    pub refine_threshold: f64,
    /// Coarse steps between regrids.
    pub regrid_interval: usize,
    pub stepping: Stepping,
    pub partition_mode: PartitionMode,
    pub exchange_scope: ExchangeScope,
    pub t_final: f64,
    /// Stop after this many coarse steps even if `t_final` is not reached.
    pub max_steps: Option<usize>,
    /// Coarse time step to use instead of the CFL step.
    pub fixed_dt: Option<f64>,
    /// Number of simulated ranks.
    #[serde(alias = "P")]
    pub ranks: usize,
    pub solver: SolverConfig,
    pub swirl: SwirlConfig,
    pub sphere: SphereConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            example: Example::Swirl,
            m: 8,
            min_level: 3,
            max_level: 6,
            refine_threshold: 0.5,
            regrid_interval: 1,
            stepping: Stepping::Subcycle,
            partition_mode: PartitionMode::ByCount,
            exchange_scope: ExchangeScope::All,
            t_final: 2.0,
            max_steps: None,
            fixed_dt: None,
            ranks: 1,
            solver: SolverConfig::default(),
            swirl: SwirlConfig::default(),
            sphere: SphereConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.m < 4 || !self.m.is_multiple_of(2) {
            return bad(format!("m = {} must be even and at least 4", self.m));
        }
        if self.min_level > self.max_level || self.max_level >= MAX_LEVEL {
            return bad(format!(
                "levels must satisfy 0 <= min_level ({}) <= max_level ({}) < {}",
                self.min_level, self.max_level, MAX_LEVEL
            ));
        }
        if self.regrid_interval < 1 {
            return bad("regrid_interval must be at least 1".into());
        }
        if self.ranks < 1 {
            return bad("ranks must be at least 1".into());
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return bad(format!("t_final = {} must be positive", self.t_final));
        }
        if !(self.refine_threshold >= 0.0 && self.refine_threshold.is_finite()) {
            return bad(format!("refine_threshold = {} must be non-negative", self.refine_threshold));
        }
        if let Some(dt) = self.fixed_dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return bad(format!("fixed_dt = {dt} must be positive"));
            }
        }
        let s = &self.solver;
        if !(s.cfl_desired > 0.0 && s.cfl_desired <= s.cfl_max) {
            return bad("solver needs 0 < cfl_desired <= cfl_max".into());
        }
        if self.example == Example::Swirl && !(self.swirl.period > 0.0) {
            return bad("swirl.period must be positive".into());
        }
        if self.example == Example::Sphere {
            let n = self.sphere.normal;
            if n.iter().all(|&c| c == 0.0) {
                return bad("sphere.normal must be nonzero".into());
            }
        }
        Ok(())
    }

    /// Cells per block side at the minimum and maximum level.
    pub fn effective_resolutions(&self) -> (usize, usize) {
        (self.m << self.min_level, self.m << self.max_level)
    }

    pub fn connectivity(&self) -> BlockConnectivity {
        match self.example {
            Example::Swirl => BlockConnectivity::unit_square(),
            Example::Sphere => BlockConnectivity::two_tree_sphere(),
        }
    }

    pub fn mapping(&self) -> BlockMapping {
        match self.example {
            Example::Swirl => BlockMapping::IdentityUnitSquare,
            Example::Sphere => BlockMapping::TwoTreeHemisphere,
        }
    }

    pub fn velocity(&self) -> VelocityField {
        match self.example {
            Example::Swirl => VelocityField::Swirl { period: self.swirl.period },
            Example::Sphere => VelocityField::RigidRotation {
                axis: tilted_axis(self.sphere.axis_tilt),
                omega: self.sphere.omega,
            },
        }
    }

    pub fn initial_condition(&self) -> InitialCondition {
        match (self.example, self.sphere.initial) {
            (Example::Swirl, _) => InitialCondition::LeftRightStep,
            (Example::Sphere, SphereInitial::HalfSphere) => InitialCondition::HalfSphere {
                normal: normalize(self.sphere.normal),
            },
            (Example::Sphere, SphereInitial::Bump) => InitialCondition::GaussianBump {
                center: normalize(self.sphere.bump_center),
                sharpness: self.sphere.bump_sharpness,
            },
        }
    }
}

/// Counters and timings accumulated over a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StepStats {
    pub coarse_steps: u64,
    /// Interior cells advanced, summed over all patch steps.
    pub cell_updates: u64,
    /// Ghost exchange rounds, including those made for regridding.
    pub exchanges: u64,
    /// Patch steps taken per level; index is the level.
    pub level_steps: Vec<u64>,
    /// Largest Courant number of any patch step.
    pub max_cfl: f64,
    pub regrids: u64,
    /// Patches tagged during regrids.
    pub tagged_patches: u64,
    pub refined: u64,
    pub coarsened: u64,
    pub migrations: u64,
    pub ghost_messages: u64,
    pub ghost_bytes: u64,
    pub seconds_advance: f64,
    pub seconds_exchange: f64,
    pub seconds_regrid: f64,
}

/// What one regrid did.
#[derive(Clone, Debug, PartialEq)]
pub struct RegridReport {
    pub step: usize,
    pub leaves_before: usize,
    pub leaves_after: usize,
    pub refined: usize,
    pub forced: usize,
    pub coarsened: usize,
    pub migrated: usize,
    pub mass_before: f64,
    pub mass_after: f64,
}

fn sample_patch(leaf: Quadrant, m: usize, time: f64, mapping: &BlockMapping, ic: &InitialCondition) -> Patch {
    let block = leaf.tree as usize;
    Patch::from_fn(leaf, m, time, |x, y| ic.value(mapping, block, x, y))
}

/// Compensated sum, so totals do not depend on how many terms there are.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = s + v;
        c += if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
        s = t;
    }
    s + c
}

/// Global indices of the leaves that supply each ghost region of one patch.
#[derive(Clone, Debug)]
pub struct FillPlan {
    faces: Vec<(FaceNeighborSet, Vec<usize>)>,
    corners: [Option<usize>; 4],
}

impl FillPlan {
    pub fn new(forest: &Forest, leaf: &Quadrant) -> Self {
        let index = |q: &Quadrant| forest.index_of(q).expect("neighbor is a leaf");
        let faces = Face::ALL
            .iter()
            .map(|&f| {
                let nb = forest.face_neighbor(leaf, f);
                let ids = nb.leaves().iter().map(index).collect();
                (nb, ids)
            })
            .collect();
        let corners = [0, 1, 2, 3].map(|c| forest.corner_neighbor(leaf, c).map(|e| index(&e)));
        FillPlan { faces, corners }
    }
}

/// Fills every ghost cell of the local patches on `level` (all levels for
/// `None`) from local patches and received ghost patches. `plans` holds one
/// entry per local patch.
pub fn fill_rank_ghosts(view: &mut RankView, plans: &[FillPlan], conn: &BlockConnectivity, m: usize, level: Option<u8>) -> Result<()> {
    let fills = {
        let v = &*view;
        (0..v.patches.len())
            .into_par_iter()
            .filter(|&k| level.is_none_or(|l| v.patches[k].leaf().level == l))
            .map(|k| {
                let p = &v.patches[k];
                let t = p.time();
                let dst = p.view();
                let plan = &plans[k];
                let lookup = |i: usize| -> Result<SourceView<'_>> {
                    v.source(i, m).ok_or(Error::MissingTimeLevels {
                        leaf: p.leaf(),
                        target: t,
                    })
                };
                let mut faces = Vec::with_capacity(4);
                for (face, (nb, ids)) in Face::ALL.iter().zip(&plan.faces) {
                    let srcs = ids.iter().map(|&i| lookup(i)).collect::<Result<Vec<_>>>()?;
                    faces.push(face_ghost_strip(&dst, *face, nb, &srcs, conn, t)?);
                }
                let mut corners = Vec::with_capacity(4);
                for (c, src) in plan.corners.iter().enumerate() {
                    corners.push(match src {
                        Some(i) => corner_ghost_block(&dst, c, &lookup(*i)?, conn, t)?,
                        None => None,
                    });
                }
                Ok((k, faces, corners))
            })
            .collect::<Result<Vec<_>>>()?
    };
    for (k, faces, corners) in fills {
        let p = &mut view.patches[k];
        for (face, strip) in Face::ALL.iter().zip(&faces) {
            p.set_face_ghosts(*face, strip);
        }
        for (c, block) in corners.iter().enumerate() {
            match block {
                Some(b) => p.set_corner_ghosts(c, b),
                None => p.extrapolate_corner(c),
            }
        }
        p.mark_ghosts_filled();
    }
    Ok(())
}

/// A simulation distributed over simulated ranks.
#[derive(Clone, Debug)]
pub struct Simulation {
    cfg: RunConfig,
    mapping: BlockMapping,
    field: VelocityField,
    initial: InitialCondition,
    forest: Forest,
    cluster: Cluster,
    plans: Vec<Vec<FillPlan>>,
    time: f64,
    steps: usize,
    stats: StepStats,
    regrids: Vec<RegridReport>,
}

impl Simulation {
    /// Validates `cfg`, builds the initial mesh (refined where the initial data
    /// is tagged) and distributes it.
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mapping = cfg.mapping();
        let field = cfg.velocity();
        let initial = cfg.initial_condition();
        let mut forest = Forest::new_uniform(cfg.connectivity(), cfg.min_level);
        let mut sim = None;
        for _ in 0..2 * (cfg.max_level - cfg.min_level) as usize + 2 {
            let mut s = Simulation::on_forest(cfg.clone(), mapping, field, initial, forest.clone())?;
            if cfg.min_level == cfg.max_level {
                sim = Some(s);
                break;
            }
            s.exchange(None)?;
            s.fill_ghosts(None)?;
            let refine: Vec<Quadrant> = s
                .cluster
                .patches()
                .filter(|(_, p)| tag_patch(p, cfg.refine_threshold, cfg.min_level, cfg.max_level) == TagFlag::Refine)
                .map(|(_, p)| p.leaf())
                .collect();
            if refine.is_empty() {
                sim = Some(s);
                break;
            }
            forest.refine_leaves(&refine)?;
            forest.balance_2to1()?;
        }
        let mut sim = match sim {
            Some(s) => s,
            None => Simulation::on_forest(cfg, mapping, field, initial, forest)?,
        };
        sim.stats = StepStats::default();
        sim.cluster.counters = Default::default();
        Ok(sim)
    }

    fn on_forest(cfg: RunConfig, mapping: BlockMapping, field: VelocityField, initial: InitialCondition, forest: Forest) -> Result<Self> {
        let patches: Vec<Patch> = forest
            .leaves()
            .copied()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|l| sample_patch(l, cfg.m, 0.0, &mapping, &initial))
            .collect();
        let partition = Self::target_partition(&cfg, &forest);
        let cluster = Cluster::new(&forest, partition, patches, cfg.m);
        let mut sim = Simulation {
            cfg,
            mapping,
            field,
            initial,
            forest,
            cluster,
            plans: Vec::new(),
            time: 0.0,
            steps: 0,
            stats: StepStats::default(),
            regrids: Vec::new(),
        };
        sim.rebuild_rank_data();
        Ok(sim)
    }

    fn target_partition(cfg: &RunConfig, forest: &Forest) -> Partition {
        let weights: Vec<u64> = match cfg.partition_mode {
            PartitionMode::ByCount => vec![1; forest.num_leaves()],
            PartitionMode::ByWeight => forest.leaves().map(|l| 1u64 << (l.level - cfg.min_level)).collect(),
        };
        Partition::by_weight(&weights, cfg.ranks).keep_families(forest)
    }

    fn rebuild_rank_data(&mut self) {
        let (mapping, field, forest) = (&self.mapping, &self.field, &self.forest);
        self.plans = self
            .cluster
            .views
            .par_iter_mut()
            .map(|v| {
                v.velocities = v.patches.par_iter().map(|p| EdgeVelocity::new(p, mapping, field)).collect();
                v.patches.par_iter().map(|p| FillPlan::new(forest, &p.leaf())).collect()
            })
            .collect();
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn forest(&self) -> &Forest {
        &self.forest
    }

    pub fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    pub fn cluster_mut(&mut self) -> &mut Cluster {
        &mut self.cluster
    }

    pub fn mapping(&self) -> &BlockMapping {
        &self.mapping
    }

    pub fn velocity(&self) -> &VelocityField {
        &self.field
    }

    pub fn initial_condition(&self) -> &InitialCondition {
        &self.initial
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn regrid_reports(&self) -> &[RegridReport] {
        &self.regrids
    }

    /// Counters so far, with the harness message counters folded in.
    pub fn stats(&self) -> StepStats {
        let mut s = self.stats.clone();
        let c = &self.cluster.counters;
        s.ghost_messages = c.ghost_messages;
        s.ghost_bytes = c.ghost_bytes;
        s.migrations = c.migrations;
        s
    }

    pub fn is_finished(&self) -> bool {
        self.time >= self.cfg.t_final || self.cfg.max_steps.is_some_and(|n| self.steps >= n)
    }

    /// `sum q * h^2` over all cells in computational coordinates.
    pub fn total_mass(&self) -> f64 {
        let per_patch: Vec<f64> = self
            .cluster
            .patches()
            .map(|(_, p)| {
                let h = p.dx();
                neumaier_sum(p.interior_values()) * h * h
            })
            .collect();
        neumaier_sum(per_patch)
    }

    /// Area-weighted L1 distance between the cell values and `exact` sampled at
    /// cell centers, on the physical surface.
    pub fn l1_error(&self, exact: impl Fn(usize, f64, f64) -> f64 + Sync) -> f64 {
        let mapping = &self.mapping;
        let per_patch: Vec<f64> = self
            .cluster
            .views
            .iter()
            .flat_map(|v| v.patches.iter())
            .collect::<Vec<_>>()
            .par_iter()
            .map(|p| {
                let block = p.leaf().tree as usize;
                let h = p.dx();
                let m = p.m();
                let mut terms = Vec::with_capacity(m * m);
                for j in 0..m {
                    for i in 0..m {
                        let c = p.center(i as isize, j as isize);
                        let [a, b] = mapping.jacobian(block, c[0], c[1]);
                        let n = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
                        let area = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt() * h * h;
                        terms.push((p.interior(i, j) - exact(block, c[0], c[1])).abs() * area);
                    }
                }
                neumaier_sum(terms)
            })
            .collect();
        neumaier_sum(per_patch)
    }

    /// Sends ghost patches for `level` (every level for `None`), honoring the
    /// exchange scope.
    fn exchange(&mut self, level: Option<u8>) -> Result<()> {
        let t = Instant::now();
        let scope = self.cfg.exchange_scope;
        let filter = move |l: u8| match (level, scope) {
            (Some(a), ExchangeScope::Active) => l.abs_diff(a) <= 2,
            _ => true,
        };
        self.cluster.exchange_ghost_patches(&self.forest, &filter)?;
        self.stats.exchanges += 1;
        self.stats.seconds_exchange += t.elapsed().as_secs_f64();
        Ok(())
    }

    fn fill_ghosts(&mut self, level: Option<u8>) -> Result<()> {
        let t = Instant::now();
        let (conn, m) = (self.forest.connectivity(), self.cfg.m);
        self.cluster
            .views
            .par_iter_mut()
            .zip(&self.plans)
            .try_for_each(|(v, plans)| fill_rank_ghosts(v, plans, conn, m, level))?;
        self.stats.seconds_exchange += t.elapsed().as_secs_f64();
        Ok(())
    }

    /// Steps the local patches on `level` by `dt` and stamps them with `t_end`.
    /// Returns the largest Courant number seen.
    fn step_level(&mut self, level: Option<u8>, dt: f64, t_end: f64, keep_previous: bool) -> Result<f64> {
        let t = Instant::now();
        let solver = self.cfg.solver;
        let per_rank: Vec<(f64, u64)> = self
            .cluster
            .views
            .par_iter_mut()
            .map(|v| -> Result<(f64, u64)> {
                let RankView { patches, velocities, .. } = v;
                patches
                    .par_iter_mut()
                    .zip(velocities.par_iter())
                    .filter(|(p, _)| level.is_none_or(|l| p.leaf().level == l))
                    .map_init(Workspace::default, |ws, (p, vel)| {
                        if keep_previous {
                            p.save_previous();
                        }
                        let cfl = step_patch(p, vel, dt, &solver, ws)?;
                        p.set_time(t_end);
                        Ok((cfl, (p.m() * p.m()) as u64))
                    })
                    .try_reduce(|| (0.0, 0), |a, b| Ok((a.0.max(b.0), a.1 + b.1)))
            })
            .collect::<Result<_>>()?;
        let cfl = ordered_reduce_max(&per_rank.iter().map(|r| r.0).collect::<Vec<_>>());
        self.stats.cell_updates += per_rank.iter().map(|r| r.1).sum::<u64>();
        let levels = match level {
            Some(l) => vec![l],
            None => (self.forest.min_level()..=self.forest.max_level()).collect(),
        };
        for l in levels {
            let count = self.forest.leaves().filter(|q| q.level == l).count() as u64;
            if self.stats.level_steps.len() <= l as usize {
                self.stats.level_steps.resize(l as usize + 1, 0);
            }
            self.stats.level_steps[l as usize] += count;
        }
        self.stats.seconds_advance += t.elapsed().as_secs_f64();
        Ok(cfl)
    }

    /// One exchange, then every patch advances by the same `dt`.
    pub fn advance_global(&mut self, dt: f64, t_end: f64) -> Result<f64> {
        self.exchange(None)?;
        self.fill_ghosts(None)?;
        self.step_level(None, dt, t_end, false)
    }

    /// Advances `level` once by `dt` to `t_end`, then the next finer level twice
    /// by `dt / 2`.
    pub fn advance_subcycled(&mut self, level: u8, t0: f64, dt: f64, t_end: f64) -> Result<f64> {
        self.exchange(Some(level))?;
        self.fill_ghosts(Some(level))?;
        let mut cfl = self.step_level(Some(level), dt, t_end, true)?;
        if level < self.forest.max_level() {
            let half = 0.5 * dt;
            let t_mid = t0 + half;
            cfl = cfl.max(self.advance_subcycled(level + 1, t0, half, t_mid)?);
            cfl = cfl.max(self.advance_subcycled(level + 1, t_mid, half, t_end)?);
        }
        Ok(cfl)
    }

    /// Largest edge speed at time `t`: the closed-form bound when the field has
    /// one, otherwise the maximum over all patches in rank order.
    pub fn max_speed(&self, t: f64) -> f64 {
        if let Some(s) = self.field.speed_bound() {
            return s;
        }
        let per_rank: Vec<f64> = self
            .cluster
            .views
            .par_iter()
            .map(|v| v.velocities.iter().fold(0.0, |a: f64, vel| a.max(vel.max_speed(t))))
            .collect();
        ordered_reduce_max(&per_rank)
    }

    /// Coarse time step for the current mesh: the step of the coarsest level
    /// when subcycling, of the finest level otherwise.
    pub fn coarse_dt(&self) -> Result<f64> {
        if let Some(dt) = self.cfg.fixed_dt {
            return Ok(dt);
        }
        let level = match self.cfg.stepping {
            Stepping::Global => self.forest.max_level(),
            Stepping::Subcycle => self.forest.min_level(),
        };
        let dx = 1.0 / (self.cfg.m as f64 * (1u64 << level) as f64);
        compute_dt(self.max_speed(self.time), dx, &self.cfg.solver)
    }

    /// One coarse step, preceded by a regrid when one is due.
    pub fn step(&mut self) -> Result<()> {
        if self.steps > 0 && self.steps.is_multiple_of(self.cfg.regrid_interval) {
            self.regrid()?;
        }
        let mut dt = self.coarse_dt()?;
        let t0 = self.time;
        let mut t_end = t0 + dt;
        if t_end >= self.cfg.t_final {
            dt = self.cfg.t_final - t0;
            t_end = self.cfg.t_final;
        }
        let cfl = match self.cfg.stepping {
            Stepping::Global => self.advance_global(dt, t_end)?,
            Stepping::Subcycle => self.advance_subcycled(self.forest.min_level(), t0, dt, t_end)?,
        };
        self.stats.max_cfl = self.stats.max_cfl.max(cfl);
        self.time = t_end;
        self.steps += 1;
        self.stats.coarse_steps += 1;
        Ok(())
    }

    /// Steps until the final time or step limit, calling `observe` after each step.
    pub fn run(&mut self, mut observe: impl FnMut(&Simulation) -> Result<()>) -> Result<()> {
        while !self.is_finished() {
            self.step()?;
            observe(self)?;
        }
        Ok(())
    }

    /// Tag, refine, balance, coarsen, transfer and repartition. A no-op on
    /// single-level configurations.
    pub fn regrid(&mut self) -> Result<()> {
        if self.cfg.min_level == self.cfg.max_level {
            return Ok(());
        }
        let clock = Instant::now();
        let cfg = self.cfg.clone();
        let mass_before = self.total_mass();
        let leaves_before = self.forest.num_leaves();
        self.exchange(None)?;
        self.fill_ghosts(None)?;

        let (thr, lo, hi) = (cfg.refine_threshold, cfg.min_level, cfg.max_level);
        let per_rank: Vec<(Vec<Quadrant>, Vec<Quadrant>)> = self
            .cluster
            .views
            .par_iter()
            .map(|v| -> Result<_> {
                let flags: Vec<TagFlag> = v.patches.iter().map(|p| tag_patch(p, thr, lo, hi)).collect();
                let refine = v
                    .patches
                    .iter()
                    .zip(&flags)
                    .filter(|(_, f)| **f == TagFlag::Refine)
                    .map(|(p, _)| p.leaf())
                    .collect();
                let mut coarsen = Vec::new();
                let mut k = 0;
                while k + 4 <= v.patches.len() {
                    let fam = &v.patches[k..k + 4];
                    let leaf = fam[0].leaf();
                    let family = leaf.level > 0
                        && leaf.child_id() == 0
                        && fam.iter().enumerate().all(|(c, p)| p.leaf() == leaf.parent().unwrap().child(c));
                    if !family {
                        k += 1;
                        continue;
                    }
                    if flags[k..k + 4].iter().all(|&f| f == TagFlag::CoarsenOk)
                        && family_spread([&fam[0], &fam[1], &fam[2], &fam[3]])? <= thr
                    {
                        coarsen.push(leaf.parent().unwrap());
                    }
                    k += 4;
                }
                Ok((refine, coarsen))
            })
            .collect::<Result<_>>()?;
        self.stats.tagged_patches += leaves_before as u64;
        let refine: Vec<Quadrant> = per_rank.iter().flat_map(|r| r.0.iter().copied()).collect();
        let candidates: Vec<Quadrant> = per_rank.iter().flat_map(|r| r.1.iter().copied()).collect();

        let mut forest = self.forest.clone();
        forest.refine_leaves(&refine)?;
        let forced = forest.balance_2to1()?;
        let coarsen: Vec<Quadrant> = candidates
            .into_iter()
            .filter(|p| forest.is_complete_family(p) && coarsening_keeps_balance(&forest, p))
            .collect();
        forest.coarsen_families(&coarsen)?;
        debug_assert!(forest.is_balanced());

        // transfer on the old owners, then move patches to the new partition
        let new_forest = &forest;
        let new_lists: Vec<Vec<Patch>> = self
            .cluster
            .views
            .par_iter()
            .map(|v| transfer_rank(v, new_forest))
            .collect::<Result<_>>()?;
        let mut bounds = vec![0];
        for (v, list) in self.cluster.views.iter_mut().zip(new_lists) {
            let start = *bounds.last().unwrap();
            bounds.push(start + list.len());
            v.range = start..start + list.len();
            v.patches = list;
        }
        debug_assert_eq!(*bounds.last().unwrap(), forest.num_leaves());
        self.cluster.partition = Partition::from_bounds(bounds);
        let target = Self::target_partition(&cfg, &forest);
        self.forest = forest;
        let migrated = self.cluster.repartition_migrate(&self.forest, target)?;
        self.rebuild_rank_data();

        let report = RegridReport {
            step: self.steps,
            leaves_before,
            leaves_after: self.forest.num_leaves(),
            refined: refine.len(),
            forced: forced.len(),
            coarsened: coarsen.len(),
            migrated,
            mass_before,
            mass_after: self.total_mass(),
        };
        self.stats.regrids += 1;
        self.stats.refined += (report.refined + report.forced) as u64;
        self.stats.coarsened += report.coarsened as u64;
        self.regrids.push(report);
        self.stats.seconds_regrid += clock.elapsed().as_secs_f64();
        Ok(())
    }

    /// Every patch in leaf order with the rank that owns it.
    pub fn patches(&self) -> impl Iterator<Item = (usize, &Patch)> + '_ {
        self.cluster.patches()
    }

    /// Physical coordinates of a reference point.
    pub fn physical(&self, block: usize, xi: f64, eta: f64) -> Vec3 {
        self.mapping.map(block, xi, eta)
    }
}

/// Whether replacing the family of `parent` by `parent` keeps every face
/// neighbor within one level of it.
fn coarsening_keeps_balance(forest: &Forest, parent: &Quadrant) -> bool {
    Face::ALL
        .iter()
        .flat_map(|&f| forest.leaves_touching(parent, f))
        .all(|l| parent.contains(&l) || l.level <= parent.level + 1)
}

/// New local patch list of one rank after its leaves were refined or coarsened.
fn transfer_rank(v: &RankView, forest: &Forest) -> Result<Vec<Patch>> {
    let mut out = Vec::with_capacity(v.patches.len());
    let mut k = 0;
    while k < v.patches.len() {
        let p = &v.patches[k];
        let leaf = p.leaf();
        if forest.contains_leaf(&leaf) {
            let mut q = p.clone();
            q.clear_previous();
            out.push(q);
            k += 1;
        } else if forest.contains_leaf(&leaf.child(0)) {
            out.extend(interpolate_new_fine(p)?);
            k += 1;
        } else if let Some(parent) = leaf.parent().filter(|q| forest.contains_leaf(q)) {
            let fam = v.patches.get(k..k + 4).ok_or(Error::IncompleteFamily(parent))?;
            out.push(average_new_coarse([&fam[0], &fam[1], &fam[2], &fam[3]])?);
            k += 4;
        } else {
            return Err(Error::LeafNotFound(leaf));
        }
    }
    Ok(out)
}

/// Cell centers of a leaf in reference coordinates.
pub fn cell_centers(leaf: &Quadrant, m: usize) -> impl Iterator<Item = (usize, usize, f64, f64)> {
    let (o, s) = leaf_extent(leaf);
    let h = s / m as f64;
    (0..m).flat_map(move |j| (0..m).map(move |i| (i, j, o[0] + (i as f64 + 0.5) * h, o[1] + (j as f64 + 0.5) * h)))
}

/// One row of the strategy comparison.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrategyRow {
    pub mesh: String,
    pub remesh: String,
    pub partition: String,
    pub time_step: String,
    pub cell_updates: u64,
    pub exchanges: u64,
    pub seconds: f64,
    pub stats: StepStats,
}

fn remesh_label(cfg: &RunConfig) -> String {
    match (cfg.min_level == cfg.max_level, cfg.regrid_interval) {
        (true, _) => "none".into(),
        (false, 1) => "every step".into(),
        (false, k) => format!("every {k}"),
    }
}

/// The seven strategies compared: a uniform mesh at `base.max_level`, then
/// adaptive meshes remeshed every step or every 4 steps under global or
/// subcycled stepping and count or weight partitioning.
pub fn strategy_matrix(base: &RunConfig) -> Vec<RunConfig> {
    let uniform = RunConfig {
        min_level: base.max_level,
        stepping: Stepping::Global,
        partition_mode: PartitionMode::ByCount,
        regrid_interval: 1,
        ..base.clone()
    };
    let mut out = vec![uniform];
    for (partition_mode, stepping) in [
        (PartitionMode::ByCount, Stepping::Global),
        (PartitionMode::ByCount, Stepping::Subcycle),
        (PartitionMode::ByWeight, Stepping::Subcycle),
    ] {
        for regrid_interval in [1, 4] {
            out.push(RunConfig {
                partition_mode,
                stepping,
                regrid_interval,
                ..base.clone()
            });
        }
    }
    out
}

impl StrategyRow {
    /// Labels the strategy of `cfg` and attaches its counters.
    pub fn describe(cfg: &RunConfig, stats: StepStats, seconds: f64) -> Self {
        StrategyRow {
            mesh: if cfg.min_level == cfg.max_level { "uniform" } else { "AMR" }.into(),
            remesh: remesh_label(cfg),
            partition: match cfg.partition_mode {
                PartitionMode::ByCount => "by count",
                PartitionMode::ByWeight => "by weight",
            }
            .into(),
            time_step: match cfg.stepping {
                Stepping::Global => "global",
                Stepping::Subcycle => "subcycle",
            }
            .into(),
            cell_updates: stats.cell_updates,
            exchanges: stats.exchanges,
            seconds,
            stats,
        }
    }
}

/// Runs `cfg` to completion and summarizes it as a strategy row.
pub fn run_strategy(cfg: &RunConfig) -> Result<StrategyRow> {
    let clock = Instant::now();
    let mut sim = Simulation::new(cfg.clone())?;
    sim.run(|_| Ok(()))?;
    Ok(StrategyRow::describe(cfg, sim.stats(), clock.elapsed().as_secs_f64()))
}
