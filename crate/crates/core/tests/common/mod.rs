#![allow(dead_code)]

use patchforest::driver::{fill_rank_ghosts, FillPlan, RunConfig, Simulation};
use patchforest::forest::{BlockConnectivity, Face, FaceLink, Forest, Partition, Quadrant, ROOT_LEN};
use patchforest::harness::Cluster;
use patchforest::io::FieldSnapshot;
use patchforest::patch::{Patch, GHOST};

pub fn swirl(min_level: u8, max_level: u8) -> RunConfig {
    RunConfig {
        min_level,
        max_level,
        m: 8,
        ..RunConfig::default()
    }
}

pub fn final_csv(cfg: RunConfig) -> String {
    let mut sim = Simulation::new(cfg).unwrap();
    sim.run(|_| Ok(())).unwrap();
    FieldSnapshot::capture(&sim).to_csv_string()
}

/// Cell of the block-wide array at `(gi, gj)`, following at most one face
/// across the block boundary. `None` beyond physical boundaries and at cells
/// outside the block in both directions.
pub fn assembled_cell(conn: &BlockConnectivity, n: i64, block: usize, gi: i64, gj: i64) -> Option<(usize, i64, i64)> {
    let out_x = gi < 0 || gi >= n;
    let out_y = gj < 0 || gj >= n;
    match (out_x, out_y) {
        (false, false) => return Some((block, gi, gj)),
        (true, true) => return None,
        _ => {}
    }
    let (face, depth, t) = if gi < 0 {
        (Face::Left, -gi - 1, gj)
    } else if gi >= n {
        (Face::Right, gi - n, gj)
    } else if gj < 0 {
        (Face::Bottom, -gj - 1, gi)
    } else {
        (Face::Top, gj - n, gi)
    };
    match conn.link(block, face) {
        FaceLink::Boundary => None,
        FaceLink::Neighbor { block: nb, face: nf, reversed } => {
            let t = if reversed { n - 1 - t } else { t };
            let normal = if nf.is_upper() { n - 1 - depth } else { depth };
            Some(if nf.axis() == 0 { (nb, normal, t) } else { (nb, t, normal) })
        }
    }
}

pub fn cell_value(n: i64, block: usize, gi: i64, gj: i64) -> f64 {
    ((block as i64 * n + gj) * n + gi) as f64 + 0.25
}

/// Exchanges and fills ghosts on a uniform forest over `ranks` ranks and
/// compares every ghost cell that the block-wide arrays determine. Returns
/// (cells compared, mismatches).
pub fn ghost_equivalence(conn: BlockConnectivity, level: u8, m: usize, ranks: usize) -> (usize, usize) {
    let forest = Forest::new_uniform(conn.clone(), level);
    let n = (m << level) as i64;
    let patches: Vec<Patch> = forest
        .leaves()
        .map(|q| {
            let (lx, ly) = q.level_coords();
            let b = q.tree as usize;
            let mut p = Patch::new(*q, m, 0.0);
            let values: Vec<f64> = (0..m * m)
                .map(|k| cell_value(n, b, (lx as usize * m + k % m) as i64, (ly as usize * m + k / m) as i64))
                .collect();
            p.set_interior_values(&values);
            p
        })
        .collect();
    let part = Partition::by_count(forest.num_leaves(), ranks);
    let mut cluster = Cluster::new(&forest, part, patches, m);
    cluster.exchange_ghost_patches(&forest, &|_| true).unwrap();
    for view in &mut cluster.views {
        let plans: Vec<FillPlan> = view.patches.iter().map(|p| FillPlan::new(&forest, &p.leaf())).collect();
        fill_rank_ghosts(view, &plans, &conn, m, None).unwrap();
    }
    let (mut checked, mut bad) = (0, 0);
    let g = GHOST as i64;
    let mi = m as i64;
    for (_, p) in cluster.patches() {
        let q = p.leaf();
        let (lx, ly) = q.level_coords();
        for j in -g..mi + g {
            for i in -g..mi + g {
                if (0..mi).contains(&i) && (0..mi).contains(&j) {
                    continue;
                }
                let (gi, gj) = (lx as i64 * mi + i, ly as i64 * mi + j);
                let Some((b, ai, aj)) = assembled_cell(&conn, n, q.tree as usize, gi, gj) else {
                    continue;
                };
                checked += 1;
                if p.get((i + g) as usize, (j + g) as usize) != cell_value(n, b, ai, aj) {
                    bad += 1;
                }
            }
        }
    }
    (checked, bad)
}

fn face_adjacent(a: &Quadrant, b: &Quadrant) -> bool {
    let (ax0, ay0, ax1, ay1) = (a.x, a.y, a.x + a.len(), a.y + a.len());
    let (bx0, by0, bx1, by1) = (b.x, b.y, b.x + b.len(), b.y + b.len());
    let overlap_y = ay0.max(by0) < ay1.min(by1);
    let overlap_x = ax0.max(bx0) < ax1.min(bx1);
    ((ax1 == bx0 || bx1 == ax0) && overlap_y) || ((ay1 == by0 || by1 == ay0) && overlap_x)
}

/// Pairs of face-adjacent leaves in one tree whose levels differ by more than one.
pub fn brute_force_level_gaps(forest: &Forest) -> usize {
    let mut gaps = 0;
    for b in 0..forest.num_blocks() {
        let leaves = forest.tree_leaves(b);
        for (k, a) in leaves.iter().enumerate() {
            for c in &leaves[k + 1..] {
                if a.level.abs_diff(c.level) > 1 && face_adjacent(a, c) {
                    gaps += 1;
                }
            }
        }
    }
    gaps + cross_tree_level_gaps(forest)
}

/// Samples points just outside every tree-boundary face at the finest
/// resolution and compares the levels of the leaves on either side.
fn cross_tree_level_gaps(forest: &Forest) -> usize {
    let conn = forest.connectivity();
    let fine = 1u32 << forest.max_level();
    let h = 1.0 / fine as f64;
    let mut gaps = 0;
    for q in forest.leaves() {
        let b = q.tree as usize;
        let x0 = q.x as f64 / ROOT_LEN as f64;
        let y0 = q.y as f64 / ROOT_LEN as f64;
        let s = q.len() as f64 / ROOT_LEN as f64;
        let samples = (s / h).round() as usize;
        for face in Face::ALL {
            if !q.touches_tree_face(face) {
                continue;
            }
            for k in 0..samples {
                let t = (k as f64 + 0.5) * h;
                let p = match face {
                    Face::Left => [x0 - 0.5 * h, y0 + t],
                    Face::Right => [x0 + s + 0.5 * h, y0 + t],
                    Face::Bottom => [x0 + t, y0 - 0.5 * h],
                    Face::Top => [x0 + t, y0 + s + 0.5 * h],
                };
                let Some((nb, pn)) = conn.map_point(b, face, p) else {
                    continue;
                };
                let (idx, _) = forest.locate_point(nb, pn).expect("point inside a tree");
                if forest.leaf(idx).level.abs_diff(q.level) > 1 {
                    gaps += 1;
                }
            }
        }
    }
    gaps
}

/// Ghost leaves of each rank found by testing every leaf pair for a shared
/// point, within one tree only.
pub fn brute_force_ghost_counts(forest: &Forest, part: &Partition) -> Vec<usize> {
    assert_eq!(forest.num_blocks(), 1);
    let leaves: Vec<Quadrant> = forest.leaves().copied().collect();
    let touches = |a: &Quadrant, b: &Quadrant| {
        a.x <= b.x + b.len() && b.x <= a.x + a.len() && a.y <= b.y + b.len() && b.y <= a.y + a.len()
    };
    (0..part.num_ranks())
        .map(|r| {
            let local = part.range(r);
            (0..leaves.len())
                .filter(|k| !local.contains(k))
                .filter(|&k| local.clone().any(|l| touches(&leaves[k], &leaves[l])))
                .count()
        })
        .collect()
}
