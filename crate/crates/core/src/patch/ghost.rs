use super::{leaf_extent, minmod, Blend, Patch, SourceView, GHOST};
use crate::error::Result;
use crate::forest::{BlockConnectivity, Face, FaceNeighborSet, NeighborTransform, Quadrant};

/// Center of ghost cell `depth` (1-based) at tangential position `k` on `face`.
fn ghost_center(leaf: &Quadrant, m: usize, face: Face, depth: usize, k: usize) -> [f64; 2] {
    let (o, s) = leaf_extent(leaf);
    let h = s / m as f64;
    let t = (k as f64 + 0.5) * h;
    let d = (depth as f64 - 0.5) * h;
    match face {
        Face::Left => [o[0] - d, o[1] + t],
        Face::Right => [o[0] + s + d, o[1] + t],
        Face::Bottom => [o[0] + t, o[1] - d],
        Face::Top => [o[0] + t, o[1] + s + d],
    }
}

/// Maps a point beyond `face` of `from` into the frame of the neighbor, or
/// leaves it untouched when both share a block.
fn to_neighbor(conn: &BlockConnectivity, from: &Quadrant, face: Face, t: &NeighborTransform, p: [f64; 2]) -> Option<[f64; 2]> {
    if t.across_blocks {
        conn.map_point(from.tree as usize, face, p).map(|(_, q)| q)
    } else {
        Some(p)
    }
}

fn inside(leaf: &Quadrant, p: [f64; 2]) -> bool {
    let (o, s) = leaf_extent(leaf);
    o[0] <= p[0] && p[0] < o[0] + s && o[1] <= p[1] && p[1] < o[1] + s
}

/// Value of coarse cell `(i, j)`'s neighbor in direction `(di, dj)`, looked up
/// either in the coarse patch itself or as the average of the fine
/// destination's cells it covers. `None` if neither holds it.
fn coarse_neighbor_value(
    src: &SourceView,
    sb: Blend,
    dst: &SourceView,
    db: Blend,
    back_face: Face,
    t: &NeighborTransform,
    conn: &BlockConnectivity,
    (i, j): (usize, usize),
    (di, dj): (isize, isize),
) -> Option<f64> {
    let ni = i as isize + di;
    let nj = j as isize + dj;
    let m = src.m as isize;
    if (0..m).contains(&ni) && (0..m).contains(&nj) {
        return Some(src.value(ni as usize, nj as usize, sb));
    }
    let (o, s) = leaf_extent(&src.leaf);
    let h = s / src.m as f64;
    let c = [o[0] + (ni as f64 + 0.5) * h, o[1] + (nj as f64 + 0.5) * h];
    let p = if t.across_blocks {
        let beyond = match back_face {
            Face::Left => c[0] < 0.0,
            Face::Right => c[0] > 1.0,
            Face::Bottom => c[1] < 0.0,
            Face::Top => c[1] > 1.0,
        };
        if !beyond {
            return None;
        }
        let (block, p) = conn.map_point(src.leaf.tree as usize, back_face, c)?;
        if block != dst.leaf.tree as usize {
            return None;
        }
        p
    } else {
        c
    };
    if !inside(&dst.leaf, p) {
        return None;
    }
    // the coarse cell covers a 2x2 block of destination cells
    let (d0, ds) = leaf_extent(&dst.leaf);
    let hf = ds / dst.m as f64;
    let i0 = ((p[0] - d0[0]) / hf - 1.0).round();
    let j0 = ((p[1] - d0[1]) / hf - 1.0).round();
    let mf = dst.m as f64;
    if i0 < 0.0 || j0 < 0.0 || i0 + 1.0 >= mf || j0 + 1.0 >= mf {
        return None;
    }
    let (i0, j0) = (i0 as usize, j0 as usize);
    Some(
        0.25 * (dst.value(i0, j0, db) + dst.value(i0 + 1, j0, db) + dst.value(i0, j0 + 1, db) + dst.value(i0 + 1, j0 + 1, db)),
    )
}

/// Fills the part of `dst`'s `face` strip that `src` covers.
///
/// Same-level sources are copied, coarser sources are interpolated with
/// minmod-limited slopes, finer sources are averaged. `dst` is the
/// destination's interior at the target time `t`; `src` is time-interpolated
/// to `t` when needed. Covered cells are written to `out` (laid out as
/// `[(depth - 1) * m + k]`) and flagged in `covered`.
pub fn fill_from_source(
    dst: &SourceView,
    face: Face,
    src: &SourceView,
    transform: &NeighborTransform,
    conn: &BlockConnectivity,
    t: f64,
    out: &mut [f64],
    covered: &mut [bool],
) -> Result<()> {
    let m = dst.m;
    let sb = src.blend(t)?;
    let dl = dst.leaf;
    let sl = src.leaf;
    if sl.level == dl.level && !transform.across_blocks {
        for d in 1..=GHOST {
            for k in 0..m {
                let (i, j) = match face {
                    Face::Left => (m - d, k),
                    Face::Right => (d - 1, k),
                    Face::Bottom => (k, m - d),
                    Face::Top => (k, d - 1),
                };
                out[(d - 1) * m + k] = src.value(i, j, sb);
                covered[(d - 1) * m + k] = true;
            }
        }
        return Ok(());
    }
    for d in 1..=GHOST {
        for k in 0..m {
            let slot = (d - 1) * m + k;
            let c = ghost_center(&dl, m, face, d, k);
            let value = if sl.level == dl.level {
                let Some(p) = to_neighbor(conn, &dl, face, transform, c) else {
                    continue;
                };
                let Some((i, j)) = src.cell_at(p) else {
                    continue;
                };
                src.value(i, j, sb)
            } else if sl.level < dl.level {
                let Some(p) = to_neighbor(conn, &dl, face, transform, c) else {
                    continue;
                };
                let Some((i, j)) = src.cell_at(p) else {
                    continue;
                };
                let db = dst.blend(t)?;
                let (o, s) = leaf_extent(&sl);
                let h = s / src.m as f64;
                let off = [
                    (p[0] - (o[0] + (i as f64 + 0.5) * h)) / h,
                    (p[1] - (o[1] + (j as f64 + 0.5) * h)) / h,
                ];
                let q0 = src.value(i, j, sb);
                let mut v = q0;
                for (axis, dir) in [(0, (1, 0)), (1, (0, 1))] {
                    let minus = coarse_neighbor_value(src, sb, dst, db, transform.face, transform, conn, (i, j), (-dir.0, -dir.1));
                    let plus = coarse_neighbor_value(src, sb, dst, db, transform.face, transform, conn, (i, j), dir);
                    let slope = match (minus, plus) {
                        (Some(a), Some(b)) => minmod(q0 - a, b - q0),
                        _ => 0.0,
                    };
                    v += slope * off[axis];
                }
                v
            } else {
                let (_, s) = leaf_extent(&dl);
                let q = 0.25 * s / m as f64;
                let mut sum = 0.0;
                let mut all = true;
                for (sx, sy) in [(-q, -q), (q, -q), (-q, q), (q, q)] {
                    let cell = to_neighbor(conn, &dl, face, transform, [c[0] + sx, c[1] + sy]).and_then(|p| src.cell_at(p));
                    match cell {
                        Some((i, j)) => sum += src.value(i, j, sb),
                        None => {
                            all = false;
                            break;
                        }
                    }
                }
                if !all {
                    continue;
                }
                0.25 * sum
            };
            out[slot] = value;
            covered[slot] = true;
        }
    }
    Ok(())
}

/// Complete ghost strip of one face: from the neighbors in `sources`
/// (ordered like `neighbors.leaves()`), or zero-order extrapolation on a
/// physical boundary.
pub fn face_ghost_strip(
    dst: &SourceView,
    face: Face,
    neighbors: &FaceNeighborSet,
    sources: &[SourceView],
    conn: &BlockConnectivity,
    t: f64,
) -> Result<Vec<f64>> {
    let m = dst.m;
    let mut out = vec![0.0; GHOST * m];
    match neighbors.transform() {
        None => {
            let db = dst.blend(t)?;
            for d in 0..GHOST {
                for k in 0..m {
                    let (i, j) = match face {
                        Face::Left => (0, k),
                        Face::Right => (m - 1, k),
                        Face::Bottom => (k, 0),
                        Face::Top => (k, m - 1),
                    };
                    out[d * m + k] = dst.value(i, j, db);
                }
            }
        }
        Some(tr) => {
            let mut covered = vec![false; GHOST * m];
            for src in sources {
                fill_from_source(dst, face, src, &tr, conn, t, &mut out, &mut covered)?;
            }
            debug_assert!(covered.iter().all(|&c| c), "neighbors do not cover face {face:?} of {:?}", dst.leaf);
        }
    }
    Ok(out)
}

/// Values for corner block `corner` of `dst` (laid out as
/// `[(dy - 1) * GHOST + (dx - 1)]`) taken from the leaf `src` that lies
/// diagonally across that corner. Cell centers are carried through the block
/// links first-coordinate first; `None` when that path hits a physical
/// boundary. Sample points falling outside `src` use its nearest cell.
pub fn corner_ghost_block(dst: &SourceView, corner: usize, src: &SourceView, conn: &BlockConnectivity, t: f64) -> Result<Option<Vec<f64>>> {
    let m = dst.m;
    let sb = src.blend(t)?;
    let (o, s) = leaf_extent(&dst.leaf);
    let h = s / m as f64;
    let (so, ss) = leaf_extent(&src.leaf);
    let hs = ss / src.m as f64;
    let block = dst.leaf.tree as usize;
    let clamp = |p: [f64; 2]| -> (usize, usize) {
        let top = (src.m - 1) as f64;
        let i = ((p[0] - so[0]) / hs).floor().clamp(0.0, top);
        let j = ((p[1] - so[1]) / hs).floor().clamp(0.0, top);
        (i as usize, j as usize)
    };
    let mut out = vec![0.0; GHOST * GHOST];
    for dy in 1..=GHOST {
        for dx in 1..=GHOST {
            let ci = if corner & 1 == 1 { (m - 1 + dx) as f64 } else { -(dx as f64) };
            let cj = if corner & 2 == 2 { (m - 1 + dy) as f64 } else { -(dy as f64) };
            let c = [o[0] + (ci + 0.5) * h, o[1] + (cj + 0.5) * h];
            let value = if src.leaf.level >= dst.leaf.level {
                // average the source cells covering this ghost cell
                let k = 1usize << (src.leaf.level - dst.leaf.level);
                let mut sum = 0.0;
                for b in 0..k {
                    for a in 0..k {
                        let p = [c[0] + ((a as f64 + 0.5) / k as f64 - 0.5) * h, c[1] + ((b as f64 + 0.5) / k as f64 - 0.5) * h];
                        let Some((_, r)) = conn.resolve_point(block, p) else {
                            return Ok(None);
                        };
                        let (i, j) = clamp(r);
                        sum += src.value(i, j, sb);
                    }
                }
                sum / (k * k) as f64
            } else {
                let Some((_, r)) = conn.resolve_point(block, c) else {
                    return Ok(None);
                };
                let (i, j) = clamp(r);
                let q0 = src.value(i, j, sb);
                let off = [(r[0] - (so[0] + (i as f64 + 0.5) * hs)) / hs, (r[1] - (so[1] + (j as f64 + 0.5) * hs)) / hs];
                let mut v = q0;
                for axis in 0..2 {
                    let (i, j) = (i as isize, j as isize);
                    let (di, dj) = if axis == 0 { (1, 0) } else { (0, 1) };
                    let inside = |a: isize, b: isize| a >= 0 && b >= 0 && a < src.m as isize && b < src.m as isize;
                    if inside(i - di, j - dj) && inside(i + di, j + dj) {
                        let lo = src.value((i - di) as usize, (j - dj) as usize, sb);
                        let hi = src.value((i + di) as usize, (j + dj) as usize, sb);
                        v += minmod(q0 - lo, hi - q0) * off[axis];
                    }
                }
                v
            };
            out[(dy - 1) * GHOST + dx - 1] = value;
        }
    }
    Ok(Some(out))
}

fn write_covered(dst: &mut Patch, face: Face, out: &[f64], covered: &[bool]) {
    let m = dst.m();
    for d in 1..=GHOST {
        for k in 0..m {
            let slot = (d - 1) * m + k;
            if covered[slot] {
                let (i, j) = dst.ghost_index(face, d, k);
                dst.set(i, j, out[slot]);
            }
        }
    }
}

fn fill_patch_from(dst: &mut Patch, face: Face, src: &Patch, transform: &NeighborTransform, conn: &BlockConnectivity) -> Result<()> {
    let m = dst.m();
    let mut out = vec![0.0; GHOST * m];
    let mut covered = vec![false; GHOST * m];
    fill_from_source(&dst.view(), face, &src.view(), transform, conn, dst.time(), &mut out, &mut covered)?;
    write_covered(dst, face, &out, &covered);
    Ok(())
}

/// Copies a same-size neighbor's interior into `dst`'s ghost strip on `face`.
pub fn copy_same_level(dst: &mut Patch, src: &Patch, face: Face, transform: &NeighborTransform, conn: &BlockConnectivity) -> Result<()> {
    debug_assert_eq!(dst.leaf().level, src.leaf().level);
    fill_patch_from(dst, face, src, transform, conn)
}

/// Fills the half of a coarse patch's ghost strip that fine neighbor `fine` covers.
pub fn average_to_coarse_ghost(
    coarse: &mut Patch,
    fine: &Patch,
    face: Face,
    transform: &NeighborTransform,
    conn: &BlockConnectivity,
) -> Result<()> {
    debug_assert_eq!(coarse.leaf().level + 1, fine.leaf().level);
    fill_patch_from(coarse, face, fine, transform, conn)
}

/// Interpolates a coarse neighbor into a fine patch's ghost strip at the fine patch's time.
pub fn interpolate_to_fine_ghost(
    fine: &mut Patch,
    coarse: &Patch,
    face: Face,
    transform: &NeighborTransform,
    conn: &BlockConnectivity,
) -> Result<()> {
    debug_assert_eq!(coarse.leaf().level + 1, fine.leaf().level);
    fill_patch_from(fine, face, coarse, transform, conn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::Forest;

    const M: usize = 8;

    fn affine(x: f64, y: f64) -> f64 {
        1.5 + 2.0 * x - 0.75 * y
    }

    /// Every face strip of every leaf, computed through the forest's neighbor lookup.
    fn fill_all(forest: &Forest, patches: &[Patch], t: f64) -> Vec<[Vec<f64>; 4]> {
        let conn = forest.connectivity();
        patches
            .iter()
            .map(|p| {
                let dst = p.view();
                Face::ALL.map(|f| {
                    let nb = forest.face_neighbor(&p.leaf(), f);
                    let srcs: Vec<SourceView> = nb
                        .leaves()
                        .iter()
                        .map(|l| patches[forest.index_of(l).unwrap()].view())
                        .collect();
                    face_ghost_strip(&dst, f, &nb, &srcs, conn, t).unwrap()
                })
            })
            .collect()
    }

    fn graded_forest() -> Forest {
        let mut f = Forest::new_uniform(BlockConnectivity::unit_square(), 1);
        f.refine_leaf(&Quadrant::from_level_coords(0, 1, 0, 0)).unwrap();
        f.refine_leaf(&Quadrant::from_level_coords(0, 2, 1, 1)).unwrap();
        f.balance_2to1().unwrap();
        f
    }

    #[test]
    fn affine_data_reproduced_at_interfaces() {
        let forest = graded_forest();
        let patches: Vec<Patch> = forest.leaves().map(|l| Patch::from_fn(*l, M, 0.0, affine)).collect();
        let strips = fill_all(&forest, &patches, 0.0);
        for (p, s) in patches.iter().zip(&strips) {
            for f in Face::ALL {
                if matches!(forest.face_neighbor(&p.leaf(), f), FaceNeighborSet::DomainBoundary) {
                    continue;
                }
                for d in 1..=GHOST {
                    for k in 0..M {
                        let c = ghost_center(&p.leaf(), M, f, d, k);
                        let got = s[f.index()][(d - 1) * M + k];
                        let want = affine(c[0], c[1]);
                        // at the tangential ends of a coarse source the slope drops to zero
                        let tol = if matches!(forest.face_neighbor(&p.leaf(), f), FaceNeighborSet::DoubleSize(..)) {
                            0.3 / (M as f64)
                        } else {
                            1e-13
                        };
                        assert!((got - want).abs() <= tol, "{:?} {f:?} d{d} k{k}: {got} vs {want}", p.leaf());
                    }
                }
            }
        }
    }

    #[test]
    fn same_level_copy_across_periodic_faces() {
        let forest = Forest::new_uniform(BlockConnectivity::periodic_square(), 1);
        let patches: Vec<Patch> = forest
            .leaves()
            .enumerate()
            .map(|(n, l)| Patch::from_fn(*l, M, 0.0, move |x, y| n as f64 * 100.0 + x * 7.0 + y))
            .collect();
        let strips = fill_all(&forest, &patches, 0.0);
        // leaf 0 (lower left): left ghosts come from leaf 1's rightmost columns
        let left = &strips[0][Face::Left.index()];
        for d in 1..=GHOST {
            for k in 0..M {
                assert_eq!(left[(d - 1) * M + k], patches[1].interior(M - d, k));
            }
        }
        let bottom = &strips[0][Face::Bottom.index()];
        for d in 1..=GHOST {
            for k in 0..M {
                assert_eq!(bottom[(d - 1) * M + k], patches[2].interior(k, M - d));
            }
        }
    }

    #[test]
    fn sphere_blocks_exchange_mirrored_cells() {
        let forest = Forest::new_uniform(BlockConnectivity::two_tree_sphere(), 0);
        let patches: Vec<Patch> = forest
            .leaves()
            .enumerate()
            .map(|(n, l)| Patch::from_fn(*l, M, 0.0, move |x, y| n as f64 + x * 10.0 + y * 100.0))
            .collect();
        let strips = fill_all(&forest, &patches, 0.0);
        for f in Face::ALL {
            for d in 1..=GHOST {
                for k in 0..M {
                    let (i, j) = match f {
                        Face::Left => (d - 1, k),
                        Face::Right => (M - d, k),
                        Face::Bottom => (k, d - 1),
                        Face::Top => (k, M - d),
                    };
                    assert_eq!(strips[0][f.index()][(d - 1) * M + k], patches[1].interior(i, j));
                }
            }
        }
    }

    #[test]
    fn coarse_ghost_is_fine_average() {
        let forest = graded_forest();
        let patches: Vec<Patch> = forest
            .leaves()
            .map(|l| Patch::from_fn(*l, M, 0.0, |x, y| (17.0 * x).sin() + (9.0 * y).cos()))
            .collect();
        let strips = fill_all(&forest, &patches, 0.0);
        let coarse = Quadrant::from_level_coords(0, 1, 1, 1);
        let ci = forest.index_of(&coarse).unwrap();
        let FaceNeighborSet::HalfSize(pair, _) = forest.face_neighbor(&coarse, Face::Left) else {
            panic!("expected finer neighbors");
        };
        let lower = &patches[forest.index_of(&pair[0]).unwrap()];
        let s = &strips[ci][Face::Left.index()];
        for d in 1..=GHOST {
            for k in 0..M / 2 {
                let (i, j) = (M - 2 * d, 2 * k);
                let want = 0.25
                    * (lower.interior(i, j) + lower.interior(i + 1, j) + lower.interior(i, j + 1) + lower.interior(i + 1, j + 1));
                assert_eq!(s[(d - 1) * M + k], want);
            }
        }
    }

    #[test]
    fn interpolation_adds_no_extrema() {
        let forest = graded_forest();
        let patches: Vec<Patch> = forest
            .leaves()
            .map(|l| Patch::from_fn(*l, M, 0.0, |x, y| if x + 0.3 * y < 0.45 { 0.0 } else { 1.0 }))
            .collect();
        let strips = fill_all(&forest, &patches, 0.0);
        for s in strips.iter().flatten().flatten() {
            assert!((0.0..=1.0).contains(s), "{s}");
        }
    }

    #[test]
    fn worked_examples_fill_strips() {
        let conn = BlockConnectivity::unit_square();
        let forest = graded_forest();
        let coarse_leaf = Quadrant::from_level_coords(0, 1, 1, 1);
        let fine_leaf = Quadrant::from_level_coords(0, 2, 1, 2);
        let coarse = Patch::from_fn(coarse_leaf, M, 0.0, affine);
        let mut fine = Patch::from_fn(fine_leaf, M, 0.0, affine);
        let FaceNeighborSet::DoubleSize(_, tr) = forest.face_neighbor(&fine_leaf, Face::Right) else {
            panic!()
        };
        interpolate_to_fine_ghost(&mut fine, &coarse, Face::Right, &tr, &conn).unwrap();
        let (i, j) = fine.ghost_index(Face::Right, 1, 3);
        let c = fine.center(i as isize - 2, j as isize - 2);
        assert!((fine.get(i, j) - affine(c[0], c[1])).abs() < 1e-13);
    }

    #[test]
    fn missing_time_level_is_an_error() {
        let forest = graded_forest();
        let mut patches: Vec<Patch> = forest.leaves().map(|l| Patch::from_fn(*l, M, 0.0, affine)).collect();
        let coarse = Quadrant::from_level_coords(0, 1, 1, 1);
        let ci = forest.index_of(&coarse).unwrap();
        patches[ci].set_time(1.0);
        let fine = Quadrant::from_level_coords(0, 2, 1, 2);
        let fi = forest.index_of(&fine).unwrap();
        let nb = forest.face_neighbor(&fine, Face::Right);
        let src = [patches[ci].view()];
        let r = face_ghost_strip(&patches[fi].view(), Face::Right, &nb, &src, forest.connectivity(), 0.5);
        assert!(r.is_err());
    }
}
