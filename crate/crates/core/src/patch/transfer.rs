use super::{minmod, Patch, GHOST};
use crate::error::{Error, Result};

/// Refinement decision for one patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TagFlag {
    Refine,
    Keep,
    CoarsenOk,
}

fn spread(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        0.0
    } else {
        hi - lo
    }
}

/// Interior values plus, when the ghosts are current, the first ghost ring
/// without corners.
fn tagged_values(p: &Patch) -> Vec<f64> {
    let m = p.m();
    let mut v = p.interior_values();
    if p.ghosts_current() {
        let (lo, hi) = (GHOST - 1, GHOST + m);
        for k in GHOST..GHOST + m {
            v.extend([p.get(lo, k), p.get(hi, k), p.get(k, lo), p.get(k, hi)]);
        }
    }
    v
}

/// Flags `Refine` when the spread of values exceeds `threshold` (strictly),
/// `CoarsenOk` when it does not and the level allows it.
pub fn tag_patch(p: &Patch, threshold: f64, min_level: u8, max_level: u8) -> TagFlag {
    let s = spread(tagged_values(p).into_iter());
    let level = p.leaf().level;
    if s > threshold {
        if level < max_level {
            TagFlag::Refine
        } else {
            TagFlag::Keep
        }
    } else if level > min_level {
        TagFlag::CoarsenOk
    } else {
        TagFlag::Keep
    }
}

/// Four children of `parent` (z-order), filled by minmod-limited linear
/// interpolation. Slopes use the parent's ghost cells when they are current
/// and drop to zero at the patch edge otherwise.
pub fn interpolate_new_fine(parent: &Patch) -> Result<[Patch; 4]> {
    let m = parent.m();
    let leaf = parent.leaf();
    if leaf.level >= crate::forest::MAX_LEVEL {
        return Err(Error::RefineAtMaxLevel(leaf));
    }
    let ghosts = parent.ghosts_current();
    let g = GHOST;
    let slope = |ii: usize, jj: usize, di: usize, dj: usize| -> f64 {
        let c = parent.get(ii, jj);
        let at_lo = if di == 1 { ii == g } else { jj == g };
        let at_hi = if di == 1 { ii == g + m - 1 } else { jj == g + m - 1 };
        if !ghosts && (at_lo || at_hi) {
            return 0.0;
        }
        minmod(c - parent.get(ii - di, jj - dj), parent.get(ii + di, jj + dj) - c)
    };
    let children = leaf.children().map(|c| Patch::new(c, m, parent.time()));
    let mut children = children;
    for (cid, child) in children.iter_mut().enumerate() {
        let (ox, oy) = ((cid & 1) * m / 2, (cid >> 1) * m / 2);
        for j in 0..m {
            for i in 0..m {
                let ii = g + ox + i / 2;
                let jj = g + oy + j / 2;
                let sx = if i % 2 == 0 { -0.25 } else { 0.25 };
                let sy = if j % 2 == 0 { -0.25 } else { 0.25 };
                let v = parent.get(ii, jj) + sx * slope(ii, jj, 1, 0) + sy * slope(ii, jj, 0, 1);
                child.set_interior(i, j, v);
            }
        }
    }
    Ok(children)
}

fn check_family(children: [&Patch; 4]) -> Result<()> {
    let first = children[0].leaf();
    let parent = first.parent().ok_or(Error::IncompleteFamily(first))?;
    for (cid, c) in children.iter().enumerate() {
        if c.leaf() != parent.child(cid) || c.m() != children[0].m() {
            return Err(Error::IncompleteFamily(c.leaf()));
        }
    }
    Ok(())
}

/// Parent patch whose cells are the averages of the four children's cells.
pub fn average_new_coarse(children: [&Patch; 4]) -> Result<Patch> {
    check_family(children)?;
    let m = children[0].m();
    let parent_leaf = children[0].leaf().parent().expect("checked");
    let mut p = Patch::new(parent_leaf, m, children[0].time());
    for j in 0..m {
        for i in 0..m {
            let cid = (i * 2 / m) + 2 * (j * 2 / m);
            let c = children[cid];
            let (fi, fj) = (2 * i - (cid & 1) * m, 2 * j - (cid >> 1) * m);
            let v = 0.25 * (c.interior(fi, fj) + c.interior(fi + 1, fj) + c.interior(fi, fj + 1) + c.interior(fi + 1, fj + 1));
            p.set_interior(i, j, v);
        }
    }
    Ok(p)
}

/// Spread `max - min` the averaged parent of `children` would have over its
/// interior and first ghost ring (the ring is built from the children's ghost
/// cells when all of them are current).
pub fn family_spread(children: [&Patch; 4]) -> Result<f64> {
    let parent = average_new_coarse(children)?;
    let mut v = parent.interior_values();
    if children.iter().all(|c| c.ghosts_current()) {
        let m = parent.m();
        let g = GHOST as isize;
        // parent ring cell at parent-interior index (pi, pj) covers fine cells 2pi, 2pi+1
        let fine = |fi: isize, fj: isize| -> f64 {
            let mi = m as isize;
            let cx = if fi >= mi { 1 } else { 0 };
            let cy = if fj >= mi { 1 } else { 0 };
            let c = children[(cx + 2 * cy) as usize];
            c.get((fi - cx * mi + g) as usize, (fj - cy * mi + g) as usize)
        };
        let avg = |pi: isize, pj: isize| {
            0.25 * (fine(2 * pi, 2 * pj) + fine(2 * pi + 1, 2 * pj) + fine(2 * pi, 2 * pj + 1) + fine(2 * pi + 1, 2 * pj + 1))
        };
        let mi = m as isize;
        for k in 0..mi {
            v.extend([avg(-1, k), avg(mi, k), avg(k, -1), avg(k, mi)]);
        }
    }
    Ok(spread(v.into_iter()))
}
