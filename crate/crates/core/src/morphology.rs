//! Binary and grayscale morphology: reconstruction by dilation, regional
//! extrema, structural cleanup passes, and connected-component labeling.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, GrayMap, LabelMap};

/// Pixel connectivity. Neighbor order is fixed (N, W, E, S, then the
/// diagonals) so every traversal in the crate is deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conn {
    Four,
    Eight,
}

impl Conn {
    pub fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];
        const EIGHT: [(isize, isize); 8] = [
            (0, -1),
            (-1, 0),
            (1, 0),
            (0, 1),
            (-1, -1),
            (1, -1),
            (-1, 1),
            (1, 1),
        ];
        match self {
            Conn::Four => &FOUR,
            Conn::Eight => &EIGHT,
        }
    }

    /// Neighbors preceding a pixel in raster order.
    fn backward(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 2] = [(0, -1), (-1, 0)];
        const EIGHT: [(isize, isize); 4] = [(-1, -1), (0, -1), (1, -1), (-1, 0)];
        match self {
            Conn::Four => &FOUR,
            Conn::Eight => &EIGHT,
        }
    }

    /// Neighbors following a pixel in raster order.
    fn forward(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 2] = [(0, 1), (1, 0)];
        const EIGHT: [(isize, isize); 4] = [(1, 1), (0, 1), (-1, 1), (1, 0)];
        match self {
            Conn::Four => &FOUR,
            Conn::Eight => &EIGHT,
        }
    }
}

/// Grayscale reconstruction by dilation: the largest image ≤ `mask` whose
/// peaks all descend from `marker` (hybrid sweep + queue propagation).
pub fn reconstruct_gray(marker: &GrayMap, mask: &GrayMap, conn: Conn) -> Result<GrayMap> {
    mask.check_dims(marker.width(), marker.height())?;
    let (w, h) = (marker.width(), marker.height());
    for (i, (&m, &f)) in marker.data().iter().zip(mask.data().iter()).enumerate() {
        if m > f {
            return Err(Error::MarkerExceedsMask {
                x: i % w,
                y: i / w,
            });
        }
    }
    let mut j = marker.clone();
    let wi = w as isize;
    let hi = h as isize;

    for y in 0..hi {
        for x in 0..wi {
            let mut v = j.get(x as usize, y as usize);
            for &(dx, dy) in conn.backward() {
                let (nx, ny) = (x + dx, y + dy);
                if nx >= 0 && nx < wi && ny >= 0 && ny < hi {
                    v = v.max(j.get(nx as usize, ny as usize));
                }
            }
            j.set(x as usize, y as usize, v.min(mask.get(x as usize, y as usize)));
        }
    }

    let mut fifo: VecDeque<(usize, usize)> = VecDeque::new();
    for y in (0..hi).rev() {
        for x in (0..wi).rev() {
            let mut v = j.get(x as usize, y as usize);
            for &(dx, dy) in conn.forward() {
                let (nx, ny) = (x + dx, y + dy);
                if nx >= 0 && nx < wi && ny >= 0 && ny < hi {
                    v = v.max(j.get(nx as usize, ny as usize));
                }
            }
            let v = v.min(mask.get(x as usize, y as usize));
            j.set(x as usize, y as usize, v);
            for &(dx, dy) in conn.forward() {
                let (nx, ny) = (x + dx, y + dy);
                if nx >= 0 && nx < wi && ny >= 0 && ny < hi {
                    let jq = j.get(nx as usize, ny as usize);
                    if jq < v && jq < mask.get(nx as usize, ny as usize) {
                        fifo.push_back((x as usize, y as usize));
                        break;
                    }
                }
            }
        }
    }

    while let Some((x, y)) = fifo.pop_front() {
        let jp = j.get(x, y);
        for &(dx, dy) in conn.offsets() {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if nx >= 0 && nx < wi && ny >= 0 && ny < hi {
                let (nxu, nyu) = (nx as usize, ny as usize);
                let jq = j.get(nxu, nyu);
                let fq = mask.get(nxu, nyu);
                if jq < jp && jq < fq {
                    j.set(nxu, nyu, jp.min(fq));
                    fifo.push_back((nxu, nyu));
                }
            }
        }
    }
    Ok(j)
}

/// Binary reconstruction: the union of `mask` components touched by `marker`.
pub fn reconstruct_binary(marker: &BinaryMask, mask: &BinaryMask, conn: Conn) -> Result<BinaryMask> {
    if !marker.same_dims(mask) {
        return Err(Error::DimensionMismatch {
            expected_w: marker.width(),
            expected_h: marker.height(),
            actual_w: mask.width(),
            actual_h: mask.height(),
        });
    }
    let (w, h) = (marker.width(), marker.height());
    for y in 0..h {
        for x in 0..w {
            if marker.get(x, y) && !mask.get(x, y) {
                return Err(Error::MarkerExceedsMask { x, y });
            }
        }
    }
    let mut out = BinaryMask::new(w, h);
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if marker.get(x, y) && !out.get(x, y) {
                out.set(x, y, true);
                queue.push_back((x, y));
            }
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        for &(dx, dy) in conn.offsets() {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if nx >= 0 && (nx as usize) < w && ny >= 0 && (ny as usize) < h {
                let (nxu, nyu) = (nx as usize, ny as usize);
                if mask.get(nxu, nyu) && !out.get(nxu, nyu) {
                    out.set(nxu, nyu, true);
                    queue.push_back((nxu, nyu));
                }
            }
        }
    }
    Ok(out)
}

/// Regional maxima: plateaus with no strictly higher neighbor.
pub fn regional_maxima(img: &GrayMap, conn: Conn) -> BinaryMask {
    let (w, h) = (img.width(), img.height());
    let mut out = BinaryMask::new(w, h);
    let mut visited = vec![false; w * h];
    let mut plateau = Vec::new();
    let mut queue = VecDeque::new();
    for y0 in 0..h {
        for x0 in 0..w {
            if visited[y0 * w + x0] {
                continue;
            }
            let level = img.get(x0, y0);
            visited[y0 * w + x0] = true;
            queue.push_back((x0, y0));
            plateau.clear();
            plateau.push((x0, y0));
            let mut is_max = true;
            while let Some((x, y)) = queue.pop_front() {
                for &(dx, dy) in conn.offsets() {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || nx as usize >= w || ny < 0 || ny as usize >= h {
                        continue;
                    }
                    let (nxu, nyu) = (nx as usize, ny as usize);
                    let nv = img.get(nxu, nyu);
                    if nv > level {
                        is_max = false;
                    } else if nv == level && !visited[nyu * w + nxu] {
                        visited[nyu * w + nxu] = true;
                        queue.push_back((nxu, nyu));
                        plateau.push((nxu, nyu));
                    }
                }
            }
            if is_max {
                for &(x, y) in &plateau {
                    out.set(x, y, true);
                }
            }
        }
    }
    out
}

/// Regional minima: plateaus with no strictly lower neighbor.
pub fn regional_minima(img: &GrayMap, conn: Conn) -> BinaryMask {
    let mut neg = img.clone();
    for v in neg.data_mut().iter_mut() {
        *v = -*v;
    }
    regional_maxima(&neg, conn)
}

/// Dilation with a (2r+1)-square structuring element; pixels beyond the
/// border count as background.
pub fn dilate_square(m: &BinaryMask, r: usize) -> BinaryMask {
    let (w, h) = (m.width(), m.height());
    let ri = r as isize;
    // horizontal pass then vertical pass
    let mut hpass = BinaryMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut v = false;
            for dx in -ri..=ri {
                let nx = x as isize + dx;
                if nx >= 0 && (nx as usize) < w && m.get(nx as usize, y) {
                    v = true;
                    break;
                }
            }
            hpass.set(x, y, v);
        }
    }
    let mut out = BinaryMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut v = false;
            for dy in -ri..=ri {
                let ny = y as isize + dy;
                if ny >= 0 && (ny as usize) < h && hpass.get(x, ny as usize) {
                    v = true;
                    break;
                }
            }
            out.set(x, y, v);
        }
    }
    out
}

/// Erosion with a (2r+1)-square structuring element; pixels beyond the
/// border count as foreground, the dual of `dilate_square`.
pub fn erode_square(m: &BinaryMask, r: usize) -> BinaryMask {
    dilate_square(&m.complement(), r).complement()
}

pub fn open_square(m: &BinaryMask, r: usize) -> BinaryMask {
    dilate_square(&erode_square(m, r), r)
}

pub fn close_square(m: &BinaryMask, r: usize) -> BinaryMask {
    erode_square(&dilate_square(m, r), r)
}

/// Dilation with a diamond (city-block ball) of radius r, applied as r
/// unit-cross steps.
pub fn dilate_diamond(m: &BinaryMask, r: usize) -> BinaryMask {
    let (w, h) = (m.width(), m.height());
    let mut cur = m.clone();
    for _ in 0..r {
        let mut next = cur.clone();
        for y in 0..h {
            for x in 0..w {
                if cur.get(x, y) {
                    continue;
                }
                let hit = (x > 0 && cur.get(x - 1, y))
                    || (x + 1 < w && cur.get(x + 1, y))
                    || (y > 0 && cur.get(x, y - 1))
                    || (y + 1 < h && cur.get(x, y + 1));
                if hit {
                    next.set(x, y, true);
                }
            }
        }
        cur = next;
    }
    cur
}

/// Erosion with a diamond of radius r; beyond-border counts as foreground,
/// the dual of `dilate_diamond`.
pub fn erode_diamond(m: &BinaryMask, r: usize) -> BinaryMask {
    dilate_diamond(&m.complement(), r).complement()
}

/// Opening with a unit diamond preserves regular convex shapes exactly,
/// unlike the 3x3 square which clips the four cap pixels off a disc.
pub fn open_diamond(m: &BinaryMask, r: usize) -> BinaryMask {
    dilate_diamond(&erode_diamond(m, r), r)
}

/// Fills background regions not connected to the image border
/// (4-connected background flood).
pub fn fill_holes(m: &BinaryMask) -> BinaryMask {
    let (w, h) = (m.width(), m.height());
    if w == 0 || h == 0 {
        return m.clone();
    }
    let mut outside = BinaryMask::new(w, h);
    let mut queue = VecDeque::new();
    let seed = |x: usize, y: usize, outside: &mut BinaryMask, queue: &mut VecDeque<(usize, usize)>| {
        if !m.get(x, y) && !outside.get(x, y) {
            outside.set(x, y, true);
            queue.push_back((x, y));
        }
    };
    for x in 0..w {
        seed(x, 0, &mut outside, &mut queue);
        seed(x, h - 1, &mut outside, &mut queue);
    }
    for y in 0..h {
        seed(0, y, &mut outside, &mut queue);
        seed(w - 1, y, &mut outside, &mut queue);
    }
    while let Some((x, y)) = queue.pop_front() {
        for &(dx, dy) in Conn::Four.offsets() {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if nx >= 0 && (nx as usize) < w && ny >= 0 && (ny as usize) < h {
                let (nxu, nyu) = (nx as usize, ny as usize);
                if !m.get(nxu, nyu) && !outside.get(nxu, nyu) {
                    outside.set(nxu, nyu, true);
                    queue.push_back((nxu, nyu));
                }
            }
        }
    }
    let mut out = m.clone();
    for y in 0..h {
        for x in 0..w {
            if !outside.get(x, y) {
                out.set(x, y, true);
            }
        }
    }
    out
}

/// Labels components 1..K in raster-scan order of each component's first
/// pixel; background stays 0.
pub fn connected_components(m: &BinaryMask, conn: Conn) -> LabelMap {
    let (w, h) = (m.width(), m.height());
    let mut lb = LabelMap::new(w, h);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for y0 in 0..h {
        for x0 in 0..w {
            if !m.get(x0, y0) || lb.get(x0, y0) != 0 {
                continue;
            }
            next += 1;
            lb.set(x0, y0, next);
            queue.push_back((x0, y0));
            while let Some((x, y)) = queue.pop_front() {
                for &(dx, dy) in conn.offsets() {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx >= 0 && (nx as usize) < w && ny >= 0 && (ny as usize) < h {
                        let (nxu, nyu) = (nx as usize, ny as usize);
                        if m.get(nxu, nyu) && lb.get(nxu, nyu) == 0 {
                            lb.set(nxu, nyu, next);
                            queue.push_back((nxu, nyu));
                        }
                    }
                }
            }
        }
    }
    lb
}

/// Drops components with fewer than `min_area` pixels (8-connectivity).
pub fn remove_small(m: &BinaryMask, min_area: usize) -> BinaryMask {
    let lb = connected_components(m, Conn::Eight);
    let areas = lb.areas();
    let mut out = BinaryMask::new(m.width(), m.height());
    for y in 0..m.height() {
        for x in 0..m.width() {
            let l = lb.get(x, y);
            if l != 0 && areas[l as usize] >= min_area {
                out.set(x, y, true);
            }
        }
    }
    out
}

/// Removes centers of exact H-shaped 3x3 configurations (both
/// orientations), one simultaneous pass.
pub fn remove_hbreak(m: &BinaryMask) -> BinaryMask {
    let (w, h) = (m.width(), m.height());
    let at = |x: isize, y: isize| -> bool {
        if x < 0 || x as usize >= w || y < 0 || y as usize >= h {
            false
        } else {
            m.get(x as usize, y as usize)
        }
    };
    let mut out = m.clone();
    for y in 0..h as isize {
        for x in 0..w as isize {
            if !m.get(x as usize, y as usize) {
                continue;
            }
            let row = |dy: isize| (at(x - 1, y + dy), at(x, y + dy), at(x + 1, y + dy));
            let (tl, tc, tr) = row(-1);
            let (ml, _, mr) = (at(x - 1, y), true, at(x + 1, y));
            let (bl, bc, br) = row(1);
            let horizontal_bars = tl && tc && tr && !ml && !mr && bl && bc && br;
            let vertical_bars = tl && !tc && bl && ml && mr && tr && !bc && br;
            if horizontal_bars || vertical_bars {
                out.set(x as usize, y as usize, false);
            }
        }
    }
    out
}

/// Removes pixels with exactly one 8-connected foreground neighbor, one
/// simultaneous pass. Both ends of an open curve go at once; isolated
/// single pixels stay.
pub fn remove_spur(m: &BinaryMask) -> BinaryMask {
    let (w, h) = (m.width(), m.height());
    let mut out = m.clone();
    for y in 0..h {
        for x in 0..w {
            if !m.get(x, y) {
                continue;
            }
            let mut n = 0;
            for &(dx, dy) in Conn::Eight.offsets() {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx >= 0 && (nx as usize) < w && ny >= 0 && (ny as usize) < h && m.get(nx as usize, ny as usize) {
                    n += 1;
                }
            }
            if n == 1 {
                out.set(x, y, false);
            }
        }
    }
    out
}

/// One cleanup step of `binary_cleanup`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CleanupOp {
    FillHoles,
    Open,
    Close,
    RemoveSmall(usize),
    RemoveHbreak,
    RemoveSpur,
}

/// Applies cleanup steps in the given order. Open/close use the 3x3 square
/// element.
pub fn binary_cleanup(m: &BinaryMask, ops: &[CleanupOp]) -> BinaryMask {
    let mut cur = m.clone();
    for op in ops {
        cur = match op {
            CleanupOp::FillHoles => fill_holes(&cur),
            CleanupOp::Open => open_square(&cur, 1),
            CleanupOp::Close => close_square(&cur, 1),
            CleanupOp::RemoveSmall(a) => remove_small(&cur, *a),
            CleanupOp::RemoveHbreak => remove_hbreak(&cur),
            CleanupOp::RemoveSpur => remove_spur(&cur),
        };
    }
    cur
}
