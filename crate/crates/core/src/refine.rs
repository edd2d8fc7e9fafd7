//! Shape cleanup after merging: label postprocessing, per-cell active
//! contours with forced inter-cell boundaries, and the false-positive
//! filter.

use crate::error::{Error, Result};
use crate::forest::{rf_predict, ForestModel};
use crate::morphology::{connected_components, erode_diamond, dilate_diamond, fill_holes, Conn};
use crate::raster::{BinaryMask, GrayMap, LabelMap};
use crate::region::{features_single, single_feature_names, EdgeSegment, RegionStats};
use crate::watershed::edt_squared;
use rayon::prelude::*;

/// Objects below this area are not credible somata and are dropped.
pub const MIN_CELL_AREA: usize = 70;

/// Length of the false-positive feature vector: the shape block, the
/// intensity and gradient block, and the whole-cell shape block again.
pub const FP_FEATURES: usize = 28;

/// Active-contour schedule. The evolution runs a fixed short budget, so no
/// level-set reinitialization is needed.
#[derive(Debug, Clone, Copy)]
pub struct ChanVeseParams {
    pub iterations: usize,
    pub length_weight: f64,
    pub fit_weights: (f64, f64),
    pub step: f64,
}

impl Default for ChanVeseParams {
    fn default() -> ChanVeseParams {
        ChanVeseParams {
            iterations: 20,
            length_weight: 0.2,
            fit_weights: (1.0, 1.0),
            step: 1.5,
        }
    }
}

impl ChanVeseParams {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid_parameter("iteration count must be positive"));
        }
        if !(self.length_weight > 0.0 && self.fit_weights.0 > 0.0 && self.fit_weights.1 > 0.0) {
            return Err(Error::invalid_parameter("contour weights must be positive"));
        }
        if !(self.step > 0.0) {
            return Err(Error::invalid_parameter("time step must be positive"));
        }
        Ok(())
    }
}

/// Per-label cleanup: fill interior holes (without stealing pixels owned by
/// another label), open with a unit diamond, keep only the piece connected
/// to the main body, and drop remnants smaller than `MIN_CELL_AREA`.
/// Surviving labels are compacted.
pub fn postprocess_labels(lb: &LabelMap) -> LabelMap {
    let (width, height) = (lb.width(), lb.height());
    let mut out = LabelMap::new(width, height);
    for label in lb.labels() {
        let mask = lb.mask_of(label);
        let filled = fill_holes(&mask);
        let mut work = mask.clone();
        for y in 0..height {
            for x in 0..width {
                if filled.get(x, y) && !mask.get(x, y) && lb.get(x, y) == 0 {
                    work.set(x, y, true);
                }
            }
        }
        let opened = dilate_diamond(&erode_diamond(&work, 1), 1);
        let comps = connected_components(&opened, Conn::Eight);
        let n = comps.max_label() as usize;
        if n == 0 {
            continue;
        }
        let mut areas = vec![0usize; n + 1];
        for &c in comps.data() {
            areas[c as usize] += 1;
        }
        let main = (1..=n).max_by_key(|&c| (areas[c], std::cmp::Reverse(c))).unwrap() as u32;
        if areas[main as usize] < MIN_CELL_AREA {
            continue;
        }
        for y in 0..height {
            for x in 0..width {
                if comps.get(x, y) == main && out.get(x, y) == 0 {
                    out.set(x, y, label);
                }
            }
        }
    }
    out.compact();
    out
}

const DIV_EPS: f64 = 1e-16;

/// One label's evolution window and its refined claim.
struct Claim {
    indices: Vec<usize>,
}

struct Window {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
}

fn label_window(pixels: &[(usize, usize)], width: usize, height: usize, pad: usize) -> Window {
    let mut x0 = usize::MAX;
    let mut y0 = usize::MAX;
    let mut x1 = 0usize;
    let mut y1 = 0usize;
    for &(x, y) in pixels {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let x0 = x0.saturating_sub(pad);
    let y0 = y0.saturating_sub(pad);
    let x1 = (x1 + pad).min(width - 1);
    let y1 = (y1 + pad).min(height - 1);
    Window { x0, y0, w: x1 - x0 + 1, h: y1 - y0 + 1 }
}

/// Signed distance to the mask boundary: positive inside, negative outside.
fn signed_distance(mask: &BinaryMask) -> Vec<f64> {
    let to_inside = edt_squared(mask);
    let to_outside = edt_squared(&mask.complement());
    if to_outside.iter().all(|d| !d.is_finite()) {
        return vec![1.0; mask.width() * mask.height()];
    }
    to_outside
        .iter()
        .zip(to_inside.iter())
        .map(|(o, i)| o.sqrt() - i.sqrt())
        .collect()
}

/// Two-phase piecewise-constant evolution of one label inside its window,
/// semi-implicit Gauss-Seidel sweeps in raster order. Returns the local
/// mask of the zero superlevel set.
fn evolve_window(
    win: &Window,
    mask: &BinaryMask,
    i1: &GrayMap,
    params: &ChanVeseParams,
) -> Vec<bool> {
    let (w, h) = (win.w, win.h);
    let mut local = BinaryMask::new(w, h);
    let mut img = vec![0.0f64; w * h];
    let (lo, hi) = i1.range();
    let span = if hi > lo { hi - lo } else { 1.0 };
    for y in 0..h {
        for x in 0..w {
            local.set(x, y, mask.get(win.x0 + x, win.y0 + y));
            img[y * w + x] = (i1.get(win.x0 + x, win.y0 + y) - lo) / span;
        }
    }
    let mut phi = signed_distance(&local);
    let mu = params.length_weight;
    let (l1, l2) = params.fit_weights;
    let dt = params.step;
    for it in 0..params.iterations {
        let mut sum1 = 0.0;
        let mut n1 = 0usize;
        let mut sum2 = 0.0;
        let mut n2 = 0usize;
        for (p, v) in phi.iter().zip(img.iter()) {
            if *p >= 0.0 {
                sum1 += v;
                n1 += 1;
            } else {
                sum2 += v;
                n2 += 1;
            }
        }
        let total_mean = img.iter().sum::<f64>() / img.len() as f64;
        let c1 = if n1 > 0 { sum1 / n1 as f64 } else { total_mean };
        let c2 = if n2 > 0 { sum2 / n2 as f64 } else { total_mean };
        // alternate sweep direction to keep propagation isotropic
        let order: Vec<usize> = if it % 2 == 0 {
            (0..w * h).collect()
        } else {
            (0..w * h).rev().collect()
        };
        for i in order {
            let (x, y) = (i % w, i / w);
            {
                let phi_c = phi[i];
                let phi_r = phi[y * w + (x + 1).min(w - 1)];
                let phi_l = phi[y * w + x.saturating_sub(1)];
                let phi_d = phi[(y + 1).min(h - 1) * w + x];
                let phi_u = phi[y.saturating_sub(1) * w + x];
                let cy_cent = (phi_d - phi_u) / 2.0;
                let idiv_r = 1.0 / (DIV_EPS + (phi_r - phi_c).powi(2) + cy_cent.powi(2)).sqrt();
                let idiv_l = 1.0 / (DIV_EPS + (phi_c - phi_l).powi(2) + cy_cent.powi(2)).sqrt();
                let cx_cent = (phi_r - phi_l) / 2.0;
                let idiv_d = 1.0 / (DIV_EPS + cx_cent.powi(2) + (phi_d - phi_c).powi(2)).sqrt();
                let idiv_u = 1.0 / (DIV_EPS + cx_cent.powi(2) + (phi_c - phi_u).powi(2)).sqrt();
                let v = img[i];
                let num = phi_c
                    + dt * (mu * (phi_r * idiv_r + phi_l * idiv_l + phi_d * idiv_d + phi_u * idiv_u)
                        - l1 * (v - c1).powi(2)
                        + l2 * (v - c2).powi(2));
                let den = 1.0 + dt * mu * (idiv_r + idiv_l + idiv_d + idiv_u);
                phi[i] = num / den;
            }
        }
    }
    phi.iter().map(|&p| p >= 0.0).collect()
}

const CV_WINDOW_PAD: usize = 10;

/// Refines every label independently against the standardized image, then
/// reassembles a single exclusive label map.
///
/// Inter-cell boundaries are forced: a label may grow only into pixels that
/// were background and border no other label, and its input pixels that
/// touch another label can never be lost. Pixels two evolved labels both
/// reach revert to their input owner (background, for a grown-over pixel).
/// A label whose contour collapses keeps its input shape.
pub fn chan_vese_refine(lb: &LabelMap, i1: &GrayMap, params: &ChanVeseParams) -> LabelMap {
    assert_eq!(lb.width(), i1.width());
    assert_eq!(lb.height(), i1.height());
    params.validate().expect("invalid contour parameters");
    let (width, height) = (lb.width(), lb.height());
    let labels = lb.labels();
    if labels.is_empty() {
        return lb.clone();
    }
    let mut pixel_lists: Vec<Vec<(usize, usize)>> = vec![Vec::new(); labels.len()];
    let index_of: std::collections::HashMap<u32, usize> =
        labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    for y in 0..height {
        for x in 0..width {
            let l = lb.get(x, y);
            if l != 0 {
                pixel_lists[index_of[&l]].push((x, y));
            }
        }
    }
    // Per-pixel growth constraint: which single label, if any, may claim a
    // background pixel; labeled pixels are claimable only by their owner.
    const FREE: u32 = 0;
    const BLOCKED: u32 = u32::MAX;
    let mut bg_claimable = vec![FREE; width * height];
    let mut forced = vec![false; width * height];
    for y in 0..height {
        for x in 0..width {
            let own = lb.get(x, y);
            let mut seen = 0u32;
            let mut multi = false;
            for (dx, dy) in [(0isize, -1isize), (-1, 0), (1, 0), (0, 1)] {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                    continue;
                }
                let n = lb.get(nx as usize, ny as usize);
                if n == 0 || n == own {
                    continue;
                }
                if seen == 0 {
                    seen = n;
                } else if seen != n {
                    multi = true;
                }
            }
            if own != 0 {
                if seen != 0 {
                    forced[y * width + x] = true;
                }
            } else if multi {
                bg_claimable[y * width + x] = BLOCKED;
            } else {
                bg_claimable[y * width + x] = seen;
            }
        }
    }
    let claims: Vec<Claim> = labels
        .par_iter()
        .zip(pixel_lists.par_iter())
        .map(|(&label, pixels)| {
            let win = label_window(pixels, width, height, CV_WINDOW_PAD);
            let mask = lb.mask_of(label);
            let evolved = evolve_window(&win, &mask, i1, params);
            let mut indices = Vec::new();
            for y in 0..win.h {
                for x in 0..win.w {
                    if !evolved[y * win.w + x] {
                        continue;
                    }
                    let gx = win.x0 + x;
                    let gy = win.y0 + y;
                    let idx = gy * width + gx;
                    let own = lb.get(gx, gy);
                    let allowed = own == label
                        || (own == 0 && (bg_claimable[idx] == FREE || bg_claimable[idx] == label));
                    if allowed {
                        indices.push(idx);
                    }
                }
            }
            for &(x, y) in pixels {
                let idx = y * width + x;
                if forced[idx] && !evolved[(y - win.y0) * win.w + (x - win.x0)] {
                    indices.push(idx);
                }
            }
            if indices.is_empty() {
                indices = pixels.iter().map(|&(x, y)| y * width + x).collect();
            }
            indices.sort_unstable();
            Claim { indices }
        })
        .collect();
    let mut count = vec![0u8; width * height];
    let mut claimant = vec![0u32; width * height];
    for (label, claim) in labels.iter().zip(claims.iter()) {
        for &idx in &claim.indices {
            count[idx] = count[idx].saturating_add(1);
            claimant[idx] = *label;
        }
    }
    let mut out = LabelMap::new(width, height);
    for (idx, &c) in count.iter().enumerate() {
        let v = match c {
            0 => 0,
            1 => claimant[idx],
            _ => lb.data()[idx],
        };
        if v != 0 {
            out.set(idx % width, idx / width, v);
        }
    }
    out
}

/// Feature vector of a candidate cell: shape block, intensity and gradient
/// block, and the whole-cell shape block, with no edge-segment terms.
pub fn fp_features(pixels: &[(usize, usize)], i1: &GrayMap, gm: &GrayMap) -> Vec<f64> {
    assert!(!pixels.is_empty(), "candidate cell must have pixels");
    let stats = RegionStats::from_pixels(0, pixels.to_vec(), i1.width(), i1.height());
    let empty = EdgeSegment { pixels: Vec::new() };
    let fg = BinaryMask::new(i1.width(), i1.height());
    let f = features_single(&stats, &empty, i1, gm, &fg);
    let mut out = Vec::with_capacity(FP_FEATURES);
    out.extend_from_slice(&f[0..6]);
    out.extend_from_slice(&f[9..25]);
    out.extend_from_slice(&f[0..6]);
    out
}

pub fn fp_feature_names() -> Vec<String> {
    let single = single_feature_names();
    let mut names: Vec<String> = Vec::with_capacity(FP_FEATURES);
    names.extend(single[0..6].iter().map(|s| s.to_string()));
    names.extend(single[9..25].iter().map(|s| s.to_string()));
    names.extend(single[0..6].iter().map(|s| format!("m_{s}")));
    names
}

/// Keeps each label iff the filter model calls it a true cell; survivors
/// are compacted.
pub fn fp_filter(lb: &LabelMap, model: &ForestModel, i1: &GrayMap, gm: &GrayMap) -> Result<LabelMap> {
    if model.n_features != FP_FEATURES {
        return Err(Error::FeatureLengthMismatch {
            expected: FP_FEATURES,
            actual: model.n_features,
        });
    }
    let (width, height) = (lb.width(), lb.height());
    let mut pixel_lists: std::collections::BTreeMap<u32, Vec<(usize, usize)>> =
        std::collections::BTreeMap::new();
    for y in 0..height {
        for x in 0..width {
            let l = lb.get(x, y);
            if l != 0 {
                pixel_lists.entry(l).or_default().push((x, y));
            }
        }
    }
    let mut out = LabelMap::new(width, height);
    for (label, pixels) in &pixel_lists {
        let (class, _) = rf_predict(model, &fp_features(pixels, i1, gm))?;
        if class == 1 {
            for &(x, y) in pixels {
                out.set(x, y, *label);
            }
        }
    }
    out.compact();
    Ok(out)
}

/// Labeled training rows for the filter: a candidate is positive iff its
/// best IoU against the ground truth reaches `iou_positive`.
pub fn fp_training_set(
    pred: &LabelMap,
    gt: &LabelMap,
    i1: &GrayMap,
    gm: &GrayMap,
    iou_positive: f64,
) -> Result<(Vec<Vec<f64>>, Vec<u8>)> {
    let m = crate::eval::iou_matrix(pred, gt)?;
    let mut pixel_lists: std::collections::BTreeMap<u32, Vec<(usize, usize)>> =
        std::collections::BTreeMap::new();
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            let l = pred.get(x, y);
            if l != 0 {
                pixel_lists.entry(l).or_default().push((x, y));
            }
        }
    }
    let mut rows = Vec::new();
    let mut classes = Vec::new();
    for (i, label) in m.pred_labels.iter().enumerate() {
        let best = (0..m.gt_labels.len())
            .map(|j| m.get(i, j))
            .fold(0.0f64, f64::max);
        rows.push(fp_features(&pixel_lists[label], i1, gm));
        classes.push(u8::from(best >= iou_positive));
    }
    Ok((rows, classes))
}
