//! Marker-controlled watershed over a composite relief map.
//!
//! The relief combines the inverted peak-response map with a standardized
//! gradient term. Cell markers and background separators are imposed as the
//! only regional minima, then a priority flood assigns every pixel to the
//! basin that reaches it first. Flooding is sequential and fully
//! deterministic; parallelism belongs one level up, across tiles.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::morphology::{connected_components, reconstruct_gray, Conn};
use crate::raster::{BinaryMask, GrayMap, LabelMap};

/// Default weight of the gradient term in the relief map.
pub const DEFAULT_ALPHA1: f64 = 0.15;

/// Number of quantization steps applied to the relief before flooding.
pub const QUANT_LEVELS: u32 = 65535;

/// Everything the flooding stage needs for one tile.
///
/// Markers must lie inside the foreground, separators outside it; the two
/// seed sets together are the imposed regional minima.
#[derive(Debug, Clone)]
pub struct WatershedInput {
    pub w: GrayMap,
    pub markers: BinaryMask,
    pub separators: BinaryMask,
    pub fg: BinaryMask,
}

impl WatershedInput {
    pub fn new(
        w: GrayMap,
        markers: BinaryMask,
        separators: BinaryMask,
        fg: BinaryMask,
    ) -> Result<Self> {
        let (width, height) = (w.width(), w.height());
        for m in [&markers, &separators, &fg] {
            if m.width() != width || m.height() != height {
                return Err(Error::DimensionMismatch {
                    expected_w: width,
                    expected_h: height,
                    actual_w: m.width(),
                    actual_h: m.height(),
                });
            }
        }
        for (x, y) in markers.true_pixels() {
            if !fg.get(x, y) {
                return Err(Error::invalid_parameter(format!(
                    "marker at ({x},{y}) outside foreground"
                )));
            }
        }
        for (x, y) in separators.true_pixels() {
            if fg.get(x, y) {
                return Err(Error::invalid_parameter(format!(
                    "separator at ({x},{y}) inside foreground"
                )));
            }
        }
        if !fg.is_all_false() && markers.is_all_false() && separators.is_all_false() {
            return Err(Error::NoSeeds);
        }
        Ok(WatershedInput {
            w,
            markers,
            separators,
            fg,
        })
    }

    /// Union of markers and separators: the pixels imposed as minima.
    pub fn minima(&self) -> BinaryMask {
        self.markers.union(&self.separators)
    }

    /// Imposes the minima, floods, zeroes background, compacts labels.
    ///
    /// Separator-seeded basins never claim foreground pixels, so the labels
    /// that survive are exactly the marker basins, numbered in marker
    /// component order.
    pub fn run(&self) -> Result<LabelMap> {
        let (width, height) = (self.w.width(), self.w.height());
        if self.fg.is_all_false() {
            return Ok(LabelMap::new(width, height));
        }
        let imposed = impose_minima(&self.w, &self.minima())?;
        let (seeds, cutoff) = label_minima(&self.markers, &self.separators);
        let q = quantize_relief(&imposed);
        let mut lb = flood(&q, width, height, &seeds, Some((&self.fg, cutoff)));
        for (i, &inside) in self.fg.data().iter().enumerate() {
            if !inside {
                lb.data_mut()[i] = 0;
            }
        }
        lb.compact();
        Ok(lb)
    }
}

/// Builds the relief `W = (1 - r) + alpha1 * alpha2 * g` from the peak
/// response and gradient maps, both rescaled to 0-1 first. `alpha2`
/// standardizes the gradient term to the mean of the inverted response;
/// a gradient-free tile drops the term entirely.
pub fn build_w(r_mk: &GrayMap, gm: &GrayMap, alpha1: f64) -> Result<GrayMap> {
    r_mk.check_dims(gm.width(), gm.height())?;
    if !alpha1.is_finite() || alpha1 < 0.0 {
        return Err(Error::invalid_parameter("alpha1 must be finite and >= 0"));
    }
    let r = r_mk.rescaled_to((0.0, 1.0));
    let g = gm.rescaled_to((0.0, 1.0));
    let inv: Vec<f64> = r.data().iter().map(|v| 1.0 - v).collect();
    let mean_inv = inv.iter().sum::<f64>() / inv.len() as f64;
    let mean_g = g.mean();
    let coef = if mean_g > 0.0 {
        alpha1 * mean_inv / mean_g
    } else {
        0.0
    };
    let data: Vec<f64> = inv
        .iter()
        .zip(g.data())
        .map(|(a, b)| a + coef * b)
        .collect();
    Ok(GrayMap::from_vec(r_mk.width(), r_mk.height(), data, (0.0, 1.0))?.with_actual_range())
}

/// Background separating curves: the boundaries between Euclidean influence
/// zones of the foreground components, plus the background border frame.
///
/// Each background pixel is assigned its nearest component (exact squared
/// distances; ties go to the lower label). A pixel joins the separator set
/// when its right or down neighbour belongs to a different zone, which keeps
/// the curves one pixel wide. Fewer than two components leave only the frame.
pub fn skiz(fg: &BinaryMask) -> BinaryMask {
    let (width, height) = (fg.width(), fg.height());
    let mut out = BinaryMask::new(width, height);
    if width == 0 || height == 0 {
        return out;
    }
    for x in 0..width {
        for y in [0, height - 1] {
            if !fg.get(x, y) {
                out.set(x, y, true);
            }
        }
    }
    for y in 0..height {
        for x in [0, width - 1] {
            if !fg.get(x, y) {
                out.set(x, y, true);
            }
        }
    }
    let comps = connected_components(fg, Conn::Eight);
    let k = comps.max_label();
    if k < 2 {
        return out;
    }
    let zone = influence_zones(&comps, k);
    for y in 0..height {
        for x in 0..width {
            if fg.get(x, y) {
                continue;
            }
            let here = zone[y * width + x];
            let split_right = x + 1 < width && zone[y * width + x + 1] != here;
            let split_down = y + 1 < height && zone[(y + 1) * width + x] != here;
            if split_right || split_down {
                out.set(x, y, true);
            }
        }
    }
    out
}

/// Nearest-component label per pixel, ties resolved toward the lower label.
fn influence_zones(comps: &LabelMap, k: u32) -> Vec<u32> {
    let n = comps.width() * comps.height();
    let mut best = vec![f64::INFINITY; n];
    let mut zone = vec![0u32; n];
    for label in 1..=k {
        let d = edt_squared(&comps.mask_of(label));
        for i in 0..n {
            if d[i] < best[i] {
                best[i] = d[i];
                zone[i] = label;
            }
        }
    }
    zone
}

/// Exact squared Euclidean distance to the nearest true pixel, by the
/// two-pass lower-envelope method. Distances are exact integers in f64;
/// an empty site set gives infinity everywhere.
pub(crate) fn edt_squared(sites: &BinaryMask) -> Vec<f64> {
    let (width, height) = (sites.width(), sites.height());
    let inf = f64::INFINITY;
    let n = width * height;
    let mut col = vec![inf; n];
    for x in 0..width {
        let mut d = inf;
        for y in 0..height {
            if sites.get(x, y) {
                d = 0.0;
            } else if d.is_finite() {
                d += 1.0;
            }
            col[y * width + x] = d;
        }
        let mut d = inf;
        for y in (0..height).rev() {
            if sites.get(x, y) {
                d = 0.0;
            } else if d.is_finite() {
                d += 1.0;
            }
            let i = y * width + x;
            if d < col[i] {
                col[i] = d;
            }
        }
    }
    let mut out = vec![inf; n];
    let mut f = vec![inf; width];
    let mut v = vec![0usize; width];
    let mut z = vec![0.0f64; width + 1];
    for y in 0..height {
        for x in 0..width {
            let c = col[y * width + x];
            f[x] = if c.is_finite() { c * c } else { inf };
        }
        let mut k: usize = 0;
        let mut started = false;
        for q in 0..width {
            if !f[q].is_finite() {
                continue;
            }
            if !started {
                v[0] = q;
                z[0] = -inf;
                z[1] = inf;
                started = true;
                continue;
            }
            let mut s;
            loop {
                let p = v[k];
                s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
                if s <= z[k] {
                    k -= 1;
                } else {
                    break;
                }
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = inf;
        }
        if !started {
            continue;
        }
        let mut j = 0;
        for x in 0..width {
            while z[j + 1] < x as f64 {
                j += 1;
            }
            let p = v[j];
            let dx = x as f64 - p as f64;
            out[y * width + x] = f[p] + dx * dx;
        }
    }
    out
}

/// Rewrites the relief so its regional minima are exactly the given pixels.
///
/// The seed function is 0 on minima and high elsewhere; the result is the
/// reconstruction by erosion of `min(seed, w + delta)` from the seed, with
/// `delta` one quantization step of the relief's value range.
pub fn impose_minima(w: &GrayMap, minima: &BinaryMask) -> Result<GrayMap> {
    w.check_dims(minima.width(), minima.height())?;
    if minima.is_all_false() {
        return Err(Error::NoSeeds);
    }
    let lo = w.min_value();
    let hi = w.max_value();
    if lo < 0.0 {
        return Err(Error::invalid_parameter("relief values must be >= 0"));
    }
    let range = hi - lo;
    let delta = if range > 0.0 {
        range / QUANT_LEVELS as f64
    } else {
        1.0
    };
    let sentinel = hi + delta + 1.0;
    let n = w.data().len();
    let mut neg_marker = Vec::with_capacity(n);
    let mut neg_mask = Vec::with_capacity(n);
    for i in 0..n {
        let seed = if minima.data()[i] { 0.0 } else { sentinel };
        neg_marker.push(-seed);
        neg_mask.push(-seed.min(w.data()[i] + delta));
    }
    let neg_range = (-sentinel, 0.0);
    let marker = GrayMap::from_vec(w.width(), w.height(), neg_marker, neg_range)?;
    let mask = GrayMap::from_vec(w.width(), w.height(), neg_mask, neg_range)?;
    let rec = reconstruct_gray(&marker, &mask, Conn::Four)?;
    let data: Vec<f64> = rec.data().iter().map(|v| -v).collect();
    Ok(GrayMap::from_vec(w.width(), w.height(), data, (0.0, sentinel))?)
}

/// Maps the relief onto `0..=QUANT_LEVELS` over its actual value range, so
/// the flood priority does not depend on floating-point summation detail.
/// A constant relief quantizes to all zeros.
pub fn quantize_relief(w: &GrayMap) -> Vec<u16> {
    let lo = w.min_value();
    let hi = w.max_value();
    if hi <= lo {
        return vec![0; w.data().len()];
    }
    let scale = QUANT_LEVELS as f64 / (hi - lo);
    w.data()
        .iter()
        .map(|v| ((v - lo) * scale).round() as u16)
        .collect()
}

/// Labels marker components 1..=K and separator components K+1.., in
/// component raster order. Returns the seed map and K.
pub fn label_minima(markers: &BinaryMask, separators: &BinaryMask) -> (LabelMap, u32) {
    let mc = connected_components(markers, Conn::Eight);
    let k = mc.max_label();
    let sc = connected_components(separators, Conn::Eight);
    let mut seeds = mc;
    for (i, &s) in sc.data().iter().enumerate() {
        if s != 0 {
            seeds.data_mut()[i] = k + s;
        }
    }
    (seeds, k)
}

/// Floods the relief from labeled seeds and labels every pixel.
///
/// The queue is ordered by (quantized value, insertion sequence): FIFO
/// within a level, seeds entered in raster order, and a pixel takes the
/// label of whichever basin pushes it first. Basin growth is 4-connected.
pub fn watershed(w_imposed: &GrayMap, minima: &LabelMap) -> Result<LabelMap> {
    w_imposed.check_dims(minima.width(), minima.height())?;
    if minima.max_label() == 0 {
        return Err(Error::NoSeeds);
    }
    let q = quantize_relief(w_imposed);
    Ok(flood(
        &q,
        w_imposed.width(),
        w_imposed.height(),
        minima,
        None,
    ))
}

/// Zeroes labels outside the foreground and renumbers the survivors.
pub fn restrict_to_foreground(lb: &LabelMap, fg: &BinaryMask) -> LabelMap {
    let mut out = lb.clone();
    for (i, &inside) in fg.data().iter().enumerate() {
        if !inside {
            out.data_mut()[i] = 0;
        }
    }
    out.compact();
    out
}

/// Core priority flood. With a fence `(fg, cutoff)`, labels above the
/// cutoff are barred from claiming foreground pixels.
fn flood(
    q: &[u16],
    width: usize,
    height: usize,
    seeds: &LabelMap,
    fence: Option<(&BinaryMask, u32)>,
) -> LabelMap {
    const NWES: [(isize, isize); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];
    let mut out = seeds.clone();
    let mut heap: BinaryHeap<Reverse<(u16, u64, u32)>> = BinaryHeap::new();
    let mut seq: u64 = 0;
    for (i, &label) in out.data().iter().enumerate() {
        if label != 0 {
            heap.push(Reverse((q[i], seq, i as u32)));
            seq += 1;
        }
    }
    while let Some(Reverse((_, _, i))) = heap.pop() {
        let i = i as usize;
        let label = out.data()[i];
        let (x, y) = (i % width, i / width);
        for (dx, dy) in NWES {
            let nx = x as isize + dx;
            let ny = y as isize + dy;
            if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                continue;
            }
            let j = ny as usize * width + nx as usize;
            if out.data()[j] != 0 {
                continue;
            }
            if let Some((fg, cutoff)) = fence {
                if label > cutoff && fg.data()[j] {
                    continue;
                }
            }
            out.data_mut()[j] = label;
            heap.push(Reverse((q[j], seq, j as u32)));
            seq += 1;
        }
    }
    out
}
