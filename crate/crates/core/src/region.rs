//! Region geometry and the per-candidate feature vectors.
//!
//! A candidate merge is described by 83 numbers: 25 for each side, 23 for
//! the union measured as a single region, and 10 pair-specific cues. All
//! ratios are guarded so the vector is finite on any region of area >= 1.

use crate::raster::{BinaryMask, GrayMap};

/// Number of single-region features.
pub const SINGLE_FEATURES: usize = 25;
/// Number of merged-pair features.
pub const MERGED_FEATURES: usize = 33;
/// Full candidate vector: both sides plus the merged view.
pub const PAIR_FEATURES: usize = 2 * SINGLE_FEATURES + MERGED_FEATURES;

/// Geometry of one superpixel, recomputed from its pixel list.
#[derive(Debug, Clone)]
pub struct RegionStats {
    pub label: u32,
    pub pixels: Vec<(usize, usize)>,
    pub area: usize,
    pub centroid: (f64, f64),
    /// x, y, w, h of the tight pixel bounding box.
    pub bbox: (usize, usize, usize, usize),
    /// Region pixels with at least one 4-neighbour outside the region.
    pub boundary: Vec<(usize, usize)>,
    pub perimeter_px: usize,
    /// Crofton length estimate: pi/4 times the count of in/out pixel edges.
    pub perimeter_len: f64,
    /// Normalized central moments with the 1/12 pixel-extent term on the axes.
    pub mu20: f64,
    pub mu02: f64,
    pub mu11: f64,
    pub major_axis: f64,
    pub minor_axis: f64,
    pub eccentricity: f64,
    /// Ellipse orientation in (-pi/2, pi/2], raster coordinates.
    pub orientation: f64,
    /// Pixels whose centre falls inside the convex hull of the region.
    pub convex_area: usize,
    /// Convex hull of the pixel corner points, counter-clockwise.
    pub hull: Vec<(f64, f64)>,
}

impl RegionStats {
    /// Measures a region given its pixels and the image dimensions.
    /// Image borders count as outside for boundary purposes.
    pub fn from_pixels(
        label: u32,
        pixels: Vec<(usize, usize)>,
        width: usize,
        height: usize,
    ) -> RegionStats {
        assert!(!pixels.is_empty(), "region must have at least one pixel");
        let area = pixels.len();
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
        let mut sx = 0.0;
        let mut sy = 0.0;
        for &(x, y) in &pixels {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            sx += x as f64;
            sy += y as f64;
        }
        let bw = x1 - x0 + 1;
        let bh = y1 - y0 + 1;
        let cx = sx / area as f64;
        let cy = sy / area as f64;

        let mut inside = vec![false; bw * bh];
        for &(x, y) in &pixels {
            inside[(y - y0) * bw + (x - x0)] = true;
        }
        let member = |x: isize, y: isize| -> bool {
            if x < 0 || y < 0 || x >= width as isize || y >= height as isize {
                return false;
            }
            let (x, y) = (x as usize, y as usize);
            if x < x0 || x > x1 || y < y0 || y > y1 {
                return false;
            }
            inside[(y - y0) * bw + (x - x0)]
        };

        let mut boundary = Vec::new();
        let mut edges = 0usize;
        let mut mu20 = 0.0;
        let mut mu02 = 0.0;
        let mut mu11 = 0.0;
        for &(x, y) in &pixels {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            mu20 += dx * dx;
            mu02 += dy * dy;
            mu11 += dx * dy;
            let mut outside = 0;
            for (ox, oy) in [(0isize, -1isize), (-1, 0), (1, 0), (0, 1)] {
                if !member(x as isize + ox, y as isize + oy) {
                    outside += 1;
                }
            }
            if outside > 0 {
                boundary.push((x, y));
                edges += outside;
            }
        }
        mu20 = mu20 / area as f64 + 1.0 / 12.0;
        mu02 = mu02 / area as f64 + 1.0 / 12.0;
        mu11 /= area as f64;
        let common = ((mu20 - mu02).powi(2) + 4.0 * mu11 * mu11).sqrt();
        let l1 = (mu20 + mu02 + common) / 2.0;
        let l2 = (mu20 + mu02 - common) / 2.0;
        let major_axis = 4.0 * l1.max(0.0).sqrt();
        let minor_axis = 4.0 * l2.max(0.0).sqrt();
        let eccentricity = if l1 > 0.0 {
            (1.0 - (l2 / l1).max(0.0)).max(0.0).sqrt()
        } else {
            0.0
        };
        let orientation = 0.5 * (2.0 * mu11).atan2(mu20 - mu02);

        let mut corners = Vec::with_capacity(boundary.len() * 4);
        for &(x, y) in &boundary {
            let (x, y) = (x as f64, y as f64);
            corners.push((x - 0.5, y - 0.5));
            corners.push((x + 0.5, y - 0.5));
            corners.push((x - 0.5, y + 0.5));
            corners.push((x + 0.5, y + 0.5));
        }
        let hull = convex_hull(corners);
        let mut convex_area = 0usize;
        for py in y0..=y1 {
            for px in x0..=x1 {
                if point_in_hull(&hull, px as f64, py as f64) {
                    convex_area += 1;
                }
            }
        }
        let perimeter_px = boundary.len();

        RegionStats {
            label,
            area,
            centroid: (cx, cy),
            bbox: (x0, y0, bw, bh),
            boundary,
            perimeter_px,
            perimeter_len: std::f64::consts::PI * edges as f64 / 4.0,
            mu20,
            mu02,
            mu11,
            major_axis,
            minor_axis,
            eccentricity,
            orientation,
            convex_area,
            hull,
            pixels,
        }
    }

    /// Measures the union of two disjoint regions, keeping `a`'s label.
    pub fn union_of(a: &RegionStats, b: &RegionStats, width: usize, height: usize) -> RegionStats {
        let mut pixels = Vec::with_capacity(a.area + b.area);
        pixels.extend_from_slice(&a.pixels);
        pixels.extend_from_slice(&b.pixels);
        RegionStats::from_pixels(a.label, pixels, width, height)
    }

    /// Minimum and maximum caliper widths over the convex hull.
    pub fn feret_ratio(&self) -> f64 {
        if self.hull.len() < 2 {
            return 1.0;
        }
        let mut max_d2 = 0.0f64;
        for i in 0..self.hull.len() {
            for j in i + 1..self.hull.len() {
                let dx = self.hull[i].0 - self.hull[j].0;
                let dy = self.hull[i].1 - self.hull[j].1;
                max_d2 = max_d2.max(dx * dx + dy * dy);
            }
        }
        let max_feret = max_d2.sqrt();
        let mut min_feret = f64::INFINITY;
        let n = self.hull.len();
        for i in 0..n {
            let (ax, ay) = self.hull[i];
            let (bx, by) = self.hull[(i + 1) % n];
            let (ex, ey) = (bx - ax, by - ay);
            let len = (ex * ex + ey * ey).sqrt();
            if len == 0.0 {
                continue;
            }
            let mut width = 0.0f64;
            for &(px, py) in &self.hull {
                let d = ((px - ax) * ey - (py - ay) * ex).abs() / len;
                width = width.max(d);
            }
            min_feret = min_feret.min(width);
        }
        if !min_feret.is_finite() || max_feret == 0.0 {
            return 1.0;
        }
        min_feret / max_feret
    }
}

/// Pixels of one contiguous border between two specific regions: members of
/// either side that are 4-adjacent to the other side.
#[derive(Debug, Clone, Default)]
pub struct EdgeSegment {
    pub pixels: Vec<(usize, usize)>,
}

impl EdgeSegment {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

fn guarded_div(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.max(0.0).sqrt())
}

/// Linear-interpolated percentile of a sorted slice, p in 0..=100.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    if sorted.len() == 1 {
        return sorted[0];
    }
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = rank - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| -> f64 {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// True when (x, y) lies inside or on the counter-clockwise hull.
fn point_in_hull(hull: &[(f64, f64)], x: f64, y: f64) -> bool {
    match hull.len() {
        0 => false,
        1 => (hull[0].0 - x).abs() < 1e-9 && (hull[0].1 - y).abs() < 1e-9,
        2 => {
            let (ax, ay) = hull[0];
            let (bx, by) = hull[1];
            let cross = (bx - ax) * (y - ay) - (by - ay) * (x - ax);
            if cross.abs() > 1e-9 {
                return false;
            }
            let dot = (x - ax) * (bx - ax) + (y - ay) * (by - ay);
            let len2 = (bx - ax).powi(2) + (by - ay).powi(2);
            dot >= -1e-9 && dot <= len2 + 1e-9
        }
        _ => {
            let n = hull.len();
            for i in 0..n {
                let (ax, ay) = hull[i];
                let (bx, by) = hull[(i + 1) % n];
                if (bx - ax) * (y - ay) - (by - ay) * (x - ax) < -1e-9 {
                    return false;
                }
            }
            true
        }
    }
}

fn region_samples(s: &RegionStats, map: &GrayMap) -> Vec<f64> {
    s.pixels.iter().map(|&(x, y)| map.get(x, y)).collect()
}

/// The 25 single-region features, in their fixed order:
/// area; solidity; extent; eccentricity; circularity; axes ratio;
/// background-contact fraction of the boundary; edge/perimeter;
/// edge/minor-axis; intensity max, min, mean, SD, SD/mean; intensity
/// percentiles 1, 3, 5, 10, 50, 75; gradient max, min, mean, SD, SD/mean.
pub fn features_single(
    s: &RegionStats,
    e: &EdgeSegment,
    i1: &GrayMap,
    gm: &GrayMap,
    fg: &BinaryMask,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(SINGLE_FEATURES);
    shape_features(s, fg, &mut out);
    out.push(guarded_div(e.len() as f64, s.perimeter_len));
    out.push(guarded_div(e.len() as f64, s.minor_axis));
    intensity_features(s, i1, true, &mut out);
    intensity_features(s, gm, false, &mut out);
    debug_assert_eq!(out.len(), SINGLE_FEATURES);
    out
}

/// The 33 merged-pair features: the single-region list of the union minus
/// the two edge ratios, then feret ratio; centroid-to-boundary distance
/// max, min, mean, SD, SD/mean; edge length; fraction of the edge on the
/// edge map; orientation disparity; edge gradient over union gradient.
pub fn features_merged(
    s1: &RegionStats,
    s2: &RegionStats,
    e: &EdgeSegment,
    i1: &GrayMap,
    gm: &GrayMap,
    em: &BinaryMask,
    fg: &BinaryMask,
) -> Vec<f64> {
    let u = RegionStats::union_of(s1, s2, i1.width(), i1.height());
    let mut out = Vec::with_capacity(MERGED_FEATURES);
    shape_features(&u, fg, &mut out);
    intensity_features(&u, i1, true, &mut out);
    intensity_features(&u, gm, false, &mut out);

    out.push(u.feret_ratio());
    let (cx, cy) = u.centroid;
    let dists: Vec<f64> = u
        .boundary
        .iter()
        .map(|&(x, y)| ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt())
        .collect();
    let dmax = dists.iter().copied().fold(0.0f64, f64::max);
    let dmin = dists.iter().copied().fold(f64::INFINITY, f64::min);
    let (dmean, dsd) = mean_sd(&dists);
    out.push(dmax);
    out.push(if dmin.is_finite() { dmin } else { 0.0 });
    out.push(dmean);
    out.push(dsd);
    out.push(guarded_div(dsd, dmean));

    out.push(e.len() as f64);
    let on_em = e.pixels.iter().filter(|&&(x, y)| em.get(x, y)).count();
    out.push(guarded_div(on_em as f64, e.len() as f64));
    out.push(orientation_disparity(s1.orientation, s2.orientation));
    let edge_gm: Vec<f64> = e.pixels.iter().map(|&(x, y)| gm.get(x, y)).collect();
    let (edge_mean, _) = mean_sd(&edge_gm);
    let union_gm = region_samples(&u, gm);
    let (union_mean, _) = mean_sd(&union_gm);
    out.push(guarded_div(edge_mean, union_mean));
    debug_assert_eq!(out.len(), MERGED_FEATURES);
    out
}

/// Full 83-element candidate vector: S1 features, S2 features, merged view.
pub fn features_pair(
    s1: &RegionStats,
    s2: &RegionStats,
    e: &EdgeSegment,
    i1: &GrayMap,
    gm: &GrayMap,
    em: &BinaryMask,
    fg: &BinaryMask,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(PAIR_FEATURES);
    out.extend(features_single(s1, e, i1, gm, fg));
    out.extend(features_single(s2, e, i1, gm, fg));
    out.extend(features_merged(s1, s2, e, i1, gm, em, fg));
    out
}

/// Angular separation of two ellipse orientations, folded into a quarter
/// turn and normalized to 0-1. Parallel axes give 0, perpendicular give 1.
pub fn orientation_disparity(theta1: f64, theta2: f64) -> f64 {
    let mut d = (theta1 - theta2).abs() % std::f64::consts::PI;
    if d > std::f64::consts::FRAC_PI_2 {
        d = std::f64::consts::PI - d;
    }
    d / std::f64::consts::FRAC_PI_2
}

fn shape_features(s: &RegionStats, fg: &BinaryMask, out: &mut Vec<f64>) {
    out.push(s.area as f64);
    out.push(guarded_div(s.area as f64, s.convex_area as f64));
    let bbox_area = (s.bbox.2 * s.bbox.3) as f64;
    out.push(guarded_div(s.area as f64, bbox_area));
    out.push(s.eccentricity);
    out.push(guarded_div(
        4.0 * std::f64::consts::PI * s.area as f64,
        s.perimeter_len * s.perimeter_len,
    ));
    out.push(guarded_div(s.minor_axis, s.major_axis));
    let (w, h) = (fg.width() as isize, fg.height() as isize);
    let touches_bg = s
        .boundary
        .iter()
        .filter(|&&(x, y)| {
            [(0isize, -1isize), (-1, 0), (1, 0), (0, 1)]
                .iter()
                .any(|&(ox, oy)| {
                    let nx = x as isize + ox;
                    let ny = y as isize + oy;
                    nx < 0
                        || ny < 0
                        || nx >= w
                        || ny >= h
                        || !fg.get(nx as usize, ny as usize)
                })
        })
        .count();
    out.push(guarded_div(touches_bg as f64, s.boundary.len() as f64));
}

fn intensity_features(s: &RegionStats, map: &GrayMap, with_percentiles: bool, out: &mut Vec<f64>) {
    let mut vals = region_samples(s, map);
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let (mean, sd) = mean_sd(&vals);
    out.push(max);
    out.push(min);
    out.push(mean);
    out.push(sd);
    out.push(guarded_div(sd, mean));
    if with_percentiles {
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for p in [1.0, 3.0, 5.0, 10.0, 50.0, 75.0] {
            out.push(percentile(&vals, p));
        }
    }
}

/// Names for the single-region features, in vector order.
pub fn single_feature_names() -> [&'static str; SINGLE_FEATURES] {
    [
        "area",
        "solidity",
        "extent",
        "eccentricity",
        "circularity",
        "axes_ratio",
        "bg_contact_fraction",
        "edge_over_perimeter",
        "edge_over_minor_axis",
        "i_max",
        "i_min",
        "i_mean",
        "i_sd",
        "i_sd_over_mean",
        "i_p01",
        "i_p03",
        "i_p05",
        "i_p10",
        "i_p50",
        "i_p75",
        "g_max",
        "g_min",
        "g_mean",
        "g_sd",
        "g_sd_over_mean",
    ]
}

/// Names for the merged-pair features, in vector order.
pub fn merged_feature_names() -> [&'static str; MERGED_FEATURES] {
    [
        "m_area",
        "m_solidity",
        "m_extent",
        "m_eccentricity",
        "m_circularity",
        "m_axes_ratio",
        "m_bg_contact_fraction",
        "m_i_max",
        "m_i_min",
        "m_i_mean",
        "m_i_sd",
        "m_i_sd_over_mean",
        "m_i_p01",
        "m_i_p03",
        "m_i_p05",
        "m_i_p10",
        "m_i_p50",
        "m_i_p75",
        "m_g_max",
        "m_g_min",
        "m_g_mean",
        "m_g_sd",
        "m_g_sd_over_mean",
        "feret_ratio",
        "radial_max",
        "radial_min",
        "radial_mean",
        "radial_sd",
        "radial_sd_over_mean",
        "edge_len",
        "edge_on_em_fraction",
        "orientation_disparity",
        "edge_gm_over_region_gm",
    ]
}

/// Names for the full 83-element candidate vector.
pub fn pair_feature_names() -> Vec<String> {
    let mut names = Vec::with_capacity(PAIR_FEATURES);
    for n in single_feature_names() {
        names.push(format!("s1_{n}"));
    }
    for n in single_feature_names() {
        names.push(format!("s2_{n}"));
    }
    for n in merged_feature_names() {
        names.push(n.to_string());
    }
    names
}
