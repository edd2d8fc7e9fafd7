//! Rank filtering, contrast-limited adaptive histogram equalization, and
//! gradient magnitude.

use crate::error::{Error, Result};
use crate::kernel::{convolve, dog_kernel_pair};
use crate::raster::GrayMap;
use crate::threshold::HIST_BINS;

/// 3x3 median filter with replicate padding.
pub fn median3(img: &GrayMap) -> GrayMap {
    let (w, h) = (img.width(), img.height());
    let mut out = img.clone();
    let mut window = [0.0f64; 9];
    for y in 0..h {
        for x in 0..w {
            let mut k = 0;
            for dy in -1..=1_isize {
                for dx in -1..=1_isize {
                    window[k] = img.get_clamped(x as isize + dx, y as isize + dy);
                    k += 1;
                }
            }
            window.sort_by(|a, b| a.partial_cmp(b).unwrap());
            out.set(x, y, window[4]);
        }
    }
    out
}

/// Gradient magnitude from the fixed 8x8 derivative-of-Gaussian pair,
/// rescaled to a declared 0-1 range.
pub fn gradient_magnitude(img: &GrayMap) -> Result<GrayMap> {
    let (kx, ky) = dog_kernel_pair();
    let gx = convolve(img, &kx)?;
    let gy = convolve(img, &ky)?;
    let mut mag = GrayMap::filled(img.width(), img.height(), 0.0, (0.0, 1.0));
    for (m, (a, b)) in mag
        .data_mut()
        .iter_mut()
        .zip(gx.data().iter().zip(gy.data().iter()))
    {
        *m = (a * a + b * b).sqrt();
    }
    Ok(mag.rescaled_to((0.0, 1.0)))
}

/// Tiling and clip settings for adaptive equalization.
#[derive(Debug, Clone, Copy)]
pub struct ClaheParams {
    /// Tiles per axis.
    pub tiles: usize,
    /// Clip limit as a fraction of each tile's pixel count.
    pub clip_fraction: f64,
}

impl Default for ClaheParams {
    fn default() -> Self {
        ClaheParams {
            tiles: 8,
            clip_fraction: 0.01,
        }
    }
}

fn bin_of(v: f64, lo: f64, scale: f64) -> usize {
    (((v - lo) * scale).floor() as i64).clamp(0, HIST_BINS as i64 - 1) as usize
}

/// Equalization lookup table for one histogram. `clip` of `None` means
/// plain equalization. A single-populated-bin histogram has no contrast to
/// spread and maps each bin to itself.
fn equalization_lut(hist: &[u64; HIST_BINS], clip: Option<u64>) -> [f64; HIST_BINS] {
    let mut lut = [0.0f64; HIST_BINS];
    if hist.iter().filter(|&&c| c > 0).count() <= 1 {
        for (b, v) in lut.iter_mut().enumerate() {
            *v = b as f64;
        }
        return lut;
    }
    let mut work = *hist;
    if let Some(limit) = clip {
        let mut excess = 0u64;
        for c in work.iter_mut() {
            if *c > limit {
                excess += *c - limit;
                *c = limit;
            }
        }
        let per_bin = excess / HIST_BINS as u64;
        let remainder = (excess % HIST_BINS as u64) as usize;
        for (b, c) in work.iter_mut().enumerate() {
            *c += per_bin + u64::from(b < remainder);
        }
    }
    let n: u64 = work.iter().sum();
    let mut cdf = 0u64;
    let mut cdf_min = None;
    let mut cdfs = [0u64; HIST_BINS];
    for (b, &c) in work.iter().enumerate() {
        cdf += c;
        cdfs[b] = cdf;
        if cdf_min.is_none() && cdf > 0 {
            cdf_min = Some(cdf);
        }
    }
    let cdf_min = cdf_min.unwrap_or(0);
    let denom = (n - cdf_min) as f64;
    for (b, v) in lut.iter_mut().enumerate() {
        let num = cdfs[b].saturating_sub(cdf_min) as f64;
        *v = (num / denom * 255.0).round().clamp(0.0, 255.0);
    }
    lut
}

/// Contrast-limited adaptive histogram equalization over an 8x8 tile grid
/// with bilinear blending between tile mappings.
///
/// Images narrower or shorter than the tile grid fall back to one global
/// equalization pass.
pub fn clahe(img: &GrayMap, params: ClaheParams) -> Result<GrayMap> {
    let (lo, hi) = img.range();
    if !(hi > lo) {
        return Err(Error::invalid_parameter(format!(
            "equalization needs a non-degenerate declared range, got ({lo}, {hi})"
        )));
    }
    if params.tiles == 0 || !(params.clip_fraction > 0.0) {
        return Err(Error::invalid_parameter(
            "equalization needs tiles >= 1 and a positive clip fraction".to_string(),
        ));
    }
    let (w, h) = (img.width(), img.height());
    if w == 0 || h == 0 {
        return Ok(img.clone());
    }
    let scale = HIST_BINS as f64 / (hi - lo);
    let t = params.tiles;

    if w < t || h < t {
        let mut hist = [0u64; HIST_BINS];
        for &v in img.data() {
            hist[bin_of(v, lo, scale)] += 1;
        }
        let lut = equalization_lut(&hist, None);
        let mut out = GrayMap::filled(w, h, 0.0, (0.0, 255.0));
        for (o, &v) in out.data_mut().iter_mut().zip(img.data()) {
            *o = lut[bin_of(v, lo, scale)];
        }
        return Ok(out);
    }

    // tile i spans [edge(i), edge(i+1))
    let edge = |i: usize, extent: usize| i * extent / t;
    let center = |i: usize, extent: usize| (edge(i, extent) + edge(i + 1, extent) - 1) as f64 / 2.0;

    let mut luts = vec![[0.0f64; HIST_BINS]; t * t];
    for ty in 0..t {
        for tx in 0..t {
            let (x0, x1) = (edge(tx, w), edge(tx + 1, w));
            let (y0, y1) = (edge(ty, h), edge(ty + 1, h));
            let mut hist = [0u64; HIST_BINS];
            for y in y0..y1 {
                for x in x0..x1 {
                    hist[bin_of(img.get(x, y), lo, scale)] += 1;
                }
            }
            let tile_px = ((x1 - x0) * (y1 - y0)) as f64;
            let clip = (params.clip_fraction * tile_px).round().max(1.0) as u64;
            luts[ty * t + tx] = equalization_lut(&hist, Some(clip));
        }
    }

    // blend the four surrounding tile mappings; pixels beyond the outermost
    // tile centers clamp to the border tile
    let mut out = GrayMap::filled(w, h, 0.0, (0.0, 255.0));
    for y in 0..h {
        let (jy, fy) = interp_coord(y as f64, h, t, center);
        for x in 0..w {
            let (jx, fx) = interp_coord(x as f64, w, t, center);
            let b = bin_of(img.get(x, y), lo, scale);
            let l00 = luts[jy * t + jx][b];
            let l10 = luts[jy * t + (jx + 1).min(t - 1)][b];
            let l01 = luts[(jy + 1).min(t - 1) * t + jx][b];
            let l11 = luts[(jy + 1).min(t - 1) * t + (jx + 1).min(t - 1)][b];
            let top = l00 + fx * (l10 - l00);
            let bot = l01 + fx * (l11 - l01);
            out.set(x, y, top + fy * (bot - top));
        }
    }
    Ok(out)
}

/// Tile index and fractional weight for one axis position.
fn interp_coord(
    p: f64,
    extent: usize,
    tiles: usize,
    center: impl Fn(usize, usize) -> f64,
) -> (usize, f64) {
    if p <= center(0, extent) {
        return (0, 0.0);
    }
    if p >= center(tiles - 1, extent) {
        return (tiles - 1, 0.0);
    }
    for i in 0..tiles - 1 {
        let c0 = center(i, extent);
        let c1 = center(i + 1, extent);
        if p < c1 {
            return (i, (p - c0) / (c1 - c0));
        }
    }
    (tiles - 1, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_preserves_constant_image() {
        let img = GrayMap::filled(6, 6, 9.0, (0.0, 255.0));
        assert_eq!(median3(&img).data(), img.data());
    }

    #[test]
    fn median_removes_lone_impulse() {
        let mut img = GrayMap::filled(7, 7, 10.0, (0.0, 255.0));
        img.set(3, 3, 250.0);
        let out = median3(&img);
        assert_eq!(out.get(3, 3), 10.0);
    }

    #[test]
    fn median_of_ordered_block_is_middle_value() {
        let img = GrayMap::from_vec(3, 3, (1..=9).map(f64::from).collect(), (0.0, 255.0)).unwrap();
        assert_eq!(median3(&img).get(1, 1), 5.0);
    }

    #[test]
    fn gradient_magnitude_zero_on_constant() {
        let img = GrayMap::filled(32, 32, 100.0, (0.0, 255.0));
        let gm = gradient_magnitude(&img).unwrap();
        assert!(gm.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_magnitude_peaks_along_step_edge() {
        let mut img = GrayMap::filled(40, 40, 200.0, (0.0, 255.0));
        for y in 0..40 {
            for x in 20..40 {
                img.set(x, y, 50.0);
            }
        }
        let gm = gradient_magnitude(&img).unwrap();
        let on_edge = gm.get(20, 20);
        let off_edge = gm.get(5, 20);
        assert!(on_edge > 0.9, "edge response {on_edge}");
        assert!(off_edge < 0.1, "flat response {off_edge}");
    }

    #[test]
    fn clahe_keeps_constant_image_constant() {
        let img = GrayMap::filled(64, 64, 42.0, (0.0, 255.0));
        let out = clahe(&img, ClaheParams::default()).unwrap();
        assert!(out.data().iter().all(|&v| v == 42.0));
    }

    #[test]
    fn clahe_output_stays_in_range() {
        let mut img = GrayMap::filled(64, 64, 0.0, (0.0, 255.0));
        for y in 0..64 {
            for x in 0..64 {
                img.set(x, y, ((x * 3 + y * 5) % 256) as f64);
            }
        }
        let out = clahe(&img, ClaheParams::default()).unwrap();
        assert!(out.data().iter().all(|&v| (0.0..=255.0).contains(&v)));
    }

    #[test]
    fn clahe_stretches_two_level_checkerboard() {
        let img = GrayMap::from_fn_range(256, 256, (0.0, 255.0), |x, y| {
            if (x + y) % 2 == 0 {
                64.0
            } else {
                192.0
            }
        });
        let out = clahe(&img, ClaheParams::default()).unwrap();
        let lo = out.min_value();
        let hi = out.max_value();
        assert!(hi - lo >= 128.0, "dynamic range {} < input 128", hi - lo);
        // the bright level moves up, away from the dark one
        let bright = out.get(1, 0);
        assert!(bright >= 192.0, "bright level {bright}");
    }

    #[test]
    fn small_image_falls_back_to_global_equalization() {
        let mut img = GrayMap::filled(4, 4, 80.0, (0.0, 255.0));
        for x in 0..4 {
            img.set(x, 0, 170.0);
        }
        let out = clahe(&img, ClaheParams::default()).unwrap();
        assert_eq!(out.get(0, 0), 255.0);
        assert_eq!(out.get(0, 2), 0.0);
    }
}
