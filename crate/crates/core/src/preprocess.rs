//! Tile standardization: grayscale conversion, smoothing, equalization,
//! neuropil intensity normalization, and the gradient/edge/substance maps.

use crate::error::{Error, Result};
use crate::filters::{clahe, gradient_magnitude, ClaheParams};
use crate::kernel::{convolve, gaussian_kernel, side_for_sigma};
use crate::morphology::remove_small;
use crate::raster::{BinaryMask, GrayMap};
use crate::threshold::{histogram_256, mask_at_or_above, mask_below, otsu_threshold, triangle_threshold, HIST_BINS};

/// Target mean neuropil intensity every tile is normalized to.
pub const I_R: f64 = 205.0;

/// Decoded 8-bit tile, 1 (gray) or 3 (RGB) channels, row-major interleaved.
#[derive(Debug, Clone)]
pub struct TileImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

/// Knobs for the standardization chain.
#[derive(Debug, Clone)]
pub struct PreprocessParams {
    pub clahe: ClaheParams,
    /// Gaussian smoothing SD applied before equalization.
    pub smooth_sd: f64,
    /// Edge-map components below this size are dropped.
    pub em_min_area: usize,
    /// Target mean neuropil intensity.
    pub i_r: f64,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        PreprocessParams {
            clahe: ClaheParams::default(),
            smooth_sd: 1.0,
            em_min_area: 50,
            i_r: I_R,
        }
    }
}

/// Everything downstream stages need from one tile.
#[derive(Debug, Clone)]
pub struct PreprocessOutput {
    /// Standardized intensity image, 0-255.
    pub i1: GrayMap,
    /// Gradient magnitude, rescaled 0-1.
    pub gm: GrayMap,
    /// Edge map.
    pub em: BinaryMask,
    /// Nissl substance map.
    pub ns: BinaryMask,
    /// Estimated neuropil mean of the equalized image.
    pub neuropil_mean_estimate: f64,
    /// 205 / estimate.
    pub correction_factor: f64,
}

/// Luma conversion with 0.299/0.587/0.114 weights; 1-channel input passes
/// through.
pub fn luma(tile: &TileImage) -> Result<GrayMap> {
    let n = tile.width * tile.height;
    if tile.data.len() != n * tile.channels {
        return Err(Error::Ingestion(format!(
            "tile buffer length {} != {}x{}x{}",
            tile.data.len(),
            tile.width,
            tile.height,
            tile.channels
        )));
    }
    let data = match tile.channels {
        1 => tile.data.iter().map(|&v| v as f64).collect(),
        3 => tile
            .data
            .chunks_exact(3)
            .map(|px| 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64)
            .collect(),
        c => {
            return Err(Error::Ingestion(format!(
                "unsupported channel count {c}, expected 1 or 3"
            )))
        }
    };
    GrayMap::from_vec(tile.width, tile.height, data, (0.0, 255.0))
}

/// Grayscale conversion, Gaussian smoothing, then adaptive equalization:
/// produces the equalized image the neuropil estimate is taken from.
pub fn to_gray_smooth_equalize(tile: &TileImage, params: &PreprocessParams) -> Result<GrayMap> {
    let gray = luma(tile)?;
    let k = gaussian_kernel(params.smooth_sd, side_for_sigma(params.smooth_sd))?;
    let smoothed = convolve(&gray, &k)?;
    clahe(&smoothed, params.clahe)
}

/// Mean of the two grey values where the smoothed histogram first drops to
/// 61% of its mode height, one on each side of the mode.
///
/// The 256-bin histogram is smoothed with a 5-bin moving average (in-range
/// window mean at the edges). If only one side crosses, that crossing is
/// returned alone; if neither does, the mode is degenerate.
pub fn estimate_neuropil_mean(i0: &GrayMap) -> Result<f64> {
    let hist = histogram_256(i0)?;
    let mut smooth = [0.0f64; HIST_BINS];
    for (b, s) in smooth.iter_mut().enumerate() {
        let lo = b.saturating_sub(2);
        let hi = (b + 2).min(HIST_BINS - 1);
        let sum: u64 = hist[lo..=hi].iter().sum();
        *s = sum as f64 / (hi - lo + 1) as f64;
    }
    let mode = smooth
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| a.partial_cmp(b).unwrap().then(ib.cmp(ia)))
        .map(|(b, _)| b)
        .unwrap();
    if smooth[mode] <= 0.0 {
        return Err(Error::ModeDegenerate);
    }
    let level = 0.61 * smooth[mode];
    let left = (0..mode).rev().find(|&b| smooth[b] <= level);
    let right = (mode + 1..HIST_BINS).find(|&b| smooth[b] <= level);
    match (left, right) {
        (Some(l), Some(r)) => Ok((l as f64 + r as f64) / 2.0),
        (Some(l), None) => Ok(l as f64),
        (None, Some(r)) => Ok(r as f64),
        (None, None) => Err(Error::ModeDegenerate),
    }
}

/// Scales intensities by i_r/i_n and clamps to 0-255.
pub fn standardize_to(i0: &GrayMap, i_n: f64, i_r: f64) -> Result<GrayMap> {
    if !(i_n > 0.0) {
        return Err(Error::invalid_parameter(format!(
            "neuropil mean must be positive, got {i_n}"
        )));
    }
    if !(i_r > 0.0) {
        return Err(Error::invalid_parameter(format!(
            "target neuropil intensity must be positive, got {i_r}"
        )));
    }
    let mut out = i0.clone();
    for v in out.data_mut().iter_mut() {
        *v = (*v * i_r / i_n).clamp(0.0, 255.0);
    }
    Ok(out)
}

/// Scales intensities by 205/i_n and clamps to 0-255.
pub fn standardize(i0: &GrayMap, i_n: f64) -> Result<GrayMap> {
    standardize_to(i0, i_n, I_R)
}

/// Gradient magnitude (0-1) and the edge map: triangle-thresholded
/// magnitude with small components dropped. A flat magnitude map yields an
/// empty edge map rather than an error.
pub fn gradient_and_edge_maps(i1: &GrayMap, em_min_area: usize) -> Result<(GrayMap, BinaryMask)> {
    let gm = gradient_magnitude(i1)?;
    let em = match triangle_threshold(&gm) {
        Ok(thr) => remove_small(&mask_at_or_above(&gm, thr), em_min_area),
        Err(Error::DegenerateHistogram) => BinaryMask::new(gm.width(), gm.height()),
        Err(e) => return Err(e),
    };
    Ok((gm, em))
}

/// Pixels below the Otsu threshold of the standardized image: stained
/// (dark) material.
pub fn nissl_substance_map(i1: &GrayMap) -> Result<BinaryMask> {
    Ok(mask_below(i1, otsu_threshold(i1)?))
}

/// Full standardization chain for one tile.
pub fn preprocess(tile: &TileImage, params: &PreprocessParams) -> Result<PreprocessOutput> {
    let i0 = to_gray_smooth_equalize(tile, params)?;
    let i_n = estimate_neuropil_mean(&i0)?;
    let i1 = standardize_to(&i0, i_n, params.i_r)?;
    let (gm, em) = gradient_and_edge_maps(&i1, params.em_min_area)?;
    let ns = nissl_substance_map(&i1)?;
    Ok(PreprocessOutput {
        i1,
        gm,
        em,
        ns,
        neuropil_mean_estimate: i_n,
        correction_factor: params.i_r / i_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_tile(channels: usize, px: &[u8]) -> TileImage {
        let (w, h) = (32, 32);
        let mut data = Vec::with_capacity(w * h * channels);
        for _ in 0..w * h {
            data.extend_from_slice(px);
        }
        TileImage {
            width: w,
            height: h,
            channels,
            data,
        }
    }

    /// Image whose 256-bin histogram follows the given per-bin counts.
    fn image_with_histogram(counts: &[(usize, usize)]) -> GrayMap {
        let total: usize = counts.iter().map(|&(_, c)| c).sum();
        let mut values = Vec::with_capacity(total);
        for &(bin, c) in counts {
            values.extend(std::iter::repeat(bin as f64).take(c));
        }
        let w = 64;
        let h = total.div_ceil(w);
        values.resize(w * h, counts[0].0 as f64);
        GrayMap::from_vec(w, h, values, (0.0, 255.0)).unwrap()
    }

    #[test]
    fn luma_weights_red_green_ratio() {
        let red = luma(&constant_tile(3, &[255, 0, 0])).unwrap();
        let green = luma(&constant_tile(3, &[0, 255, 0])).unwrap();
        let ratio = red.get(0, 0) / green.get(0, 0);
        assert!((ratio - 0.299 / 0.587).abs() < 1e-12);
    }

    #[test]
    fn luma_passes_gray_through() {
        let g = luma(&constant_tile(1, &[137])).unwrap();
        assert!(g.data().iter().all(|&v| v == 137.0));
    }

    #[test]
    fn luma_rejects_two_channel_input() {
        let t = constant_tile(2, &[1, 2]);
        assert!(matches!(luma(&t), Err(Error::Ingestion(_))));
    }

    #[test]
    fn constant_rgb_tile_stays_constant_through_equalization() {
        let out = to_gray_smooth_equalize(&constant_tile(3, &[100, 100, 100]), &PreprocessParams::default()).unwrap();
        let first = out.get(0, 0);
        assert!(out.data().iter().all(|&v| v == first));
    }

    #[test]
    fn neuropil_estimate_centers_on_symmetric_histogram() {
        let mut counts = Vec::new();
        for b in 0..HIST_BINS {
            let d = (b as f64 - 180.0) / 10.0;
            let c = (1000.0 * (-0.5 * d * d).exp()).round() as usize;
            if c > 0 {
                counts.push((b, c));
            }
        }
        let img = image_with_histogram(&counts);
        let i_n = estimate_neuropil_mean(&img).unwrap();
        assert!((i_n - 180.0).abs() <= 1.0, "i_n = {i_n}");
    }

    #[test]
    fn neuropil_estimate_falls_back_to_single_crossing() {
        // plateau at the top of the range: no right crossing exists
        let mut counts = Vec::new();
        for b in 200..=245 {
            counts.push((b, 3000));
        }
        for b in 246..=255 {
            counts.push((b, 10000));
        }
        let img = image_with_histogram(&counts);
        // smoothed mode plateau starts at bin 248; left crossing at 245
        assert_eq!(estimate_neuropil_mean(&img).unwrap(), 245.0);
    }

    #[test]
    fn standardize_is_identity_at_target_mean() {
        let img = GrayMap::from_fn_range(16, 16, (0.0, 255.0), |x, y| (x * y % 256) as f64);
        let out = standardize(&img, 205.0).unwrap();
        assert_eq!(out.data(), img.data());
    }

    #[test]
    fn standardize_doubles_and_clamps_at_half_mean() {
        let img = GrayMap::from_vec(2, 1, vec![100.0, 200.0], (0.0, 255.0)).unwrap();
        let out = standardize(&img, 102.5).unwrap();
        assert_eq!(out.get(0, 0), 200.0);
        assert_eq!(out.get(1, 0), 255.0);
    }

    #[test]
    fn standardize_example_value() {
        let img = GrayMap::filled(1, 1, 150.0, (0.0, 255.0));
        assert_eq!(standardize(&img, 250.0).unwrap().get(0, 0), 123.0);
    }

    #[test]
    fn standardize_self_consistency_restores_target() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        // unimodal background centered near 170
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let noise = Normal::new(170.0f64, 8.0).unwrap();
        let img = GrayMap::from_fn_range(128, 128, (0.0, 255.0), |_, _| {
            noise.sample(&mut rng).round().clamp(0.0, 255.0)
        });
        let i_n = estimate_neuropil_mean(&img).unwrap();
        let i1 = standardize(&img, i_n).unwrap();
        let i_n2 = estimate_neuropil_mean(&i1).unwrap();
        assert!((i_n2 - 205.0).abs() <= 2.0, "re-estimate {i_n2}");
    }

    #[test]
    fn flat_image_gives_zero_gradient_and_empty_edges() {
        let img = GrayMap::filled(48, 48, 128.0, (0.0, 255.0));
        let (gm, em) = gradient_and_edge_maps(&img, 50).unwrap();
        assert!(gm.data().iter().all(|&v| v == 0.0));
        assert_eq!(em.count(), 0);
    }

    #[test]
    fn step_edge_lands_in_edge_map() {
        let img = GrayMap::from_fn_range(64, 64, (0.0, 255.0), |x, _| {
            if x < 32 {
                50.0
            } else {
                200.0
            }
        });
        let (gm, em) = gradient_and_edge_maps(&img, 50).unwrap();
        // magnitude is maximal around the step column
        let peak_col = (0..64).max_by(|&a, &b| gm.get(a, 32).partial_cmp(&gm.get(b, 32)).unwrap()).unwrap();
        assert!((30..=34).contains(&peak_col), "peak at {peak_col}");
        assert!(em.get(peak_col, 32));
        // edge pixels only where gradient is positive
        for y in 0..64 {
            for x in 0..64 {
                if em.get(x, y) {
                    assert!(gm.get(x, y) > 0.0);
                }
            }
        }
    }

    #[test]
    fn small_edge_fragment_is_dropped_but_long_edge_kept() {
        // textured background raises the triangle threshold; a weak dot
        // then exceeds it over only a small patch while the strong step
        // edge forms a tall band
        let mut img = GrayMap::from_fn_range(64, 64, (0.0, 255.0), |x, y| {
            let noise = ((x * 31 + y * 57) % 21) as f64 - 10.0;
            if x >= 48 {
                60.0 + noise
            } else {
                200.0 + noise
            }
        });
        img.set(12, 12, 140.0);
        let (_, em_all) = gradient_and_edge_maps(&img, 1).unwrap();
        let (_, em) = gradient_and_edge_maps(&img, 50).unwrap();
        let near_dot = |m: &BinaryMask| {
            let mut c = 0;
            for y in 6..19_usize {
                for x in 6..19_usize {
                    if m.get(x, y) {
                        c += 1;
                    }
                }
            }
            c
        };
        let dot_px = near_dot(&em_all);
        assert!(dot_px > 0 && dot_px < 50, "dot fragment size {dot_px}");
        assert_eq!(near_dot(&em), 0);
        assert!(em.get(47, 32) || em.get(48, 32) || em.get(46, 32));
    }

    #[test]
    fn nissl_map_selects_dark_half() {
        let img = GrayMap::from_fn_range(16, 16, (0.0, 255.0), |_, y| {
            if y < 8 {
                50.0
            } else {
                200.0
            }
        });
        let ns = nissl_substance_map(&img).unwrap();
        assert_eq!(ns.count(), 128);
        assert!(ns.get(0, 0) && !ns.get(0, 12));
    }

    #[test]
    fn nissl_map_covers_dark_discs() {
        let mut img = GrayMap::filled(96, 96, 205.0, (0.0, 255.0));
        let centers = [(24.0, 24.0), (70.0, 30.0), (40.0, 70.0)];
        let mut disc_px = Vec::new();
        for y in 0..96_usize {
            for x in 0..96_usize {
                for &(cx, cy) in &centers {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    if d2 <= 100.0 {
                        img.set(x, y, 80.0);
                        disc_px.push((x, y));
                    }
                }
            }
        }
        let ns = nissl_substance_map(&img).unwrap();
        let covered = disc_px.iter().filter(|&&(x, y)| ns.get(x, y)).count();
        assert!(covered as f64 >= 0.95 * disc_px.len() as f64);
    }
}
