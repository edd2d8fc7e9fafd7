//! Multi-scale blob analysis: scale-normalized LoG responses, combined
//! response maps, extended h-maxima, foreground extraction, and watershed
//! marker detection.

use crate::error::{Error, Result};
use crate::kernel::{convolve, log_kernel};
use crate::morphology::{
    binary_cleanup, connected_components, dilate_square, reconstruct_binary, reconstruct_gray,
    regional_maxima, CleanupOp, Conn,
};
use crate::raster::{BinaryMask, GrayMap};
use crate::threshold::{mask_at_or_above, triangle_threshold};

/// Scale grid and normalization exponent for one response map.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSpaceConfig {
    pub sigmas: Vec<f64>,
    pub gamma: f64,
}

impl ScaleSpaceConfig {
    pub fn new(sigmas: Vec<f64>, gamma: f64) -> Result<Self> {
        if sigmas.is_empty() || sigmas.windows(2).any(|w| w[1] <= w[0]) || sigmas[0] <= 0.0 {
            return Err(Error::invalid_parameter(
                "sigmas must be strictly increasing and positive".to_string(),
            ));
        }
        Ok(ScaleSpaceConfig { sigmas, gamma })
    }

    /// Foreground preset: sigma 5..=14, gamma 1.
    pub fn foreground() -> Self {
        ScaleSpaceConfig {
            sigmas: (5..=14).map(f64::from).collect(),
            gamma: 1.0,
        }
    }

    /// Marker preset: sigma 2..=14, gamma 2.
    pub fn marker() -> Self {
        ScaleSpaceConfig {
            sigmas: (2..=14).map(f64::from).collect(),
            gamma: 2.0,
        }
    }
}

/// Watershed seed points, all inside the image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkerSet {
    pub points: Vec<(usize, usize)>,
    pub width: usize,
    pub height: usize,
}

/// Scale-normalized blob response sigma^gamma * (LoG_sigma * img). Dark
/// blobs on a bright background respond positively at their centers.
pub fn scale_response(img: &GrayMap, sigma: f64, gamma: f64) -> Result<GrayMap> {
    let k = log_kernel(sigma)?;
    let mut r = convolve(img, &k)?;
    let s = sigma.powf(gamma);
    for v in r.data_mut().iter_mut() {
        *v *= s;
    }
    Ok(r)
}

/// Pointwise sum of scale responses, accumulated in grid order.
pub fn combined_map(img: &GrayMap, cfg: &ScaleSpaceConfig) -> Result<GrayMap> {
    let mut acc = GrayMap::filled(img.width(), img.height(), 0.0, img.range());
    for &sigma in &cfg.sigmas {
        let r = scale_response(img, sigma, cfg.gamma)?;
        for (a, v) in acc.data_mut().iter_mut().zip(r.data()) {
            *a += v;
        }
    }
    Ok(acc)
}

/// Extended h-maxima: regional maxima of the h-maxima transform
/// (reconstruction of img−h under img).
///
/// A component spanning the whole image means no prominence ≥ h exists
/// anywhere (flat or low-range input) and yields an empty mask.
pub fn extended_hmaxima(img: &GrayMap, h: f64, conn: Conn) -> Result<BinaryMask> {
    if !(h > 0.0) {
        return Err(Error::invalid_parameter(format!(
            "h must be positive, got {h}"
        )));
    }
    let mut marker = img.clone();
    for v in marker.data_mut().iter_mut() {
        *v -= h;
    }
    let hmax = reconstruct_gray(&marker, img, conn)?;
    let emax = regional_maxima(&hmax, conn);
    if emax.count() == img.len() {
        return Ok(BinaryMask::new(img.width(), img.height()));
    }
    Ok(emax)
}

/// Foreground mask: the cell-bright combination of blob response and
/// inverted intensity, thresholded, cleaned, and gated by edge and Nissl
/// support.
///
/// `i2` is the median-filtered standardized image. A degenerate threshold
/// yields an empty mask rather than an error.
pub fn extract_foreground(
    i2: &GrayMap,
    em: &BinaryMask,
    ns: &BinaryMask,
    cfg: &ScaleSpaceConfig,
    min_area: usize,
) -> Result<BinaryMask> {
    let (w, h) = (i2.width(), i2.height());
    let r_fg = combined_map(i2, cfg)?.rescaled_to((0.0, 255.0));
    let i2c = i2.complement();

    // normalize the response's mean onto the inverted image's mean so the
    // two summands weigh comparably
    let mut s = i2c.clone();
    let r_mean = r_fg.mean();
    if r_mean > 0.0 {
        let factor = i2c.mean() / r_mean;
        for (sv, rv) in s.data_mut().iter_mut().zip(r_fg.data()) {
            *sv += rv * factor;
        }
    }
    let s = s.with_actual_range();

    let thr = match triangle_threshold(&s) {
        Ok(t) => t,
        Err(Error::DegenerateHistogram) | Err(Error::InvalidParameter(_)) => {
            return Ok(BinaryMask::new(w, h))
        }
        Err(e) => return Err(e),
    };
    let raw = mask_at_or_above(&s, thr);
    let cleaned = binary_cleanup(
        &raw,
        &[
            CleanupOp::FillHoles,
            CleanupOp::Open,
            CleanupOp::Close,
            CleanupOp::RemoveSmall(min_area),
            CleanupOp::RemoveHbreak,
            CleanupOp::RemoveSpur,
        ],
    );

    // keep components with edge support, then Nissl support
    let edge_gated = reconstruct_binary(&cleaned.intersect(em), &cleaned, Conn::Eight)?;
    let nissl_gated = reconstruct_binary(&edge_gated.intersect(ns), &edge_gated, Conn::Eight)?;
    Ok(nissl_gated)
}

/// Markers: centroids of extended-h-maxima components of the marker-scale
/// response, pruned to the foreground and away from edges.
pub fn detect_markers(
    i1: &GrayMap,
    fg: &BinaryMask,
    em: &BinaryMask,
    cfg: &ScaleSpaceConfig,
    h: f64,
) -> Result<MarkerSet> {
    let (w, hh) = (i1.width(), i1.height());
    let r_mk = combined_map(i1, cfg)?.rescaled_to((0.0, 255.0));
    let peaks = extended_hmaxima(&r_mk, h, Conn::Eight)?;
    let lb = connected_components(&peaks, Conn::Eight);
    let n = lb.max_label() as usize;
    if n == 0 {
        return Ok(MarkerSet {
            points: Vec::new(),
            width: w,
            height: hh,
        });
    }

    let mut sums = vec![(0.0f64, 0.0f64, 0usize); n + 1];
    for y in 0..hh {
        for x in 0..w {
            let l = lb.get(x, y) as usize;
            if l != 0 {
                sums[l].0 += x as f64;
                sums[l].1 += y as f64;
                sums[l].2 += 1;
            }
        }
    }

    let near_edge = dilate_square(em, 2);
    let mut points = Vec::new();
    for (label, &(sx, sy, c)) in sums.iter().enumerate().skip(1) {
        let cx = (sx / c as f64).round() as usize;
        let cy = (sy / c as f64).round() as usize;
        let (mut px, mut py) = (cx.min(w - 1), cy.min(hh - 1));
        if lb.get(px, py) != label as u32 {
            // centroid fell outside its component: snap to the nearest
            // component pixel (first in raster order on ties)
            let mut best = usize::MAX;
            for y in 0..hh {
                for x in 0..w {
                    if lb.get(x, y) == label as u32 {
                        let d = x.abs_diff(px).pow(2) + y.abs_diff(py).pow(2);
                        if d < best {
                            best = d;
                            (px, py) = (x, y);
                        }
                    }
                }
            }
        }
        if fg.get(px, py) && !near_edge.get(px, py) {
            points.push((px, py));
        }
    }
    Ok(MarkerSet {
        points,
        width: w,
        height: hh,
    })
}
