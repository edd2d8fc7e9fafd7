//! Global thresholding: Otsu's between-class variance and the triangle rule.
//!
//! Both operate on a fixed 256-bin histogram over a map's declared range.
//! Bin-level entry points are exposed so callers can reason about (and test
//! against) exact bin arithmetic; image-level wrappers convert the chosen
//! bin to a real threshold with the convention `class 0 = { v < threshold }`.

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, GrayMap};

pub const HIST_BINS: usize = 256;

/// 256-bin histogram over the declared range; the top bin includes the max.
pub fn histogram_256(img: &GrayMap) -> Result<[u64; HIST_BINS]> {
    let (lo, hi) = img.range();
    if !(hi > lo) {
        return Err(Error::invalid_parameter(format!(
            "histogram needs a non-degenerate declared range, got ({lo}, {hi})"
        )));
    }
    let mut hist = [0u64; HIST_BINS];
    let scale = HIST_BINS as f64 / (hi - lo);
    for &v in img.data() {
        let b = (((v - lo) * scale).floor() as i64).clamp(0, HIST_BINS as i64 - 1);
        hist[b as usize] += 1;
    }
    Ok(hist)
}

/// Upper edge of bin `t`: values strictly below it fall in bins `0..=t`.
pub fn bin_upper_edge(range: (f64, f64), t: usize) -> f64 {
    let (lo, hi) = range;
    lo + (t as f64 + 1.0) * (hi - lo) / HIST_BINS as f64
}

/// Otsu split: bin `t` maximizing between-class variance for the partition
/// `0..=t` vs `t+1..`. Ties resolve to the lowest bin. Requires at least
/// two nonempty bins.
pub fn otsu_bin(hist: &[u64; HIST_BINS]) -> Result<usize> {
    let total: u64 = hist.iter().sum();
    let total_sum: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::DegenerateHistogram);
    }
    let n = total as f64;
    let mut cum0 = 0.0;
    let mut sum0 = 0.0;
    let mut best = None;
    let mut best_var = f64::NEG_INFINITY;
    for t in 0..HIST_BINS - 1 {
        cum0 += hist[t] as f64;
        sum0 += t as f64 * hist[t] as f64;
        if cum0 == 0.0 {
            continue;
        }
        if cum0 == n {
            break;
        }
        let mu0 = sum0 / cum0;
        let mu1 = (total_sum - sum0) / (n - cum0);
        let var = cum0 * (n - cum0) * (mu0 - mu1) * (mu0 - mu1);
        if var > best_var {
            best_var = var;
            best = Some(t);
        }
    }
    best.ok_or(Error::DegenerateHistogram)
}

/// Triangle split: the bin between the histogram peak and the tail end that
/// lies farthest from the peak-to-tail chord.
///
/// The side with the longer peak-to-extreme span is used (right on ties),
/// the tail point sits one bin past the last nonzero bin at height zero,
/// and ties resolve to the lowest bin.
pub fn triangle_bin(hist: &[u64; HIST_BINS]) -> Result<usize> {
    let peak = hist
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| a.cmp(b).then(ib.cmp(ia)))
        .map(|(i, _)| i)
        .unwrap();
    if hist[peak] == 0 {
        return Err(Error::DegenerateHistogram);
    }
    let lmost = hist.iter().position(|&c| c > 0).unwrap();
    let rmost = hist.iter().rposition(|&c| c > 0).unwrap();
    let (tail, lo_c, hi_c) = if rmost - peak >= peak - lmost {
        let tail = (rmost + 1).min(HIST_BINS - 1);
        (tail, peak + 1, tail.saturating_sub(1))
    } else {
        let tail = lmost.saturating_sub(1);
        (tail, tail + 1, peak.saturating_sub(1))
    };
    if lo_c > hi_c || (lo_c..=hi_c).all(|c| c == peak || c == tail) {
        return Err(Error::DegenerateHistogram);
    }
    // Perpendicular distance to the chord is |cross| / |chord|; the chord
    // length is shared by every candidate so comparing |cross| suffices,
    // and with integer counts the products below are exact in f64.
    let px = peak as f64;
    let py = hist[peak] as f64;
    let tx = tail as f64;
    let (mut best, mut best_cross) = (None, f64::NEG_INFINITY);
    let mut consider = |c: usize| {
        let cross = ((tx - px) * (hist[c] as f64 - py) - (c as f64 - px) * (0.0 - py)).abs();
        if cross > best_cross {
            best_cross = cross;
            best = Some(c);
        }
    };
    if tail >= peak {
        for c in peak + 1..tail {
            consider(c);
        }
    } else {
        for c in tail + 1..peak {
            consider(c);
        }
    }
    best.ok_or(Error::DegenerateHistogram)
}

/// Otsu threshold in image units; `v < threshold` is the dark class.
pub fn otsu_threshold(img: &GrayMap) -> Result<f64> {
    let hist = histogram_256(img)?;
    Ok(bin_upper_edge(img.range(), otsu_bin(&hist)?))
}

/// Triangle threshold in image units; `v < threshold` is the low class.
pub fn triangle_threshold(img: &GrayMap) -> Result<f64> {
    let hist = histogram_256(img)?;
    Ok(bin_upper_edge(img.range(), triangle_bin(&hist)?))
}

/// Pixels strictly below the threshold.
pub fn mask_below(img: &GrayMap, thr: f64) -> BinaryMask {
    BinaryMask::from_fn(img.width(), img.height(), |x, y| img.get(x, y) < thr)
}

/// Pixels at or above the threshold.
pub fn mask_at_or_above(img: &GrayMap, thr: f64) -> BinaryMask {
    BinaryMask::from_fn(img.width(), img.height(), |x, y| img.get(x, y) >= thr)
}
