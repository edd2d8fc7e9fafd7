//! Raster primitives: real-valued maps, binary masks, and label maps.
//!
//! All rasters are row-major with `(x, y)` addressing, `y` down. A `GrayMap`
//! carries an explicit declared value range so that histogram-based
//! operations (thresholding, equalization) know their domain without
//! rescanning the data.

use crate::error::{Error, Result};

/// Single-channel real-valued raster with a declared `(min, max)` range.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
    range: (f64, f64),
}

impl GrayMap {
    /// Creates a map filled with `value`, declared range `range`.
    pub fn filled(width: usize, height: usize, value: f64, range: (f64, f64)) -> Self {
        debug_assert!(range.0 <= range.1);
        GrayMap {
            width,
            height,
            data: vec![value; width * height],
            range,
        }
    }

    /// Builds a map by evaluating `f` at every pixel.
    pub fn from_fn_range(
        width: usize,
        height: usize,
        range: (f64, f64),
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let mut m = GrayMap::filled(width, height, 0.0, range);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = f(x, y);
            }
        }
        m
    }

    /// Wraps raw row-major data. Fails if the length does not match.
    pub fn from_vec(width: usize, height: usize, data: Vec<f64>, range: (f64, f64)) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid_parameter(format!(
                "data length {} != {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(GrayMap {
            width,
            height,
            data,
            range,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn range(&self) -> (f64, f64) {
        self.range
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Clamped accessor: coordinates outside the raster replicate the border.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.data[cy * self.width + cx]
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Affinely maps the actual `[min, max]` of the data onto `range`.
    ///
    /// A constant map (max == min) maps everywhere to `range.0`.
    pub fn rescaled_to(&self, range: (f64, f64)) -> GrayMap {
        let lo = self.min_value();
        let hi = self.max_value();
        let mut out = self.clone();
        if hi > lo {
            let scale = (range.1 - range.0) / (hi - lo);
            for v in out.data.iter_mut() {
                *v = range.0 + (*v - lo) * scale;
                *v = v.clamp(range.0, range.1);
            }
        } else {
            for v in out.data.iter_mut() {
                *v = range.0;
            }
        }
        out.range = range;
        debug_assert!(out.values_in_range());
        out
    }

    /// Re-declares the range as the actual (min, max) of the data.
    pub fn with_actual_range(&self) -> GrayMap {
        let mut out = self.clone();
        out.range = (self.min_value(), self.max_value());
        out
    }

    /// Clamps every value into the declared range.
    pub fn clamp_to_range(&mut self) {
        let (lo, hi) = self.range;
        for v in self.data.iter_mut() {
            *v = v.clamp(lo, hi);
        }
    }

    /// Pointwise complement within the declared range: `max - v + min`.
    pub fn complement(&self) -> GrayMap {
        let (lo, hi) = self.range;
        let mut out = self.clone();
        for v in out.data.iter_mut() {
            *v = hi - *v + lo;
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn values_in_range(&self) -> bool {
        let (lo, hi) = self.range;
        self.data.iter().all(|v| *v >= lo && *v <= hi)
    }

    pub fn same_dims(&self, other: &GrayMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_dims(&self, width: usize, height: usize) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::DimensionMismatch {
                expected_w: width,
                expected_h: height,
                actual_w: self.width,
                actual_h: self.height,
            });
        }
        Ok(())
    }
}

/// Boolean raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid_parameter(format!(
                "data length {} != {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(BinaryMask {
            width,
            height,
            data,
        })
    }

    /// Builds a mask by evaluating `pred` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut pred: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = BinaryMask::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = pred(x, y);
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    pub fn is_all_false(&self) -> bool {
        self.data.iter().all(|b| !*b)
    }

    pub fn complement(&self) -> BinaryMask {
        let mut out = self.clone();
        for b in out.data.iter_mut() {
            *b = !*b;
        }
        out
    }

    pub fn intersect(&self, other: &BinaryMask) -> BinaryMask {
        debug_assert!(self.same_dims(other));
        let mut out = self.clone();
        for (b, o) in out.data.iter_mut().zip(other.data.iter()) {
            *b = *b && *o;
        }
        out
    }

    pub fn union(&self, other: &BinaryMask) -> BinaryMask {
        debug_assert!(self.same_dims(other));
        let mut out = self.clone();
        for (b, o) in out.data.iter_mut().zip(other.data.iter()) {
            *b = *b || *o;
        }
        out
    }

    pub fn same_dims(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// True pixels as `(x, y)` in raster order.
    pub fn true_pixels(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.data[y * self.width + x] {
                    out.push((x, y));
                }
            }
        }
        out
    }

    /// Interprets the mask as a 0/1 gray map (declared range 0-1).
    pub fn to_graymap(&self) -> GrayMap {
        let data = self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        GrayMap::from_vec(self.width, self.height, data, (0.0, 1.0)).expect("same length")
    }
}

/// Non-negative integer raster; 0 is reserved for background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    data: Vec<u32>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize) -> Self {
        LabelMap {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<u32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid_parameter(format!(
                "data length {} != {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(LabelMap {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u32) {
        self.data[y * self.width + x] = v;
    }

    pub fn max_label(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Distinct nonzero labels in ascending order.
    pub fn labels(&self) -> Vec<u32> {
        let mut seen = vec![false; self.max_label() as usize + 1];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (1..seen.len() as u32).filter(|&l| seen[l as usize]).collect()
    }

    /// Pixel count per label, indexed by label value (index 0 = background).
    pub fn areas(&self) -> Vec<usize> {
        let mut areas = vec![0usize; self.max_label() as usize + 1];
        for &v in &self.data {
            areas[v as usize] += 1;
        }
        areas
    }

    /// Renumbers nonzero labels to `1..=K` preserving their relative order.
    pub fn compact(&mut self) {
        let max = self.max_label() as usize;
        let mut remap = vec![0u32; max + 1];
        let mut next = 0u32;
        for &v in &self.data {
            if v != 0 && remap[v as usize] == 0 {
                // first-seen order is raster order, but we want label order;
                // mark presence first, assign after
                remap[v as usize] = u32::MAX;
            }
        }
        for (label, slot) in remap.iter_mut().enumerate().skip(1) {
            if *slot == u32::MAX {
                next += 1;
                *slot = next;
                let _ = label;
            }
        }
        for v in self.data.iter_mut() {
            if *v != 0 {
                *v = remap[*v as usize];
            }
        }
    }

    /// Mask of pixels carrying `label`.
    pub fn mask_of(&self, label: u32) -> BinaryMask {
        let mut m = BinaryMask::new(self.width, self.height);
        for (i, &v) in self.data.iter().enumerate() {
            if v == label {
                m.data[i] = true;
            }
        }
        m
    }

    /// Mask of all nonzero pixels.
    pub fn foreground(&self) -> BinaryMask {
        let mut m = BinaryMask::new(self.width, self.height);
        for (i, &v) in self.data.iter().enumerate() {
            if v != 0 {
                m.data[i] = true;
            }
        }
        m
    }

    pub fn same_dims(&self, other: &LabelMap) -> bool {
        self.width == other.width && self.height == other.height
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rescale_maps_extremes_onto_target_range() {
        let g = GrayMap::from_vec(2, 2, vec![10.0, 20.0, 30.0, 40.0], (0.0, 255.0)).unwrap();
        let r = g.rescaled_to((0.0, 1.0));
        assert_eq!(r.get(0, 0), 0.0);
        assert_eq!(r.get(1, 1), 1.0);
        assert!((r.get(1, 0) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.range(), (0.0, 1.0));
    }

    #[test]
    fn rescale_constant_map_collapses_to_range_min() {
        let g = GrayMap::filled(3, 3, 7.0, (0.0, 255.0));
        let r = g.rescaled_to((0.0, 255.0));
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn complement_reflects_about_range() {
        let g = GrayMap::from_vec(1, 2, vec![0.0, 255.0], (0.0, 255.0)).unwrap();
        let c = g.complement();
        assert_eq!(c.get(0, 0), 255.0);
        assert_eq!(c.get(0, 1), 0.0);
    }

    #[test]
    fn compact_renumbers_in_label_order() {
        let mut lb = LabelMap::from_vec(2, 2, vec![0, 7, 3, 7]).unwrap();
        lb.compact();
        assert_eq!(lb.data(), &[0, 2, 1, 2]);
        assert_eq!(lb.labels(), vec![1, 2]);
    }

    #[test]
    fn label_areas_count_pixels() {
        let lb = LabelMap::from_vec(2, 2, vec![0, 1, 1, 2]).unwrap();
        assert_eq!(lb.areas(), vec![1, 2, 1]);
    }
}
