//! Sampled convolution kernels and direct spatial convolution.
//!
//! Convolution is exact (no FFT) so that responses are reproducible across
//! runs and platforms. Borders replicate the nearest edge pixel.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::GrayMap;

/// Dense convolution kernel with an explicit anchor.
#[derive(Debug, Clone)]
pub struct Kernel {
    width: usize,
    height: usize,
    data: Vec<f64>,
    anchor: (usize, usize),
}

impl Kernel {
    /// Wraps raw row-major weights; the anchor defaults to `((w-1)/2, (h-1)/2)`.
    ///
    /// For even sides this sits half a pixel off the geometric center.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::invalid_parameter(format!(
                "kernel data length {} != {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Kernel {
            width,
            height,
            data,
            anchor: ((width - 1) / 2, (height - 1) / 2),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Subtracts the mean weight so the kernel sums to zero.
    pub fn zero_mean(mut self) -> Self {
        let mean = self.sum() / self.data.len() as f64;
        for v in self.data.iter_mut() {
            *v -= mean;
        }
        self
    }

    /// Scales weights so the kernel sums to one.
    pub fn normalized(mut self) -> Self {
        let s = self.sum();
        if s != 0.0 {
            for v in self.data.iter_mut() {
                *v /= s;
            }
        }
        self
    }

    pub fn transposed(&self) -> Kernel {
        let mut data = vec![0.0; self.data.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                data[x * self.height + y] = self.data[y * self.width + x];
            }
        }
        Kernel {
            width: self.height,
            height: self.width,
            data,
            anchor: (self.anchor.1, self.anchor.0),
        }
    }
}

/// Smallest odd kernel side covering roughly three standard deviations.
pub fn side_for_sigma(sigma: f64) -> usize {
    let s = (6.0 * sigma + 1.0).ceil() as usize;
    if s % 2 == 0 {
        s + 1
    } else {
        s
    }
}

/// Sampled 2-D Gaussian on an odd `side` grid, normalized to unit sum.
pub fn gaussian_kernel(sigma: f64, side: usize) -> Result<Kernel> {
    if !(sigma > 0.0) {
        return Err(Error::invalid_parameter(format!(
            "gaussian sigma must be positive, got {sigma}"
        )));
    }
    if side == 0 || side % 2 == 0 {
        return Err(Error::invalid_parameter(format!(
            "gaussian kernel side must be odd, got {side}"
        )));
    }
    let c = (side - 1) as f64 / 2.0;
    let mut data = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let dx = x as f64 - c;
            let dy = y as f64 - c;
            data.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
        }
    }
    Ok(Kernel::new(side, side, data)?.normalized())
}

/// Sampled Laplacian-of-Gaussian, shifted to exact zero sum.
///
/// The plain sign convention is kept: the center weight is negative, so a
/// dark blob on a bright surround yields a positive response.
pub fn log_kernel(sigma: f64) -> Result<Kernel> {
    if !(sigma > 0.0) {
        return Err(Error::invalid_parameter(format!(
            "log sigma must be positive, got {sigma}"
        )));
    }
    let side = side_for_sigma(sigma);
    let c = (side - 1) as f64 / 2.0;
    let s2 = sigma * sigma;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * s2);
    let mut data = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let dx = x as f64 - c;
            let dy = y as f64 - c;
            let r2 = dx * dx + dy * dy;
            let g = norm * (-r2 / (2.0 * s2)).exp();
            data.push((r2 - 2.0 * s2) / (s2 * s2) * g);
        }
    }
    Ok(Kernel::new(side, side, data)?.zero_mean())
}

/// Sampled x/y first-derivative-of-Gaussian pair, 8x8 with SD 2.
///
/// The even side samples half-integer offsets -3.5..+3.5 about the
/// geometric center; the anchor sits at (3,3), half a pixel off. Both
/// kernels are shifted to zero sum; the y kernel transposes the x kernel.
pub fn dog_kernel_pair() -> (Kernel, Kernel) {
    let sigma = 2.0;
    let side = 8;
    let c = (side - 1) as f64 / 2.0;
    let s2 = sigma * sigma;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * s2 * s2);
    let mut data = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let dx = x as f64 - c;
            let dy = y as f64 - c;
            data.push(-dx * norm * (-(dx * dx + dy * dy) / (2.0 * s2)).exp());
        }
    }
    let kx = Kernel::new(side, side, data)
        .expect("fixed 8x8 dimensions")
        .zero_mean();
    let ky = kx.transposed();
    (kx, ky)
}

/// True 2-D convolution with replicate border padding.
///
/// The output keeps the input's declared range; sign-changing kernels may
/// push values outside it, so callers rescale when a bounded map is needed.
pub fn convolve(img: &GrayMap, k: &Kernel) -> Result<GrayMap> {
    let (w, h) = (img.width(), img.height());
    if k.width > w || k.height > h {
        return Err(Error::KernelExceedsImage {
            side: k.width.max(k.height),
            width: w,
            height: h,
        });
    }
    let (ax, ay) = (k.anchor.0 as isize, k.anchor.1 as isize);
    let (kw, kh) = (k.width as isize, k.height as isize);
    let src = img.data();
    let kd = &k.data;

    let mut out = GrayMap::filled(w, h, 0.0, img.range());
    // x - (kx - ax) stays in-bounds iff kw-1-ax <= x <= w-1-ax; same for y.
    let x_lo = (kw - 1 - ax) as usize;
    let x_hi = (w as isize - 1 - ax) as usize;
    let y_lo = (kh - 1 - ay) as usize;
    let y_hi = (h as isize - 1 - ay) as usize;

    out.data_mut()
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| {
            let yi = y as isize;
            let interior_row = y >= y_lo && y <= y_hi;
            for (x, slot) in row.iter_mut().enumerate() {
                let xi = x as isize;
                let mut acc = 0.0;
                if interior_row && x >= x_lo && x <= x_hi {
                    for ky in 0..kh {
                        let sy = (yi - (ky - ay)) as usize;
                        let srow = &src[sy * w..(sy + 1) * w];
                        let krow = &kd[(ky * kw) as usize..((ky + 1) * kw) as usize];
                        for (kx, kv) in krow.iter().enumerate() {
                            acc += kv * srow[(xi - (kx as isize - ax)) as usize];
                        }
                    }
                } else {
                    for ky in 0..kh {
                        let sy = (yi - (ky - ay)).clamp(0, h as isize - 1) as usize;
                        for kx in 0..kw {
                            let sx = (xi - (kx - ax)).clamp(0, w as isize - 1) as usize;
                            acc += kd[(ky * kw + kx) as usize] * src[sy * w + sx];
                        }
                    }
                }
                *slot = acc;
            }
        });
    Ok(out)
}
