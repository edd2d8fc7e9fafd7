//! Synthetic annotated tiles: dark elliptical somata on a bright, noisy
//! neuropil field, with a controllable fraction of cells laid down in
//! touching clusters. Same seed, same bytes.

use crate::error::{Error, Result};
use crate::raster::{GrayMap, LabelMap};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Generation recipe. Ranges are inclusive; `cluster_prob` is the chance
/// that a placement round opens a touching cluster of 2 to 10 cells rather
/// than a lone cell.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub cells: (usize, usize),
    pub radius: (f64, f64),
    pub axis_ratio: (f64, f64),
    pub cluster_prob: f64,
    pub cell_intensity: (f64, f64),
    pub neuropil_intensity: (f64, f64),
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> SynthSpec {
        SynthSpec {
            width: 256,
            height: 256,
            cells: (25, 35),
            radius: (7.0, 11.0),
            axis_ratio: (0.65, 1.0),
            cluster_prob: 0.5,
            cell_intensity: (60.0, 110.0),
            neuropil_intensity: (198.0, 212.0),
            noise_sd: 5.0,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 32 || self.height < 32 {
            return Err(Error::invalid_parameter("tile must be at least 32x32"));
        }
        if self.cells.0 > self.cells.1 {
            return Err(Error::invalid_parameter("cell count range is empty"));
        }
        if !(self.radius.0 > 0.0 && self.radius.0 <= self.radius.1) {
            return Err(Error::invalid_parameter("radius range is empty or nonpositive"));
        }
        if !(self.axis_ratio.0 > 0.0
            && self.axis_ratio.0 <= self.axis_ratio.1
            && self.axis_ratio.1 <= 1.0)
        {
            return Err(Error::invalid_parameter("axis ratio range must lie in (0,1]"));
        }
        if !(0.0..=1.0).contains(&self.cluster_prob) {
            return Err(Error::invalid_parameter("cluster probability must lie in [0,1]"));
        }
        if self.cell_intensity.0 > self.cell_intensity.1
            || self.neuropil_intensity.0 > self.neuropil_intensity.1
        {
            return Err(Error::invalid_parameter("intensity range is empty"));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::invalid_parameter("noise SD must be nonnegative"));
        }
        let margin = 2.0 * (self.radius.1 + 2.0);
        if margin >= self.width.min(self.height) as f64 {
            return Err(Error::invalid_parameter("largest cell cannot fit in the tile"));
        }
        Ok(())
    }
}

struct Cell {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
    group: usize,
    base: f64,
    grad: f64,
}

impl Cell {
    /// Distance from center to the boundary along global direction `phi`.
    fn support(&self, phi: f64) -> f64 {
        let psi = phi - self.theta;
        self.a * self.b / ((self.b * psi.cos()).hypot(self.a * psi.sin()))
    }

    fn contains(&self, x: f64, y: f64) -> Option<f64> {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * self.theta.cos() + dy * self.theta.sin()) / self.a;
        let v = (-dx * self.theta.sin() + dy * self.theta.cos()) / self.b;
        let rho2 = u * u + v * v;
        (rho2 <= 1.0).then(|| rho2.sqrt())
    }
}

const PLACEMENT_TRIES: usize = 200;

fn draw_shape(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    let a = rng.random_range(spec.radius.0..=spec.radius.1);
    let ratio = rng.random_range(spec.axis_ratio.0..=spec.axis_ratio.1);
    let theta = rng.random_range(0.0..std::f64::consts::PI);
    (a, a * ratio, theta)
}

/// Different clusters must stay clear of each other so lone cells come out
/// as separate instances.
fn clear_of_other_groups(cells: &[Cell], group: usize, cx: f64, cy: f64, a: f64) -> bool {
    cells.iter().all(|c| {
        c.group == group || (c.cx - cx).hypot(c.cy - cy) >= c.a + a + 3.0
    })
}

/// Renders a tile and its instance labels. Overlapping cluster members are
/// resolved in favor of the most recently drawn cell, in both the image and
/// the ground truth.
pub fn synth_generate(spec: &SynthSpec) -> Result<(GrayMap, LabelMap)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = rng.random_range(spec.cells.0..=spec.cells.1);
    let mut cells: Vec<Cell> = Vec::with_capacity(n);
    let mut group = 0;
    while cells.len() < n {
        let remaining = n - cells.len();
        let cluster = remaining >= 2 && rng.random_bool(spec.cluster_prob);
        let size = if cluster {
            rng.random_range(2..=10usize).min(remaining)
        } else {
            1
        };
        group += 1;
        let anchor_idx = cells.len();
        let mut placed_anchor = false;
        for _ in 0..PLACEMENT_TRIES {
            let (a, b, theta) = draw_shape(spec, &mut rng);
            let m = a + 2.0;
            let cx = rng.random_range(m..spec.width as f64 - m);
            let cy = rng.random_range(m..spec.height as f64 - m);
            if clear_of_other_groups(&cells, group, cx, cy, a) {
                let base = rng.random_range(spec.cell_intensity.0..=spec.cell_intensity.1);
                let grad = rng.random_range(5.0..15.0);
                cells.push(Cell { cx, cy, a, b, theta, group, base, grad });
                placed_anchor = true;
                break;
            }
        }
        if !placed_anchor {
            return Err(Error::CannotPlaceCells { placed: cells.len(), requested: n });
        }
        for _ in 1..size {
            let mut placed = false;
            for _ in 0..PLACEMENT_TRIES {
                let buddy = rng.random_range(anchor_idx..cells.len());
                let (a, b, theta) = draw_shape(spec, &mut rng);
                let phi = rng.random_range(0.0..std::f64::consts::TAU);
                let candidate = Cell {
                    cx: 0.0,
                    cy: 0.0,
                    a,
                    b,
                    theta,
                    group,
                    base: 0.0,
                    grad: 0.0,
                };
                // pull centers together so the two rims overlap by >1 px
                let d = (cells[buddy].support(phi) + candidate.support(phi + std::f64::consts::PI))
                    * rng.random_range(0.70..0.85);
                let cx = cells[buddy].cx + d * phi.cos();
                let cy = cells[buddy].cy + d * phi.sin();
                let m = a + 2.0;
                let inside = cx >= m
                    && cy >= m
                    && cx < spec.width as f64 - m
                    && cy < spec.height as f64 - m;
                if inside && clear_of_other_groups(&cells, group, cx, cy, a) {
                    let base = rng.random_range(spec.cell_intensity.0..=spec.cell_intensity.1);
                    let grad = rng.random_range(5.0..15.0);
                    cells.push(Cell { cx, cy, a, b, theta, group, base, grad });
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(Error::CannotPlaceCells { placed: cells.len(), requested: n });
            }
        }
    }

    let neuropil = rng.random_range(spec.neuropil_intensity.0..=spec.neuropil_intensity.1);
    let mut tile = GrayMap::filled(spec.width, spec.height, neuropil, (0.0, 255.0));
    let mut gt = LabelMap::new(spec.width, spec.height);
    for (k, c) in cells.iter().enumerate() {
        let label = k as u32 + 1;
        let r = c.a.ceil() as isize + 1;
        let (icx, icy) = (c.cx.round() as isize, c.cy.round() as isize);
        for y in (icy - r).max(0)..=(icy + r).min(spec.height as isize - 1) {
            for x in (icx - r).max(0)..=(icx + r).min(spec.width as isize - 1) {
                if let Some(rho) = c.contains(x as f64, y as f64) {
                    gt.set(x as usize, y as usize, label);
                    tile.set(x as usize, y as usize, c.base + c.grad * (rho - 0.5));
                }
            }
        }
    }
    let normal = Normal::new(0.0f64, spec.noise_sd.max(f64::MIN_POSITIVE)).map_err(|_| {
        Error::invalid_parameter("noise SD rejected by the sampler")
    })?;
    if spec.noise_sd > 0.0 {
        for v in tile.data_mut() {
            *v = (*v + normal.sample(&mut rng)).clamp(0.0, 255.0);
        }
    }
    Ok((tile, gt))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adjacency_partners(gt: &LabelMap, label: u32) -> usize {
        let mut partners = std::collections::BTreeSet::new();
        for y in 0..gt.height() {
            for x in 0..gt.width() {
                if gt.get(x, y) != label {
                    continue;
                }
                for (dx, dy) in [(0isize, 1isize), (1, 0), (0, -1), (-1, 0)] {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= gt.width() as isize || ny >= gt.height() as isize {
                        continue;
                    }
                    let l = gt.get(nx as usize, ny as usize);
                    if l != 0 && l != label {
                        partners.insert(l);
                    }
                }
            }
        }
        partners.len()
    }

    #[test]
    fn unclustered_count_is_exact_and_cells_are_apart() {
        let spec = SynthSpec {
            cells: (5, 5),
            cluster_prob: 0.0,
            seed: 3,
            ..SynthSpec::default()
        };
        let (_, gt) = synth_generate(&spec).unwrap();
        assert_eq!(gt.labels(), vec![1, 2, 3, 4, 5]);
        for l in 1..=5 {
            assert_eq!(adjacency_partners(&gt, l), 0);
        }
    }

    #[test]
    fn same_seed_reproduces_the_tile_exactly() {
        let spec = SynthSpec::default();
        let (t1, g1) = synth_generate(&spec).unwrap();
        let (t2, g2) = synth_generate(&spec).unwrap();
        assert_eq!(t1.data(), t2.data());
        assert_eq!(g1.data(), g2.data());
    }

    #[test]
    fn different_seeds_differ() {
        let a = synth_generate(&SynthSpec { seed: 1, ..SynthSpec::default() }).unwrap();
        let b = synth_generate(&SynthSpec { seed: 2, ..SynthSpec::default() }).unwrap();
        assert_ne!(a.1.data(), b.1.data());
    }

    #[test]
    fn full_clustering_makes_every_cell_touch_another() {
        let spec = SynthSpec {
            cells: (6, 10),
            cluster_prob: 1.0,
            radius: (8.0, 12.0),
            seed: 11,
            ..SynthSpec::default()
        };
        let (_, gt) = synth_generate(&spec).unwrap();
        let labels = gt.labels();
        assert!(labels.len() >= 6);
        for l in labels {
            assert!(adjacency_partners(&gt, l) >= 1, "label {l} is isolated");
        }
    }

    #[test]
    fn empty_radius_range_is_rejected() {
        let spec = SynthSpec { radius: (10.0, 5.0), ..SynthSpec::default() };
        assert!(synth_generate(&spec).is_err());
    }

    #[test]
    fn overfull_tile_reports_placement_failure() {
        let spec = SynthSpec {
            width: 64,
            height: 64,
            cells: (60, 60),
            radius: (9.0, 11.0),
            cluster_prob: 0.0,
            seed: 5,
            ..SynthSpec::default()
        };
        match synth_generate(&spec) {
            Err(Error::CannotPlaceCells { placed, requested }) => {
                assert!(placed < requested);
                assert_eq!(requested, 60);
            }
            other => panic!("expected placement failure, got {other:?}"),
        }
    }

    #[test]
    fn cells_are_darker_than_the_neuropil() {
        let (tile, gt) = synth_generate(&SynthSpec::default()).unwrap();
        let mut cell_sum = 0.0;
        let mut cell_n = 0usize;
        let mut bg_sum = 0.0;
        let mut bg_n = 0usize;
        for (v, l) in tile.data().iter().zip(gt.data().iter()) {
            if *l != 0 {
                cell_sum += v;
                cell_n += 1;
            } else {
                bg_sum += v;
                bg_n += 1;
            }
        }
        assert!(cell_n > 0 && bg_n > 0);
        assert!(cell_sum / cell_n as f64 + 50.0 < bg_sum / bg_n as f64);
    }
}
