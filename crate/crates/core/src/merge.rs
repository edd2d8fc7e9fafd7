//! Candidate enumeration and the two-pass merge protocol.
//!
//! Training and inference walk candidates in exactly the same order; the
//! only difference is who answers "merge these two?". Ground truth answers
//! during training-set construction, the trained forest answers during
//! inference, and both paths share the engine below so their traversals
//! cannot drift apart.

use crate::error::{Error, Result};
use crate::forest::{rf_predict, ForestModel};
use crate::morphology::{connected_components, Conn};
use crate::raster::{BinaryMask, GrayMap, LabelMap};
use crate::region::{
    features_pair, pair_feature_names, EdgeSegment, RegionStats, PAIR_FEATURES,
};

/// Read-only context shared by every candidate evaluation.
#[derive(Clone, Copy)]
pub struct MergeMaps<'a> {
    pub i1: &'a GrayMap,
    pub gm: &'a GrayMap,
    pub em: &'a BinaryMask,
    pub fg: &'a BinaryMask,
}

/// One examined pair: both sides measured at examination time, the shared
/// border, the assembled feature vector, and the class if one was assigned.
#[derive(Debug, Clone)]
pub struct MergeCandidate {
    pub s1: RegionStats,
    pub s2: RegionStats,
    pub e: EdgeSegment,
    pub features: Vec<f64>,
    pub class_label: Option<u8>,
}

/// Unordered pairs of distinct nonzero labels sharing at least one
/// 4-adjacent pixel pair, with their border segments.
pub fn build_adjacency(lb: &LabelMap) -> Vec<(u32, u32, EdgeSegment)> {
    let (width, height) = (lb.width(), lb.height());
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let a = lb.get(x, y);
            if a == 0 {
                continue;
            }
            if x + 1 < width {
                let b = lb.get(x + 1, y);
                if b != 0 && b != a {
                    pairs.push((a.min(b), a.max(b)));
                }
            }
            if y + 1 < height {
                let b = lb.get(x, y + 1);
                if b != 0 && b != a {
                    pairs.push((a.min(b), a.max(b)));
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    pairs
        .into_iter()
        .map(|(a, b)| (a, b, edge_between(lb, a, b)))
        .collect()
}

/// Border of the pair: pixels of either region 4-adjacent to the other.
pub fn edge_between(lb: &LabelMap, a: u32, b: u32) -> EdgeSegment {
    let (width, height) = (lb.width(), lb.height());
    let mut pixels = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let l = lb.get(x, y);
            if l != a && l != b {
                continue;
            }
            let other = if l == a { b } else { a };
            let mut adjacent = false;
            for (dx, dy) in [(0isize, -1isize), (-1, 0), (1, 0), (0, 1)] {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                    continue;
                }
                if lb.get(nx as usize, ny as usize) == other {
                    adjacent = true;
                    break;
                }
            }
            if adjacent {
                pixels.push((x, y));
            }
        }
    }
    EdgeSegment { pixels }
}

/// Working segmentation state: the label raster plus per-label pixel lists.
struct Working {
    lb: LabelMap,
    pixels: Vec<Vec<(usize, usize)>>,
}

impl Working {
    fn new(lb: &LabelMap) -> Working {
        let mut pixels: Vec<Vec<(usize, usize)>> = vec![Vec::new(); lb.max_label() as usize + 1];
        for y in 0..lb.height() {
            for x in 0..lb.width() {
                let l = lb.get(x, y);
                if l != 0 {
                    pixels[l as usize].push((x, y));
                }
            }
        }
        Working {
            lb: lb.clone(),
            pixels,
        }
    }

    fn alive(&self, l: u32) -> bool {
        !self.pixels[l as usize].is_empty()
    }

    fn neighbors(&self, l: u32) -> Vec<u32> {
        let (width, height) = (self.lb.width(), self.lb.height());
        let mut out = Vec::new();
        for &(x, y) in &self.pixels[l as usize] {
            for (dx, dy) in [(0isize, -1isize), (-1, 0), (1, 0), (0, 1)] {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                    continue;
                }
                let n = self.lb.get(nx as usize, ny as usize);
                if n != 0 && n != l {
                    out.push(n);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    fn edge(&self, a: u32, b: u32) -> EdgeSegment {
        let (width, height) = (self.lb.width(), self.lb.height());
        let mut pixels = Vec::new();
        for (own, other) in [(a, b), (b, a)] {
            for &(x, y) in &self.pixels[own as usize] {
                let mut adjacent = false;
                for (dx, dy) in [(0isize, -1isize), (-1, 0), (1, 0), (0, 1)] {
                    let nx = x as isize + dx;
                    let ny = y as isize + dy;
                    if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                        continue;
                    }
                    if self.lb.get(nx as usize, ny as usize) == other {
                        adjacent = true;
                        break;
                    }
                }
                if adjacent {
                    pixels.push((x, y));
                }
            }
        }
        EdgeSegment { pixels }
    }

    fn merge(&mut self, keep: u32, absorb: u32) {
        let absorbed = std::mem::take(&mut self.pixels[absorb as usize]);
        for &(x, y) in &absorbed {
            self.lb.set(x, y, keep);
        }
        self.pixels[keep as usize].extend(absorbed);
    }
}

/// Runs the two-pass protocol over every foreground component and records
/// each examined candidate. `decide` sees the candidate with its features
/// and returns whether to merge; its answer is stored as the class label.
///
/// Per component, two passes; per pass, surviving superpixels in ascending
/// label order become S1; for each S1, neighbours are scanned in ascending
/// label order, and after a merge the scan continues over the merged
/// region's neighbours from the last label examined.
pub fn run_merge_passes(
    lb: &LabelMap,
    maps: &MergeMaps,
    mut decide: impl FnMut(&MergeCandidate) -> Result<bool>,
) -> Result<(LabelMap, Vec<MergeCandidate>)> {
    let (width, height) = (lb.width(), lb.height());
    if maps.fg.width() != width || maps.fg.height() != height {
        return Err(Error::DimensionMismatch {
            expected_w: width,
            expected_h: height,
            actual_w: maps.fg.width(),
            actual_h: maps.fg.height(),
        });
    }
    let comps = connected_components(maps.fg, Conn::Eight);
    let n_comps = comps.max_label();
    let mut by_comp: Vec<Vec<u32>> = vec![Vec::new(); n_comps as usize + 1];
    let mut work = Working::new(lb);
    for l in 1..=lb.max_label() {
        if work.alive(l) {
            let (x, y) = work.pixels[l as usize][0];
            by_comp[comps.get(x, y) as usize].push(l);
        }
    }
    let mut candidates = Vec::new();
    for comp in 1..=n_comps {
        for _pass in 0..2 {
            let snapshot: Vec<u32> = by_comp[comp as usize]
                .iter()
                .copied()
                .filter(|&l| work.alive(l))
                .collect();
            for &s1 in &snapshot {
                if !work.alive(s1) {
                    continue;
                }
                let mut cursor = 0u32;
                loop {
                    let next = work
                        .neighbors(s1)
                        .into_iter()
                        .find(|&n| n > cursor && n != s1);
                    let Some(s2) = next else { break };
                    cursor = s2;
                    let stats1 = RegionStats::from_pixels(
                        s1,
                        work.pixels[s1 as usize].clone(),
                        width,
                        height,
                    );
                    let stats2 = RegionStats::from_pixels(
                        s2,
                        work.pixels[s2 as usize].clone(),
                        width,
                        height,
                    );
                    let e = work.edge(s1, s2);
                    let features =
                        features_pair(&stats1, &stats2, &e, maps.i1, maps.gm, maps.em, maps.fg);
                    let mut cand = MergeCandidate {
                        s1: stats1,
                        s2: stats2,
                        e,
                        features,
                        class_label: None,
                    };
                    let merge = decide(&cand)?;
                    cand.class_label = Some(u8::from(merge));
                    candidates.push(cand);
                    if merge {
                        work.merge(s1, s2);
                    }
                }
            }
        }
    }
    Ok((work.lb, candidates))
}

/// Majority ground-truth instance of a pixel set: (instance id, fraction).
fn majority_instance(gt: &LabelMap, pixels: &[(usize, usize)]) -> (u32, f64) {
    let mut counts: std::collections::BTreeMap<u32, usize> = std::collections::BTreeMap::new();
    for &(x, y) in pixels {
        *counts.entry(gt.get(x, y)).or_insert(0) += 1;
    }
    let mut best_id = 0;
    let mut best_n = 0;
    for (&id, &n) in &counts {
        if n > best_n {
            best_n = n;
            best_id = id;
        }
    }
    (best_id, best_n as f64 / pixels.len() as f64)
}

/// Walks the merge protocol with classes taken from ground truth: a pair is
/// positive when both sides give at least half their area to the same
/// nonzero instance. Returns the final working segmentation and the labeled
/// candidates.
pub fn build_training_set(
    lb: &LabelMap,
    gt: &LabelMap,
    maps: &MergeMaps,
) -> Result<(LabelMap, Vec<MergeCandidate>)> {
    if gt.width() != lb.width() || gt.height() != lb.height() {
        return Err(Error::DimensionMismatch {
            expected_w: lb.width(),
            expected_h: lb.height(),
            actual_w: gt.width(),
            actual_h: gt.height(),
        });
    }
    run_merge_passes(lb, maps, |cand| {
        let (id1, f1) = majority_instance(gt, &cand.s1.pixels);
        let (id2, f2) = majority_instance(gt, &cand.s2.pixels);
        Ok(id1 != 0 && id1 == id2 && f1 >= 0.5 && f2 >= 0.5)
    })
}

/// Walks the merge protocol with classes supplied by the trained forest.
pub fn merge_loop(lb: &LabelMap, model: &ForestModel, maps: &MergeMaps) -> Result<LabelMap> {
    if model.n_features != PAIR_FEATURES {
        return Err(Error::FeatureLengthMismatch {
            expected: PAIR_FEATURES,
            actual: model.n_features,
        });
    }
    let (out, _) = run_merge_passes(lb, maps, |cand| {
        Ok(rf_predict(model, &cand.features)?.0 == 1)
    })?;
    Ok(out)
}

/// Delimiter-separated export of labeled candidates: 83 feature columns
/// plus the class column.
pub fn training_to_csv(candidates: &[MergeCandidate]) -> String {
    let mut out = String::new();
    out.push_str(&pair_feature_names().join(","));
    out.push_str(",class\n");
    for c in candidates {
        for v in &c.features {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{}\n", c.class_label.unwrap_or(0)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_maps(width: usize, height: usize) -> (GrayMap, GrayMap, BinaryMask) {
        (
            GrayMap::filled(width, height, 120.0, (0.0, 255.0)),
            GrayMap::filled(width, height, 0.3, (0.0, 1.0)),
            BinaryMask::new(width, height),
        )
    }

    fn leaf_model(class1: bool) -> ForestModel {
        use crate::forest::{Node, Tree, MODEL_VERSION};
        let prob = if class1 { [0.0, 1.0] } else { [1.0, 0.0] };
        ForestModel {
            version: MODEL_VERSION,
            n_features: PAIR_FEATURES,
            feature_names: pair_feature_names(),
            seed: 0,
            trees: vec![Tree {
                nodes: vec![Node::Leaf { prob }],
            }],
        }
    }

    #[test]
    fn single_label_has_no_adjacency() {
        let mut lb = LabelMap::new(6, 6);
        for y in 1..5 {
            for x in 1..5 {
                lb.set(x, y, 1);
            }
        }
        assert!(build_adjacency(&lb).is_empty());
    }

    #[test]
    fn split_halves_share_both_boundary_columns() {
        let h = 8;
        let lb = LabelMap::from_vec(
            10,
            h,
            (0..10 * h)
                .map(|i| if i % 10 < 5 { 1 } else { 2 })
                .collect(),
        )
        .unwrap();
        let adj = build_adjacency(&lb);
        assert_eq!(adj.len(), 1);
        let (a, b, e) = &adj[0];
        assert_eq!((*a, *b), (1, 2));
        assert_eq!(e.len(), 2 * h);
        for &(x, _) in &e.pixels {
            assert!(x == 4 || x == 5);
        }
    }

    #[test]
    fn quadrants_touch_along_sides_only() {
        let lb = LabelMap::from_vec(
            8,
            8,
            (0..64)
                .map(|i| {
                    let (x, y) = (i % 8, i / 8);
                    match (x < 4, y < 4) {
                        (true, true) => 1,
                        (false, true) => 2,
                        (true, false) => 3,
                        (false, false) => 4,
                    }
                })
                .collect(),
        )
        .unwrap();
        let adj = build_adjacency(&lb);
        let pairs: Vec<(u32, u32)> = adj.iter().map(|(a, b, _)| (*a, *b)).collect();
        assert_eq!(pairs, vec![(1, 2), (1, 3), (2, 4), (3, 4)]);
    }

    fn strip_scene() -> (LabelMap, LabelMap, GrayMap, GrayMap, BinaryMask, BinaryMask) {
        // one 12x4 cell carved into three 4-wide strips, labels 1..3
        let width = 16;
        let height = 8;
        let cell = |x: usize, y: usize| (2..14).contains(&x) && (2..6).contains(&y);
        let mut lb = LabelMap::new(width, height);
        let mut gt = LabelMap::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if cell(x, y) {
                    gt.set(x, y, 7);
                    lb.set(x, y, 1 + ((x - 2) / 4) as u32);
                }
            }
        }
        let fg = BinaryMask::from_fn(width, height, cell);
        let (i1, gm, em) = flat_maps(width, height);
        (lb, gt, i1, gm, em, fg)
    }

    #[test]
    fn split_cell_chain_merges_in_scan_order() {
        let (lb, gt, i1, gm, em, fg) = strip_scene();
        let maps = MergeMaps {
            i1: &i1,
            gm: &gm,
            em: &em,
            fg: &fg,
        };
        let (out, cands) = build_training_set(&lb, &gt, &maps).unwrap();
        let positive: Vec<(u32, u32)> = cands
            .iter()
            .filter(|c| c.class_label == Some(1))
            .map(|c| (c.s1.label, c.s2.label))
            .collect();
        assert_eq!(positive, vec![(1, 2), (1, 3)]);
        let labels = out.labels();
        assert_eq!(labels, vec![1]);
        for y in 0..8 {
            for x in 0..16 {
                assert_eq!(out.get(x, y) != 0, fg.get(x, y));
            }
        }
    }

    #[test]
    fn perfect_segmentation_yields_only_negatives() {
        let width = 16;
        let height = 8;
        let mut lb = LabelMap::new(width, height);
        for y in 2..6 {
            for x in 2..14 {
                lb.set(x, y, if x < 8 { 1 } else { 2 });
            }
        }
        let gt = lb.clone();
        let fg = BinaryMask::from_fn(width, height, |x, y| (2..14).contains(&x) && (2..6).contains(&y));
        let (i1, gm, em) = flat_maps(width, height);
        let maps = MergeMaps {
            i1: &i1,
            gm: &gm,
            em: &em,
            fg: &fg,
        };
        let (out, cands) = build_training_set(&lb, &gt, &maps).unwrap();
        assert!(!cands.is_empty());
        assert!(cands.iter().all(|c| c.class_label == Some(0)));
        assert_eq!(out.data(), lb.data());
    }

    #[test]
    fn one_split_cell_gives_exactly_one_positive() {
        let width = 12;
        let height = 8;
        let mut lb = LabelMap::new(width, height);
        let mut gt = LabelMap::new(width, height);
        for y in 2..6 {
            for x in 2..10 {
                gt.set(x, y, 3);
                lb.set(x, y, if x < 6 { 1 } else { 2 });
            }
        }
        let fg = BinaryMask::from_fn(width, height, |x, y| (2..10).contains(&x) && (2..6).contains(&y));
        let (i1, gm, em) = flat_maps(width, height);
        let maps = MergeMaps {
            i1: &i1,
            gm: &gm,
            em: &em,
            fg: &fg,
        };
        let (_, cands) = build_training_set(&lb, &gt, &maps).unwrap();
        let positives = cands
            .iter()
            .filter(|c| c.class_label == Some(1))
            .count();
        assert_eq!(positives, 1);
    }

    #[test]
    fn always_negative_model_changes_nothing() {
        let (lb, _, i1, gm, em, fg) = strip_scene();
        let maps = MergeMaps {
            i1: &i1,
            gm: &gm,
            em: &em,
            fg: &fg,
        };
        let out = merge_loop(&lb, &leaf_model(false), &maps).unwrap();
        assert_eq!(out.data(), lb.data());
    }

    #[test]
    fn always_positive_model_unifies_each_component() {
        let width = 24;
        let height = 8;
        let mut lb = LabelMap::new(width, height);
        let mut fg = BinaryMask::new(width, height);
        // two separate cells, each split in two
        for y in 2..6 {
            for x in 2..10 {
                fg.set(x, y, true);
                lb.set(x, y, if x < 6 { 1 } else { 2 });
            }
            for x in 14..22 {
                fg.set(x, y, true);
                lb.set(x, y, if x < 18 { 3 } else { 4 });
            }
        }
        let (i1, gm, em) = flat_maps(width, height);
        let maps = MergeMaps {
            i1: &i1,
            gm: &gm,
            em: &em,
            fg: &fg,
        };
        let out = merge_loop(&lb, &leaf_model(true), &maps).unwrap();
        assert_eq!(out.labels(), vec![1, 3]);
        assert_eq!(out.get(4, 3), out.get(8, 3));
        assert_eq!(out.get(16, 3), out.get(20, 3));
        assert_ne!(out.get(4, 3), out.get(16, 3));
    }

    #[test]
    fn area_is_conserved_and_count_never_grows() {
        let width = 32;
        let height = 32;
        let mut lb = LabelMap::new(width, height);
        for y in 0..height {
            for x in 0..width {
                lb.set(x, y, 1 + (x / 8 + 4 * (y / 8)) as u32);
            }
        }
        let fg = BinaryMask::from_fn(width, height, |_, _| true);
        let (i1, gm, em) = flat_maps(width, height);
        let maps = MergeMaps {
            i1: &i1,
            gm: &gm,
            em: &em,
            fg: &fg,
        };
        let before: usize = lb.data().iter().filter(|&&l| l != 0).count();
        let n_before = lb.labels().len();
        let (out, cands) = run_merge_passes(&lb, &maps, |c| {
            Ok((c.s1.label * 7 + c.s2.label * 13) % 3 == 0)
        })
        .unwrap();
        let after: usize = out.data().iter().filter(|&&l| l != 0).count();
        assert_eq!(before, after);
        assert!(out.labels().len() <= n_before);
        assert!(!cands.is_empty());
    }

    #[test]
    fn replaying_recorded_classes_reproduces_the_run() {
        let (lb, gt, i1, gm, em, fg) = strip_scene();
        let maps = MergeMaps {
            i1: &i1,
            gm: &gm,
            em: &em,
            fg: &fg,
        };
        let (out1, cands) = build_training_set(&lb, &gt, &maps).unwrap();
        let mut queue: std::collections::VecDeque<u8> =
            cands.iter().map(|c| c.class_label.unwrap()).collect();
        let (out2, cands2) = run_merge_passes(&lb, &maps, |_| {
            Ok(queue.pop_front().expect("replay exhausted") == 1)
        })
        .unwrap();
        assert!(queue.is_empty());
        assert_eq!(out1.data(), out2.data());
        let seq1: Vec<(u32, u32)> = cands.iter().map(|c| (c.s1.label, c.s2.label)).collect();
        let seq2: Vec<(u32, u32)> = cands2.iter().map(|c| (c.s1.label, c.s2.label)).collect();
        assert_eq!(seq1, seq2);
    }

    #[test]
    fn csv_export_has_feature_columns_plus_class() {
        let (lb, gt, i1, gm, em, fg) = strip_scene();
        let maps = MergeMaps {
            i1: &i1,
            gm: &gm,
            em: &em,
            fg: &fg,
        };
        let (_, cands) = build_training_set(&lb, &gt, &maps).unwrap();
        let csv = training_to_csv(&cands);
        let mut lines = csv.lines();
        let header = lines.next().unwrap();
        assert_eq!(header.split(',').count(), PAIR_FEATURES + 1);
        assert!(header.ends_with(",class"));
        assert_eq!(lines.count(), cands.len());
    }
}
