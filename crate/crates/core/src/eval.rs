//! Instance matching and the average-precision curve.
//!
//! Predictions are matched one-to-one to ground-truth instances greedily in
//! descending IoU order. Above a threshold of 0.5 the greedy result is
//! provably unique: a region that covers more than half of another can do
//! so for at most one partner.

use crate::error::{Error, Result};
use crate::raster::LabelMap;
use std::collections::BTreeMap;

/// Pairwise IoU between prediction and ground-truth instances.
/// Row order follows `pred_labels`, column order follows `gt_labels`.
#[derive(Debug, Clone)]
pub struct IouMatrix {
    pub pred_labels: Vec<u32>,
    pub gt_labels: Vec<u32>,
    values: Vec<f64>,
}

impl IouMatrix {
    pub fn from_parts(pred_labels: Vec<u32>, gt_labels: Vec<u32>, values: Vec<f64>) -> Result<IouMatrix> {
        if values.len() != pred_labels.len() * gt_labels.len() {
            return Err(Error::invalid_parameter(
                "IoU matrix size does not match its label axes",
            ));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid_parameter("IoU values must lie in [0,1]"));
        }
        Ok(IouMatrix {
            pred_labels,
            gt_labels,
            values,
        })
    }

    pub fn get(&self, pred_idx: usize, gt_idx: usize) -> f64 {
        self.values[pred_idx * self.gt_labels.len() + gt_idx]
    }
}

/// Matching outcome at one IoU threshold.
#[derive(Debug, Clone)]
pub struct MatchReport {
    pub threshold: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub ap: f64,
    /// Matched (pred_label, gt_label, iou) triples.
    pub pairs: Vec<(u32, u32, f64)>,
}

/// IoU of every (prediction, ground truth) instance pair. Label 0 is
/// background on both sides and takes no part.
pub fn iou_matrix(pred: &LabelMap, gt: &LabelMap) -> Result<IouMatrix> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::DimensionMismatch {
            expected_w: pred.width(),
            expected_h: pred.height(),
            actual_w: gt.width(),
            actual_h: gt.height(),
        });
    }
    let pred_labels = pred.labels();
    let gt_labels = gt.labels();
    let pred_index: BTreeMap<u32, usize> =
        pred_labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let gt_index: BTreeMap<u32, usize> =
        gt_labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let mut pred_area = vec![0usize; pred_labels.len()];
    let mut gt_area = vec![0usize; gt_labels.len()];
    let mut inter: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (p, g) in pred.data().iter().zip(gt.data().iter()) {
        let pi = (*p != 0).then(|| pred_index[p]);
        let gi = (*g != 0).then(|| gt_index[g]);
        if let Some(i) = pi {
            pred_area[i] += 1;
        }
        if let Some(j) = gi {
            gt_area[j] += 1;
        }
        if let (Some(i), Some(j)) = (pi, gi) {
            *inter.entry((i, j)).or_insert(0) += 1;
        }
    }
    let mut values = vec![0.0; pred_labels.len() * gt_labels.len()];
    for (&(i, j), &n) in &inter {
        let union = pred_area[i] + gt_area[j] - n;
        values[i * gt_labels.len() + j] = n as f64 / union as f64;
    }
    IouMatrix::from_parts(pred_labels, gt_labels, values)
}

/// Greedy one-to-one matching among pairs with IoU >= t, taken in
/// descending IoU order (ties by ascending pred then gt index). The score
/// is the instance-level AP = TP / (TP + FP + FN); an entirely empty scene
/// scores 1.
pub fn match_at_threshold(m: &IouMatrix, t: f64) -> MatchReport {
    assert!(t > 0.0 && t <= 1.0, "threshold must lie in (0,1]");
    let mut cands: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..m.pred_labels.len() {
        for j in 0..m.gt_labels.len() {
            let v = m.get(i, j);
            if v >= t {
                cands.push((i, j, v));
            }
        }
    }
    cands.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut pred_used = vec![false; m.pred_labels.len()];
    let mut gt_used = vec![false; m.gt_labels.len()];
    let mut pairs = Vec::new();
    for (i, j, v) in cands {
        if !pred_used[i] && !gt_used[j] {
            pred_used[i] = true;
            gt_used[j] = true;
            pairs.push((m.pred_labels[i], m.gt_labels[j], v));
        }
    }
    let tp = pairs.len();
    let fp = m.pred_labels.len() - tp;
    let fn_count = m.gt_labels.len() - tp;
    let denom = tp + fp + fn_count;
    let ap = if denom == 0 {
        1.0
    } else {
        tp as f64 / denom as f64
    };
    MatchReport {
        threshold: t,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_count,
        ap,
        pairs,
    }
}

/// One report per threshold over a shared IoU matrix.
pub fn ap_curve(pred: &LabelMap, gt: &LabelMap, thresholds: &[f64]) -> Result<Vec<MatchReport>> {
    debug_assert!(
        thresholds.windows(2).all(|w| w[0] <= w[1]),
        "thresholds must be sorted ascending"
    );
    let m = iou_matrix(pred, gt)?;
    Ok(thresholds.iter().map(|&t| match_at_threshold(&m, t)).collect())
}

/// The standard grid: 0.50 to 0.90 in steps of 0.05.
pub fn default_thresholds() -> Vec<f64> {
    (0..9).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Delimiter-separated report: one row per threshold.
pub fn reports_to_csv(reports: &[MatchReport]) -> String {
    let mut out = String::from("threshold,tp,fp,fn,ap\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.threshold, r.true_positives, r.false_positives, r.false_negatives, r.ap
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn paint(lb: &mut LabelMap, x0: usize, y0: usize, w: usize, h: usize, l: u32) {
        for y in y0..(y0 + h).min(lb.height()) {
            for x in x0..(x0 + w).min(lb.width()) {
                lb.set(x, y, l);
            }
        }
    }

    /// Exhaustive optimal one-to-one matching maximizing TP.
    fn optimal_tp(m: &IouMatrix, t: f64) -> usize {
        let n_gt = m.gt_labels.len();
        assert!(n_gt <= 16);
        let mut best = vec![0usize; 1 << n_gt];
        for i in 0..m.pred_labels.len() {
            let mut next = best.clone();
            for mask in 0..(1 << n_gt) {
                for j in 0..n_gt {
                    if mask & (1 << j) == 0 && m.get(i, j) >= t {
                        let with = best[mask] + 1;
                        let slot = mask | (1 << j);
                        if with > next[slot] {
                            next[slot] = with;
                        }
                    }
                }
            }
            for (a, b) in next.iter_mut().zip(best.iter()) {
                if *b > *a {
                    *a = *b;
                }
            }
            best = next;
        }
        best.into_iter().max().unwrap()
    }

    fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> LabelMap {
        let mut lb = LabelMap::new(32, 32);
        for l in 1..=n {
            let w = rng.random_range(4..12);
            let h = rng.random_range(4..12);
            let x0 = rng.random_range(0..32 - w);
            let y0 = rng.random_range(0..32 - h);
            paint(&mut lb, x0, y0, w, h, l as u32);
        }
        lb
    }

    #[test]
    fn identical_maps_give_unit_diagonal_and_perfect_ap() {
        let mut gt = LabelMap::new(24, 24);
        paint(&mut gt, 2, 2, 6, 6, 1);
        paint(&mut gt, 12, 10, 7, 5, 2);
        let m = iou_matrix(&gt, &gt).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_eq!(m.get(i, j), expect);
            }
        }
        for r in ap_curve(&gt, &gt, &default_thresholds()).unwrap() {
            assert_eq!(r.ap, 1.0);
            assert_eq!(r.true_positives, 2);
        }
    }

    #[test]
    fn disjoint_instances_have_zero_iou() {
        let mut pred = LabelMap::new(20, 20);
        let mut gt = LabelMap::new(20, 20);
        paint(&mut pred, 0, 0, 5, 5, 1);
        paint(&mut gt, 10, 10, 5, 5, 1);
        let m = iou_matrix(&pred, &gt).unwrap();
        assert_eq!(m.get(0, 0), 0.0);
        let r = match_at_threshold(&m, 0.5);
        assert_eq!(
            (r.true_positives, r.false_positives, r.false_negatives),
            (0, 1, 1)
        );
        assert_eq!(r.ap, 0.0);
    }

    #[test]
    fn half_coverage_scores_one_half() {
        let mut pred = LabelMap::new(20, 20);
        let mut gt = LabelMap::new(20, 20);
        paint(&mut gt, 2, 2, 8, 6, 1);
        paint(&mut pred, 2, 2, 4, 6, 1);
        let m = iou_matrix(&pred, &gt).unwrap();
        assert_eq!(m.get(0, 0), 0.5);
    }

    #[test]
    fn ap_arithmetic_matches_the_formula() {
        // 7 perfect matches plus 3 stray predictions
        let mut pred_labels: Vec<u32> = (1..=10).collect();
        let gt_labels: Vec<u32> = (1..=7).collect();
        let mut values = vec![0.0; 10 * 7];
        for i in 0..7 {
            values[i * 7 + i] = 1.0;
        }
        pred_labels.rotate_left(3);
        let m = IouMatrix::from_parts((1..=10).collect(), gt_labels, values).unwrap();
        let r = match_at_threshold(&m, 0.5);
        assert_eq!(
            (r.true_positives, r.false_positives, r.false_negatives),
            (7, 3, 0)
        );
        assert!((r.ap - 0.7).abs() < 1e-12);
        assert_eq!(pred_labels.len(), 10);
    }

    #[test]
    fn greedy_takes_the_stronger_of_two_competing_predictions() {
        let values = vec![0.6, 0.55];
        let m = IouMatrix::from_parts(vec![1, 2], vec![1], values).unwrap();
        let r = match_at_threshold(&m, 0.5);
        assert_eq!(
            (r.true_positives, r.false_positives, r.false_negatives),
            (1, 1, 0)
        );
        assert_eq!(r.pairs, vec![(1, 1, 0.6)]);
        assert_eq!(r.ap, 0.5);
    }

    #[test]
    fn curve_is_non_increasing_and_counts_are_conserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let pred = random_scene(&mut rng, 6);
            let gt = random_scene(&mut rng, 5);
            let reports = ap_curve(&pred, &gt, &default_thresholds()).unwrap();
            let n_pred = pred.labels().len();
            let n_gt = gt.labels().len();
            for w in reports.windows(2) {
                assert!(w[0].ap >= w[1].ap);
            }
            for r in &reports {
                assert_eq!(r.true_positives + r.false_positives, n_pred);
                assert_eq!(r.true_positives + r.false_negatives, n_gt);
            }
        }
    }

    #[test]
    fn empty_prediction_scores_zero_on_nonempty_gt() {
        let pred = LabelMap::new(16, 16);
        let mut gt = LabelMap::new(16, 16);
        paint(&mut gt, 3, 3, 5, 5, 1);
        for r in ap_curve(&pred, &gt, &default_thresholds()).unwrap() {
            assert_eq!(r.ap, 0.0);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let pred = LabelMap::new(16, 16);
        let gt = LabelMap::new(16, 18);
        assert!(iou_matrix(&pred, &gt).is_err());
    }

    #[test]
    fn above_half_matches_are_unique_and_greedy_is_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let np = rng.random_range(2..8);
            let ng = rng.random_range(2..8);
            let pred = random_scene(&mut rng, np);
            let gt = random_scene(&mut rng, ng);
            let m = iou_matrix(&pred, &gt).unwrap();
            let t = 0.55;
            for i in 0..m.pred_labels.len() {
                let hits = (0..m.gt_labels.len()).filter(|&j| m.get(i, j) >= t).count();
                assert!(hits <= 1, "a region covering most of another has one partner");
            }
            let r = match_at_threshold(&m, t);
            assert_eq!(r.true_positives, optimal_tp(&m, t));
        }
    }

    #[test]
    fn greedy_agrees_with_exhaustive_at_the_half_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mut agree = 0;
        for _ in 0..100 {
            let np = rng.random_range(2..8);
            let ng = rng.random_range(2..8);
            let pred = random_scene(&mut rng, np);
            let gt = random_scene(&mut rng, ng);
            let m = iou_matrix(&pred, &gt).unwrap();
            let r = match_at_threshold(&m, 0.5);
            if r.true_positives == optimal_tp(&m, 0.5) {
                agree += 1;
            }
        }
        assert!(agree >= 99, "agreement {agree}/100");
    }

    #[test]
    fn relabeling_predictions_does_not_change_the_curve() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let pred = random_scene(&mut rng, 6);
        let gt = random_scene(&mut rng, 5);
        let labels = pred.labels();
        let mut shuffled = labels.clone();
        shuffled.shuffle(&mut rng);
        let perm: std::collections::HashMap<u32, u32> =
            labels.into_iter().zip(shuffled).collect();
        let mut pred2 = pred.clone();
        for v in pred2.data_mut() {
            if *v != 0 {
                *v = perm[v];
            }
        }
        let a = ap_curve(&pred, &gt, &default_thresholds()).unwrap();
        let b = ap_curve(&pred2, &gt, &default_thresholds()).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.ap, y.ap);
            assert_eq!(x.true_positives, y.true_positives);
        }
    }

    #[test]
    fn csv_report_has_one_row_per_threshold() {
        let mut gt = LabelMap::new(16, 16);
        paint(&mut gt, 2, 2, 6, 6, 1);
        let reports = ap_curve(&gt, &gt, &default_thresholds()).unwrap();
        let csv = reports_to_csv(&reports);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "threshold,tp,fp,fn,ap");
        assert_eq!(lines.len(), 10);
        assert!(lines[1].starts_with("0.5,"));
    }
}
