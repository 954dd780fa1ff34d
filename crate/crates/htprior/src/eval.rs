//! Average precision over binarization thresholds with tolerance-based
//! pixel matching, following the boundary-evaluation protocol: one-to-one
//! greedy matching in increasing distance order, thresholds 0.1 through
//! 0.9, and a matching tolerance of 0.0075 of the image diagonal.

use std::fmt::Write as _;

use crate::dataset::Raster;

/// Matching outcome at one binarization threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    pub threshold: f64,
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub precision: f64,
    pub recall: f64,
}

impl MatchResult {
    fn from_counts(threshold: f64, tp: usize, fp: usize, fnc: usize) -> MatchResult {
        // Empty prediction counts as perfectly precise, empty ground truth
        // as perfectly recalled (boundary-benchmark convention).
        let precision = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fnc == 0 {
            1.0
        } else {
            tp as f64 / (tp + fnc) as f64
        };
        MatchResult {
            threshold,
            true_pos: tp,
            false_pos: fp,
            false_neg: fnc,
            precision,
            recall,
        }
    }
}

/// The protocol's matching tolerance: 0.0075 of the image diagonal.
pub fn matching_tolerance(width: usize, height: usize) -> f64 {
    0.0075 * ((width * width + height * height) as f64).sqrt()
}

/// The protocol's binarization thresholds 0.1, 0.2, …, 0.9.
pub fn default_thresholds() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}

/// Neighborhood offsets within `tol`, grouped in increasing distance order.
fn tolerance_offsets(tol: f64) -> Vec<(i64, i64)> {
    let r = tol.floor() as i64;
    let tol2 = tol * tol;
    let mut offsets: Vec<(i64, i64)> = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if ((dy * dy + dx * dx) as f64) <= tol2 {
                offsets.push((dy, dx));
            }
        }
    }
    offsets.sort_by(|a, b| {
        let da = a.0 * a.0 + a.1 * a.1;
        let db = b.0 * b.0 + b.1 * b.1;
        da.cmp(&db).then(a.cmp(b))
    });
    offsets
}

/// One-to-one greedy matching between predicted and ground-truth pixels
/// within `tol_px`, nearest pairs first (ties broken by offset order, then
/// prediction raster order).
pub fn match_pixels(pred: &Raster, gt: &Raster, tol_px: f64) -> MatchResult {
    match_binarized(&pred.data, gt, tol_px, 0.5)
}

/// Matching after binarizing a real-valued prediction at `threshold`
/// (pixels with value ≥ threshold count as predictions).
pub fn match_real(pred: &[f32], gt: &Raster, tol_px: f64, threshold: f64) -> MatchResult {
    debug_assert_eq!(pred.len(), gt.width * gt.height);
    let (w, h) = (gt.width, gt.height);
    let pred_px: Vec<(i64, i64)> = (0..h as i64)
        .flat_map(|y| (0..w as i64).map(move |x| (y, x)))
        .filter(|&(y, x)| pred[y as usize * w + x as usize] as f64 >= threshold)
        .collect();
    match_pixel_list(&pred_px, gt, tol_px, threshold)
}

fn match_binarized(pred: &[u8], gt: &Raster, tol_px: f64, threshold: f64) -> MatchResult {
    let (w, h) = (gt.width, gt.height);
    let pred_px: Vec<(i64, i64)> = (0..h as i64)
        .flat_map(|y| (0..w as i64).map(move |x| (y, x)))
        .filter(|&(y, x)| pred[y as usize * w + x as usize] != 0)
        .collect();
    match_pixel_list(&pred_px, gt, tol_px, threshold)
}

fn match_pixel_list(
    pred_px: &[(i64, i64)],
    gt: &Raster,
    tol_px: f64,
    threshold: f64,
) -> MatchResult {
    let (w, h) = (gt.width as i64, gt.height as i64);
    let gt_count = gt.count_set();
    let mut gt_free: Vec<bool> = gt.data.iter().map(|&v| v != 0).collect();
    let mut pred_free = vec![true; pred_px.len()];
    let mut tp = 0usize;
    for (dy, dx) in tolerance_offsets(tol_px) {
        for (i, &(py, px)) in pred_px.iter().enumerate() {
            if !pred_free[i] {
                continue;
            }
            let (gy, gx) = (py + dy, px + dx);
            if gy < 0 || gy >= h || gx < 0 || gx >= w {
                continue;
            }
            let gi = (gy * w + gx) as usize;
            if gt_free[gi] {
                gt_free[gi] = false;
                pred_free[i] = false;
                tp += 1;
            }
        }
    }
    MatchResult::from_counts(threshold, tp, pred_px.len() - tp, gt_count - tp)
}

/// Per-threshold matching of a real-valued prediction.
pub fn pr_curve(pred: &[f32], gt: &Raster, thresholds: &[f64]) -> Vec<MatchResult> {
    let tol = matching_tolerance(gt.width, gt.height);
    thresholds
        .iter()
        .map(|&t| match_real(pred, gt, tol, t))
        .collect()
}

/// Area under precision over recall: points sorted by recall, precision
/// extended flat from the lowest-recall point down to recall 0.
pub fn ap_from_points(points: &[MatchResult]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut pr: Vec<(f64, f64)> = points.iter().map(|m| (m.recall, m.precision)).collect();
    pr.sort_by(|a, b| a.partial_cmp(b).expect("finite precision/recall"));
    let mut ap = pr[0].0 * pr[0].1;
    for win in pr.windows(2) {
        ap += (win[1].0 - win[0].0) * (win[1].1 + win[0].1) / 2.0;
    }
    ap
}

/// AP of one prediction against one target over the default thresholds.
pub fn average_precision(pred: &[f32], gt: &Raster) -> f64 {
    ap_from_points(&pr_curve(pred, gt, &default_thresholds()))
}

/// Dataset-level AP: per-threshold counts are pooled over all images before
/// computing precision/recall, then integrated.
pub fn dataset_ap(per_image: &[Vec<MatchResult>]) -> (f64, Vec<MatchResult>) {
    assert!(!per_image.is_empty());
    let n_thr = per_image[0].len();
    let mut pooled = Vec::with_capacity(n_thr);
    for t in 0..n_thr {
        let (mut tp, mut fp, mut fnc) = (0usize, 0usize, 0usize);
        for img in per_image {
            tp += img[t].true_pos;
            fp += img[t].false_pos;
            fnc += img[t].false_neg;
        }
        pooled.push(MatchResult::from_counts(per_image[0][t].threshold, tp, fp, fnc));
    }
    (ap_from_points(&pooled), pooled)
}

/// Worker thread cap for evaluation fan-out, from `HTPRIOR_THREADS`
/// (default 1).
pub fn worker_threads() -> usize {
    std::env::var("HTPRIOR_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Applies `eval_one` to every sample, fanning out across worker threads
/// when allowed; results come back in input order regardless of threads.
pub fn map_samples<T, S, F>(samples: &[S], eval_one: F) -> Vec<T>
where
    T: Send,
    S: Sync,
    F: Fn(&S) -> T + Sync,
{
    let threads = worker_threads().min(samples.len().max(1));
    if threads <= 1 {
        return samples.iter().map(&eval_one).collect();
    }
    let chunk = samples.len().div_ceil(threads);
    let mut out: Vec<Option<T>> = Vec::new();
    out.resize_with(samples.len(), || None);
    let slots: Vec<(usize, &mut [Option<T>])> = {
        let mut rest = out.as_mut_slice();
        let mut slots = Vec::new();
        let mut base = 0;
        while !rest.is_empty() {
            let take = chunk.min(rest.len());
            let (head, tail) = rest.split_at_mut(take);
            slots.push((base, head));
            base += take;
            rest = tail;
        }
        slots
    };
    std::thread::scope(|scope| {
        for (base, slot) in slots {
            let eval_one = &eval_one;
            scope.spawn(move || {
                for (k, cell) in slot.iter_mut().enumerate() {
                    *cell = Some(eval_one(&samples[base + k]));
                }
            });
        }
    });
    out.into_iter().map(|v| v.expect("thread filled slot")).collect()
}

/// Renders a `threshold,precision,recall` CSV (LF line endings).
pub fn pr_csv(points: &[MatchResult]) -> String {
    let mut s = String::from("threshold,precision,recall\n");
    for m in points {
        let _ = writeln!(s, "{:.1},{:.6},{:.6}", m.threshold, m.precision, m.recall);
    }
    s
}

/// Plain-text evaluation report.
pub fn text_report(title: &str, ap: f64, points: &[MatchResult]) -> String {
    let mut s = format!("{title}\n");
    for m in points {
        let _ = writeln!(
            s,
            "threshold {:.1}: precision {:.4} recall {:.4} (tp {} fp {} fn {})",
            m.threshold, m.precision, m.recall, m.true_pos, m.false_pos, m.false_neg
        );
    }
    let _ = writeln!(s, "AP: {:.4}", ap);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raster_from(rows: &[&str]) -> Raster {
        let h = rows.len();
        let w = rows[0].len();
        let mut r = Raster::new(w, h);
        for (y, row) in rows.iter().enumerate() {
            for (x, c) in row.chars().enumerate() {
                if c == '1' {
                    r.set(x as i32, y as i32);
                }
            }
        }
        r
    }

    #[test]
    fn perfect_match() {
        let gt = raster_from(&["0110", "0110"]);
        let m = match_pixels(&gt, &gt, 1.0);
        assert_eq!(m.true_pos, 4);
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 1.0);
    }

    #[test]
    fn one_pixel_shift_within_tolerance() {
        // Tolerance for 100×100 is 0.0075·√20000 ≈ 1.0607 px, so a 1-px
        // shift still matches interior pixels.
        let tol = matching_tolerance(100, 100);
        assert!((tol - 1.0607).abs() < 1e-3);
        let mut gt = Raster::new(100, 100);
        let mut pred = Raster::new(100, 100);
        for x in 10..90 {
            gt.set(x, 50);
            pred.set(x, 51);
        }
        let m = match_pixels(&pred, &gt, tol);
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.precision, 1.0);
    }

    #[test]
    fn empty_prediction_convention() {
        let gt = raster_from(&["11", "00"]);
        let pred = raster_from(&["00", "00"]);
        let m = match_pixels(&pred, &gt, 1.0);
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 0.0);
    }

    #[test]
    fn matching_is_one_to_one() {
        // Two predictions near one gt pixel: only one true positive.
        let gt = raster_from(&["010", "000"]);
        let pred = raster_from(&["101", "000"]);
        let m = match_pixels(&pred, &gt, 1.5);
        assert_eq!(m.true_pos, 1);
        assert_eq!(m.false_pos, 1);
        assert_eq!(m.false_neg, 0);
    }

    #[test]
    fn exact_matches_beat_near_matches() {
        // A prediction standing on a gt pixel claims it before a farther
        // prediction can.
        let gt = raster_from(&["100"]);
        let pred = raster_from(&["110"]);
        let m = match_pixels(&pred, &gt, 1.0);
        assert_eq!(m.true_pos, 1);
        assert_eq!(m.false_pos, 1);
    }

    #[test]
    fn perfect_confidence_map_is_ap_1() {
        let gt = raster_from(&["0110", "0110", "0000"]);
        let pred: Vec<f32> = gt.data.iter().map(|&v| v as f32).collect();
        assert_eq!(average_precision(&pred, &gt), 1.0);
    }

    #[test]
    fn zero_prediction_is_ap_0() {
        let gt = raster_from(&["0110", "0110", "0000"]);
        let pred = vec![0.0f32; 12];
        assert_eq!(average_precision(&pred, &gt), 0.0);
    }

    #[test]
    fn binary_prediction_as_own_gt_is_ap_1() {
        let pred_raster = raster_from(&["0101", "1100", "0011"]);
        let pred: Vec<f32> = pred_raster.data.iter().map(|&v| v as f32).collect();
        assert_eq!(average_precision(&pred, &pred_raster), 1.0);
    }

    #[test]
    fn ap_invariant_under_threshold_preserving_rescale() {
        let gt = raster_from(&["0110", "0110", "0000"]);
        let pred: Vec<f32> = (0..12).map(|i| (i as f32) / 12.0).collect();
        let base = average_precision(&pred, &gt);
        // Map each value to the midpoint of its threshold cell: every pixel
        // stays on the same side of every threshold in {0.1, …, 0.9}.
        let rescaled: Vec<f32> = pred
            .iter()
            .map(|&v| {
                let cell = (v * 10.0).floor().clamp(0.0, 9.0);
                (cell / 10.0 + 0.05) as f32
            })
            .collect();
        assert_eq!(average_precision(&rescaled, &gt), base);
    }

    #[test]
    fn pooled_ap_differs_from_unpooled_means() {
        let gt1 = raster_from(&["11", "00"]);
        let gt2 = raster_from(&["10", "01"]);
        let p1 = vec![0.95f32, 0.95, 0.0, 0.0];
        let p2 = vec![0.95f32, 0.0, 0.0, 0.0];
        let curves = vec![
            pr_curve(&p1, &gt1, &default_thresholds()),
            pr_curve(&p2, &gt2, &default_thresholds()),
        ];
        let (ap, pooled) = dataset_ap(&curves);
        assert_eq!(pooled.len(), 9);
        // 3 of 3 predictions hit; 1 of 4 gt pixels missed.
        assert!((pooled[0].precision - 1.0).abs() < 1e-12);
        assert!((pooled[0].recall - 0.75).abs() < 1e-12);
        assert!((ap - 0.75).abs() < 1e-12);
    }

    #[test]
    fn csv_format() {
        let gt = raster_from(&["10"]);
        let points = pr_curve(&[1.0, 0.0], &gt, &default_thresholds());
        let csv = pr_csv(&points);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("threshold,precision,recall"));
        assert_eq!(lines.next(), Some("0.1,1.000000,1.000000"));
        assert_eq!(csv.lines().count(), 10);
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn map_samples_preserves_order() {
        let data: Vec<usize> = (0..37).collect();
        let out = map_samples(&data, |&x| x * 2);
        assert_eq!(out, (0..37).map(|x| x * 2).collect::<Vec<_>>());
    }
}
