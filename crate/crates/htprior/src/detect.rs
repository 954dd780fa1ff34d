//! Non-learned Hough peak detection: greedy maxima with non-maximum
//! suppression, plus the inverse rendering of polar line parameters.

use crate::dataset::Raster;
use crate::error::{Error, Result};
use crate::hough::{ht_forward, HoughGrid, LineParam, VoteMask};

/// One detected line with its accumulator score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub line: LineParam,
    pub score: f32,
}

/// Picks the `k` largest Hough bins of the rasterized image, suppressing a
/// `nms_radius` neighborhood (in bins, both axes) around each pick. The θ
/// axis wraps modulo π with the ρ sign flipped. Scores are non-increasing;
/// a blank image yields zero-score detections the caller can filter.
pub fn detect_lines(
    image: &Raster,
    mask: &VoteMask,
    k: usize,
    nms_radius: usize,
) -> Result<Vec<Detection>> {
    if k < 1 {
        return Err(Error::Config("peak count must be at least 1".into()));
    }
    let grid = mask.grid();
    let hough = ht_forward(&image.to_tensor(), mask)?;
    let (nr, nt) = (grid.n_rho, grid.n_theta);
    let mut scores: Vec<f32> = hough.data().to_vec();
    let mut out = Vec::with_capacity(k);
    let radius = nms_radius as isize;
    for _ in 0..k {
        let (mut best, mut best_score) = (0usize, f32::NEG_INFINITY);
        for (i, &s) in scores.iter().enumerate() {
            if s > best_score {
                best = i;
                best_score = s;
            }
        }
        let (r, t) = (best / nt, best % nt);
        out.push(Detection {
            line: LineParam {
                rho: grid.rho_centers[r],
                theta: grid.theta_samples[t],
            },
            score: best_score.max(0.0),
        });
        for dr in -radius..=radius {
            for dt in -radius..=radius {
                let rr = r as isize + dr;
                let mut tt = t as isize + dt;
                let mut rr = rr;
                // Crossing θ = 0 or θ = π lands on the same line family
                // with ρ mirrored.
                if tt < 0 {
                    tt += nt as isize;
                    rr = nr as isize - 1 - rr;
                } else if tt >= nt as isize {
                    tt -= nt as isize;
                    rr = nr as isize - 1 - rr;
                }
                if rr < 0 || rr >= nr as isize {
                    continue;
                }
                scores[rr as usize * nt + tt as usize] = f32::NEG_INFINITY;
            }
        }
    }
    Ok(out)
}

/// Rasterizes the infinite line with the given polar parameters by walking
/// the line equation and setting the nearest pixels.
pub fn rasterize_line(param: &LineParam, grid: &HoughGrid) -> Result<Raster> {
    if param.rho.abs() > grid.diagonal / 2.0 {
        return Err(Error::Config(format!(
            "offset {} outside the ±{} range",
            param.rho,
            grid.diagonal / 2.0
        )));
    }
    let mut raster = Raster::new(grid.width, grid.height);
    let (sin_t, cos_t) = param.theta.sin_cos();
    let cx = (grid.width as f64 - 1.0) / 2.0;
    let cy = (grid.height as f64 - 1.0) / 2.0;
    // (x, y) = (ρ cos θ − i sin θ, ρ sin θ + i cos θ); half-pixel steps in i
    // leave no gaps after rounding.
    let reach = grid.diagonal;
    let steps = (2.0 * reach / 0.5).ceil() as i64;
    for s in 0..=steps {
        let i = -reach + s as f64 * 0.5;
        let x = param.rho * cos_t - i * sin_t + cx;
        let y = param.rho * sin_t + i * cos_t + cy;
        raster.set(x.round() as i32, y.round() as i32);
    }
    Ok(raster)
}

/// Offset/angle distance between two lines under the (ρ, θ) ↔ (−ρ, θ±π)
/// equivalence: returns (|Δρ|, |Δθ|) for the nearest representative.
pub fn line_param_distance(a: &LineParam, b: &LineParam) -> (f64, f64) {
    let mut best = (f64::INFINITY, f64::INFINITY);
    for k in [-1.0f64, 0.0, 1.0] {
        let theta = b.theta + k * std::f64::consts::PI;
        let rho = if k == 0.0 { b.rho } else { -b.rho };
        let dt = (a.theta - theta).abs();
        let dr = (a.rho - rho).abs();
        if dt < best.1 || (dt == best.1 && dr < best.0) {
            best = (dr, dt);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hough::{build_grid, build_vote_mask};

    #[test]
    fn horizontal_family_line_through_center() {
        let grid = build_grid(100, 100, 183, 60).unwrap();
        let line = LineParam {
            rho: 0.0,
            theta: std::f64::consts::FRAC_PI_2,
        };
        let r = rasterize_line(&line, &grid).unwrap();
        // θ = π/2 makes the direction (−1, 0): a horizontal row through the
        // center.
        let rows: std::collections::HashSet<usize> = (0..100 * 100)
            .filter(|&p| r.data[p] == 1)
            .map(|p| p / 100)
            .collect();
        assert_eq!(rows.len(), 1);
        let row = *rows.iter().next().unwrap();
        assert!(row == 49 || row == 50);
        assert_eq!(r.count_set(), 100);
    }

    #[test]
    fn out_of_range_offset_rejected() {
        let grid = build_grid(100, 100, 183, 60).unwrap();
        let line = LineParam {
            rho: grid.diagonal / 2.0 + 1.0,
            theta: 0.3,
        };
        assert!(rasterize_line(&line, &grid).is_err());
    }

    #[test]
    fn detect_recovers_rendered_line() {
        let grid = build_grid(100, 100, 183, 60).unwrap();
        let mask = build_vote_mask(&grid);
        let truth = LineParam {
            rho: 17.3,
            theta: 1.1,
        };
        let raster = rasterize_line(&truth, &grid).unwrap();
        let det = detect_lines(&raster, &mask, 1, 2).unwrap();
        assert_eq!(det.len(), 1);
        let (dr, dt) = line_param_distance(&det[0].line, &truth);
        assert!(dr <= grid.rho_step(), "rho off by {dr}");
        assert!(dt <= grid.theta_step(), "theta off by {dt}");
        assert!(det[0].score > 0.0);
    }

    #[test]
    fn blank_image_yields_zero_scores() {
        let grid = build_grid(40, 40, 31, 12).unwrap();
        let mask = build_vote_mask(&grid);
        let det = detect_lines(&Raster::new(40, 40), &mask, 3, 2).unwrap();
        assert_eq!(det.len(), 3);
        assert!(det.iter().all(|d| d.score == 0.0));
    }

    #[test]
    fn two_perpendicular_lines_recovered() {
        let grid = build_grid(100, 100, 183, 60).unwrap();
        let mask = build_vote_mask(&grid);
        let a = LineParam {
            rho: -10.0,
            theta: 0.4,
        };
        let b = LineParam {
            rho: 22.0,
            theta: 0.4 + std::f64::consts::FRAC_PI_2,
        };
        let mut raster = rasterize_line(&a, &grid).unwrap();
        let other = rasterize_line(&b, &grid).unwrap();
        for (dst, src) in raster.data.iter_mut().zip(&other.data) {
            *dst |= src;
        }
        let det = detect_lines(&raster, &mask, 2, 2).unwrap();
        assert!(det[0].score >= det[1].score);
        let hits = [a, b].iter().all(|truth| {
            det.iter().any(|d| {
                let (dr, dt) = line_param_distance(&d.line, truth);
                dr <= grid.rho_step() && dt <= grid.theta_step()
            })
        });
        assert!(hits, "detections {det:?}");
    }

    #[test]
    fn scores_non_increasing() {
        let grid = build_grid(64, 64, 91, 30).unwrap();
        let mask = build_vote_mask(&grid);
        let mut raster = Raster::new(64, 64);
        for x in 0..64 {
            raster.set(x, 20);
            raster.set(x, x);
            if x >= 10 && x < 40 {
                raster.set(5, x);
            }
        }
        let det = detect_lines(&raster, &mask, 5, 2).unwrap();
        for w in det.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
    }

    #[test]
    fn theta_wraparound_distance() {
        let a = LineParam {
            rho: 30.0,
            theta: 0.01,
        };
        let b = LineParam {
            rho: -30.0,
            theta: std::f64::consts::PI - 0.01,
        };
        let (dr, dt) = line_param_distance(&a, &b);
        assert!(dr < 1e-9);
        assert!((dt - 0.02).abs() < 1e-9);
    }
}
