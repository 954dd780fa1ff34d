//! The (ρ, θ) discretization, the sparse vote mask, and the forward/inverse
//! Hough transforms with their exact adjoint backward passes.
//!
//! Every pixel votes in exactly one ρ bin per sampled angle. The mask stores
//! that correspondence both ways: a dense pixel→bin table and its transpose
//! as a CSR voter index. The forward transform accumulates featuremap values
//! into bins (scaled by 1/W); the inverse averages, per pixel, the bins that
//! pixel voted into (scaled by 1/Nθ). Both are linear, so their backward
//! passes are the exact adjoints with the matching scale factors.

use std::io::Write;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Polar line parameters: signed offset from the image center and angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineParam {
    /// Signed offset in pixels from the image center along the line normal.
    pub rho: f64,
    /// Normal angle in radians, in `[0, π)`.
    pub theta: f64,
}

/// The (ρ, θ) bin layout for a fixed image size.
///
/// Angles sample `[0, π)` uniformly (θ and θ+π parameterize the same
/// undirected line family, with ρ sign flipped). Offsets are uniform,
/// symmetric about 0, spanning a total length equal to the image diagonal.
#[derive(Debug, Clone)]
pub struct HoughGrid {
    pub width: usize,
    pub height: usize,
    pub n_rho: usize,
    pub n_theta: usize,
    pub theta_samples: Vec<f64>,
    pub rho_centers: Vec<f64>,
    pub diagonal: f64,
}

/// Default bin counts: 183 offsets × 60 angles.
pub const DEFAULT_N_RHO: usize = 183;
pub const DEFAULT_N_THETA: usize = 60;

impl HoughGrid {
    pub fn rho_step(&self) -> f64 {
        self.diagonal / (self.n_rho - 1) as f64
    }

    pub fn theta_step(&self) -> f64 {
        std::f64::consts::PI / self.n_theta as f64
    }

    /// Index of the ρ bin nearest to `rho`; exact halfway ties go to the
    /// lower index.
    pub fn rho_bin(&self, rho: f64) -> usize {
        let t = (rho + self.diagonal / 2.0) / self.rho_step();
        let idx = (t - 0.5).ceil();
        (idx.max(0.0) as usize).min(self.n_rho - 1)
    }
}

/// Builds the bin layout for `width`×`height` images.
pub fn build_grid(width: usize, height: usize, n_rho: usize, n_theta: usize) -> Result<HoughGrid> {
    if width < 2 || height < 2 {
        return Err(Error::Config(format!(
            "image size {width}x{height} too small, need at least 2x2"
        )));
    }
    if n_rho < 3 {
        return Err(Error::Config(format!("n_rho {n_rho} < 3")));
    }
    if n_theta < 2 {
        return Err(Error::Config(format!("n_theta {n_theta} < 2")));
    }
    let diagonal = ((width * width + height * height) as f64).sqrt();
    let theta_step = std::f64::consts::PI / n_theta as f64;
    let theta_samples = (0..n_theta).map(|k| k as f64 * theta_step).collect();
    let rho_step = diagonal / (n_rho - 1) as f64;
    let rho_centers = (0..n_rho)
        .map(|k| -diagonal / 2.0 + k as f64 * rho_step)
        .collect();
    Ok(HoughGrid {
        width,
        height,
        n_rho,
        n_theta,
        theta_samples,
        rho_centers,
        diagonal,
    })
}

/// Sparse pixel↔bin correspondence. Immutable after construction and safely
/// shareable across threads.
#[derive(Debug, Clone)]
pub struct VoteMask {
    grid: HoughGrid,
    /// ρ-bin index per (y, x, θ), flat `[H][W][n_theta]`.
    bin_of: Vec<u32>,
    /// CSR transpose: `voters[voter_offsets[b]..voter_offsets[b+1]]` lists
    /// pixel indices (y·W + x) voting into flat bin b = r·n_theta + t.
    voter_offsets: Vec<u32>,
    voters: Vec<u32>,
}

/// Builds the vote mask: each pixel, taken at its center relative to the
/// image center, votes for one ρ bin per sampled angle.
pub fn build_vote_mask(grid: &HoughGrid) -> VoteMask {
    let (w, h, nt, nr) = (grid.width, grid.height, grid.n_theta, grid.n_rho);
    let trig: Vec<(f64, f64)> = grid.theta_samples.iter().map(|&t| (t.cos(), t.sin())).collect();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;

    let mut bin_of = Vec::with_capacity(h * w * nt);
    for y in 0..h {
        let yc = y as f64 - cy;
        for x in 0..w {
            let xc = x as f64 - cx;
            for &(cos_t, sin_t) in &trig {
                let rho = xc * cos_t + yc * sin_t;
                bin_of.push(grid.rho_bin(rho) as u32);
            }
        }
    }

    // Transpose into CSR: counting pass, prefix sums, scatter pass.
    let n_bins = nr * nt;
    let mut counts = vec![0u32; n_bins];
    for (i, &r) in bin_of.iter().enumerate() {
        let t = i % nt;
        counts[r as usize * nt + t] += 1;
    }
    let mut voter_offsets = vec![0u32; n_bins + 1];
    for b in 0..n_bins {
        voter_offsets[b + 1] = voter_offsets[b] + counts[b];
    }
    let mut cursor: Vec<u32> = voter_offsets[..n_bins].to_vec();
    let mut voters = vec![0u32; bin_of.len()];
    for (i, &r) in bin_of.iter().enumerate() {
        let t = i % nt;
        let pixel = (i / nt) as u32;
        let b = r as usize * nt + t;
        voters[cursor[b] as usize] = pixel;
        cursor[b] += 1;
    }

    VoteMask {
        grid: grid.clone(),
        bin_of,
        voter_offsets,
        voters,
    }
}

impl VoteMask {
    pub fn grid(&self) -> &HoughGrid {
        &self.grid
    }

    /// ρ-bin index that pixel (x, y) votes into at angle index `t`.
    pub fn bin_of(&self, x: usize, y: usize, t: usize) -> usize {
        self.bin_of[(y * self.grid.width + x) * self.grid.n_theta + t] as usize
    }

    /// Pixel indices (y·W + x) voting into bin (r, t).
    pub fn voters_of(&self, r: usize, t: usize) -> &[u32] {
        let b = r * self.grid.n_theta + t;
        let lo = self.voter_offsets[b] as usize;
        let hi = self.voter_offsets[b + 1] as usize;
        &self.voters[lo..hi]
    }

    pub fn total_votes(&self) -> usize {
        self.voters.len()
    }

    fn check_image_shape(&self, shape: &[usize]) -> Result<usize> {
        if shape.len() != 3 || shape[0] != self.grid.height || shape[1] != self.grid.width {
            return Err(Error::Config(format!(
                "featuremap shape {shape:?} does not match {}x{} grid",
                self.grid.height, self.grid.width
            )));
        }
        Ok(shape[2])
    }

    fn check_hough_shape(&self, shape: &[usize]) -> Result<usize> {
        if shape.len() != 3 || shape[0] != self.grid.n_rho || shape[1] != self.grid.n_theta {
            return Err(Error::Config(format!(
                "Hough map shape {shape:?} does not match {}x{} bins",
                self.grid.n_rho, self.grid.n_theta
            )));
        }
        Ok(shape[2])
    }

    /// Accumulates image values into bins: out(b) = scale · Σ voters.
    /// Plumbing for the forward HT (scale 1/W) and the IHT backward
    /// (scale 1/Nθ).
    pub fn project<T: Float + std::ops::AddAssign>(&self, image: &[T], c: usize, scale: T, out: &mut [T]) {
        let nt = self.grid.n_theta;
        debug_assert_eq!(image.len(), self.grid.width * self.grid.height * c);
        debug_assert_eq!(out.len(), self.grid.n_rho * nt * c);
        for v in out.iter_mut() {
            *v = T::zero();
        }
        for (pixel, bins) in self.bin_of.chunks_exact(nt).enumerate() {
            let src = &image[pixel * c..(pixel + 1) * c];
            for (t, &r) in bins.iter().enumerate() {
                let o_base = (r as usize * nt + t) * c;
                let dst = &mut out[o_base..o_base + c];
                for (o, &s) in dst.iter_mut().zip(src) {
                    *o += s;
                }
            }
        }
        for v in out.iter_mut() {
            *v = *v * scale;
        }
    }

    /// Gathers bin values back to pixels: out(x,y) = scale · Σ_θ bins voted.
    /// Plumbing for the IHT (scale 1/Nθ) and the HT backward (scale 1/W).
    pub fn backproject<T: Float + std::ops::AddAssign>(&self, hough: &[T], c: usize, scale: T, out: &mut [T]) {
        let nt = self.grid.n_theta;
        debug_assert_eq!(hough.len(), self.grid.n_rho * nt * c);
        debug_assert_eq!(out.len(), self.grid.width * self.grid.height * c);
        for (pixel, bins) in self.bin_of.chunks_exact(nt).enumerate() {
            let dst = &mut out[pixel * c..(pixel + 1) * c];
            let mut acc = [T::zero(); 8];
            debug_assert!(c <= 8, "channel count above backprojection buffer");
            for (t, &r) in bins.iter().enumerate() {
                let i_base = (r as usize * nt + t) * c;
                let src = &hough[i_base..i_base + c];
                for (a, &s) in acc.iter_mut().zip(src) {
                    *a += s;
                }
            }
            for (o, a) in dst.iter_mut().zip(&acc) {
                *o = *a * scale;
            }
        }
    }
}

fn ht_scale<T: Float>(mask: &VoteMask) -> T {
    T::one() / T::from(mask.grid().width).unwrap()
}

fn iht_scale<T: Float>(mask: &VoteMask) -> T {
    T::one() / T::from(mask.grid().n_theta).unwrap()
}

/// Forward Hough transform of a `[H, W, C]` featuremap, channel-wise:
/// HT(ρ,θ,c) = (1/W) Σ over voters of F, per Eq. "HT = F·B" with width
/// normalization.
pub fn ht_forward(f: &Tensor, mask: &VoteMask) -> Result<Tensor> {
    let c = mask.check_image_shape(f.shape())?;
    let grid = mask.grid();
    let mut out = Tensor::zeros(&[grid.n_rho, grid.n_theta, c]);
    mask.project(f.data(), c, ht_scale::<f32>(mask), out.data_mut());
    Ok(out)
}

/// Inverse Hough transform: IHT(x,y,c) = (1/Nθ) Σ_θ HT(bin(x,y,θ), θ, c).
pub fn iht_forward(hmap: &Tensor, mask: &VoteMask) -> Result<Tensor> {
    let c = mask.check_hough_shape(hmap.shape())?;
    let grid = mask.grid();
    let mut out = Tensor::zeros(&[grid.height, grid.width, c]);
    mask.backproject(hmap.data(), c, iht_scale::<f32>(mask), out.data_mut());
    Ok(out)
}

/// Exact adjoint of [`ht_forward`]: backprojection without the 1/Nθ
/// normalization, carrying the forward 1/W factor instead.
pub fn ht_backward(grad_out: &Tensor, mask: &VoteMask) -> Result<Tensor> {
    let c = mask.check_hough_shape(grad_out.shape())?;
    let grid = mask.grid();
    let mut out = Tensor::zeros(&[grid.height, grid.width, c]);
    mask.backproject(grad_out.data(), c, ht_scale::<f32>(mask), out.data_mut());
    Ok(out)
}

/// Exact adjoint of [`iht_forward`]: scatter of grad/Nθ through the
/// transpose index.
pub fn iht_backward(grad_out: &Tensor, mask: &VoteMask) -> Result<Tensor> {
    let c = mask.check_image_shape(grad_out.shape())?;
    let grid = mask.grid();
    let mut out = Tensor::zeros(&[grid.n_rho, grid.n_theta, c]);
    mask.project(grad_out.data(), c, iht_scale::<f32>(mask), out.data_mut());
    Ok(out)
}

/// Reference HT by direct loop over pixels and angles, recomputing each
/// ρ assignment from trigonometry instead of the precomputed mask.
pub fn naive_ht_oracle(f: &Tensor, grid: &HoughGrid) -> Result<Tensor> {
    if f.shape().len() != 3 || f.shape()[0] != grid.height || f.shape()[1] != grid.width {
        return Err(Error::Config(format!(
            "featuremap shape {:?} does not match grid",
            f.shape()
        )));
    }
    let c = f.shape()[2];
    let (w, h, nt) = (grid.width, grid.height, grid.n_theta);
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut out = Tensor::zeros(&[grid.n_rho, nt, c]);
    let data = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            for (t, &theta) in grid.theta_samples.iter().enumerate() {
                let rho = (x as f64 - cx) * theta.cos() + (y as f64 - cy) * theta.sin();
                let r = grid.rho_bin(rho);
                for ch in 0..c {
                    data[(r * nt + t) * c + ch] += f.data()[(y * w + x) * c + ch];
                }
            }
        }
    }
    let scale = 1.0 / w as f32;
    for v in data.iter_mut() {
        *v *= scale;
    }
    Ok(out)
}

/// Reference IHT by direct loop, recomputing ρ assignments from trigonometry.
pub fn naive_iht_oracle(hmap: &Tensor, grid: &HoughGrid) -> Result<Tensor> {
    if hmap.shape().len() != 3 || hmap.shape()[0] != grid.n_rho || hmap.shape()[1] != grid.n_theta {
        return Err(Error::Config(format!(
            "Hough map shape {:?} does not match grid",
            hmap.shape()
        )));
    }
    let c = hmap.shape()[2];
    let (w, h, nt) = (grid.width, grid.height, grid.n_theta);
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut out = Tensor::zeros(&[h, w, c]);
    let data = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            for (t, &theta) in grid.theta_samples.iter().enumerate() {
                let rho = (x as f64 - cx) * theta.cos() + (y as f64 - cy) * theta.sin();
                let r = grid.rho_bin(rho);
                for ch in 0..c {
                    data[(y * w + x) * c + ch] += hmap.data()[(r * nt + t) * c + ch];
                }
            }
        }
    }
    let scale = 1.0 / nt as f32;
    for v in data.iter_mut() {
        *v *= scale;
    }
    Ok(out)
}

/// Writes the mask as text, one `x y theta_bin rho_bin` line per vote, for
/// diffing against reference implementations.
pub fn dump_mask(mask: &VoteMask, out: &mut impl Write) -> std::io::Result<()> {
    let grid = mask.grid();
    for y in 0..grid.height {
        for x in 0..grid.width {
            for t in 0..grid.n_theta {
                writeln!(out, "{x} {y} {t} {}", mask.bin_of(x, y, t))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_degenerate_sizes() {
        assert!(build_grid(1, 100, 183, 60).is_err());
        assert!(build_grid(100, 100, 2, 60).is_err());
        assert!(build_grid(100, 100, 183, 1).is_err());
    }

    #[test]
    fn paper_grid_dimensions() {
        let g = build_grid(128, 128, 183, 60).unwrap();
        assert!((g.diagonal - 181.019).abs() < 1e-3);
        assert!((g.rho_step() - 0.9946).abs() < 1e-4);
        // 183 bins cover the 128×128 diagonal of ~181 px.
        assert!(g.n_rho >= g.diagonal.ceil() as usize);

        let g = build_grid(100, 100, 183, 60).unwrap();
        assert!((g.diagonal - 141.421).abs() < 1e-3);
    }

    #[test]
    fn tiny_grid_theta_samples() {
        let g = build_grid(2, 2, 3, 2).unwrap();
        assert_eq!(g.theta_samples.len(), 2);
        assert!((g.theta_samples[0] - 0.0).abs() < 1e-12);
        assert!((g.theta_samples[1] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn rho_centers_symmetric_about_zero() {
        let g = build_grid(100, 100, 183, 60).unwrap();
        let n = g.rho_centers.len();
        for i in 0..n {
            assert!((g.rho_centers[i] + g.rho_centers[n - 1 - i]).abs() < 1e-9);
        }
        // Odd count: exact center bin at ρ=0.
        assert!(g.rho_centers[n / 2].abs() < 1e-9);
    }

    #[test]
    fn rho_bin_ties_go_to_lower_index() {
        let g = build_grid(100, 100, 183, 60).unwrap();
        let step = g.rho_step();
        // Exactly halfway between bins 10 and 11.
        let halfway = g.rho_centers[10] + step / 2.0;
        assert_eq!(g.rho_bin(halfway), 10);
        assert_eq!(g.rho_bin(halfway + 1e-9), 11);
        assert_eq!(g.rho_bin(g.rho_centers[42]), 42);
    }

    #[test]
    fn center_pixel_votes_rho_zero_for_all_angles() {
        // Odd-sized image: the center pixel has centered coordinates (0, 0).
        let g = build_grid(9, 9, 13, 8).unwrap();
        let mask = build_vote_mask(&g);
        let zero_bin = g.rho_bin(0.0);
        for t in 0..g.n_theta {
            assert_eq!(mask.bin_of(4, 4, t), zero_bin);
        }
    }

    #[test]
    fn per_pixel_vote_count_is_n_theta() {
        let g = build_grid(7, 5, 9, 4).unwrap();
        let mask = build_vote_mask(&g);
        assert_eq!(mask.total_votes(), 7 * 5 * 4);
        // Transpose consistency: rebuild the inverse index from bin_of and
        // compare against the CSR voter lists.
        let mut rebuilt = vec![Vec::new(); g.n_rho * g.n_theta];
        for y in 0..g.height {
            for x in 0..g.width {
                for t in 0..g.n_theta {
                    rebuilt[mask.bin_of(x, y, t) * g.n_theta + t].push((y * g.width + x) as u32);
                }
            }
        }
        for r in 0..g.n_rho {
            for t in 0..g.n_theta {
                assert_eq!(mask.voters_of(r, t), &rebuilt[r * g.n_theta + t][..]);
            }
        }
    }

    #[test]
    fn mask_matches_double_loop_reference() {
        // Independently coded reference for the 7×7 image, 9×4 grid.
        let g = build_grid(7, 7, 9, 4).unwrap();
        let mask = build_vote_mask(&g);
        let d = (98.0f64).sqrt();
        let step = d / 8.0;
        for y in 0..7 {
            for x in 0..7 {
                for t in 0..4 {
                    let theta = t as f64 * std::f64::consts::PI / 4.0;
                    let rho = (x as f64 - 3.0) * theta.cos() + (y as f64 - 3.0) * theta.sin();
                    let pos = (rho + d / 2.0) / step;
                    let want = (pos - 0.5).ceil().max(0.0) as usize;
                    assert_eq!(mask.bin_of(x, y, t), want.min(8), "pixel ({x},{y}) angle {t}");
                }
            }
        }
    }

    #[test]
    fn ht_of_zero_is_zero() {
        let g = build_grid(8, 8, 13, 6).unwrap();
        let mask = build_vote_mask(&g);
        let f = Tensor::zeros(&[8, 8, 2]);
        let ht = ht_forward(&f, &mask).unwrap();
        assert!(ht.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ht_of_center_delta() {
        let g = build_grid(9, 9, 13, 8).unwrap();
        let mask = build_vote_mask(&g);
        let mut f = Tensor::zeros(&[9, 9, 1]);
        f.data_mut()[(4 * 9 + 4)] = 1.0;
        let ht = ht_forward(&f, &mask).unwrap();
        let zero_bin = g.rho_bin(0.0);
        let mut nonzero = 0;
        for r in 0..g.n_rho {
            for t in 0..g.n_theta {
                let v = ht.data()[r * g.n_theta + t];
                if v != 0.0 {
                    nonzero += 1;
                    assert_eq!(r, zero_bin);
                    assert!((v - 1.0 / 9.0).abs() < 1e-7);
                }
            }
        }
        assert_eq!(nonzero, g.n_theta);
    }

    #[test]
    fn iht_of_ones_is_ones() {
        let g = build_grid(8, 6, 13, 6).unwrap();
        let mask = build_vote_mask(&g);
        let h = Tensor::from_vec(&[13, 6, 1], vec![1.0; 13 * 6]).unwrap();
        let img = iht_forward(&h, &mask).unwrap();
        for &v in img.data() {
            assert!((v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn iht_of_hot_bin_is_line_stripe() {
        let g = build_grid(15, 15, 21, 8).unwrap();
        let mask = build_vote_mask(&g);
        // Hot bin: theta index 0 (vertical-normal family), rho = 0.
        let (r, t) = (g.rho_bin(0.0), 0);
        let mut h = Tensor::zeros(&[21, 8, 1]);
        h.data_mut()[r * 8 + t] = 1.0;
        let img = iht_forward(&h, &mask).unwrap();
        let expect = 1.0 / 8.0;
        for y in 0..15 {
            for x in 0..15 {
                let v = img.data()[y * 15 + x];
                if mask.bin_of(x, y, t) == r {
                    assert!((v - expect).abs() < 1e-7);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
        // The stripe is the x=center column: θ=0 means ρ = x - cx.
        let on: Vec<usize> = (0..15 * 15)
            .filter(|&p| img.data()[p] > 0.0)
            .map(|p| p % 15)
            .collect();
        assert!(!on.is_empty());
        assert!(on.iter().all(|&x| x == 7));
    }

    #[test]
    fn backprojection_peaks_at_delta() {
        let g = build_grid(11, 11, 15, 8).unwrap();
        let mask = build_vote_mask(&g);
        let mut f = Tensor::zeros(&[11, 11, 1]);
        f.data_mut()[3 * 11 + 8] = 1.0;
        let rt = iht_forward(&ht_forward(&f, &mask).unwrap(), &mask).unwrap();
        let argmax = rt
            .data()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 3 * 11 + 8);
    }

    #[test]
    fn fast_path_matches_naive_oracles() {
        let g = build_grid(16, 16, 23, 12).unwrap();
        let mask = build_vote_mask(&g);
        let mut seed = 5u64;
        let mut next = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((seed >> 33) as f32 / (1u64 << 31) as f32) - 1.0
        };
        let f = Tensor::from_vec(&[16, 16, 3], (0..16 * 16 * 3).map(|_| next()).collect()).unwrap();
        let fast = ht_forward(&f, &mask).unwrap();
        let slow = naive_ht_oracle(&f, &g).unwrap();
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
        let hm =
            Tensor::from_vec(&[23, 12, 3], (0..23 * 12 * 3).map(|_| next()).collect()).unwrap();
        let fast = iht_forward(&hm, &mask).unwrap();
        let slow = naive_iht_oracle(&hm, &g).unwrap();
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn adjoint_identity_ht() {
        // ⟨ht(F), G⟩ == ⟨F, ht_backward(G)⟩ and the iht analogue.
        let g = build_grid(12, 10, 17, 7).unwrap();
        let mask = build_vote_mask(&g);
        let mut seed = 11u64;
        let mut next = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((seed >> 33) as f32 / (1u64 << 31) as f32) - 1.0
        };
        for _ in 0..10 {
            let f =
                Tensor::from_vec(&[10, 12, 2], (0..240).map(|_| next()).collect()).unwrap();
            let gt =
                Tensor::from_vec(&[17, 7, 2], (0..17 * 7 * 2).map(|_| next()).collect()).unwrap();
            let lhs: f64 = ht_forward(&f, &mask)
                .unwrap()
                .data()
                .iter()
                .zip(gt.data())
                .map(|(a, b)| (*a as f64) * (*b as f64))
                .sum();
            let rhs: f64 = f
                .data()
                .iter()
                .zip(ht_backward(&gt, &mask).unwrap().data())
                .map(|(a, b)| (*a as f64) * (*b as f64))
                .sum();
            let denom = lhs.abs().max(rhs.abs()).max(1e-12);
            assert!((lhs - rhs).abs() / denom < 1e-5, "ht adjoint: {lhs} vs {rhs}");

            let lhs2: f64 = iht_forward(&gt, &mask)
                .unwrap()
                .data()
                .iter()
                .zip(f.data())
                .map(|(a, b)| (*a as f64) * (*b as f64))
                .sum();
            let rhs2: f64 = gt
                .data()
                .iter()
                .zip(iht_backward(&f, &mask).unwrap().data())
                .map(|(a, b)| (*a as f64) * (*b as f64))
                .sum();
            let denom = lhs2.abs().max(rhs2.abs()).max(1e-12);
            assert!((lhs2 - rhs2).abs() / denom < 1e-5, "iht adjoint: {lhs2} vs {rhs2}");
        }
    }

    #[test]
    fn vote_conservation() {
        // Every pixel votes n_theta times, so Σ ht(F) == (Nθ/W)·ΣF.
        let g = build_grid(14, 9, 19, 11).unwrap();
        let mask = build_vote_mask(&g);
        let mut seed = 21u64;
        let mut next = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((seed >> 33) as f32 / (1u64 << 31) as f32).abs()
        };
        let f = Tensor::from_vec(&[9, 14, 1], (0..126).map(|_| next()).collect()).unwrap();
        let ht = ht_forward(&f, &mask).unwrap();
        let total: f64 = ht.data().iter().map(|&v| v as f64).sum();
        let per_pixel: f64 = f.data().iter().map(|&v| v as f64).sum();
        let want = per_pixel * g.n_theta as f64 / g.width as f64;
        assert!((total - want).abs() < 1e-4 * want.abs().max(1.0));
    }

    #[test]
    fn zero_gradient_stays_zero() {
        let g = build_grid(8, 8, 13, 6).unwrap();
        let mask = build_vote_mask(&g);
        let z = Tensor::zeros(&[13, 6, 1]);
        assert!(ht_backward(&z, &mask).unwrap().data().iter().all(|&v| v == 0.0));
        let z = Tensor::zeros(&[8, 8, 1]);
        assert!(iht_backward(&z, &mask).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let g = build_grid(8, 8, 13, 6).unwrap();
        let mask = build_vote_mask(&g);
        let bad = Tensor::zeros(&[9, 8, 1]);
        assert!(ht_forward(&bad, &mask).is_err());
        let bad = Tensor::zeros(&[13, 7, 1]);
        assert!(iht_forward(&bad, &mask).is_err());
    }

    #[test]
    fn mask_dump_format() {
        let g = build_grid(2, 2, 3, 2).unwrap();
        let mask = build_vote_mask(&g);
        let mut buf = Vec::new();
        dump_mask(&mask, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2 * 2 * 2);
        assert_eq!(lines[0], format!("0 0 0 {}", mask.bin_of(0, 0, 0)));
    }
}
