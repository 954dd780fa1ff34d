//! The residual HT-IHT block: HT, Hough-domain filtering, IHT, channel
//! concatenation — with five selectable filtering variants and the
//! sign-inverted Laplacian-of-Gaussian filter initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Which filtering runs between HT and IHT.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockVariant {
    /// No filtering: the branch is a pure iht(ht(F)) prior.
    NoConv,
    /// One dense support×1 convolution over the offsets.
    Plain1D,
    /// One channelwise support×1 convolution, Laplacian-initialized.
    Laplacian1D,
    /// Laplacian-initialized channelwise conv plus two dense convolutions
    /// merging and reducing the channels.
    Full,
    /// Three standard 3×3 convolutions on the Hough map.
    Spatial3x3,
}

impl BlockVariant {
    pub const ALL: [BlockVariant; 5] = [
        BlockVariant::NoConv,
        BlockVariant::Plain1D,
        BlockVariant::Laplacian1D,
        BlockVariant::Full,
        BlockVariant::Spatial3x3,
    ];

    /// Stable index 0..4 used in configuration and naming.
    pub fn index(self) -> usize {
        match self {
            BlockVariant::NoConv => 0,
            BlockVariant::Plain1D => 1,
            BlockVariant::Laplacian1D => 2,
            BlockVariant::Full => 3,
            BlockVariant::Spatial3x3 => 4,
        }
    }

    pub fn from_index(i: usize) -> Result<BlockVariant> {
        BlockVariant::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Config(format!("block variant index {i} outside 0..=4")))
    }
}

/// Shape of one HT-IHT block.
#[derive(Debug, Clone)]
pub struct BlockConfig {
    pub variant: BlockVariant,
    /// Filter length of the 1D Hough-domain convolutions.
    pub support: usize,
    pub channels_in: usize,
    pub channels_mid: usize,
    pub channels_out: usize,
    /// Range the Laplacian scales σ are drawn from, in ρ-bin units.
    pub sigma_range: (f64, f64),
}

impl BlockConfig {
    pub fn new(variant: BlockVariant) -> BlockConfig {
        BlockConfig {
            variant,
            support: 9,
            channels_in: 4,
            channels_mid: 2,
            channels_out: 1,
            sigma_range: (0.5, 2.5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.support % 2 == 0 || self.support < 3 {
            return Err(Error::Config(format!(
                "filter support {} must be odd and at least 3",
                self.support
            )));
        }
        if self.channels_in == 0 || self.channels_mid == 0 || self.channels_out == 0 {
            return Err(Error::Config("block channel counts must be positive".into()));
        }
        if self.variant == BlockVariant::Full && self.channels_mid > self.channels_in {
            return Err(Error::Config(format!(
                "Full variant reduces channels: channels_mid {} > channels_in {}",
                self.channels_mid, self.channels_in
            )));
        }
        if self.sigma_range.0 <= 0.0 || self.sigma_range.1 < self.sigma_range.0 {
            return Err(Error::Config(format!(
                "invalid sigma range {:?}",
                self.sigma_range
            )));
        }
        Ok(())
    }

    /// Channel count of the Hough branch after filtering.
    pub fn branch_channels(&self) -> usize {
        match self.variant {
            BlockVariant::Full => self.channels_out,
            _ => self.channels_in,
        }
    }

    /// Channel count of the concatenated block output.
    pub fn output_channels(&self) -> usize {
        self.channels_in + self.branch_channels()
    }
}

/// One sign-inverted Laplacian-of-Gaussian filter: taps of −g″(ρ, σ) at
/// integer offsets, shifted to zero sum and scaled to unit L1 norm.
#[derive(Debug, Clone)]
pub struct LaplacianInit {
    pub sigma: f64,
    pub support: usize,
    pub taps: Vec<f64>,
}

/// −∂²g/∂ρ² for a unit-area 1D Gaussian of scale `sigma`.
fn neg_gaussian_second_derivative(rho: f64, sigma: f64) -> f64 {
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let g = norm * (-rho * rho / (2.0 * sigma * sigma)).exp();
    g * (sigma * sigma - rho * rho) / sigma.powi(4)
}

impl LaplacianInit {
    pub fn new(sigma: f64, support: usize) -> Result<LaplacianInit> {
        if sigma <= 0.0 {
            return Err(Error::Config(format!("sigma {sigma} must be positive")));
        }
        if support % 2 == 0 || support < 3 {
            return Err(Error::Config(format!(
                "support {support} must be odd and at least 3"
            )));
        }
        let half = (support / 2) as i64;
        let mut taps: Vec<f64> = (-half..=half)
            .map(|i| neg_gaussian_second_derivative(i as f64, sigma))
            .collect();
        // Clipping to finite support breaks the exact zero integral; restore
        // zero sum, then scale to unit L1.
        let mean = taps.iter().sum::<f64>() / support as f64;
        for t in taps.iter_mut() {
            *t -= mean;
        }
        let l1: f64 = taps.iter().map(|t| t.abs()).sum();
        for t in taps.iter_mut() {
            *t /= l1;
        }
        Ok(LaplacianInit {
            sigma,
            support,
            taps,
        })
    }
}

/// Draws `count` filters with scales sampled uniformly from `sigma_range`.
pub fn init_laplacian_filters(
    count: usize,
    support: usize,
    sigma_range: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LaplacianInit>> {
    if sigma_range.0 <= 0.0 {
        return Err(Error::Config(format!(
            "sigma range lower bound {} must be positive",
            sigma_range.0
        )));
    }
    if sigma_range.1 < sigma_range.0 {
        return Err(Error::Config(format!("empty sigma range {sigma_range:?}")));
    }
    (0..count)
        .map(|_| {
            let sigma = if sigma_range.1 > sigma_range.0 {
                rng.gen_range(sigma_range.0..sigma_range.1)
            } else {
                sigma_range.0
            };
            LaplacianInit::new(sigma, support)
        })
        .collect()
}
