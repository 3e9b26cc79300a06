//! The preprocessing map `T` and its smooth surrogate `g`.
//!
//! `T` is either per-channel color-depth reduction (`⌊(k−1)x + 0.5⌋/(k−1)` on
//! the unit scale, done here in exact integer arithmetic) or nearest-code
//! replacement against a vector codebook. Both act pixel by pixel.

use crate::codebook::{binning_level, binning_level_index, binning_levels};
use crate::error::{Error, Result};
use crate::pixel::{check_channels, Codebook, Image, LabeledDataset, Pixel, LEVELS};

#[derive(Clone, Debug)]
enum Mode {
    Binning { k: usize },
    Codebook(Codebook),
}

/// A pixelwise discretization map.
#[derive(Clone, Debug)]
pub struct Discretizer {
    mode: Mode,
    channels: usize,
    /// Outcome index per channel value: binning levels, or nearest codes of a
    /// grayscale codebook.
    scalar_table: Option<Vec<u16>>,
}

impl Discretizer {
    pub fn binning(k: usize, channels: usize) -> Result<Self> {
        binning_levels(k)?;
        check_channels(channels)?;
        let table = (0..LEVELS)
            .map(|v| binning_level_index(v as u8, k) as u16)
            .collect();
        Ok(Discretizer {
            mode: Mode::Binning { k },
            channels,
            scalar_table: Some(table),
        })
    }

    /// Binning codebooks dispatch to the per-channel formula; everything else
    /// uses nearest-code replacement.
    pub fn from_codebook(cb: Codebook) -> Result<Self> {
        if cb.is_per_channel() {
            return Discretizer::binning(cb.len(), cb.channels());
        }
        let channels = cb.channels();
        let scalar_table = (channels == 1).then(|| {
            (0..LEVELS)
                .map(|v| cb.nearest_key(&Pixel::gray(v as u8)).0 as u16)
                .collect()
        });
        Ok(Discretizer {
            mode: Mode::Codebook(cb),
            channels,
            scalar_table,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of codes `k` (binning levels or codewords).
    pub fn num_codes(&self) -> usize {
        match &self.mode {
            Mode::Binning { k } => *k,
            Mode::Codebook(cb) => cb.len(),
        }
    }

    /// Number of distinct pixel outputs.
    pub fn num_outcomes(&self) -> usize {
        match &self.mode {
            Mode::Binning { k } => k.pow(self.channels as u32),
            Mode::Codebook(cb) => cb.len(),
        }
    }

    pub fn is_binning(&self) -> bool {
        matches!(self.mode, Mode::Binning { .. })
    }

    pub fn codebook(&self) -> Option<&Codebook> {
        match &self.mode {
            Mode::Codebook(cb) => Some(cb),
            Mode::Binning { .. } => None,
        }
    }

    /// Digest of the codebook behind this map; binning hashes its level set.
    pub fn digest(&self) -> String {
        match &self.mode {
            Mode::Codebook(cb) => cb.digest(),
            Mode::Binning { k } => crate::codebook::binning_codes(*k, self.channels)
                .map(|cb| cb.digest())
                .unwrap_or_default(),
        }
    }

    /// Binning level index of one channel value.
    #[inline]
    pub(crate) fn level_of(&self, v: u8) -> usize {
        match &self.mode {
            Mode::Binning { k } => binning_level_index(v, *k),
            Mode::Codebook(_) => unreachable!("level_of on a vector codebook"),
        }
    }

    /// Index of the output of `p`; for binning the mixed-radix combination of
    /// per-channel level indices (first channel most significant).
    #[inline]
    pub fn outcome_index(&self, p: &Pixel) -> usize {
        if let Some(table) = &self.scalar_table {
            if self.channels == 1 || self.is_binning() {
                let k = self.num_codes();
                return p
                    .values()
                    .iter()
                    .fold(0, |acc, &v| acc * k + table[v as usize] as usize);
            }
        }
        match &self.mode {
            Mode::Codebook(cb) => cb.nearest_key(p).0,
            Mode::Binning { .. } => unreachable!(),
        }
    }

    pub fn outcome_pixel(&self, index: usize) -> Pixel {
        match &self.mode {
            Mode::Codebook(cb) => cb.codes()[index],
            Mode::Binning { k } => {
                let k = *k;
                if self.channels == 1 {
                    Pixel::gray(binning_level(index, k))
                } else {
                    Pixel::rgb(
                        binning_level(index / (k * k), k),
                        binning_level((index / k) % k, k),
                        binning_level(index % k, k),
                    )
                }
            }
        }
    }

    #[inline]
    pub fn apply(&self, p: &Pixel) -> Pixel {
        self.outcome_pixel(self.outcome_index(p))
    }

    fn check(&self, img: &Image) -> Result<()> {
        if img.channels() != self.channels {
            return Err(Error::structural(format!(
                "image has {} channels, discretizer expects {}",
                img.channels(),
                self.channels
            )));
        }
        Ok(())
    }

    pub fn discretize_image(&self, img: &Image) -> Result<Image> {
        self.check(img)?;
        let mut out = img.clone();
        if let (Some(table), true) = (&self.scalar_table, self.is_binning() || self.channels == 1) {
            // Map each channel byte through a value table.
            let lut: Vec<u8> = if self.is_binning() {
                (0..LEVELS)
                    .map(|v| binning_level(table[v] as usize, self.num_codes()))
                    .collect()
            } else {
                table
                    .iter()
                    .map(|&i| self.outcome_pixel(i as usize).values()[0])
                    .collect()
            };
            let data: Vec<u8> = img.data().iter().map(|&v| lut[v as usize]).collect();
            return Image::new(img.height(), img.width(), img.channels(), data);
        }
        for i in 0..img.num_pixels() {
            out.set_pixel(i, self.apply(&img.pixel(i)));
        }
        Ok(out)
    }

    pub fn discretize_dataset(&self, ds: &LabeledDataset) -> Result<LabeledDataset> {
        use rayon::prelude::*;
        let images = ds
            .images
            .par_iter()
            .map(|im| self.discretize_image(im))
            .collect::<Result<Vec<_>>>()?;
        LabeledDataset::new(images, ds.labels.clone(), ds.num_classes)
    }
}

pub fn discretize_image(img: &Image, d: &Discretizer) -> Result<Image> {
    d.discretize_image(img)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SurrogateScope {
    /// Scalar formula on each channel against the binning levels.
    PerChannel,
    /// Whole-pixel formula using ℓ∞ distance to each vector codeword.
    PerPixelVector,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurrogateConfig {
    /// Softmin temperature in unit-scale distance.
    pub alpha: f64,
    pub scope: SurrogateScope,
}

impl SurrogateConfig {
    pub fn new(alpha: f64, scope: SurrogateScope) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::config(format!("surrogate alpha must be > 0, got {alpha}")));
        }
        Ok(SurrogateConfig { alpha, scope })
    }
}

/// Softmin weights `exp(-alpha * d_t)` normalised, shifted by the minimum
/// distance so large `alpha` does not underflow.
fn softmin_weights(distances: &[f64], alpha: f64) -> Vec<f64> {
    let dmin = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = distances.iter().map(|&d| (-alpha * (d - dmin)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// `g(x) = Σ c_t e^{-α|x - c_t|} / Σ e^{-α|x - c_t|}` for a unit-scale scalar.
pub fn surrogate_scalar(x: f64, levels: &[f64], alpha: f64) -> f64 {
    let d: Vec<f64> = levels.iter().map(|&c| (x - c).abs()).collect();
    softmin_weights(&d, alpha)
        .iter()
        .zip(levels)
        .map(|(w, c)| w * c)
        .sum()
}

/// Surrogate of one lattice pixel, in unit scale (lattice value / 255).
pub fn surrogate_value(p: &Pixel, codes: &Codebook, cfg: &SurrogateConfig) -> Result<Vec<f64>> {
    if p.channels() != codes.channels() {
        return Err(Error::structural("pixel and codebook channel counts differ"));
    }
    let unit = |v: u8| v as f64 / 255.0;
    match cfg.scope {
        SurrogateScope::PerChannel => {
            if !codes.is_per_channel() && codes.channels() != 1 {
                return Err(Error::config(
                    "per-channel surrogate needs scalar levels or a grayscale codebook",
                ));
            }
            // Binning levels are t/(k-1) exactly; the stored bytes are rounded.
            let levels: Vec<f64> = if codes.is_per_channel() {
                let k = codes.len();
                (0..k).map(|t| t as f64 / (k - 1) as f64).collect()
            } else {
                codes.codes().iter().map(|c| unit(c.values()[0])).collect()
            };
            Ok(p.values()
                .iter()
                .map(|&v| surrogate_scalar(unit(v), &levels, cfg.alpha))
                .collect())
        }
        SurrogateScope::PerPixelVector => {
            if codes.is_per_channel() && codes.channels() != 1 {
                return Err(Error::config("vector surrogate needs a vector codebook"));
            }
            let d: Vec<f64> = codes
                .codes()
                .iter()
                .map(|c| {
                    p.values()
                        .iter()
                        .zip(c.values())
                        .map(|(&a, &b)| (unit(a) - unit(b)).abs())
                        .fold(0.0, f64::max)
                })
                .collect();
            let w = softmin_weights(&d, cfg.alpha);
            Ok((0..p.channels())
                .map(|ch| {
                    w.iter()
                        .zip(codes.codes())
                        .map(|(wt, c)| wt * unit(c.values()[ch]))
                        .sum()
                })
                .collect())
        }
    }
}
