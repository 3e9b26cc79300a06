use crate::error::{Error, Result};
use crate::ingest::PixelHistogram;
use crate::pixel::Codebook;

use super::CodebookBuilder;

fn check_k(k: usize) -> Result<()> {
    if (2..=256).contains(&k) {
        Ok(())
    } else {
        Err(Error::config(format!("binning needs 2 <= k <= 256, got {k}")))
    }
}

/// Level index `floor((k-1) * v/255 + 0.5)` in exact integer arithmetic.
#[inline]
pub fn binning_level_index(v: u8, k: usize) -> usize {
    let km1 = (k - 1) as u32;
    ((2 * km1 * v as u32 + 255) / 510) as usize
}

/// Lattice value of level `t`, i.e. `255 * t / (k-1)` rounded half up.
#[inline]
pub fn binning_level(t: usize, k: usize) -> u8 {
    let km1 = (k - 1) as u32;
    ((510 * t as u32 + km1) / (2 * km1)) as u8
}

pub fn binning_levels(k: usize) -> Result<Vec<u8>> {
    check_k(k)?;
    Ok((0..k).map(|t| binning_level(t, k)).collect())
}

/// Per-channel color-depth reduction levels. The vector codebook of size
/// `k^C` stays implicit.
pub fn binning_codes(k: usize, channels: usize) -> Result<Codebook> {
    Codebook::from_levels(binning_levels(k)?, channels)
}

#[derive(Clone, Debug)]
pub struct BinningBuilder {
    k: usize,
}

impl BinningBuilder {
    pub fn new(k: usize) -> Result<Self> {
        check_k(k)?;
        Ok(BinningBuilder { k })
    }
}

impl CodebookBuilder for BinningBuilder {
    fn name(&self) -> &'static str {
        "binning"
    }

    fn build(&self, hist: &PixelHistogram) -> Result<Codebook> {
        binning_codes(self.k, hist.channels())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_examples() {
        assert_eq!(binning_levels(2).unwrap(), vec![0, 255]);
        assert_eq!(
            binning_levels(8).unwrap(),
            vec![0, 36, 73, 109, 146, 182, 219, 255]
        );
        assert_eq!(
            binning_levels(256).unwrap(),
            (0..=255u8).collect::<Vec<_>>()
        );
    }

    #[test]
    fn rejects_small_k() {
        assert!(binning_codes(1, 1).is_err());
        assert!(binning_codes(257, 1).is_err());
    }

    #[test]
    fn matches_real_formula() {
        for k in [2usize, 3, 5, 8, 16, 32, 100, 256] {
            for v in 0..=255u8 {
                let x = v as f64 / 255.0;
                let t = ((k - 1) as f64 * x + 0.5).floor() as usize;
                // Skip pixels sitting on a rounding boundary within float noise.
                let frac = ((k - 1) as f64 * x + 0.5).fract();
                if frac.min(1.0 - frac) < 1e-9 {
                    continue;
                }
                assert_eq!(binning_level_index(v, k), t, "k={k} v={v}");
            }
            for t in 0..k {
                let exact = 255.0 * t as f64 / (k - 1) as f64;
                assert!((binning_level(t, k) as f64 - exact).abs() <= 0.5);
                assert_eq!(binning_level_index(binning_level(t, k), k), t);
            }
        }
    }

    #[test]
    fn no_lattice_value_sits_on_a_midpoint() {
        // 2(k-1)v is even and 255(2n+1) is odd, so (k-1)v/255 is never n + 1/2.
        for k in 2..=256usize {
            for v in 0..=255u32 {
                assert_ne!((2 * (k as u32 - 1) * v) % 510, 255);
            }
        }
        assert_eq!(binning_level_index(128, 2), 1);
        assert_eq!(binning_level_index(127, 2), 0);
    }
}
