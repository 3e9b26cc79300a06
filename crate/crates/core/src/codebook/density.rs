//! Greedy mode selection on the pixel histogram.
//!
//! Repeatedly takes the most frequent remaining lattice value as a code and
//! discards every value within ℓ∞ distance `r` of it. With the identity kernel
//! the density of a value is just its count, so the greedy order is fixed by
//! one sort of the non-empty cells.

use crate::error::{Error, Result};
use crate::ingest::PixelHistogram;
use crate::pixel::{Codebook, CodebookSource, DistanceMetric, Pixel, LEVELS};

use super::CodebookBuilder;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Kernel {
    #[default]
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityConfig {
    pub k: usize,
    /// Removal radius in lattice units.
    pub r: f64,
    pub kernel: Kernel,
}

impl DensityConfig {
    pub fn new(k: usize, r: f64) -> Result<Self> {
        if k < 1 {
            return Err(Error::config("density codebook needs k >= 1"));
        }
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::config(format!("removal radius must be >= 0, got {r}")));
        }
        Ok(DensityConfig {
            k,
            r,
            kernel: Kernel::Identity,
        })
    }
}

struct RemovedSet {
    bits: Vec<u64>,
}

impl RemovedSet {
    fn new(size: usize) -> Self {
        RemovedSet {
            bits: vec![0; size.div_ceil(64)],
        }
    }

    #[inline]
    fn contains(&self, i: usize) -> bool {
        self.bits[i >> 6] & (1 << (i & 63)) != 0
    }

    #[inline]
    fn insert(&mut self, i: usize) {
        self.bits[i >> 6] |= 1 << (i & 63);
    }
}

fn clip_range(center: u8, radius: usize) -> std::ops::RangeInclusive<usize> {
    let c = center as usize;
    c.saturating_sub(radius)..=(c + radius).min(LEVELS - 1)
}

fn remove_ball(removed: &mut RemovedSet, center: &Pixel, radius: usize) {
    if center.channels() == 1 {
        for v in clip_range(center.values()[0], radius) {
            removed.insert(v);
        }
        return;
    }
    let [r, g, b] = [center.values()[0], center.values()[1], center.values()[2]];
    for x in clip_range(r, radius) {
        for y in clip_range(g, radius) {
            let row = (x << 16) | (y << 8);
            for z in clip_range(b, radius) {
                removed.insert(row | z);
            }
        }
    }
}

/// Greedy density codebook. Returns fewer than `k` codes, marked short, when
/// every present value has been removed first.
pub fn density_codes(hist: &PixelHistogram, cfg: &DensityConfig) -> Result<Codebook> {
    if hist.total_count() == 0 {
        return Err(Error::config("density codebook needs a non-empty histogram"));
    }
    let channels = hist.channels();
    // Identity kernel: the density of v is h[v]. Order by count, then lattice index.
    let mut order: Vec<(u64, u32)> = hist
        .counts()
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(i, &n)| (n, i as u32))
        .collect();
    order.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));

    // ‖z - c‖∞ <= r on the lattice iff ‖z - c‖∞ <= floor(r).
    let radius = cfg.r.floor() as usize;
    let mut removed = RemovedSet::new(hist.counts().len());
    let mut codes = Vec::with_capacity(cfg.k);
    let mut cursor = 0;
    while codes.len() < cfg.k {
        while cursor < order.len() && removed.contains(order[cursor].1 as usize) {
            cursor += 1;
        }
        let Some(&(_, index)) = order.get(cursor) else {
            break;
        };
        let code = Pixel::from_lattice_index(index as usize, channels);
        remove_ball(&mut removed, &code, radius);
        codes.push(code);
    }

    let short = codes.len() < cfg.k;
    if short {
        log::warn!(
            "histogram exhausted after {} of {} codes (r = {})",
            codes.len(),
            cfg.k,
            cfg.r
        );
    }
    let cb = Codebook::new(
        codes,
        DistanceMetric::Linf,
        CodebookSource::Density { k: cfg.k, r: cfg.r },
    )?;
    Ok(if short { cb.mark_short() } else { cb })
}

#[derive(Clone, Debug)]
pub struct DensityBuilder(pub DensityConfig);

impl CodebookBuilder for DensityBuilder {
    fn name(&self) -> &'static str {
        "density"
    }

    fn build(&self, hist: &PixelHistogram) -> Result<Codebook> {
        density_codes(hist, &self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pixel::distance;
    use proptest::prelude::*;

    fn example_hist() -> PixelHistogram {
        PixelHistogram::from_counts(
            1,
            &[(Pixel::gray(0), 5), (Pixel::gray(10), 3), (Pixel::gray(100), 4)],
        )
        .unwrap()
    }

    /// Literal transcription of the greedy loop: recount the surviving pixel
    /// multiset each round and filter it by distance.
    fn naive_greedy(pixels: &[Pixel], k: usize, r: f64) -> Vec<Pixel> {
        let mut pool = pixels.to_vec();
        let mut codes = Vec::new();
        for _ in 0..k {
            if pool.is_empty() {
                break;
            }
            let mut counts = std::collections::BTreeMap::new();
            for p in &pool {
                *counts.entry(p.lattice_index()).or_insert(0u64) += 1;
            }
            let (&best, _) = counts
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .unwrap();
            let code = Pixel::from_lattice_index(best, pool[0].channels());
            pool.retain(|p| distance(p, &code, DistanceMetric::Linf).unwrap() > r);
            codes.push(code);
        }
        codes
    }

    #[test]
    fn examples() {
        let h = example_hist();
        let cb = density_codes(&h, &DensityConfig::new(2, 20.0).unwrap()).unwrap();
        assert_eq!(cb.codes(), &[Pixel::gray(0), Pixel::gray(100)]);
        assert!(!cb.is_short());

        let cb = density_codes(&h, &DensityConfig::new(1, 20.0).unwrap()).unwrap();
        assert_eq!(cb.codes(), &[Pixel::gray(0)]);

        let cb = density_codes(&h, &DensityConfig::new(3, 200.0).unwrap()).unwrap();
        assert_eq!(cb.codes(), &[Pixel::gray(0)]);
        assert!(cb.is_short());
    }

    #[test]
    fn ties_break_to_smallest_index() {
        let h = PixelHistogram::from_counts(1, &[(Pixel::gray(40), 2), (Pixel::gray(7), 2)]).unwrap();
        let cb = density_codes(&h, &DensityConfig::new(1, 0.0).unwrap()).unwrap();
        assert_eq!(cb.codes(), &[Pixel::gray(7)]);
    }

    #[test]
    fn rgb_removal_is_a_box() {
        let h = PixelHistogram::from_counts(
            3,
            &[
                (Pixel::rgb(10, 10, 10), 9),
                (Pixel::rgb(14, 6, 13), 8),
                (Pixel::rgb(15, 10, 10), 7),
            ],
        )
        .unwrap();
        let cb = density_codes(&h, &DensityConfig::new(3, 4.5).unwrap()).unwrap();
        assert_eq!(cb.codes(), &[Pixel::rgb(10, 10, 10), Pixel::rgb(15, 10, 10)]);
        assert!(cb.is_short());
    }

    #[test]
    fn rejects_empty_histogram_and_bad_radius() {
        let h = PixelHistogram::empty(1).unwrap();
        assert!(density_codes(&h, &DensityConfig::new(1, 0.0).unwrap()).is_err());
        assert!(DensityConfig::new(1, -1.0).is_err());
        assert!(DensityConfig::new(0, 1.0).is_err());
    }

    fn small_rgb() -> impl Strategy<Value = Pixel> {
        (0u8..24, 0u8..24, 0u8..24).prop_map(|(r, g, b)| Pixel::rgb(r, g, b))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn matches_naive_and_separates(
            pixels in proptest::collection::vec(small_rgb(), 1..200),
            k in 1usize..8,
            r in 0.0f64..10.0,
        ) {
            let h = PixelHistogram::from_pixels(3, pixels.iter().copied()).unwrap();
            let cb = density_codes(&h, &DensityConfig::new(k, r).unwrap()).unwrap();
            prop_assert_eq!(cb.codes().to_vec(), naive_greedy(&pixels, k, r));
            let codes = cb.codes();
            for i in 0..codes.len() {
                for j in 0..i {
                    prop_assert!(distance(&codes[i], &codes[j], DistanceMetric::Linf).unwrap() > r);
                }
            }
            let mode = h.counts().iter().max().copied().unwrap();
            prop_assert_eq!(h.count(&codes[0]), mode);
        }

        #[test]
        fn grayscale_matches_naive(
            pixels in proptest::collection::vec(any::<u8>().prop_map(Pixel::gray), 1..300),
            k in 1usize..6,
            r in 0.0f64..60.0,
        ) {
            let h = PixelHistogram::from_pixels(1, pixels.iter().copied()).unwrap();
            let cb = density_codes(&h, &DensityConfig::new(k, r).unwrap()).unwrap();
            prop_assert_eq!(cb.codes().to_vec(), naive_greedy(&pixels, k, r));
        }
    }
}
