//! Dataset-difficulty diagnostics for a discretization `T` under an ℓ∞ budget.
//!
//! For each pixel `x[i]`, `C_i = {T(z) : ‖z − x[i]‖∞ <= eps}` is the set of
//! outputs an attacker can reach. The per-image measure
//! `(1/d) Σ_i log_k |C_i|` says how fragmented the ε-ball is under `T`.

mod sat;

pub use sat::{
    lattice_radius, neighborhood_map, neighborhood_map_with, value_histogram_csv, value_histogram_rows,
    NeighborhoodMap, SummedAreaTable,
};

use rayon::prelude::*;
use serde::Serialize;

use crate::discretize::Discretizer;
use crate::error::{Error, Result};
use crate::ingest::{build_histogram, PixelHistogram};
use crate::pixel::{Codebook, Image, LabeledDataset, Pixel, LEVELS};

fn channel_range(v: u8, radius: usize) -> (usize, usize) {
    let v = v as usize;
    (v.saturating_sub(radius), (v + radius).min(LEVELS - 1))
}

/// Codes that can possibly be the output for some lattice point within
/// `radius` of `p`, in index order. Sound by the triangle inequality, with
/// ties kept.
fn box_candidates(p: &Pixel, cb: &Codebook, radius: usize) -> Vec<usize> {
    let metric = cb.metric();
    let reach = metric.linf_ball_radius(radius as f64, p.channels());
    let dists: Vec<f64> = cb
        .codes()
        .iter()
        .map(|c| metric.key_to_distance(metric.key(p, c)))
        .collect();
    let best = dists.iter().copied().fold(f64::INFINITY, f64::min);
    let threshold = best + 2.0 * reach + 1e-9;
    (0..dists.len()).filter(|&i| dists[i] <= threshold).collect()
}

/// Enumerates the lattice box around `p`, resolving each point against the
/// candidate codes only, and reports the distinct outputs seen.
fn enumerate_box(p: &Pixel, cb: &Codebook, radius: usize, cands: &[usize]) -> Vec<usize> {
    let metric = cb.metric();
    let codes = cb.codes();
    let mut seen = vec![false; cands.len()];
    let mut found = 0;
    let mut visit = |z: Pixel| -> bool {
        let mut best = (0, u32::MAX);
        for (slot, &ci) in cands.iter().enumerate() {
            let key = metric.key(&z, &codes[ci]);
            if key < best.1 {
                best = (slot, key);
            }
        }
        if !seen[best.0] {
            seen[best.0] = true;
            found += 1;
        }
        found == cands.len()
    };
    if p.channels() == 1 {
        let (lo, hi) = channel_range(p.values()[0], radius);
        for v in lo..=hi {
            if visit(Pixel::gray(v as u8)) {
                break;
            }
        }
    } else {
        let r = channel_range(p.values()[0], radius);
        let g = channel_range(p.values()[1], radius);
        let b = channel_range(p.values()[2], radius);
        'outer: for x in r.0..=r.1 {
            for y in g.0..=g.1 {
                for z in b.0..=b.1 {
                    if visit(Pixel::rgb(x as u8, y as u8, z as u8)) {
                        break 'outer;
                    }
                }
            }
        }
    }
    cands
        .iter()
        .zip(&seen)
        .filter(|(_, &s)| s)
        .map(|(&c, _)| c)
        .collect()
}

/// Exact set of outcome indices `{T(z) : ‖z − p‖∞ <= eps}` over lattice points `z`.
pub fn reachable_codes(p: &Pixel, d: &Discretizer, eps: f64) -> Vec<usize> {
    let radius = lattice_radius(eps);
    if let Some(cb) = d.codebook() {
        let cands = box_candidates(p, cb, radius);
        if cands.len() == 1 {
            return cands;
        }
        return enumerate_box(p, cb, radius, &cands);
    }
    // Binning is monotone per channel, so each channel reaches a contiguous
    // range of levels and the outcome set is their product.
    let k = d.num_codes();
    let mut out = vec![0usize];
    for &v in p.values() {
        let (lo, hi) = channel_range(v, radius);
        let (a, b) = (d.level_of(lo as u8), d.level_of(hi as u8));
        out = out
            .iter()
            .flat_map(|&prefix| (a..=b).map(move |t| prefix * k + t))
            .collect();
    }
    out
}

/// `|C_i|` without materialising the set for binning.
fn reachable_count(p: &Pixel, d: &Discretizer, radius: usize) -> usize {
    if d.is_binning() {
        return p
            .values()
            .iter()
            .map(|&v| {
                let (lo, hi) = channel_range(v, radius);
                d.level_of(hi as u8) - d.level_of(lo as u8) + 1
            })
            .product();
    }
    reachable_codes(p, d, radius as f64).len()
}

/// Nearest-code label of every cell of the RGB lattice.
struct LabelLattice {
    labels: Vec<u16>,
}

impl LabelLattice {
    fn new(cb: &Codebook) -> Self {
        let mut labels = vec![0u16; LEVELS * LEVELS * LEVELS];
        labels
            .par_chunks_mut(LEVELS * LEVELS)
            .enumerate()
            .for_each(|(x, plane)| {
                for (yz, slot) in plane.iter_mut().enumerate() {
                    let p = Pixel::rgb(x as u8, (yz >> 8) as u8, yz as u8);
                    *slot = cb.nearest_key(&p).0 as u16;
                }
            });
        LabelLattice { labels }
    }

    fn distinct_in_box(&self, p: &Pixel, radius: usize, stamp: &mut [u32], gen: u32) -> usize {
        let r = channel_range(p.values()[0], radius);
        let g = channel_range(p.values()[1], radius);
        let b = channel_range(p.values()[2], radius);
        let mut found = 0;
        for x in r.0..=r.1 {
            for y in g.0..=g.1 {
                let row = (x << 16) | (y << 8);
                for &l in &self.labels[row + b.0..=row + b.1] {
                    let s = &mut stamp[l as usize];
                    if *s != gen {
                        *s = gen;
                        found += 1;
                    }
                }
            }
        }
        found
    }
}

/// `|C_i|` for every pixel value present in a query histogram.
pub struct ReachCounts {
    channels: usize,
    counts: Vec<u16>,
}

impl ReachCounts {
    pub fn build(d: &Discretizer, eps: f64, queries: &PixelHistogram) -> Result<Self> {
        if queries.channels() != d.channels() {
            return Err(Error::structural("query histogram and discretizer channel counts differ"));
        }
        let radius = lattice_radius(eps);
        let channels = d.channels();
        let present: Vec<Pixel> = queries.nonzero().map(|(p, _)| p).collect();
        let mut counts = vec![0u16; queries.counts().len()];

        let values: Vec<usize> = match d.codebook() {
            Some(cb) if channels == 3 && present.len() > 4096 => {
                let lattice = LabelLattice::new(cb);
                present
                    .par_chunks(1024)
                    .flat_map_iter(|chunk| {
                        let mut stamp = vec![0u32; cb.len()];
                        let mut gen = 0;
                        chunk
                            .iter()
                            .map(|p| {
                                if box_candidates(p, cb, radius).len() == 1 {
                                    return 1;
                                }
                                gen += 1;
                                lattice.distinct_in_box(p, radius, &mut stamp, gen)
                            })
                            .collect::<Vec<_>>()
                    })
                    .collect()
            }
            _ => present
                .par_iter()
                .map(|p| reachable_count(p, d, radius))
                .collect(),
        };
        for (p, n) in present.iter().zip(values) {
            counts[p.lattice_index()] = u16::try_from(n).unwrap_or(u16::MAX);
        }
        Ok(ReachCounts { channels, counts })
    }

    /// `|C_i|` of a value that was present in the query histogram.
    pub fn count(&self, p: &Pixel) -> usize {
        debug_assert_eq!(p.channels(), self.channels);
        self.counts[p.lattice_index()] as usize
    }

    /// `Σ_i log2 |C_i|` over an image.
    pub fn log2_product(&self, img: &Image) -> f64 {
        img.pixels().map(|p| (self.count(&p) as f64).log2()).sum()
    }
}

/// `(1/d) Σ_i log|C_i| / log k`, evaluated in log space.
pub fn fragmentation_measure(img: &Image, d: &Discretizer, eps: f64, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::config("fragmentation measure needs k >= 2"));
    }
    if img.channels() != d.channels() {
        return Err(Error::structural("image and discretizer channel counts differ"));
    }
    let radius = lattice_radius(eps);
    let mut memo = std::collections::HashMap::new();
    let log2_sum: f64 = img
        .pixels()
        .map(|p| {
            *memo
                .entry(p)
                .or_insert_with(|| (reachable_count(&p, d, radius) as f64).log2())
        })
        .sum();
    Ok(log2_sum / (img.num_pixels() as f64 * (k as f64).log2()))
}

#[derive(Clone, Debug, Serialize)]
pub struct HardnessReport {
    pub k: usize,
    pub eps: f64,
    pub codebook_digest: String,
    /// Per-image `(1/d) log_k Π |C_i|`.
    pub measures: Vec<f64>,
    /// Per-image `Σ log2 |C_i|`.
    pub log2_products: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_note: Option<String>,
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

impl HardnessReport {
    /// Empirical CDF at each distinct measure: `(value, fraction of images <= value)`.
    pub fn cdf(&self) -> Vec<(f64, f64)> {
        let mut v = self.measures.clone();
        v.sort_by(f64::total_cmp);
        let m = v.len() as f64;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (i, &x) in v.iter().enumerate() {
            let frac = (i + 1) as f64 / m;
            match out.last_mut() {
                Some(last) if last.0 == x => last.1 = frac,
                _ => out.push((x, frac)),
            }
        }
        if let Some(last) = out.last_mut() {
            last.1 = 1.0;
        }
        out
    }

    pub fn median_measure(&self) -> f64 {
        median(&self.measures)
    }

    pub fn median_log2_product(&self) -> f64 {
        median(&self.log2_products)
    }

    pub fn cdf_csv(&self) -> String {
        let mut out = String::from("measure,cumulative_fraction\n");
        for (x, f) in self.cdf() {
            out.push_str(&format!("{x},{f}\n"));
        }
        out
    }
}

/// Fragmentation of every image in `ds`, normalised by the number of distinct
/// outputs of `d` (`k` for codebooks, `k^C` for per-channel binning).
pub fn fragmentation_report(ds: &LabeledDataset, d: &Discretizer, eps: f64) -> Result<HardnessReport> {
    let k = d.num_outcomes();
    if k < 2 {
        return Err(Error::config("fragmentation measure needs at least two outcomes"));
    }
    if ds.is_empty() {
        return Err(Error::config("fragmentation report needs at least one image"));
    }
    let queries = build_histogram(ds)?;
    let reach = ReachCounts::build(d, eps, &queries)?;
    let log2_products: Vec<f64> = ds.images.par_iter().map(|im| reach.log2_product(im)).collect();
    let log2k = (k as f64).log2();
    let measures = ds
        .images
        .iter()
        .zip(&log2_products)
        .map(|(im, l)| l / (im.num_pixels() as f64 * log2k))
        .collect();
    Ok(HardnessReport {
        k,
        eps,
        codebook_digest: d.digest(),
        measures,
        log2_products,
        eps_note: None,
    })
}
