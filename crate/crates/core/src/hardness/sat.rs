//! Exact ℓ∞ neighborhood counts via summed-area tables over the pixel lattice.

use crate::ingest::PixelHistogram;
use crate::pixel::{Pixel, LEVELS};

const SIDE: usize = LEVELS + 1;

/// Inclusive prefix sums of a histogram, padded with a zero plane on the low
/// side of every axis so that box queries need no bounds checks.
pub struct SummedAreaTable {
    channels: usize,
    table: Vec<u64>,
}

#[inline]
fn at(x: usize, y: usize, z: usize) -> usize {
    (x * SIDE + y) * SIDE + z
}

impl SummedAreaTable {
    pub fn new(hist: &PixelHistogram) -> Self {
        let counts = hist.counts();
        if hist.channels() == 1 {
            let mut table = vec![0u64; SIDE];
            for v in 0..LEVELS {
                table[v + 1] = table[v] + counts[v];
            }
            return SummedAreaTable { channels: 1, table };
        }
        let mut table = vec![0u64; SIDE * SIDE * SIDE];
        for x in 0..LEVELS {
            for y in 0..LEVELS {
                let src = (x << 16) | (y << 8);
                let dst = at(x + 1, y + 1, 1);
                let mut run = 0;
                for z in 0..LEVELS {
                    run += counts[src | z];
                    table[dst + z] = run;
                }
            }
        }
        // Accumulate along y, then x.
        for x in 1..SIDE {
            for y in 2..SIDE {
                let (lo, hi) = table.split_at_mut(at(x, y, 0));
                let prev = &lo[at(x, y - 1, 0)..at(x, y - 1, 0) + SIDE];
                for (a, b) in hi[..SIDE].iter_mut().zip(prev) {
                    *a += b;
                }
            }
        }
        for x in 2..SIDE {
            let (lo, hi) = table.split_at_mut(at(x, 0, 0));
            let prev = &lo[at(x - 1, 0, 0)..];
            for (a, b) in hi[..SIDE * SIDE].iter_mut().zip(prev) {
                *a += b;
            }
        }
        SummedAreaTable { channels: 3, table }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Total count in the axis-aligned box `lo..=hi` (per channel).
    #[inline]
    pub fn box_sum(&self, lo: &[usize], hi: &[usize]) -> u64 {
        if self.channels == 1 {
            return self.table[hi[0] + 1] - self.table[lo[0]];
        }
        let (x0, y0, z0) = (lo[0], lo[1], lo[2]);
        let (x1, y1, z1) = (hi[0] + 1, hi[1] + 1, hi[2] + 1);
        let t = &self.table;
        // Summed in an order that keeps every partial result non-negative.
        let plus = t[at(x1, y1, z1)] + t[at(x1, y0, z0)] + t[at(x0, y1, z0)] + t[at(x0, y0, z1)];
        let minus = t[at(x0, y1, z1)] + t[at(x1, y0, z1)] + t[at(x1, y1, z0)] + t[at(x0, y0, z0)];
        plus - minus
    }

    /// Count of histogram pixels within ℓ∞ lattice radius `radius` of `p`.
    #[inline]
    pub fn ball_count(&self, p: &Pixel, radius: usize) -> u64 {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for (c, &v) in p.values().iter().enumerate() {
            lo[c] = (v as usize).saturating_sub(radius);
            hi[c] = (v as usize + radius).min(LEVELS - 1);
        }
        self.box_sum(&lo, &hi)
    }
}

/// Lattice radius of a real ℓ∞ budget: `‖z − p‖∞ <= eps` iff `<= floor(eps)`.
pub fn lattice_radius(eps: f64) -> usize {
    if eps <= 0.0 {
        0
    } else {
        eps.floor().min(LEVELS as f64) as usize
    }
}

/// `N∞(x, eps)` for every value present in the histogram.
#[derive(Clone, Debug)]
pub struct NeighborhoodMap {
    pub eps: f64,
    pub channels: usize,
    /// Present values in ascending lattice order with their neighborhood size.
    pub entries: Vec<(Pixel, u64)>,
    pub max: u64,
    pub argmax: Option<Pixel>,
}

impl NeighborhoodMap {
    pub fn get(&self, p: &Pixel) -> Option<u64> {
        self.entries
            .binary_search_by_key(&p.lattice_index(), |(q, _)| q.lattice_index())
            .ok()
            .map(|i| self.entries[i].1)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.entries.len() * 20);
        out.push_str(if self.channels == 1 { "value,count\n" } else { "r,g,b,count\n" });
        for (p, n) in &self.entries {
            for v in p.values() {
                out.push_str(&v.to_string());
                out.push(',');
            }
            out.push_str(&n.to_string());
            out.push('\n');
        }
        out
    }
}

pub fn neighborhood_map(hist: &PixelHistogram, eps: f64) -> NeighborhoodMap {
    let sat = SummedAreaTable::new(hist);
    neighborhood_map_with(&sat, hist, eps)
}

pub fn neighborhood_map_with(sat: &SummedAreaTable, hist: &PixelHistogram, eps: f64) -> NeighborhoodMap {
    let radius = lattice_radius(eps);
    let mut max = 0;
    let mut argmax = None;
    let entries: Vec<(Pixel, u64)> = hist
        .nonzero()
        .map(|(p, _)| {
            let n = sat.ball_count(&p, radius);
            if n > max {
                max = n;
                argmax = Some(p);
            }
            (p, n)
        })
        .collect();
    NeighborhoodMap {
        eps,
        channels: hist.channels(),
        entries,
        max,
        argmax,
    }
}

/// Rows of the pixel-value histogram: present values with their counts.
pub fn value_histogram_rows(hist: &PixelHistogram) -> Vec<(Pixel, u64)> {
    hist.nonzero().collect()
}

pub fn value_histogram_csv(hist: &PixelHistogram) -> String {
    let mut out = String::from(if hist.channels() == 1 { "value,count\n" } else { "r,g,b,count\n" });
    for (p, n) in value_histogram_rows(hist) {
        let vals: Vec<String> = p.values().iter().map(|v| v.to_string()).collect();
        out.push_str(&format!("{},{}\n", vals.join(","), n));
    }
    out
}
