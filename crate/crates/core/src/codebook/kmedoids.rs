//! Frequency-weighted PAM over the distinct pixel values of a histogram.
//!
//! The cost `Σ_v h[v] · min_c d(v, c)` equals the cost over the raw pixel
//! multiset, so the swap search only needs one pass over distinct values per
//! candidate. Swap deltas for all medoids of one candidate are computed
//! together from cached nearest and second-nearest distances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::PixelHistogram;
use crate::pixel::{Codebook, CodebookSource, DistanceMetric, Pixel};

use super::CodebookBuilder;

#[derive(Clone, Debug, PartialEq)]
pub struct KMedoidsConfig {
    pub k: usize,
    /// Maximum number of full sweeps over the swap candidates.
    pub max_iterations: usize,
    pub metric: DistanceMetric,
    pub seed: u64,
    /// Only the `candidate_cap` most frequent values are tried as swap-ins.
    pub candidate_cap: usize,
}

impl Default for KMedoidsConfig {
    fn default() -> Self {
        KMedoidsConfig {
            k: 2,
            max_iterations: 10,
            metric: DistanceMetric::L1,
            seed: 0,
            candidate_cap: 4096,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KMedoidsOutcome {
    pub codebook: Codebook,
    /// Cost of the initial medoids followed by the cost after each accepted swap.
    pub cost_trace: Vec<f64>,
    pub sweeps: usize,
    /// True when the last sweep found no improving swap.
    pub converged: bool,
}

impl KMedoidsOutcome {
    pub fn final_cost(&self) -> f64 {
        *self.cost_trace.last().unwrap_or(&0.0)
    }
}

/// `Σ_v weight(v) · min_c d(v, c)` over the histogram.
pub fn kmedoids_cost(hist: &PixelHistogram, medoids: &[Pixel], metric: DistanceMetric) -> f64 {
    hist.nonzero()
        .map(|(v, w)| {
            let best = medoids
                .iter()
                .map(|c| metric.key(&v, c))
                .min()
                .unwrap_or(0);
            w as f64 * metric.key_to_distance(best)
        })
        .sum()
}

struct Points {
    values: Vec<Pixel>,
    weights: Vec<f64>,
}

struct Assignment {
    nearest: Vec<usize>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

fn assign(points: &Points, medoids: &[usize], metric: DistanceMetric) -> Assignment {
    let n = points.values.len();
    let mut nearest = vec![0; n];
    let mut d1 = vec![f64::INFINITY; n];
    let mut d2 = vec![f64::INFINITY; n];
    for j in 0..n {
        for (slot, &m) in medoids.iter().enumerate() {
            let d = metric.key_to_distance(metric.key(&points.values[j], &points.values[m]));
            if d < d1[j] {
                d2[j] = d1[j];
                d1[j] = d;
                nearest[j] = slot;
            } else if d < d2[j] {
                d2[j] = d;
            }
        }
    }
    Assignment { nearest, d1, d2 }
}

fn total_cost(points: &Points, a: &Assignment) -> f64 {
    points.weights.iter().zip(&a.d1).map(|(w, d)| w * d).sum()
}

/// Weighted random draw of `k` distinct indices (Efraimidis–Spirakis keys).
fn initial_medoids(points: &Points, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = points
        .weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            (u.ln() / w, i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().take(k).map(|(_, i)| i).collect()
}

pub fn kmedoids_run(hist: &PixelHistogram, cfg: &KMedoidsConfig) -> Result<KMedoidsOutcome> {
    if cfg.k < 1 {
        return Err(Error::config("k-medoids needs k >= 1"));
    }
    if cfg.max_iterations < 1 {
        return Err(Error::config("k-medoids needs at least one iteration"));
    }
    let (values, counts): (Vec<Pixel>, Vec<u64>) = hist.nonzero().unzip();
    if values.len() < cfg.k {
        return Err(Error::config(format!(
            "k-medoids needs at least k = {} distinct pixel values, histogram has {}",
            cfg.k,
            values.len()
        )));
    }
    let points = Points {
        weights: counts.iter().map(|&c| c as f64).collect(),
        values,
    };
    let metric = cfg.metric;
    let n = points.values.len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut medoids = initial_medoids(&points, cfg.k, &mut rng);

    let mut candidates: Vec<usize> = (0..n).collect();
    candidates.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    candidates.truncate(cfg.candidate_cap.max(cfg.k));

    let mut assignment = assign(&points, &medoids, metric);
    let mut cost = total_cost(&points, &assignment);
    let mut trace = vec![cost];
    let mut converged = false;
    let mut sweeps = 0;
    // Guards against accepting float-noise "improvements" under L2.
    let tolerance = 1e-9 * points.weights.iter().sum::<f64>().max(1.0);

    let mut delta = vec![0.0; cfg.k];
    let mut d_p = vec![0.0; n];
    while sweeps < cfg.max_iterations {
        sweeps += 1;
        let mut improved = false;
        for &p in &candidates {
            if medoids.contains(&p) {
                continue;
            }
            let pv = points.values[p];
            let mut shared = 0.0;
            delta.iter_mut().for_each(|d| *d = 0.0);
            for j in 0..n {
                let d = metric.key_to_distance(metric.key(&points.values[j], &pv));
                d_p[j] = d;
                let w = points.weights[j];
                let gain = (d - assignment.d1[j]).min(0.0);
                shared += w * gain;
                // If the nearest medoid leaves, j falls back to p or its second choice.
                let fallback = d.min(assignment.d2[j]) - assignment.d1[j];
                delta[assignment.nearest[j]] += w * (fallback - gain);
            }
            let (best_slot, best_delta) = delta
                .iter()
                .enumerate()
                .map(|(i, &d)| (i, d + shared))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .unwrap();
            if best_delta < -tolerance {
                medoids[best_slot] = p;
                assignment = assign(&points, &medoids, metric);
                let new_cost = total_cost(&points, &assignment);
                debug_assert!(new_cost < cost);
                cost = new_cost;
                trace.push(cost);
                improved = true;
            }
        }
        if !improved {
            converged = true;
            break;
        }
    }

    let codes = medoids.iter().map(|&m| points.values[m]).collect();
    let codebook = Codebook::new(
        codes,
        metric,
        CodebookSource::KMedoids {
            k: cfg.k,
            metric,
            seed: cfg.seed,
        },
    )?;
    Ok(KMedoidsOutcome {
        codebook,
        cost_trace: trace,
        sweeps,
        converged,
    })
}

pub fn kmedoids_codes(hist: &PixelHistogram, cfg: &KMedoidsConfig) -> Result<Codebook> {
    kmedoids_run(hist, cfg).map(|o| o.codebook)
}

#[derive(Clone, Debug)]
pub struct KMedoidsBuilder(pub KMedoidsConfig);

impl CodebookBuilder for KMedoidsBuilder {
    fn name(&self) -> &'static str {
        "kmedoids"
    }

    fn build(&self, hist: &PixelHistogram) -> Result<Codebook> {
        kmedoids_codes(hist, &self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn four_points() -> PixelHistogram {
        PixelHistogram::from_pixels(1, [0u8, 1, 9, 10].map(Pixel::gray)).unwrap()
    }

    fn brute_force_best(hist: &PixelHistogram, k: usize, metric: DistanceMetric) -> f64 {
        let values: Vec<Pixel> = hist.nonzero().map(|(v, _)| v).collect();
        let mut best = f64::INFINITY;
        let n = values.len();
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != k {
                continue;
            }
            let chosen: Vec<Pixel> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| values[i]).collect();
            best = best.min(kmedoids_cost(hist, &chosen, metric));
        }
        best
    }

    #[test]
    fn direct_cost() {
        let h = four_points();
        assert_eq!(kmedoids_cost(&h, &[Pixel::gray(0), Pixel::gray(10)], DistanceMetric::L1), 2.0);
    }

    #[test]
    fn four_point_instance_reaches_brute_force_optimum() {
        let h = four_points();
        assert_eq!(brute_force_best(&h, 2, DistanceMetric::L1), 2.0);
        for seed in 0..50 {
            let cfg = KMedoidsConfig {
                k: 2,
                seed,
                ..Default::default()
            };
            let out = kmedoids_run(&h, &cfg).unwrap();
            assert_eq!(out.final_cost(), 2.0, "seed {seed}");
            let codes = out.codebook.codes();
            let low = codes.iter().filter(|c| c.values()[0] <= 1).count();
            assert_eq!(low, 1, "one medoid on each side, got {codes:?}");
        }
    }

    #[test]
    fn k_equal_distinct_gives_zero_cost() {
        let h = four_points();
        let out = kmedoids_run(&h, &KMedoidsConfig { k: 4, ..Default::default() }).unwrap();
        assert_eq!(out.final_cost(), 0.0);
    }

    #[test]
    fn too_few_distinct_values() {
        let h = four_points();
        let err = kmedoids_run(&h, &KMedoidsConfig { k: 5, ..Default::default() }).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn deterministic_given_seed() {
        let pixels: Vec<Pixel> = (0..400u32)
            .map(|i| Pixel::rgb((i * 37 % 251) as u8, (i * 11 % 241) as u8, (i * 5 % 199) as u8))
            .collect();
        let h = PixelHistogram::from_pixels(3, pixels).unwrap();
        let cfg = KMedoidsConfig {
            k: 5,
            seed: 42,
            metric: DistanceMetric::L2,
            ..Default::default()
        };
        let a = kmedoids_run(&h, &cfg).unwrap();
        let b = kmedoids_run(&h, &cfg).unwrap();
        assert_eq!(a.codebook, b.codebook);
        assert_eq!(a.cost_trace, b.cost_trace);
    }

    proptest! {
        #[test]
        fn cost_strictly_decreases_and_ends_swap_optimal(
            values in proptest::collection::vec(0u8..=255, 3..60),
            k in 1usize..4,
            seed in 0u64..1000,
            metric_id in 0usize..3,
        ) {
            let metric = [DistanceMetric::L1, DistanceMetric::L2, DistanceMetric::Linf][metric_id];
            let h = PixelHistogram::from_pixels(1, values.iter().copied().map(Pixel::gray)).unwrap();
            prop_assume!(h.distinct_values() >= k);
            let cfg = KMedoidsConfig { k, seed, metric, max_iterations: 100, candidate_cap: 4096 };
            let out = kmedoids_run(&h, &cfg).unwrap();
            for w in out.cost_trace.windows(2) {
                prop_assert!(w[1] < w[0]);
            }
            let codes = out.codebook.codes().to_vec();
            prop_assert!((kmedoids_cost(&h, &codes, metric) - out.final_cost()).abs() < 1e-6);
            prop_assert!(out.converged);
            // No single swap improves the final configuration.
            for (v, _) in h.nonzero() {
                if codes.contains(&v) { continue; }
                for slot in 0..codes.len() {
                    let mut swapped = codes.clone();
                    swapped[slot] = v;
                    prop_assert!(kmedoids_cost(&h, &swapped, metric) >= out.final_cost() - 1e-6);
                }
            }
        }
    }
}
