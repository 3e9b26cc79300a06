//! Synthetic images built from well-separated codewords plus bounded noise,
//! and an empirical check that the density codebook recovers those codewords.
//!
//! Each pixel is a codeword `c*` drawn uniformly from the ground-truth set,
//! plus noise `ζ` with `Pr[‖ζ‖∞ = t] ∝ exp(−t²/σ²)` for `t = 0..=⌊Γ/8⌋` and a
//! direction uniform over the integer vectors of that exact ℓ∞ norm.

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::codebook::{density_codes, DensityConfig};
use crate::error::{Error, Result};
use crate::ingest::PixelHistogram;
use crate::pixel::{check_channels, distance, DistanceMetric, Image, LabeledDataset, Pixel, LEVELS};

pub const NOISE_DIRECTION_NOTE: &str =
    "noise direction drawn uniformly over integer vectors of exact l-inf norm t";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Gray-diagonal codewords spaced exactly Γ apart, centred in the lattice.
    #[default]
    Diagonal,
    /// Uniform rejection sampling subject to the separation constraint.
    Random,
}

#[derive(Clone, Debug, Serialize)]
pub struct IdealModelParams {
    pub k: usize,
    /// Minimum pairwise ℓ∞ separation Γ of the codewords.
    pub separation: u32,
    pub sigma: f64,
    pub channels: usize,
    /// Pixels per image.
    pub d: usize,
    pub num_images: usize,
    pub seed: u64,
    pub layout: Layout,
    /// Overrides the layout when set. Reports list the resolved codewords separately.
    #[serde(skip)]
    pub codewords: Option<Vec<Pixel>>,
    /// Channel alphabet size K.
    pub alphabet: usize,
    pub delta: f64,
}

impl IdealModelParams {
    pub fn new(k: usize, separation: u32, sigma: f64) -> Self {
        IdealModelParams {
            k,
            separation,
            sigma,
            channels: 3,
            d: 1024,
            num_images: 1000,
            seed: 0,
            layout: Layout::Diagonal,
            codewords: None,
            alphabet: LEVELS,
            delta: 0.01,
        }
    }

    /// Largest noise norm, `⌊Γ/8⌋`.
    pub fn noise_cap(&self) -> u32 {
        self.separation / 8
    }

    pub fn num_pixels(&self) -> usize {
        self.d * self.num_images
    }

    fn check(&self) -> Result<()> {
        check_channels(self.channels)?;
        if self.k == 0 {
            return Err(Error::config("ideal model needs k >= 1"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if self.d == 0 || self.num_images == 0 {
            return Err(Error::config("ideal model needs d >= 1 and at least one image"));
        }
        Ok(())
    }

    /// Ground-truth codewords, validated against the separation and the lattice margin.
    pub fn resolve_codewords(&self) -> Result<Vec<Pixel>> {
        self.check()?;
        let cap = self.noise_cap() as usize;
        let codes = match (&self.codewords, self.layout) {
            (Some(c), _) => c.clone(),
            (None, Layout::Diagonal) => {
                let span = (self.k - 1) * self.separation as usize;
                if span + 2 * cap > LEVELS - 1 {
                    return Err(Error::config(format!(
                        "{} diagonal codewords spaced {} do not fit in the lattice",
                        self.k, self.separation
                    )));
                }
                let start = (LEVELS - 1 - span) / 2;
                (0..self.k)
                    .map(|i| {
                        let v = (start + i * self.separation as usize) as u8;
                        Pixel::from_slice(&vec![v; self.channels]).expect("valid channel count")
                    })
                    .collect()
            }
            (None, Layout::Random) => self.random_codewords(cap)?,
        };
        if codes.len() != self.k {
            return Err(Error::config(format!("expected {} codewords, got {}", self.k, codes.len())));
        }
        for c in &codes {
            if c.channels() != self.channels {
                return Err(Error::structural("codeword channel count differs from the model"));
            }
            if c.values().iter().any(|&v| (v as usize) < cap || v as usize + cap > LEVELS - 1) {
                return Err(Error::config(format!(
                    "codeword {:?} is within noise support {cap} of the lattice boundary",
                    c.values()
                )));
            }
        }
        for i in 0..codes.len() {
            for j in 0..i {
                let sep = distance(&codes[i], &codes[j], DistanceMetric::Linf)?;
                if sep < self.separation as f64 {
                    return Err(Error::config(format!(
                        "codewords {j} and {i} are {sep} apart, below the separation {}",
                        self.separation
                    )));
                }
            }
        }
        Ok(codes)
    }

    fn random_codewords(&self, cap: usize) -> Result<Vec<Pixel>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x636f_6465);
        let range = cap..=(LEVELS - 1 - cap);
        let mut codes: Vec<Pixel> = Vec::with_capacity(self.k);
        for _ in 0..100_000 {
            if codes.len() == self.k {
                break;
            }
            let v: Vec<u8> = (0..self.channels).map(|_| rng.gen_range(range.clone()) as u8).collect();
            let p = Pixel::from_slice(&v)?;
            if codes
                .iter()
                .all(|c| distance(c, &p, DistanceMetric::Linf).unwrap_or(0.0) >= self.separation as f64)
            {
                codes.push(p);
            }
        }
        if codes.len() < self.k {
            return Err(Error::config(format!(
                "could not place {} codewords with separation {}",
                self.k, self.separation
            )));
        }
        Ok(codes)
    }
}

/// Unnormalised noise-norm weights `exp(−t²/σ²)` for `t = 0..=cap`. Zero σ
/// puts all mass on `t = 0`.
pub fn noise_weights(cap: u32, sigma: f64) -> Vec<f64> {
    (0..=cap)
        .map(|t| {
            if t == 0 {
                1.0
            } else if sigma == 0.0 {
                0.0
            } else {
                (-((t * t) as f64) / (sigma * sigma)).exp()
            }
        })
        .collect()
}

/// Noise normalisation `α = 1 / Σ_t exp(−t²/σ²)` over the support `0..=⌊Γ/8⌋`.
pub fn alpha_norm(separation: u32, sigma: f64) -> f64 {
    1.0 / noise_weights(separation / 8, sigma).iter().sum::<f64>()
}

/// `γ = sqrt((4/N) ln(K/δ))`.
pub fn gamma(n: usize, alphabet: usize, delta: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("gamma needs N >= 1".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta must be in (0, 1), got {delta}")));
    }
    Ok((4.0 / n as f64 * (alphabet as f64 / delta).ln()).sqrt())
}

/// `ν = σ sqrt(ln(1 / (1/k − 2γ/α)))`.
pub fn nu(sigma: f64, k: usize, gamma_val: f64, alpha: f64) -> Result<f64> {
    let inner = 1.0 / k as f64 - 2.0 * gamma_val / alpha;
    if !(inner > 0.0) {
        return Err(Error::Domain("sample size N too small for this k, δ".into()));
    }
    Ok(sigma * (1.0 / inner).ln().max(0.0).sqrt())
}

struct PixelSampler {
    codes: Vec<Pixel>,
    norm: WeightedIndex<f64>,
    channels: usize,
}

impl PixelSampler {
    fn new(params: &IdealModelParams) -> Result<Self> {
        let codes = params.resolve_codewords()?;
        let norm = WeightedIndex::new(noise_weights(params.noise_cap(), params.sigma))
            .map_err(|e| Error::config(format!("noise weights: {e}")))?;
        Ok(PixelSampler {
            codes,
            norm,
            channels: params.channels,
        })
    }

    /// Uniform over `{ζ ∈ Z^C : ‖ζ‖∞ = t}` by rejection from the cube `[−t, t]^C`.
    fn noise<R: Rng>(&self, rng: &mut R, t: i32) -> [i32; 3] {
        let mut z = [0i32; 3];
        if t == 0 {
            return z;
        }
        loop {
            for v in z.iter_mut().take(self.channels) {
                *v = rng.gen_range(-t..=t);
            }
            if z.iter().take(self.channels).any(|v| v.abs() == t) {
                return z;
            }
        }
    }

    /// Returns the skeleton index and the noisy pixel.
    fn sample<R: Rng>(&self, rng: &mut R) -> (usize, Pixel, u32) {
        let i = rng.gen_range(0..self.codes.len());
        let t = self.norm.sample(rng) as i32;
        let z = self.noise(rng, t);
        let c = self.codes[i].values();
        let mut out = [0u8; 3];
        for ch in 0..self.channels {
            out[ch] = (c[ch] as i32 + z[ch]) as u8;
        }
        let p = Pixel::from_slice(&out[..self.channels]).expect("valid channel count");
        (i, p, t as u32)
    }
}

/// Draws `num_images` images of `d` pixels laid out as `1 × d`; labels are 0.
pub fn sample_dataset(params: &IdealModelParams) -> Result<LabeledDataset> {
    let sampler = PixelSampler::new(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let images = (0..params.num_images)
        .map(|_| {
            let pixels: Vec<Pixel> = (0..params.d).map(|_| sampler.sample(&mut rng).1).collect();
            Image::from_pixels(1, params.d, &pixels)
        })
        .collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(images, vec![0; params.num_images], 1)
}

fn sample_histogram(sampler: &PixelSampler, n: usize, rng: &mut ChaCha8Rng) -> Result<PixelHistogram> {
    PixelHistogram::from_pixels(sampler.channels, (0..n).map(|_| sampler.sample(rng).1))
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub reason: String,
    pub codes: Vec<Vec<u8>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Lemma1Report {
    pub params: IdealModelParams,
    pub codewords: Vec<Vec<u8>>,
    pub n_pixels: usize,
    pub alpha_norm: f64,
    pub gamma: f64,
    pub nu: f64,
    pub r: f64,
    /// `Γ > 16ν`.
    pub premise_holds: bool,
    pub trials: usize,
    pub recovered: usize,
    pub recovery_rate: f64,
    /// Smallest pairwise ℓ∞ distance among matched codes over recovered trials.
    pub min_matched_separation: Option<f64>,
    pub failures: Vec<TrialFailure>,
    pub notes: Vec<String>,
}

/// Whether each ground-truth codeword has exactly one code within `nu` and
/// no code serves two codewords.
fn match_codes(truth: &[Pixel], codes: &[Pixel], nu: f64) -> std::result::Result<Vec<usize>, String> {
    if codes.len() != truth.len() {
        return Err(format!("{} codes for {} codewords", codes.len(), truth.len()));
    }
    let mut used = vec![false; codes.len()];
    let mut matching = Vec::with_capacity(truth.len());
    for (i, c) in truth.iter().enumerate() {
        let near: Vec<usize> = (0..codes.len())
            .filter(|&j| distance(c, &codes[j], DistanceMetric::Linf).unwrap_or(f64::INFINITY) <= nu)
            .collect();
        match near.as_slice() {
            [j] if !used[*j] => {
                used[*j] = true;
                matching.push(*j);
            }
            [] => return Err(format!("codeword {i} has no code within {nu:.4}")),
            _ => return Err(format!("codeword {i} is not matched to a unique code")),
        }
    }
    Ok(matching)
}

/// Runs the density codebook with `r = 2ν` on fresh samples and checks codeword recovery.
pub fn validate_lemma1(params: &IdealModelParams, trials: usize) -> Result<Lemma1Report> {
    if trials == 0 {
        return Err(Error::config("need at least one trial"));
    }
    let sampler = PixelSampler::new(params)?;
    let n = params.num_pixels();
    let a = alpha_norm(params.separation, params.sigma);
    let g = gamma(n, params.alphabet, params.delta)?;
    let nu_val = nu(params.sigma, params.k, g, a)?;
    let r = 2.0 * nu_val;
    let premise_holds = params.separation as f64 > 16.0 * nu_val;
    let mut notes = vec![NOISE_DIRECTION_NOTE.to_string()];
    if !premise_holds {
        let msg = format!(
            "premise violated: separation {} <= 16 nu = {:.3}; recovery is not guaranteed",
            params.separation,
            16.0 * nu_val
        );
        log::warn!("{msg}");
        notes.push(msg);
    }

    let cfg = DensityConfig::new(params.k, r)?;
    let outcomes: Vec<std::result::Result<f64, TrialFailure>> = (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<_> {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(trial as u64 + 1);
            let hist = sample_histogram(&sampler, n, &mut rng)?;
            let cb = density_codes(&hist, &cfg)?;
            let codes = cb.codes();
            Ok(match match_codes(&sampler.codes, codes, nu_val) {
                Ok(m) => {
                    let mut sep = f64::INFINITY;
                    for i in 0..m.len() {
                        for j in 0..i {
                            sep = sep.min(distance(&codes[m[i]], &codes[m[j]], DistanceMetric::Linf)?);
                        }
                    }
                    Ok(sep)
                }
                Err(reason) => Err(TrialFailure {
                    trial,
                    reason,
                    codes: codes.iter().map(|c| c.values().to_vec()).collect(),
                }),
            })
        })
        .collect::<Result<_>>()?;

    let mut failures = Vec::new();
    let mut min_sep: Option<f64> = None;
    for o in outcomes {
        match o {
            Ok(sep) => min_sep = Some(min_sep.map_or(sep, |m: f64| m.min(sep))),
            Err(f) => {
                log::info!("trial {} failed: {}", f.trial, f.reason);
                failures.push(f);
            }
        }
    }
    let recovered = trials - failures.len();
    Ok(Lemma1Report {
        params: params.clone(),
        codewords: sampler.codes.iter().map(|c| c.values().to_vec()).collect(),
        n_pixels: n,
        alpha_norm: a,
        gamma: g,
        nu: nu_val,
        r,
        premise_holds,
        trials,
        recovered,
        recovery_rate: recovered as f64 / trials as f64,
        min_matched_separation: min_sep.filter(|s| s.is_finite()),
        failures,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(k: usize, sep: u32, sigma: f64) -> IdealModelParams {
        IdealModelParams {
            d: 1000,
            num_images: 200,
            seed: 5,
            ..IdealModelParams::new(k, sep, sigma)
        }
    }

    #[test]
    fn closed_forms() {
        let v = nu(1.0, 2, 0.0, 1.0).unwrap();
        assert!((v - 2f64.ln().sqrt()).abs() < 1e-15);
        assert!((v - 0.8326).abs() < 1e-4);
        assert_eq!(nu(1.0, 1, 0.0, 0.5).unwrap(), 0.0);
        let err = nu(1.0, 4, 0.2, 1.0).unwrap_err();
        assert!(err.to_string().contains("sample size N too small"));

        let l = (256.0f64 / 0.01).ln();
        let n = (4.0 * l * 1e4).round() as usize;
        let g = gamma(n, 256, 0.01).unwrap();
        assert!((g - (4.0 / n as f64 * l).sqrt()).abs() < 1e-15);
        assert!((g - 0.01).abs() < 1e-6);

        let a = alpha_norm(64, 2.0);
        let s: f64 = (0..=8).map(|t| (-(t * t) as f64 / 4.0).exp()).sum();
        assert!((a - 1.0 / s).abs() < 1e-15);
        assert_eq!(alpha_norm(7, 2.0), 1.0);
    }

    #[test]
    fn noiseless_and_single_cluster() {
        let p = small(3, 64, 0.0);
        let codes = p.resolve_codewords().unwrap();
        let ds = sample_dataset(&p).unwrap();
        for img in &ds.images {
            assert!(img.pixels().all(|x| codes.contains(&x)));
        }
        let p = small(1, 64, 3.0);
        let c = p.resolve_codewords().unwrap()[0];
        let ds = sample_dataset(&p).unwrap();
        for img in &ds.images {
            for x in img.pixels() {
                assert!(distance(&x, &c, DistanceMetric::Linf).unwrap() <= 8.0);
            }
        }
    }

    #[test]
    fn marginals_support_and_norm_law() {
        let p = IdealModelParams::new(4, 64, 2.0);
        let sampler = PixelSampler::new(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 1_000_000;
        let mut per_code = [0usize; 4];
        let mut per_t = [0usize; 9];
        for _ in 0..n {
            let (i, px, t) = sampler.sample(&mut rng);
            per_code[i] += 1;
            per_t[t as usize] += 1;
            let d = distance(&px, &sampler.codes[i], DistanceMetric::Linf).unwrap();
            assert_eq!(d, t as f64);
            assert!(d <= 8.0);
        }
        let se = (0.25 * 0.75 / n as f64).sqrt();
        for c in per_code {
            assert!((c as f64 / n as f64 - 0.25).abs() < 3.0 * se, "{per_code:?}");
        }
        // Ratios of the well-populated norms against exp(−t²/σ²).
        let w = noise_weights(8, 2.0);
        for t in 1..=3 {
            let ratio = per_t[t] as f64 / per_t[0] as f64;
            let expected = w[t] / w[0];
            let rel_se = (1.0 / per_t[t] as f64 + 1.0 / per_t[0] as f64).sqrt();
            assert!((ratio / expected - 1.0).abs() < 4.0 * rel_se, "t={t} {ratio} vs {expected}");
        }
    }

    #[test]
    fn noise_direction_is_uniform_on_the_shell() {
        let p = IdealModelParams {
            channels: 1,
            ..IdealModelParams::new(1, 64, 2.0)
        };
        let sampler = PixelSampler::new(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut plus = 0;
        let mut total = 0;
        for _ in 0..20_000 {
            let z = sampler.noise(&mut rng, 2);
            assert_eq!(z[0].abs(), 2);
            total += 1;
            plus += usize::from(z[0] > 0);
        }
        assert!((plus as f64 / total as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn codeword_validation() {
        assert!(IdealModelParams::new(5, 64, 1.0).resolve_codewords().is_err());
        let mut p = IdealModelParams::new(2, 64, 1.0);
        p.codewords = Some(vec![Pixel::rgb(3, 100, 100), Pixel::rgb(200, 200, 200)]);
        assert!(p.resolve_codewords().is_err());
        p.codewords = Some(vec![Pixel::rgb(100, 100, 100), Pixel::rgb(120, 200, 200)]);
        assert!(p.resolve_codewords().is_ok());
        p.codewords = Some(vec![Pixel::rgb(100, 100, 100), Pixel::rgb(120, 120, 120)]);
        assert!(p.resolve_codewords().is_err());
        let mut p = IdealModelParams::new(4, 40, 1.0);
        p.layout = Layout::Random;
        assert_eq!(p.resolve_codewords().unwrap().len(), 4);
    }

    #[test]
    fn recovery_on_small_runs() {
        let p = small(4, 64, 2.0);
        let rep = validate_lemma1(&p, 3).unwrap();
        assert!(rep.premise_holds);
        assert_eq!(rep.recovery_rate, 1.0);
        assert!(rep.min_matched_separation.unwrap() > 64.0 - 2.0 * rep.nu);

        let noiseless = validate_lemma1(&small(4, 64, 0.0), 2).unwrap();
        assert_eq!(noiseless.recovery_rate, 1.0);

        let overlap = validate_lemma1(&small(4, 4, 2.0), 2).unwrap();
        assert!(!overlap.premise_holds);
        assert!(overlap.recovery_rate < 1.0);
        assert!(!overlap.failures.is_empty());
    }

    #[test]
    fn trials_are_reproducible() {
        let p = small(2, 64, 2.0);
        let a = serde_json::to_string(&validate_lemma1(&p, 2).unwrap()).unwrap();
        let b = serde_json::to_string(&validate_lemma1(&p, 2).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
