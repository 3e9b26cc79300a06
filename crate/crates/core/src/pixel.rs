//! Pixel-lattice domain types shared by every other module.
//!
//! All arithmetic happens on the integer lattice `{0..255}^C` with `C` either 1
//! (grayscale) or 3 (RGB). Real-valued budgets such as `eps = 0.3` on the unit
//! scale are converted to lattice units by the caller (`0.3 * 255 = 76.5`).

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Number of values a single channel can take.
pub const LEVELS: usize = 256;

/// One lattice point. Unused channel slots are kept at zero so that derived
/// equality and hashing only see the active channels.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pixel {
    values: [u8; 3],
    channels: u8,
}

impl Pixel {
    pub fn gray(v: u8) -> Self {
        Pixel {
            values: [v, 0, 0],
            channels: 1,
        }
    }

    pub fn rgb(r: u8, g: u8, b: u8) -> Self {
        Pixel {
            values: [r, g, b],
            channels: 3,
        }
    }

    pub fn from_slice(values: &[u8]) -> Result<Self> {
        match *values {
            [v] => Ok(Pixel::gray(v)),
            [r, g, b] => Ok(Pixel::rgb(r, g, b)),
            _ => Err(Error::structural(format!(
                "pixels have 1 or 3 channels, got {}",
                values.len()
            ))),
        }
    }

    /// Builds a pixel from wider integers, rejecting anything off the lattice.
    pub fn from_ints(values: &[i64]) -> Result<Self> {
        let mut bytes = Vec::with_capacity(values.len());
        for &v in values {
            if !(0..=255).contains(&v) {
                return Err(Error::structural(format!(
                    "channel value {v} outside 0..=255"
                )));
            }
            bytes.push(v as u8);
        }
        Pixel::from_slice(&bytes)
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels as usize
    }

    #[inline]
    pub fn values(&self) -> &[u8] {
        &self.values[..self.channels as usize]
    }

    /// Flattened lattice index: `v` for grayscale, `r*65536 + g*256 + b` for RGB.
    #[inline]
    pub fn lattice_index(&self) -> usize {
        if self.channels == 1 {
            self.values[0] as usize
        } else {
            ((self.values[0] as usize) << 16) | ((self.values[1] as usize) << 8) | self.values[2] as usize
        }
    }

    pub fn from_lattice_index(index: usize, channels: usize) -> Self {
        if channels == 1 {
            Pixel::gray(index as u8)
        } else {
            Pixel::rgb((index >> 16) as u8, (index >> 8) as u8, index as u8)
        }
    }
}

impl fmt::Debug for Pixel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.values())
    }
}

/// Size of the flattened lattice for a channel count.
pub fn lattice_size(channels: usize) -> usize {
    if channels == 1 {
        LEVELS
    } else {
        LEVELS * LEVELS * LEVELS
    }
}

pub(crate) fn check_channels(channels: usize) -> Result<()> {
    if channels == 1 || channels == 3 {
        Ok(())
    } else {
        Err(Error::structural(format!(
            "channel count must be 1 or 3, got {channels}"
        )))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    #[default]
    Linf,
    L1,
    L2,
}

impl DistanceMetric {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linf" | "l_inf" | "inf" => Ok(DistanceMetric::Linf),
            "l1" => Ok(DistanceMetric::L1),
            "l2" => Ok(DistanceMetric::L2),
            other => Err(Error::config(format!("unknown metric {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DistanceMetric::Linf => "linf",
            DistanceMetric::L1 => "l1",
            DistanceMetric::L2 => "l2",
        }
    }

    /// Integer key that orders pairs exactly like the metric does
    /// (squared distance for `L2`).
    #[inline]
    pub fn key(&self, p: &Pixel, q: &Pixel) -> u32 {
        let (a, b) = (p.values(), q.values());
        match self {
            DistanceMetric::Linf => a
                .iter()
                .zip(b)
                .map(|(&x, &y)| x.abs_diff(y) as u32)
                .max()
                .unwrap_or(0),
            DistanceMetric::L1 => a.iter().zip(b).map(|(&x, &y)| x.abs_diff(y) as u32).sum(),
            DistanceMetric::L2 => a
                .iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let d = x.abs_diff(y) as u32;
                    d * d
                })
                .sum(),
        }
    }

    /// Converts a key produced by [`DistanceMetric::key`] back to a distance.
    #[inline]
    pub fn key_to_distance(&self, key: u32) -> f64 {
        match self {
            DistanceMetric::L2 => (key as f64).sqrt(),
            _ => key as f64,
        }
    }

    /// Largest metric distance an ℓ∞ perturbation of size `eps` can cause in
    /// `channels` dimensions.
    pub fn linf_ball_radius(&self, eps: f64, channels: usize) -> f64 {
        match self {
            DistanceMetric::Linf => eps,
            DistanceMetric::L1 => eps * channels as f64,
            DistanceMetric::L2 => eps * (channels as f64).sqrt(),
        }
    }
}

pub fn distance(p: &Pixel, q: &Pixel, metric: DistanceMetric) -> Result<f64> {
    if p.channels() != q.channels() {
        return Err(Error::structural(format!(
            "channel mismatch: {} vs {}",
            p.channels(),
            q.channels()
        )));
    }
    Ok(metric.key_to_distance(metric.key(p, q)))
}

/// Row-major image with interleaved channels.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<u8>,
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Image")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        check_channels(channels)?;
        if height == 0 || width == 0 {
            return Err(Error::structural("image dimensions must be positive"));
        }
        if data.len() != height * width * channels {
            return Err(Error::structural(format!(
                "buffer holds {} bytes, expected {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_pixels(height: usize, width: usize, pixels: &[Pixel]) -> Result<Self> {
        let channels = pixels
            .first()
            .map(|p| p.channels())
            .ok_or_else(|| Error::structural("no pixels"))?;
        let mut data = Vec::with_capacity(pixels.len() * channels);
        for p in pixels {
            if p.channels() != channels {
                return Err(Error::structural("pixels disagree on channel count"));
            }
            data.extend_from_slice(p.values());
        }
        Image::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of pixels, `H * W`.
    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, i: usize) -> Pixel {
        let c = self.channels;
        if c == 1 {
            Pixel::gray(self.data[i])
        } else {
            Pixel::rgb(self.data[3 * i], self.data[3 * i + 1], self.data[3 * i + 2])
        }
    }

    #[inline]
    pub fn set_pixel(&mut self, i: usize, p: Pixel) {
        debug_assert_eq!(p.channels(), self.channels);
        let c = self.channels;
        self.data[c * i..c * i + c].copy_from_slice(p.values());
    }

    pub fn pixels(&self) -> impl Iterator<Item = Pixel> + '_ {
        (0..self.num_pixels()).map(move |i| self.pixel(i))
    }

    pub fn mean_intensity(&self) -> f64 {
        let sum: u64 = self.data.iter().map(|&v| v as u64).sum();
        sum as f64 / self.data.len() as f64
    }
}

#[derive(Clone, Debug, Default)]
pub struct LabeledDataset {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(images: Vec<Image>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::structural(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::structural(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if let Some(first) = images.first() {
            if images.iter().any(|im| im.channels() != first.channels()) {
                return Err(Error::structural("images disagree on channel count"));
            }
        }
        Ok(LabeledDataset {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn channels(&self) -> Option<usize> {
        self.images.first().map(|im| im.channels())
    }

    /// Total pixel count `N` over all images.
    pub fn total_pixels(&self) -> u64 {
        self.images.iter().map(|im| im.num_pixels() as u64).sum()
    }

    /// Keeps only images whose mean channel intensity is at least `threshold`.
    pub fn filter_dark(&self, threshold: f64) -> LabeledDataset {
        let (images, labels) = self
            .images
            .iter()
            .zip(&self.labels)
            .filter(|(im, _)| im.mean_intensity() >= threshold)
            .map(|(im, &l)| (im.clone(), l))
            .unzip();
        LabeledDataset {
            images,
            labels,
            num_classes: self.num_classes,
        }
    }

    /// SHA-256 over shapes, labels and pixel bytes.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.images.len() as u64).to_le_bytes());
        hasher.update((self.num_classes as u64).to_le_bytes());
        for (im, &label) in self.images.iter().zip(&self.labels) {
            for dim in im.shape() {
                hasher.update((dim as u32).to_le_bytes());
            }
            hasher.update((label as u32).to_le_bytes());
            hasher.update(im.data());
        }
        hex::encode(hasher.finalize())
    }
}

/// How a codebook was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algo", rename_all = "lowercase")]
pub enum CodebookSource {
    /// Uniform per-channel color-depth reduction. Codes are scalar levels.
    Binning { k: usize },
    Density { k: usize, r: f64 },
    #[serde(rename = "kmedoids")]
    KMedoids {
        k: usize,
        metric: DistanceMetric,
        seed: u64,
    },
    /// Codes supplied directly by the caller.
    Explicit,
}

/// Ordered codewords. The order is the tie-breaking order for nearest-code lookup.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    codes: Vec<Pixel>,
    channels: usize,
    metric: DistanceMetric,
    source: CodebookSource,
    short: bool,
}

#[derive(Serialize, Deserialize)]
struct CodebookFile {
    channels: usize,
    metric: DistanceMetric,
    source: CodebookSource,
    codes: Vec<Vec<i64>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    short: bool,
}

impl Codebook {
    /// Builds a vector codebook whose codes live in pixel space.
    pub fn new(codes: Vec<Pixel>, metric: DistanceMetric, source: CodebookSource) -> Result<Self> {
        let channels = codes
            .first()
            .map(|c| c.channels())
            .ok_or_else(|| Error::structural("codebook must hold at least one code"))?;
        Codebook::validate(&codes, channels, &source)?;
        Ok(Codebook {
            codes,
            channels,
            metric,
            source,
            short: false,
        })
    }

    /// Per-channel binning levels for an image with `channels` channels.
    pub(crate) fn from_levels(levels: Vec<u8>, channels: usize) -> Result<Self> {
        check_channels(channels)?;
        let k = levels.len();
        let codes = levels.into_iter().map(Pixel::gray).collect::<Vec<_>>();
        let source = CodebookSource::Binning { k };
        Codebook::validate(&codes, channels, &source)?;
        Ok(Codebook {
            codes,
            channels,
            metric: DistanceMetric::Linf,
            source,
            short: false,
        })
    }

    fn validate(codes: &[Pixel], channels: usize, source: &CodebookSource) -> Result<()> {
        if codes.is_empty() {
            return Err(Error::structural("codebook must hold at least one code"));
        }
        let code_channels = if matches!(source, CodebookSource::Binning { .. }) {
            1
        } else {
            channels
        };
        check_channels(channels)?;
        if codes.iter().any(|c| c.channels() != code_channels) {
            return Err(Error::structural("codes disagree on channel count"));
        }
        let mut seen = std::collections::HashSet::with_capacity(codes.len());
        for c in codes {
            if !seen.insert(*c) {
                return Err(Error::structural(format!("duplicate code {c:?}")));
            }
        }
        Ok(())
    }

    pub(crate) fn mark_short(mut self) -> Self {
        self.short = true;
        self
    }

    pub fn codes(&self) -> &[Pixel] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn metric(&self) -> DistanceMetric {
        self.metric
    }

    pub fn source(&self) -> &CodebookSource {
        &self.source
    }

    /// Set when a greedy builder ran out of pixels before reaching `k` codes.
    pub fn is_short(&self) -> bool {
        self.short
    }

    /// True for binning codebooks, whose codes are applied channel by channel.
    pub fn is_per_channel(&self) -> bool {
        matches!(self.source, CodebookSource::Binning { .. })
    }

    /// Number of distinct discretization outputs: `k` for vector codebooks,
    /// `k^C` for per-channel binning.
    pub fn num_outcomes(&self) -> usize {
        if self.is_per_channel() {
            self.codes.len().pow(self.channels as u32)
        } else {
            self.codes.len()
        }
    }

    /// Lowest-index code at minimal distance from `p` and that distance.
    ///
    /// Binning codebooks are looked up channel by channel; the returned index
    /// is then the mixed-radix combination of the per-channel level indices
    /// and the distance is measured under ℓ∞.
    pub fn nearest(&self, p: &Pixel) -> Result<(usize, f64)> {
        if p.channels() != self.channels {
            return Err(Error::structural(format!(
                "pixel has {} channels, codebook expects {}",
                p.channels(),
                self.channels
            )));
        }
        if self.is_per_channel() {
            let mut index = 0;
            let mut worst = 0u32;
            for &v in p.values() {
                let (i, key) = self.nearest_scalar(v);
                index = index * self.codes.len() + i;
                worst = worst.max(key);
            }
            return Ok((index, worst as f64));
        }
        let (i, key) = self.nearest_key(p);
        Ok((i, self.metric.key_to_distance(key)))
    }

    /// Unchecked nearest lookup returning the raw metric key.
    #[inline]
    pub(crate) fn nearest_key(&self, p: &Pixel) -> (usize, u32) {
        let mut best = (0, u32::MAX);
        for (i, c) in self.codes.iter().enumerate() {
            let key = self.metric.key(p, c);
            if key < best.1 {
                best = (i, key);
            }
        }
        best
    }

    #[inline]
    fn nearest_scalar(&self, v: u8) -> (usize, u32) {
        let mut best = (0, u32::MAX);
        for (i, c) in self.codes.iter().enumerate() {
            let key = v.abs_diff(c.values()[0]) as u32;
            if key < best.1 {
                best = (i, key);
            }
        }
        best
    }

    /// Pixel value of outcome `index` as numbered by [`Codebook::nearest`].
    pub fn outcome_pixel(&self, index: usize) -> Pixel {
        if !self.is_per_channel() {
            return self.codes[index];
        }
        let k = self.codes.len();
        if self.channels == 1 {
            return self.codes[index];
        }
        let level = |i: usize| self.codes[i].values()[0];
        Pixel::rgb(level(index / (k * k)), level((index / k) % k), level(index % k))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CodebookFile {
            channels: self.channels,
            metric: self.metric,
            source: self.source.clone(),
            codes: self
                .codes
                .iter()
                .map(|c| c.values().iter().map(|&v| v as i64).collect())
                .collect(),
            short: self.short,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CodebookFile = serde_json::from_str(text)?;
        check_channels(file.channels)?;
        let codes = file
            .codes
            .iter()
            .map(|c| Pixel::from_ints(c))
            .collect::<Result<Vec<_>>>()?;
        Codebook::validate(&codes, file.channels, &file.source)?;
        Ok(Codebook {
            codes,
            channels: file.channels,
            metric: file.metric,
            source: file.source,
            short: file.short,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Codebook::from_json(&text)
    }

    pub fn digest(&self) -> String {
        let json = self.to_json().unwrap_or_default();
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Nearest code of `p` in `cb`: lowest index among the minimisers, plus the distance.
pub fn nearest_code(p: &Pixel, cb: &Codebook) -> Result<(usize, f64)> {
    cb.nearest(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray_book(values: &[u8]) -> Codebook {
        Codebook::new(
            values.iter().map(|&v| Pixel::gray(v)).collect(),
            DistanceMetric::Linf,
            CodebookSource::Explicit,
        )
        .unwrap()
    }

    #[test]
    fn distance_examples() {
        let black = Pixel::rgb(0, 0, 0);
        let white = Pixel::rgb(255, 255, 255);
        assert_eq!(distance(&black, &white, DistanceMetric::Linf).unwrap(), 255.0);
        let p = Pixel::rgb(10, 20, 30);
        assert_eq!(distance(&p, &p, DistanceMetric::L1).unwrap(), 0.0);
        let q = Pixel::rgb(1, 2, 3);
        assert_eq!(distance(&black, &q, DistanceMetric::L1).unwrap(), 6.0);
        let l2 = distance(&black, &q, DistanceMetric::L2).unwrap();
        assert!((l2 - 14f64.sqrt()).abs() < 1e-12);
        assert!((l2 - 3.7417).abs() < 1e-4);
    }

    #[test]
    fn distance_rejects_channel_mismatch() {
        let err = distance(&Pixel::gray(0), &Pixel::rgb(0, 0, 0), DistanceMetric::Linf);
        assert!(matches!(err, Err(Error::Structural(_))));
    }

    #[test]
    fn nearest_examples() {
        let cb = gray_book(&[0, 255]);
        assert_eq!(nearest_code(&Pixel::gray(100), &cb).unwrap(), (0, 100.0));
        let cb = gray_book(&[100, 140]);
        assert_eq!(nearest_code(&Pixel::gray(120), &cb).unwrap(), (0, 20.0));
        let cb = Codebook::new(
            vec![Pixel::rgb(0, 0, 0), Pixel::rgb(20, 0, 0)],
            DistanceMetric::Linf,
            CodebookSource::Explicit,
        )
        .unwrap();
        assert_eq!(nearest_code(&Pixel::rgb(10, 10, 10), &cb).unwrap(), (0, 10.0));
    }

    #[test]
    fn codebook_rejects_empty_and_duplicates() {
        assert!(Codebook::new(vec![], DistanceMetric::Linf, CodebookSource::Explicit).is_err());
        assert!(Codebook::new(
            vec![Pixel::gray(3), Pixel::gray(3)],
            DistanceMetric::Linf,
            CodebookSource::Explicit
        )
        .is_err());
    }

    #[test]
    fn codebook_json_roundtrip() {
        let cb = Codebook::new(
            vec![Pixel::rgb(1, 2, 3), Pixel::rgb(200, 100, 0)],
            DistanceMetric::L1,
            CodebookSource::KMedoids {
                k: 2,
                metric: DistanceMetric::L1,
                seed: 7,
            },
        )
        .unwrap();
        let json = cb.to_json().unwrap();
        assert!(json.contains("\"metric\": \"l1\""));
        assert!(json.contains("\"algo\": \"kmedoids\""));
        assert_eq!(Codebook::from_json(&json).unwrap(), cb);
    }

    #[test]
    fn codebook_json_rejects_off_lattice() {
        let text = r#"{"channels":1,"metric":"linf","source":{"algo":"explicit"},"codes":[[256]]}"#;
        assert!(Codebook::from_json(text).is_err());
    }

    #[test]
    fn lattice_index_roundtrip() {
        let p = Pixel::rgb(1, 2, 3);
        assert_eq!(p.lattice_index(), 65536 + 2 * 256 + 3);
        assert_eq!(Pixel::from_lattice_index(p.lattice_index(), 3), p);
    }

    fn any_rgb() -> impl Strategy<Value = Pixel> {
        (any::<u8>(), any::<u8>(), any::<u8>()).prop_map(|(r, g, b)| Pixel::rgb(r, g, b))
    }

    proptest! {
        #[test]
        fn triangle_inequality(p in any_rgb(), q in any_rgb(), s in any_rgb()) {
            for m in [DistanceMetric::Linf, DistanceMetric::L1, DistanceMetric::L2] {
                let pq = distance(&p, &q, m).unwrap();
                let qs = distance(&q, &s, m).unwrap();
                let ps = distance(&p, &s, m).unwrap();
                prop_assert!(ps <= pq + qs + 1e-9);
                prop_assert_eq!(pq, distance(&q, &p, m).unwrap());
                prop_assert_eq!(pq == 0.0, p == q);
            }
        }

        #[test]
        fn nearest_is_minimal_and_deterministic(
            p in any_rgb(),
            codes in proptest::collection::hash_set(any_rgb(), 1..8),
        ) {
            let cb = Codebook::new(codes.into_iter().collect(), DistanceMetric::Linf, CodebookSource::Explicit).unwrap();
            let (i, d) = nearest_code(&p, &cb).unwrap();
            for (j, c) in cb.codes().iter().enumerate() {
                let dc = distance(&p, c, DistanceMetric::Linf).unwrap();
                prop_assert!(d <= dc);
                if j < i {
                    prop_assert!(dc > d);
                }
            }
            prop_assert_eq!(nearest_code(&p, &cb).unwrap(), (i, d));
        }
    }
}
