//! Sound robustness certificates for `F(T(x))` under an ℓ∞ budget.
//!
//! A pixel `p` with nearest code `c*` can only be discretized to codes in
//! `{c : ‖p − c‖ <= ‖p − c*‖ + 2ε}` after any ε-perturbation. The product of
//! these per-pixel sets covers every discretized image an attacker can reach,
//! so classifying all of them correctly proves robustness at `x`.

use rayon::prelude::*;
use serde::Serialize;

use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::pixel::{Codebook, Image, LabeledDataset, Pixel};

/// `(ε, b)` rows of the MNIST certificate table, ε in unit scale.
pub const MNIST_TABLE: [(f64, u32); 7] = [
    (0.0, 0),
    (0.05, 30),
    (0.1, 30),
    (0.15, 26),
    (0.2, 25),
    (0.25, 25),
    (0.3, 25),
];

pub const DEFAULT_BUDGET_BITS: u32 = 20;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertifyConfig {
    /// ℓ∞ budget in byte scale.
    pub eps: f64,
    /// Images whose outcome space exceeds `2^budget_bits` are not enumerated.
    pub budget_bits: u32,
    pub delta: f64,
    /// Keep per-image verdicts in the report.
    pub keep_verdicts: bool,
}

impl CertifyConfig {
    pub fn new(eps: f64, budget_bits: u32, delta: f64) -> Result<Self> {
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(Error::config(format!("eps must be >= 0, got {eps}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::config(format!("delta must be in (0, 1), got {delta}")));
        }
        if budget_bits > 62 {
            return Err(Error::config("budget bits above 62 cannot be enumerated"));
        }
        Ok(CertifyConfig {
            eps,
            budget_bits,
            delta,
            keep_verdicts: false,
        })
    }
}

fn scalar_candidates(v: u8, levels: &[Pixel], slack: f64) -> Vec<usize> {
    let d: Vec<f64> = levels
        .iter()
        .map(|c| (v as f64 - c.values()[0] as f64).abs())
        .collect();
    let best = d.iter().copied().fold(f64::INFINITY, f64::min);
    (0..d.len()).filter(|&i| d[i] <= best + slack).collect()
}

/// Outcome indices a pixel may be discretized to under an ε-perturbation,
/// ascending. Binning codebooks apply the test per channel.
pub fn candidate_codes(p: &Pixel, cb: &Codebook, eps: f64) -> Vec<usize> {
    if cb.is_per_channel() {
        let slack = 2.0 * eps + 1e-9;
        let k = cb.len();
        let mut out = vec![0usize];
        for &v in p.values() {
            let cands = scalar_candidates(v, cb.codes(), slack);
            out = out
                .iter()
                .flat_map(|&prefix| cands.iter().map(move |&t| prefix * k + t))
                .collect();
        }
        return out;
    }
    let metric = cb.metric();
    // An ℓ∞ step of ε moves a pixel by at most this much in the codebook metric.
    let slack = 2.0 * metric.linf_ball_radius(eps, p.channels()) + 1e-9;
    let d: Vec<f64> = cb
        .codes()
        .iter()
        .map(|c| metric.key_to_distance(metric.key(p, c)))
        .collect();
    let best = d.iter().copied().fold(f64::INFINITY, f64::min);
    (0..d.len()).filter(|&i| d[i] <= best + slack).collect()
}

/// `log2 |S(x)|` and the per-pixel candidate counts.
pub fn outcome_space_size(img: &Image, cb: &Codebook, eps: f64) -> Result<(f64, Vec<usize>)> {
    if img.channels() != cb.channels() {
        return Err(Error::structural("image and codebook channel counts differ"));
    }
    let sizes: Vec<usize> = img.pixels().map(|p| candidate_codes(&p, cb, eps).len()).collect();
    Ok((log2_of_sizes(&sizes), sizes))
}

fn log2_of_sizes(sizes: &[usize]) -> f64 {
    sizes.iter().map(|&n| (n as f64).log2()).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum Verdict {
    Success,
    Fail {
        #[serde(serialize_with = "serialize_image")]
        witness: Image,
    },
    Unable {
        reason: String,
    },
}

fn serialize_image<S: serde::Serializer>(img: &Image, s: S) -> std::result::Result<S::Ok, S::Error> {
    img.data().serialize(s)
}

impl Verdict {
    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Success => "success",
            Verdict::Fail { .. } => "fail",
            Verdict::Unable { .. } => "unable",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ImageCertificate {
    pub index: usize,
    pub label: usize,
    pub log2_size: f64,
    #[serde(flatten)]
    pub verdict: Verdict,
}

/// Checks `F(z) = label` for every `z` in the outcome space of `img`.
pub fn local_certificate(
    img: &Image,
    label: usize,
    cb: &Codebook,
    clf: &dyn Classifier,
    cfg: &CertifyConfig,
) -> Result<Verdict> {
    if img.channels() != cb.channels() {
        return Err(Error::structural("image and codebook channel counts differ"));
    }
    let cands: Vec<Vec<usize>> = img.pixels().map(|p| candidate_codes(&p, cb, cfg.eps)).collect();
    let sizes: Vec<usize> = cands.iter().map(Vec::len).collect();
    let log2_size = log2_of_sizes(&sizes);
    // A small tolerance keeps exact powers of two such as 2^b itself inside the budget.
    if log2_size > cfg.budget_bits as f64 + 1e-9 {
        return Ok(Verdict::Unable {
            reason: format!("outcome space 2^{log2_size:.2} exceeds 2^{}", cfg.budget_bits),
        });
    }

    let choices: Vec<Vec<Pixel>> =
        cands.iter().map(|c| c.iter().map(|&o| cb.outcome_pixel(o)).collect()).collect();
    if let Some(found) = clf.search_product(img, &choices, label) {
        return Ok(match found {
            Ok(None) => Verdict::Success,
            Ok(Some(witness)) => Verdict::Fail { witness },
            Err(e) => Verdict::Unable {
                reason: format!("classifier failed: {e}"),
            },
        });
    }

    let mut z = img.clone();
    let free: Vec<usize> = (0..cands.len()).filter(|&i| cands[i].len() > 1).collect();
    for (i, c) in cands.iter().enumerate() {
        z.set_pixel(i, cb.outcome_pixel(c[0]));
    }
    // Odometer over the free pixels; the last pixel's digit turns fastest.
    let mut digits = vec![0usize; free.len()];
    loop {
        match clf.classify(&z) {
            Ok(y) if y == label => {}
            Ok(_) => return Ok(Verdict::Fail { witness: z }),
            Err(e) => {
                return Ok(Verdict::Unable {
                    reason: format!("classifier failed: {e}"),
                })
            }
        }
        let mut pos = free.len();
        loop {
            if pos == 0 {
                return Ok(Verdict::Success);
            }
            pos -= 1;
            let px = free[pos];
            digits[pos] += 1;
            if digits[pos] < cands[px].len() {
                z.set_pixel(px, cb.outcome_pixel(cands[px][digits[pos]]));
                break;
            }
            digits[pos] = 0;
            z.set_pixel(px, cb.outcome_pixel(cands[px][0]));
        }
    }
}

/// `(1 − sqrt(ln(1/δ) / 2m)) · ŝ`, clamped at zero.
pub fn hoeffding_lower_bound(s_hat: f64, m: usize, delta: f64) -> f64 {
    let slack = ((1.0 / delta).ln() / (2.0 * m as f64)).sqrt();
    ((1.0 - slack) * s_hat).max(0.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct VerdictCounts {
    pub unable: usize,
    pub success: usize,
    pub fail: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CertificateReport {
    /// Budget in unit scale.
    pub epsilon: f64,
    pub epsilon_byte: f64,
    pub b: u32,
    pub delta: f64,
    pub m: usize,
    /// Fractions of the `m` images.
    pub unable: f64,
    pub success: f64,
    pub fail: f64,
    pub counts: VerdictCounts,
    pub s_hat: f64,
    pub s_hat_star: f64,
    /// Success rate among images that were enumerated.
    pub success_given_able: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdicts: Option<Vec<ImageCertificate>>,
}

impl CertificateReport {
    pub fn from_counts(counts: VerdictCounts, cfg: &CertifyConfig) -> Result<Self> {
        let m = counts.unable + counts.success + counts.fail;
        if m == 0 {
            return Err(Error::config("certificate needs at least one image"));
        }
        let frac = |n: usize| n as f64 / m as f64;
        let s_hat = frac(counts.success);
        let able = counts.success + counts.fail;
        Ok(CertificateReport {
            epsilon: cfg.eps / 255.0,
            epsilon_byte: cfg.eps,
            b: cfg.budget_bits,
            delta: cfg.delta,
            m,
            unable: frac(counts.unable),
            success: s_hat,
            fail: frac(counts.fail),
            counts,
            s_hat,
            s_hat_star: hoeffding_lower_bound(s_hat, m, cfg.delta),
            success_given_able: (able > 0).then(|| counts.success as f64 / able as f64),
            verdicts: None,
        })
    }
}

pub fn global_certificate(
    ds: &LabeledDataset,
    cb: &Codebook,
    clf: &dyn Classifier,
    cfg: &CertifyConfig,
) -> Result<CertificateReport> {
    let results: Vec<ImageCertificate> = ds
        .images
        .par_iter()
        .zip(&ds.labels)
        .enumerate()
        .map(|(index, (img, &label))| {
            let verdict = local_certificate(img, label, cb, clf, cfg)?;
            let (log2_size, _) = outcome_space_size(img, cb, cfg.eps)?;
            Ok(ImageCertificate {
                index,
                label,
                log2_size,
                verdict,
            })
        })
        .collect::<Result<_>>()?;
    let mut counts = VerdictCounts::default();
    for r in &results {
        match r.verdict {
            Verdict::Success => counts.success += 1,
            Verdict::Fail { .. } => counts.fail += 1,
            Verdict::Unable { .. } => counts.unable += 1,
        }
    }
    let mut report = CertificateReport::from_counts(counts, cfg)?;
    if cfg.keep_verdicts {
        report.verdicts = Some(results);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::PrototypeClassifier;
    use crate::codebook::binning_codes;
    use crate::discretize::Discretizer;
    use crate::hardness::reachable_codes;
    use crate::pixel::{CodebookSource, DistanceMetric};
    use proptest::prelude::*;

    fn gray_book(values: &[u8]) -> Codebook {
        Codebook::new(
            values.iter().map(|&v| Pixel::gray(v)).collect(),
            DistanceMetric::Linf,
            CodebookSource::Explicit,
        )
        .unwrap()
    }

    struct Constant(usize, [usize; 3]);

    impl Classifier for Constant {
        fn kind(&self) -> &'static str {
            "constant"
        }
        fn input_shape(&self) -> [usize; 3] {
            self.1
        }
        fn num_classes(&self) -> usize {
            self.0 + 1
        }
        fn classify(&self, _: &Image) -> Result<usize> {
            Ok(self.0)
        }
        fn to_json(&self) -> serde_json::Value {
            serde_json::Value::Null
        }
    }

    /// Correct only on one exact image.
    struct OnlyOn(Image);

    impl Classifier for OnlyOn {
        fn kind(&self) -> &'static str {
            "only-on"
        }
        fn input_shape(&self) -> [usize; 3] {
            self.0.shape()
        }
        fn num_classes(&self) -> usize {
            2
        }
        fn classify(&self, img: &Image) -> Result<usize> {
            Ok(usize::from(img != &self.0))
        }
        fn to_json(&self) -> serde_json::Value {
            serde_json::Value::Null
        }
    }

    #[test]
    fn candidate_examples() {
        let cb = gray_book(&[0, 255]);
        assert_eq!(candidate_codes(&Pixel::gray(26), &cb, 76.5), vec![0]);
        assert_eq!(candidate_codes(&Pixel::gray(128), &cb, 76.5), vec![0, 1]);
        let ties = gray_book(&[0, 20, 200]);
        assert_eq!(candidate_codes(&Pixel::gray(10), &ties, 0.0), vec![0, 1]);
        assert_eq!(candidate_codes(&Pixel::gray(12), &ties, 0.0), vec![1]);
    }

    #[test]
    fn outcome_space_arithmetic() {
        let cb = gray_book(&[0, 255]);
        let img = Image::new(1, 4, 1, vec![0, 255, 128, 127]).unwrap();
        let (log2, sizes) = outcome_space_size(&img, &cb, 1.0).unwrap();
        assert_eq!(sizes, vec![1, 1, 2, 2]);
        assert_eq!(log2, 2.0);
        let (log2, _) = outcome_space_size(&img, &cb, 0.0).unwrap();
        assert_eq!(log2, 0.0);
        let wide = Image::new(28, 28, 1, vec![127; 784]).unwrap();
        assert_eq!(outcome_space_size(&wide, &cb, 1.0).unwrap().0, 784.0);
    }

    #[test]
    fn local_examples() {
        let cb = gray_book(&[0, 255]);
        let cfg = CertifyConfig::new(76.5, 20, 0.01).unwrap();
        let img = Image::new(1, 2, 1, vec![100, 10]).unwrap();
        assert_eq!(
            local_certificate(&img, 3, &cb, &Constant(3, [1, 2, 1]), &cfg).unwrap(),
            Verdict::Success
        );

        let t = Discretizer::from_codebook(cb.clone()).unwrap().discretize_image(&img).unwrap();
        match local_certificate(&img, 0, &cb, &OnlyOn(t.clone()), &cfg).unwrap() {
            Verdict::Fail { witness } => assert_ne!(witness, t),
            v => panic!("expected failure, got {v:?}"),
        }

        let clf = PrototypeClassifier::new([1, 2, 1], vec![vec![0.0, 0.0], vec![255.0, 0.0]]).unwrap();
        assert_eq!(outcome_space_size(&img, &cb, 76.5).unwrap().1, vec![2, 1]);
        match local_certificate(&img, 0, &cb, &clf, &cfg).unwrap() {
            Verdict::Fail { witness } => assert_eq!(witness.data(), &[255, 0]),
            v => panic!("expected failure, got {v:?}"),
        }

        let tight = CertifyConfig::new(76.5, 0, 0.01).unwrap();
        assert!(matches!(
            local_certificate(&img, 0, &cb, &clf, &tight).unwrap(),
            Verdict::Unable { .. }
        ));
        let wrong_shape = Image::new(1, 3, 1, vec![100, 10, 0]).unwrap();
        assert!(matches!(
            local_certificate(&wrong_shape, 0, &cb, &clf, &cfg).unwrap(),
            Verdict::Unable { .. }
        ));
    }

    #[test]
    fn hoeffding_table_rows() {
        let cfg = CertifyConfig::new(25.5, 30, 0.01).unwrap();
        let counts = VerdictCounts {
            unable: 0,
            success: 9643,
            fail: 357,
        };
        let rep = CertificateReport::from_counts(counts, &cfg).unwrap();
        let closed = (1.0 - ((100.0f64).ln() / 20000.0).sqrt()) * 0.9643;
        assert!((rep.s_hat_star - closed).abs() < 1e-12);
        assert!((rep.s_hat_star - 0.9497).abs() < 1e-4);
        assert!((rep.epsilon - 0.1).abs() < 1e-12);
        assert_eq!(hoeffding_lower_bound(0.0, 10, 0.01), 0.0);
        assert!((hoeffding_lower_bound(0.7, 10, 1.0 - 1e-15) - 0.7).abs() < 1e-6);
        assert_eq!(hoeffding_lower_bound(1.0, 1, 1e-6), 0.0);
    }

    #[test]
    fn global_counts_and_fractions() {
        let cb = gray_book(&[0, 255]);
        let imgs: Vec<Image> = [0u8, 128, 255, 127]
            .iter()
            .map(|&v| Image::new(1, 1, 1, vec![v]).unwrap())
            .collect();
        let ds = LabeledDataset::new(imgs, vec![0, 1, 1, 0], 2).unwrap();
        let clf = PrototypeClassifier::new([1, 1, 1], vec![vec![0.0], vec![255.0]]).unwrap();
        let mut cfg = CertifyConfig::new(10.0, 0, 0.01).unwrap();
        cfg.keep_verdicts = true;
        let rep = global_certificate(&ds, &cb, &clf, &cfg).unwrap();
        assert_eq!(
            rep.counts,
            VerdictCounts {
                unable: 2,
                success: 2,
                fail: 0
            }
        );
        assert!((rep.unable + rep.success + rep.fail - 1.0).abs() < 1e-12);
        assert_eq!(rep.success_given_able, Some(1.0));
        assert!(rep.s_hat_star <= rep.s_hat);
        let json = serde_json::to_value(&rep).unwrap();
        for key in ["epsilon", "b", "unable", "success", "fail", "s_hat", "s_hat_star"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(json["verdicts"][1]["verdict"], "unable");
    }

    #[test]
    fn binning_candidates_per_channel() {
        let cb = binning_codes(2, 3).unwrap();
        let c = candidate_codes(&Pixel::rgb(127, 0, 128), &cb, 1.0);
        assert_eq!(c, vec![0, 1, 4, 5]);
    }

    /// Every lattice perturbation of a tiny grayscale image, pushed through `T` and `F`.
    fn brute_force_robust(img: &Image, label: usize, d: &Discretizer, clf: &dyn Classifier, radius: i32) -> bool {
        let n = img.num_pixels();
        let ranges: Vec<(i32, i32)> = img
            .data()
            .iter()
            .map(|&v| ((v as i32 - radius).max(0), (v as i32 + radius).min(255)))
            .collect();
        let mut cur: Vec<i32> = ranges.iter().map(|r| r.0).collect();
        loop {
            let z = Image::new(1, n, 1, cur.iter().map(|&v| v as u8).collect()).unwrap();
            if clf.classify(&d.discretize_image(&z).unwrap()).unwrap() != label {
                return false;
            }
            let mut i = 0;
            loop {
                if i == n {
                    return true;
                }
                cur[i] += 1;
                if cur[i] <= ranges[i].1 {
                    break;
                }
                cur[i] = ranges[i].0;
                i += 1;
            }
        }
    }

    /// Hides the wrapped classifier's product search, forcing enumeration.
    struct Enumerated<'a>(&'a dyn Classifier);

    impl Classifier for Enumerated<'_> {
        fn kind(&self) -> &'static str {
            "enumerated"
        }
        fn input_shape(&self) -> [usize; 3] {
            self.0.input_shape()
        }
        fn num_classes(&self) -> usize {
            self.0.num_classes()
        }
        fn classify(&self, img: &Image) -> Result<usize> {
            self.0.classify(img)
        }
        fn to_json(&self) -> serde_json::Value {
            self.0.to_json()
        }
    }

    fn same_kind(a: &Verdict, b: &Verdict) -> bool {
        std::mem::discriminant(a) == std::mem::discriminant(b)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn prototype_search_matches_enumeration(
            data in proptest::collection::vec(any::<u8>(), 3..=9),
            codes in proptest::collection::hash_set((any::<u8>(), any::<u8>(), any::<u8>()), 1..6),
            quarters in proptest::collection::vec(0u16..1024, 9..=27),
            label in 0usize..3,
            eps in 0.0f64..80.0,
        ) {
            let n = data.len() / 3;
            let data = data[..3 * n].to_vec();
            let cb = Codebook::new(
                codes.into_iter().map(|(r, g, b)| Pixel::rgb(r, g, b)).collect(),
                DistanceMetric::Linf,
                CodebookSource::Explicit,
            ).unwrap();
            let p: Vec<Vec<f64>> = (0..3)
                .map(|c| (0..3 * n).map(|i| quarters[(c * 3 * n + i) % quarters.len()] as f64 / 4.0).collect())
                .collect();
            let clf = PrototypeClassifier::new([1, n, 3], p).unwrap();
            let img = Image::new(1, n, 3, data).unwrap();
            let cfg = CertifyConfig::new(eps, 30, 0.01).unwrap();
            let fast = local_certificate(&img, label, &cb, &clf, &cfg).unwrap();
            let slow = local_certificate(&img, label, &cb, &Enumerated(&clf), &cfg).unwrap();
            prop_assert!(same_kind(&fast, &slow), "{fast:?} vs {slow:?}");
            if let Verdict::Fail { witness } = &fast {
                prop_assert_ne!(clf.classify(witness).unwrap(), label);
            }
        }

        #[test]
        fn success_is_sound(
            data in proptest::collection::vec(any::<u8>(), 1..=3),
            codes in proptest::collection::btree_set(any::<u8>(), 1..=4),
            protos in proptest::collection::vec(any::<u8>(), 2..=6),
            label in 0usize..2,
            eps in 0.0f64..12.0,
        ) {
            let n = data.len();
            let cb = gray_book(&codes.into_iter().collect::<Vec<_>>());
            let d = Discretizer::from_codebook(cb.clone()).unwrap();
            let p: Vec<Vec<f64>> = (0..2).map(|c| (0..n).map(|i| protos[(c * n + i) % protos.len()] as f64).collect()).collect();
            let clf = PrototypeClassifier::new([1, n, 1], p).unwrap();
            let img = Image::new(1, n, 1, data).unwrap();
            let cfg = CertifyConfig::new(eps, 30, 0.01).unwrap();
            if local_certificate(&img, label, &cb, &clf, &cfg).unwrap() == Verdict::Success {
                prop_assert!(brute_force_robust(&img, label, &d, &clf, eps.floor() as i32));
            }
        }

        #[test]
        fn candidates_cover_reachable(
            v in (any::<u8>(), any::<u8>(), any::<u8>()),
            codes in proptest::collection::hash_set((any::<u8>(), any::<u8>(), any::<u8>()), 1..6),
            eps in 0.0f64..6.0,
            metric in prop_oneof![Just(DistanceMetric::Linf), Just(DistanceMetric::L1), Just(DistanceMetric::L2)],
        ) {
            let cb = Codebook::new(
                codes.into_iter().map(|(r, g, b)| Pixel::rgb(r, g, b)).collect(),
                metric,
                CodebookSource::Explicit,
            ).unwrap();
            let d = Discretizer::from_codebook(cb.clone()).unwrap();
            let p = Pixel::rgb(v.0, v.1, v.2);
            let cands = candidate_codes(&p, &cb, eps);
            for c in reachable_codes(&p, &d, eps) {
                prop_assert!(cands.contains(&c));
            }
        }
    }
}
