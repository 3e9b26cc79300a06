//! Nearest class-mean classifier under ℓ1 distance.

use serde_json::{json, Value};

use super::{read_classes, read_shape, Classifier};
use crate::discretize::Discretizer;
use crate::error::{Error, Result};
use crate::pixel::{Image, LabeledDataset, Pixel};

#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeClassifier {
    shape: [usize; 3],
    /// One flattened mean image per class, in byte scale.
    prototypes: Vec<Vec<f64>>,
}

impl PrototypeClassifier {
    pub fn new(shape: [usize; 3], prototypes: Vec<Vec<f64>>) -> Result<Self> {
        let len = shape.iter().product::<usize>();
        if prototypes.is_empty() {
            return Err(Error::structural("prototype classifier needs at least one class"));
        }
        if let Some(bad) = prototypes.iter().position(|p| p.len() != len) {
            return Err(Error::structural(format!(
                "prototype {bad} has length {}, expected {len}",
                prototypes[bad].len()
            )));
        }
        Ok(PrototypeClassifier { shape, prototypes })
    }

    pub fn prototypes(&self) -> &[Vec<f64>] {
        &self.prototypes
    }

    pub fn from_value(model: &Value) -> Result<Self> {
        let shape = read_shape(model)?;
        let classes = read_classes(model)?;
        let prototypes: Vec<Vec<f64>> =
            serde_json::from_value(model.get("prototypes").cloned().unwrap_or(Value::Null))
                .map_err(|e| Error::parse("prototypes", e.to_string()))?;
        if prototypes.len() != classes {
            return Err(Error::parse(
                "prototypes",
                format!("{} prototypes for {classes} classes", prototypes.len()),
            ));
        }
        PrototypeClassifier::new(shape, prototypes)
    }

    /// ℓ1 distance splits over pixels, so against each rival class the pixel-wise choice that
    /// most favours the rival is the worst case for `label`.
    fn product_counterexample(&self, base: &Image, choices: &[Vec<Pixel>], label: usize) -> Result<Option<Image>> {
        self.check_shape(base)?;
        if label >= self.prototypes.len() {
            return Err(Error::structural(format!("label {label} out of range")));
        }
        if choices.len() != base.num_pixels() || choices.iter().any(Vec::is_empty) {
            return Err(Error::structural("need a non-empty choice set for every pixel"));
        }
        let c = base.channels();
        let own = &self.prototypes[label];
        for (j, rival) in self.prototypes.iter().enumerate() {
            if j == label {
                continue;
            }
            let mut z = base.clone();
            for (i, opts) in choices.iter().enumerate() {
                let gain = |p: &Pixel| -> f64 {
                    p.values()
                        .iter()
                        .zip(&rival[i * c..])
                        .zip(&own[i * c..])
                        .map(|((&v, &r), &o)| (r - v as f64).abs() - (o - v as f64).abs())
                        .sum()
                };
                let best = opts.iter().min_by(|a, b| gain(a).total_cmp(&gain(b))).unwrap();
                z.set_pixel(i, *best);
            }
            if self.classify(&z)? != label {
                return Ok(Some(z));
            }
        }
        Ok(None)
    }
}

impl Classifier for PrototypeClassifier {
    fn kind(&self) -> &'static str {
        "prototype"
    }

    fn input_shape(&self) -> [usize; 3] {
        self.shape
    }

    fn num_classes(&self) -> usize {
        self.prototypes.len()
    }

    fn classify(&self, img: &Image) -> Result<usize> {
        self.check_shape(img)?;
        let mut best = (0, f64::INFINITY);
        for (class, proto) in self.prototypes.iter().enumerate() {
            let d: f64 = proto
                .iter()
                .zip(img.data())
                .map(|(&m, &v)| (m - v as f64).abs())
                .sum();
            if d < best.1 {
                best = (class, d);
            }
        }
        Ok(best.0)
    }

    fn search_product(&self, base: &Image, choices: &[Vec<Pixel>], label: usize) -> Option<Result<Option<Image>>> {
        Some(self.product_counterexample(base, choices, label))
    }

    fn to_json(&self) -> Value {
        json!({
            "type": "prototype",
            "input": self.shape,
            "classes": self.prototypes.len(),
            "prototypes": self.prototypes,
        })
    }
}

/// Class means of the discretized training images.
pub fn prototype_fit(ds: &LabeledDataset, d: &Discretizer) -> Result<PrototypeClassifier> {
    let first = ds
        .images
        .first()
        .ok_or_else(|| Error::config("prototype fit needs a non-empty dataset"))?;
    let shape = first.shape();
    let len = first.data().len();
    let mut sums = vec![vec![0.0f64; len]; ds.num_classes];
    let mut counts = vec![0usize; ds.num_classes];
    for (img, &label) in ds.images.iter().zip(&ds.labels) {
        if img.shape() != shape {
            return Err(Error::structural("prototype fit needs images of one shape"));
        }
        let t = d.discretize_image(img)?;
        for (s, &v) in sums[label].iter_mut().zip(t.data()) {
            *s += v as f64;
        }
        counts[label] += 1;
    }
    if let Some(empty) = counts.iter().position(|&n| n == 0) {
        return Err(Error::config(format!("class {empty} has no training examples")));
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= n as f64);
    }
    PrototypeClassifier::new(shape, sums)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_pixel(v: u8) -> Image {
        Image::new(1, 1, 1, vec![v]).unwrap()
    }

    #[test]
    fn nearer_prototype_and_ties() {
        let clf = PrototypeClassifier::new([1, 1, 1], vec![vec![0.0], vec![255.0]]).unwrap();
        assert_eq!(clf.classify(&one_pixel(100)).unwrap(), 0);
        assert_eq!(clf.classify(&one_pixel(200)).unwrap(), 1);
        let tie = PrototypeClassifier::new([1, 1, 1], vec![vec![100.0], vec![200.0]]).unwrap();
        assert_eq!(tie.classify(&one_pixel(150)).unwrap(), 0);
        assert!(clf.classify(&Image::new(1, 2, 1, vec![0, 0]).unwrap()).is_err());
    }

    #[test]
    fn fit_means_and_degenerate_classes() {
        let d = Discretizer::binning(256, 1).unwrap();
        let ds = LabeledDataset::new(
            vec![one_pixel(0), one_pixel(10), one_pixel(250)],
            vec![0, 0, 1],
            2,
        )
        .unwrap();
        let clf = prototype_fit(&ds, &d).unwrap();
        assert_eq!(clf.prototypes(), &[vec![5.0], vec![250.0]]);

        let same = LabeledDataset::new(vec![one_pixel(7), one_pixel(7)], vec![0, 1], 2).unwrap();
        let clf = prototype_fit(&same, &d).unwrap();
        for v in [0u8, 7, 255] {
            assert_eq!(clf.classify(&one_pixel(v)).unwrap(), 0);
        }

        let missing = LabeledDataset::new(vec![one_pixel(7)], vec![0], 2).unwrap();
        assert!(prototype_fit(&missing, &d).is_err());
    }

    #[test]
    fn fit_uses_discretized_images() {
        let d = Discretizer::binning(2, 1).unwrap();
        let ds = LabeledDataset::new(vec![one_pixel(100), one_pixel(200)], vec![0, 1], 2).unwrap();
        let clf = prototype_fit(&ds, &d).unwrap();
        assert_eq!(clf.prototypes(), &[vec![0.0], vec![255.0]]);
    }
}
