//! Forward-only classifiers `F` evaluated on discretized images.
//!
//! Adapters implement [`Classifier`]. Model files are JSON objects whose
//! `"type"` field selects a loader from the [`ClassifierRegistry`].

mod mlp;
mod prototype;

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::Value;

pub use mlp::{Activation, Layer, Mlp};
pub use prototype::{prototype_fit, PrototypeClassifier};

use crate::error::{Error, Result};
use crate::pixel::{Image, Pixel};

pub trait Classifier: Send + Sync {
    /// The `"type"` tag written to model files.
    fn kind(&self) -> &'static str;

    /// `[height, width, channels]` of accepted images.
    fn input_shape(&self) -> [usize; 3];

    fn num_classes(&self) -> usize;

    fn classify(&self, img: &Image) -> Result<usize>;

    fn to_json(&self) -> Value;

    /// Looks for an image not classified as `label` among all images whose pixel `i` is one of
    /// `choices[i]`, without enumerating them. `None` when the classifier has no such search.
    fn search_product(&self, _base: &Image, _choices: &[Vec<Pixel>], _label: usize) -> Option<Result<Option<Image>>> {
        None
    }

    fn check_shape(&self, img: &Image) -> Result<()> {
        if img.shape() != self.input_shape() {
            return Err(Error::structural(format!(
                "classifier expects shape {:?}, got {:?}",
                self.input_shape(),
                img.shape()
            )));
        }
        Ok(())
    }
}

/// Index of the largest value, lowest index on ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn read_shape(model: &Value) -> Result<[usize; 3]> {
    let dims: Vec<usize> = serde_json::from_value(model.get("input").cloned().unwrap_or(Value::Null))
        .map_err(|e| Error::parse("input", e.to_string()))?;
    match dims.as_slice() {
        &[h, w, c] if h > 0 && w > 0 && (c == 1 || c == 3) => Ok([h, w, c]),
        _ => Err(Error::parse("input", format!("expected [H, W, C] with C in {{1, 3}}, got {dims:?}"))),
    }
}

pub(crate) fn read_classes(model: &Value) -> Result<usize> {
    match model.get("classes").and_then(Value::as_u64) {
        Some(n) if n >= 1 => Ok(n as usize),
        _ => Err(Error::parse("classes", "expected a positive integer")),
    }
}

pub type ClassifierLoader = fn(&Value) -> Result<Box<dyn Classifier>>;

pub struct ClassifierRegistry {
    loaders: BTreeMap<&'static str, ClassifierLoader>,
}

impl ClassifierRegistry {
    pub fn empty() -> Self {
        ClassifierRegistry {
            loaders: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, kind: &'static str, loader: ClassifierLoader) {
        self.loaders.insert(kind, loader);
    }

    pub fn kinds(&self) -> Vec<&'static str> {
        self.loaders.keys().copied().collect()
    }

    pub fn from_value(&self, model: &Value) -> Result<Box<dyn Classifier>> {
        let kind = model
            .get("type")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::parse("type", "missing model type"))?;
        let loader = self.loaders.get(kind).ok_or_else(|| {
            Error::parse(
                "type",
                format!("unknown model type {kind:?}; available: {}", self.kinds().join(", ")),
            )
        })?;
        loader(model)
    }

    pub fn from_json(&self, text: &str) -> Result<Box<dyn Classifier>> {
        self.from_value(&serde_json::from_str(text)?)
    }

    pub fn load(&self, path: &Path) -> Result<Box<dyn Classifier>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.from_json(&text)
    }
}

impl Default for ClassifierRegistry {
    fn default() -> Self {
        let mut reg = ClassifierRegistry::empty();
        reg.register("mlp", |v| Ok(Box::new(Mlp::from_value(v)?)));
        reg.register("prototype", |v| Ok(Box::new(PrototypeClassifier::from_value(v)?)));
        reg
    }
}
