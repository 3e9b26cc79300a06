//! Fully connected feed-forward network with externally trained weights.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{argmax, read_classes, read_shape, Classifier};
use crate::error::{Error, Result};
use crate::pixel::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `rows × cols`, one inner array per output unit.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        let layer = Layer {
            weights,
            bias,
            activation,
        };
        layer.validate()?;
        Ok(layer)
    }

    fn validate(&self) -> Result<()> {
        if self.weights.is_empty() || self.weights[0].is_empty() {
            return Err(Error::structural("layer weights must be non-empty"));
        }
        let cols = self.cols();
        if self.weights.iter().any(|row| row.len() != cols) {
            return Err(Error::structural("layer weight rows differ in length"));
        }
        if self.bias.len() != self.rows() {
            return Err(Error::structural(format!(
                "bias has length {}, layer has {} rows",
                self.bias.len(),
                self.rows()
            )));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.weights.len()
    }

    pub fn cols(&self) -> usize {
        self.weights[0].len()
    }

    fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| {
                let z = row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b;
                match self.activation {
                    Activation::Relu => z.max(0.0),
                    Activation::Identity => z,
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    shape: [usize; 3],
    layers: Vec<Layer>,
    /// Inputs are divided by this before the first layer.
    divisor: f64,
}

impl Mlp {
    pub fn new(shape: [usize; 3], layers: Vec<Layer>, divisor: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::structural("network needs at least one layer"));
        }
        if !(divisor > 0.0) {
            return Err(Error::config("input divisor must be > 0"));
        }
        for l in &layers {
            l.validate()?;
        }
        let input_len: usize = shape.iter().product();
        if layers[0].cols() != input_len {
            return Err(Error::structural(format!(
                "first layer takes {} inputs, images have {input_len} values",
                layers[0].cols()
            )));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].cols() != pair[0].rows() {
                return Err(Error::structural(format!(
                    "layer {} outputs {} values but layer {} takes {}",
                    i,
                    pair[0].rows(),
                    i + 1,
                    pair[1].cols()
                )));
            }
        }
        Ok(Mlp {
            shape,
            layers,
            divisor,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn logits(&self, img: &Image) -> Result<Vec<f64>> {
        self.check_shape(img)?;
        let mut x: Vec<f64> = img.data().iter().map(|&v| v as f64 / self.divisor).collect();
        for layer in &self.layers {
            x = layer.forward(&x);
        }
        Ok(x)
    }

    pub fn from_value(model: &Value) -> Result<Self> {
        let shape = read_shape(model)?;
        let classes = read_classes(model)?;
        let layers: Vec<Layer> = serde_json::from_value(model.get("layers").cloned().unwrap_or(Value::Null))
            .map_err(|e| Error::parse("layers", e.to_string()))?;
        let divisor = model.get("divisor").and_then(Value::as_f64).unwrap_or(255.0);
        let mlp = Mlp::new(shape, layers, divisor)?;
        if mlp.num_classes() != classes {
            return Err(Error::parse(
                "classes",
                format!("final layer has {} rows, model declares {classes}", mlp.num_classes()),
            ));
        }
        Ok(mlp)
    }
}

impl Classifier for Mlp {
    fn kind(&self) -> &'static str {
        "mlp"
    }

    fn input_shape(&self) -> [usize; 3] {
        self.shape
    }

    fn num_classes(&self) -> usize {
        self.layers.last().map_or(0, Layer::rows)
    }

    fn classify(&self, img: &Image) -> Result<usize> {
        Ok(argmax(&self.logits(img)?))
    }

    fn to_json(&self) -> Value {
        json!({
            "type": "mlp",
            "input": self.shape,
            "classes": self.num_classes(),
            "divisor": self.divisor,
            "layers": self.layers,
        })
    }
}
