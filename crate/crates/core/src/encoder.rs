//! The fully connected dimensionality-reduction network and feature clipping.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::FeatureBatch;
use crate::error::{contract, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }
}

/// Layer widths from input to output; hidden layers use `activation`, the
/// output layer is linear.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    widths: Vec<usize>,
    activation: Activation,
}

impl EncoderConfig {
    /// Widths sized for a 4096-d backbone feature and a 128-d ball.
    pub const FULL_SCALE_WIDTHS: [usize; 5] = [4096, 8192, 1000, 512, 128];
    pub const DESK_WIDTHS: [usize; 5] = [32, 64, 32, 16, 8];

    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(contract(
                "encoder needs at least an input and an output width",
            ));
        }
        if widths.contains(&0) {
            return Err(contract("encoder widths must be positive"));
        }
        Ok(EncoderConfig { widths, activation })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

/// `y = x W + b` with `W` stored row-major as `inputs × outputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn validate(&self) -> Result<()> {
        if self.weight.len() != self.inputs * self.outputs || self.bias.len() != self.outputs {
            return Err(contract(format!(
                "layer {}x{} has {} weights and {} biases",
                self.inputs,
                self.outputs,
                self.weight.len(),
                self.bias.len()
            )));
        }
        crate::geometry::check_finite(&self.weight, "layer weight")?;
        crate::geometry::check_finite(&self.bias, "layer bias")
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            let w = &self.weight[i * self.outputs..(i + 1) * self.outputs];
            for (yj, wj) in y.iter_mut().zip(w) {
                *yj += xi * wj;
            }
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
}

impl Encoder {
    /// Uniform `±1/√fan_in` initialisation for weights and biases.
    pub fn init<R: Rng>(cfg: &EncoderConfig, rng: &mut R) -> Self {
        let layers = cfg
            .widths
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let bound = 1.0 / (inputs as f64).sqrt();
                let mut draw = |len: usize| -> Vec<f64> {
                    (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
                };
                let weight = draw(inputs * outputs);
                let bias = draw(outputs);
                DenseLayer {
                    inputs,
                    outputs,
                    weight,
                    bias,
                }
            })
            .collect();
        Encoder {
            layers,
            activation: cfg.activation,
        }
    }

    pub fn zeros(cfg: &EncoderConfig) -> Self {
        let layers = cfg
            .widths
            .windows(2)
            .map(|w| DenseLayer {
                inputs: w[0],
                outputs: w[1],
                weight: vec![0.0; w[0] * w[1]],
                bias: vec![0.0; w[1]],
            })
            .collect();
        Encoder {
            layers,
            activation: cfg.activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(contract("encoder has no layers"));
        }
        for l in &self.layers {
            l.validate()?;
        }
        for pair in self.layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(contract("encoder layer widths do not chain"));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn encode_row(&self, x: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if i < last {
                h.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
        }
        h
    }

    /// Encodes every row; returns a row-major `len × output_dim` matrix.
    pub fn encode(&self, batch: &FeatureBatch) -> Result<Vec<f64>> {
        if batch.dim() != self.input_dim() {
            return Err(contract(format!(
                "feature width {} does not match encoder input {}",
                batch.dim(),
                self.input_dim()
            )));
        }
        Ok(batch.rows().flat_map(|r| self.encode_row(r)).collect())
    }

    /// Records the forward pass on `t`; `params` holds one `(weight, bias)`
    /// pair of tape variables per layer.
    pub fn encode_on_tape(&self, t: &Tape, x: Var, params: &[(Var, Var)]) -> Var {
        let rows = t.shape(x).0;
        let last = params.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in params.iter().enumerate() {
            h = t.add(t.matmul(h, w), t.broadcast_rows(b, rows));
            if i < last && self.activation == Activation::Relu {
                h = t.relu(h);
            }
        }
        h
    }
}

/// Rescales `v` onto the sphere of radius `r` when it lies outside it.
pub fn feature_clip(v: &[f64], r: f64) -> Vec<f64> {
    let n = crate::geometry::norm(v);
    if n <= r {
        v.to_vec()
    } else {
        let s = r / n;
        v.iter().map(|x| x * s).collect()
    }
}
