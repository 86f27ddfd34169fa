use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::graph::{Activation, Graph, Var};
use crate::params::{ParamSet, ParamVars};
use crate::tensor::Tensor;

/// One dense layer `h = σ(x·W + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

/// A dense stack whose weights live in a shared [`ParamSet`] starting at
/// `first_param` (weight, bias, weight, bias, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub first_param: usize,
}

/// Values produced by [`Mlp::forward`]; pre-activations are kept for the
/// closed-form input gradient.
#[derive(Debug, Clone)]
pub struct MlpForward {
    pub output: Var,
    pub pre_activations: Vec<Var>,
}

impl Mlp {
    /// Builds the layer list from widths, e.g. `[in, h1, h2, out]`. Hidden
    /// layers use `hidden`, the last layer uses `output`.
    pub fn from_widths(widths: &[usize], hidden: Activation, output: Activation) -> Result<Vec<Layer>> {
        if widths.len() < 2 {
            return Err(TensorError::UnsupportedLayer("need at least input and output width".into()));
        }
        let last = widths.len() - 2;
        Ok(widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer {
                inputs: w[0],
                outputs: w[1],
                activation: if i == last { output } else { hidden },
            })
            .collect())
    }

    /// Registers freshly initialized weights in `params` (uniform in
    /// ±1/√fan_in, as in common deep-learning defaults).
    pub fn init(prefix: &str, layers: Vec<Layer>, params: &mut ParamSet, rng: &mut impl Rng) -> Result<Self> {
        let first_param = params.len();
        for (i, layer) in layers.iter().enumerate() {
            let bound = 1.0 / (layer.inputs.max(1) as f64).sqrt();
            let w: Vec<f64> = (0..layer.inputs * layer.outputs)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let b: Vec<f64> = (0..layer.outputs).map(|_| rng.random_range(-bound..bound)).collect();
            params.push(format!("{prefix}.{i}.weight"), Tensor::new(layer.inputs, layer.outputs, w)?)?;
            params.push(format!("{prefix}.{i}.bias"), Tensor::new(1, layer.outputs, b)?)?;
        }
        Ok(Self { layers, first_param })
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    fn weight(&self, vars: &ParamVars, layer: usize) -> Var {
        vars.get(self.first_param + 2 * layer)
    }

    fn bias(&self, vars: &ParamVars, layer: usize) -> Var {
        vars.get(self.first_param + 2 * layer + 1)
    }

    pub fn forward(&self, graph: &mut Graph, vars: &ParamVars, x: Var) -> Result<MlpForward> {
        let mut h = x;
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let a = graph.affine(h, self.weight(vars, i), self.bias(vars, i))?;
            pre_activations.push(a);
            h = match layer.activation {
                Activation::Identity => a,
                act => graph.activation(a, act),
            };
        }
        Ok(MlpForward {
            output: h,
            pre_activations,
        })
    }

    /// ∇ₓ of a scalar-output stack, one row per example, built from the
    /// forward pre-activations as `W₁ᵀ diag(σ′(a₁)) ⋯ W_Lᵀ`. The result is an
    /// ordinary expression, so it can itself be differentiated with respect to
    /// the weights.
    pub fn input_gradient(&self, graph: &mut Graph, vars: &ParamVars, fwd: &MlpForward) -> Result<Var> {
        if self.output_width() != 1 {
            return Err(TensorError::UnsupportedLayer(format!(
                "input gradient needs a scalar output, got width {}",
                self.output_width()
            )));
        }
        let rows = graph.value(fwd.output).rows();
        let mut g = graph.constant(Tensor::filled(rows, 1, 1.0));
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if !matches!(layer.activation, Activation::Identity) {
                let d = graph.activation_derivative(fwd.pre_activations[i], layer.activation);
                g = graph.mul(g, d)?;
            }
            g = graph.matmul_t(g, false, self.weight(vars, i), true)?;
        }
        Ok(g)
    }
}
