use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::graph::sigmoid;
use crate::{dense_init, Graph, ParamSet, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    /// Not defined for relu, whose derivative needs the input.
    pub fn derivative_from_output(self, y: f64) -> Option<f64> {
        match self {
            Activation::Identity => Some(1.0),
            Activation::Tanh => Some(1.0 - y * y),
            Activation::Sigmoid => Some(y * (1.0 - y)),
            Activation::Relu => None,
        }
    }

    pub fn is_smooth(self) -> bool {
        !matches!(self, Activation::Relu)
    }

    pub fn on_graph(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Relu => g.relu(x),
        }
    }

    /// Activation derivative as a graph node built from the output node,
    /// so it stays differentiable.
    pub fn derivative_on_graph(self, g: &mut Graph, y: Var) -> Option<Var> {
        match self {
            Activation::Identity => None,
            Activation::Tanh => {
                let sq = g.square(y);
                let neg = g.neg(sq);
                Some(g.add_scalar(neg, 1.0))
            }
            Activation::Sigmoid => {
                let sq = g.square(y);
                Some(g.sub(y, sq))
            }
            Activation::Relu => panic!("relu derivative is not smooth"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: usize,
    pub bias: usize,
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
}

/// Fully connected network whose weights live in a shared [`ParamSet`].
/// Rows of the input are samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    /// Registers layers `dims[0] -> dims[1] -> ...` under `prefix`. Hidden
    /// layers use `hidden`, the last layer uses `output`.
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut dyn RngCore,
    ) -> Self {
        assert!(dims.len() >= 2, "an mlp needs at least input and output sizes");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let (w, b) = dense_init(dims[l], dims[l + 1], rng.random());
                DenseLayer {
                    weight: params.add(format!("{prefix}.{l}.weight"), w),
                    bias: params.add(format!("{prefix}.{l}.bias"), b),
                    fan_in: dims[l],
                    fan_out: dims[l + 1],
                    activation: if l + 1 == n { output } else { hidden },
                }
            })
            .collect();
        Self { layers }
    }

    /// Same network with every parameter index moved by `offset`.
    pub fn shifted(&self, offset: isize) -> Mlp {
        let mv = |i: usize| (i as isize + offset) as usize;
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer { weight: mv(l.weight), bias: mv(l.bias), ..l.clone() })
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().fan_out
    }

    pub fn param_indices(&self) -> Vec<usize> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    pub fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Var {
        *self.forward_layers(g, vars, x).last().unwrap()
    }

    /// Post-activation output of every layer, first to last.
    pub fn forward_layers(&self, g: &mut Graph, vars: &[Var], x: Var) -> Vec<Var> {
        let mut h = x;
        let mut outs = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let z = g.matmul(h, vars[l.weight]);
            let z = g.add_row(z, vars[l.bias]);
            h = l.activation.on_graph(g, z);
            outs.push(h);
        }
        outs
    }

    /// Plain forward pass without recording a graph.
    pub fn infer(&self, params: &ParamSet, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for l in &self.layers {
            let z = h.matmul(params.get(l.weight)).add_row(params.get(l.bias));
            h = z.map(|v| l.activation.apply(v));
        }
        h
    }
}
