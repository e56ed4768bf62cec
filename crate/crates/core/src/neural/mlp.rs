use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// What a network is used for. Fixes the expected output width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelRole {
    Generic,
    Dynamics,
    Barrier,
    Rejection,
}

impl ModelRole {
    pub fn output_dim(self) -> Option<usize> {
        match self {
            ModelRole::Generic => None,
            ModelRole::Dynamics => Some(4),
            ModelRole::Barrier => Some(1),
            ModelRole::Rejection => Some(2),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelRole::Generic => "generic",
            ModelRole::Dynamics => "dynamics",
            ModelRole::Barrier => "barrier",
            ModelRole::Rejection => "rejection",
        }
    }
}

impl fmt::Display for ModelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelRole {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generic" => Ok(ModelRole::Generic),
            "dynamics" => Ok(ModelRole::Dynamics),
            "barrier" => Ok(ModelRole::Barrier),
            "rejection" => Ok(ModelRole::Rejection),
            other => Err(Error::invalid(format!("unknown model role `{other}`"))),
        }
    }
}

/// Activation applied to the final affine layer. Hidden layers are ReLU.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    /// Symmetric bounded output in (-1, 1).
    Tanh,
    /// Independent scores in (0, 1).
    Sigmoid,
    /// Scores normalized to sum to one.
    Softmax,
}

impl OutputActivation {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputActivation::Identity => "identity",
            OutputActivation::Tanh => "tanh",
            OutputActivation::Sigmoid => "sigmoid",
            OutputActivation::Softmax => "softmax",
        }
    }
}

impl FromStr for OutputActivation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(OutputActivation::Identity),
            "tanh" => Ok(OutputActivation::Tanh),
            "sigmoid" => Ok(OutputActivation::Sigmoid),
            "softmax" => Ok(OutputActivation::Softmax),
            other => Err(Error::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

/// Affine layer, `y = x W + b` with `W` shaped `(inputs, outputs)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }
}

/// Parameter gradients, shaped like the model's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(model: &Mlp) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Dense::zeros(l.weights.nrows(), l.weights.ncols()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }
}

/// Intermediate values of a batched forward pass, kept for backprop.
#[derive(Clone, Debug)]
pub struct Trace {
    /// Input to every layer; `activations[0]` is the normalized input.
    activations: Vec<Array2<f64>>,
    /// Pre-activation of every layer.
    pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl Trace {
    /// Smallest |pre-activation| over all hidden units, `+inf` without
    /// hidden layers.
    pub fn min_hidden_magnitude(&self) -> f64 {
        let hidden = self.pre.len().saturating_sub(1);
        self.pre[..hidden]
            .iter()
            .flat_map(|z| z.iter())
            .fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }
}

/// Dense ReLU network with a configurable output activation and a fixed
/// per-feature input normalization `(x - shift) * scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub role: ModelRole,
    pub tag: String,
    pub(crate) layers: Vec<Dense>,
    pub output: OutputActivation,
    pub(crate) input_shift: Array1<f64>,
    pub(crate) input_scale: Array1<f64>,
}

impl Mlp {
    /// Random Glorot-uniform weights, zero biases.
    pub fn new(
        role: ModelRole,
        sizes: &[usize],
        output: OutputActivation,
        seed: u64,
    ) -> Result<Self> {
        let mut model = Self::zeros(role, sizes, output)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut model.layers {
            let (fan_in, fan_out) = layer.weights.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            layer
                .weights
                .mapv_inplace(|_| rng.random_range(-limit..limit));
        }
        Ok(model)
    }

    /// All-zero parameters.
    pub fn zeros(role: ModelRole, sizes: &[usize], output: OutputActivation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("bad layer sizes {sizes:?}")));
        }
        let out = *sizes.last().unwrap();
        if let Some(expected) = role.output_dim() {
            if out != expected {
                return Err(Error::invalid(format!(
                    "{role} model needs {expected} outputs, got {out}"
                )));
            }
        }
        if output == OutputActivation::Softmax && out < 2 {
            return Err(Error::invalid("softmax output needs at least two units"));
        }
        Ok(Self {
            role,
            tag: String::new(),
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            output,
            input_shift: Array1::zeros(sizes[0]),
            input_scale: Array1::ones(sizes[0]),
        })
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.weights.ncols()))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.ncols()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    /// Sets the normalization so that data with the given per-feature mean
    /// and standard deviation enters the first layer standardized.
    pub fn set_input_normalization(&mut self, mean: &[f64], std: &[f64]) -> Result<()> {
        let d = self.input_dim();
        if mean.len() != d || std.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: mean.len().max(std.len()),
            });
        }
        self.input_shift = Array1::from(mean.to_vec());
        self.input_scale = std
            .iter()
            .map(|&s| if s > 1e-12 { 1.0 / s } else { 1.0 })
            .collect();
        Ok(())
    }

    /// Fits the input normalization to the columns of `data`.
    pub fn fit_input_normalization(&mut self, data: ArrayView2<f64>) -> Result<()> {
        self.check_batch(data)?;
        let mean = data.mean_axis(Axis(0)).unwrap();
        let std = data.std_axis(Axis(0), 0.0);
        self.set_input_normalization(mean.as_slice().unwrap(), std.as_slice().unwrap())
    }

    pub fn input_shift(&self) -> ArrayView1<'_, f64> {
        self.input_shift.view()
    }

    pub fn input_scale(&self) -> ArrayView1<'_, f64> {
        self.input_scale.view()
    }

    fn check_batch(&self, input: ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: input.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::invalid(e.to_string()))?;
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    /// Forward pass over a batch shaped `(examples, inputs)`.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_batch(input)?;
        let mut a = self.normalize(input);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights);
            z += &layer.bias;
            if i < last {
                z.mapv_inplace(relu);
            }
            a = z;
        }
        self.apply_output(&mut a);
        Ok(a)
    }

    /// Forward pass that records what [`Mlp::backward`] needs.
    pub fn forward_trace(&self, input: ArrayView2<f64>) -> Result<Trace> {
        self.check_batch(input)?;
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = self.normalize(input);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights);
            z += &layer.bias;
            activations.push(a);
            a = if i < last { z.mapv(relu) } else { z.clone() };
            pre.push(z);
        }
        self.apply_output(&mut a);
        Ok(Trace {
            activations,
            pre,
            output: a,
        })
    }

    /// Backpropagates `d_output` (dLoss/dOutput, same shape as the traced
    /// output) into parameter gradients. Gradients are summed over examples.
    pub fn backward(&self, trace: &Trace, d_output: ArrayView2<f64>) -> Gradients {
        let y = &trace.output;
        let mut dz = match self.output {
            OutputActivation::Identity => d_output.to_owned(),
            OutputActivation::Tanh => {
                let mut g = d_output.to_owned();
                Zip::from(&mut g).and(y).for_each(|g, &y| *g *= 1.0 - y * y);
                g
            }
            OutputActivation::Sigmoid => {
                let mut g = d_output.to_owned();
                Zip::from(&mut g).and(y).for_each(|g, &y| *g *= y * (1.0 - y));
                g
            }
            OutputActivation::Softmax => {
                let inner = (&d_output * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                let centered = &d_output - &inner;
                centered * y
            }
        };
        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let dw = trace.activations[i].t().dot(&dz);
            let db = dz.sum_axis(Axis(0));
            if i > 0 {
                let mut da = dz.dot(&self.layers[i].weights.t());
                Zip::from(&mut da)
                    .and(&trace.pre[i - 1])
                    .for_each(|g, &z| {
                        if z <= 0.0 {
                            *g = 0.0
                        }
                    });
                dz = da;
            }
            grads.push(Dense {
                weights: dw,
                bias: db,
            });
        }
        grads.reverse();
        Gradients { layers: grads }
    }

    fn normalize(&self, input: ArrayView2<f64>) -> Array2<f64> {
        let mut a = &input - &self.input_shift;
        a *= &self.input_scale;
        a
    }

    fn apply_output(&self, a: &mut Array2<f64>) {
        match self.output {
            OutputActivation::Identity => {}
            OutputActivation::Tanh => a.mapv_inplace(f64::tanh),
            OutputActivation::Sigmoid => a.mapv_inplace(sigmoid),
            OutputActivation::Softmax => {
                for mut row in a.rows_mut() {
                    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    row.mapv_inplace(|v| (v - max).exp());
                    let sum = row.sum();
                    row /= sum;
                }
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn locate(&mut self, mut index: usize) -> &mut f64 {
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            if index < nw {
                let cols = layer.weights.ncols();
                return &mut layer.weights[(index / cols, index % cols)];
            }
            index -= nw;
            if index < layer.bias.len() {
                return &mut layer.bias[index];
            }
            index -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Parameter by flat index (weights row-major, then bias, per layer).
    pub fn param(&self, index: usize) -> f64 {
        let mut rest = index;
        for layer in &self.layers {
            let nw = layer.weights.len();
            if rest < nw {
                let cols = layer.weights.ncols();
                return layer.weights[(rest / cols, rest % cols)];
            }
            rest -= nw;
            if rest < layer.bias.len() {
                return layer.bias[rest];
            }
            rest -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        *self.locate(index) = value;
    }

    /// Multiplies the final affine layer by `factor`. For an identity output
    /// this scales the network function itself.
    pub fn scale_output_layer(&mut self, factor: f64) {
        let last = self.layers.last_mut().unwrap();
        last.weights *= factor;
        last.bias *= factor;
    }
}

fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn zero_network_outputs_zero() {
        let m = Mlp::zeros(ModelRole::Dynamics, &[7, 16, 4], OutputActivation::Identity).unwrap();
        assert_eq!(m.forward(&[1.0; 7]).unwrap(), vec![0.0; 4]);
        let t = Mlp::zeros(ModelRole::Dynamics, &[7, 16, 4], OutputActivation::Tanh).unwrap();
        assert_eq!(t.forward(&[-3.0; 7]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn single_linear_layer_is_dot_product() {
        let mut m = Mlp::zeros(ModelRole::Generic, &[2, 1], OutputActivation::Identity).unwrap();
        m.layers[0].weights = array![[1.0], [1.0]];
        let y = m.forward(&[0.3, 0.7]).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bounded_output_stays_in_range() {
        let m = Mlp::new(ModelRole::Dynamics, &[7, 8, 4], OutputActivation::Tanh, 3).unwrap();
        for k in 0..50 {
            let x: Vec<f64> = (0..7).map(|i| ((k * 7 + i) as f64).sin() * 3.0).collect();
            for y in m.forward(&x).unwrap() {
                assert!(y > -1.0 && y < 1.0, "{y}");
            }
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let m = Mlp::new(ModelRole::Rejection, &[3, 5, 2], OutputActivation::Softmax, 1).unwrap();
        let y = m.forward(&[0.2, -4.0, 9.0]).unwrap();
        assert!((y[0] + y[1] - 1.0).abs() < 1e-12);
        assert!(y.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn dimension_mismatch() {
        let m = Mlp::new(ModelRole::Barrier, &[5, 4, 1], OutputActivation::Identity, 1).unwrap();
        assert!(matches!(
            m.forward(&[0.0; 4]),
            Err(Error::DimensionMismatch { expected: 5, actual: 4 })
        ));
    }

    #[test]
    fn role_fixes_output_width() {
        assert!(Mlp::zeros(ModelRole::Barrier, &[5, 2], OutputActivation::Identity).is_err());
        assert!(Mlp::zeros(ModelRole::Rejection, &[5, 2], OutputActivation::Sigmoid).is_ok());
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = Mlp::new(ModelRole::Generic, &[4, 6, 3], OutputActivation::Identity, 9).unwrap();
        let b = Mlp::new(ModelRole::Generic, &[4, 6, 3], OutputActivation::Identity, 9).unwrap();
        let c = Mlp::new(ModelRole::Generic, &[4, 6, 3], OutputActivation::Identity, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let limit = (6.0f64 / 10.0).sqrt();
        assert!(a.layers[0].weights.iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn flat_parameter_access() {
        let mut m = Mlp::new(ModelRole::Generic, &[2, 3, 1], OutputActivation::Identity, 2).unwrap();
        assert_eq!(m.param_count(), 2 * 3 + 3 + 3 + 1);
        m.set_param(6, 0.5);
        assert_eq!(m.layers[0].bias[0], 0.5);
        assert_eq!(m.param(6), 0.5);
        m.set_param(12, -1.0);
        assert_eq!(m.layers[1].bias[0], -1.0);
    }
}
