//! Dense feed-forward networks with hand-written backpropagation.
//!
//! Parameters are exposed as a flat [`ParamVector`] in a fixed layer-major
//! order: for each layer, the weight matrix row by row (shape `out x in`),
//! followed by that layer's bias vector. Evolution Strategies searches over
//! this vector directly; TD3 uses the analytic gradients.

use std::fmt::Write as _;
use std::ops::{Deref, Index};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    #[default]
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Tanh,
    /// `bound * tanh(z)`; the actor head, mapping into `[-bound, bound]`.
    ScaledTanh(f64),
    Identity,
}

/// `tanh` through a single `exp`; about three times cheaper than the libm
/// routine and within a few ulps of it away from zero.
#[inline]
pub fn tanh(x: f64) -> f64 {
    if x.abs() < 0.03 {
        let x2 = x * x;
        return x * (1.0
            + x2 * (-1.0 / 3.0
                + x2 * (2.0 / 15.0 + x2 * (-17.0 / 315.0 + x2 * (62.0 / 2835.0)))));
    }
    1.0 - 2.0 / ((2.0 * x).exp() + 1.0)
}

impl OutputActivation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            OutputActivation::Tanh => tanh(z),
            OutputActivation::ScaledTanh(b) => b * tanh(z),
            OutputActivation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            OutputActivation::Tanh => 1.0 - y * y,
            OutputActivation::ScaledTanh(b) => {
                let t = y / b;
                b * (1.0 - t * t)
            }
            OutputActivation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    layer_sizes: Vec<usize>,
    hidden: HiddenActivation,
    output: OutputActivation,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, output: OutputActivation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least input and output layers, got {} entries",
                layer_sizes.len()
            )));
        }
        if let Some(pos) = layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidSpec(format!("layer {pos} has size 0")));
        }
        if let OutputActivation::ScaledTanh(b) = output {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::InvalidSpec(format!(
                    "scaled tanh bound must be positive and finite, got {b}"
                )));
            }
        }
        Ok(Self {
            layer_sizes,
            hidden: HiddenActivation::Tanh,
            output,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn hidden_activation(&self) -> HiddenActivation {
        self.hidden
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn activation_for(&self, layer: usize) -> OutputActivation {
        if layer + 2 == self.layer_sizes.len() {
            self.output
        } else {
            match self.hidden {
                HiddenActivation::Tanh => OutputActivation::Tanh,
            }
        }
    }
}

/// Flat parameter vector of one network. Its length never changes after
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Wraps `values`, rejecting NaN and infinities.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality, treating `0.0` and `-0.0` as distinct.
    pub fn bit_eq(&self, other: &ParamVector) -> bool {
        self.0.len() == other.0.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    /// `out x in`
    weight: Array2<f64>,
    bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Dense>,
}

/// Activations recorded by [`Mlp::forward_batch`], consumed by
/// [`Mlp::backward_batch`].
#[derive(Debug, Clone)]
pub struct Tape {
    /// `activations[0]` is the input; `activations[l + 1]` is layer `l`'s output.
    activations: Vec<Array2<f64>>,
}

impl Tape {
    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.activations.last().unwrap().view()
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].nrows()
    }
}

impl Mlp {
    /// Uniform weights in `±1/sqrt(fan_in)`, zero biases.
    pub fn init(spec: &MlpSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(spec, &mut rng)
    }

    pub fn init_with_rng<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> Self {
        let layers = spec
            .layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let scale = 1.0 / (fan_in as f64).sqrt();
                let weight =
                    Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-scale..scale));
                Dense {
                    weight,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self {
            spec: spec.clone(),
            layers,
        }
    }

    pub fn zeros(spec: &MlpSpec) -> Self {
        Self::from_params(spec, &ParamVector::zeros(spec.param_count())).unwrap()
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.spec.input_dim() {
            return Err(Error::dim("mlp input", self.spec.input_dim(), input.len()));
        }
        let mut x = Array1::from(input.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let act = self.spec.activation_for(l);
            let mut z = layer.weight.dot(&x);
            z += &layer.bias;
            z.mapv_inplace(|v| act.apply(v));
            x = z;
        }
        Ok(x.to_vec())
    }

    /// Forward pass over a `batch x input` matrix, keeping the activations
    /// needed for [`Mlp::backward_batch`].
    pub fn forward_batch(&self, input: ArrayView2<'_, f64>) -> Result<Tape> {
        if input.ncols() != self.spec.input_dim() {
            return Err(Error::dim("mlp batch input", self.spec.input_dim(), input.ncols()));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_owned());
        for (l, layer) in self.layers.iter().enumerate() {
            let act = self.spec.activation_for(l);
            let mut z = activations[l].dot(&layer.weight.t());
            z += &layer.bias;
            z.mapv_inplace(|v| act.apply(v));
            activations.push(z);
        }
        Ok(Tape { activations })
    }

    /// Batched outputs without keeping a tape.
    pub fn predict_batch(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut tape = self.forward_batch(input)?;
        Ok(tape.activations.pop().unwrap())
    }

    /// Gradient of `sum_rows(upstream . output)` with respect to the flat
    /// parameters, plus the gradient with respect to the input rows.
    pub fn backward_batch(
        &self,
        tape: &Tape,
        upstream: ArrayView2<'_, f64>,
    ) -> Result<(ParamVector, Array2<f64>)> {
        if tape.activations.len() != self.layers.len() + 1 {
            return Err(Error::Usage(
                "tape was recorded on a network with a different depth".into(),
            ));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if tape.activations[l].ncols() != layer.weight.ncols()
                || tape.activations[l + 1].ncols() != layer.weight.nrows()
            {
                return Err(Error::Usage(
                    "tape was recorded on a network with different layer sizes".into(),
                ));
            }
        }
        let out = tape.activations.last().unwrap();
        if upstream.dim() != out.dim() {
            return Err(Error::dim(
                "upstream gradient",
                out.len(),
                upstream.len(),
            ));
        }

        let mut grad = vec![0.0; self.param_count()];
        let offsets = self.layer_offsets();
        let mut delta_out = upstream.to_owned();
        for l in (0..self.layers.len()).rev() {
            let act = self.spec.activation_for(l);
            let y = &tape.activations[l + 1];
            let mut delta = delta_out;
            ndarray::Zip::from(&mut delta)
                .and(y)
                .for_each(|d, &yv| *d *= act.derivative_from_output(yv));

            let x = &tape.activations[l];
            let gw = delta.t().dot(x);
            let gb = delta.sum_axis(Axis(0));
            let (w_off, b_off) = offsets[l];
            let (rows, cols) = gw.dim();
            for (dst, src) in grad[w_off..w_off + rows * cols].iter_mut().zip(gw.iter()) {
                *dst = *src;
            }
            for (dst, src) in grad[b_off..b_off + gb.len()].iter_mut().zip(gb.iter()) {
                *dst = *src;
            }
            delta_out = delta.dot(&self.layers[l].weight);
        }
        Ok((ParamVector::from_raw(grad), delta_out))
    }

    /// Single-sample gradient of `upstream . forward(input)`.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<ParamVector> {
        if input.len() != self.spec.input_dim() {
            return Err(Error::dim("mlp input", self.spec.input_dim(), input.len()));
        }
        if upstream.len() != self.spec.output_dim() {
            return Err(Error::dim(
                "upstream gradient",
                self.spec.output_dim(),
                upstream.len(),
            ));
        }
        let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
        let tape = self.forward_batch(x)?;
        let up = ArrayView2::from_shape((1, upstream.len()), upstream).unwrap();
        Ok(self.backward_batch(&tape, up)?.0)
    }

    /// `(weight_offset, bias_offset)` of each layer in the flat vector.
    fn layer_offsets(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|layer| {
                let w = off;
                let b = w + layer.weight.len();
                off = b + layer.bias.len();
                (w, b)
            })
            .collect()
    }

    pub fn params(&self) -> ParamVector {
        let mut v = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            v.extend(layer.weight.iter());
            v.extend(layer.bias.iter());
        }
        ParamVector::from_raw(v)
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::dim("parameter vector", self.param_count(), params.len()));
        }
        let mut off = 0;
        for layer in &mut self.layers {
            for w in layer.weight.iter_mut() {
                *w = params[off];
                off += 1;
            }
            for b in layer.bias.iter_mut() {
                *b = params[off];
                off += 1;
            }
        }
        Ok(())
    }

    pub fn from_params(spec: &MlpSpec, params: &[f64]) -> Result<Self> {
        if params.len() != spec.param_count() {
            return Err(Error::dim("parameter vector", spec.param_count(), params.len()));
        }
        let mut layers = Vec::with_capacity(spec.layer_sizes.len() - 1);
        let mut off = 0;
        for w in spec.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weight =
                Array2::from_shape_vec((fan_out, fan_in), params[off..off + fan_in * fan_out].to_vec())
                    .unwrap();
            off += fan_in * fan_out;
            let bias = Array1::from(params[off..off + fan_out].to_vec());
            off += fan_out;
            layers.push(Dense { weight, bias });
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    /// `self <- tau * online + (1 - tau) * self`, parameter by parameter.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) -> Result<()> {
        if self.spec != online.spec {
            return Err(Error::Usage(
                "soft update between networks with different specs".into(),
            ));
        }
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            ndarray::Zip::from(&mut t.weight)
                .and(&o.weight)
                .for_each(|t, &o| *t = tau * o + (1.0 - tau) * *t);
            ndarray::Zip::from(&mut t.bias)
                .and(&o.bias)
                .for_each(|t, &o| *t = tau * o + (1.0 - tau) * *t);
        }
        Ok(())
    }

    /// Layer `l` weight at (`row`, `col`); mostly useful in tests.
    pub fn weight(&self, layer: usize, row: usize, col: usize) -> f64 {
        self.layers[layer].weight[[row, col]]
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        self.layers[layer].bias.view()
    }

    /// Text checkpoint: spec header followed by one parameter per line.
    ///
    /// Floats are written in Rust's shortest round-trip form, so reading the
    /// checkpoint back restores every parameter bit for bit.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        out.push_str("estd3-mlp-checkpoint v1\n");
        let sizes: Vec<String> = self.spec.layer_sizes.iter().map(|s| s.to_string()).collect();
        writeln!(out, "layers {}", sizes.join(" ")).unwrap();
        match self.spec.hidden {
            HiddenActivation::Tanh => out.push_str("hidden tanh\n"),
        }
        match self.spec.output {
            OutputActivation::Tanh => out.push_str("output tanh\n"),
            OutputActivation::ScaledTanh(b) => writeln!(out, "output scaled_tanh {b:?}").unwrap(),
            OutputActivation::Identity => out.push_str("output identity\n"),
        }
        writeln!(out, "params {}", self.param_count()).unwrap();
        for v in self.params().iter() {
            writeln!(out, "{v:?}").unwrap();
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        if lines.next() != Some("estd3-mlp-checkpoint v1") {
            return Err(bad("missing header line"));
        }
        let mut field = |name: &str| -> Result<Vec<String>> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing `{name}` line")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(name) {
                return Err(bad(&format!("expected `{name}` line, found `{line}`")));
            }
            Ok(parts.map(str::to_string).collect())
        };
        let sizes = field("layers")?
            .iter()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(&format!("bad layer size: {e}")))?;
        let hidden = field("hidden")?;
        if hidden != ["tanh"] {
            return Err(bad(&format!("unsupported hidden activation {hidden:?}")));
        }
        let output = field("output")?;
        let output = match output.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
            ["tanh"] => OutputActivation::Tanh,
            ["identity"] => OutputActivation::Identity,
            ["scaled_tanh", b] => OutputActivation::ScaledTanh(
                b.parse().map_err(|e| bad(&format!("bad scaled_tanh bound: {e}")))?,
            ),
            other => return Err(bad(&format!("unsupported output activation {other:?}"))),
        };
        let count: usize = field("params")?
            .first()
            .ok_or_else(|| bad("missing parameter count"))?
            .parse()
            .map_err(|e| bad(&format!("bad parameter count: {e}")))?;
        let spec = MlpSpec::new(sizes, output)?;
        if count != spec.param_count() {
            return Err(bad(&format!(
                "parameter count {count} does not match spec ({})",
                spec.param_count()
            )));
        }
        let values = lines
            .map(|l| l.parse::<f64>().map_err(|e| bad(&format!("bad parameter `{l}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != count {
            return Err(bad(&format!("expected {count} parameters, found {}", values.len())));
        }
        Self::from_params(&spec, &values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_checkpoint())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("reading {}: {e}", path.display())))?;
        Mlp::from_checkpoint(&text)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first_moment: ParamVector,
    second_moment: ParamVector,
    step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            first_moment: ParamVector::zeros(len),
            second_moment: ParamVector::zeros(len),
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &ParamVector {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &ParamVector {
        &self.second_moment
    }

    /// One Adam step in place. An all-zero gradient advances the moments and
    /// the step counter but leaves the parameters untouched.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        let n = self.first_moment.len();
        if params.len() != n {
            return Err(Error::dim("adam parameters", n, params.len()));
        }
        if grad.len() != n {
            return Err(Error::dim("adam gradient", n, grad.len()));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("adam gradient"));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let zero_grad = grad.iter().all(|&g| g == 0.0);
        let m = self.first_moment.as_mut_slice();
        let v = self.second_moment.as_mut_slice();
        for i in 0..n {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            if !zero_grad {
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
