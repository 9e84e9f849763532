//! Minimal feed-forward substrate with manual backpropagation.
//!
//! Dropout zeroes each output coordinate of a layer with probability `p` and
//! scales survivors by `1 / (1 - p)`. It is active in [`Mode::Train`] and
//! [`Mode::MonteCarlo`] and disabled in [`Mode::Infer`]. The output layer never
//! carries dropout. Masks are drawn from a caller-supplied stream so that a
//! trained network stays immutable during inference.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::hashing::{self, Hasher64};
use crate::{Error, Result};

/// Row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let t = Self { rows, cols, data };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.rows * self.cols,
                actual: self.data.len(),
            });
        }
        if self.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidNetwork("non-finite tensor entry".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer; `weights` is `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Tensor2,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub dropout: f64,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weights.cols
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows
    }
}

/// Shape of one layer for [`DenseNet::new`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub units: usize,
    pub activation: Activation,
    pub dropout: f64,
}

impl LayerSpec {
    pub const fn relu(units: usize) -> Self {
        Self {
            units,
            activation: Activation::Relu,
            dropout: 0.0,
        }
    }

    pub const fn identity(units: usize) -> Self {
        Self {
            units,
            activation: Activation::Identity,
            dropout: 0.0,
        }
    }

    pub const fn with_dropout(mut self, p: f64) -> Self {
        self.dropout = p;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
    MonteCarlo,
}

impl Mode {
    fn dropout_active(self) -> bool {
        !matches!(self, Mode::Infer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Dense>,
}

/// Intermediate values of one forward pass, consumed by [`DenseNet::backward`].
#[derive(Debug, Clone, Default)]
pub struct Trace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
    output: Vec<f64>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// Parameter gradients, accumulated across calls to [`DenseNet::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zero(&mut self) {
        self.weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .for_each(|g| g.fill(0.0));
    }

    /// All entries in layer order: weights then bias per layer.
    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

impl DenseNet {
    /// He-normal weights for relu layers, Glorot-normal otherwise; zero biases.
    pub fn new(input_dim: usize, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        if input_dim == 0 || specs.is_empty() {
            return Err(Error::InvalidNetwork(
                "network needs an input and at least one layer".into(),
            ));
        }
        let mut rng = hashing::stream(seed, 0x4E45_5400);
        let mut fan_in = input_dim;
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let scale = match spec.activation {
                Activation::Relu => libm::sqrt(2.0 / fan_in as f64),
                Activation::Identity => libm::sqrt(2.0 / (fan_in + spec.units) as f64),
            };
            let data = (0..spec.units * fan_in)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * scale
                })
                .collect();
            layers.push(Dense {
                weights: Tensor2 {
                    rows: spec.units,
                    cols: fan_in,
                    data,
                },
                bias: vec![0.0; spec.units],
                activation: spec.activation,
                dropout: spec.dropout,
            });
            fan_in = spec.units;
        }
        Self::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        let net = Self { layers };
        net.validate()?;
        Ok(net)
    }

    /// Chained dimensions, finite parameters, `dropout in [0, 1)`, no output dropout.
    pub fn validate(&self) -> Result<()> {
        let Some(last) = self.layers.last() else {
            return Err(Error::InvalidNetwork("no layers".into()));
        };
        for (i, l) in self.layers.iter().enumerate() {
            l.weights.validate()?;
            if l.in_dim() == 0 || l.out_dim() == 0 {
                return Err(Error::InvalidNetwork(format!(
                    "layer {i} has a zero dimension"
                )));
            }
            if l.bias.len() != l.out_dim() {
                return Err(Error::DimensionMismatch {
                    expected: l.out_dim(),
                    actual: l.bias.len(),
                });
            }
            if l.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::InvalidNetwork(format!(
                    "layer {i} has a non-finite bias"
                )));
            }
            if !(0.0..1.0).contains(&l.dropout) {
                return Err(Error::InvalidNetwork(format!(
                    "layer {i} dropout {} outside [0, 1)",
                    l.dropout
                )));
            }
            if i > 0 && self.layers[i - 1].out_dim() != l.in_dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.layers[i - 1].out_dim(),
                    actual: l.in_dim(),
                });
            }
        }
        if last.dropout != 0.0 {
            return Err(Error::InvalidNetwork(
                "output layer cannot carry dropout".into(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn has_dropout(&self) -> bool {
        self.layers.iter().any(|l| l.dropout > 0.0)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data.len() + l.bias.len())
            .sum()
    }

    /// Little-endian bytes of every parameter in layer order.
    pub fn parameter_bytes(&self) -> Vec<u8> {
        self.parameters().flat_map(f64::to_le_bytes).collect()
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = Hasher64::new();
        for p in self.parameters() {
            h.f64(p);
        }
        h.finish()
    }

    fn parameters(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.data.iter().chain(l.bias.iter()).copied())
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            weights: self
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.data.len()])
                .collect(),
            biases: self
                .layers
                .iter()
                .map(|l| vec![0.0; l.bias.len()])
                .collect(),
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Dropout-free forward pass.
    pub fn infer(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        for l in &self.layers {
            cur = (0..l.out_dim())
                .map(|o| {
                    let z = l.bias[o] + dot(l.weights.row(o), &cur);
                    l.activation.apply(z)
                })
                .collect();
        }
        Ok(cur)
    }

    pub fn forward<R: Rng + ?Sized>(&self, x: &[f64], mode: Mode, rng: &mut R) -> Result<Vec<f64>> {
        if !mode.dropout_active() || !self.has_dropout() {
            return self.infer(x);
        }
        Ok(self.forward_trace(x, mode, rng)?.output)
    }

    /// Forward pass keeping what backpropagation needs.
    pub fn forward_trace<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Trace> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut trace = Trace {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            masks: Vec::with_capacity(n),
            output: Vec::new(),
        };
        let mut cur = x.to_vec();
        for l in &self.layers {
            let pre: Vec<f64> = (0..l.out_dim())
                .map(|o| l.bias[o] + dot(l.weights.row(o), &cur))
                .collect();
            let mut out: Vec<f64> = pre.iter().map(|&z| l.activation.apply(z)).collect();
            let mask = if mode.dropout_active() && l.dropout > 0.0 {
                let keep = 1.0 - l.dropout;
                let scale = 1.0 / keep;
                let m: Vec<f64> = (0..out.len())
                    .map(|_| {
                        if rng.random::<f64>() < keep {
                            scale
                        } else {
                            0.0
                        }
                    })
                    .collect();
                out.iter_mut().zip(&m).for_each(|(o, s)| *o *= s);
                Some(m)
            } else {
                None
            };
            trace.inputs.push(core::mem::replace(&mut cur, out));
            trace.pre.push(pre);
            trace.masks.push(mask);
        }
        trace.output = cur;
        Ok(trace)
    }

    /// Accumulates parameter gradients for `d_output = dL/d(output)` into
    /// `grads` and returns `dL/d(input)`. The dropout masks of the traced pass
    /// are reused.
    pub fn backward(
        &self,
        trace: &Trace,
        d_output: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>> {
        if d_output.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                actual: d_output.len(),
            });
        }
        if trace.pre.len() != self.layers.len() {
            return Err(Error::InvalidArgument(
                "trace does not belong to this network".into(),
            ));
        }
        let mut delta = d_output.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            if let Some(mask) = &trace.masks[li] {
                delta.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
            }
            for (d, &z) in delta.iter_mut().zip(&trace.pre[li]) {
                *d *= l.activation.derivative(z);
            }
            let input = &trace.inputs[li];
            let gw = &mut grads.weights[li];
            let cols = l.in_dim();
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * cols..(o + 1) * cols];
                row.iter_mut().zip(input).for_each(|(g, &x)| *g += d * x);
                grads.biases[li][o] += d;
            }
            let mut d_in = vec![0.0; cols];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                d_in.iter_mut()
                    .zip(l.weights.row(o))
                    .for_each(|(di, &w)| *di += d * w);
            }
            delta = d_in;
        }
        Ok(delta)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean squared error over output coordinates and its gradient.
pub fn mse(output: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if output.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: output.len(),
            actual: target.len(),
        });
    }
    if output.is_empty() {
        return Err(Error::Empty("mse over zero outputs"));
    }
    let n = output.len() as f64;
    let mut loss = 0.0;
    let grad = output
        .iter()
        .zip(target)
        .map(|(y, t)| {
            let d = y - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// Plain SGD with optional momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Gradients,
}

impl Sgd {
    pub fn new(net: &DenseNet, learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: net.zero_gradients(),
        }
    }

    /// Applies `grads / batch` to `net`.
    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients, batch: usize) {
        let scale = self.learning_rate / batch.max(1) as f64;
        for (li, layer) in net.layers.iter_mut().enumerate() {
            let params = layer.weights.data.iter_mut().chain(layer.bias.iter_mut());
            let g = grads.weights[li].iter().chain(grads.biases[li].iter());
            let v = self.velocity.weights[li]
                .iter_mut()
                .chain(self.velocity.biases[li].iter_mut());
            for ((p, g), v) in params.zip(g).zip(v) {
                *v = self.momentum * *v - scale * g;
                *p += *v;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(
                "learning rate must be >= 0 and momentum in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Minibatch SGD on mean squared error. Returns the mean training loss of each epoch.
pub fn train(
    net: &mut DenseNet,
    data: &[(Vec<f64>, Vec<f64>)],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    cfg.validate()?;
    let mut rng = hashing::stream(cfg.seed, 0x7452_4149);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = net.zero_gradients();
    let mut opt = Sgd::new(net, cfg.learning_rate, cfg.momentum);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.zero();
            for &i in batch {
                let (x, y) = &data[i];
                let trace = net.forward_trace(x, Mode::Train, &mut rng)?;
                let (loss, d) = mse(trace.output(), y)?;
                total += loss;
                net.backward(&trace, &d, &mut grads)?;
            }
            opt.step(net, &grads, batch.len());
        }
        curve.push(total / data.len() as f64);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_net(p_hidden: f64) -> DenseNet {
        let eye = Tensor2::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut layers = vec![Dense {
            weights: eye.clone(),
            bias: vec![0.0; 2],
            activation: Activation::Identity,
            dropout: 0.0,
        }];
        if p_hidden > 0.0 {
            layers[0].dropout = p_hidden;
            layers.push(Dense {
                weights: eye,
                bias: vec![0.0; 2],
                activation: Activation::Identity,
                dropout: 0.0,
            });
        }
        DenseNet::from_layers(layers).unwrap()
    }

    #[test]
    fn identity_forward() {
        let net = identity_net(0.0);
        let mut rng = hashing::stream(0, 0);
        assert_eq!(
            net.forward(&[1.0, 2.0], Mode::Infer, &mut rng).unwrap(),
            vec![1.0, 2.0]
        );
        assert_eq!(
            net.forward(&[1.0, 2.0], Mode::MonteCarlo, &mut rng)
                .unwrap(),
            vec![1.0, 2.0]
        );
    }

    #[test]
    fn dropout_scales_survivors() {
        let net = identity_net(0.5);
        let mut rng = hashing::stream(1, 0);
        for _ in 0..50 {
            let y = net
                .forward(&[1.0, 3.0], Mode::MonteCarlo, &mut rng)
                .unwrap();
            assert!(y[0] == 0.0 || y[0] == 2.0);
            assert!(y[1] == 0.0 || y[1] == 6.0);
        }
        assert_eq!(
            net.forward(&[1.0, 3.0], Mode::Infer, &mut rng).unwrap(),
            vec![1.0, 3.0]
        );
    }

    #[test]
    fn rejects_output_dropout_and_bad_chains() {
        let mut net = identity_net(0.0);
        net.layers[0].dropout = 0.3;
        assert!(net.validate().is_err());
        assert!(DenseNet::new(
            3,
            &[LayerSpec::relu(4), LayerSpec::identity(1).with_dropout(0.1)],
            0
        )
        .is_err());
        assert!(DenseNet::new(
            3,
            &[LayerSpec::relu(4).with_dropout(1.0), LayerSpec::identity(1)],
            0
        )
        .is_err());
        let net = DenseNet::new(3, &[LayerSpec::relu(4), LayerSpec::identity(1)], 0).unwrap();
        assert!(net.infer(&[1.0]).is_err());
    }

    #[test]
    fn analytic_linear_gradient() {
        let net = DenseNet::from_layers(vec![Dense {
            weights: Tensor2::from_vec(1, 1, vec![2.0]).unwrap(),
            bias: vec![0.0],
            activation: Activation::Identity,
            dropout: 0.0,
        }])
        .unwrap();
        let mut rng = hashing::stream(0, 0);
        let trace = net.forward_trace(&[3.0], Mode::Train, &mut rng).unwrap();
        let (loss, d) = mse(trace.output(), &[0.0]).unwrap();
        assert_eq!(loss, 36.0);
        let mut g = net.zero_gradients();
        net.backward(&trace, &d, &mut g).unwrap();
        assert_eq!(g.weights[0][0], 36.0);

        // At the zero-loss point every gradient vanishes.
        let trace = net.forward_trace(&[3.0], Mode::Train, &mut rng).unwrap();
        let (_, d) = mse(trace.output(), &[6.0]).unwrap();
        let mut g = net.zero_gradients();
        net.backward(&trace, &d, &mut g).unwrap();
        assert!(g.flatten().iter().all(|&x| x == 0.0));
    }

    fn line_data() -> Vec<(Vec<f64>, Vec<f64>)> {
        (0..100)
            .map(|i| {
                let x = i as f64 / 100.0 - 0.5;
                (vec![x], vec![2.0 * x])
            })
            .collect()
    }

    #[test]
    fn fits_a_line() {
        let mut net = DenseNet::new(1, &[LayerSpec::identity(1)], 3).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 10,
            learning_rate: 0.1,
            momentum: 0.0,
            seed: 1,
        };
        let curve = train(&mut net, &line_data(), &cfg).unwrap();
        assert_eq!(curve.len(), 200);
        assert!(
            *curve.last().unwrap() < 1e-3,
            "final loss {}",
            curve.last().unwrap()
        );
    }

    #[test]
    fn zero_learning_rate_is_a_no_op_and_training_is_deterministic() {
        let net0 = DenseNet::new(
            1,
            &[LayerSpec::relu(4).with_dropout(0.2), LayerSpec::identity(1)],
            3,
        )
        .unwrap();
        let mut net = net0.clone();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 7,
            learning_rate: 0.0,
            momentum: 0.5,
            seed: 2,
        };
        train(&mut net, &line_data(), &cfg).unwrap();
        assert_eq!(net.parameter_bytes(), net0.parameter_bytes());

        let cfg = TrainConfig {
            learning_rate: 0.05,
            ..cfg
        };
        let (mut a, mut b) = (net0.clone(), net0);
        assert_eq!(
            train(&mut a, &line_data(), &cfg).unwrap(),
            train(&mut b, &line_data(), &cfg).unwrap()
        );
        assert_eq!(a.parameter_bytes(), b.parameter_bytes());
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut net = DenseNet::new(1, &[LayerSpec::identity(1)], 3).unwrap();
        assert!(matches!(
            train(&mut net, &[], &TrainConfig::default()),
            Err(Error::Empty(_))
        ));
    }
}
