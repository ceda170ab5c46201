//! Small dense networks in double precision with analytic backpropagation,
//! input gradients, grouped softmax outputs and an Adam optimizer.

use std::io::{self, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Negative-side slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.01;

const CHECKPOINT_MAGIC: &[u8; 8] = b"DRLTEMLP";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid network shape: {0}")]
    Shape(String),
    #[error("expected input of length {expected}, got {got}")]
    InputLength { expected: usize, got: usize },
    #[error("expected output gradient of length {expected}, got {got}")]
    OutputGradLength { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("parameter shapes do not match")]
    Mismatch,
    #[error("soft-update rate {0} outside [0, 1]")]
    Tau(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HiddenActivation {
    LeakyRelu { slope: f64 },
    Identity,
}

impl HiddenActivation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Self::LeakyRelu { slope } => {
                if z > 0.0 {
                    z
                } else {
                    slope * z
                }
            }
            Self::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Self::LeakyRelu { slope } => {
                if z > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Self::Identity => 1.0,
        }
    }
}

/// Output layer activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OutputMode {
    Identity,
    /// Independent softmax over consecutive blocks of the given sizes.
    GroupedSoftmax(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
}

impl MlpShape {
    /// Two hidden layers of 64 and 32 units.
    pub fn standard(input: usize, output: usize) -> Self {
        Self { input, hidden: vec![64, 32], output }
    }

    fn sizes(&self) -> Vec<usize> {
        let mut v = vec![self.input];
        v.extend(&self.hidden);
        v.push(self.output);
        v
    }
}

/// One fully connected layer; `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.bias.iter().enumerate().map(|(o, b)| {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }
}

/// Layer-shaped container used for both parameters and gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    pub layers: Vec<Dense>,
}

impl LayerStack {
    pub fn zeros_like(other: &LayerStack) -> Self {
        Self { layers: other.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect() }
    }

    pub fn same_shape(&self, other: &LayerStack) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs)
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(Dense::params)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(Dense::params_mut)
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &LayerStack, scale: f64) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn l2_norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &LayerStack) -> f64 {
        self.iter().zip(other.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

pub type Gradients = LayerStack;

/// A dense feedforward network.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub params: LayerStack,
    pub hidden: HiddenActivation,
    pub output: OutputMode,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (index 0 is the network input).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

impl Mlp {
    /// Uniform fan-in initialization `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
    /// zero biases, leaky-rectifier hidden layers.
    pub fn init(shape: &MlpShape, output: OutputMode, seed: u64) -> Result<Self, NnError> {
        Self::init_with(shape, output, HiddenActivation::LeakyRelu { slope: LEAKY_SLOPE }, seed)
    }

    pub fn init_with(shape: &MlpShape, output: OutputMode, hidden: HiddenActivation, seed: u64) -> Result<Self, NnError> {
        let sizes = shape.sizes();
        if sizes.iter().any(|&n| n == 0) {
            return Err(NnError::Shape(format!("zero-width layer in {sizes:?}")));
        }
        if let OutputMode::GroupedSoftmax(groups) = &output {
            if groups.iter().any(|&g| g == 0) || groups.iter().sum::<usize>() != shape.output {
                return Err(NnError::Shape(format!("groups {groups:?} do not partition {} outputs", shape.output)));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let mut d = Dense::zeros(w[0], w[1]);
                d.weights.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
                d
            })
            .collect();
        Ok(Self { params: LayerStack { layers }, hidden, output })
    }

    pub fn input_dim(&self) -> usize {
        self.params.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.params.layers.last().unwrap().outputs
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardCache, NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::InputLength { expected: self.input_dim(), got: input.len() });
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("network input"));
        }
        let n = self.params.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut x = input.to_vec();
        for (i, layer) in self.params.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.outputs);
            layer.affine(&x, &mut z);
            let next = if i + 1 < n {
                z.iter().map(|&v| self.hidden.apply(v)).collect()
            } else {
                match &self.output {
                    OutputMode::Identity => z.clone(),
                    OutputMode::GroupedSoftmax(groups) => grouped_softmax(&z, groups),
                }
            };
            inputs.push(std::mem::replace(&mut x, next));
            pre.push(z);
        }
        Ok(ForwardCache { inputs, pre, output: x })
    }

    /// Forward pass returning only the output.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.forward(input)?.output)
    }

    /// Gradients of `output_grad . output` w.r.t. the parameters and the input.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<(Gradients, Vec<f64>), NnError> {
        if output_grad.len() != self.output_dim() {
            return Err(NnError::OutputGradLength { expected: self.output_dim(), got: output_grad.len() });
        }
        if cache.pre.len() != self.params.layers.len() {
            return Err(NnError::Mismatch);
        }
        let mut grads = LayerStack::zeros_like(&self.params);
        let mut delta: Vec<f64> = match &self.output {
            OutputMode::Identity => output_grad.to_vec(),
            OutputMode::GroupedSoftmax(groups) => softmax_backward(&cache.output, output_grad, groups),
        };
        for i in (0..self.params.layers.len()).rev() {
            let layer = &self.params.layers[i];
            let x = &cache.inputs[i];
            let g = &mut grads.layers[i];
            for (o, d) in delta.iter().enumerate() {
                g.bias[o] = *d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(x).for_each(|(w, v)| *w = d * v);
            }
            let mut back = vec![0.0; layer.inputs];
            for (o, d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                back.iter_mut().zip(row).for_each(|(b, w)| *b += w * d);
            }
            if i > 0 {
                back.iter_mut().zip(&cache.pre[i - 1]).for_each(|(b, &z)| *b *= self.hidden.derivative(z));
            }
            delta = back;
        }
        Ok((grads, delta))
    }

    pub fn backward_params(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<Gradients, NnError> {
        Ok(self.backward(cache, output_grad)?.0)
    }

    pub fn backward_input(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.backward(cache, output_grad)?.1)
    }

    /// `self := tau * online + (1 - tau) * self`.
    pub fn soft_update(&mut self, online: &Mlp, tau: f64) -> Result<(), NnError> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(NnError::Tau(tau));
        }
        if !self.params.same_shape(&online.params) {
            return Err(NnError::Mismatch);
        }
        if tau == 1.0 {
            self.params = online.params.clone();
            return Ok(());
        }
        for (t, o) in self.params.iter_mut().zip(online.params.iter()) {
            *t = tau * o + (1.0 - tau) * *t;
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), NnError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        put_u32(w, CHECKPOINT_VERSION)?;
        match self.hidden {
            HiddenActivation::LeakyRelu { slope } => {
                w.write_all(&[0])?;
                put_f64(w, slope)?;
            }
            HiddenActivation::Identity => {
                w.write_all(&[1])?;
                put_f64(w, 0.0)?;
            }
        }
        match &self.output {
            OutputMode::Identity => {
                w.write_all(&[0])?;
                put_u32(w, 0)?;
            }
            OutputMode::GroupedSoftmax(groups) => {
                w.write_all(&[1])?;
                put_u32(w, groups.len() as u32)?;
                for &g in groups {
                    put_u32(w, g as u32)?;
                }
            }
        }
        put_u32(w, self.params.layers.len() as u32)?;
        for l in &self.params.layers {
            put_u32(w, l.inputs as u32)?;
            put_u32(w, l.outputs as u32)?;
            for v in l.params() {
                put_f64(w, *v)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, NnError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let version = get_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let hidden = match (get_u8(r)?, get_f64(r)?) {
            (0, slope) => HiddenActivation::LeakyRelu { slope },
            (1, _) => HiddenActivation::Identity,
            (t, _) => return Err(NnError::Checkpoint(format!("unknown activation tag {t}"))),
        };
        let output = match (get_u8(r)?, get_u32(r)?) {
            (0, _) => OutputMode::Identity,
            (1, n) => OutputMode::GroupedSoftmax((0..n).map(|_| get_u32(r).map(|g| g as usize)).collect::<Result<_, _>>()?),
            (t, _) => return Err(NnError::Checkpoint(format!("unknown output tag {t}"))),
        };
        let n_layers = get_u32(r)? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let inputs = get_u32(r)? as usize;
            let outputs = get_u32(r)? as usize;
            let mut d = Dense::zeros(inputs, outputs);
            for v in d.params_mut() {
                *v = get_f64(r)?;
            }
            layers.push(d);
        }
        let net = Self { params: LayerStack { layers }, hidden, output };
        let chained = net.params.layers.windows(2).all(|w| w[0].outputs == w[1].inputs);
        if n_layers == 0 || !chained {
            return Err(NnError::Checkpoint("inconsistent layer chain".into()));
        }
        Ok(net)
    }
}

/// Softmax applied independently to each block of `groups` sizes.
pub fn grouped_softmax(z: &[f64], groups: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(z.len());
    let mut at = 0;
    for &n in groups {
        let block = &z[at..at + n];
        let max = block.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = block.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / sum));
        at += n;
    }
    out
}

fn softmax_backward(y: &[f64], g: &[f64], groups: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(y.len());
    let mut at = 0;
    for &n in groups {
        let (yb, gb) = (&y[at..at + n], &g[at..at + n]);
        let dot: f64 = yb.iter().zip(gb).map(|(a, b)| a * b).sum();
        out.extend(yb.iter().zip(gb).map(|(yi, gi)| yi * (gi - dot)));
        at += n;
    }
    out
}

/// Bias-corrected Adam moments for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: LayerStack,
    pub v: LayerStack,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &Mlp, lr: f64) -> Self {
        Self {
            m: LayerStack::zeros_like(&params.params),
            v: LayerStack::zeros_like(&params.params),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One descent step on `grad` (gradient of a loss to minimize).
    pub fn step(&mut self, net: &mut Mlp, grad: &Gradients) -> Result<(), NnError> {
        if !grad.same_shape(&net.params) || !self.m.same_shape(&net.params) {
            return Err(NnError::Mismatch);
        }
        if !grad.is_finite() {
            return Err(NnError::NonFinite("gradient"));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in net.params.iter_mut().zip(grad.iter()).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), NnError> {
        put_u64(w, self.step)?;
        for v in [self.lr, self.beta1, self.beta2, self.eps] {
            put_f64(w, v)?;
        }
        for v in self.m.iter().chain(self.v.iter()) {
            put_f64(w, *v)?;
        }
        Ok(())
    }

    /// Reads moments for a network shaped like `net`.
    pub fn read_from(r: &mut impl Read, net: &Mlp) -> Result<Self, NnError> {
        let step = get_u64(r)?;
        let (lr, beta1, beta2, eps) = (get_f64(r)?, get_f64(r)?, get_f64(r)?, get_f64(r)?);
        let mut st = Self { step, lr, beta1, beta2, eps, ..Self::new(net, lr) };
        for v in st.m.iter_mut() {
            *v = get_f64(r)?;
        }
        for v in st.v.iter_mut() {
            *v = get_f64(r)?;
        }
        Ok(st)
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(net: &mut Mlp, grad: &Gradients, st: &mut AdamState) -> Result<(), NnError> {
    st.step(net, grad)
}

/// Free-function form of [`Mlp::soft_update`].
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<(), NnError> {
    target.soft_update(online, tau)
}

pub(crate) fn put_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_f64(w: &mut impl Write, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u8(r: &mut impl Read) -> io::Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

pub(crate) fn get_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn get_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn get_f64(r: &mut impl Read) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
