//! Fully-connected Q-network with rectifier hidden layers and a linear head.
//!
//! Forward and backward passes are written out by hand in double precision.
//! Inputs are usually one-hot, so the first layer skips zero inputs.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"IAQNET";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One affine map `z = W a + b`, `W` stored row-major as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    #[inline]
    fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }
}

/// Network parameters. Also used as the gradient container, since a
/// gradient has exactly the shape of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

pub type Gradients = Mlp;

/// Observations, chosen action indices and regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub targets: Vec<f64>,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

fn check_architecture(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return Err(Error::InvalidParameter(
            "a network needs at least an input and an output width".into(),
        ));
    }
    if widths.contains(&0) {
        return Err(Error::InvalidParameter("layer widths must be positive".into()));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn nonzero_indices(a: &[f64]) -> Option<Vec<usize>> {
    let nz: Vec<usize> = (0..a.len()).filter(|&i| a[i] != 0.0).collect();
    (nz.len() * 2 < a.len()).then_some(nz)
}

impl Mlp {
    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(widths)?;
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        check_architecture(widths)?;
        let layers = widths.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].inputs];
        w.extend(self.layers.iter().map(|l| l.outputs));
        w
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().expect("at least one layer").outputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Every parameter, layer by layer, weights before biases.
    pub fn parameters(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
    }

    /// Mutable view of parameter number `i` in [`Mlp::parameters`] order.
    pub fn parameter_mut(&mut self, mut i: usize) -> &mut f64 {
        for layer in &mut self.layers {
            if i < layer.weights.len() {
                return &mut layer.weights[i];
            }
            i -= layer.weights.len();
            if i < layer.biases.len() {
                return &mut layer.biases[i];
            }
            i -= layer.biases.len();
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().all(f64::is_finite)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(Error::DimensionMismatch(format!(
                "observation of length {} for a network expecting {}",
                x.len(),
                self.input_len()
            )));
        }
        Ok(())
    }

    /// Activations of every layer, input included; the last entry is the
    /// linear output.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let a = acts.last().expect("input pushed");
            let mut z = layer.biases.clone();
            match nonzero_indices(a) {
                Some(nz) => {
                    for (o, zo) in z.iter_mut().enumerate() {
                        let row = layer.row(o);
                        *zo += nz.iter().map(|&i| row[i] * a[i]).sum::<f64>();
                    }
                }
                None => {
                    for (o, zo) in z.iter_mut().enumerate() {
                        *zo += dot(layer.row(o), a);
                    }
                }
            }
            if li != last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    /// Q-values for every action.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.activations(x).pop().expect("output layer"))
    }

    fn check_batch(&self, batch: &TrainingBatch) -> Result<()> {
        let b = batch.len();
        if b == 0 || batch.observations.len() != b || batch.targets.len() != b {
            return Err(Error::DimensionMismatch(
                "batch needs matching, non-empty observations, actions and targets".into(),
            ));
        }
        if let Some(&a) = batch.actions.iter().find(|&&a| a >= self.output_len()) {
            return Err(Error::DimensionMismatch(format!(
                "action {a} outside a {}-action head",
                self.output_len()
            )));
        }
        batch.observations.iter().try_for_each(|x| self.check_input(x))
    }

    /// Mean squared TD error over the batch, on the chosen action only.
    pub fn loss(&self, batch: &TrainingBatch) -> Result<f64> {
        self.check_batch(batch)?;
        let mut total = 0.0;
        for ((x, &a), &y) in batch.observations.iter().zip(&batch.actions).zip(&batch.targets) {
            let q = self.activations(x).pop().expect("output layer");
            total += (y - q[a]).powi(2);
        }
        Ok(total / batch.len() as f64)
    }

    /// Exact gradient of [`Mlp::loss`].
    pub fn backward(&self, batch: &TrainingBatch) -> Result<Gradients> {
        self.loss_and_gradient(batch).map(|(_, g)| g)
    }

    /// [`Mlp::loss`] and [`Mlp::backward`] from a single forward pass.
    pub fn loss_and_gradient(&self, batch: &TrainingBatch) -> Result<(f64, Gradients)> {
        self.check_batch(batch)?;
        let mut loss = 0.0;
        let mut grads = Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs, l.outputs))
                .collect(),
        };
        let scale = 2.0 / batch.len() as f64;
        for ((x, &a), &y) in batch.observations.iter().zip(&batch.actions).zip(&batch.targets) {
            let acts = self.activations(x);
            let out = acts.last().expect("output layer");
            let mut delta = vec![0.0; out.len()];
            loss += (y - out[a]).powi(2);
            delta[a] = scale * (out[a] - y);
            for li in (0..self.layers.len()).rev() {
                let layer = &self.layers[li];
                let input = &acts[li];
                let g = &mut grads.layers[li];
                let input_nz = nonzero_indices(input);
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    g.biases[o] += d;
                    let grow = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    match &input_nz {
                        Some(nz) => nz.iter().for_each(|&i| grow[i] += d * input[i]),
                        None => grow.iter_mut().zip(input).for_each(|(gw, xi)| *gw += d * xi),
                    }
                }
                if li == 0 {
                    break;
                }
                // propagate through W and the rectifier of the layer below
                let mut below = vec![0.0; layer.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    below.iter_mut().zip(layer.row(o)).for_each(|(b, w)| *b += d * w);
                }
                for (b, &act) in below.iter_mut().zip(input) {
                    if act <= 0.0 {
                        *b = 0.0;
                    }
                }
                delta = below;
            }
        }
        Ok((loss / batch.len() as f64, grads))
    }

    /// `θ ← θ − α ∇`.
    pub fn sgd_step(&mut self, grads: &Gradients, learning_rate: f64) {
        assert_eq!(self.widths(), grads.widths(), "gradient shape mismatch");
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            layer.weights.iter_mut().zip(&g.weights).for_each(|(w, d)| *w -= learning_rate * d);
            layer.biases.iter_mut().zip(&g.biases).for_each(|(b, d)| *b -= learning_rate * d);
        }
    }

    /// Independent deep copy for use as a target network.
    pub fn copy_weights(&self) -> Self {
        self.clone()
    }

    /// Checkpoint bytes: magic, version, architecture, then per layer the
    /// row-major weights followed by the biases, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let widths = self.widths();
        let mut out = Vec::with_capacity(16 + 8 * widths.len() + 8 * self.parameter_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(widths.len() as u32).to_le_bytes());
        for w in widths {
            out.extend_from_slice(&(w as u64).to_le_bytes());
        }
        for p in self.parameters() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = ByteReader { bytes, pos: 0 };
        if reader.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(reader.array()?);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let count = u32::from_le_bytes(reader.array()?) as usize;
        if count > 64 {
            return Err(Error::Checkpoint(format!("implausible layer count {count}")));
        }
        let widths = (0..count)
            .map(|_| reader.array().map(|b| u64::from_le_bytes(b) as usize))
            .collect::<Result<Vec<_>>>()?;
        if widths.iter().any(|&w| w > 1 << 24) {
            return Err(Error::Checkpoint("implausible layer width".into()));
        }
        let mut net = Self::zeros(&widths).map_err(|e| Error::Checkpoint(e.to_string()))?;
        for layer in &mut net.layers {
            for p in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *p = f64::from_le_bytes(reader.array()?);
            }
        }
        if reader.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - reader.pos
            )));
        }
        Ok(net)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
