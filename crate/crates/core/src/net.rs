//! Feedforward predictor with a sigmoid + L1-normalized output head.
//!
//! Layers are dense with row-major `(out_dim, in_dim)` weights. Hidden layers
//! use a rectifier; the last layer emits logits, which the head squashes and
//! normalizes into an attractiveness distribution.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dist::{expectation, rating_mass, AttractivenessDistribution, DistributionGrid, RatingDistribution};
use crate::error::{Error, Result};
use crate::losses::{head_backward, head_forward};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    /// Number of output bins; 40 on the default grid.
    pub output_dim: usize,
    pub seed: u64,
}

impl NetConfig {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, seed: u64) -> Self {
        Self { input_dim, hidden_dims, output_dim: 40, seed }
    }

    pub fn with_output_dim(mut self, output_dim: usize) -> Self {
        self.output_dim = output_dim;
        self
    }

    fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim).chain(self.hidden_dims.iter().copied()).chain(std::iter::once(self.output_dim)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims().contains(&0) {
            return Err(Error::Config(format!("zero-sized layer in {:?}", self.dims())));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `(out_dim, in_dim)`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { in_dim, out_dim, weights: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorNet {
    config: NetConfig,
    layers: Vec<Layer>,
}

/// Activations recorded by [`PredictorNet::forward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input to each layer, per sample: `inputs[l][i]`.
    inputs: Vec<Vec<Vec<f64>>>,
    /// Final-layer outputs before the head.
    pub logits: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.logits.len()
    }
}

/// Parameter gradients, laid out like the network's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    /// Tensors in the same order as [`PredictorNet::tensors_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()]).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|&x| x == 0.0))
    }
}

/// One row of [`PredictorNet::predict`].
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub p: AttractivenessDistribution,
    pub r: RatingDistribution,
    pub y: f64,
}

impl PredictorNet {
    /// Seeded initialization: hidden layers draw from the He-uniform range
    /// `±sqrt(6 / fan_in)`, the output layer from `±1 / sqrt(fan_in)`; biases
    /// start at zero.
    pub fn init(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let dims = config.dims();
        let n_layers = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(l, d)| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let limit = if l + 1 < n_layers { (6.0 / fan_in as f64).sqrt() } else { 1.0 / (fan_in as f64).sqrt() };
                let mut layer = Layer::zeros(fan_in, fan_out);
                layer.weights.iter_mut().for_each(|w| *w = rng.gen_range(-limit..limit));
                layer
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Weight and bias tensors of every layer, in declaration order.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()]).collect()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients { layers: self.layers.iter().map(|l| Layer::zeros(l.in_dim, l.out_dim)).collect() }
    }

    fn check_input<F: AsRef<[f64]>>(&self, features: &[F]) -> Result<()> {
        for (i, row) in features.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != self.config.input_dim {
                return Err(Error::Shape(format!("row {i} has {} features, network expects {}", row.len(), self.config.input_dim)));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::numeric(format!("input row {i}")));
            }
        }
        Ok(())
    }

    /// Logits and cached activations for a batch.
    pub fn forward_logits<F: AsRef<[f64]>>(&self, features: &[F]) -> Result<ForwardCache> {
        self.check_input(features)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current: Vec<Vec<f64>> = features.iter().map(|r| r.as_ref().to_vec()).collect();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut next: Vec<Vec<f64>> = current.iter().map(|x| layer.apply(x)).collect();
            if l < last {
                next.iter_mut().flatten().for_each(|v| *v = v.max(0.0));
            }
            inputs.push(current);
            current = next;
        }
        if current.iter().flatten().any(|z| !z.is_finite()) {
            return Err(Error::numeric("logits"));
        }
        Ok(ForwardCache { inputs, logits: current })
    }

    /// Attractiveness distributions for a batch, plus the cache for
    /// [`backward`](Self::backward).
    pub fn forward<F: AsRef<[f64]>>(&self, features: &[F]) -> Result<(Vec<AttractivenessDistribution>, ForwardCache)> {
        let cache = self.forward_logits(features)?;
        let probs = cache
            .logits
            .iter()
            .map(|z| head_forward(z).map(AttractivenessDistribution::new_unchecked))
            .collect::<Result<Vec<_>>>()?;
        Ok((probs, cache))
    }

    /// Parameter gradients given `dL/dp_hat` for each row.
    pub fn backward(&self, cache: &ForwardCache, grad_probs: &[Vec<f64>]) -> Result<Gradients> {
        if grad_probs.len() != cache.batch_size() {
            return Err(Error::State(format!("{} output gradients for a cached batch of {}", grad_probs.len(), cache.batch_size())));
        }
        let grad_logits =
            cache.logits.iter().zip(grad_probs).map(|(z, g)| head_backward(z, g)).collect::<Result<Vec<_>>>()?;
        self.backward_logits(cache, &grad_logits)
    }

    /// Parameter gradients given `dL/dz` for each row of logits.
    pub fn backward_logits(&self, cache: &ForwardCache, grad_logits: &[Vec<f64>]) -> Result<Gradients> {
        if grad_logits.len() != cache.batch_size() || cache.inputs.len() != self.layers.len() {
            return Err(Error::State("cache does not match this network or batch".into()));
        }
        let mut grads = self.zero_gradients();
        let mut delta: Vec<Vec<f64>> = grad_logits.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let inputs = &cache.inputs[l];
            let g = &mut grads.layers[l];
            for (x, d) in inputs.iter().zip(&delta) {
                if x.len() != layer.in_dim || d.len() != layer.out_dim {
                    return Err(Error::State(format!("cached activation shape mismatch at layer {l}")));
                }
                for (o, &d_o) in d.iter().enumerate() {
                    g.bias[o] += d_o;
                    let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    row.iter_mut().zip(x).for_each(|(w, x)| *w += d_o * x);
                }
            }
            if l == 0 {
                break;
            }
            // Propagate to the previous layer's post-activation, then through
            // the rectifier (its output is this layer's cached input).
            delta = inputs
                .iter()
                .zip(&delta)
                .map(|(x, d)| {
                    let mut back = vec![0.0; layer.in_dim];
                    for (row, &d_o) in layer.weights.chunks_exact(layer.in_dim).zip(d) {
                        back.iter_mut().zip(row).for_each(|(b, w)| *b += w * d_o);
                    }
                    back.iter_mut().zip(x).for_each(|(b, &a)| {
                        if a <= 0.0 {
                            *b = 0.0
                        }
                    });
                    back
                })
                .collect();
        }
        Ok(grads)
    }

    /// Predicted distribution, derived rating distribution and regressed
    /// score for each row.
    pub fn predict<F: AsRef<[f64]>>(&self, features: &[F], grid: &DistributionGrid) -> Result<Vec<Prediction>> {
        if grid.n_bins() != self.config.output_dim {
            return Err(Error::Shape(format!("grid has {} bins, network emits {}", grid.n_bins(), self.config.output_dim)));
        }
        let (probs, _) = self.forward(features)?;
        Ok(probs
            .into_iter()
            .map(|p| {
                let r = RatingDistribution::new(rating_mass(p.as_slice(), grid))
                    .unwrap_or_else(|_| unreachable!("head output is a probability vector"));
                let y = expectation(p.as_slice(), grid);
                Prediction { p, r, y }
            })
            .collect())
    }

    pub fn predict_scores<F: AsRef<[f64]>>(&self, features: &[F], grid: &DistributionGrid) -> Result<Vec<f64>> {
        Ok(self.predict(features, grid)?.into_iter().map(|p| p.y).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(64 + 8 * self.num_params());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.config.seed.to_le_bytes());
        buf.extend_from_slice(&(self.config.input_dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.config.hidden_dims.len() as u32).to_le_bytes());
        for &h in &self.config.hidden_dims {
            buf.extend_from_slice(&(h as u32).to_le_bytes());
        }
        buf.extend_from_slice(&(self.config.output_dim as u32).to_le_bytes());
        for layer in &self.layers {
            for x in layer.weights.iter().chain(&layer.bias) {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, offset: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format { offset: 0, msg: "missing DLDL magic".into() });
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion { found: version, expected: FORMAT_VERSION });
        }
        let seed = r.u64()?;
        let input_dim = r.u32()? as usize;
        let n_hidden = r.u32()? as usize;
        if n_hidden > MAX_DEPTH {
            return Err(Error::Format { offset: r.offset - 4, msg: format!("implausible depth {n_hidden}") });
        }
        let hidden_dims = (0..n_hidden).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let output_dim = r.u32()? as usize;
        let config = NetConfig { input_dim, hidden_dims, output_dim, seed };
        config.validate().map_err(|e| Error::Format { offset: r.offset, msg: e.to_string() })?;

        let dims = config.dims();
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for d in dims.windows(2) {
            let mut layer = Layer::zeros(d[0], d[1]);
            for x in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                let at = r.offset;
                *x = r.f64()?;
                if !x.is_finite() {
                    return Err(Error::Format { offset: at, msg: "non-finite parameter".into() });
                }
            }
            layers.push(layer);
        }
        let body_end = r.offset;
        let stored = r.u32()?;
        if stored != crc32fast::hash(&bytes[..body_end]) {
            return Err(Error::Format { offset: body_end, msg: "checksum mismatch".into() });
        }
        if r.offset != bytes.len() {
            return Err(Error::Format { offset: r.offset, msg: format!("{} trailing bytes", bytes.len() - r.offset) });
        }
        Ok(Self { config, layers })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

pub const MAGIC: &[u8; 4] = b"DLDL";
pub const FORMAT_VERSION: u32 = 1;
const MAX_DEPTH: usize = 1024;

struct ByteReader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.offset.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Format {
            offset: self.offset,
            msg: format!("truncated: needed {n} bytes, {} remain", self.bytes.len() - self.offset),
        })?;
        let out = &self.bytes[self.offset..end];
        self.offset = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
