use super::{EngineError, Mode, Shape, Tensor};

/// Per-channel batch normalisation with learnable scale/shift and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

/// Values retained by a train-mode pass for the reverse pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: Shape,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads {
    pub input: Tensor,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BatchNorm {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-6;

    /// Scale 1, shift 0, running mean 0, running variance 1.
    pub fn new(channels: usize) -> Result<Self, EngineError> {
        if channels == 0 {
            return Err(EngineError::InvalidConfig("batch norm needs at least one channel".into()));
        }
        Ok(Self {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn check(&self, input: &Tensor) -> Result<(), EngineError> {
        input.require_channels("batch_norm", self.channels)
    }

    /// Train mode normalises with batch statistics and updates the running
    /// statistics; eval mode uses the running statistics.
    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<(Tensor, Option<BatchNormCache>), EngineError> {
        self.check(input)?;
        let shape = input.shape();
        let plane = shape.plane();
        let count = (shape.batch * plane) as f64;
        let mut out = vec![0.0; shape.len()];
        match mode {
            Mode::Eval => {
                for c in 0..self.channels {
                    let inv_std = 1.0 / (self.running_var[c] + self.eps).sqrt();
                    let (mean, g, b) = (self.running_mean[c], self.gamma[c], self.beta[c]);
                    for n in 0..shape.batch {
                        let off = (n * self.channels + c) * plane;
                        for (o, &x) in out[off..off + plane].iter_mut().zip(&input.data()[off..off + plane]) {
                            *o = g * ((x - mean) * inv_std) + b;
                        }
                    }
                }
                Ok((Tensor::from_parts(shape, out), None))
            }
            Mode::Train => {
                let mut x_hat = vec![0.0; shape.len()];
                let mut inv_stds = vec![0.0; self.channels];
                let channels = self.channels;
                for c in 0..channels {
                    let slices = || {
                        (0..shape.batch).map(move |n| {
                            let off = (n * channels + c) * plane;
                            off..off + plane
                        })
                    };
                    let sum: f64 = slices().map(|r| lane_sum(&input.data()[r], |x| x)).sum();
                    let mean = sum / count;
                    let ss: f64 = slices()
                        .map(|r| lane_sum(&input.data()[r], |x| (x - mean) * (x - mean)))
                        .sum();
                    let var = ss / count;
                    let inv_std = 1.0 / (var + self.eps).sqrt();
                    inv_stds[c] = inv_std;
                    let (g, b) = (self.gamma[c], self.beta[c]);
                    for r in slices() {
                        for ((xh, o), &x) in x_hat[r.clone()].iter_mut().zip(&mut out[r.clone()]).zip(&input.data()[r]) {
                            *xh = (x - mean) * inv_std;
                            *o = g * *xh + b;
                        }
                    }
                    let unbiased = if count > 1.0 { ss / (count - 1.0) } else { var };
                    let m = self.momentum;
                    self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * mean;
                    self.running_var[c] = (1.0 - m) * self.running_var[c] + m * unbiased;
                }
                let cache = BatchNormCache {
                    x_hat,
                    inv_std: inv_stds,
                    shape,
                };
                Ok((Tensor::from_parts(shape, out), Some(cache)))
            }
        }
    }

    /// Reverse pass through a train-mode normalisation.
    pub fn backward(&self, cache: &BatchNormCache, grad_out: &Tensor) -> Result<BatchNormGrads, EngineError> {
        let shape = cache.shape;
        grad_out.require_shape("batch_norm backward", shape)?;
        let plane = shape.plane();
        let count = (shape.batch * plane) as f64;
        let go = grad_out.data();
        let mut gamma = vec![0.0; self.channels];
        let mut beta = vec![0.0; self.channels];
        let mut grad_in = vec![0.0; shape.len()];
        for c in 0..self.channels {
            let ranges = (0..shape.batch).map(|n| {
                let off = (n * self.channels + c) * plane;
                off..off + plane
            });
            let (mut dg, mut db) = (0.0, 0.0);
            for r in ranges.clone() {
                let (g, xh) = (&go[r.clone()], &cache.x_hat[r]);
                dg += lane_dot(g, xh);
                db += lane_sum(g, |v| v);
            }
            gamma[c] = dg;
            beta[c] = db;
            let scale = self.gamma[c] * cache.inv_std[c] / count;
            for r in ranges {
                for ((d, &g), &xh) in grad_in[r.clone()].iter_mut().zip(&go[r.clone()]).zip(&cache.x_hat[r]) {
                    *d = scale * (count * g - db - xh * dg);
                }
            }
        }
        Ok(BatchNormGrads {
            input: Tensor::from_parts(shape, grad_in),
            gamma,
            beta,
        })
    }
}

const LANES: usize = 8;

/// Sum of `f(x)` over `xs` with independent partial sums, so the additions
/// pipeline instead of forming one long dependency chain.
fn lane_sum(xs: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let mut acc = [0.0; LANES];
    let chunks = xs.chunks_exact(LANES);
    let tail: f64 = chunks.remainder().iter().map(|&x| f(x)).sum();
    for c in chunks {
        for (a, &x) in acc.iter_mut().zip(c) {
            *a += f(x);
        }
    }
    acc.iter().sum::<f64>() + tail
}

fn lane_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..LANES {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Batch normalisation of `input`; train mode also updates the running statistics.
pub fn batch_norm(input: &Tensor, layer: &mut BatchNorm, mode: Mode) -> Result<Tensor, EngineError> {
    layer.forward(input, mode).map(|(out, _)| out)
}
