use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::kernels::{self, Geometry, PackedWeights};
use super::winograd::{self, Layout, TransformedWeights};
use super::{for_each_item, EngineError, Execution, Shape, Tensor};

/// Same-padded 2-D convolution (cross-correlation, no kernel flip) with bias.
///
/// Weights are stored `out × in × k × k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    kernel_size: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    /// Zero weights and biases.
    pub fn new(in_channels: usize, out_channels: usize, kernel_size: usize) -> Result<Self, EngineError> {
        if in_channels == 0 || out_channels == 0 {
            return Err(EngineError::InvalidConfig("conv channel counts must be at least 1".into()));
        }
        if kernel_size.is_multiple_of(2) {
            return Err(EngineError::InvalidConfig(format!(
                "kernel size must be odd, got {kernel_size}"
            )));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel_size,
            weight: vec![0.0; out_channels * in_channels * kernel_size * kernel_size],
            bias: vec![0.0; out_channels],
        })
    }

    /// He initialisation: weights ~ N(0, 2 / fan_in), biases zero.
    pub fn he_normal<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        rng: &mut R,
    ) -> Result<Self, EngineError> {
        let mut conv = Self::new(in_channels, out_channels, kernel_size)?;
        let fan_in = (in_channels * kernel_size * kernel_size) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        for w in &mut conv.weight {
            *w = normal.sample(rng);
        }
        Ok(conv)
    }

    /// Builds from explicit parameters (`out × in × k × k` weights).
    pub fn from_parameters(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self, EngineError> {
        let mut conv = Self::new(in_channels, out_channels, kernel_size)?;
        if weight.len() != conv.weight.len() || bias.len() != conv.bias.len() {
            return Err(EngineError::InvalidConfig(format!(
                "conv {in_channels}->{out_channels} k{kernel_size} expects {} weights and {} biases, got {} and {}",
                conv.weight.len(),
                conv.bias.len(),
                weight.len(),
                bias.len()
            )));
        }
        conv.weight = weight;
        conv.bias = bias;
        Ok(conv)
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn padding(&self) -> usize {
        (self.kernel_size - 1) / 2
    }

    pub fn weight_index(&self, co: usize, ci: usize, ky: usize, kx: usize) -> usize {
        let k = self.kernel_size;
        ((co * self.in_channels + ci) * k + ky) * k + kx
    }

    fn geometry(&self, shape: Shape) -> Geometry {
        Geometry {
            cin: self.in_channels,
            height: shape.height,
            width: shape.width,
            kernel: self.kernel_size,
        }
    }

    fn layout(&self, shape: Shape) -> Layout {
        Layout {
            cin: self.in_channels,
            height: shape.height,
            width: shape.width,
        }
    }

    fn check_input(&self, input: &Tensor) -> Result<(), EngineError> {
        if input.shape().channels != self.in_channels {
            return Err(EngineError::ShapeMismatch {
                op: "conv2d",
                expected: input.shape().with_channels(self.in_channels),
                found: input.shape(),
            });
        }
        Ok(())
    }

    fn uses_winograd(&self) -> bool {
        winograd::applies(self.kernel_size, self.in_channels, self.out_channels)
    }

    pub fn forward(&self, input: &Tensor, exec: Execution) -> Result<Tensor, EngineError> {
        self.check_input(input)?;
        let in_shape = input.shape();
        let out_shape = in_shape.with_channels(self.out_channels);
        let mut out = vec![0.0; out_shape.len()];
        let pairs = input
            .data()
            .chunks(in_shape.sample_len())
            .zip(out.chunks_mut(out_shape.sample_len()));
        if self.uses_winograd() {
            let l = self.layout(in_shape);
            let u = TransformedWeights::forward(&self.weight, self.out_channels, self.in_channels);
            for_each_item(exec, pairs, |(src, dst)| {
                winograd::correlate(&l, src, &u, Some(&self.bias), dst)
            });
        } else {
            let g = self.geometry(in_shape);
            let packed = PackedWeights::forward(&self.weight, self.out_channels, self.in_channels, self.kernel_size);
            for_each_item(exec, pairs, |(src, dst)| {
                let mut pad = Vec::new();
                kernels::pad_sample(&g, src, &mut pad);
                kernels::correlate(&g, &pad, &packed, Some(&self.bias), dst);
            });
        }
        Ok(Tensor::from_parts(out_shape, out))
    }

    /// Reverse pass given the forward input and the gradient of the output.
    pub fn backward(&self, input: &Tensor, grad_out: &Tensor, exec: Execution) -> Result<ConvGrads, EngineError> {
        self.check_input(input)?;
        let in_shape = input.shape();
        let out_shape = in_shape.with_channels(self.out_channels);
        grad_out.require_shape("conv2d backward", out_shape)?;
        let k = self.kernel_size;
        let plane = in_shape.plane();
        let bias_grad = |go: &[f64], db: &mut [f64]| {
            for (co, b) in db.iter_mut().enumerate() {
                *b = go[co * plane..(co + 1) * plane].iter().sum();
            }
        };
        let winograd = self.uses_winograd();
        let partial_len = if winograd {
            winograd::transformed_len(self.in_channels, self.out_channels)
        } else {
            self.weight.len()
        };
        let mut grad_in = vec![0.0; in_shape.len()];
        let mut partials = vec![(vec![0.0; partial_len], vec![0.0; self.out_channels]); in_shape.batch];
        let items = input
            .data()
            .chunks(in_shape.sample_len())
            .zip(grad_out.data().chunks(out_shape.sample_len()))
            .zip(grad_in.chunks_mut(in_shape.sample_len()).zip(partials.iter_mut()));
        if winograd {
            let l = self.layout(in_shape);
            let l_back = Layout {
                cin: self.out_channels,
                ..l
            };
            let u = TransformedWeights::input_gradient(&self.weight, self.out_channels, self.in_channels);
            for_each_item(exec, items, |((src, go), (din, (du, db)))| {
                winograd::weight_grad(&l, src, go, self.out_channels, du);
                bias_grad(go, db);
                winograd::correlate(&l_back, go, &u, None, din);
            });
        } else {
            let g = self.geometry(in_shape);
            let g_back = Geometry {
                cin: self.out_channels,
                ..g
            };
            let packed = PackedWeights::input_gradient(&self.weight, self.out_channels, self.in_channels, k);
            for_each_item(exec, items, |((src, go), (din, (dw, db)))| {
                let mut pad = Vec::new();
                kernels::pad_sample(&g, src, &mut pad);
                kernels::weight_grad(&g, &pad, go, self.out_channels, dw);
                bias_grad(go, db);
                kernels::pad_sample(&g_back, go, &mut pad);
                kernels::correlate(&g_back, &pad, &packed, None, din);
            });
        }

        // Per-sample partials are combined in sample order in both modes.
        let mut summed = vec![0.0; partial_len];
        let mut bias = vec![0.0; self.out_channels];
        for (dw, db) in &partials {
            summed.iter_mut().zip(dw).for_each(|(a, b)| *a += b);
            bias.iter_mut().zip(db).for_each(|(a, b)| *a += b);
        }
        let weight = if winograd {
            let mut weight = vec![0.0; self.weight.len()];
            winograd::weight_grad_finish(&summed, self.in_channels, self.out_channels, &mut weight);
            weight
        } else {
            summed
        };
        Ok(ConvGrads {
            input: Tensor::from_parts(in_shape, grad_in),
            weight,
            bias,
        })
    }
}

/// Same-padded cross-correlation of `input` with the layer's weights plus bias.
pub fn conv2d(input: &Tensor, layer: &Conv2d) -> Result<Tensor, EngineError> {
    layer.forward(input, Execution::from_env())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop cross-correlation with explicit bounds checks.
    fn oracle(input: &Tensor, conv: &Conv2d) -> Vec<f64> {
        let s = input.shape();
        let k = conv.kernel_size() as isize;
        let p = conv.padding() as isize;
        let mut out = vec![0.0; s.batch * conv.out_channels() * s.plane()];
        for n in 0..s.batch {
            for co in 0..conv.out_channels() {
                for y in 0..s.height as isize {
                    for x in 0..s.width as isize {
                        let mut acc = conv.bias[co];
                        for ci in 0..s.channels {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let (iy, ix) = (y + ky - p, x + kx - p);
                                    if iy < 0 || ix < 0 || iy >= s.height as isize || ix >= s.width as isize {
                                        continue;
                                    }
                                    acc += conv.weight[conv.weight_index(co, ci, ky as usize, kx as usize)]
                                        * input.at(n, ci, iy as usize, ix as usize);
                                }
                            }
                        }
                        out[((n * conv.out_channels() + co) * s.height + y as usize) * s.width + x as usize] = acc;
                    }
                }
            }
        }
        out
    }

    fn random_tensor(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn scaling_kernel() {
        let input = Tensor::full(Shape::new(1, 1, 3, 3), 1.0).unwrap();
        let conv = Conv2d::from_parameters(1, 1, 1, vec![2.0], vec![0.0]).unwrap();
        let out = conv2d(&input, &conv).unwrap();
        assert!(out.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random_tensor(Shape::new(2, 1, 7, 19), &mut rng);
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let conv = Conv2d::from_parameters(1, 1, 3, w, vec![0.0]).unwrap();
        let out = conv2d(&input, &conv).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = random_tensor(Shape::new(1, 2, 5, 5), &mut rng);
        let mut conv = Conv2d::he_normal(2, 4, 3, &mut rng).unwrap();
        conv.bias = (0..4).map(|i| 0.1 * i as f64).collect();
        let out = conv2d(&input, &conv).unwrap();
        for (a, b) in out.data().iter().zip(oracle(&input, &conv)) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn odd_geometries_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(c_in, c_out, k, h, w) in &[(3, 9, 3, 4, 23), (1, 17, 5, 9, 9), (5, 2, 1, 3, 40), (2, 3, 7, 6, 17)] {
            let input = random_tensor(Shape::new(2, c_in, h, w), &mut rng);
            let conv = Conv2d::he_normal(c_in, c_out, k, &mut rng).unwrap();
            let out = conv.forward(&input, Execution::Serial).unwrap();
            for (a, b) in out.data().iter().zip(oracle(&input, &conv)) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn rejects_channel_mismatch() {
        let input = Tensor::zeros(Shape::new(1, 3, 4, 4)).unwrap();
        let conv = Conv2d::new(2, 4, 3).unwrap();
        let err = conv2d(&input, &conv).unwrap_err().to_string();
        assert!(err.contains("1x3x4x4") && err.contains("1x2x4x4"), "{err}");
        assert!(Conv2d::new(1, 1, 4).is_err());
    }

    #[test]
    fn backward_matches_adjoint_oracle() {
        // <conv(u), v> = <u, conv^T(v)> and dW_{co,ci,ky,kx} = Σ v[co] · shifted u[ci].
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for &(c_in, c_out, k, h, w) in &[(2, 3, 3, 5, 11), (3, 9, 5, 7, 6), (4, 2, 1, 3, 17), (2, 2, 7, 8, 9)] {
            let input = random_tensor(Shape::new(2, c_in, h, w), &mut rng);
            let conv = Conv2d::he_normal(c_in, c_out, k, &mut rng).unwrap();
            let go = random_tensor(Shape::new(2, c_out, h, w), &mut rng);
            let grads = conv.backward(&input, &go, Execution::Serial).unwrap();

            // weight gradient via the oracle applied to unit kernels
            for idx in 0..conv.weight.len() {
                let mut unit = Conv2d::new(c_in, c_out, k).unwrap();
                unit.weight[idx] = 1.0;
                let response = oracle(&input, &unit);
                let expect: f64 = response.iter().zip(go.data()).map(|(a, b)| a * b).sum();
                assert!((grads.weight[idx] - expect).abs() < 1e-10);
            }
            let lhs: f64 = oracle(&input, &Conv2d { bias: vec![0.0; c_out], ..conv.clone() })
                .iter()
                .zip(go.data())
                .map(|(a, b)| a * b)
                .sum();
            let rhs: f64 = input.data().iter().zip(grads.input.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
            for co in 0..c_out {
                let expect: f64 = (0..2)
                    .flat_map(|n| (0..h * w).map(move |p| (n, p)))
                    .map(|(n, p)| go.data()[(n * c_out + co) * h * w + p])
                    .sum();
                assert!((grads.bias[co] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parallel_agrees_with_serial() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input = random_tensor(Shape::new(4, 3, 9, 13), &mut rng);
        let conv = Conv2d::he_normal(3, 5, 3, &mut rng).unwrap();
        let go = random_tensor(Shape::new(4, 5, 9, 13), &mut rng);
        let a = conv.forward(&input, Execution::Serial).unwrap();
        let b = conv.forward(&input, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        let ga = conv.backward(&input, &go, Execution::Serial).unwrap();
        let gb = conv.backward(&input, &go, Execution::Parallel).unwrap();
        assert_eq!(ga.weight, gb.weight);
        assert_eq!(ga.input, gb.input);
    }
}
