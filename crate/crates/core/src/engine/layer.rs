use super::batch_norm::BatchNormCache;
use super::{BatchNorm, Conv2d, EngineError, Execution, Mode, Tensor};

/// Elementwise `max(0, x)`.
pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&x| x.max(0.0)).collect();
    Tensor::from_parts(input.shape(), data)
}

/// Gradient of ReLU given its forward output; the derivative at 0 is taken as 0.
pub fn relu_backward(output: &Tensor, grad_out: &Tensor) -> Result<Tensor, EngineError> {
    grad_out.require_shape("relu backward", output.shape())?;
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
        .collect();
    Ok(Tensor::from_parts(output.shape(), data))
}

/// conv → BN → ReLU → conv → BN, added to the block input.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm,
    pub conv2: Conv2d,
    pub bn2: BatchNorm,
}

impl ResidualBlock {
    pub fn new(conv1: Conv2d, conv2: Conv2d) -> Result<Self, EngineError> {
        let c = conv1.in_channels();
        if conv1.out_channels() != conv2.in_channels() || conv2.out_channels() != c {
            return Err(EngineError::InvalidConfig(format!(
                "residual block convs {}->{} and {}->{} do not return to {c} channels",
                conv1.in_channels(),
                conv1.out_channels(),
                conv2.in_channels(),
                conv2.out_channels()
            )));
        }
        Ok(Self {
            bn1: BatchNorm::new(conv1.out_channels())?,
            bn2: BatchNorm::new(c)?,
            conv1,
            conv2,
        })
    }

    pub fn channels(&self) -> usize {
        self.conv1.in_channels()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv2d,
    BatchNorm,
    Relu,
    ResidualBlock,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    BatchNorm(BatchNorm),
    Relu,
    ResidualBlock(ResidualBlock),
}

#[derive(Debug)]
pub(crate) enum LayerCache {
    Conv { input: Tensor },
    BatchNorm(BatchNormCache),
    Relu { output: Tensor },
    Block(Box<BlockCache>),
}

#[derive(Debug)]
pub(crate) struct BlockCache {
    input: Tensor,
    bn1: BatchNormCache,
    hidden: Tensor,
    bn2: BatchNormCache,
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv2d(_) => LayerKind::Conv2d,
            Layer::BatchNorm(_) => LayerKind::BatchNorm,
            Layer::Relu => LayerKind::Relu,
            Layer::ResidualBlock(_) => LayerKind::ResidualBlock,
        }
    }

    /// Channel count the layer requires on input; `None` when any count works.
    pub fn in_channels(&self) -> Option<usize> {
        match self {
            Layer::Conv2d(c) => Some(c.in_channels()),
            Layer::BatchNorm(b) => Some(b.channels()),
            Layer::Relu => None,
            Layer::ResidualBlock(b) => Some(b.channels()),
        }
    }

    pub fn out_channels(&self) -> Option<usize> {
        match self {
            Layer::Conv2d(c) => Some(c.out_channels()),
            other => other.in_channels(),
        }
    }

    pub fn parameters(&self) -> Vec<&[f64]> {
        match self {
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            Layer::Relu => vec![],
            Layer::ResidualBlock(b) => vec![
                &b.conv1.weight,
                &b.conv1.bias,
                &b.bn1.gamma,
                &b.bn1.beta,
                &b.conv2.weight,
                &b.conv2.bias,
                &b.bn2.gamma,
                &b.bn2.beta,
            ],
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::Relu => vec![],
            Layer::ResidualBlock(b) => vec![
                &mut b.conv1.weight,
                &mut b.conv1.bias,
                &mut b.bn1.gamma,
                &mut b.bn1.beta,
                &mut b.conv2.weight,
                &mut b.conv2.bias,
                &mut b.bn2.gamma,
                &mut b.bn2.beta,
            ],
        }
    }

    /// Running statistics, which influence eval-mode output but are not trained.
    pub fn buffers(&self) -> Vec<&[f64]> {
        match self {
            Layer::BatchNorm(b) => vec![&b.running_mean, &b.running_var],
            Layer::ResidualBlock(b) => vec![
                &b.bn1.running_mean,
                &b.bn1.running_var,
                &b.bn2.running_mean,
                &b.bn2.running_var,
            ],
            _ => vec![],
        }
    }

    /// Forward pass. In train mode the returned cache holds what `backward` needs.
    pub(crate) fn forward(
        &mut self,
        input: Tensor,
        mode: Mode,
        exec: Execution,
    ) -> Result<(Tensor, Option<LayerCache>), EngineError> {
        let retain = mode == Mode::Train;
        match self {
            Layer::Conv2d(conv) => {
                let out = conv.forward(&input, exec)?;
                Ok((out, retain.then_some(LayerCache::Conv { input })))
            }
            Layer::BatchNorm(bn) => {
                let (out, cache) = bn.forward(&input, mode)?;
                Ok((out, cache.map(LayerCache::BatchNorm)))
            }
            Layer::Relu => {
                let out = relu(&input);
                let cache = retain.then(|| LayerCache::Relu { output: out.clone() });
                Ok((out, cache))
            }
            Layer::ResidualBlock(block) => {
                if input.shape().channels != block.channels() {
                    return Err(EngineError::ShapeMismatch {
                        op: "residual_block",
                        expected: input.shape().with_channels(block.channels()),
                        found: input.shape(),
                    });
                }
                let c1 = block.conv1.forward(&input, exec)?;
                let (b1, cache1) = block.bn1.forward(&c1, mode)?;
                drop(c1);
                let hidden = relu(&b1);
                drop(b1);
                let c2 = block.conv2.forward(&hidden, exec)?;
                let (mut out, cache2) = block.bn2.forward(&c2, mode)?;
                drop(c2);
                for (o, x) in out.data_mut().iter_mut().zip(input.data()) {
                    *o += x;
                }
                let cache = match (cache1, cache2) {
                    (Some(bn1), Some(bn2)) => Some(LayerCache::Block(Box::new(BlockCache {
                        input,
                        bn1,
                        hidden,
                        bn2,
                    }))),
                    _ => None,
                };
                Ok((out, cache))
            }
        }
    }

    /// Returns the input gradient and parameter gradients in `parameters()` order.
    pub(crate) fn backward(
        &self,
        cache: LayerCache,
        grad_out: Tensor,
        exec: Execution,
    ) -> Result<(Tensor, Vec<Vec<f64>>), EngineError> {
        match (self, cache) {
            (Layer::Conv2d(conv), LayerCache::Conv { input }) => {
                let g = conv.backward(&input, &grad_out, exec)?;
                Ok((g.input, vec![g.weight, g.bias]))
            }
            (Layer::BatchNorm(bn), LayerCache::BatchNorm(cache)) => {
                let g = bn.backward(&cache, &grad_out)?;
                Ok((g.input, vec![g.gamma, g.beta]))
            }
            (Layer::Relu, LayerCache::Relu { output }) => Ok((relu_backward(&output, &grad_out)?, vec![])),
            (Layer::ResidualBlock(block), LayerCache::Block(cache)) => {
                let BlockCache { input, bn1, hidden, bn2 } = *cache;
                let g_bn2 = block.bn2.backward(&bn2, &grad_out)?;
                let g_conv2 = block.conv2.backward(&hidden, &g_bn2.input, exec)?;
                let g_relu = relu_backward(&hidden, &g_conv2.input)?;
                drop(hidden);
                let g_bn1 = block.bn1.backward(&bn1, &g_relu)?;
                let g_conv1 = block.conv1.backward(&input, &g_bn1.input, exec)?;
                let mut grad_in = g_conv1.input;
                for (d, g) in grad_in.data_mut().iter_mut().zip(grad_out.data()) {
                    *d += g;
                }
                Ok((
                    grad_in,
                    vec![
                        g_conv1.weight,
                        g_conv1.bias,
                        g_bn1.gamma,
                        g_bn1.beta,
                        g_conv2.weight,
                        g_conv2.bias,
                        g_bn2.gamma,
                        g_bn2.beta,
                    ],
                ))
            }
            _ => Err(EngineError::InvalidConfig("retained activations do not match the layer".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Shape;

    #[test]
    fn relu_definition() {
        let t = Tensor::new(Shape::new(1, 1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::full(Shape::new(2, 2, 3, 3), -0.5).unwrap();
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let pos = Tensor::from_fn(Shape::new(1, 2, 3, 3), |i| i as f64).unwrap();
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn relu_backward_masks() {
        let y = Tensor::new(Shape::new(1, 1, 1, 3), vec![0.0, 0.0, 2.0]).unwrap();
        let g = Tensor::new(Shape::new(1, 1, 1, 3), vec![5.0, 6.0, 7.0]).unwrap();
        assert_eq!(relu_backward(&y, &g).unwrap().data(), &[0.0, 0.0, 7.0]);
    }

    #[test]
    fn block_requires_matching_channels() {
        let a = Conv2d::new(4, 6, 3).unwrap();
        let b = Conv2d::new(6, 5, 3).unwrap();
        assert!(ResidualBlock::new(a, b).is_err());
    }
}
