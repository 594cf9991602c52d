use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layer::LayerCache;
use super::{Conv2d, EngineError, Execution, Layer, Mode, ResidualBlock, Shape, Tensor};

/// How the last layer's output becomes the network output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OutputMode {
    /// The layer stack predicts the image directly.
    Direct,
    /// The layer stack predicts a correction added to the input. The final
    /// convolution starts at zero, so an untrained network is the identity.
    #[default]
    Residual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub num_residual_blocks: usize,
    pub hidden_channels: usize,
    pub kernel_size: usize,
    pub input_channels: usize,
    #[serde(default)]
    pub output: OutputMode,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            num_residual_blocks: 10,
            hidden_channels: 32,
            kernel_size: 3,
            input_channels: 1,
            output: OutputMode::default(),
        }
    }
}

impl NetworkConfig {
    /// 3 blocks of 32 channels on grayscale input.
    pub fn desk() -> Self {
        Self {
            num_residual_blocks: 3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.hidden_channels == 0 {
            return Err(EngineError::InvalidConfig("hidden_channels must be at least 1".into()));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(EngineError::InvalidConfig(format!(
                "kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.input_channels != 1 && self.input_channels != 3 {
            return Err(EngineError::InvalidConfig(format!(
                "input_channels must be 1 or 3, got {}",
                self.input_channels
            )));
        }
        Ok(())
    }
}

/// Gradients of a scalar objective with respect to every parameter tensor
/// (in [`Network::parameters`] order) and to the network input.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: Vec<Vec<f64>>,
    pub input: Tensor,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.params.iter().flatten().all(|g| g.is_finite()) && self.input.is_finite()
    }
}

#[derive(Debug)]
struct ForwardCache {
    layers: Vec<LayerCache>,
    output_shape: Shape,
}

/// An ordered layer stack mapping an image batch to an image batch of the same shape.
#[derive(Debug)]
pub struct Network {
    config: NetworkConfig,
    layers: Vec<Layer>,
    cache: Option<ForwardCache>,
    execution: Execution,
}

impl Clone for Network {
    /// Clones parameters and statistics; retained activations are not copied.
    fn clone(&self) -> Self {
        Self {
            config: self.config,
            layers: self.layers.clone(),
            cache: None,
            execution: self.execution,
        }
    }
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.layers == other.layers
    }
}

impl Network {
    /// Head conv → residual blocks → tail conv, He-initialised.
    pub fn new<R: Rng + ?Sized>(config: NetworkConfig, rng: &mut R) -> Result<Self, EngineError> {
        config.validate()?;
        let (c, h, k) = (config.input_channels, config.hidden_channels, config.kernel_size);
        let mut layers = vec![Layer::Conv2d(Conv2d::he_normal(c, h, k, rng)?)];
        for _ in 0..config.num_residual_blocks {
            let conv1 = Conv2d::he_normal(h, h, k, rng)?;
            let conv2 = Conv2d::he_normal(h, h, k, rng)?;
            layers.push(Layer::ResidualBlock(ResidualBlock::new(conv1, conv2)?));
        }
        let tail = match config.output {
            OutputMode::Direct => Conv2d::he_normal(h, c, k, rng)?,
            OutputMode::Residual => Conv2d::new(h, c, k)?,
        };
        layers.push(Layer::Conv2d(tail));
        Self::from_layers(config, layers)
    }

    /// Wraps an explicit layer list after checking channel compatibility.
    pub fn from_layers(config: NetworkConfig, layers: Vec<Layer>) -> Result<Self, EngineError> {
        config.validate()?;
        let mut channels = config.input_channels;
        for (i, layer) in layers.iter().enumerate() {
            if let Some(need) = layer.in_channels() {
                if need != channels {
                    return Err(EngineError::InvalidConfig(format!(
                        "layer {i} ({:?}) expects {need} channels but receives {channels}",
                        layer.kind()
                    )));
                }
            }
            channels = layer.out_channels().unwrap_or(channels);
        }
        if channels != config.input_channels {
            return Err(EngineError::InvalidConfig(format!(
                "network emits {channels} channels, expected {}",
                config.input_channels
            )));
        }
        Ok(Self {
            config,
            layers,
            cache: None,
            execution: Execution::from_env(),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.cache = None;
        &mut self.layers
    }

    pub fn execution(&self) -> Execution {
        self.execution
    }

    pub fn set_execution(&mut self, execution: Execution) {
        self.execution = execution;
    }

    pub fn parameters(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(Layer::parameters).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(Layer::parameters_mut).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    /// SHA-256 over all parameters and running statistics (little-endian f64 bytes).
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for layer in &self.layers {
            for slice in layer.parameters().into_iter().chain(layer.buffers()) {
                for v in slice {
                    hasher.update(v.to_le_bytes());
                }
            }
        }
        hex::encode(hasher.finalize())
    }

    /// Applies the layers in order. Train mode retains the activations needed by
    /// [`Network::backward`] and updates batch-norm running statistics.
    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor, EngineError> {
        input.require_channels("network forward", self.config.input_channels)?;
        let exec = self.execution;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &mut self.layers {
            let (out, cache) = layer.forward(x, mode, exec)?;
            caches.extend(cache);
            x = out;
        }
        if self.config.output == OutputMode::Residual {
            for (o, i) in x.data_mut().iter_mut().zip(input.data()) {
                *o += i;
            }
        }
        if mode == Mode::Train {
            self.cache = Some(ForwardCache {
                layers: caches,
                output_shape: x.shape(),
            });
        }
        Ok(x)
    }

    /// Reverse pass for the most recent train-mode forward call. The retained
    /// activations are consumed.
    pub fn backward(&mut self, output_grad: &Tensor) -> Result<Gradients, EngineError> {
        let cache = self.cache.take().ok_or(EngineError::NoRetainedActivations)?;
        if let Err(e) = output_grad.require_shape("network backward", cache.output_shape) {
            self.cache = Some(cache);
            return Err(e);
        }
        let exec = self.execution;
        let mut grad = output_grad.clone();
        let mut per_layer = Vec::with_capacity(self.layers.len());
        for (layer, layer_cache) in self.layers.iter().zip(cache.layers).rev() {
            let (g_in, g_params) = layer.backward(layer_cache, grad, exec)?;
            per_layer.push(g_params);
            grad = g_in;
        }
        if self.config.output == OutputMode::Residual {
            for (g, o) in grad.data_mut().iter_mut().zip(output_grad.data()) {
                *g += o;
            }
        }
        per_layer.reverse();
        Ok(Gradients {
            params: per_layer.into_iter().flatten().collect(),
            input: grad,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{l2_loss, BatchNorm};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config(blocks: usize) -> NetworkConfig {
        NetworkConfig {
            num_residual_blocks: blocks,
            hidden_channels: 4,
            kernel_size: 3,
            input_channels: 1,
            output: OutputMode::Direct,
        }
    }

    #[test]
    fn config_validation() {
        assert!(NetworkConfig { kernel_size: 4, ..small_config(1) }.validate().is_err());
        assert!(NetworkConfig { hidden_channels: 0, ..small_config(1) }.validate().is_err());
        assert!(NetworkConfig { input_channels: 2, ..small_config(1) }.validate().is_err());
        assert_eq!(NetworkConfig::default().num_residual_blocks, 10);
    }

    #[test]
    fn from_layers_checks_channel_chain() {
        let cfg = small_config(0);
        let layers = vec![
            Layer::Conv2d(Conv2d::new(1, 4, 3).unwrap()),
            Layer::BatchNorm(BatchNorm::new(5).unwrap()),
            Layer::Conv2d(Conv2d::new(4, 1, 3).unwrap()),
        ];
        assert!(Network::from_layers(cfg, layers).is_err());
        let layers = vec![Layer::Conv2d(Conv2d::new(1, 4, 3).unwrap())];
        assert!(Network::from_layers(cfg, layers).is_err());
    }

    #[test]
    fn residual_output_starts_as_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = NetworkConfig {
            output: OutputMode::Residual,
            ..small_config(2)
        };
        let mut net = Network::new(cfg, &mut rng).unwrap();
        let x = Tensor::from_fn(Shape::new(2, 1, 6, 6), |i| (i as f64 * 0.37).sin()).unwrap();
        assert_eq!(net.forward(&x, Mode::Eval).unwrap(), x);
        assert_eq!(net.forward(&x, Mode::Train).unwrap(), x);
    }

    #[test]
    fn backward_requires_retained_activations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Network::new(small_config(1), &mut rng).unwrap();
        let x = Tensor::full(Shape::new(1, 1, 4, 4), 0.5).unwrap();
        let g = Tensor::zeros(x.shape()).unwrap();
        assert_eq!(net.backward(&g).unwrap_err(), EngineError::NoRetainedActivations);
        net.forward(&x, Mode::Eval).unwrap();
        assert_eq!(net.backward(&g).unwrap_err(), EngineError::NoRetainedActivations);
        net.forward(&x, Mode::Train).unwrap();
        assert!(net.backward(&g).is_ok());
        assert!(net.backward(&g).is_err());
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Network::new(small_config(2), &mut rng).unwrap();
        let x = Tensor::from_fn(Shape::new(2, 1, 5, 7), |i| (i as f64).cos()).unwrap();
        let y = net.forward(&x, Mode::Train).unwrap();
        let grads = net.backward(&Tensor::zeros(y.shape()).unwrap()).unwrap();
        assert_eq!(grads.params.len(), net.parameters().len());
        assert!(grads.params.iter().flatten().all(|&g| g == 0.0));
        assert!(grads.input.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradients_are_finite_and_shaped() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = Network::new(small_config(3), &mut rng).unwrap();
        let x = Tensor::from_fn(Shape::new(2, 1, 8, 8), |i| (i as f64 * 0.1).sin()).unwrap();
        let t = Tensor::from_fn(x.shape(), |i| (i as f64 * 0.2).cos()).unwrap();
        let y = net.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.shape(), x.shape());
        let (_, g) = l2_loss(&y, &t).unwrap();
        let grads = net.backward(&g).unwrap();
        assert!(grads.is_finite());
        for (p, g) in net.parameters().iter().zip(&grads.params) {
            assert_eq!(p.len(), g.len());
        }
        assert_eq!(grads.input.shape(), x.shape());
    }

    #[test]
    fn checksum_tracks_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = Network::new(small_config(1), &mut rng).unwrap();
        let before = net.checksum();
        assert_eq!(before, net.clone().checksum());
        net.parameters_mut()[0][0] += 1e-12;
        assert_ne!(before, net.checksum());
    }
}
