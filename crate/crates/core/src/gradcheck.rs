//! Finite-difference checks of the engine's analytic gradients.
//!
//! Each check builds a small random instance, takes the scalar objective
//! `Σ r ⊙ f(input)` for a fixed random `r`, and compares the reverse-mode
//! gradient with central differences at sampled parameter and input
//! coordinates.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{
    BatchNorm, Conv2d, EngineError, Execution, Layer, Mode, Network, NetworkConfig, OutputMode, ResidualBlock, Shape,
    Tensor,
};
use crate::rng::{self, Purpose};

/// Relative errors are measured against at least this magnitude, so that
/// coordinates whose true gradient is near zero are judged on absolute error.
/// A conv bias feeding batch norm has gradient exactly 0, where the central
/// difference returns round-off of order `1e-16 · |objective| / step`.
pub const RELATIVE_FLOOR: f64 = 1e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Conv2d,
    BatchNorm,
    Relu,
    ResidualBlock,
    /// Head conv, three residual blocks and tail conv.
    Network,
}

impl Target {
    pub const ALL: [Target; 5] = [
        Target::Conv2d,
        Target::BatchNorm,
        Target::Relu,
        Target::ResidualBlock,
        Target::Network,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Central-difference half step.
    pub step: f64,
    pub tolerance: f64,
    pub parameter_samples: usize,
    pub input_samples: usize,
    /// Corrupts one analytic gradient of this target, to show the check can fail.
    pub fault: Option<Target>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            step: 1e-5,
            tolerance: DEFAULT_TOLERANCE,
            parameter_samples: 10,
            input_samples: 5,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub target: Target,
    pub checks: usize,
    pub worst_relative_error: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub rows: Vec<GradcheckRow>,
    pub worst_relative_error: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl GradcheckReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// A coordinate under test: parameter tensor and element, or an input element.
#[derive(Clone, Copy, Debug)]
enum Coord {
    Param(usize, usize),
    Input(usize),
}

/// A differentiable instance: objective value and analytic gradients at the
/// current parameters.
trait Instance {
    fn parameters_mut(&mut self) -> Vec<&mut [f64]>;
    fn objective(&self, input: &Tensor) -> Result<f64, EngineError>;
    fn gradients(&self, input: &Tensor) -> Result<(Vec<Vec<f64>>, Tensor), EngineError>;
}

fn weighted_sum(out: &Tensor, weights: &Tensor) -> f64 {
    out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

struct LayerInstance {
    layer: Layer,
    weights: Tensor,
}

impl Instance for LayerInstance {
    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.layer.parameters_mut()
    }

    fn objective(&self, input: &Tensor) -> Result<f64, EngineError> {
        let mut layer = self.layer.clone();
        let (out, _) = layer.forward(input.clone(), Mode::Train, Execution::Serial)?;
        Ok(weighted_sum(&out, &self.weights))
    }

    fn gradients(&self, input: &Tensor) -> Result<(Vec<Vec<f64>>, Tensor), EngineError> {
        let mut layer = self.layer.clone();
        let (_, cache) = layer.forward(input.clone(), Mode::Train, Execution::Serial)?;
        let cache = cache.ok_or(EngineError::NoRetainedActivations)?;
        let (g_in, g_params) = layer.backward(cache, self.weights.clone(), Execution::Serial)?;
        Ok((g_params, g_in))
    }
}

struct NetworkInstance {
    net: Network,
    weights: Tensor,
}

impl Instance for NetworkInstance {
    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.net.parameters_mut()
    }

    fn objective(&self, input: &Tensor) -> Result<f64, EngineError> {
        let mut net = self.net.clone();
        Ok(weighted_sum(&net.forward(input, Mode::Train)?, &self.weights))
    }

    fn gradients(&self, input: &Tensor) -> Result<(Vec<Vec<f64>>, Tensor), EngineError> {
        let mut net = self.net.clone();
        net.forward(input, Mode::Train)?;
        let g = net.backward(&self.weights)?;
        Ok((g.params, g.input))
    }
}

fn random_tensor<R: Rng>(shape: Shape, rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).expect("finite")
}

/// Inputs bounded away from zero so ReLU kinks sit far outside the step.
fn away_from_zero<R: Rng>(shape: Shape, rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m: f64 = rng.random_range(0.1..1.0);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
    .expect("finite")
}

fn randomize_bn<R: Rng>(bn: &mut BatchNorm, rng: &mut R) {
    bn.gamma.iter_mut().for_each(|g| *g = rng.random_range(0.5..1.5));
    bn.beta.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
}

fn build(target: Target, rng: &mut rng::Rng) -> Result<(Box<dyn Instance>, Tensor), EngineError> {
    Ok(match target {
        Target::Conv2d => {
            let mut conv = Conv2d::he_normal(3, 4, 3, rng)?;
            conv.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
            let input = random_tensor(Shape::new(2, 3, 5, 6), rng);
            let weights = random_tensor(input.shape().with_channels(4), rng);
            (Box::new(LayerInstance { layer: Layer::Conv2d(conv), weights }), input)
        }
        Target::BatchNorm => {
            let mut bn = BatchNorm::new(3)?;
            randomize_bn(&mut bn, rng);
            let input = random_tensor(Shape::new(4, 3, 4, 5), rng);
            let weights = random_tensor(input.shape(), rng);
            (Box::new(LayerInstance { layer: Layer::BatchNorm(bn), weights }), input)
        }
        Target::Relu => {
            let input = away_from_zero(Shape::new(2, 3, 4, 4), rng);
            let weights = random_tensor(input.shape(), rng);
            (Box::new(LayerInstance { layer: Layer::Relu, weights }), input)
        }
        Target::ResidualBlock => {
            let mut block = ResidualBlock::new(Conv2d::he_normal(3, 3, 3, rng)?, Conv2d::he_normal(3, 3, 3, rng)?)?;
            randomize_bn(&mut block.bn1, rng);
            randomize_bn(&mut block.bn2, rng);
            let input = random_tensor(Shape::new(3, 3, 5, 5), rng);
            let weights = random_tensor(input.shape(), rng);
            (Box::new(LayerInstance { layer: Layer::ResidualBlock(block), weights }), input)
        }
        Target::Network => {
            let cfg = NetworkConfig {
                num_residual_blocks: 3,
                hidden_channels: 4,
                kernel_size: 3,
                input_channels: 1,
                output: OutputMode::Direct,
            };
            let mut net = Network::new(cfg, rng)?;
            net.set_execution(Execution::Serial);
            let input = random_tensor(Shape::new(2, 1, 6, 6), rng);
            let weights = random_tensor(input.shape(), rng);
            (Box::new(NetworkInstance { net, weights }), input)
        }
    })
}

fn sample_coords(inst: &mut dyn Instance, input: &Tensor, cfg: &GradcheckConfig, rng: &mut rng::Rng) -> Vec<Coord> {
    let sizes: Vec<usize> = inst.parameters_mut().iter().map(|p| p.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut coords = Vec::new();
    for flat in sample(rng, total, cfg.parameter_samples.min(total)).into_vec() {
        let (mut t, mut i) = (0, flat);
        while i >= sizes[t] {
            i -= sizes[t];
            t += 1;
        }
        coords.push(Coord::Param(t, i));
    }
    let n = input.len();
    coords.extend(sample(rng, n, cfg.input_samples.min(n)).into_iter().map(Coord::Input));
    coords
}

fn nudge(inst: &mut dyn Instance, input: &mut Tensor, c: Coord, delta: f64) {
    match c {
        Coord::Param(t, i) => inst.parameters_mut()[t][i] += delta,
        Coord::Input(i) => input.data_mut()[i] += delta,
    }
}

/// Worst relative error of one target over its sampled coordinates.
pub fn check(target: Target, cfg: &GradcheckConfig) -> Result<GradcheckRow, EngineError> {
    let index = Target::ALL.iter().position(|&t| t == target).expect("listed") as u64;
    let mut rng = rng::stream(cfg.seed, index, Purpose::Gradcheck);
    let (mut inst, mut input) = build(target, &mut rng)?;
    let coords = sample_coords(inst.as_mut(), &input, cfg, &mut rng);
    let (g_params, g_input) = inst.gradients(&input)?;
    let h = cfg.step;
    let mut worst: f64 = 0.0;
    for (k, &c) in coords.iter().enumerate() {
        let mut analytic = match c {
            Coord::Param(t, i) => g_params[t][i],
            Coord::Input(i) => g_input.data()[i],
        };
        if k == 0 && cfg.fault == Some(target) {
            analytic = analytic * 1.01 + 1e-3;
        }
        nudge(inst.as_mut(), &mut input, c, h);
        let plus = inst.objective(&input)?;
        nudge(inst.as_mut(), &mut input, c, -2.0 * h);
        let minus = inst.objective(&input)?;
        nudge(inst.as_mut(), &mut input, c, h);
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(relative_error(analytic, numeric));
    }
    Ok(GradcheckRow {
        target,
        checks: coords.len(),
        worst_relative_error: worst,
        pass: worst < cfg.tolerance,
    })
}

/// One row per layer kind plus the composed network.
pub fn run(cfg: &GradcheckConfig) -> Result<GradcheckReport, EngineError> {
    let rows = Target::ALL
        .iter()
        .map(|&t| check(t, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let worst = rows.iter().map(|r| r.worst_relative_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        rows,
        worst_relative_error: worst,
        tolerance: cfg.tolerance,
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_check_passes_with_one_row_per_target() {
        let report = run(&GradcheckConfig::default()).unwrap();
        assert_eq!(report.rows.len(), 5);
        for row in &report.rows {
            assert!(row.pass, "{row:?}");
            assert!(row.checks >= 5);
        }
        assert!(report.worst_relative_error < 1e-4);
    }

    #[test]
    fn injected_fault_is_detected() {
        for target in Target::ALL {
            let cfg = GradcheckConfig {
                fault: Some(target),
                ..GradcheckConfig::default()
            };
            let report = run(&cfg).unwrap();
            assert!(!report.pass());
            for row in &report.rows {
                assert_eq!(row.pass, row.target != target, "{row:?}");
            }
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 2e-9) - 1e-5).abs() < 1e-15);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
