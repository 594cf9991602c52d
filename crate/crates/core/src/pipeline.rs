//! Per-image self-supervised training and inference.
//!
//! For an observed image `y`, every epoch builds the eight dihedral copies of
//! `y`, corrupts each copy with fresh simulated noise to get `z`, and takes
//! one Adam step on the ℓ2 loss between `f(z)` and the copies of `y`. The
//! trained network is then applied once to `y`. The clean image is never an
//! input to training; it may only be passed as a monitor reference, which is
//! read after each step to log PSNR.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{l2_loss, EngineError, Execution, Mode, Network, NetworkConfig, OptimizerState, Tensor};
use crate::image::{ImageBuffer, ImageBufferError, NoiseLevel, Role};
use crate::metrics::{self, EvalReport, MetricError, ReportRow};
use crate::noise::{self, NoiseError, NoiseSpec};
use crate::rng::{self, Purpose};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Image(#[from] ImageBufferError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// One of the eight symmetries of the square: an optional left-right mirror
/// followed by `rotation` quarter turns counter-clockwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dihedral {
    rotation: u8,
    mirror: bool,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral {
        rotation: 0,
        mirror: false,
    };

    /// All eight transforms, identity first, ordered by [`Dihedral::id`].
    pub fn all() -> [Dihedral; 8] {
        std::array::from_fn(|i| Dihedral::from_id(i as u8).expect("id below 8"))
    }

    /// `rotation + 4·mirror`.
    pub fn id(self) -> u8 {
        self.rotation + 4 * self.mirror as u8
    }

    pub fn from_id(id: u8) -> Option<Dihedral> {
        (id < 8).then_some(Dihedral {
            rotation: id % 4,
            mirror: id >= 4,
        })
    }

    pub fn inverse(self) -> Dihedral {
        if self.mirror {
            self
        } else {
            Dihedral {
                rotation: (4 - self.rotation) % 4,
                mirror: false,
            }
        }
    }

    /// The transform equal to applying `first` and then `self`.
    pub fn after(self, first: Dihedral) -> Dihedral {
        // R^a M^f · R^b M^g = R^(a ± b) M^(f ⊕ g), with − when f is a mirror.
        let b = if self.mirror {
            (4 - first.rotation) % 4
        } else {
            first.rotation
        };
        Dihedral {
            rotation: (self.rotation + b) % 4,
            mirror: self.mirror ^ first.mirror,
        }
    }

    /// Output `(height, width)` for an input of the given size.
    pub fn output_size(self, height: usize, width: usize) -> (usize, usize) {
        if self.rotation % 2 == 1 {
            (width, height)
        } else {
            (height, width)
        }
    }

    pub fn apply(self, img: &ImageBuffer) -> ImageBuffer {
        let (c, h, w) = img.dims();
        let (oh, ow) = self.output_size(h, w);
        let mut data = vec![0.0; c * h * w];
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let (sy, sx) = self.source(oy, ox, h, w);
                    data[(ch * oh + oy) * ow + ox] = img.at(ch, sy, sx);
                }
            }
        }
        let out = ImageBuffer::new(img.role(), c, oh, ow, data).expect("permutation of valid samples");
        match img.noise() {
            Some(level) => out.with_noise(level),
            None => out,
        }
    }

    /// Source pixel of output `(oy, ox)` for an `h × w` input.
    fn source(self, oy: usize, ox: usize, h: usize, w: usize) -> (usize, usize) {
        // Undo the rotation one quarter turn at a time, tracking the size of
        // the intermediate image, then undo the mirror.
        let (mut y, mut x) = (oy, ox);
        let (mut ch, mut cw) = self.output_size(h, w);
        for _ in 0..self.rotation {
            // A counter-clockwise quarter turn sends (py, px) of a ph × pw
            // image to (pw − 1 − px, py); the current height is pw.
            let (py, px) = (x, ch - 1 - y);
            (ch, cw) = (cw, ch);
            (y, x) = (py, px);
        }
        debug_assert_eq!((ch, cw), (h, w));
        if self.mirror {
            x = w - 1 - x;
        }
        (y, x)
    }
}

/// A transformed copy of an image and the transform that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Augmented {
    pub transform: Dihedral,
    pub image: ImageBuffer,
}

/// The eight dihedral images of `img`, original first.
pub fn augment_dihedral(img: &ImageBuffer) -> Vec<Augmented> {
    Dihedral::all()
        .into_iter()
        .map(|t| Augmented {
            transform: t,
            image: t.apply(img),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    #[default]
    L2,
}

/// How the augmented copies are grouped into optimizer steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Batching {
    /// All copies form one batch: one step per epoch.
    #[default]
    Batched,
    /// One step per copy.
    PerImage,
}

/// When blind noise levels are redrawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlindDraw {
    /// A new level for every augmented copy in every epoch.
    #[default]
    PerImage,
    /// One level per epoch shared by all copies.
    PerEpoch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub augment: bool,
    pub loss: Loss,
    pub seed: u64,
    /// Selects the random streams of `seed`; run_experiment sets it to the image position.
    pub stream: u64,
    /// Requires a blind noise kind.
    pub blind: bool,
    /// Log PSNR against the monitor reference after every epoch.
    pub record_curve: bool,
    /// Draw each copy's simulated noise once and reuse it in every epoch.
    pub fixed_z: bool,
    pub batching: Batching,
    pub blind_draw: BlindDraw,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            learning_rate: 1e-3,
            augment: true,
            loss: Loss::L2,
            seed: 0,
            stream: 0,
            blind: false,
            record_curve: false,
            fixed_z: false,
            batching: Batching::Batched,
            blind_draw: BlindDraw::PerImage,
        }
    }
}

impl TrainConfig {
    /// 500 epochs.
    pub fn desk() -> Self {
        Self {
            epochs: 500,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Per-epoch training history.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingRecord {
    /// Mean training loss of each epoch, in `[0, 1]` pixel units squared.
    pub loss: Vec<f64>,
    /// PSNR of the denoised monitor image after each epoch, when requested.
    pub psnr: Option<Vec<f64>>,
    pub wall_clock: Duration,
    pub checksum: String,
}

impl TrainingRecord {
    /// `epoch,loss,psnr` with epochs counted from 1; `psnr` is empty when not recorded.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), MetricError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "loss", "psnr"])?;
        for (i, loss) in self.loss.iter().enumerate() {
            let psnr = self.psnr.as_ref().map(|p| p[i].to_string()).unwrap_or_default();
            w.write_record([(i + 1).to_string(), loss.to_string(), psnr])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Clean reference used only to log a PSNR curve.
#[derive(Clone, Copy, Debug)]
pub struct Monitor<'a> {
    pub reference: &'a ImageBuffer,
}

/// Produces the network inputs of one epoch, one per target copy.
trait InputSource {
    fn inputs(&mut self, epoch: usize) -> Result<Vec<ImageBuffer>, TrainError>;
}

/// Fresh `z = y + n_s` per copy.
struct Simulated<'a> {
    copies: &'a [ImageBuffer],
    spec: &'a NoiseSpec,
    draw: BlindDraw,
    fixed: Option<Vec<ImageBuffer>>,
    fixed_z: bool,
    rng: rng::Rng,
}

impl InputSource for Simulated<'_> {
    fn inputs(&mut self, _epoch: usize) -> Result<Vec<ImageBuffer>, TrainError> {
        if let Some(fixed) = &self.fixed {
            return Ok(fixed.clone());
        }
        let shared = match (self.spec.kind.is_blind(), self.draw) {
            (true, BlindDraw::PerEpoch) => Some(noise::draw_blind_level(self.spec, &mut self.rng)?),
            _ => None,
        };
        let mut out = Vec::with_capacity(self.copies.len());
        for y in self.copies {
            let level: NoiseLevel = match shared {
                Some(level) => level,
                None => self.spec.simulated_level(&mut self.rng)?,
            };
            out.push(noise::corrupt(y, level, Role::Simulated, &mut self.rng)?);
        }
        if self.fixed_z {
            self.fixed = Some(out.clone());
        }
        Ok(out)
    }
}

/// The same inputs in every epoch.
struct Fixed(Vec<ImageBuffer>);

impl InputSource for Fixed {
    fn inputs(&mut self, _epoch: usize) -> Result<Vec<ImageBuffer>, TrainError> {
        Ok(self.0.clone())
    }
}

fn copies_of(img: &ImageBuffer, augment: bool) -> Vec<ImageBuffer> {
    if augment {
        augment_dihedral(img).into_iter().map(|a| a.image).collect()
    } else {
        vec![img.clone()]
    }
}

/// Trains a fresh network mapping `z = y + n_s` to `y`.
pub fn train_nac(
    y: &ImageBuffer,
    noise: &NoiseSpec,
    netcfg: &NetworkConfig,
    cfg: &TrainConfig,
) -> Result<(Network, TrainingRecord), TrainError> {
    train_nac_monitored(y, noise, netcfg, cfg, None)
}

/// [`train_nac`] that also logs PSNR of `denoise(y)` against the monitor
/// reference when `cfg.record_curve` is set.
pub fn train_nac_monitored(
    y: &ImageBuffer,
    noise: &NoiseSpec,
    netcfg: &NetworkConfig,
    cfg: &TrainConfig,
    monitor: Option<Monitor<'_>>,
) -> Result<(Network, TrainingRecord), TrainError> {
    y.require_role(Role::Observed)?;
    noise.validate()?;
    if cfg.blind && !noise.kind.is_blind() {
        return Err(TrainError::Config(format!(
            "blind training needs a blind noise kind, got {:?}",
            noise.kind
        )));
    }
    let copies = copies_of(y, cfg.augment);
    let source = Simulated {
        copies: &copies,
        spec: noise,
        draw: cfg.blind_draw,
        fixed: None,
        fixed_z: cfg.fixed_z,
        rng: rng::stream(cfg.seed, cfg.stream, Purpose::Training),
    };
    fit(y, &copies, source, netcfg, cfg, monitor)
}

/// Supervised counterpart of [`train_nac`]: input `y`, target `x`.
pub fn train_oracle(
    y: &ImageBuffer,
    x: &ImageBuffer,
    netcfg: &NetworkConfig,
    cfg: &TrainConfig,
    monitor: Option<Monitor<'_>>,
) -> Result<(Network, TrainingRecord), TrainError> {
    y.require_role(Role::Observed)?;
    x.require_role(Role::Clean)?;
    y.require_same_dims(x)?;
    let targets = copies_of(x, cfg.augment);
    let inputs = copies_of(y, cfg.augment);
    fit(y, &targets, Fixed(inputs), netcfg, cfg, monitor)
}

/// Groups copy indices by image size so each group can form one batch.
fn size_groups(images: &[ImageBuffer]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, img) in images.iter().enumerate() {
        match groups.iter_mut().find(|g| images[g[0]].dims() == img.dims()) {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    groups
}

fn fit(
    y: &ImageBuffer,
    targets: &[ImageBuffer],
    mut source: impl InputSource,
    netcfg: &NetworkConfig,
    cfg: &TrainConfig,
    monitor: Option<Monitor<'_>>,
) -> Result<(Network, TrainingRecord), TrainError> {
    cfg.validate()?;
    if y.channels() != netcfg.input_channels {
        return Err(TrainError::Config(format!(
            "image has {} channels, network expects {}",
            y.channels(),
            netcfg.input_channels
        )));
    }
    if let Some(m) = monitor {
        y.require_same_dims(m.reference)?;
    }
    let start = Instant::now();
    let mut net = Network::new(*netcfg, &mut rng::stream(cfg.seed, cfg.stream, Purpose::Init))?;
    let mut opt = OptimizerState::with_learning_rate(cfg.learning_rate)?;
    let steps: Vec<Vec<usize>> = match cfg.batching {
        Batching::Batched => vec![(0..targets.len()).collect()],
        Batching::PerImage => (0..targets.len()).map(|i| vec![i]).collect(),
    };
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut curve = (cfg.record_curve && monitor.is_some()).then(|| Vec::with_capacity(cfg.epochs));
    for epoch in 1..=cfg.epochs {
        let inputs = source.inputs(epoch)?;
        let mut epoch_loss = 0.0;
        for step in &steps {
            let ins: Vec<ImageBuffer> = step.iter().map(|&i| inputs[i].clone()).collect();
            let outs: Vec<ImageBuffer> = step.iter().map(|&i| targets[i].clone()).collect();
            let loss = train_step(&mut net, &mut opt, &ins, &outs)
                .map_err(|e| TrainError::Diverged {
                    epoch,
                    reason: e.to_string(),
                })?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    reason: format!("loss {loss}"),
                });
            }
            epoch_loss += loss * step.len() as f64 / targets.len() as f64;
        }
        losses.push(epoch_loss);
        if let (Some(curve), Some(m)) = (curve.as_mut(), monitor) {
            curve.push(metrics::psnr(&denoise(&mut net, y)?, m.reference)?);
        }
    }
    let record = TrainingRecord {
        loss: losses,
        psnr: curve,
        wall_clock: start.elapsed(),
        checksum: net.checksum(),
    };
    Ok((net, record))
}

/// One optimizer step on the mean ℓ2 loss over all pairs. Pairs of different
/// sizes are run as separate batches whose gradients are weighted by their
/// share of the pairs and summed.
fn train_step(
    net: &mut Network,
    opt: &mut OptimizerState,
    inputs: &[ImageBuffer],
    targets: &[ImageBuffer],
) -> Result<f64, EngineError> {
    let total = inputs.len() as f64;
    let mut loss = 0.0;
    let mut grads: Option<Vec<Vec<f64>>> = None;
    for group in size_groups(inputs) {
        let weight = group.len() as f64 / total;
        let ins: Vec<&ImageBuffer> = group.iter().map(|&i| &inputs[i]).collect();
        let outs: Vec<&ImageBuffer> = group.iter().map(|&i| &targets[i]).collect();
        let x = ImageBuffer::stack(&ins).expect("grouped by size");
        let t = ImageBuffer::stack(&outs).map_err(|e| EngineError::InvalidConfig(e.to_string()))?;
        let pred = net.forward(&x, Mode::Train)?;
        let (l, mut g) = l2_loss(&pred, &t)?;
        if weight != 1.0 {
            g.data_mut().iter_mut().for_each(|v| *v *= weight);
        }
        loss += weight * l;
        let gr = net.backward(&g)?;
        match grads.as_mut() {
            None => grads = Some(gr.params),
            Some(acc) => acc
                .iter_mut()
                .flatten()
                .zip(gr.params.iter().flatten())
                .for_each(|(a, b)| *a += b),
        }
    }
    if !loss.is_finite() {
        return Ok(loss);
    }
    let grads = grads.expect("at least one pair");
    opt.update(net.parameters_mut(), &grads)?;
    Ok(loss)
}

/// One eval-mode forward pass on `y`. The result is not clipped.
pub fn denoise(net: &mut Network, y: &ImageBuffer) -> Result<ImageBuffer, TrainError> {
    let out: Tensor = net.forward(&y.to_tensor(), Mode::Eval)?;
    let img = ImageBuffer::from_tensor(&out, 0, Role::Denoised)?;
    Ok(match y.noise() {
        Some(level) => img.with_noise(level),
        None => img,
    })
}

/// Which training procedure an experiment runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Nac,
    /// Supervised on `(y, x)`; only meaningful for measuring the gap to NAC.
    Oracle,
}

#[derive(Clone, Debug, Default)]
pub struct ExperimentOptions {
    pub method: Method,
    /// Overrides the digest recorded in the report.
    pub config_digest: Option<String>,
}

/// Everything produced for one image.
#[derive(Clone, Debug)]
pub struct ImageOutcome {
    pub row: ReportRow,
    pub observed: Option<ImageBuffer>,
    pub denoised: Option<ImageBuffer>,
    pub record: Option<TrainingRecord>,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub report: EvalReport,
    pub outcomes: Vec<ImageOutcome>,
}

#[derive(Serialize)]
struct DigestInput<'a> {
    noise: &'a NoiseSpec,
    network: &'a NetworkConfig,
    train: &'a TrainConfig,
    method: Method,
}

/// Runs one image: synthesise `y`, train, denoise, score against `x`.
pub fn run_image(
    index: usize,
    x: &ImageBuffer,
    noise: &NoiseSpec,
    netcfg: &NetworkConfig,
    cfg: &TrainConfig,
    method: Method,
) -> Result<(ImageBuffer, ImageBuffer, TrainingRecord), TrainError> {
    let y = noise::make_observed(x, noise, &mut rng::stream(noise.seed, index as u64, Purpose::Observed))?;
    let cfg = TrainConfig {
        stream: index as u64,
        ..cfg.clone()
    };
    let monitor = Some(Monitor { reference: x });
    let (mut net, record) = match method {
        Method::Nac => train_nac_monitored(&y, noise, netcfg, &cfg, monitor)?,
        Method::Oracle => train_oracle(&y, x, netcfg, &cfg, monitor)?,
    };
    let denoised = denoise(&mut net, &y)?;
    Ok((y, denoised, record))
}

/// For each clean image: synthesise `y`, train on it, denoise it and score
/// the result. Images run concurrently unless serial numerics were requested;
/// each uses random streams derived from its position, so the report does
/// not depend on scheduling. Failures become error rows.
pub fn run_experiment(
    dataset: &[(String, ImageBuffer)],
    noise: &NoiseSpec,
    netcfg: &NetworkConfig,
    cfg: &TrainConfig,
    options: &ExperimentOptions,
) -> Result<ExperimentOutput, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::Config("dataset is empty".into()));
    }
    noise.validate()?;
    cfg.validate()?;
    netcfg.validate()?;
    let start = Instant::now();
    let level = noise.observed_level();
    let one = |(index, (id, x)): (usize, &(String, ImageBuffer))| -> ImageOutcome {
        let mut row = ReportRow {
            id: id.clone(),
            sigma: level.sigma,
            lambda: level.lambda,
            noisy_psnr: None,
            psnr: None,
            ssim: None,
            error: None,
        };
        let scored = run_image(index, x, noise, netcfg, cfg, options.method).and_then(|(y, d, rec)| {
            let noisy = metrics::psnr(&y, x)?;
            let p = metrics::psnr(&d, x)?;
            let s = metrics::ssim(&d, x)?;
            Ok((y, d, rec, noisy, p, s))
        });
        match scored {
            Ok((y, d, rec, noisy, p, s)) => {
                row.noisy_psnr = Some(noisy);
                row.psnr = Some(p);
                row.ssim = Some(s);
                ImageOutcome {
                    row,
                    observed: Some(y),
                    denoised: Some(d),
                    record: Some(rec),
                }
            }
            Err(e) => {
                row.error = Some(e.to_string());
                ImageOutcome {
                    row,
                    observed: None,
                    denoised: None,
                    record: None,
                }
            }
        }
    };
    let outcomes: Vec<ImageOutcome> = match Execution::from_env() {
        Execution::Serial => dataset.iter().enumerate().map(one).collect(),
        Execution::Parallel => dataset.par_iter().enumerate().map(one).collect(),
    };
    let digest = options.config_digest.clone().unwrap_or_else(|| {
        metrics::digest(&DigestInput {
            noise,
            network: netcfg,
            train: cfg,
            method: options.method,
        })
    });
    let mut report = EvalReport::new(outcomes.iter().map(|o| o.row.clone()).collect(), cfg.seed, digest);
    report.wall_clock = start.elapsed();
    Ok(ExperimentOutput { report, outcomes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> ImageBuffer {
        ImageBuffer::gray(Role::Clean, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn rotation_is_counter_clockwise() {
        let r = Dihedral::from_id(1).unwrap().apply(&square());
        assert_eq!(r.data(), &[2.0, 4.0, 1.0, 3.0]);
        let m = Dihedral::from_id(4).unwrap().apply(&square());
        assert_eq!(m.data(), &[2.0, 1.0, 4.0, 3.0]);
    }

    #[test]
    fn asymmetric_image_has_eight_distinct_copies() {
        let copies = augment_dihedral(&square());
        assert_eq!(copies[0].image, square());
        for i in 0..8 {
            for j in i + 1..8 {
                assert_ne!(copies[i].image, copies[j].image);
            }
        }
    }

    #[test]
    fn constant_image_is_fixed_by_every_transform() {
        let img = ImageBuffer::filled(Role::Clean, 1, 4, 4, 9.0).unwrap();
        assert!(augment_dihedral(&img).iter().all(|a| a.image == img));
    }

    #[test]
    fn rectangular_images_swap_dimensions() {
        let img = ImageBuffer::gray(Role::Clean, 2, 3, (0..6).map(|v| v as f64).collect()).unwrap();
        for t in Dihedral::all() {
            let out = t.apply(&img);
            assert_eq!((out.height(), out.width()), t.output_size(2, 3));
            assert_eq!(t.inverse().apply(&out), img);
        }
    }

    #[test]
    fn composition_matches_sequential_application() {
        let img = ImageBuffer::gray(Role::Clean, 3, 4, (0..12).map(|v| v as f64).collect()).unwrap();
        for a in Dihedral::all() {
            for b in Dihedral::all() {
                assert_eq!(a.after(b).apply(&img), a.apply(&b.apply(&img)), "{a:?} after {b:?}");
            }
        }
    }

    #[test]
    fn blind_flag_requires_blind_noise() {
        let y = ImageBuffer::filled(Role::Observed, 1, 8, 8, 50.0).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            blind: true,
            ..TrainConfig::default()
        };
        let err = train_nac(&y, &NoiseSpec::gaussian(5.0), &NetworkConfig::desk(), &cfg).unwrap_err();
        assert!(matches!(err, TrainError::Config(_)));
    }
}
