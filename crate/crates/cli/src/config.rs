//! Flag and config-file settings, merged into one validated [`RunConfig`].

use std::path::{Path, PathBuf};

use clap::Args;
use nac_core::engine::NetworkConfig;
use nac_core::gradcheck::{GradcheckConfig, Target};
use nac_core::image::ImageBuffer;
use nac_core::io::{self, ChannelMode, Dataset};
use nac_core::metrics;
use nac_core::noise::{LevelRange, NoiseKind, NoiseSpec};
use nac_core::pipeline::{Method, TrainConfig};
use nac_core::{desk, theory};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Every setting a subcommand reads. Flags override the config file, which
/// overrides the built-in defaults.
#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Settings {
    /// Single input image (.pgm, .ppm or .png).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Directory of images, or `desk` for the built-in 64×64 set.
    #[arg(long)]
    pub dataset: Option<String>,
    /// gaussian, poisson, mixed, blind-gaussian or blind-mixed.
    #[arg(long)]
    pub noise: Option<String>,
    /// Gaussian noise level on the [0, 255] scale.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Poisson peak; larger means weaker noise.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Training range of blind Gaussian levels, as LO:HI.
    #[arg(long)]
    pub sigma_range: Option<String>,
    /// Training range of blind Poisson levels, as LO:HI.
    #[arg(long)]
    pub lambda_range: Option<String>,
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Hidden channels of the network.
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train on levels drawn from the ranges; needs a blind noise kind.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub blind: Option<bool>,
    /// Draw the simulated noise once instead of every epoch.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub fixed_z: Option<bool>,
    /// Centre-crop every image to N×N.
    #[arg(long, value_name = "N")]
    pub crop: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Treat the input as already noisy at the given level.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_synthesis: Option<bool>,
    /// Load dataset images as RGB instead of converting to gray.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub color: Option<bool>,
    /// Comma-separated noise levels for `benchmark`.
    #[arg(long)]
    pub levels: Option<String>,
    /// nac or oracle.
    #[arg(long)]
    pub method: Option<String>,
    /// Monte Carlo trials for `verify-theory`.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Minimum signal-to-noise ratio for the weak-noise check.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Corrupts one analytic gradient in `gradcheck`.
    #[arg(long, hide = true)]
    pub fault: Option<String>,
}

macro_rules! merge_fields {
    ($flags:expr, $file:expr, $($f:ident),*) => {
        Settings { $($f: $flags.$f.or($file.$f)),* }
    };
}

impl Settings {
    pub fn merged_over(self, file: Settings) -> Settings {
        merge_fields!(
            self, file, input, dataset, noise, sigma, lambda, sigma_range, lambda_range, blocks, channels,
            epochs, lr, seed, blind, fixed_z, crop, out, no_synthesis, color, levels, method, trials, threshold,
            fault
        )
    }

    pub fn from_file(path: &Path) -> Result<Settings, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::ConfigFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| CliError::ConfigFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Denoise,
    Benchmark,
    VerifyTheory,
    Gradcheck,
}

/// The merged, validated configuration of one invocation. Its digest names
/// the run directory and is recorded in every report.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub subcommand: Subcommand,
    pub input: Option<PathBuf>,
    pub dataset: Option<String>,
    pub crop: Option<usize>,
    pub channel_mode: ChannelMode,
    pub noise: NoiseSpec,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub method: Method,
    pub synthesis: bool,
    pub levels: Vec<f64>,
    pub trials: usize,
    pub threshold: f64,
    pub gradcheck: GradcheckConfig,
    /// Where runs are written; not part of the digest, so moving the output
    /// root does not change the run id.
    #[serde(skip)]
    pub out: PathBuf,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn parse_kebab<T: for<'de> Deserialize<'de>>(what: &str, s: &str) -> Result<T, CliError> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| invalid(format!("unknown {what} `{s}`")))
}

fn parse_range(name: &str, s: &str) -> Result<LevelRange, CliError> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| invalid(format!("{name} must look like LO:HI, got `{s}`")))?;
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| invalid(format!("{name}: `{t}` is not a number")))
    };
    Ok(LevelRange::new(num(lo)?, num(hi)?))
}

fn parse_levels(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| invalid(format!("levels: `{t}` is not a number")))
        })
        .collect()
}

impl RunConfig {
    pub fn resolve(subcommand: Subcommand, s: Settings) -> Result<RunConfig, CliError> {
        let seed = s.seed.unwrap_or(0);
        let kind: NoiseKind = match &s.noise {
            Some(k) => parse_kebab("noise kind", k)?,
            None => NoiseKind::Gaussian,
        };
        let mut noise = NoiseSpec {
            kind,
            sigma: if kind.has_gaussian() { s.sigma.unwrap_or(10.0) } else { 0.0 },
            lambda: s.lambda.unwrap_or(25.0),
            seed,
            ..NoiseSpec::default()
        };
        if let Some(r) = &s.sigma_range {
            noise.sigma_range = Some(parse_range("sigma-range", r)?);
        }
        if let Some(r) = &s.lambda_range {
            noise.lambda_range = parse_range("lambda-range", r)?;
        }
        noise.validate().map_err(|e| invalid(e.to_string()))?;

        let blind = s.blind.unwrap_or(kind.is_blind());
        if blind != kind.is_blind() {
            return Err(invalid(format!(
                "--blind {blind} does not match noise kind {}",
                s.noise.as_deref().unwrap_or("gaussian")
            )));
        }
        let desk_net = NetworkConfig::desk();
        let mut network = NetworkConfig {
            num_residual_blocks: s.blocks.unwrap_or(desk_net.num_residual_blocks),
            hidden_channels: s.channels.unwrap_or(desk_net.hidden_channels),
            ..desk_net
        };
        let channel_mode = if s.color.unwrap_or(false) {
            ChannelMode::Color
        } else {
            ChannelMode::Grayscale
        };
        let train = TrainConfig {
            epochs: s.epochs.unwrap_or(TrainConfig::desk().epochs),
            learning_rate: s.lr.unwrap_or(TrainConfig::desk().learning_rate),
            seed,
            blind,
            fixed_z: s.fixed_z.unwrap_or(false),
            record_curve: true,
            ..TrainConfig::desk()
        };
        train.validate().map_err(|e| invalid(e.to_string()))?;
        let method: Method = match &s.method {
            Some(m) => parse_kebab("method", m)?,
            None => Method::Nac,
        };
        let synthesis = !s.no_synthesis.unwrap_or(false);
        if !synthesis && method == Method::Oracle {
            return Err(invalid("oracle training needs the clean image; drop --no-synthesis"));
        }
        let levels = match &s.levels {
            Some(l) => parse_levels(l)?,
            None if kind == NoiseKind::Poisson => vec![noise.lambda],
            None => vec![noise.sigma],
        };
        let trials = s.trials.unwrap_or(theory::DEFAULT_TRIALS);
        let threshold = s.threshold.unwrap_or(theory::DEFAULT_WEAK_NOISE_THRESHOLD);
        let fault: Option<Target> = s.fault.as_deref().map(|f| parse_kebab("gradcheck target", f)).transpose()?;

        match subcommand {
            Subcommand::Denoise => {
                let input = s.input.as_ref().ok_or_else(|| invalid("denoise needs --input"))?;
                let img = load_input(input)?;
                network.input_channels = img.channels();
            }
            Subcommand::Benchmark => {
                if s.dataset.is_none() {
                    return Err(invalid("benchmark needs --dataset (a directory or `desk`)"));
                }
                if channel_mode == ChannelMode::Color {
                    network.input_channels = 3;
                }
                for &level in &levels {
                    level_spec(&noise, level).validate().map_err(|e| invalid(e.to_string()))?;
                }
            }
            Subcommand::VerifyTheory => {
                if trials < theory::MIN_TRIALS {
                    return Err(invalid(format!(
                        "at least {} trials are needed, got {trials}",
                        theory::MIN_TRIALS
                    )));
                }
                if let Some(input) = &s.input {
                    load_input(input)?;
                }
            }
            Subcommand::Gradcheck => {}
        }
        network.validate().map_err(|e| invalid(e.to_string()))?;

        Ok(RunConfig {
            subcommand,
            input: s.input,
            dataset: s.dataset,
            crop: s.crop,
            channel_mode,
            noise,
            network,
            train,
            method,
            synthesis,
            levels,
            trials,
            threshold,
            gradcheck: GradcheckConfig {
                seed,
                fault,
                ..GradcheckConfig::default()
            },
            out: s.out.unwrap_or_else(|| PathBuf::from("runs")),
        })
    }

    pub fn digest(&self) -> String {
        metrics::digest(self)
    }

    pub fn run_id(&self) -> String {
        self.digest()[..12].to_string()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join(self.run_id())
    }

    /// Dataset images, built-in or from disk, converted and cropped.
    pub fn load_dataset(&self) -> Result<Vec<(String, ImageBuffer)>, CliError> {
        let name = self.dataset.as_deref().unwrap_or("desk");
        let mut images = if name == "desk" && !Path::new(name).exists() {
            desk::desk_set()
        } else {
            let dir = Path::new(name);
            if !dir.is_dir() {
                return Err(io::IoError::NotFound(dir.to_path_buf()).into());
            }
            let set = Dataset::from_dir(dir, self.channel_mode, None)?;
            if set.entries.is_empty() {
                return Err(invalid(format!("no .pgm, .ppm or .png files in {}", dir.display())));
            }
            set.load()?
        };
        if self.channel_mode == ChannelMode::Color {
            for (_, img) in images.iter_mut().filter(|(_, img)| img.channels() == 1) {
                let plane = img.data().to_vec();
                *img = ImageBuffer::new(img.role(), 3, img.height(), img.width(), [plane.as_slice(); 3].concat())
                    .map_err(io::IoError::from)?;
            }
        }
        if let Some(size) = self.crop {
            for (_, img) in images.iter_mut() {
                *img = io::center_crop(img, size)?;
            }
        }
        Ok(images)
    }

    pub fn load_input(&self) -> Result<ImageBuffer, CliError> {
        let path = self.input.as_ref().ok_or_else(|| invalid("missing --input"))?;
        let img = load_input(path)?;
        Ok(match self.crop {
            Some(size) => io::center_crop(&img, size)?,
            None => img,
        })
    }
}

fn load_input(path: &Path) -> Result<ImageBuffer, CliError> {
    if !path.exists() {
        return Err(io::IoError::NotFound(path.to_path_buf()).into());
    }
    Ok(io::load_image(path)?)
}

/// The noise spec of one benchmark level: the Poisson peak for pure Poisson
/// noise, the Gaussian level otherwise.
pub fn level_spec(base: &NoiseSpec, level: f64) -> NoiseSpec {
    let mut spec = base.clone();
    if base.kind == NoiseKind::Poisson {
        spec.lambda = level;
    } else {
        spec.sigma = level;
    }
    spec
}
