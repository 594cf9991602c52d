//! Noise processes: additive Gaussian, signal-dependent Poisson, their sum,
//! and blind variants whose level is drawn from a range.
//!
//! Poisson noise uses the peak-rate construction: a pixel of value `v` draws
//! `p ~ Poisson(λ·v/255)` and the noise is `255·p/λ − v`, which has zero mean
//! and variance `255·v/λ`. Smaller `λ` means stronger noise.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{ImageBuffer, ImageBufferError, NoiseLevel, Role};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("sigma must be finite and non-negative, got {0}")]
    NegativeSigma(f64),
    #[error("lambda must be finite and positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("invalid {name} range [{lo}, {hi}]")]
    BadRange { name: &'static str, lo: f64, hi: f64 },
    #[error("{0:?} noise has no blind level distribution")]
    NotBlind(NoiseKind),
    #[error(transparent)]
    Image(#[from] ImageBufferError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Gaussian,
    Poisson,
    /// Poisson plus independent Gaussian.
    Mixed,
    /// Gaussian whose simulated level is drawn from `sigma_range`.
    BlindGaussian,
    /// Mixed noise whose simulated `σ` and `λ` are drawn uniformly from their ranges.
    BlindMixed,
}

impl NoiseKind {
    pub fn is_blind(self) -> bool {
        matches!(self, NoiseKind::BlindGaussian | NoiseKind::BlindMixed)
    }

    pub fn has_poisson(self) -> bool {
        matches!(self, NoiseKind::Poisson | NoiseKind::Mixed | NoiseKind::BlindMixed)
    }

    pub fn has_gaussian(self) -> bool {
        !matches!(self, NoiseKind::Poisson)
    }
}

/// Distribution of blind Gaussian levels within `sigma_range`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlindDistribution {
    /// Gaussian centred on the range midpoint with std of a quarter of the
    /// width, redrawn until it falls inside the range.
    #[default]
    TruncatedGaussian,
    Uniform,
}

/// Inclusive level bounds `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRange {
    pub lo: f64,
    pub hi: f64,
}

impl LevelRange {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    fn validate(&self, name: &'static str) -> Result<(), NoiseError> {
        if self.lo.is_finite() && self.hi.is_finite() && 0.0 <= self.lo && self.lo <= self.hi {
            Ok(())
        } else {
            Err(NoiseError::BadRange {
                name,
                lo: self.lo,
                hi: self.hi,
            })
        }
    }

    /// Uniform on `(lo, hi]`; the degenerate range yields `hi`.
    fn uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.hi - (self.hi - self.lo) * u
    }

    fn truncated_gaussian<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let width = self.hi - self.lo;
        if width == 0.0 {
            return self.lo;
        }
        let (mean, std) = (self.lo + width / 2.0, width / 4.0);
        loop {
            let z: f64 = StandardNormal.sample(rng);
            let v = mean + std * z;
            if self.contains(v) {
                return v;
            }
        }
    }
}

/// Declarative noise description.
///
/// For blind kinds, `sigma` and `lambda` are the true levels of the observed
/// noise, and the ranges govern the simulated noise drawn during training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub sigma: f64,
    pub lambda: f64,
    /// Defaults to `[0, 55]` for blind Gaussian and `[0, 25]` for blind mixed noise.
    pub sigma_range: Option<LevelRange>,
    pub lambda_range: LevelRange,
    pub blind_distribution: BlindDistribution,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            sigma: 0.0,
            lambda: 25.0,
            sigma_range: None,
            lambda_range: LevelRange::new(0.0, 25.0),
            blind_distribution: BlindDistribution::default(),
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn gaussian(sigma: f64) -> Self {
        Self {
            sigma,
            ..Self::default()
        }
    }

    pub fn poisson(lambda: f64) -> Self {
        Self {
            kind: NoiseKind::Poisson,
            lambda,
            ..Self::default()
        }
    }

    pub fn mixed(sigma: f64, lambda: f64) -> Self {
        Self {
            kind: NoiseKind::Mixed,
            sigma,
            lambda,
            ..Self::default()
        }
    }

    /// True level `sigma`, simulated levels drawn from `range`.
    pub fn blind_gaussian(sigma: f64, range: LevelRange) -> Self {
        Self {
            kind: NoiseKind::BlindGaussian,
            sigma,
            sigma_range: Some(range),
            ..Self::default()
        }
    }

    pub fn blind_mixed(sigma: f64, lambda: f64) -> Self {
        Self {
            kind: NoiseKind::BlindMixed,
            sigma,
            lambda,
            ..Self::default()
        }
    }

    pub fn sigma_range(&self) -> LevelRange {
        self.sigma_range.unwrap_or(match self.kind {
            NoiseKind::BlindMixed => LevelRange::new(0.0, 25.0),
            _ => LevelRange::new(0.0, 55.0),
        })
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(NoiseError::NegativeSigma(self.sigma));
        }
        if self.kind.has_poisson() && !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(NoiseError::NonPositiveLambda(self.lambda));
        }
        if self.kind.is_blind() {
            self.sigma_range().validate("sigma")?;
        }
        if self.kind == NoiseKind::BlindMixed {
            self.lambda_range.validate("lambda")?;
            if self.lambda_range.hi == 0.0 {
                return Err(NoiseError::BadRange {
                    name: "lambda",
                    lo: self.lambda_range.lo,
                    hi: self.lambda_range.hi,
                });
            }
        }
        Ok(())
    }

    /// The level of the observed noise `n_o`.
    pub fn observed_level(&self) -> NoiseLevel {
        NoiseLevel {
            sigma: if self.kind.has_gaussian() { self.sigma } else { 0.0 },
            lambda: self.kind.has_poisson().then_some(self.lambda),
        }
    }

    /// The level of one simulated noise draw `n_s`: drawn from the ranges for
    /// blind kinds, the observed level otherwise.
    pub fn simulated_level<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<NoiseLevel, NoiseError> {
        if self.kind.is_blind() {
            draw_blind_level(self, rng)
        } else {
            Ok(self.observed_level())
        }
    }
}

/// I.i.d. zero-mean Gaussian samples with standard deviation `sigma`, unclipped.
pub fn sample_gaussian_noise<R: Rng + ?Sized>(len: usize, sigma: f64, rng: &mut R) -> Result<Vec<f64>, NoiseError> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(NoiseError::NegativeSigma(sigma));
    }
    if sigma == 0.0 {
        return Ok(vec![0.0; len]);
    }
    Ok((0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect())
}

/// Signal-dependent Poisson noise for `base`, whose samples are clamped to
/// `[0, 255]` when computing rates. The noise is returned, not added.
pub fn sample_poisson_noise<R: Rng + ?Sized>(base: &ImageBuffer, lambda: f64, rng: &mut R) -> Result<Vec<f64>, NoiseError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(NoiseError::NonPositiveLambda(lambda));
    }
    Ok(base
        .data()
        .iter()
        .map(|&x| {
            let v = x.clamp(0.0, 255.0);
            let rate = lambda * v / 255.0;
            if rate == 0.0 {
                return 0.0;
            }
            let p: f64 = Poisson::new(rate).expect("positive finite rate").sample(rng);
            255.0 * p / lambda - v
        })
        .collect())
}

/// Noise field of the given level for `base`: Poisson component first, then Gaussian.
pub fn sample_noise<R: Rng + ?Sized>(base: &ImageBuffer, level: NoiseLevel, rng: &mut R) -> Result<Vec<f64>, NoiseError> {
    let mut noise = match level.lambda {
        Some(lambda) => sample_poisson_noise(base, lambda, rng)?,
        None => vec![0.0; base.len()],
    };
    if level.sigma != 0.0 {
        let g = sample_gaussian_noise(base.len(), level.sigma, rng)?;
        noise.iter_mut().zip(g).for_each(|(n, g)| *n += g);
    }
    Ok(noise)
}

/// `base + noise` at `level`, tagged with `role` and the level.
pub fn corrupt<R: Rng + ?Sized>(base: &ImageBuffer, level: NoiseLevel, role: Role, rng: &mut R) -> Result<ImageBuffer, NoiseError> {
    let noise = sample_noise(base, level, rng)?;
    let data = base.data().iter().zip(noise).map(|(v, n)| v + n).collect();
    Ok(base.with_data(role, data)?.with_noise(level))
}

/// `y = x + n_o` at the spec's observed level. Requires a clean image.
pub fn make_observed<R: Rng + ?Sized>(x: &ImageBuffer, spec: &NoiseSpec, rng: &mut R) -> Result<ImageBuffer, NoiseError> {
    x.require_role(Role::Clean)?;
    spec.validate()?;
    corrupt(x, spec.observed_level(), Role::Observed, rng)
}

/// `z = y + n_s`, with Poisson rates computed from `y`. Blind kinds draw a
/// fresh level, which is recorded on the result.
pub fn make_simulated<R: Rng + ?Sized>(y: &ImageBuffer, spec: &NoiseSpec, rng: &mut R) -> Result<ImageBuffer, NoiseError> {
    y.require_role(Role::Observed)?;
    spec.validate()?;
    let level = spec.simulated_level(rng)?;
    corrupt(y, level, Role::Simulated, rng)
}

/// Concrete level for a blind spec. Blind Gaussian draws `σ` per the spec's
/// [`BlindDistribution`]; blind mixed draws `σ` and `λ` uniformly from
/// `(lo, hi]` of their ranges.
pub fn draw_blind_level<R: Rng + ?Sized>(spec: &NoiseSpec, rng: &mut R) -> Result<NoiseLevel, NoiseError> {
    spec.validate()?;
    let sigma_range = spec.sigma_range();
    match spec.kind {
        NoiseKind::BlindGaussian => {
            let sigma = match spec.blind_distribution {
                BlindDistribution::TruncatedGaussian => sigma_range.truncated_gaussian(rng),
                BlindDistribution::Uniform => sigma_range.uniform(rng),
            };
            Ok(NoiseLevel { sigma, lambda: None })
        }
        NoiseKind::BlindMixed => {
            let lambda = spec.lambda_range.uniform(rng);
            let sigma = sigma_range.uniform(rng);
            Ok(NoiseLevel {
                sigma,
                lambda: Some(lambda),
            })
        }
        other => Err(NoiseError::NotBlind(other)),
    }
}
