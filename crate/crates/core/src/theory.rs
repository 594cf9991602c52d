//! Monte-Carlo checks of the statistics behind training on noisy targets:
//! noise much weaker than signal, expectations preserved by each corruption
//! step, and variance additivity of summed Gaussian and Poisson noise.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{ImageBuffer, NoiseLevel, Role};
use crate::noise::{self, NoiseError, NoiseSpec};
use crate::rng::{self, Purpose};

pub const MIN_TRIALS: usize = 10_000;
pub const DEFAULT_TRIALS: usize = 1_000_000;
/// Ratio reported when the denominator is exactly zero.
pub const RATIO_CAP: f64 = 1e12;
pub const DEFAULT_WEAK_NOISE_THRESHOLD: f64 = 10.0;
pub const VARIANCE_TOLERANCE: f64 = 0.05;
pub const STANDARD_ERRORS: f64 = 3.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("{0} trials requested; at least {MIN_TRIALS} are required")]
    TooFewTrials(usize),
    #[error("correlation {0} outside [-1, 1]")]
    Correlation(f64),
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

/// Parameters of one additivity trial on a constant image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryTrialSpec {
    pub trials: usize,
    pub sigma_o: f64,
    pub sigma_s: f64,
    pub lambda_o: Option<f64>,
    pub lambda_s: Option<f64>,
    /// Correlation between the two Gaussian components.
    pub rho: f64,
    /// Constant pixel value the Poisson rates are computed from.
    pub level: f64,
}

impl TheoryTrialSpec {
    pub fn gaussian(sigma_o: f64, sigma_s: f64, rho: f64) -> Self {
        Self {
            trials: DEFAULT_TRIALS,
            sigma_o,
            sigma_s,
            lambda_o: None,
            lambda_s: None,
            rho,
            level: 128.0,
        }
    }

    pub fn validate(&self) -> Result<(), TheoryError> {
        check_trials(self.trials)?;
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(TheoryError::Correlation(self.rho));
        }
        for sigma in [self.sigma_o, self.sigma_s] {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(NoiseError::NegativeSigma(sigma).into());
            }
        }
        for lambda in [self.lambda_o, self.lambda_s].into_iter().flatten() {
            if !(lambda > 0.0 && lambda.is_finite()) {
                return Err(NoiseError::NonPositiveLambda(lambda).into());
            }
        }
        Ok(())
    }

    /// `σ_o² + σ_s² + 2ρσ_oσ_s` plus the variances `255·v/λ` of the Poisson components.
    pub fn predicted_variance(&self) -> f64 {
        let gauss = self.sigma_o.powi(2) + self.sigma_s.powi(2) + 2.0 * self.rho * self.sigma_o * self.sigma_s;
        let v = self.level.clamp(0.0, 255.0);
        let poisson: f64 = [self.lambda_o, self.lambda_s]
            .into_iter()
            .flatten()
            .map(|l| 255.0 * v / l)
            .sum();
        gauss + poisson
    }
}

/// One checked claim. `pass` holds exactly when `error ≤ tolerance`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub claim: String,
    pub estimate: f64,
    pub predicted: f64,
    /// Relative error, or |gap| in standard errors for expectation gaps, or
    /// threshold / ratio for weak-noise ratios.
    pub error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl TheoryRow {
    fn new(claim: impl Into<String>, estimate: f64, predicted: f64, error: f64, tolerance: f64) -> Self {
        Self {
            claim: claim.into(),
            estimate,
            predicted,
            error,
            tolerance,
            pass: error <= tolerance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub rows: Vec<TheoryRow>,
    pub seed: u64,
    pub trials: usize,
    pub weak_noise_threshold: f64,
}

impl TheoryReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<44} {:>14} {:>14} {:>10} {:>8}  result\n",
            "claim", "estimate", "predicted", "error", "tol"
        );
        for r in &self.rows {
            out += &format!(
                "{:<44} {:>14.6} {:>14.6} {:>10.4} {:>8.3}  {}\n",
                r.claim,
                r.estimate,
                r.predicted,
                r.error,
                r.tolerance,
                if r.pass { "pass" } else { "FAIL" }
            );
        }
        out
    }
}

fn check_trials(trials: usize) -> Result<(), TheoryError> {
    if trials < MIN_TRIALS {
        Err(TheoryError::TooFewTrials(trials))
    } else {
        Ok(())
    }
}

/// Mean and unbiased variance, accumulated in order.
fn moments(values: impl Iterator<Item = f64>) -> (f64, f64, usize) {
    // Welford's update keeps the variance accurate for large offsets.
    let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
    for v in values {
        n += 1;
        let d = v - mean;
        mean += d / n as f64;
        m2 += d * (v - mean);
    }
    let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
    (mean, var, n)
}

fn capped_ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        RATIO_CAP
    } else {
        (num / den).min(RATIO_CAP)
    }
}

/// Draws the observed noise of `spec` over `x` until `trials` samples exist.
fn observed_samples<R: Rng + ?Sized>(x: &ImageBuffer, level: NoiseLevel, trials: usize, rng: &mut R) -> Result<Vec<f64>, TheoryError> {
    let mut out = Vec::with_capacity(trials);
    while out.len() < trials {
        out.extend(noise::sample_noise(x, level, rng)?);
    }
    out.truncate(trials);
    Ok(out)
}

/// Ratios `E[x] / |E[n_o]|` and `Var[x] / Var[n_o]`, each passing when at
/// least `threshold`. Exact-zero denominators report [`RATIO_CAP`].
pub fn verify_weak_noise<R: Rng + ?Sized>(
    x: &ImageBuffer,
    spec: &NoiseSpec,
    trials: usize,
    threshold: f64,
    rng: &mut R,
) -> Result<Vec<TheoryRow>, TheoryError> {
    check_trials(trials)?;
    spec.validate()?;
    let (mean_x, var_x, _) = moments(x.data().iter().copied());
    let n = observed_samples(x, spec.observed_level(), trials, rng)?;
    let (mean_n, var_n, _) = moments(n.into_iter());
    let mean_ratio = capped_ratio(mean_x, mean_n.abs());
    let var_ratio = capped_ratio(var_x, var_n);
    Ok(vec![
        TheoryRow::new("weak noise: E[x] / |E[n_o]|", mean_ratio, threshold, threshold / mean_ratio, 1.0),
        TheoryRow::new("weak noise: Var[x] / Var[n_o]", var_ratio, threshold, threshold / var_ratio, 1.0),
    ])
}

fn gap_row(claim: &str, diffs: &[f64]) -> TheoryRow {
    let (mean, var, n) = moments(diffs.iter().copied());
    let se = (var / n as f64).sqrt();
    let error = if se == 0.0 {
        if mean == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        mean.abs() / se
    };
    TheoryRow::new(claim, mean, 0.0, error, STANDARD_ERRORS)
}

/// Gaps `E[y] − E[x]` and `E[z] − E[y]` over `trials` pixels of `x`, with
/// `y = x + n_o` and `z = y + n_s`; each passes within three standard errors.
pub fn verify_expectation_chain<R: Rng + ?Sized>(
    x: &ImageBuffer,
    spec: &NoiseSpec,
    trials: usize,
    rng: &mut R,
) -> Result<Vec<TheoryRow>, TheoryError> {
    check_trials(trials)?;
    spec.validate()?;
    let mut d_obs = Vec::with_capacity(trials);
    let mut d_sim = Vec::with_capacity(trials);
    let clean = x.clone().with_role(Role::Clean);
    while d_obs.len() < trials {
        let y = noise::make_observed(&clean, spec, rng)?;
        let z = noise::make_simulated(&y, spec, rng)?;
        d_obs.extend(y.data().iter().zip(clean.data()).map(|(a, b)| a - b));
        d_sim.extend(z.data().iter().zip(y.data()).map(|(a, b)| a - b));
    }
    d_obs.truncate(trials);
    d_sim.truncate(trials);
    let level = spec.observed_level();
    let label = match (level.sigma, level.lambda) {
        (s, Some(l)) if s > 0.0 => format!("sigma={s} lambda={l}"),
        (_, Some(l)) => format!("lambda={l}"),
        (s, None) => format!("sigma={s}"),
    };
    Ok(vec![
        gap_row(&format!("expectation {label}: E[y] - E[x]"), &d_obs),
        gap_row(&format!("expectation {label}: E[z] - E[y]"), &d_sim),
    ])
}

/// Empirical `Var(n_o + n_s)` against the predicted sum. Gaussian pairs are
/// correlated through the Cholesky factor of their 2×2 covariance; Poisson
/// components are independent. The relative error is taken against the
/// prediction, or against `σ_o² + σ_s²` when the prediction is zero.
pub fn verify_additivity<R: Rng + ?Sized>(spec: &TheoryTrialSpec, rng: &mut R) -> Result<TheoryRow, TheoryError> {
    spec.validate()?;
    let base = ImageBuffer::filled(Role::Clean, 1, 1, 1, spec.level.clamp(0.0, 255.0)).expect("single pixel");
    let (so, ss, rho) = (spec.sigma_o, spec.sigma_s, spec.rho);
    let tail = (1.0 - rho * rho).max(0.0).sqrt();
    let mut sums = Vec::with_capacity(spec.trials);
    let poisson = |lambda: Option<f64>, rng: &mut R| -> Result<f64, TheoryError> {
        Ok(match lambda {
            Some(l) => noise::sample_poisson_noise(&base, l, rng)?[0],
            None => 0.0,
        })
    };
    for _ in 0..spec.trials {
        let e1: f64 = StandardNormal.sample(rng);
        let e2: f64 = StandardNormal.sample(rng);
        let n_o = so * e1 + poisson(spec.lambda_o, rng)?;
        let n_s = ss * (rho * e1 + tail * e2) + poisson(spec.lambda_s, rng)?;
        sums.push(n_o + n_s);
    }
    let (_, var, _) = moments(sums.into_iter());
    let predicted = spec.predicted_variance();
    let scale = if predicted > 0.0 { predicted } else { so * so + ss * ss };
    let error = if scale > 0.0 { (var - predicted).abs() / scale } else { var.abs() };
    let mut claim = format!("additivity: rho={} so={} ss={}", rho, so, ss);
    if let (Some(lo), Some(ls)) = (spec.lambda_o, spec.lambda_s) {
        claim += &format!(" lo={lo} ls={ls}");
    }
    Ok(TheoryRow::new(claim, var, predicted, error, VARIANCE_TOLERANCE))
}

/// The default verification suite: weak noise on `image` at σ = 5, the
/// expectation chain at σ = 10 and λ = 25 on a constant 128 image, additivity
/// over ρ ∈ {−1, 0, 0.5, 1} × σ_o, σ_s ∈ {5, 25}, and Poisson and mixed
/// additivity at λ = 25. Every block uses its own random stream.
pub fn run_suite(image: &ImageBuffer, trials: usize, threshold: f64, seed: u64) -> Result<TheoryReport, TheoryError> {
    check_trials(trials)?;
    let mut block = 0u64;
    let mut next = || {
        block += 1;
        rng::stream(seed, block, Purpose::Trials)
    };
    let mut rows = verify_weak_noise(image, &NoiseSpec::gaussian(5.0), trials, threshold, &mut next())?;
    let flat = ImageBuffer::filled(Role::Clean, 1, 100, 100, 128.0).expect("valid");
    rows.extend(verify_expectation_chain(&flat, &NoiseSpec::gaussian(10.0), trials, &mut next())?);
    rows.extend(verify_expectation_chain(&flat, &NoiseSpec::poisson(25.0), trials, &mut next())?);
    for rho in [-1.0, 0.0, 0.5, 1.0] {
        for so in [5.0, 25.0] {
            for ss in [5.0, 25.0] {
                let spec = TheoryTrialSpec {
                    trials,
                    ..TheoryTrialSpec::gaussian(so, ss, rho)
                };
                rows.push(verify_additivity(&spec, &mut next())?);
            }
        }
    }
    for sigma in [0.0, 10.0] {
        let spec = TheoryTrialSpec {
            trials,
            lambda_o: Some(25.0),
            lambda_s: Some(25.0),
            ..TheoryTrialSpec::gaussian(sigma, sigma, 0.0)
        };
        rows.push(verify_additivity(&spec, &mut next())?);
    }
    Ok(TheoryReport {
        rows,
        seed,
        trials,
        weak_noise_threshold: threshold,
    })
}
