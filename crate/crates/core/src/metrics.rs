//! PSNR, SSIM and the evaluation report.
//!
//! Both metrics clip their inputs to `[0, 255]` first and do not quantise to
//! integers. Clipping shifts PSNR by a few hundredths of a dB on noisy images
//! with near-black or near-white pixels.

use std::io::Write;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::image::{ImageBuffer, ImageBufferError};

/// PSNR reported for identical images, and the ceiling for all PSNR values.
pub const PSNR_CAP: f64 = 99.0;
pub const PEAK: f64 = 255.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error(transparent)]
    Shape(#[from] ImageBufferError),
    #[error("SSIM needs images of at least {window}x{window}, got {height}x{width}")]
    TooSmall { window: usize, height: usize, width: usize },
    #[error("writing report: {0}")]
    Io(#[from] std::io::Error),
    #[error("writing report: {0}")]
    Csv(#[from] csv::Error),
    #[error("writing report: {0}")]
    Json(#[from] serde_json::Error),
}

/// Peak signal-to-noise ratio in dB at peak 255, capped at [`PSNR_CAP`].
/// Colour images use one mean squared error over all channels.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, MetricError> {
    psnr_with_peak(a, b, PEAK)
}

pub fn psnr_with_peak(a: &ImageBuffer, b: &ImageBuffer, peak: f64) -> Result<f64, MetricError> {
    a.require_same_dims(b)?;
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.clamp(0.0, 255.0) - y.clamp(0.0, 255.0);
            d * d
        })
        .sum();
    let mse = sse / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - c;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Separable Gaussian filter over every full window position.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let s = &src[y * w + x..][..SSIM_WINDOW];
            rows[y * ow + x] = s.iter().zip(taps).map(|(v, t)| v * t).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| rows[(y + k) * ow + x] * taps[k]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> f64 {
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let product = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, taps);
    let mu_b = filter_valid(b, h, w, taps);
    let aa = filter_valid(&product(a, a), h, w, taps);
    let bb = filter_valid(&product(b, b), h, w, taps);
    let ab = filter_valid(&product(a, b), h, w, taps);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = aa[i] - ma * ma;
        let var_b = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
    total / n as f64
}

/// Mean local SSIM over all full 11×11 Gaussian windows (σ = 1.5, K1 = 0.01,
/// K2 = 0.03, range 255). Colour images average the per-channel values.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, MetricError> {
    a.require_same_dims(b)?;
    let (c, h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricError::TooSmall {
            window: SSIM_WINDOW,
            height: h,
            width: w,
        });
    }
    let taps = gaussian_taps();
    let (ca, cb) = (a.clipped(), b.clipped());
    let plane = h * w;
    let sum: f64 = (0..c)
        .map(|k| ssim_plane(&ca[k * plane..][..plane], &cb[k * plane..][..plane], h, w, &taps))
        .sum();
    Ok(sum / c as f64)
}

/// Hex SHA-256 of the JSON form of `value`.
pub fn digest<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config types serialise");
    hex::encode(Sha256::digest(json))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub id: String,
    pub sigma: f64,
    pub lambda: Option<f64>,
    /// PSNR of the observed image against the clean one.
    pub noisy_psnr: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ReportRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Per-image rows plus means over the images that succeeded.
///
/// Wall-clock time is kept in memory only so that serialised reports are
/// byte-identical across reruns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_noisy_psnr: f64,
    pub seed: u64,
    pub config_digest: String,
    #[serde(skip)]
    pub wall_clock: Duration,
}

impl EvalReport {
    pub fn new(rows: Vec<ReportRow>, seed: u64, config_digest: String) -> Self {
        let ok: Vec<&ReportRow> = rows.iter().filter(|r| !r.failed()).collect();
        let mean = |f: fn(&ReportRow) -> Option<f64>| {
            let vals: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
            if vals.is_empty() {
                f64::NAN
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        };
        Self {
            mean_psnr: mean(|r| r.psnr),
            mean_ssim: mean(|r| r.ssim),
            mean_noisy_psnr: mean(|r| r.noisy_psnr),
            rows,
            seed,
            config_digest,
            wall_clock: Duration::ZERO,
        }
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.failed()).count()
    }

    pub fn to_json(&self) -> Result<String, MetricError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One line per image then a `mean` row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), MetricError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", "sigma", "lambda", "noisy_psnr", "psnr", "ssim"])?;
        let num = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.id.clone(),
                r.sigma.to_string(),
                num(r.lambda),
                num(r.noisy_psnr),
                num(r.psnr),
                num(r.ssim),
            ])?;
        }
        w.write_record([
            "mean".to_string(),
            String::new(),
            String::new(),
            self.mean_noisy_psnr.to_string(),
            self.mean_psnr.to_string(),
            self.mean_ssim.to_string(),
        ])?;
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Role;

    fn img(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> ImageBuffer {
        let data = (0..h * w).map(|i| f(i / w, i % w)).collect();
        ImageBuffer::gray(Role::Clean, h, w, data).unwrap()
    }

    #[test]
    fn psnr_identical_is_capped() {
        let a = img(8, 8, |y, x| (y * 8 + x) as f64);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
    }

    #[test]
    fn psnr_constant_offset_closed_form() {
        let a = img(16, 16, |y, x| 100.0 + (y + x) as f64);
        let b = img(16, 16, |y, x| 115.0 + (y + x) as f64);
        let expected = 20.0 * (255.0f64 / 15.0).log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-3);
        assert!((expected - 24.6090).abs() < 1e-3);
    }

    #[test]
    fn psnr_clips_before_comparing() {
        let a = img(8, 8, |_, _| 255.0);
        let b = img(8, 8, |_, _| 300.0);
        assert_eq!(psnr(&a, &b).unwrap(), PSNR_CAP);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = img(10, 20, |_, _| 1.0);
        assert!(matches!(ssim(&a, &a), Err(MetricError::TooSmall { .. })));
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let a = img(32, 32, |y, x| if (y / 8 + x / 8) % 2 == 0 { 30.0 } else { 220.0 });
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let inv = img(32, 32, |y, x| 255.0 - a.at(0, y, x));
        assert!(ssim(&a, &inv).unwrap() < 0.5);
    }

    #[test]
    fn report_aggregates_successful_rows() {
        let row = |id: &str, p: f64, err: Option<&str>| ReportRow {
            id: id.into(),
            sigma: 10.0,
            lambda: None,
            noisy_psnr: Some(28.0),
            psnr: Some(p),
            ssim: Some(0.5),
            error: err.map(Into::into),
        };
        let report = EvalReport::new(vec![row("a", 30.0, None), row("b", 32.0, None), row("c", 0.0, Some("boom"))], 1, "d".into());
        assert_eq!(report.mean_psnr, 31.0);
        assert_eq!(report.failures(), 1);
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().last().unwrap().starts_with("mean,"));
        let json = report.to_json().unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
