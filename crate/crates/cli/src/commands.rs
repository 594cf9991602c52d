use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nac_core::gradcheck;
use nac_core::image::{ImageBuffer, Role};
use nac_core::io;
use nac_core::metrics::{self, EvalReport, ReportRow};
use nac_core::pipeline::{self, ExperimentOptions, TrainingRecord};
use nac_core::{desk, theory};
use serde::Serialize;

use crate::config::{level_spec, RunConfig};
use crate::CliError;

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn write_curve(path: &Path, record: &TrainingRecord) -> Result<(), CliError> {
    let mut buf = Vec::new();
    record.write_csv(&mut buf)?;
    write_file(path, &buf)
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    run_id: String,
    config_digest: String,
    config: &'a RunConfig,
    #[serde(flatten)]
    payload: T,
}

fn write_report<T: Serialize>(cfg: &RunConfig, dir: &Path, payload: T) -> Result<(), CliError> {
    let envelope = Envelope {
        run_id: cfg.run_id(),
        config_digest: cfg.digest(),
        config: cfg,
        payload,
    };
    let mut json = serde_json::to_string_pretty(&envelope).map_err(metrics::MetricError::from)?;
    json.push('\n');
    write_file(&dir.join("report.json"), json.as_bytes())
}

fn image_extension(img: &ImageBuffer) -> &'static str {
    if img.channels() == 3 {
        "ppm"
    } else {
        "pgm"
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .to_string()
}

fn run_dirs(cfg: &RunConfig) -> Result<(PathBuf, PathBuf, PathBuf), CliError> {
    let dir = cfg.run_dir();
    let (denoised, curves) = (dir.join("denoised"), dir.join("curves"));
    create_dir(&denoised)?;
    create_dir(&curves)?;
    Ok((dir, denoised, curves))
}

#[derive(Serialize)]
struct DenoisePayload {
    report: EvalReport,
}

pub fn denoise(cfg: &RunConfig, out: &mut dyn Write) -> Result<PathBuf, CliError> {
    let x = cfg.load_input()?;
    let id = stem(cfg.input.as_deref().expect("validated"));
    let level = cfg.noise.observed_level();
    let mut row = ReportRow {
        id: id.clone(),
        sigma: level.sigma,
        lambda: level.lambda,
        noisy_psnr: None,
        psnr: None,
        ssim: None,
        error: None,
    };
    let (denoised, record) = if cfg.synthesis {
        let (y, d, record) = pipeline::run_image(0, &x, &cfg.noise, &cfg.network, &cfg.train, cfg.method)?;
        row.noisy_psnr = Some(metrics::psnr(&y, &x)?);
        row.psnr = Some(metrics::psnr(&d, &x)?);
        row.ssim = Some(metrics::ssim(&d, &x)?);
        (d, record)
    } else {
        let y = x.with_role(Role::Observed).with_noise(level);
        let (mut net, record) = pipeline::train_nac(&y, &cfg.noise, &cfg.network, &cfg.train)?;
        (pipeline::denoise(&mut net, &y)?, record)
    };
    let (dir, denoised_dir, curves_dir) = run_dirs(cfg)?;
    io::save_image(&denoised, denoised_dir.join(format!("{id}.{}", image_extension(&denoised))))?;
    write_curve(&curves_dir.join(format!("{id}.csv")), &record)?;
    let report = EvalReport::new(vec![row], cfg.train.seed, cfg.digest());
    if let (Some(noisy), Some(psnr)) = (report.rows[0].noisy_psnr, report.rows[0].psnr) {
        writeln!(out, "{id}: noisy {noisy:.2} dB -> denoised {psnr:.2} dB, SSIM {:.4}", report.mean_ssim).map_err(CliError::Console)?;
    } else {
        writeln!(out, "{id}: denoised without a clean reference").map_err(CliError::Console)?;
    }
    write_report(cfg, &dir, DenoisePayload { report })?;
    writeln!(out, "{}", dir.display()).map_err(CliError::Console)?;
    Ok(dir)
}

#[derive(Serialize)]
struct LevelResult {
    level: f64,
    report: EvalReport,
}

#[derive(Serialize)]
struct BenchmarkPayload {
    levels: Vec<LevelResult>,
}

pub fn benchmark(cfg: &RunConfig, out: &mut dyn Write) -> Result<PathBuf, CliError> {
    let dataset = cfg.load_dataset()?;
    let (dir, denoised_dir, curves_dir) = run_dirs(cfg)?;
    let options = ExperimentOptions {
        method: cfg.method,
        config_digest: Some(cfg.digest()),
    };
    let mut table = String::from("level,psnr,ssim,noisy_psnr,failures\n");
    let mut levels = Vec::new();
    for &level in &cfg.levels {
        let spec = level_spec(&cfg.noise, level);
        let output = pipeline::run_experiment(&dataset, &spec, &cfg.network, &cfg.train, &options)?;
        for outcome in &output.outcomes {
            let name = format!("{}_{level}", outcome.row.id);
            if let Some(d) = &outcome.denoised {
                io::save_image(d, denoised_dir.join(format!("{name}.{}", image_extension(d))))?;
            }
            if let Some(record) = &outcome.record {
                write_curve(&curves_dir.join(format!("{name}.csv")), record)?;
            }
        }
        let r = &output.report;
        table.push_str(&format!(
            "{level},{:.4},{:.6},{:.4},{}\n",
            r.mean_psnr,
            r.mean_ssim,
            r.mean_noisy_psnr,
            r.failures()
        ));
        writeln!(out, 
            "level {level}: PSNR {:.2} dB (noisy {:.2} dB), SSIM {:.4}, {} failed",
            r.mean_psnr,
            r.mean_noisy_psnr,
            r.mean_ssim,
            r.failures()
        ).map_err(CliError::Console)?;
        levels.push(LevelResult {
            level,
            report: output.report,
        });
    }
    write_file(&dir.join("benchmark.csv"), table.as_bytes())?;
    let failures: usize = levels.iter().map(|l| l.report.failures()).sum();
    write_report(cfg, &dir, BenchmarkPayload { levels })?;
    writeln!(out, "{}", dir.display()).map_err(CliError::Console)?;
    if failures > 0 {
        return Err(CliError::RunsFailed(format!("{failures} image runs failed; see report.json")));
    }
    Ok(dir)
}

pub fn verify_theory(cfg: &RunConfig, out: &mut dyn Write) -> Result<PathBuf, CliError> {
    let image = match &cfg.input {
        Some(_) => io::to_gray(&cfg.load_input()?),
        None => desk::desk_set().swap_remove(0).1,
    };
    let report = theory::run_suite(&image, cfg.trials, cfg.threshold, cfg.train.seed)?;
    write!(out, "{}", report.table()).map_err(CliError::Console)?;
    let dir = cfg.run_dir();
    create_dir(&dir)?;
    let pass = report.all_pass();
    write_report(cfg, &dir, report)?;
    writeln!(out, "{}", dir.display()).map_err(CliError::Console)?;
    if !pass {
        return Err(CliError::Failed("at least one theory check failed".into()));
    }
    Ok(dir)
}

pub fn gradcheck(cfg: &RunConfig, out: &mut dyn Write) -> Result<PathBuf, CliError> {
    let report = gradcheck::run(&cfg.gradcheck)?;
    for row in &report.rows {
        writeln!(out, 
            "{:<16} {:>3} checks  worst relative error {:.3e}  {}",
            serde_json::to_value(row.target)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            row.checks,
            row.worst_relative_error,
            if row.pass { "pass" } else { "FAIL" }
        ).map_err(CliError::Console)?;
    }
    writeln!(out, "worst relative error {:.3e} (tolerance {:.0e})", report.worst_relative_error, report.tolerance).map_err(CliError::Console)?;
    let dir = cfg.run_dir();
    create_dir(&dir)?;
    let pass = report.pass();
    write_report(cfg, &dir, report)?;
    writeln!(out, "{}", dir.display()).map_err(CliError::Console)?;
    if !pass {
        return Err(CliError::Failed("gradient check exceeded tolerance".into()));
    }
    Ok(dir)
}
