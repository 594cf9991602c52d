use nac_core::desk::desk_set;
use nac_core::image::{ImageBuffer, Role};
use nac_core::noise::NoiseSpec;
use nac_core::rng::{self, Purpose};
use nac_core::theory::{run_suite, verify_additivity, verify_expectation_chain, TheoryTrialSpec, MIN_TRIALS};

#[test]
fn default_suite_passes_and_contains_the_grid() {
    let image = desk_set().swap_remove(0).1;
    let report = run_suite(&image, 1_000_000, 10.0, 0).unwrap();
    assert!(report.all_pass(), "{}", report.table());
    let additivity: Vec<_> = report.rows.iter().filter(|r| r.claim.starts_with("additivity")).collect();
    assert_eq!(additivity.len(), 16 + 2);
    let full = report
        .rows
        .iter()
        .find(|r| r.claim == "additivity: rho=1 so=25 ss=25")
        .unwrap();
    assert_eq!(full.predicted, 2500.0);
}

#[test]
fn reports_are_deterministic() {
    let image = desk_set().swap_remove(1).1;
    let a = run_suite(&image, MIN_TRIALS, 10.0, 9).unwrap();
    let b = run_suite(&image, MIN_TRIALS, 10.0, 9).unwrap();
    assert_eq!(a, b);
    assert!(run_suite(&image, MIN_TRIALS - 1, 10.0, 9).is_err());
}

#[test]
fn predicted_rows_for_named_cases() {
    let mut rng = rng::stream(0, 0, Purpose::Trials);
    let cases = [
        (TheoryTrialSpec::gaussian(10.0, 10.0, 0.0), 200.0),
        (TheoryTrialSpec::gaussian(10.0, 10.0, 1.0), 400.0),
        (
            TheoryTrialSpec {
                lambda_o: Some(25.0),
                lambda_s: Some(25.0),
                level: 128.0,
                ..TheoryTrialSpec::gaussian(0.0, 0.0, 0.0)
            },
            2.0 * 255.0 * 128.0 / 25.0,
        ),
    ];
    for (spec, predicted) in cases {
        let row = verify_additivity(&spec, &mut rng).unwrap();
        assert!((row.predicted - predicted).abs() < 1e-9);
        assert!(row.pass, "{row:?}");
    }
}

/// Root mean square of the gap estimates over several seeds.
fn rms_gap(trials: usize, spec: &NoiseSpec) -> f64 {
    let flat = ImageBuffer::filled(Role::Clean, 1, 100, 100, 128.0).unwrap();
    let seeds = 12;
    let total: f64 = (0..seeds)
        .map(|s| {
            let rows = verify_expectation_chain(&flat, spec, trials, &mut rng::stream(s, 7, Purpose::Trials)).unwrap();
            rows[0].estimate.powi(2)
        })
        .sum();
    (total / seeds as f64).sqrt()
}

#[test]
fn gaps_shrink_with_the_square_root_of_trials() {
    let spec = NoiseSpec::gaussian(10.0);
    let ratio = rms_gap(10_000, &spec) / rms_gap(1_000_000, &spec);
    // Expected 10; with 12 seeds the RMS ratio stays within a factor of two.
    assert!((5.0..20.0).contains(&ratio), "{ratio}");
}

#[test]
fn zero_noise_gaps_vanish_and_poisson_chain_is_unbiased() {
    let flat = ImageBuffer::filled(Role::Clean, 1, 100, 100, 128.0).unwrap();
    let mut rng = rng::stream(1, 0, Purpose::Trials);
    for row in verify_expectation_chain(&flat, &NoiseSpec::gaussian(0.0), MIN_TRIALS, &mut rng).unwrap() {
        assert_eq!(row.estimate, 0.0);
    }
    for row in verify_expectation_chain(&flat, &NoiseSpec::poisson(25.0), 1_000_000, &mut rng).unwrap() {
        assert!(row.estimate.abs() < 0.2, "{row:?}");
    }
}
