use mismatch_core::calibration::{calibrate, CalibrationConfig};
use mismatch_core::diagnostics::{lambda_vector, noise_limit_stats, LambdaVerdict, NoiseLimitConfig};
use mismatch_core::matched::{matched_solution, MatchedSolveConfig};
use mismatch_core::sim::{derive_rng, generate_system, smooth_image, SystemSpec, STREAM_TARGETS};

#[test]
fn stationary_statistics_follow_the_recurrence() {
    for (i, &k) in [0.0, 0.3, 0.6].iter().enumerate() {
        let s = noise_limit_stats(&NoiseLimitConfig {
            k_eps: k,
            sigma: 1.0,
            mu: 0.25,
            trials: 10_000,
            burn_in: 200,
            seed: 40 + i as u64,
        })
        .unwrap();
        assert!((s.empirical_mean - 0.25).abs() <= 3.0 * s.mean_standard_error, "{s:?}");
        assert!((s.empirical_variance - s.ar1_variance).abs() <= 3.0 * s.variance_standard_error, "{s:?}");
        assert_eq!(s.stated_variance_rejected, k != 0.0);
    }
}

#[test]
fn matched_lambda_is_flat_and_calibrated_is_not() {
    let (a, mut oracle) = generate_system::<f64>(&SystemSpec::new(32, 128, 7, 0.0)).unwrap();
    let mut rng = derive_rng(7, STREAM_TARGETS);
    let x = smooth_image::<f64>(16, 8, &mut rng).unwrap();
    let xp = smooth_image::<f64>(16, 8, &mut rng).unwrap();
    let cfg = MatchedSolveConfig::new(x.scaled(1.5));
    let matched = {
        let mut session = oracle.session(x.clone()).unwrap();
        let y = session.measure_target();
        matched_solution(&mut session, &y, &a, &cfg).unwrap().0
    };
    let (calibrated, _) = calibrate(&mut oracle, &a, &CalibrationConfig::default()).unwrap();
    let lm = lambda_vector(&matched, &x, &xp).unwrap();
    let lc = lambda_vector(&calibrated, &x, &xp).unwrap();
    assert_eq!(lm.verdict, LambdaVerdict::ConstantLike);
    assert_eq!(lc.verdict, LambdaVerdict::Fluctuating);
    assert!(lm.coefficient_of_variation <= 1e-6);
    assert!(lc.coefficient_of_variation >= 1e3 * lm.coefficient_of_variation);
}
