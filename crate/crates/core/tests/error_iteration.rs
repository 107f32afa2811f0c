use mismatch_core::matched::{error_iteration, initialize_recv_y0, matched_solution, MatchedSolveConfig};
use mismatch_core::sim::{derive_rng, generate_system, smooth_image, SystemSpec, STREAM_TARGETS};
use mismatch_core::{Error, Image, LinearOperator, Real};

const M: usize = 32;
const W: usize = 16;
const H: usize = 8;

fn target<T: Real>(seed: u64) -> Image<T> {
    smooth_image(W, H, &mut derive_rng(seed, STREAM_TARGETS)).unwrap()
}

/// PM = c·x gives k(x) = 1/c exactly.
fn scale_for(factor: f64) -> f64 {
    1.0 / (1.0 - factor)
}

#[test]
fn residual_shrinks_geometrically() {
    for &(factor, seed) in &[(0.0, 1u64), (0.25, 2), (0.5, 3), (-0.5, 4)] {
        let (a, mut oracle) = generate_system::<f64>(&SystemSpec::new(M, W * H, seed, 0.0)).unwrap();
        let x = target::<f64>(seed);
        let cfg = MatchedSolveConfig::new(x.scaled(scale_for(factor))).with_epochs(30);
        let mut session = oracle.session(x).unwrap();
        let y = session.measure_target();
        let (_, trace) = error_iteration(&mut session, &y, &a, &cfg).unwrap();
        let y2 = y.norm2();
        assert!((trace.convergence_factor - factor.abs()).abs() < 1e-9);
        for r in &trace.records {
            let want = factor.abs().powi(r.iteration as i32) * y2;
            if factor == 0.0 {
                assert!(r.error_2 <= 1e-12 * y2);
            } else {
                assert!((r.error_2 - want).abs() <= 1e-6 * want, "k={factor} it={} got {} want {want}", r.iteration, r.error_2);
            }
        }
        assert!(trace.final_error_2() < 1e-6 * y2);
    }
}

#[test]
fn one_measurement_matches_full_iteration() {
    for seed in 0..5u64 {
        let (a, mut oracle) = generate_system::<f64>(&SystemSpec::new(M, W * H, seed, 0.0)).unwrap();
        let x = target::<f64>(seed);
        let cfg = MatchedSolveConfig::new(x.scaled(1.6)).with_epochs(20);
        let mut session = oracle.session(x).unwrap();
        let y = session.measure_target();
        let before = session.call_count();
        let (_, t1) = error_iteration(&mut session, &y, &a, &cfg).unwrap();
        assert_eq!(session.call_count() - before, 20);
        assert_eq!(t1.records.last().unwrap().oracle_calls, 20);
        let before = session.call_count();
        let (recv, t2) = matched_solution(&mut session, &y, &a, &cfg).unwrap();
        assert_eq!(session.call_count() - before, 1);
        assert!(t2.records.iter().all(|r| r.oracle_calls == 1));
        assert_eq!(t1.len(), t2.len());
        for (u, v) in t1.normalized().iter().zip(t2.normalized()) {
            assert!((u - v).abs() <= 1e-6 * u.abs(), "{u} vs {v}");
        }
        let resid = (recv.apply(session.target_for_verification().pixels()) - y.values()).amax();
        assert!(resid < 1e-6 * y.norm_inf());
    }
}

#[test]
fn pre_measure_initialization_in_single_precision() {
    let (a, _) = generate_system::<f32>(&SystemSpec::new(64, 256, 9, 0.0)).unwrap();
    let pm = Image::from_vector(nalgebra::DVector::from_element(256, 0.5f32)).unwrap();
    let init = initialize_recv_y0(&a, &MatchedSolveConfig::new(pm.clone()).with_epochs(5)).unwrap();
    let y0 = a.measure(&pm);
    let r = (y0.values() - init.recv.apply(pm.pixels())).amax();
    assert!((r as f64) <= 1e-5 * y0.norm_inf(), "{r}");
    assert!(init.residuals[0] <= 1e-5 * y0.norm_inf());
}

#[test]
fn anti_aligned_pre_measure_diverges() {
    let (a, mut oracle) = generate_system::<f64>(&SystemSpec::new(M, W * H, 5, 0.0)).unwrap();
    let x = target::<f64>(5);
    // k = -1, so every step doubles the residual
    let cfg = MatchedSolveConfig::new(x.scaled(-1.0)).with_epochs(30);
    let mut session = oracle.session(x).unwrap();
    let y = session.measure_target();
    match error_iteration(&mut session, &y, &a, &cfg) {
        Err(Error::Divergence { iteration, .. }) => assert!(iteration <= 11),
        other => panic!("expected divergence, got {other:?}"),
    }
}
