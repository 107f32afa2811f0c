use mismatch_core::calibration::{
    aligned_slots, calibrate, calibration_sigma, cross_coefficients, orthonormal_basis,
    premeasure_basis, CalibrationConfig,
};
use mismatch_core::sim::{derive_rng, gaussian_vector, generate_system, sparse_image, SystemSpec};
use mismatch_core::{Image, LinearOperator};
use nalgebra::DMatrix;

#[test]
fn calibration_condition_holds() {
    let (a, _) = generate_system::<f64>(&SystemSpec::new(32, 128, 1, 0.0)).unwrap();
    let basis = orthonormal_basis(&a).unwrap();
    let pm = premeasure_basis(&a, &basis).unwrap();
    let sigma = calibration_sigma(&pm).unwrap();
    let ysy = pm.y() * sigma.entries() * pm.y().transpose();
    assert!((ysy - DMatrix::identity(32, 32)).amax() <= 1e-8);
    let k = cross_coefficients(&pm, &sigma).unwrap();
    assert!((k - DMatrix::identity(32, 32)).amax() <= 1e-8);
}

#[test]
fn calibrated_matrix_agrees_with_unknown_on_span() {
    let (a, mut oracle) = generate_system::<f64>(&SystemSpec::new(32, 128, 2, 0.0)).unwrap();
    let (recv, report) = calibrate(&mut oracle, &a, &CalibrationConfig::default()).unwrap();
    assert_eq!(report.oracle_calls, 32);
    assert_eq!(oracle.call_count(), 32);
    assert!(report.orthonormality_residual < 1e-10);
    assert!(report.max_offdiag_k < 1e-8);
    let q = report.basis.q();
    let a_u = oracle.unknown_matrix_for_verification().entries().clone();
    let mut rng = derive_rng(2, 20);
    for _ in 0..20 {
        let x = q * gaussian_vector::<f64>(32, 1.0, &mut rng);
        let want = &a_u * &x;
        let err = (recv.apply(&x) - &want).amax();
        assert!(err <= 1e-6 * want.amax(), "{err}");
    }
}

#[test]
fn substituted_images_join_the_span() {
    let (a, mut oracle) = generate_system::<f64>(&SystemSpec::new(32, 128, 3, 0.0)).unwrap();
    let mut rng = derive_rng(3, 21);
    let images: Vec<Image<f64>> = (0..3).map(|_| sparse_image(128, 1, 5, &mut rng).unwrap()).collect();
    let cfg = CalibrationConfig {
        span_images: images.clone(),
        ..Default::default()
    };
    let (recv, report) = calibrate(&mut oracle, &a, &cfg).unwrap();
    assert!(report.orthonormality_residual > 0.0);
    let a_u = oracle.unknown_matrix_for_verification();
    for x in &images {
        let want = a_u.measure(x);
        let err = (recv.apply(x.pixels()) - want.values()).amax();
        assert!(err <= 1e-6 * want.norm_inf());
    }
}

#[test]
fn slots_are_distinct_and_avoid_taken_columns() {
    let (a, _) = generate_system::<f64>(&SystemSpec::new(16, 64, 4, 0.0)).unwrap();
    let basis = orthonormal_basis(&a).unwrap();
    // an image equal to basis column 5 must land in slot 5 unless taken
    let col5 = Image::from_vector(basis.column(5)).unwrap();
    assert_eq!(aligned_slots(&basis, &[&col5], &[]).unwrap(), vec![5]);
    let slots = aligned_slots(&basis, &[&col5, &col5], &[5]).unwrap();
    assert!(!slots.contains(&5));
    assert_ne!(slots[0], slots[1]);
    let too_many: Vec<&Image<f64>> = std::iter::repeat(&col5).take(17).collect();
    assert!(aligned_slots(&basis, &too_many, &[]).is_err());
}
