mod common;

use common::checks;
use common::{brute_force_eer, eer_bracket, pca_eigenvalues_oracle};
use ecg_auth_core::evaluation::compute_eer;
use ecg_auth_core::features::fit_matrix;
use ndarray::Array2;
use proptest::prelude::*;

#[test]
fn eer_agrees_with_threshold_sweep() {
    let worst = checks::eer_worst_scaled_gap(1000, 1);
    assert!(worst <= 1.0, "scaled gap {worst}");
}

#[test]
fn svm_dual_objective_agrees_with_active_set_enumeration() {
    let worst = checks::svm_worst_dual_gap(200, 2);
    assert!(worst <= 1e-4, "dual gap {worst}");
}

#[test]
fn pca_eigenvalues_agree_with_nalgebra() {
    let worst = checks::pca_worst_eigen_gap(100, 3);
    assert!(worst <= 1e-8, "eigenvalue gap {worst}");
}

#[test]
fn logistic_gradient_agrees_with_finite_differences() {
    let worst = checks::logistic_worst_relative_gradient_error(200, 4);
    assert!(worst <= 1e-5, "relative error {worst}");
}

#[test]
fn perfectly_separated_scores_have_zero_eer() {
    let genuine = [0.9, 0.8, 0.95];
    let impostor = [0.1, 0.2, 0.3, 0.4];
    assert_eq!(brute_force_eer(&genuine, &impostor), 0.0);
    assert_eq!(compute_eer(&genuine, &impostor).unwrap().eer, 0.0);
}

#[test]
fn pca_on_a_rank_one_matrix_has_one_nonzero_eigenvalue() {
    let x = Array2::from_shape_fn((10, 3), |(i, j)| (i as f64 + 1.0) * [1.0, -2.0, 0.5][j] + [3.0, 0.0, 1.0][j]);
    let oracle = pca_eigenvalues_oracle(&x);
    let fit = fit_matrix(&x, 1).unwrap();
    assert!((fit.model.explained_variance[0] - oracle[0]).abs() < 1e-10);
    assert!((oracle[0] - 3.0).abs() < 1e-10);
}

proptest! {
    #[test]
    fn eer_within_one_step_of_sweep(
        genuine in prop::collection::vec(-3.0..3.0f64, 1..40),
        impostor in prop::collection::vec(-3.0..3.0f64, 1..40),
    ) {
        let ours = compute_eer(&genuine, &impostor).unwrap().eer;
        let oracle = brute_force_eer(&genuine, &impostor);
        prop_assert!((ours - oracle).abs() <= 1.0 / genuine.len().min(impostor.len()) as f64 + 1e-12);
    }

    #[test]
    fn eer_with_ties_stays_inside_the_sweep_bracket(
        genuine in prop::collection::vec(0u8..5, 1..40),
        impostor in prop::collection::vec(0u8..5, 1..40),
    ) {
        let g: Vec<f64> = genuine.iter().map(|&v| v as f64).collect();
        let i: Vec<f64> = impostor.iter().map(|&v| v as f64).collect();
        let ours = compute_eer(&g, &i).unwrap().eer;
        let (lo, hi) = eer_bracket(&g, &i);
        prop_assert!(lo - 1e-12 <= ours && ours <= hi + 1e-12, "{ours} not in [{lo}, {hi}]");
    }

    #[test]
    fn eer_is_invariant_to_monotone_score_maps(
        genuine in prop::collection::vec(-3.0..3.0f64, 1..30),
        impostor in prop::collection::vec(-3.0..3.0f64, 1..30),
    ) {
        let a = compute_eer(&genuine, &impostor).unwrap().eer;
        let map = |v: &Vec<f64>| v.iter().map(|s| s.exp()).collect::<Vec<_>>();
        let b = compute_eer(&map(&genuine), &map(&impostor)).unwrap().eer;
        prop_assert!((a - b).abs() < 1e-12);
    }
}
