mod common;

use common::*;
use ndarray::array;

#[test]
fn hungarian_small_cases() {
    let cost = array![[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]];
    let a = hungarian(&cost);
    let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
    assert_eq!(total, 5.0);
}

#[test]
fn ari_identical_and_relabelled() {
    assert!((adjusted_rand_index(&[0, 0, 1, 1, 2], &[2, 2, 0, 0, 1]) - 1.0).abs() < 1e-12);
    assert!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]) < 0.0);
}

#[test]
fn transport_lp_on_permutation_problem() {
    let cost = array![[1.0, 5.0], [4.0, 2.0]];
    assert!((uniform_transport_lp(&cost) - 1.5).abs() < 1e-12);
    let cost = array![[0.0, 1.0, 2.0]];
    assert!((uniform_transport_lp(&cost) - 1.0).abs() < 1e-12);
}
