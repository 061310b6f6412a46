mod common;

use common::*;

#[test]
fn conv1d_matches_finite_differences() {
    for seed in 0..5 {
        let e = conv_fd_error(seed);
        assert!(e < FD_TOLERANCE, "seed {seed}: {e}");
    }
}

#[test]
fn lstm_matches_finite_differences() {
    for seed in 0..5 {
        let e = lstm_fd_error(seed);
        assert!(e < FD_TOLERANCE, "seed {seed}: {e}");
    }
}

#[test]
fn dense_matches_finite_differences() {
    for seed in 0..5 {
        let e = dense_fd_error(seed);
        assert!(e < FD_TOLERANCE, "seed {seed}: {e}");
    }
}

#[test]
fn mse_with_l1_matches_finite_differences() {
    for seed in 0..5 {
        let e = mse_l1_fd_error(seed);
        assert!(e < FD_TOLERANCE, "seed {seed}: {e}");
    }
}

#[test]
fn reduced_model_matches_finite_differences() {
    for seed in 0..3 {
        let e = model_fd_error(seed);
        assert!(e < FD_TOLERANCE, "seed {seed}: {e}");
    }
}

#[test]
fn error_measure_floors_small_gradients() {
    assert_eq!(rel_error(0.0, 0.0), 0.0);
    assert!((rel_error(2.0, 2.0 + 2e-6) - 2e-6 / (2.0 + 2e-6)).abs() < 1e-15);
    assert!((rel_error(1e-9, 0.0) - 1e-5).abs() < 1e-15);
}

