mod common;

use common::{model_gradient_errors, op_gradient_errors, FD_TOLERANCE};

const SEEDS: u64 = 20;

#[test]
fn every_operation_matches_central_differences() {
    for seed in 0..SEEDS {
        for (name, err) in op_gradient_errors(seed) {
            assert!(err <= FD_TOLERANCE, "seed {seed}: {name} relative error {err:e}");
        }
    }
}

#[test]
fn surrogate_model_parameters_match_central_differences() {
    for seed in 0..SEEDS {
        let errs = model_gradient_errors(seed);
        assert_eq!(errs.len(), 8, "weights and bias of four layers");
        for (name, err, scale) in errs {
            assert!(err <= FD_TOLERANCE, "seed {seed}: {name} relative error {err:e}");
            assert!(scale > 1e-6, "seed {seed}: {name} gradient vanished, check is vacuous");
        }
    }
}

#[test]
fn relative_error_oracle() {
    assert_eq!(common::rel_err(1.0, 1.0), 0.0);
    assert!((common::rel_err(1.0, 1.0001) - 1e-4 / 1.0001).abs() < 1e-12);
    // both tiny: compared against the floor, not each other
    assert!(common::rel_err(1e-12, -1e-12) < 1e-5);
}
