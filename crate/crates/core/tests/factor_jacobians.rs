mod common;

use common::jacobians::{aux_errors, imu_errors, lbl_prior_errors, TOL};

fn check(errors: Vec<(String, f64)>) {
    for (kind, e) in errors {
        assert!(e < TOL, "{kind}: {e}");
    }
}

#[test]
fn imu_factor_jacobians() {
    check(imu_errors());
}

#[test]
fn aux_factor_jacobians_both_routes() {
    check(aux_errors());
}

#[test]
fn lbl_and_prior_jacobians() {
    check(lbl_prior_errors());
}
