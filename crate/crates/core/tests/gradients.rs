mod common;

use common::gradcheck::gradient_suite;

#[test]
fn every_layer_matches_finite_differences() {
    for seed in [11, 12] {
        for r in gradient_suite(seed) {
            assert!(r.max_rel_err < 1e-4, "{}: relative error {:.3e}", r.layer, r.max_rel_err);
        }
    }
}
