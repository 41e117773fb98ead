mod common;

use common::{check_heads_gradient, check_rank_gradient};

#[test]
fn rank_gradient_matches_finite_differences() {
    for seed in [1, 2] {
        let r = check_rank_gradient(12, 10, seed);
        assert!(r.max_rel_error < 1e-4, "seed {seed}: {}", r.max_rel_error);
    }
}

#[test]
fn heads_gradient_matches_finite_differences() {
    for seed in [1, 2] {
        let r = check_heads_gradient(12, 10, seed);
        assert!(r.max_rel_error < 1e-4, "seed {seed}: {}", r.max_rel_error);
    }
}
