use std::time::Instant;

use hgt_nn::gradcheck::{primitive_suite, relative_error};

#[test]
fn every_primitive_matches_finite_differences() {
    let start = Instant::now();
    let results = primitive_suite(0..10).unwrap();
    let elapsed = start.elapsed();
    let failures: Vec<_> = results.iter().filter(|r| !(r.rel_error < 1e-4)).collect();
    assert!(failures.is_empty(), "gradient mismatches: {failures:?}");
    let primitives: std::collections::BTreeSet<_> = results.iter().map(|r| r.primitive).collect();
    assert!(primitives.len() >= 18, "{primitives:?}");
    assert!(elapsed.as_secs() < 60, "suite took {elapsed:?}");
}

#[test]
fn relative_error_edge_cases() {
    assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
    assert_eq!(relative_error(&[1.0], &[1.0]), 0.0);
    assert!((relative_error(&[1.0], &[0.0]) - 1.0).abs() < 1e-15);
}
