//! Property tests for the scalar bound machinery and data plumbing.

use core::f64::consts::LN_2;
use mdlreg_core::bounds::{
    binary_entropy, entropy_correction, expected_bound_rhs, risk_divergence, BoundInputs, LogBase,
};
use mdlreg_core::data::{batches, format_sparse, parse_sparse, Dataset, Split};
use mdlreg_core::gaussian::{kl_diag, DiagGaussian};
use proptest::prelude::*;

fn grid_correction(x1: f64, x2: f64, eps: f64, points: usize) -> f64 {
    let h = |x: f64| binary_entropy(x, LogBase::Bits).unwrap();
    let lo = x1.min(x2);
    let hi = x1.max(x2);
    let emax = eps.min(0.5 * (hi - lo));
    let mut best = 0.0f64;
    for k in 0..=points {
        let e = emax * k as f64 / points as f64;
        best = best.max(h(lo + e) - h(lo) + h(hi - e) - h(hi));
    }
    best
}

proptest! {
    #[test]
    fn risk_divergence_symmetric_nonnegative(x1 in 0.0..=1.0f64, x2 in 0.0..=1.0f64) {
        let a = risk_divergence(x1, x2, LogBase::Bits).unwrap();
        let b = risk_divergence(x2, x1, LogBase::Bits).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!(a >= (x1 - x2) * (x1 - x2) - 1e-12);
        prop_assert!(a <= 2.0 + 1e-12);
    }

    #[test]
    fn entropy_correction_closed_form_matches_grid(
        x1 in 0.0..=1.0f64,
        x2 in 0.0..=1.0f64,
        eps in 0.0..=0.6f64,
    ) {
        let closed = entropy_correction(x1, x2, eps, LogBase::Bits).unwrap();
        let grid = grid_correction(x1, x2, eps, 4000);
        prop_assert!(closed >= 0.0);
        prop_assert!((closed - grid).abs() <= 1e-7, "closed {} grid {}", closed, grid);
    }

    #[test]
    fn bound_rhs_base_consistency(
        rate in 0.0..1.0f64,
        r1 in 0.0..=1.0f64,
        r2 in 0.0..=1.0f64,
        tv in 0.0..=1.0f64,
    ) {
        let bits = BoundInputs {
            n: 50_000,
            num_classes: 10,
            mdl_rate: rate,
            emp_risk_train: r1,
            emp_risk_test: r2,
            tv,
            delta: 0.5,
            base: LogBase::Bits,
        };
        let nats = BoundInputs { mdl_rate: rate * LN_2, base: LogBase::Nats, ..bits };
        let vb = expected_bound_rhs(&bits).unwrap();
        let vn = expected_bound_rhs(&nats).unwrap();
        prop_assert!((vn - vb * LN_2).abs() <= 1e-12 * vn.abs().max(1.0));
    }

    #[test]
    fn kl_diag_nonnegative(
        m1 in -3.0..3.0f64, m2 in -3.0..3.0f64,
        v1 in 0.05..4.0f64, v2 in 0.05..4.0f64,
    ) {
        let p = DiagGaussian::new(vec![m1], vec![v1]).unwrap();
        let q = DiagGaussian::new(vec![m2], vec![v2]).unwrap();
        prop_assert!(kl_diag(&p, &q).unwrap() >= -1e-12);
    }

    #[test]
    fn sparse_round_trip(rows in proptest::collection::vec(
        (0usize..4, proptest::collection::vec(-10.0..10.0f64, 5)), 1..20)
    ) {
        let cols = 5;
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for (y, vals) in &rows {
            labels.push(*y);
            feats.extend_from_slice(vals);
        }
        let ds = Dataset::new(feats, cols, labels, 4, Split::Train).unwrap();
        let text = format_sparse(&ds, 1);
        let back = parse_sparse(&text, cols, 1, Split::Train).unwrap();
        for i in 0..ds.len() {
            prop_assert_eq!(ds.label(i), back.label(i));
            prop_assert_eq!(ds.row(i), back.row(i));
        }
    }

    #[test]
    fn batches_partition(n in 1usize..300, b in 1usize..50, seed in any::<u64>(), epoch in 0u64..20) {
        let slices = batches(n, b, seed, epoch);
        let mut seen = vec![false; n];
        for s in &slices {
            for &i in s {
                prop_assert!(!seen[i]);
                seen[i] = true;
            }
        }
        prop_assert!(seen.iter().all(|&x| x));
    }
}
