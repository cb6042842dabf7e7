//! Property tests for invariants the hand-written kernels must hold for any
//! input: the step-up multiple-testing rule, composition and Jacobian
//! identities, overlap symmetry, similarity bounds, and the pooling-window
//! text format.

use atlas_core::atlas::DeltaWindow;
use atlas_core::diffeo::{compose, jacobian_det};
use atlas_core::metrics::dsc;
use atlas_core::objective::lncc_sq_loss;
use atlas_core::phantom::smooth_random_field;
use atlas_core::vbm::fdr_bh;
use atlas_core::volume::{Dims, Mask, VectorField, Volume};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pvals() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..=1.0, 1..200)
}

proptest! {
    /// The rejection set is exactly the p-values at or below the returned
    /// threshold, and empty only when the threshold is zero.
    #[test]
    fn bh_rejects_exactly_the_values_below_the_threshold(p in pvals(), q in 0.01f64..0.5) {
        let (p_star, flags) = fdr_bh(&p, q).unwrap();
        prop_assert_eq!(p.len(), flags.len());
        for (v, f) in p.iter().zip(&flags) {
            prop_assert_eq!(*f, p_star > 0.0 && *v <= p_star);
        }
    }

    /// Raising the false-discovery level never un-rejects a hypothesis.
    #[test]
    fn bh_rejection_set_grows_with_q(p in pvals(), q in 0.01f64..0.25) {
        let (_, lo) = fdr_bh(&p, q).unwrap();
        let (_, hi) = fdr_bh(&p, 2.0 * q).unwrap();
        for (a, b) in lo.iter().zip(&hi) {
            prop_assert!(!*a || *b, "rejection lost when q doubled");
        }
    }

    /// The threshold is either zero (nothing rejected) or one of the inputs.
    #[test]
    fn bh_threshold_is_zero_or_an_observed_p(p in pvals(), q in 0.01f64..0.5) {
        let (p_star, _) = fdr_bh(&p, q).unwrap();
        prop_assert!(p_star == 0.0 || p.contains(&p_star));
    }

    /// The decision depends on the multiset of p-values, not their order.
    #[test]
    fn bh_is_permutation_invariant(p in pvals(), q in 0.01f64..0.5, seed in any::<u64>()) {
        let (s1, f1) = fdr_bh(&p, q).unwrap();
        let mut shuffled = p.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (s2, f2) = fdr_bh(&shuffled, q).unwrap();
        prop_assert_eq!(s1.to_bits(), s2.to_bits());
        prop_assert_eq!(
            f1.iter().filter(|f| **f).count(),
            f2.iter().filter(|f| **f).count()
        );
    }

    /// Composing with the zero field on either side reproduces the operand
    /// bit for bit (lattice-point sampling must be exact).
    #[test]
    fn composing_with_zero_is_identity(seed in any::<u64>()) {
        let dims = Dims::cube(6);
        let u = smooth_random_field(dims, 1.5, 2.0, seed);
        let zero = VectorField::zeros(dims);
        let right = compose(&u, &zero).unwrap();
        let left = compose(&zero, &u).unwrap();
        prop_assert_eq!(&right.data, &u.data);
        prop_assert_eq!(&left.data, &u.data);
    }

    /// A pure translation changes no volumes: unit determinant everywhere,
    /// boundary stencils included.
    #[test]
    fn translation_has_unit_jacobian(t in proptest::array::uniform3(-2.0f64..2.0)) {
        let u = VectorField::from_fn(Dims::cube(5), |_, _, _| t);
        for &v in &jacobian_det(&u).data {
            prop_assert!((v as f64 - 1.0).abs() < 1e-12);
        }
    }

    /// Overlap is symmetric, bounded, and perfect against itself.
    #[test]
    fn dsc_is_symmetric_bounded_and_reflexive(
        a in proptest::collection::vec(any::<bool>(), 64),
        b in proptest::collection::vec(any::<bool>(), 64),
    ) {
        let dims = Dims::cube(4);
        let a = Mask::new(dims, a).unwrap();
        let b = Mask::new(dims, b).unwrap();
        let ab = dsc(&a, &b).unwrap();
        let ba = dsc(&b, &a).unwrap();
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(dsc(&a, &a).unwrap(), 1.0);
    }

    /// The windowed-correlation loss of any image pair stays in [-1, 0].
    #[test]
    fn lncc_loss_is_bounded(seed in any::<u64>(), window in 3usize..9) {
        let dims = Dims::cube(6);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Volume::from_fn(dims, 1.0, |_, _, _| rng.gen_range(0.0..1.0));
        let b = Volume::from_fn(dims, 1.0, |_, _, _| rng.gen_range(0.0..1.0));
        let window = window | 1; // odd
        let loss = lncc_sq_loss(&a, &b, window, 1e-5).unwrap();
        prop_assert!((-1.0..=0.0).contains(&loss), "loss {loss}");
    }

    /// Day counts round-trip through the textual form used by the CLI and
    /// the model checkpoint.
    #[test]
    fn delta_window_number_round_trips(d in 0u32..10000) {
        let w: DeltaWindow = d.to_string().parse().unwrap();
        prop_assert_eq!(w, DeltaWindow::Days(d));
    }
}

#[test]
fn delta_window_accepts_the_unbounded_spellings() {
    for s in ["inf", "infinite", "infinity"] {
        assert_eq!(s.parse::<DeltaWindow>().unwrap(), DeltaWindow::Infinite);
    }
    assert!("three".parse::<DeltaWindow>().is_err());
}
