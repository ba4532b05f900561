//! Randomized checks of the scalar risk-measure algebra on discrete
//! distributions: ordering, equivariances, law invariance, and the mixture
//! representation.

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stochsdp_core::risk::{self, DiscreteDist, RiskSpec};

fn dist(max_atoms: usize) -> impl Strategy<Value = DiscreteDist> {
    prop::collection::vec((0.05f64..1.0, -8.0f64..8.0), 1..=max_atoms).prop_map(|atoms| {
        let total: f64 = atoms.iter().map(|(w, _)| w).sum();
        let (probs, values): (Vec<_>, Vec<_>) =
            atoms.into_iter().map(|(w, v)| (w / total, v)).unzip();
        DiscreteDist::from_parts(&probs, &values).expect("normalized atoms")
    })
}

/// Same weights, transformed values.
fn remap(d: &DiscreteDist, f: impl Fn(f64) -> f64) -> DiscreteDist {
    let (probs, values): (Vec<_>, Vec<_>) = d.atoms().iter().map(|&(p, v)| (p, f(v))).unzip();
    DiscreteDist::from_parts(&probs, &values).expect("weights unchanged")
}

proptest! {
    #[test]
    fn cvar_sits_between_mean_and_worst_case(d in dist(8), alpha in 0.01f64..0.99) {
        let (c, quantile) = risk::cvar(&d, alpha);
        let mean = risk::expectation(&d);
        let worst = d.atoms().iter().map(|a| a.1).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(c >= mean - 1e-9);
        prop_assert!(c <= worst + 1e-9);
        prop_assert!(quantile <= c + 1e-9);
        prop_assert!(risk::var(&d, alpha) <= c + 1e-9);
    }

    #[test]
    fn cvar_grows_with_the_level(d in dist(8), a in 0.01f64..0.95, b in 0.01f64..0.95) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(risk::cvar(&d, lo).0 <= risk::cvar(&d, hi).0 + 1e-9);
    }

    #[test]
    fn cvar_is_cash_additive_and_positively_homogeneous(
        d in dist(8),
        alpha in 0.01f64..0.99,
        shift in -5.0f64..5.0,
        lam in 0.1f64..4.0,
    ) {
        let base = risk::cvar(&d, alpha).0;
        let shifted = risk::cvar(&remap(&d, |v| v + shift), alpha).0;
        prop_assert!((shifted - (base + shift)).abs() <= 1e-9 * (1.0 + base.abs()));
        let scaled = risk::cvar(&remap(&d, |v| lam * v), alpha).0;
        prop_assert!((scaled - lam * base).abs() <= 1e-9 * (1.0 + (lam * base).abs()));
    }

    #[test]
    fn cvar_is_law_invariant(d in dist(6), alpha in 0.01f64..0.99, seed in any::<u64>()) {
        let base = risk::cvar(&d, alpha).0;

        let mut atoms = d.atoms().to_vec();
        atoms.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let shuffled = DiscreteDist::new(atoms.clone()).expect("same atoms");
        prop_assert!((risk::cvar(&shuffled, alpha).0 - base).abs() <= 1e-12 * (1.0 + base.abs()));

        // splitting an atom into two equal halves leaves the law unchanged
        let (w, v) = atoms[0];
        atoms[0] = (w / 2.0, v);
        atoms.push((w / 2.0, v));
        let split = DiscreteDist::new(atoms).expect("weights still sum to one");
        prop_assert!((risk::cvar(&split, alpha).0 - base).abs() <= 1e-9 * (1.0 + base.abs()));
    }

    #[test]
    fn quantile_brackets_the_level(d in dist(8), alpha in 0.01f64..0.99) {
        let q = risk::var(&d, alpha);
        let below: f64 = d.atoms().iter().filter(|a| a.1 < q - 1e-12).map(|a| a.0).sum();
        let at_or_below: f64 = d.atoms().iter().filter(|a| a.1 <= q + 1e-12).map(|a| a.0).sum();
        prop_assert!(below <= alpha + 1e-12);
        prop_assert!(at_or_below >= alpha - 1e-12);
    }

    #[test]
    fn mixture_evaluates_to_the_weighted_sum(
        d in dist(8),
        w in 0.05f64..0.95,
        a1 in prop_oneof![Just(0.0), 0.01f64..0.9],
        a2 in 0.01f64..0.9,
    ) {
        let spec = RiskSpec::CVaRMixture { atoms: vec![(w, a1), (1.0 - w, a2)] };
        let term = |a: f64| if a == 0.0 { risk::expectation(&d) } else { risk::cvar(&d, a).0 };
        let direct = w * term(a1) + (1.0 - w) * term(a2);
        let got = risk::evaluate(&spec, &d).expect("valid mixture");
        prop_assert!((got - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
    }

    #[test]
    fn expected_excess_is_nonneg_decreasing_and_contractive(
        d in dist(8),
        e1 in -6.0f64..6.0,
        e2 in -6.0f64..6.0,
    ) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let ee_lo = risk::expected_excess(&d, lo);
        let ee_hi = risk::expected_excess(&d, hi);
        prop_assert!(ee_hi >= 0.0);
        prop_assert!(ee_lo >= ee_hi - 1e-12);
        // 1-Lipschitz in the target
        prop_assert!(ee_lo - ee_hi <= (hi - lo) + 1e-12);
    }

    #[test]
    fn semideviation_ignores_shifts_and_scales_linearly(
        d in dist(8),
        p in 1u8..=2,
        shift in -4.0f64..4.0,
        lam in 0.1f64..4.0,
    ) {
        let base = risk::upper_semidev(&d, p);
        prop_assert!(base >= 0.0);
        let shifted = risk::upper_semidev(&remap(&d, |v| v + shift), p);
        prop_assert!((shifted - base).abs() <= 1e-9 * (1.0 + base));
        let scaled = risk::upper_semidev(&remap(&d, |v| lam * v), p);
        prop_assert!((scaled - lam * base).abs() <= 1e-9 * (1.0 + lam * base));
    }

    #[test]
    fn semideviation_vanishes_on_constants(v in -5.0f64..5.0, p in 1u8..=2, k in 1usize..6) {
        let d = DiscreteDist::from_parts(&vec![1.0 / k as f64; k], &vec![v; k])
            .expect("uniform weights");
        prop_assert!(risk::upper_semidev(&d, p).abs() <= 1e-12);
    }

    #[test]
    fn spec_validation_rejects_out_of_range_parameters(
        alpha_bad in prop_oneof![Just(0.0), Just(1.0), 1.0f64..3.0, -2.0f64..0.0],
        rho_bad in -3.0f64..-0.001,
        scale in 1.1f64..2.0,
    ) {
        let bad_cvar = RiskSpec::CVaR { alpha: alpha_bad };
        let bad_var = RiskSpec::VaR { alpha: alpha_bad };
        let bad_rho = RiskSpec::MeanUpperSemidev { p: 1, rho: rho_bad };
        let bad_order = RiskSpec::MeanUpperSemidev { p: 3, rho: 1.0 };
        // mixture weights must sum to one
        let bad_mix =
            RiskSpec::CVaRMixture { atoms: vec![(0.5 * scale, 0.2), (0.5 * scale, 0.6)] };
        for spec in [bad_cvar, bad_var, bad_rho, bad_order, bad_mix] {
            prop_assert!(spec.validate().is_err(), "accepted invalid spec {:?}", spec);
        }
    }
}
