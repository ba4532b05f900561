//! Risk measures on finite discrete distributions.
//!
//! A [`DiscreteDist`] is a finite list of `(probability, value)` atoms. The
//! measures implemented here act on the distribution of a scalar random
//! cost: expectation, expected excess over a target, conditional
//! value-at-risk (with its variational characterization
//! `min_eta { eta + EE_eta / (1 - alpha) }` collapsing to a sorted-tail
//! closed form), value-at-risk with the left-quantile convention, upper
//! semideviation of order 1 or 2, mean-risk compositions `E + rho * R`, and
//! finite mixtures of CVaR levels (the comonotonic representation of
//! law-invariant coherent measures; an `alpha = 0` mixture atom means plain
//! expectation).
//!
//! The scalar functions assert their documented preconditions;
//! [`evaluate`] is the checked entry point that validates a [`RiskSpec`]
//! before dispatching.

/// Probabilities must sum to one within this tolerance.
pub const PROBABILITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RiskError {
    #[error("distribution has no atoms")]
    EmptyDistribution,

    #[error("atom {index} has non-positive probability {value}")]
    NonPositiveProbability { index: usize, value: f64 },

    #[error("probabilities sum to {sum}, expected 1")]
    ProbabilitySum { sum: f64 },

    #[error("atom {index} is not finite")]
    NonFiniteAtom { index: usize },

    #[error("alpha = {alpha} outside (0,1)")]
    BadAlpha { alpha: f64 },

    #[error("risk weight rho = {rho} must be finite and nonnegative")]
    BadRho { rho: f64 },

    #[error("semideviation order p = {p} unsupported, only 1 and 2 encode exactly")]
    BadOrder { p: u8 },

    #[error("invalid CVaR mixture: {0}")]
    BadMixture(String),
}

/// Finite scalar distribution `{(pi_i, v_i)}` with positive probabilities
/// summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    atoms: Vec<(f64, f64)>,
}

impl DiscreteDist {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self, RiskError> {
        if atoms.is_empty() {
            return Err(RiskError::EmptyDistribution);
        }
        let mut sum = 0.0;
        for (i, &(pi, v)) in atoms.iter().enumerate() {
            if !pi.is_finite() || !v.is_finite() {
                return Err(RiskError::NonFiniteAtom { index: i });
            }
            if pi <= 0.0 {
                return Err(RiskError::NonPositiveProbability {
                    index: i,
                    value: pi,
                });
            }
            sum += pi;
        }
        if (sum - 1.0).abs() > PROBABILITY_TOL {
            return Err(RiskError::ProbabilitySum { sum });
        }
        Ok(DiscreteDist { atoms })
    }

    /// Pairs up probabilities and values (used for the induced cost
    /// distribution of a first-stage decision).
    pub fn from_parts(probs: &[f64], values: &[f64]) -> Result<Self, RiskError> {
        assert_eq!(
            probs.len(),
            values.len(),
            "probability/value length mismatch"
        );
        DiscreteDist::new(probs.iter().copied().zip(values.iter().copied()).collect())
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty() // never true: the constructor rejects empty lists
    }

    /// Atom indices sorted by value, with the running cumulative probability.
    fn sorted_cumulative(&self) -> Vec<(f64, f64)> {
        let mut sorted: Vec<(f64, f64)> = self.atoms.clone();
        sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
        let mut cum = 0.0;
        sorted
            .into_iter()
            .map(|(pi, v)| {
                cum += pi;
                (cum, v)
            })
            .collect()
    }
}

pub fn expectation(d: &DiscreteDist) -> f64 {
    d.atoms.iter().map(|&(pi, v)| pi * v).sum()
}

/// `E[max(Z - eta, 0)]`.
pub fn expected_excess(d: &DiscreteDist, eta: f64) -> f64 {
    d.atoms.iter().map(|&(pi, v)| pi * (v - eta).max(0.0)).sum()
}

/// Conditional value-at-risk at level `alpha` in `(0,1)` together with the
/// left `alpha`-quantile, which attains the variational minimum
/// `min_eta { eta + EE_eta(Z)/(1-alpha) }`.
///
/// Closed form: with atoms sorted by value and `P_k` the cumulative
/// probability, let `k*` be the first index with `P_k >= alpha`; then
/// `CVaR = [(P_{k*} - alpha) v_{k*} + sum_{k > k*} pi_k v_k] / (1 - alpha)`.
pub fn cvar(d: &DiscreteDist, alpha: f64) -> (f64, f64) {
    assert!(
        alpha > 0.0 && alpha < 1.0,
        "cvar level {alpha} outside (0,1)"
    );
    let cum = d.sorted_cumulative();
    let kstar = cum
        .iter()
        .position(|&(p, _)| p >= alpha)
        .unwrap_or(cum.len() - 1);
    let eta_star = cum[kstar].1;
    let mut tail = (cum[kstar].0 - alpha) * cum[kstar].1;
    for k in (kstar + 1)..cum.len() {
        let pi_k = cum[k].0 - cum[k - 1].0;
        tail += pi_k * cum[k].1;
    }
    (tail / (1.0 - alpha), eta_star)
}

/// Value-at-risk: `inf { t : P(Z <= t) >= alpha }`, the left quantile. For a
/// discrete distribution this is always one of the atom values.
pub fn var(d: &DiscreteDist, alpha: f64) -> f64 {
    assert!(
        alpha > 0.0 && alpha < 1.0,
        "var level {alpha} outside (0,1)"
    );
    let cum = d.sorted_cumulative();
    let kstar = cum
        .iter()
        .position(|&(p, _)| p >= alpha)
        .unwrap_or(cum.len() - 1);
    cum[kstar].1
}

/// Upper semideviation of order `p`:
/// `( E[ max(Z - E[Z], 0)^p ] )^(1/p)` with `p` in `{1, 2}`.
pub fn upper_semidev(d: &DiscreteDist, p: u8) -> f64 {
    assert!(p == 1 || p == 2, "semideviation order {p} unsupported");
    let mean = expectation(d);
    let moment: f64 = d
        .atoms
        .iter()
        .map(|&(pi, v)| pi * (v - mean).max(0.0).powi(p as i32))
        .sum();
    if p == 1 {
        moment
    } else {
        moment.sqrt()
    }
}

/// Specification of a risk functional applied to the scenario cost
/// distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum RiskSpec {
    Expectation,
    /// `EE_eta(Z) = E[max(Z - eta, 0)]` for a fixed target `eta`.
    ExpectedExcess {
        eta: f64,
    },
    CVaR {
        alpha: f64,
    },
    VaR {
        alpha: f64,
    },
    /// `E[Z] + rho * updev_p(Z)` — the composite measure, since the
    /// semideviation alone is not translation-equivariant.
    MeanUpperSemidev {
        p: u8,
        rho: f64,
    },
    /// `E[Z] + rho * base(Z)`.
    MeanRisk {
        base: Box<RiskSpec>,
        rho: f64,
    },
    /// `sum_j w_j CVaR_{alpha_j}(Z)` with positive weights summing to one;
    /// an atom at `alpha = 0` contributes the plain expectation.
    CVaRMixture {
        atoms: Vec<(f64, f64)>,
    },
}

impl RiskSpec {
    pub fn validate(&self) -> Result<(), RiskError> {
        match self {
            RiskSpec::Expectation => Ok(()),
            RiskSpec::ExpectedExcess { eta } => {
                if eta.is_finite() {
                    Ok(())
                } else {
                    Err(RiskError::BadMixture(format!(
                        "non-finite excess target {eta}"
                    )))
                }
            }
            RiskSpec::CVaR { alpha } | RiskSpec::VaR { alpha } => {
                if alpha.is_finite() && *alpha > 0.0 && *alpha < 1.0 {
                    Ok(())
                } else {
                    Err(RiskError::BadAlpha { alpha: *alpha })
                }
            }
            RiskSpec::MeanUpperSemidev { p, rho } => {
                if *p != 1 && *p != 2 {
                    return Err(RiskError::BadOrder { p: *p });
                }
                check_rho(*rho)
            }
            RiskSpec::MeanRisk { base, rho } => {
                check_rho(*rho)?;
                base.validate()
            }
            RiskSpec::CVaRMixture { atoms } => {
                if atoms.is_empty() {
                    return Err(RiskError::BadMixture("no mixture atoms".into()));
                }
                let mut sum = 0.0;
                for &(w, a) in atoms {
                    if !w.is_finite() || w <= 0.0 {
                        return Err(RiskError::BadMixture(format!("weight {w} not positive")));
                    }
                    if !a.is_finite() || !(0.0..1.0).contains(&a) {
                        return Err(RiskError::BadMixture(format!("level {a} outside [0,1)")));
                    }
                    sum += w;
                }
                if (sum - 1.0).abs() > PROBABILITY_TOL {
                    return Err(RiskError::BadMixture(format!("weights sum to {sum}")));
                }
                Ok(())
            }
        }
    }
}

fn check_rho(rho: f64) -> Result<(), RiskError> {
    if rho.is_finite() && rho >= 0.0 {
        Ok(())
    } else {
        Err(RiskError::BadRho { rho })
    }
}

/// Validates `spec` and evaluates it on `d`.
pub fn evaluate(spec: &RiskSpec, d: &DiscreteDist) -> Result<f64, RiskError> {
    spec.validate()?;
    Ok(evaluate_unchecked(spec, d))
}

fn evaluate_unchecked(spec: &RiskSpec, d: &DiscreteDist) -> f64 {
    match spec {
        RiskSpec::Expectation => expectation(d),
        RiskSpec::ExpectedExcess { eta } => expected_excess(d, *eta),
        RiskSpec::CVaR { alpha } => cvar(d, *alpha).0,
        RiskSpec::VaR { alpha } => var(d, *alpha),
        RiskSpec::MeanUpperSemidev { p, rho } => expectation(d) + rho * upper_semidev(d, *p),
        RiskSpec::MeanRisk { base, rho } => expectation(d) + rho * evaluate_unchecked(base, d),
        RiskSpec::CVaRMixture { atoms } => atoms
            .iter()
            .map(|&(w, a)| {
                if a == 0.0 {
                    w * expectation(d)
                } else {
                    w * cvar(d, a).0
                }
            })
            .sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(atoms: &[(f64, f64)]) -> DiscreteDist {
        DiscreteDist::new(atoms.to_vec()).unwrap()
    }

    fn half_half() -> DiscreteDist {
        dist(&[(0.5, 0.0), (0.5, 10.0)])
    }

    fn three() -> DiscreteDist {
        dist(&[(0.2, 1.0), (0.3, 2.0), (0.5, 3.0)])
    }

    #[test]
    fn expectation_values() {
        assert_eq!(expectation(&half_half()), 5.0);
        assert_eq!(expectation(&dist(&[(1.0, 7.0)])), 7.0);
        assert!((expectation(&three()) - 2.3).abs() < 1e-15);
    }

    #[test]
    fn expected_excess_values() {
        assert_eq!(expected_excess(&half_half(), 4.0), 3.0);
        assert_eq!(expected_excess(&half_half(), 10.0), 0.0);
        assert_eq!(expected_excess(&half_half(), 12.0), 0.0);
        assert!((expected_excess(&three(), 1.5) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn cvar_values() {
        let (v, eta) = cvar(&half_half(), 0.5);
        assert!((v - 10.0).abs() < 1e-12);
        assert_eq!(eta, 0.0); // left quantile
        let (v0, _) = cvar(&half_half(), 1e-9);
        assert!((v0 - 5.0).abs() < 1e-6);
        for alpha in [0.1, 0.5, 0.9] {
            let (c, e) = cvar(&dist(&[(1.0, 3.5)]), alpha);
            assert_eq!(c, 3.5);
            assert_eq!(e, 3.5);
        }
    }

    #[test]
    fn cvar_quantile_attains_variational_minimum() {
        let d = three();
        for alpha in [0.15, 0.35, 0.55, 0.8] {
            let (value, eta) = cvar(&d, alpha);
            let objective = |e: f64| e + expected_excess(&d, e) / (1.0 - alpha);
            assert!((objective(eta) - value).abs() < 1e-12, "alpha {alpha}");
            // no strictly better eta among the atoms (the minimum of the
            // piecewise-linear objective sits at an atom)
            for &(_, v) in d.atoms() {
                assert!(objective(v) >= value - 1e-12);
            }
        }
    }

    #[test]
    fn var_values() {
        assert_eq!(var(&half_half(), 0.5), 0.0);
        assert_eq!(var(&half_half(), 0.6), 10.0);
        assert_eq!(var(&three(), 0.5), 2.0);
    }

    #[test]
    fn semidev_values() {
        assert!((upper_semidev(&half_half(), 1) - 2.5).abs() < 1e-15);
        assert!((upper_semidev(&half_half(), 2) - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(upper_semidev(&dist(&[(0.3, 4.0), (0.7, 4.0)]), 1), 0.0);
        assert_eq!(upper_semidev(&dist(&[(0.3, 4.0), (0.7, 4.0)]), 2), 0.0);
    }

    #[test]
    fn evaluate_dispatch() {
        let d = half_half();
        let mix = RiskSpec::CVaRMixture {
            atoms: vec![(1.0, 0.5)],
        };
        assert_eq!(evaluate(&mix, &d).unwrap(), cvar(&d, 0.5).0);

        let mr = RiskSpec::MeanRisk {
            base: Box::new(RiskSpec::ExpectedExcess { eta: 4.0 }),
            rho: 1.0,
        };
        assert!((evaluate(&mr, &d).unwrap() - 8.0).abs() < 1e-12);

        let zero = RiskSpec::MeanRisk {
            base: Box::new(RiskSpec::CVaR { alpha: 0.7 }),
            rho: 0.0,
        };
        assert_eq!(evaluate(&zero, &d).unwrap(), expectation(&d));

        let mix0 = RiskSpec::CVaRMixture {
            atoms: vec![(0.4, 0.0), (0.6, 0.5)],
        };
        let expect = 0.4 * expectation(&d) + 0.6 * cvar(&d, 0.5).0;
        assert!((evaluate(&mix0, &d).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn law_invariance() {
        // permuting atoms and splitting one atom in two leaves values alone
        let a = dist(&[(0.5, 2.0), (0.3, -1.0), (0.2, 7.0)]);
        let b = dist(&[(0.2, 7.0), (0.25, 2.0), (0.25, 2.0), (0.3, -1.0)]);
        for alpha in [0.2, 0.5, 0.77] {
            assert!((cvar(&a, alpha).0 - cvar(&b, alpha).0).abs() < 1e-12);
            assert_eq!(var(&a, alpha), var(&b, alpha));
        }
        assert!((upper_semidev(&a, 2) - upper_semidev(&b, 2)).abs() < 1e-12);
    }

    #[test]
    fn spec_validation() {
        assert!(RiskSpec::CVaR { alpha: 0.0 }.validate().is_err());
        assert!(RiskSpec::CVaR { alpha: 1.0 }.validate().is_err());
        assert!(RiskSpec::VaR { alpha: 0.5 }.validate().is_ok());
        assert!(RiskSpec::MeanUpperSemidev { p: 3, rho: 1.0 }
            .validate()
            .is_err());
        assert!(RiskSpec::MeanUpperSemidev { p: 2, rho: -0.1 }
            .validate()
            .is_err());
        assert!(RiskSpec::CVaRMixture {
            atoms: vec![(0.5, 0.2), (0.4, 0.3)]
        }
        .validate()
        .is_err());
        assert!(RiskSpec::CVaRMixture {
            atoms: vec![(0.5, 0.2), (0.5, 0.999)]
        }
        .validate()
        .is_ok());
        let nested = RiskSpec::MeanRisk {
            base: Box::new(RiskSpec::CVaR { alpha: 2.0 }),
            rho: 1.0,
        };
        assert!(nested.validate().is_err());
    }

    #[test]
    fn distribution_validation() {
        assert!(DiscreteDist::new(vec![]).is_err());
        assert!(DiscreteDist::new(vec![(0.5, 1.0), (0.6, 2.0)]).is_err());
        assert!(DiscreteDist::new(vec![(1.0, f64::NAN)]).is_err());
        assert!(DiscreteDist::new(vec![(-0.1, 1.0), (1.1, 2.0)]).is_err());
        assert!(DiscreteDist::from_parts(&[0.25; 4], &[1.0, 2.0, 3.0, 4.0]).is_ok());
    }
}
