//! Reference instances and seeded random generators used across the test
//! suites and shipped with the command-line tool.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{MatrixTuple, ProblemData, Scenario, ScenarioSet, Spectrahedron, SymMatrix};

/// Scalar first stage, diagonal recourse: `phi(t) = |t|`.
///
/// `q = I_2`, `W = diag(1, -1)` give the dual set `M_D = [-1, 1]`, so both
/// the compactness and the strict-feasibility assumptions hold with margin
/// 1 and the recourse Lipschitz constant is exactly 1. The first stage is
/// the trace segment `x in [0, 1]`; with `c = 0` and `T = 0` it is inert,
/// which makes every optimal value computable by hand.
pub fn diag_problem() -> ProblemData {
    ProblemData {
        n: 1,
        m: 2,
        s: 1,
        c: SymMatrix::zeros(1),
        q: SymMatrix::identity(2),
        t: MatrixTuple::new(vec![SymMatrix::zeros(1)]).expect("static data"),
        w: MatrixTuple::new(vec![SymMatrix::from_diagonal(&[1.0, -1.0])]).expect("static data"),
        x_set: Spectrahedron::trace_ball(1, 1.0),
    }
}

/// Two equiprobable demands for [`diag_problem`]; `E phi = 1.5`.
pub fn diag_scenarios() -> ScenarioSet {
    ScenarioSet::new(vec![
        Scenario {
            pi: 0.5,
            z: vec![-1.0],
        },
        Scenario {
            pi: 0.5,
            z: vec![2.0],
        },
    ])
    .expect("static data")
}

/// The boundary instance where strict dual feasibility fails: `q` is the
/// rank-one diagonal `diag(1, 0)` and `W` the off-diagonal pairing, so the
/// dual set collapses to `M_D = {0}` (margin exactly zero), `phi` is
/// identically zero, and the recourse infimum is not attained for `t != 0`.
pub fn boundary_problem() -> ProblemData {
    ProblemData {
        n: 1,
        m: 2,
        s: 1,
        c: SymMatrix::zeros(1),
        q: SymMatrix::new(&[vec![1.0, 0.0], vec![0.0, 0.0]]).expect("static data"),
        t: MatrixTuple::new(vec![SymMatrix::zeros(1)]).expect("static data"),
        w: MatrixTuple::new(vec![
            SymMatrix::new(&[vec![0.0, 0.5], vec![0.5, 0.0]]).expect("static data")
        ])
        .expect("static data"),
        x_set: Spectrahedron::zero_point(1),
    }
}

/// A single demand the boundary recourse cannot attain.
pub fn boundary_scenarios() -> ScenarioSet {
    ScenarioSet::new(vec![Scenario {
        pi: 1.0,
        z: vec![5.0],
    }])
    .expect("static data")
}

/// Family with a recession direction: `W = (I_m)` makes `-W'v >= 0` hold
/// for every `v <= 0`, so the dual set is a half-line and compactness
/// fails.
pub fn unbounded_problem(m: usize) -> ProblemData {
    ProblemData {
        n: 1,
        m,
        s: 1,
        c: SymMatrix::zeros(1),
        q: SymMatrix::identity(m),
        t: MatrixTuple::new(vec![SymMatrix::zeros(1)]).expect("static data"),
        w: MatrixTuple::new(vec![SymMatrix::identity(m)]).expect("static data"),
        x_set: Spectrahedron::trace_ball(1, 1.0),
    }
}

fn random_sym(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> SymMatrix {
    let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-scale..scale));
    SymMatrix::symmetric_part(&raw)
}

fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    raw.qr().q()
}

/// Random problem on which both recourse assumptions provably hold.
///
/// `q = R R' + I/2` is strictly positive definite, so `u = 0` is strictly
/// dual feasible. The `W_j` share one random eigenbasis; in it, `W_j` puts
/// a positive weight on entry `j` and a negative one on entry `s+1`, so
/// `sum_j v_j W_j <= 0` forces every `v_j <= 0` while the shared negative
/// entry forces their positive combination up — only `v = 0` survives, and
/// the dual set is compact. Extra diagonal entries and the `T`, `c` data
/// are free randomness. Requires `m >= s + 1`.
pub fn random_complete_recourse(n: usize, m: usize, s: usize, seed: u64) -> ProblemData {
    assert!(m >= s + 1, "need m >= s + 1 (got m = {m}, s = {s})");
    assert!(n >= 1 && s >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let r = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
    let q = SymMatrix::symmetric_part(&(&r * r.transpose() + DMatrix::identity(m, m) * 0.5));

    let basis = random_orthogonal(&mut rng, m);
    let mut w_blocks = Vec::with_capacity(s);
    for j in 0..s {
        let mut d = DMatrix::zeros(m, m);
        d[(j, j)] = rng.gen_range(0.5..2.0);
        d[(s, s)] = -rng.gen_range(0.5..2.0);
        // Slots 0..s belong to the forcing argument and stay zero off
        // their own scenario; anything beyond s+1 only adds constraints.
        for k in (s + 1)..m {
            d[(k, k)] = rng.gen_range(-1.0..1.0);
        }
        let w = &basis * d * basis.transpose();
        w_blocks.push(SymMatrix::symmetric_part(&w));
    }

    let t_blocks = (0..s).map(|_| random_sym(&mut rng, n, 1.0)).collect();
    ProblemData {
        n,
        m,
        s,
        c: random_sym(&mut rng, n, 1.0),
        q,
        t: MatrixTuple::new(t_blocks).expect("s >= 1 blocks"),
        w: MatrixTuple::new(w_blocks).expect("s >= 1 blocks"),
        x_set: Spectrahedron::trace_ball(n, 1.0),
    }
}

/// Random scenario set: positive weights normalized to one, support drawn
/// uniformly from `[-2, 2]^dim`.
pub fn random_scenarios(dim: usize, count: usize, seed: u64) -> ScenarioSet {
    assert!(count >= 1 && dim >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5ce0_a91e));
    let raw: Vec<f64> = (0..count).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let scenarios = raw
        .into_iter()
        .map(|w| Scenario {
            pi: w / total,
            z: (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        })
        .collect();
    ScenarioSet::new_unchecked(scenarios)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extensive::{build_risk_neutral, solve_extensive};
    use crate::recourse::{check_a1, check_a2, lipschitz_bound};
    use crate::sdp::SolverOptions;

    #[test]
    fn diag_instance_facts() {
        let p = diag_problem();
        let opts = SolverOptions::default();
        let a2 = check_a2(&p, &opts).unwrap();
        assert!(
            a2.holds && (a2.margin - 1.0).abs() < 1e-6,
            "margin {}",
            a2.margin
        );
        assert!(check_a1(&p, &opts).unwrap().holds);
        assert!((lipschitz_bound(&p, &opts).unwrap() - 1.0).abs() < 1e-6);
        let ef = build_risk_neutral(&p, &diag_scenarios()).unwrap();
        let sol = solve_extensive(&ef, &opts).unwrap();
        assert!((sol.value - 1.5).abs() < 1e-6);
    }

    #[test]
    fn boundary_instance_fails_strict_feasibility_only() {
        let p = boundary_problem();
        let opts = SolverOptions::default();
        let a2 = check_a2(&p, &opts).unwrap();
        assert!(!a2.holds && a2.margin.abs() < 1e-6, "margin {}", a2.margin);
        // The dual set is the single point {0}: trivially bounded.
        assert!(check_a1(&p, &opts).unwrap().holds);
        assert_eq!(boundary_scenarios().len(), 1);
    }

    #[test]
    fn unbounded_family_has_recession_direction() {
        for m in 1..=4 {
            let rep = check_a1(&unbounded_problem(m), &SolverOptions::default()).unwrap();
            assert!(!rep.holds, "m = {m} should fail compactness");
        }
    }

    #[test]
    fn random_instances_satisfy_both_assumptions() {
        let opts = SolverOptions::default();
        for seed in 0..10 {
            let n = 1 + (seed as usize % 3);
            let s = 1 + (seed as usize % 3);
            let m = s + 1 + (seed as usize % 2);
            let p = random_complete_recourse(n, m, s, seed);
            let a2 = check_a2(&p, &opts).unwrap();
            assert!(a2.holds, "seed {seed}: margin {}", a2.margin);
            let a1 = check_a1(&p, &opts).unwrap();
            assert!(a1.holds, "seed {seed}: {:?}", a1.certificate);
            assert!(lipschitz_bound(&p, &opts).unwrap().is_finite());
        }
    }

    #[test]
    fn random_scenarios_are_valid_and_deterministic() {
        let a = random_scenarios(2, 4, 9);
        let b = random_scenarios(2, 4, 9);
        assert_eq!(a.len(), 4);
        assert!((a.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in a.scenarios().iter().zip(b.scenarios()) {
            assert_eq!(x.pi, y.pi);
            assert_eq!(x.z, y.z);
        }
    }
}
