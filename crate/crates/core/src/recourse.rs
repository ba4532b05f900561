//! The recourse value function and its verification machinery.
//!
//! `phi(t) = min { q.y : W.y = t, y PSD }` is evaluated exclusively through
//! its dual, `phi(t) = max { t'u : u in M_D }` over the spectrahedron
//! `M_D = { u : q - W'u PSD }`. The dual route keeps evaluation stable even
//! when the primal infimum is not attained (the boundary example with a
//! singular slack), and its maximizers are exactly the subgradients of
//! `phi`.
//!
//! Two assumptions gate the theory:
//! * **complete recourse** — every right-hand side `t` is feasible, which
//!   holds exactly when `M_D` is compact (given strict dual feasibility);
//!   checked by maximizing each coordinate of a recession direction `v`
//!   over `{ v : -W'v PSD, ||v||_inf <= 1 }`, all of which must vanish;
//! * **strict dual feasibility** — some `u` has `q - W'u` positive
//!   definite; checked as the dual-side strict feasibility margin.
//!
//! [`RecourseOracle::verify`] enforces both and fails otherwise;
//! [`RecourseOracle::with_override`] records the verdicts but evaluates
//! anyway, for studying degenerate instances on purpose.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::model::{frobenius_pair, MatrixTuple, ProblemData, ScenarioSet, SymMatrix};
use crate::sdp::{
    solve, strict_feasibility_margin, BlockSdp, BlockSdpBuilder, RowExpr, SdpStatus, Side,
    SolverOptions,
};

/// Margin above which strict dual feasibility is accepted.
pub const A2_MARGIN_TOL: f64 = 1e-8;
/// Recession-direction optima below this are treated as zero.
pub const A1_DIRECTION_TOL: f64 = 1e-6;
/// Perturbation size for the subgradient-uniqueness probe.
const PROBE_EPS: f64 = 1e-6;
/// Maximizer spread beyond which the dual argmax is flagged non-unique.
const PROBE_SPREAD_TOL: f64 = 1e-5;

/// Outcome of the strict-dual-feasibility check.
#[derive(Debug, Clone)]
pub struct A2Report {
    pub holds: bool,
    /// Largest `lambda` with `q - W'u >= lambda I` for some `u`; `+inf`
    /// when the margin grows without bound (possible only when `M_D` is
    /// unbounded), `0`-ish when `M_D` has empty interior.
    pub margin: f64,
    /// Multiplier attaining the margin (empty when the margin is infinite).
    pub witness: Vec<f64>,
}

/// Outcome of the complete-recourse (compactness) check.
#[derive(Debug, Clone)]
pub struct A1Report {
    pub holds: bool,
    pub certificate: A1Certificate,
}

#[derive(Debug, Clone)]
pub enum A1Certificate {
    /// All `2s` recession-direction optima were below tolerance; the largest
    /// is recorded.
    BoundedDirections { max_abs: f64 },
    /// A nonzero recession direction of `M_D` (so `M_D` is unbounded and
    /// some right-hand sides are infeasible for the primal).
    RecessionDirection(Vec<f64>),
}

/// Dual maximizer at one evaluation point, with a uniqueness verdict.
#[derive(Debug, Clone)]
pub struct SubgradientInfo {
    /// A maximizer of `t'u` over `M_D`; a subgradient of `phi` at `t`.
    pub u: Vec<f64>,
    /// Whether the maximizer appears to be the whole argmax set.
    pub unique: bool,
    /// Distance between the maximizers of two opposite perturbed objectives
    /// (`t + eps r` and `t - eps r`); the basis for `unique`.
    pub spread: f64,
}

/// Verified wrapper around one problem's recourse data. Construction runs
/// the assumption checks and caches the margin, the compactness verdict,
/// and the Lipschitz bound; evaluation methods are pure and may run
/// concurrently.
#[derive(Debug, Clone)]
pub struct RecourseOracle {
    problem: ProblemData,
    opts: SolverOptions,
    a2: A2Report,
    a1: A1Report,
    lipschitz: f64,
}

/// The recourse primal `min { q.y : W.y = t, y PSD }` as a block SDP.
pub fn recourse_primal(q: &SymMatrix, w: &MatrixTuple, t: &[f64]) -> BlockSdp {
    assert_eq!(t.len(), w.len(), "right-hand side length mismatch");
    let mut b = BlockSdpBuilder::new();
    let y = b.add_psd_block(q.dim(), q.clone());
    for (wj, &tj) in w.blocks().iter().zip(t) {
        b.eq(RowExpr::new().psd(y, wj.clone()), tj);
    }
    b.finish().expect("recourse primal construction")
}

/// The recourse dual `max { t'u : q - W'u PSD }` in standard primal form
/// (minimize `-t'u` with an explicit slack block).
fn recourse_dual(q: &SymMatrix, w: &MatrixTuple, t: &[f64]) -> BlockSdp {
    assert_eq!(t.len(), w.len(), "objective length mismatch");
    let m = q.dim();
    let mut b = BlockSdpBuilder::new();
    let z = b.add_psd_block(m, SymMatrix::zeros(m));
    let u: Vec<_> = t.iter().map(|&tj| b.add_free(-tj)).collect();
    for p in 0..m {
        for qq in p..m {
            let mut expr = RowExpr::new().psd(z, SymMatrix::pairing_basis(m, p, qq));
            for (j, wj) in w.blocks().iter().enumerate() {
                let coeff = wj.get(p, qq);
                if coeff != 0.0 {
                    expr = expr.free(u[j], coeff);
                }
            }
            b.eq(expr, q.get(p, qq));
        }
    }
    b.finish().expect("recourse dual construction")
}

/// Strict dual feasibility: is there `u` with `q - W'u` positive definite?
pub fn check_a2(p: &ProblemData, opts: &SolverOptions) -> Result<A2Report, Error> {
    let primal = recourse_primal(&p.q, &p.w, &vec![0.0; p.s]);
    let rep = strict_feasibility_margin(&primal, Side::Dual, opts);
    if rep.margin.is_nan() {
        return Err(Error::solve_failed(
            rep.status,
            "strict dual feasibility margin",
        ));
    }
    Ok(A2Report {
        holds: rep.margin > A2_MARGIN_TOL,
        margin: rep.margin,
        witness: rep.witness,
    })
}

/// Complete recourse via the recession cone of `M_D`: maximize `+-v_i` over
/// `{ v : -W'v PSD, ||v||_inf <= 1 }` for every coordinate; all optima must
/// vanish. Callers are expected to have established strict dual feasibility
/// first (the equivalence with complete recourse is stated under it).
pub fn check_a1(p: &ProblemData, opts: &SolverOptions) -> Result<A1Report, Error> {
    let m = p.m;
    let s = p.s;
    let mut max_abs = 0.0f64;
    for i in 0..s {
        for sign in [1.0, -1.0] {
            let mut b = BlockSdpBuilder::new();
            let z = b.add_psd_block(m, SymMatrix::zeros(m));
            // maximize sign * v_i  <=>  minimize -sign * v_i
            let v: Vec<_> = (0..s)
                .map(|j| b.add_free(if j == i { -sign } else { 0.0 }))
                .collect();
            // Z = -W'v  entrywise.
            for pp in 0..m {
                for qq in pp..m {
                    let mut expr = RowExpr::new().psd(z, SymMatrix::pairing_basis(m, pp, qq));
                    for (j, wj) in p.w.blocks().iter().enumerate() {
                        let coeff = wj.get(pp, qq);
                        if coeff != 0.0 {
                            expr = expr.free(v[j], coeff);
                        }
                    }
                    b.eq(expr, 0.0);
                }
            }
            for j in 0..s {
                b.leq(RowExpr::new().free(v[j], 1.0), 1.0);
                b.leq(RowExpr::new().free(v[j], -1.0), 1.0);
            }
            let sdp = b.finish().expect("recession direction program");
            let sol = solve(&sdp, opts);
            if !sol.status.value_usable() {
                return Err(Error::solve_failed(
                    sol.status,
                    "recession direction program",
                ));
            }
            let opt = -sol.primal_objective; // max sign*v_i
            if opt > A1_DIRECTION_TOL {
                let dir: Vec<f64> = sol.free.clone();
                return Ok(A1Report {
                    holds: false,
                    certificate: A1Certificate::RecessionDirection(dir),
                });
            }
            max_abs = max_abs.max(opt.abs());
        }
    }
    Ok(A1Report {
        holds: true,
        certificate: A1Certificate::BoundedDirections { max_abs },
    })
}

/// Upper bound on `max { ||u|| : u in M_D }` by coordinatewise interval
/// bounding: `sqrt(s) * max_i max { |u_i| : u in M_D }`. Infinite when any
/// coordinate program is unbounded (complete recourse fails).
pub fn lipschitz_bound(p: &ProblemData, opts: &SolverOptions) -> Result<f64, Error> {
    let s = p.s;
    let mut coord_max = 0.0f64;
    for i in 0..s {
        for sign in [1.0, -1.0] {
            let mut t = vec![0.0; s];
            t[i] = sign;
            let sdp = recourse_dual(&p.q, &p.w, &t);
            let sol = solve(&sdp, opts);
            match sol.status {
                SdpStatus::DualInfeasible => return Ok(f64::INFINITY),
                st if st.value_usable() => {
                    coord_max = coord_max.max(-sol.primal_objective);
                }
                st => return Err(Error::solve_failed(st, "coordinate bound program")),
            }
        }
    }
    Ok((s as f64).sqrt() * coord_max.max(0.0))
}

impl RecourseOracle {
    /// Runs both assumption checks and the Lipschitz bound; fails with
    /// [`Error::AssumptionFailed`] if either assumption does not hold.
    pub fn verify(p: &ProblemData, opts: &SolverOptions) -> Result<Self, Error> {
        let a2 = check_a2(p, opts)?;
        if !a2.holds {
            return Err(Error::AssumptionFailed {
                name: "strict dual feasibility",
                detail: format!("margin {} not above {A2_MARGIN_TOL}", a2.margin),
            });
        }
        let a1 = check_a1(p, opts)?;
        if !a1.holds {
            let dir = match &a1.certificate {
                A1Certificate::RecessionDirection(v) => format!("{v:?}"),
                A1Certificate::BoundedDirections { .. } => unreachable!(),
            };
            return Err(Error::AssumptionFailed {
                name: "complete recourse",
                detail: format!("dual feasible set has recession direction {dir}"),
            });
        }
        let lipschitz = lipschitz_bound(p, opts)?;
        Ok(RecourseOracle {
            problem: p.clone(),
            opts: opts.clone(),
            a2,
            a1,
            lipschitz,
        })
    }

    /// Runs the checks but constructs the oracle regardless of the verdicts,
    /// for deliberate study of degenerate instances. The reports stay
    /// available through [`RecourseOracle::a2_report`] /
    /// [`RecourseOracle::a1_report`].
    pub fn with_override(p: &ProblemData, opts: &SolverOptions) -> Result<Self, Error> {
        let a2 = check_a2(p, opts)?;
        let a1 = check_a1(p, opts)?;
        let lipschitz = lipschitz_bound(p, opts)?;
        Ok(RecourseOracle {
            problem: p.clone(),
            opts: opts.clone(),
            a2,
            a1,
            lipschitz,
        })
    }

    pub fn problem(&self) -> &ProblemData {
        &self.problem
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    pub fn a2_report(&self) -> &A2Report {
        &self.a2
    }

    pub fn a1_report(&self) -> &A1Report {
        &self.a1
    }

    pub fn assumptions_hold(&self) -> bool {
        self.a2.holds && self.a1.holds
    }

    /// Cached upper bound on the Lipschitz constant of `phi` (see
    /// [`lipschitz_bound`]); a bound, not the exact constant.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn solve_dual(&self, t: &[f64]) -> Result<(f64, Vec<f64>), Error> {
        let sdp = recourse_dual(&self.problem.q, &self.problem.w, t);
        let sol = solve(&sdp, &self.opts);
        if !sol.status.value_usable() {
            return Err(Error::solve_failed(
                sol.status,
                format!("recourse dual at t = {t:?}"),
            ));
        }
        Ok((-sol.primal_objective, sol.free))
    }

    /// `phi(t)` alone (one solve, no uniqueness probing).
    pub fn phi(&self, t: &[f64]) -> Result<f64, Error> {
        self.solve_dual(t).map(|(v, _)| v)
    }

    /// `phi(t)` with a dual maximizer (a subgradient), one solve.
    pub fn phi_with_dual(&self, t: &[f64]) -> Result<(f64, Vec<f64>), Error> {
        self.solve_dual(t)
    }

    /// `phi(t)` together with a subgradient and a uniqueness verdict.
    ///
    /// Uniqueness is probed, not proven: the dual is re-solved with the
    /// objective tilted to `t + eps r` and `t - eps r` for one fixed random
    /// direction `r`; a maximizer spread beyond `1e-5` flags a non-singleton
    /// argmax. Costs three solves.
    pub fn eval_phi(&self, t: &[f64]) -> Result<(f64, SubgradientInfo), Error> {
        let (value, u) = self.solve_dual(t)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
        let r: Vec<f64> = (0..t.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let plus: Vec<f64> = t.iter().zip(&r).map(|(a, b)| a + PROBE_EPS * b).collect();
        let minus: Vec<f64> = t.iter().zip(&r).map(|(a, b)| a - PROBE_EPS * b).collect();
        let (_, up) = self.solve_dual(&plus)?;
        let (_, um) = self.solve_dual(&minus)?;
        let spread = up
            .iter()
            .zip(&um)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        Ok((
            value,
            SubgradientInfo {
                u,
                unique: spread <= PROBE_SPREAD_TOL,
                spread,
            },
        ))
    }

    /// Total cost `f(x, z) = c.x + phi(z - T.x)`.
    pub fn eval_f(&self, x: &SymMatrix, z: &[f64]) -> Result<f64, Error> {
        let t = self.residual(x, z)?;
        Ok(self.problem.c.dot(x) + self.phi(&t)?)
    }

    /// Residual right-hand side `z - T.x`.
    pub fn residual(&self, x: &SymMatrix, z: &[f64]) -> Result<Vec<f64>, Error> {
        if z.len() != self.problem.s {
            return Err(Error::InvalidInput(format!(
                "support vector has length {}, expected {}",
                z.len(),
                self.problem.s
            )));
        }
        let tx = frobenius_pair(&self.problem.t, x).map_err(Error::Model)?;
        Ok(z.iter().zip(&tx).map(|(zi, ti)| zi - ti).collect())
    }

    /// One subgradient of the expected total cost
    /// `Q_E(x) = c.x + sum_i pi_i phi(z_i - T.x)`:
    /// `g = c - sum_i pi_i * (sum_j (u_i)_j T_j)` with `u_i` a dual
    /// maximizer at scenario `i`'s residual. A selection from the
    /// subdifferential; with non-unique maximizers other selections exist.
    pub fn subgrad_qe(&self, scen: &ScenarioSet, x: &SymMatrix) -> Result<SymMatrix, Error> {
        let mut g = self.problem.c.clone().into_dmatrix();
        for sc in scen.scenarios() {
            let t = self.residual(x, &sc.z)?;
            let (_, u) = self.solve_dual(&t)?;
            g -= self.problem.w_adjoint_t(&u).as_dmatrix() * sc.pi;
        }
        Ok(SymMatrix::symmetric_part(&g))
    }
}

impl ProblemData {
    /// `sum_j u_j T_j` (the first-stage pullback of a dual vector).
    fn w_adjoint_t(&self, u: &[f64]) -> SymMatrix {
        self.t.adjoint_apply(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Scenario, Spectrahedron};

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    /// q = I2, W = (diag(1,-1)), 1-dim right-hand side; M_D = [-1, 1] and
    /// phi(t) = |t|.
    fn diag_problem() -> ProblemData {
        ProblemData {
            n: 1,
            m: 2,
            s: 1,
            c: SymMatrix::zeros(1),
            q: SymMatrix::identity(2),
            t: MatrixTuple::new(vec![SymMatrix::zeros(1)]).unwrap(),
            w: MatrixTuple::new(vec![SymMatrix::from_diagonal(&[1.0, -1.0])]).unwrap(),
            x_set: Spectrahedron::trace_ball(1, 1.0),
        }
    }

    /// The boundary instance: q = [[1,0],[0,0]], W = ([[0,.5],[.5,0]]);
    /// M_D = {0}, phi == 0, primal non-attained for t != 0.
    fn boundary_problem() -> ProblemData {
        ProblemData {
            n: 1,
            m: 2,
            s: 1,
            c: SymMatrix::zeros(1),
            q: SymMatrix::new(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap(),
            t: MatrixTuple::new(vec![SymMatrix::zeros(1)]).unwrap(),
            w: MatrixTuple::new(vec![
                SymMatrix::new(&[vec![0.0, 0.5], vec![0.5, 0.0]]).unwrap()
            ])
            .unwrap(),
            x_set: Spectrahedron::zero_point(1),
        }
    }

    #[test]
    fn a2_diag_holds_with_unit_margin() {
        let rep = check_a2(&diag_problem(), &opts()).unwrap();
        assert!(rep.holds);
        assert!((rep.margin - 1.0).abs() < 1e-6, "margin {}", rep.margin);
        assert!(rep.witness[0].abs() < 1e-5);
    }

    #[test]
    fn a2_boundary_fails_at_zero_margin() {
        let rep = check_a2(&boundary_problem(), &opts()).unwrap();
        assert!(!rep.holds);
        assert!(rep.margin.abs() < 1e-6, "margin {}", rep.margin);
    }

    /// A zero cost matrix can never be made positive definite when the
    /// span of W misses it entirely (W = 0), or when every q - W'u keeps a
    /// zero diagonal.
    #[test]
    fn a2_zero_cost_failures() {
        let mut p = diag_problem();
        p.q = SymMatrix::zeros(2);
        p.w = MatrixTuple::new(vec![SymMatrix::zeros(2)]).unwrap();
        let rep = check_a2(&p, &opts()).unwrap();
        assert!(!rep.holds, "margin {}", rep.margin);

        p.w = MatrixTuple::new(vec![
            SymMatrix::new(&[vec![0.0, 0.5], vec![0.5, 0.0]]).unwrap()
        ])
        .unwrap();
        let rep = check_a2(&p, &opts()).unwrap();
        assert!(!rep.holds, "margin {}", rep.margin);
    }

    #[test]
    fn a1_diag_holds() {
        let rep = check_a1(&diag_problem(), &opts()).unwrap();
        assert!(rep.holds);
        match rep.certificate {
            A1Certificate::BoundedDirections { max_abs } => assert!(max_abs <= A1_DIRECTION_TOL),
            _ => panic!("expected bounded directions"),
        }
    }

    #[test]
    fn a1_boundary_holds_since_dual_set_is_a_point() {
        let rep = check_a1(&boundary_problem(), &opts()).unwrap();
        assert!(rep.holds);
    }

    /// W = (I_m): M_D = (-inf, lambda_min(q)] is unbounded; the recession
    /// test must produce the direction v = (-1).
    #[test]
    fn a1_identity_block_fails() {
        let p = ProblemData {
            n: 1,
            m: 2,
            s: 1,
            c: SymMatrix::zeros(1),
            q: SymMatrix::identity(2),
            t: MatrixTuple::new(vec![SymMatrix::zeros(1)]).unwrap(),
            w: MatrixTuple::new(vec![SymMatrix::identity(2)]).unwrap(),
            x_set: Spectrahedron::trace_ball(1, 1.0),
        };
        assert!(check_a2(&p, &opts()).unwrap().holds);
        let rep = check_a1(&p, &opts()).unwrap();
        assert!(!rep.holds);
        match rep.certificate {
            A1Certificate::RecessionDirection(v) => {
                assert!(v[0] < -0.9, "direction {v:?}");
            }
            _ => panic!("expected a recession direction"),
        }
    }

    #[test]
    fn oracle_verify_gates_on_assumptions() {
        assert!(RecourseOracle::verify(&diag_problem(), &opts()).is_ok());
        let err = RecourseOracle::verify(&boundary_problem(), &opts()).unwrap_err();
        assert!(matches!(
            err,
            Error::AssumptionFailed {
                name: "strict dual feasibility",
                ..
            }
        ));
    }

    #[test]
    fn phi_diag_is_absolute_value() {
        let o = RecourseOracle::verify(&diag_problem(), &opts()).unwrap();
        let (v, sub) = o.eval_phi(&[3.0]).unwrap();
        assert!((v - 3.0).abs() < 1e-6, "value {v}");
        assert!((sub.u[0] - 1.0).abs() < 1e-5, "u {:?}", sub.u);
        assert!(sub.unique);

        let (v0, sub0) = o.eval_phi(&[0.0]).unwrap();
        assert!(v0.abs() < 1e-7, "value {v0}");
        assert!(!sub0.unique, "spread {}", sub0.spread);

        let (vneg, subneg) = o.eval_phi(&[-2.0]).unwrap();
        assert!((vneg - 2.0).abs() < 1e-6);
        assert!((subneg.u[0] + 1.0).abs() < 1e-5);
    }

    #[test]
    fn phi_boundary_is_zero_via_dual() {
        let o = RecourseOracle::with_override(&boundary_problem(), &opts()).unwrap();
        assert!(!o.assumptions_hold());
        for t in [0.0, 1.0, 5.0, -3.0] {
            let (v, sub) = o.eval_phi(&[t]).unwrap();
            assert!(v.abs() < 1e-6, "phi({t}) = {v}");
            assert!(sub.u[0].abs() < 1e-5, "u {:?}", sub.u);
        }
    }

    #[test]
    fn lipschitz_bounds() {
        let o = RecourseOracle::verify(&diag_problem(), &opts()).unwrap();
        assert!(
            (o.lipschitz() - 1.0).abs() < 1e-6,
            "bound {}",
            o.lipschitz()
        );

        let mut doubled = diag_problem();
        doubled.w = MatrixTuple::new(vec![SymMatrix::from_diagonal(&[2.0, -2.0])]).unwrap();
        let o2 = RecourseOracle::verify(&doubled, &opts()).unwrap();
        assert!(
            (o2.lipschitz() - 0.5).abs() < 1e-6,
            "bound {}",
            o2.lipschitz()
        );

        let ob = RecourseOracle::with_override(&boundary_problem(), &opts()).unwrap();
        assert!(ob.lipschitz().abs() < 1e-6, "bound {}", ob.lipschitz());
    }

    #[test]
    fn eval_f_composes_cost_and_recourse() {
        // c = 0, T = 0: f(x, z) = phi(z) = |z|.
        let o = RecourseOracle::verify(&diag_problem(), &opts()).unwrap();
        let x = SymMatrix::zeros(1);
        assert!((o.eval_f(&x, &[2.0]).unwrap() - 2.0).abs() < 1e-6);
        assert!(o.eval_f(&x, &[0.0]).unwrap().abs() < 1e-7);

        // c = I2, x = I2, T = 0, diag recourse on z = (2): 2 + 2.
        let p = ProblemData {
            n: 2,
            m: 2,
            s: 1,
            c: SymMatrix::identity(2),
            q: SymMatrix::identity(2),
            t: MatrixTuple::new(vec![SymMatrix::zeros(2)]).unwrap(),
            w: MatrixTuple::new(vec![SymMatrix::from_diagonal(&[1.0, -1.0])]).unwrap(),
            x_set: Spectrahedron::trace_ball(2, 2.0),
        };
        let o2 = RecourseOracle::verify(&p, &opts()).unwrap();
        let f = o2.eval_f(&SymMatrix::identity(2), &[2.0]).unwrap();
        assert!((f - 4.0).abs() < 1e-6, "f = {f}");
    }

    #[test]
    fn subgrad_matches_hand_cases() {
        // T = 0: g = c.
        let mut p = diag_problem();
        p.c = SymMatrix::from_diagonal(&[0.7]);
        let o = RecourseOracle::verify(&p, &opts()).unwrap();
        let scen = ScenarioSet::new(vec![Scenario {
            pi: 1.0,
            z: vec![2.0],
        }])
        .unwrap();
        let g = o.subgrad_qe(&scen, &SymMatrix::zeros(1)).unwrap();
        assert!((g.get(0, 0) - 0.7).abs() < 1e-6);

        // T = (I_1), residual positive: u = 1, g = c - T_1.
        let mut p2 = diag_problem();
        p2.c = SymMatrix::from_diagonal(&[0.7]);
        p2.t = MatrixTuple::new(vec![SymMatrix::identity(1)]).unwrap();
        let o2 = RecourseOracle::verify(&p2, &opts()).unwrap();
        let g2 = o2
            .subgrad_qe(&scen, &SymMatrix::from_diagonal(&[0.5]))
            .unwrap();
        assert!(
            (g2.get(0, 0) - (0.7 - 1.0)).abs() < 1e-5,
            "g {}",
            g2.get(0, 0)
        );

        // Two equiprobable scenarios with opposite residual signs cancel.
        let scen2 = ScenarioSet::new(vec![
            Scenario {
                pi: 0.5,
                z: vec![3.0],
            },
            Scenario {
                pi: 0.5,
                z: vec![-3.0],
            },
        ])
        .unwrap();
        let g3 = o2
            .subgrad_qe(&scen2, &SymMatrix::from_diagonal(&[0.5]))
            .unwrap();
        assert!((g3.get(0, 0) - 0.7).abs() < 1e-5, "g {}", g3.get(0, 0));
    }
}
