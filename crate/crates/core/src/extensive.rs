//! Deterministic-equivalent ("extensive form") builders.
//!
//! Each builder flattens the two-stage problem over a finite scenario set
//! into one block SDP: an `n`-dim PSD block for the first stage, one `m`-dim
//! PSD block per scenario, the coupling rows `T.x + W.y_i = z_i`, and the
//! risk functional's epigraph machinery (excess scalars, a quantile scalar,
//! a semideviation cone, or selection binaries). Inequalities are realized
//! as equalities with fresh nonnegative slack scalars so the SDP stays in
//! pure standard form.
//!
//! The value-at-risk form is mixed-binary; it is built here (with its big-M
//! constant) but solved in `decompose`. Everything else solves directly via
//! [`solve_extensive`].

use crate::error::Error;
use crate::model::{validate_problem, ProblemData, ScenarioSet, SymMatrix};
use crate::recourse::lipschitz_bound;
use crate::risk::RiskSpec;
use crate::sdp::{
    solve, BlockSdp, BlockSdpBuilder, PsdVar, RowExpr, SdpSolution, SdpStatus, SdpaMeta,
    SolverOptions,
};

/// Where a logical variable landed in the flattened SDP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarLoc {
    PsdBlock(usize),
    Free(usize),
    Nonneg(usize),
}

/// The logical roles of variables in an extensive form. Scenario-indexed
/// roles carry the scenario number; `Slack(k)` is the nonnegative scalar
/// with index `k` introduced to close an inequality row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarRole {
    /// First-stage decision, one PSD block of dimension `n`.
    X,
    /// Second-stage decision for scenario `i`, PSD of dimension `m`.
    Y(usize),
    /// Excess / semideviation scalar for scenario `i` (nonnegative).
    V(usize),
    /// Quantile scalar (free).
    Eta,
    /// Semideviation epigraph scalar (free, order-2 form only).
    W,
    /// Epigraph cone block `[[w, a'], [a, w I]]` (order-2 form only).
    SemidevCone,
    /// Scenario-selection indicator for scenario `i` (nonnegative, binary
    /// by intent; integrality is enforced in `decompose`).
    Delta(usize),
    /// Slack scalar closing one inequality row.
    Slack(usize),
}

/// Bijection between [`VarRole`]s and the variables of the flattened SDP.
#[derive(Debug, Clone, Default)]
pub struct VarMap {
    entries: Vec<(VarRole, VarLoc)>,
}

impl VarMap {
    fn push(&mut self, role: VarRole, loc: VarLoc) {
        debug_assert!(self.loc(role).is_none(), "duplicate role {role:?}");
        self.entries.push((role, loc));
    }

    pub fn entries(&self) -> &[(VarRole, VarLoc)] {
        &self.entries
    }

    pub fn loc(&self, role: VarRole) -> Option<VarLoc> {
        self.entries
            .iter()
            .find(|(r, _)| *r == role)
            .map(|(_, l)| *l)
    }

    /// Checks the bijection invariant against the finished SDP: every
    /// variable of every kind is mapped exactly once.
    pub fn is_bijection(&self, sdp: &BlockSdp) -> bool {
        let mut psd = vec![false; sdp.n_psd_blocks()];
        let mut free = vec![false; sdp.n_free()];
        let mut nonneg = vec![false; sdp.n_nonneg()];
        for (_, loc) in &self.entries {
            let seen = match loc {
                VarLoc::PsdBlock(b) => psd.get_mut(*b),
                VarLoc::Free(i) => free.get_mut(*i),
                VarLoc::Nonneg(i) => nonneg.get_mut(*i),
            };
            match seen {
                Some(flag) if !*flag => *flag = true,
                _ => return false,
            }
        }
        psd.into_iter().chain(free).chain(nonneg).all(|f| f)
    }
}

/// A flattened deterministic equivalent, ready to solve (or, with binaries,
/// to hand to branch-and-bound).
#[derive(Debug, Clone)]
pub struct ExtensiveForm {
    pub sdp: BlockSdp,
    /// Indices of nonnegative scalars constrained to `{0, 1}` by intent.
    /// Nonempty only for the value-at-risk form; the SDP itself only
    /// enforces `[0, 1]`.
    pub binary_indices: Vec<usize>,
    pub var_map: VarMap,
    /// The big-M constant used in the value-at-risk rows.
    pub big_m: Option<f64>,
}

impl ExtensiveForm {
    /// Sidecar metadata for an SDPA export of `self.sdp`: the scalar-block
    /// layout plus the selection structure the file format cannot express.
    pub fn sdpa_meta(&self) -> SdpaMeta {
        let mut meta = SdpaMeta::from_problem(&self.sdp);
        meta.binary_indices = self.binary_indices.clone();
        meta.big_m = self.big_m;
        meta
    }
}

/// How the big-M constant for the value-at-risk form was obtained.
#[derive(Debug, Clone)]
pub struct BigMReport {
    pub m: f64,
    /// Per scenario: `(LB_i, UB_i)` bracketing the second-stage cost
    /// `q.y_i` over the coupled feasible region.
    pub per_scenario_bounds: Vec<(f64, f64)>,
    /// Human-readable derivation trace.
    pub method: String,
}

/// Solution of a (binary-free) extensive form.
#[derive(Debug, Clone)]
pub struct ExtensiveSolution {
    pub status: SdpStatus,
    pub value: f64,
    pub x: SymMatrix,
    /// Realized second-stage costs `q.y_i`.
    pub per_scenario_costs: Vec<f64>,
    pub eta: Option<f64>,
    pub delta: Option<Vec<f64>>,
    pub v: Option<Vec<f64>>,
    /// The raw SDP solution the fields above were extracted from.
    pub raw: SdpSolution,
}

struct Scaffold {
    b: BlockSdpBuilder,
    x: PsdVar,
    y: Vec<PsdVar>,
    map: VarMap,
}

impl Scaffold {
    /// Shared skeleton: first-stage block (with cost `x_cost`), one
    /// recourse block per scenario (cost `pi_i * q`), coupling rows, and
    /// the first-stage set's rows.
    fn new(p: &ProblemData, scen: &ScenarioSet, x_cost: SymMatrix) -> Result<Self, Error> {
        Scaffold::with_costs(p, scen, x_cost, 1.0)
    }

    /// Like [`Scaffold::new`] but scaling every recourse block's objective
    /// by `y_weight` (zero for objectives whose mean term is absent).
    fn with_costs(
        p: &ProblemData,
        scen: &ScenarioSet,
        x_cost: SymMatrix,
        y_weight: f64,
    ) -> Result<Self, Error> {
        let report = validate_problem(p, scen);
        if !report.is_ok() {
            return Err(Error::InvalidProblem(report.to_string()));
        }
        let mut b = BlockSdpBuilder::new();
        let mut map = VarMap::default();
        let x = b.add_psd_block(p.n, x_cost);
        map.push(VarRole::X, VarLoc::PsdBlock(0));
        let y: Vec<PsdVar> = scen
            .scenarios()
            .iter()
            .enumerate()
            .map(|(i, sc)| {
                let v = b.add_psd_block(p.m, p.q.scale(y_weight * sc.pi));
                map.push(VarRole::Y(i), VarLoc::PsdBlock(1 + i));
                v
            })
            .collect();
        for (i, sc) in scen.scenarios().iter().enumerate() {
            for j in 0..p.s {
                let expr = RowExpr::new()
                    .psd(x, p.t.block(j).clone())
                    .psd(y[i], p.w.block(j).clone());
                b.eq(expr, sc.z[j]);
            }
        }
        let mut sc = Scaffold { b, x, y, map };
        sc.first_stage_rows(p);
        Ok(sc)
    }

    fn first_stage_rows(&mut self, p: &ProblemData) {
        for (g, rhs) in &p.x_set.eq {
            self.b.eq(RowExpr::new().psd(self.x, g.clone()), *rhs);
        }
        for (h, rhs) in &p.x_set.ineq {
            let slack = self.b.leq(RowExpr::new().psd(self.x, h.clone()), *rhs);
            self.map
                .push(VarRole::Slack(slack.0), VarLoc::Nonneg(slack.0));
        }
        if let Some(cap) = p.x_set.trace_cap {
            let slack = self.b.leq(
                RowExpr::new().psd(self.x, SymMatrix::identity(p.dim_x())),
                cap,
            );
            self.map
                .push(VarRole::Slack(slack.0), VarLoc::Nonneg(slack.0));
        }
    }

    fn leq(&mut self, expr: RowExpr, rhs: f64) {
        let slack = self.b.leq(expr, rhs);
        self.map
            .push(VarRole::Slack(slack.0), VarLoc::Nonneg(slack.0));
    }

    fn geq(&mut self, expr: RowExpr, rhs: f64) {
        let slack = self.b.geq(expr, rhs);
        self.map
            .push(VarRole::Slack(slack.0), VarLoc::Nonneg(slack.0));
    }

    fn finish(
        self,
        binary_indices: Vec<usize>,
        big_m: Option<f64>,
    ) -> Result<ExtensiveForm, Error> {
        let sdp = self.b.finish()?;
        let form = ExtensiveForm {
            sdp,
            binary_indices,
            var_map: self.map,
            big_m,
        };
        debug_assert!(
            form.var_map.is_bijection(&form.sdp),
            "role map is not a bijection"
        );
        Ok(form)
    }
}

impl ProblemData {
    fn dim_x(&self) -> usize {
        self.n
    }
}

fn check_rho(rho: f64) -> Result<(), Error> {
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "risk weight rho = {rho} must be >= 0"
        )));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<(), Error> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!(
            "level alpha = {alpha} must lie in (0, 1)"
        )));
    }
    Ok(())
}

/// `min c.x + sum_i pi_i q.y_i` subject to the coupling rows and `x in X`.
pub fn build_risk_neutral(p: &ProblemData, scen: &ScenarioSet) -> Result<ExtensiveForm, Error> {
    Scaffold::new(p, scen, p.c.clone())?.finish(Vec::new(), None)
}

/// Expected-excess form: adds `rho * sum_i pi_i v_i` to the risk-neutral
/// objective with `v_i >= c.x + q.y_i - eta`, `v >= 0`.
///
/// With `rho = 0` the excess term vanishes; the `v_i` are kept for shape
/// stability but pinned to zero and the excess rows are dropped (they would
/// otherwise carry a zero-cost unbounded ray that has no interior).
pub fn build_ee(
    p: &ProblemData,
    scen: &ScenarioSet,
    eta: f64,
    rho: f64,
) -> Result<ExtensiveForm, Error> {
    check_rho(rho)?;
    if !eta.is_finite() {
        return Err(Error::InvalidInput(format!(
            "excess target eta = {eta} must be finite"
        )));
    }
    let mut sc = Scaffold::new(p, scen, p.c.clone())?;
    let pis = scen.probabilities();
    for (i, pi) in pis.iter().enumerate() {
        let v = sc.b.add_nonneg(rho * pi);
        sc.map.push(VarRole::V(i), VarLoc::Nonneg(v.0));
        if rho == 0.0 {
            sc.b.eq(RowExpr::new().nonneg(v, 1.0), 0.0);
        } else {
            let expr = RowExpr::new()
                .psd(sc.x, p.c.clone())
                .psd(sc.y[i], p.q.clone())
                .nonneg(v, -1.0);
            sc.leq(expr, eta);
        }
    }
    sc.finish(Vec::new(), None)
}

/// Conditional-value-at-risk form: free quantile `eta` (cost `rho`),
/// excesses `v_i` (cost `rho pi_i / (1 - alpha)`), rows
/// `v_i >= c.x + q.y_i - eta`.
///
/// `rho = 0` pins `eta` and the `v_i` to zero and drops the excess rows,
/// for the same degeneracy reason as [`build_ee`].
pub fn build_cvar(
    p: &ProblemData,
    scen: &ScenarioSet,
    alpha: f64,
    rho: f64,
) -> Result<ExtensiveForm, Error> {
    check_alpha(alpha)?;
    check_rho(rho)?;
    let mut sc = Scaffold::new(p, scen, p.c.clone())?;
    let eta = sc.b.add_free(rho);
    sc.map.push(VarRole::Eta, VarLoc::Free(eta.0));
    if rho == 0.0 {
        sc.b.eq(RowExpr::new().free(eta, 1.0), 0.0);
    }
    let pis = scen.probabilities();
    for (i, pi) in pis.iter().enumerate() {
        let v = sc.b.add_nonneg(rho * pi / (1.0 - alpha));
        sc.map.push(VarRole::V(i), VarLoc::Nonneg(v.0));
        if rho == 0.0 {
            sc.b.eq(RowExpr::new().nonneg(v, 1.0), 0.0);
        } else {
            let expr = RowExpr::new()
                .psd(sc.x, p.c.clone())
                .psd(sc.y[i], p.q.clone())
                .free(eta, -1.0)
                .nonneg(v, -1.0);
            sc.leq(expr, 0.0);
        }
    }
    sc.finish(Vec::new(), None)
}

/// Pure conditional-value-at-risk objective `CVaR_alpha(c.x + phi)`, with
/// no mean term: free quantile `eta` (cost 1), excesses `v_i` (cost
/// `pi_i / (1 - alpha)`), rows `v_i >= c.x + q.y_i - eta`.
///
/// The recourse blocks carry no objective weight of their own; scenarios in
/// the tail are still priced through their excess rows, and the rest are
/// only cost-bounded (their blocks may wander on the optimal face without
/// moving the value).
pub fn build_cvar_pure(
    p: &ProblemData,
    scen: &ScenarioSet,
    alpha: f64,
) -> Result<ExtensiveForm, Error> {
    check_alpha(alpha)?;
    let mut sc = Scaffold::with_costs(p, scen, SymMatrix::zeros(p.n), 0.0)?;
    let eta = sc.b.add_free(1.0);
    sc.map.push(VarRole::Eta, VarLoc::Free(eta.0));
    let pis = scen.probabilities();
    for (i, pi) in pis.iter().enumerate() {
        let v = sc.b.add_nonneg(pi / (1.0 - alpha));
        sc.map.push(VarRole::V(i), VarLoc::Nonneg(v.0));
        let expr = RowExpr::new()
            .psd(sc.x, p.c.clone())
            .psd(sc.y[i], p.q.clone())
            .free(eta, -1.0)
            .nonneg(v, -1.0);
        sc.leq(expr, 0.0);
    }
    sc.finish(Vec::new(), None)
}

/// Value-at-risk form (mixed binary): objective
/// `(1 + rho) c.x + sum_i pi_i q.y_i + rho eta`, scenario selectors
/// `delta_i in {0, 1}` with `sum_i pi_i delta_i >= alpha`, and big-M rows
/// `q.y_i - eta <= (1 - delta_i) M` so that `delta_i = 1` forces
/// `q.y_i <= eta`.
///
/// `literal` reproduces the printed inequality `eta - q.y_i >= (1 - delta_i) M`
/// instead, which forces `eta` above `q.y_i + M` on unselected scenarios;
/// it is kept for comparison, not for use.
///
/// `rho = 0` erases `eta` from the objective, so the selection machinery is
/// vacuous; the builder pins `delta_i = 1` and `eta = 0` and omits the
/// knapsack and big-M rows.
pub fn build_var(
    p: &ProblemData,
    scen: &ScenarioSet,
    alpha: f64,
    rho: f64,
    literal: bool,
    opts: &SolverOptions,
) -> Result<ExtensiveForm, Error> {
    check_alpha(alpha)?;
    check_rho(rho)?;
    if !p.x_set.is_compact() {
        return Err(Error::InvalidInput(
            "value-at-risk form needs a compact first-stage set (trace cap missing)".into(),
        ));
    }
    let mut sc = Scaffold::new(p, scen, p.c.scale(1.0 + rho))?;
    let eta = sc.b.add_free(rho);
    sc.map.push(VarRole::Eta, VarLoc::Free(eta.0));
    let mut deltas = Vec::with_capacity(scen.len());
    let mut binary_indices = Vec::with_capacity(scen.len());
    for i in 0..scen.len() {
        let d = sc.b.add_nonneg(0.0);
        sc.map.push(VarRole::Delta(i), VarLoc::Nonneg(d.0));
        binary_indices.push(d.0);
        deltas.push(d);
    }
    if rho == 0.0 {
        sc.b.eq(RowExpr::new().free(eta, 1.0), 0.0);
        for d in &deltas {
            sc.b.eq(RowExpr::new().nonneg(*d, 1.0), 1.0);
        }
        return sc.finish(binary_indices, None);
    }
    let report = compute_big_m(p, scen, opts)?;
    let m = report.m;
    for (i, d) in deltas.iter().enumerate() {
        sc.leq(RowExpr::new().nonneg(*d, 1.0), 1.0);
        if literal {
            // Printed form: eta - q.y_i >= (1 - delta_i) M.
            let expr = RowExpr::new()
                .free(eta, 1.0)
                .psd(sc.y[i], p.q.scale(-1.0))
                .nonneg(*d, m);
            sc.geq(expr, m);
        } else {
            // q.y_i - eta + M delta_i <= M.
            let expr = RowExpr::new()
                .psd(sc.y[i], p.q.clone())
                .free(eta, -1.0)
                .nonneg(*d, m);
            sc.leq(expr, m);
        }
    }
    let knapsack = scen
        .probabilities()
        .iter()
        .zip(&deltas)
        .fold(RowExpr::new(), |expr, (pi, d)| expr.nonneg(*d, *pi));
    sc.geq(knapsack, alpha);
    sc.finish(binary_indices, Some(m))
}

/// Mean-upper-semideviation form of order `pp`:
/// `c.x + sum pi_i q.y_i + rho * (sum pi_i v_i^pp)^(1/pp)` with
/// `v_i >= q.y_i - sum_j pi_j q.y_j` (the deviation of scenario `i`'s cost
/// from the mean; the first-stage cost cancels in the centering and is
/// dropped). Order 2 introduces the epigraph scalar `w` and the cone block
/// `[[w, a'], [a, w I_S]] >= 0` with `a_i = sqrt(pi_i) v_i`, which is PSD
/// exactly when `w >= sqrt(sum pi_i v_i^2)`.
///
/// `literal` keeps the printed centering rows
/// `v_i >= c.x + q.y_i - sum_j pi_j q.y_j` (first-stage cost retained).
///
/// `rho = 0` pins `v_i = 0`, drops the centering rows, and omits the
/// order-2 cone block (a zero-pinned PSD block has no interior).
pub fn build_mad(
    p: &ProblemData,
    scen: &ScenarioSet,
    pp: u8,
    rho: f64,
    literal: bool,
) -> Result<ExtensiveForm, Error> {
    if pp != 1 && pp != 2 {
        return Err(Error::InvalidInput(format!(
            "semideviation order pp = {pp} must be 1 or 2"
        )));
    }
    check_rho(rho)?;
    let mut sc = Scaffold::new(p, scen, p.c.clone())?;
    let pis = scen.probabilities();
    let s_count = scen.len();
    let mut vs = Vec::with_capacity(s_count);
    for (i, pi) in pis.iter().enumerate() {
        let v_cost = if rho == 0.0 || pp == 2 { 0.0 } else { rho * pi };
        let v = sc.b.add_nonneg(v_cost);
        sc.map.push(VarRole::V(i), VarLoc::Nonneg(v.0));
        vs.push(v);
    }
    if rho == 0.0 {
        for v in &vs {
            sc.b.eq(RowExpr::new().nonneg(*v, 1.0), 0.0);
        }
        return sc.finish(Vec::new(), None);
    }
    for i in 0..s_count {
        // v_i >= (q.y_i) - sum_j pi_j (q.y_j)  [+ c.x when literal].
        let mut expr = RowExpr::new().nonneg(vs[i], -1.0);
        if literal {
            expr = expr.psd(sc.x, p.c.clone());
        }
        for (j, pi_j) in pis.iter().enumerate() {
            let coeff = p.q.scale(if i == j { 1.0 - pi_j } else { -pi_j });
            expr = expr.psd(sc.y[j], coeff);
        }
        sc.leq(expr, 0.0);
    }
    if pp == 2 {
        let w = sc.b.add_free(rho);
        sc.map.push(VarRole::W, VarLoc::Free(w.0));
        let dim = s_count + 1;
        let cone = sc.b.add_psd_block(dim, SymMatrix::zeros(dim));
        sc.map
            .push(VarRole::SemidevCone, VarLoc::PsdBlock(1 + s_count));
        for r in 0..dim {
            for c in r..dim {
                let mut expr = RowExpr::new().psd(cone, SymMatrix::pairing_basis(dim, r, c));
                if r == c {
                    expr = expr.free(w, -1.0);
                } else if r == 0 {
                    expr = expr.nonneg(vs[c - 1], -pis[c - 1].sqrt());
                }
                sc.b.eq(expr, 0.0);
            }
        }
    }
    sc.finish(Vec::new(), None)
}

/// Big-M derivation for the value-at-risk rows. Per scenario, `LB_i` is the
/// exact minimum of `q.y_i` over the coupled feasible region (one SDP);
/// `UB_i` bounds the optimal second-stage cost through the dual:
/// `phi(z_i - T.x) <= Lhat (||z_i|| + ||T|| R_X)` with `R_X` the trace cap
/// (`||x||_F <= tr x` on the PSD cone). `M = max_i UB_i - min_i LB_i + 1`.
pub fn compute_big_m(
    p: &ProblemData,
    scen: &ScenarioSet,
    opts: &SolverOptions,
) -> Result<BigMReport, Error> {
    let Some(cap) = p.x_set.trace_cap else {
        return Err(Error::InvalidInput(
            "big-M derivation needs a compact first-stage set (trace cap missing)".into(),
        ));
    };
    let lhat = lipschitz_bound(p, opts)?;
    if !lhat.is_finite() {
        return Err(Error::AssumptionFailed {
            name: "complete recourse",
            detail: "dual feasible set unbounded; no finite big-M exists".into(),
        });
    }
    let t_norm = p.t.operator_norm_bound();
    let mut bounds = Vec::with_capacity(scen.len());
    for (i, sc) in scen.scenarios().iter().enumerate() {
        let z_norm = sc.z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ub = lhat * (z_norm + t_norm * cap);

        let mut b = BlockSdpBuilder::new();
        let x = b.add_psd_block(p.n, SymMatrix::zeros(p.n));
        let y = b.add_psd_block(p.m, p.q.clone());
        for j in 0..p.s {
            b.eq(
                RowExpr::new()
                    .psd(x, p.t.block(j).clone())
                    .psd(y, p.w.block(j).clone()),
                sc.z[j],
            );
        }
        for (g, rhs) in &p.x_set.eq {
            b.eq(RowExpr::new().psd(x, g.clone()), *rhs);
        }
        for (h, rhs) in &p.x_set.ineq {
            b.leq(RowExpr::new().psd(x, h.clone()), *rhs);
        }
        b.leq(RowExpr::new().psd(x, SymMatrix::identity(p.n)), cap);
        let sdp = b.finish()?;
        let sol = solve(&sdp, opts);
        if !sol.status.value_usable() {
            return Err(Error::solve_failed(
                sol.status,
                format!("scenario {i} second-stage lower bound"),
            ));
        }
        bounds.push((sol.primal_objective, ub));
    }
    let ub_eta = bounds
        .iter()
        .map(|(_, u)| *u)
        .fold(f64::NEG_INFINITY, f64::max);
    let min_lb = bounds.iter().map(|(l, _)| *l).fold(f64::INFINITY, f64::min);
    let m = ub_eta - min_lb + 1.0;
    let method = format!(
        "LB_i = min q.y_i over coupled set (exact SDP); \
         UB_i = Lhat (||z_i|| + ||T|| R_X) with Lhat = {lhat:.6e}, \
         ||T|| <= {t_norm:.6e}, R_X = {cap:.6e}; M = max UB - min LB + 1"
    );
    Ok(BigMReport {
        m,
        per_scenario_bounds: bounds,
        method,
    })
}

/// Solves a binary-free extensive form and extracts the role-mapped pieces.
/// Infeasibility and other solver verdicts are reported through `status`,
/// not as errors; `value` is meaningful only when `status.value_usable()`.
pub fn solve_extensive(
    ef: &ExtensiveForm,
    opts: &SolverOptions,
) -> Result<ExtensiveSolution, Error> {
    if !ef.binary_indices.is_empty() {
        return Err(Error::InvalidInput(
            "extensive form has binary variables; solve it with branch-and-bound".into(),
        ));
    }
    let raw = solve(&ef.sdp, opts);
    Ok(extract_solution(ef, raw))
}

/// Role-mapped extraction from a raw SDP solution of `ef.sdp` (also used by
/// branch-and-bound on relaxations that share the variable layout).
pub fn extract_solution(ef: &ExtensiveForm, raw: SdpSolution) -> ExtensiveSolution {
    let x = match ef.var_map.loc(VarRole::X) {
        Some(VarLoc::PsdBlock(b)) => raw.psd[b].clone(),
        _ => unreachable!("every extensive form maps X"),
    };
    let n_scen = ef
        .var_map
        .entries()
        .iter()
        .filter(|(r, _)| matches!(r, VarRole::Y(_)))
        .count();
    let mut per_scenario_costs = Vec::with_capacity(n_scen);
    for i in 0..n_scen {
        let Some(VarLoc::PsdBlock(b)) = ef.var_map.loc(VarRole::Y(i)) else {
            unreachable!("scenario blocks are contiguous")
        };
        per_scenario_costs.push(ef.sdp.obj_psd()[b].dot(&raw.psd[b]));
    }
    let eta = match ef.var_map.loc(VarRole::Eta) {
        Some(VarLoc::Free(i)) => Some(raw.free[i]),
        _ => None,
    };
    let collect_nonneg = |role: fn(usize) -> VarRole| -> Option<Vec<f64>> {
        let mut vals = Vec::new();
        for i in 0..n_scen {
            match ef.var_map.loc(role(i)) {
                Some(VarLoc::Nonneg(k)) => vals.push(raw.nonneg[k]),
                _ => return None,
            }
        }
        Some(vals)
    };
    let delta = collect_nonneg(VarRole::Delta);
    let v = collect_nonneg(VarRole::V);
    ExtensiveSolution {
        status: raw.status,
        value: raw.primal_objective,
        x,
        per_scenario_costs,
        eta,
        delta,
        v,
        raw,
    }
}

/// Per-scenario cost divided back by the scenario weight: the objective
/// stores `pi_i q` on block `y_i`, so `q.y_i = stored / pi_i`.
pub fn unweighted_costs(scen: &ScenarioSet, sol: &ExtensiveSolution) -> Vec<f64> {
    sol.per_scenario_costs
        .iter()
        .zip(scen.probabilities())
        .map(|(c, pi)| c / pi)
        .collect()
}

/// Maps a risk spec to its extensive-form builder. Supported shapes:
/// `Expectation`, bare `CVaR`, `MeanRisk(ExpectedExcess | CVaR | VaR, rho)`,
/// and `MeanUpperSemidev`; everything else has no flattening here.
pub fn build_for_spec(
    p: &ProblemData,
    scen: &ScenarioSet,
    spec: &RiskSpec,
    literal: bool,
    opts: &SolverOptions,
) -> Result<ExtensiveForm, Error> {
    spec.validate().map_err(Error::Risk)?;
    match spec {
        RiskSpec::Expectation => build_risk_neutral(p, scen),
        RiskSpec::MeanUpperSemidev { p: pp, rho } => build_mad(p, scen, *pp, *rho, literal),
        RiskSpec::CVaR { alpha } => build_cvar_pure(p, scen, *alpha),
        RiskSpec::MeanRisk { base, rho } => match base.as_ref() {
            RiskSpec::ExpectedExcess { eta } => build_ee(p, scen, *eta, *rho),
            RiskSpec::CVaR { alpha } => build_cvar(p, scen, *alpha, *rho),
            RiskSpec::VaR { alpha } => build_var(p, scen, *alpha, *rho, literal, opts),
            other => Err(Error::UnsupportedSpec(format!("{other:?} inside MeanRisk"))),
        },
        other => Err(Error::UnsupportedSpec(format!("{other:?}"))),
    }
}
