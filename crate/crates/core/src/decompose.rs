//! Scenario decomposition: Kelley-style cutting planes for the convex
//! mean-risk models and branch-and-bound for the mixed-binary
//! value-at-risk model.
//!
//! The cutting-plane master keeps the first-stage block `x in X` plus one
//! epigraph scalar per scenario (multi-cut, the default) or a single
//! epigraph scalar for the whole composite objective (single-cut). Each
//! subproblem evaluation is a recourse dual solve; its maximizer `u` gives
//! the exact supporting cut `phi(z_i - T.x) >= u'z_i - (T'u).x`. Risk
//! shaping (expected excess, CVaR) lives in the master as the same excess
//! scalars and quantile variable the extensive form uses, so the master is
//! an exact reformulation apart from the polyhedral underestimate of `phi`.
//!
//! Branch-and-bound solves the value-at-risk form's continuous relaxation
//! per node, fixing selection variables through added equality rows;
//! best-bound-first order, most-fractional branching, and knapsack-mass
//! probing (a scenario whose removal leaves less than `alpha` probability
//! is forced into the selection).

use rayon::prelude::*;

use crate::error::Error;
use crate::extensive::{build_var, ExtensiveForm, ExtensiveSolution};
use crate::model::{ProblemData, ScenarioSet, SymMatrix};
use crate::recourse::RecourseOracle;
use crate::risk::{self, DiscreteDist, RiskSpec};
use crate::sdp::{solve, BlockSdpBuilder, FreeVar, PsdVar, RowExpr, SdpStatus, SolverOptions};

/// One supporting hyperplane: the modeled quantity is `>= g.x + offset`
/// everywhere on `X`. Per-scenario cuts support `phi(z_i - T.x)`; aggregate
/// cuts support the whole composite objective.
#[derive(Debug, Clone)]
pub struct Cut {
    pub g: SymMatrix,
    pub offset: f64,
    pub origin: CutOrigin,
    pub iteration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutOrigin {
    Scenario(usize),
    Aggregate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvergenceStatus {
    Converged,
    IterLimit,
}

#[derive(Debug, Clone)]
pub struct BendersOptions {
    /// Relative gap target: stop when `ub - lb <= tol * (1 + |ub|)`.
    pub tol: f64,
    pub max_iter: usize,
    /// One aggregate epigraph scalar instead of one per scenario.
    pub single_cut: bool,
    pub solver: SolverOptions,
}

impl Default for BendersOptions {
    fn default() -> Self {
        BendersOptions {
            tol: 1e-6,
            max_iter: 100,
            single_cut: false,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BendersResult {
    pub status: ConvergenceStatus,
    /// Best incumbent objective (exact evaluation at `x`).
    pub value: f64,
    pub x: SymMatrix,
    /// Final master bound; `value - lower_bound` is the remaining gap.
    pub lower_bound: f64,
    pub iterations: usize,
    pub cuts: Vec<Cut>,
    pub lb_history: Vec<f64>,
    pub ub_history: Vec<f64>,
}

/// Risk shapes the cutting-plane solver accepts.
enum MasterRisk {
    Neutral,
    ExpectedExcess { eta: f64, rho: f64 },
    CVaR { alpha: f64, rho: f64 },
}

impl MasterRisk {
    fn from_spec(spec: &RiskSpec) -> Result<MasterRisk, Error> {
        spec.validate().map_err(Error::Risk)?;
        match spec {
            RiskSpec::Expectation => Ok(MasterRisk::Neutral),
            RiskSpec::MeanRisk { base, rho } => {
                if *rho == 0.0 {
                    return Ok(MasterRisk::Neutral);
                }
                match base.as_ref() {
                    RiskSpec::ExpectedExcess { eta } => {
                        Ok(MasterRisk::ExpectedExcess { eta: *eta, rho: *rho })
                    }
                    RiskSpec::CVaR { alpha } => Ok(MasterRisk::CVaR { alpha: *alpha, rho: *rho }),
                    other => Err(Error::UnsupportedSpec(format!(
                        "cutting planes support E, E+rho*EE, E+rho*CVaR; got MeanRisk over {other:?}"
                    ))),
                }
            }
            other => Err(Error::UnsupportedSpec(format!(
                "cutting planes support E, E+rho*EE, E+rho*CVaR; got {other:?}"
            ))),
        }
    }

    /// Composite objective value for realized per-scenario costs.
    fn evaluate(&self, dist: &DiscreteDist) -> f64 {
        let e = risk::expectation(dist);
        match self {
            MasterRisk::Neutral => e,
            MasterRisk::ExpectedExcess { eta, rho } => e + rho * risk::expected_excess(dist, *eta),
            MasterRisk::CVaR { alpha, rho } => e + rho * risk::cvar(dist, *alpha).0,
        }
    }

    /// Scenario weights of one composite subgradient at the given costs:
    /// `w_i = pi_i + rho * (excess or tail weight)_i`.
    fn weights(&self, dist: &DiscreteDist) -> Vec<f64> {
        let atoms = dist.atoms();
        match self {
            MasterRisk::Neutral => atoms.iter().map(|(pi, _)| *pi).collect(),
            MasterRisk::ExpectedExcess { eta, rho } => atoms
                .iter()
                .map(|(pi, y)| pi * (1.0 + if *y > *eta { *rho } else { 0.0 }))
                .collect(),
            MasterRisk::CVaR { alpha, rho } => {
                let (_, quantile) = risk::cvar(dist, *alpha);
                let strict_tail: f64 = atoms
                    .iter()
                    .filter(|(_, y)| *y > quantile)
                    .map(|(pi, _)| pi)
                    .sum();
                let at_quantile: f64 = atoms
                    .iter()
                    .filter(|(_, y)| (*y - quantile).abs() <= 1e-12)
                    .map(|(pi, _)| pi)
                    .sum();
                let atom_share = (1.0 - strict_tail / (1.0 - alpha)).max(0.0);
                atoms
                    .iter()
                    .map(|(pi, y)| {
                        let q = if *y > quantile {
                            pi / (1.0 - alpha)
                        } else if (*y - quantile).abs() <= 1e-12 && at_quantile > 0.0 {
                            pi * atom_share / at_quantile
                        } else {
                            0.0
                        };
                        pi + rho * q
                    })
                    .collect()
            }
        }
    }
}

struct Master {
    x: PsdVar,
    thetas: Vec<FreeVar>,
}

/// Builds the master with the current cut set and solves it. Returns the
/// candidate x, the master bound, and theta values.
fn solve_master(
    p: &ProblemData,
    scen: &ScenarioSet,
    risk: &MasterRisk,
    cuts: &[Cut],
    single_cut: bool,
    opts: &SolverOptions,
) -> Result<(SymMatrix, f64), Error> {
    let mut b = BlockSdpBuilder::new();
    let master;
    if single_cut {
        // min theta with aggregate cuts on the whole composite objective.
        let x = b.add_psd_block(p.n, SymMatrix::zeros(p.n));
        let theta = b.add_free(1.0);
        master = Master {
            x,
            thetas: vec![theta],
        };
    } else {
        let x = b.add_psd_block(p.n, p.c.clone());
        let thetas: Vec<FreeVar> = scen
            .probabilities()
            .iter()
            .map(|pi| b.add_free(*pi))
            .collect();
        master = Master { x, thetas };
        match risk {
            MasterRisk::Neutral => {}
            MasterRisk::ExpectedExcess { eta, rho } => {
                for (i, pi) in scen.probabilities().iter().enumerate() {
                    let v = b.add_nonneg(rho * pi);
                    // c.x + theta_i - v_i <= eta
                    b.leq(
                        RowExpr::new()
                            .psd(master.x, p.c.clone())
                            .free(master.thetas[i], 1.0)
                            .nonneg(v, -1.0),
                        *eta,
                    );
                }
            }
            MasterRisk::CVaR { alpha, rho } => {
                let eta = b.add_free(*rho);
                for (i, pi) in scen.probabilities().iter().enumerate() {
                    let v = b.add_nonneg(rho * pi / (1.0 - alpha));
                    b.leq(
                        RowExpr::new()
                            .psd(master.x, p.c.clone())
                            .free(master.thetas[i], 1.0)
                            .free(eta, -1.0)
                            .nonneg(v, -1.0),
                        0.0,
                    );
                }
            }
        }
    }
    for (g, rhs) in &p.x_set.eq {
        b.eq(RowExpr::new().psd(master.x, g.clone()), *rhs);
    }
    for (h, rhs) in &p.x_set.ineq {
        b.leq(RowExpr::new().psd(master.x, h.clone()), *rhs);
    }
    if let Some(cap) = p.x_set.trace_cap {
        b.leq(RowExpr::new().psd(master.x, SymMatrix::identity(p.n)), cap);
    }
    for cut in cuts {
        let theta = match cut.origin {
            CutOrigin::Scenario(i) => master.thetas[i],
            CutOrigin::Aggregate => master.thetas[0],
        };
        // theta >= g.x + offset
        b.geq(
            RowExpr::new()
                .free(theta, 1.0)
                .psd(master.x, cut.g.scale(-1.0)),
            cut.offset,
        );
    }
    let sdp = b.finish()?;
    let sol = solve(&sdp, opts);
    if !sol.status.value_usable() {
        return Err(Error::solve_failed(sol.status, "cutting-plane master"));
    }
    Ok((sol.psd[0].clone(), sol.primal_objective))
}

/// Cutting-plane solver for `min_x E + rho * (EE | CVaR)` of the total
/// two-stage cost (plain expectation when `rho = 0` or spec is `E`).
///
/// Verifies complete recourse and strict dual feasibility up front; the
/// strict-feasibility witness seeds one valid cut per epigraph scalar so
/// the first master is bounded. Scenario subproblems within an iteration
/// run concurrently; cuts are aggregated in scenario order, so the cut log
/// is deterministic for a fixed problem.
pub fn benders_solve(
    p: &ProblemData,
    scen: &ScenarioSet,
    spec: &RiskSpec,
    opts: &BendersOptions,
) -> Result<BendersResult, Error> {
    let risk = MasterRisk::from_spec(spec)?;
    let oracle = RecourseOracle::verify(p, &opts.solver)?;
    let u0 = oracle.a2_report().witness.clone();
    let pis = scen.probabilities();

    let mut cuts: Vec<Cut> = Vec::new();
    if opts.single_cut {
        // Composite seed: R(x) >= factor * sum_i pi_i (c.x + u0'(z_i - T.x))
        // with factor = 1 + rho for CVaR (CVaR >= E) and 1 otherwise
        // (EE >= 0).
        let factor = match &risk {
            MasterRisk::CVaR { rho, .. } => 1.0 + rho,
            _ => 1.0,
        };
        let mut g = p.c.scale(factor);
        let mut offset = 0.0;
        for (pi, sc) in pis.iter().zip(scen.scenarios()) {
            let pulled = p.t.adjoint_apply(&u0).scale(-factor * pi);
            g = &g + &pulled;
            offset += factor * pi * dot_vec(&u0, &sc.z);
        }
        cuts.push(Cut {
            g,
            offset,
            origin: CutOrigin::Aggregate,
            iteration: 0,
        });
    } else {
        for (i, sc) in scen.scenarios().iter().enumerate() {
            // theta_i >= u0'(z_i - T.x)
            cuts.push(Cut {
                g: p.t.adjoint_apply(&u0).scale(-1.0),
                offset: dot_vec(&u0, &sc.z),
                origin: CutOrigin::Scenario(i),
                iteration: 0,
            });
        }
    }

    let mut best_value = f64::INFINITY;
    let mut best_x = SymMatrix::zeros(p.n);
    let mut lb_history = Vec::new();
    let mut ub_history = Vec::new();
    let mut status = ConvergenceStatus::IterLimit;
    let mut lb = f64::NEG_INFINITY;
    let mut iterations = 0;

    for iter in 1..=opts.max_iter {
        iterations = iter;
        let (x_hat, master_bound) =
            solve_master(p, scen, &risk, &cuts, opts.single_cut, &opts.solver)?;
        lb = lb.max(master_bound);
        lb_history.push(master_bound);

        // Per-scenario recourse duals at the candidate (concurrent).
        let evals: Vec<Result<(f64, Vec<f64>), Error>> = scen
            .scenarios()
            .par_iter()
            .map(|sc| {
                let t = oracle.residual(&x_hat, &sc.z)?;
                oracle.phi_with_dual(&t)
            })
            .collect();
        let mut phis = Vec::with_capacity(scen.len());
        let mut duals = Vec::with_capacity(scen.len());
        for e in evals {
            let (phi, u) = e?;
            phis.push(phi);
            duals.push(u);
        }
        let cx = p.c.dot(&x_hat);
        let costs: Vec<f64> = phis.iter().map(|phi| cx + phi).collect();
        let dist = DiscreteDist::from_parts(&pis, &costs).map_err(Error::Risk)?;
        let value = risk.evaluate(&dist);
        ub_history.push(value);
        if value < best_value {
            best_value = value;
            best_x = x_hat.clone();
        }

        if best_value - lb <= opts.tol * (1.0 + best_value.abs()) {
            status = ConvergenceStatus::Converged;
            break;
        }

        if opts.single_cut {
            // theta >= R(x_hat) + G.(x - x_hat) with G a composite subgradient.
            let w = risk.weights(&dist);
            let mut g = SymMatrix::zeros(p.n);
            for (wi, u) in w.iter().zip(&duals) {
                let grad_i = &p.c - &p.t.adjoint_apply(u);
                g = &g + &grad_i.scale(*wi);
            }
            let offset = value - g.dot(&x_hat);
            cuts.push(Cut {
                g,
                offset,
                origin: CutOrigin::Aggregate,
                iteration: iter,
            });
        } else {
            for (i, (phi, u)) in phis.iter().zip(&duals).enumerate() {
                // phi_i(z_i - T.x) >= u'z_i - (T'u).x; tight at x_hat.
                let g = p.t.adjoint_apply(u).scale(-1.0);
                let offset = dot_vec(u, &scen.scenarios()[i].z);
                debug_assert!(
                    (g.dot(&x_hat) + offset - phi).abs() <= 1e-6 * (1.0 + phi.abs()),
                    "cut not tight at its origin point"
                );
                cuts.push(Cut {
                    g,
                    offset,
                    origin: CutOrigin::Scenario(i),
                    iteration: iter,
                });
            }
        }
    }

    Ok(BendersResult {
        status,
        value: best_value,
        x: best_x,
        lower_bound: lb,
        iterations,
        cuts,
        lb_history,
        ub_history,
    })
}

fn dot_vec(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Renders the cut log as line-oriented text: iteration, origin, offset,
/// then the subgradient entries row-major, all at 17 significant digits.
pub fn render_cut_log(cuts: &[Cut]) -> String {
    let mut out = String::new();
    for cut in cuts {
        let origin = match cut.origin {
            CutOrigin::Scenario(i) => format!("scenario={i}"),
            CutOrigin::Aggregate => "aggregate".to_string(),
        };
        out.push_str(&format!(
            "iter={} {} offset={:.16e} g=",
            cut.iteration, origin, cut.offset
        ));
        let n = cut.g.dim();
        let mut first = true;
        for r in 0..n {
            for c in 0..n {
                if !first {
                    out.push(',');
                }
                out.push_str(&format!("{:.16e}", cut.g.get(r, c)));
                first = false;
            }
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Branch and bound for the value-at-risk model.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BnbOptions {
    pub node_cap: usize,
    /// A relaxation value within this distance of {0, 1} counts as integral.
    pub int_tol: f64,
    /// Reproduce the paper's printed big-M inequality direction.
    pub literal_constraints: bool,
    pub solver: SolverOptions,
}

impl Default for BnbOptions {
    fn default() -> Self {
        // Node relaxations run tighter than the general default so sibling
        // bounds carry less solver noise than the 1e-9 monotonicity slack.
        let solver = SolverOptions {
            feas_tol: 1e-10,
            gap_tol: 1e-10,
            ..SolverOptions::default()
        };
        BnbOptions {
            node_cap: 10_000,
            int_tol: 1e-6,
            literal_constraints: false,
            solver,
        }
    }
}

/// What happened at one processed node, for bound-monotonicity checks.
#[derive(Debug, Clone)]
pub struct NodeRecord {
    pub id: usize,
    pub depth: usize,
    /// Bound inherited from the parent relaxation.
    pub parent_bound: f64,
    /// This node's own relaxation value (None if pruned before solving).
    pub bound: Option<f64>,
    pub outcome: NodeOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeOutcome {
    /// Selection mass cannot reach alpha.
    PrunedMass,
    PrunedInfeasible,
    PrunedBound,
    Incumbent,
    Branched,
}

#[derive(Debug, Clone)]
pub struct BnbResult {
    pub status: ConvergenceStatus,
    pub value: f64,
    pub x: SymMatrix,
    pub delta: Vec<f64>,
    pub eta: f64,
    pub node_count: usize,
    pub nodes: Vec<NodeRecord>,
    /// The solved value-at-risk form (carries big_M and the var map).
    pub form: ExtensiveForm,
    /// Full extraction at the incumbent.
    pub incumbent: ExtensiveSolution,
}

struct Node {
    id: usize,
    depth: usize,
    fixed: Vec<Option<bool>>,
    bound: f64,
}

/// Best-bound-first ordering: smallest bound pops first; ties prefer the
/// deeper node, then the lower id.
fn node_key(
    n: &Node,
) -> (
    std::cmp::Reverse<ordered::F64>,
    usize,
    std::cmp::Reverse<usize>,
) {
    (
        std::cmp::Reverse(ordered::F64(n.bound)),
        n.depth,
        std::cmp::Reverse(n.id),
    )
}

mod ordered {
    /// Total order on f64 for heap keys.
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct F64(pub f64);
    impl Eq for F64 {}
    impl PartialOrd for F64 {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for F64 {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.0.total_cmp(&other.0)
        }
    }
}

/// One selection variable inside a node relaxation: either already decided
/// (substituted into the rows as a constant) or a live `[0, 1]` scalar.
#[derive(Clone, Copy)]
enum DeltaSlot {
    Fixed(f64),
    Var(usize),
}

struct NodeModel {
    sdp: crate::sdp::BlockSdp,
    delta: Vec<DeltaSlot>,
    eta_idx: usize,
}

/// Builds the node relaxation with decided selections substituted out.
/// Substitution (rather than pinning the live variable with an equality
/// row) keeps a strictly feasible interior: a pinned scalar and its
/// `delta <= 1` slack would both be forced to a boundary. A knapsack row
/// made vacuous by the decided mass is dropped for the same reason.
fn build_node(
    p: &ProblemData,
    scen: &ScenarioSet,
    alpha: f64,
    rho: f64,
    literal: bool,
    big_m: Option<f64>,
    fixed: &[Option<bool>],
) -> Result<NodeModel, Error> {
    let pis = scen.probabilities();
    let mut b = BlockSdpBuilder::new();
    let x = b.add_psd_block(p.n, p.c.scale(1.0 + rho));
    let ys: Vec<PsdVar> = pis
        .iter()
        .map(|pi| b.add_psd_block(p.m, p.q.scale(*pi)))
        .collect();
    for (i, sc) in scen.scenarios().iter().enumerate() {
        for j in 0..p.s {
            b.eq(
                RowExpr::new()
                    .psd(x, p.t.block(j).clone())
                    .psd(ys[i], p.w.block(j).clone()),
                sc.z[j],
            );
        }
    }
    for (g, rhs) in &p.x_set.eq {
        b.eq(RowExpr::new().psd(x, g.clone()), *rhs);
    }
    for (h, rhs) in &p.x_set.ineq {
        b.leq(RowExpr::new().psd(x, h.clone()), *rhs);
    }
    if let Some(cap) = p.x_set.trace_cap {
        b.leq(RowExpr::new().psd(x, SymMatrix::identity(p.n)), cap);
    }
    let eta = b.add_free(rho);
    if rho == 0.0 {
        // The quantile term vanishes; the model is the plain expectation
        // and every scenario counts as selected.
        b.eq(RowExpr::new().free(eta, 1.0), 0.0);
        return Ok(NodeModel {
            sdp: b.finish()?,
            delta: vec![DeltaSlot::Fixed(1.0); scen.len()],
            eta_idx: eta.0,
        });
    }
    let m = big_m.expect("value-at-risk form carries a big-M when rho > 0");
    let mut slots = Vec::with_capacity(scen.len());
    let mut knapsack = RowExpr::new();
    let mut live = 0usize;
    let mut decided_mass = 0.0;
    for i in 0..scen.len() {
        match fixed[i] {
            Some(sel) => {
                let v = if sel { 1.0 } else { 0.0 };
                decided_mass += v * pis[i];
                let rhs = m * (1.0 - v);
                if literal {
                    b.geq(
                        RowExpr::new().free(eta, 1.0).psd(ys[i], p.q.scale(-1.0)),
                        rhs,
                    );
                } else {
                    b.leq(RowExpr::new().psd(ys[i], p.q.clone()).free(eta, -1.0), rhs);
                }
                slots.push(DeltaSlot::Fixed(v));
            }
            None => {
                let d = b.add_nonneg(0.0);
                b.leq(RowExpr::new().nonneg(d, 1.0), 1.0);
                if literal {
                    b.geq(
                        RowExpr::new()
                            .free(eta, 1.0)
                            .psd(ys[i], p.q.scale(-1.0))
                            .nonneg(d, m),
                        m,
                    );
                } else {
                    b.leq(
                        RowExpr::new()
                            .psd(ys[i], p.q.clone())
                            .free(eta, -1.0)
                            .nonneg(d, m),
                        m,
                    );
                }
                knapsack = knapsack.nonneg(d, pis[i]);
                live += 1;
                slots.push(DeltaSlot::Var(d.0));
            }
        }
    }
    let need = alpha - decided_mass;
    if live > 0 && need > 1e-12 {
        b.geq(knapsack, need);
    }
    Ok(NodeModel {
        sdp: b.finish()?,
        delta: slots,
        eta_idx: eta.0,
    })
}

/// Branch-and-bound for `min (1+rho) c.x + sum pi_i q.y_i + rho VaR` via
/// the big-M selection model. Returns the incumbent with its selection
/// pattern, the processed-node log, and the underlying form.
pub fn bnb_solve_var(
    p: &ProblemData,
    scen: &ScenarioSet,
    alpha: f64,
    rho: f64,
    opts: &BnbOptions,
) -> Result<BnbResult, Error> {
    let ef = build_var(p, scen, alpha, rho, opts.literal_constraints, &opts.solver)?;
    let s_count = scen.len();
    let pis = scen.probabilities();
    let mass_tol = 1e-12;

    let mut heap: Vec<Node> = vec![Node {
        id: 0,
        depth: 0,
        fixed: vec![None; s_count],
        bound: f64::NEG_INFINITY,
    }];
    let mut next_id = 1;
    let mut nodes = Vec::new();
    let mut node_count = 0;
    let mut incumbent: Option<(f64, ExtensiveSolution, Vec<f64>)> = None;
    let mut status = ConvergenceStatus::Converged;

    while let Some(pos) = heap
        .iter()
        .enumerate()
        .max_by_key(|(_, n)| node_key(n))
        .map(|(i, _)| i)
    {
        // Stop expanding once the best open bound cannot improve on the
        // incumbent.
        if let Some((best, _, _)) = &incumbent {
            if heap[pos].bound >= *best - 1e-9 {
                break;
            }
        }
        if node_count >= opts.node_cap {
            status = ConvergenceStatus::IterLimit;
            break;
        }
        let mut node = heap.swap_remove(pos);
        node_count += 1;

        // Probing: mass of scenarios not fixed out.
        let available: f64 = pis
            .iter()
            .zip(&node.fixed)
            .filter(|(_, f)| **f != Some(false))
            .map(|(pi, _)| pi)
            .sum();
        if available < alpha - mass_tol {
            nodes.push(NodeRecord {
                id: node.id,
                depth: node.depth,
                parent_bound: node.bound,
                bound: None,
                outcome: NodeOutcome::PrunedMass,
            });
            continue;
        }
        // Force-in any scenario whose removal would break the knapsack.
        for i in 0..s_count {
            if node.fixed[i].is_none() && available - pis[i] < alpha - mass_tol {
                node.fixed[i] = Some(true);
            }
        }

        let model = build_node(
            p,
            scen,
            alpha,
            rho,
            opts.literal_constraints,
            ef.big_m,
            &node.fixed,
        )?;
        let sol = solve(&model.sdp, &opts.solver);
        if sol.status == SdpStatus::PrimalInfeasible {
            nodes.push(NodeRecord {
                id: node.id,
                depth: node.depth,
                parent_bound: node.bound,
                bound: None,
                outcome: NodeOutcome::PrunedInfeasible,
            });
            continue;
        }
        if !sol.status.value_usable() {
            return Err(Error::solve_failed(
                sol.status,
                format!("node {} relaxation", node.id),
            ));
        }
        // A child's feasible set is contained in its parent's, so the parent
        // bound stays valid here; inheriting it absorbs solver noise and
        // keeps bounds monotone along every branch.
        let bound = sol.primal_objective.max(node.bound);
        if let Some((best, _, _)) = &incumbent {
            if bound >= *best - 1e-9 {
                nodes.push(NodeRecord {
                    id: node.id,
                    depth: node.depth,
                    parent_bound: node.bound,
                    bound: Some(bound),
                    outcome: NodeOutcome::PrunedBound,
                });
                continue;
            }
        }

        let delta: Vec<f64> = model
            .delta
            .iter()
            .map(|slot| match slot {
                DeltaSlot::Fixed(v) => *v,
                DeltaSlot::Var(k) => sol.nonneg[*k],
            })
            .collect();
        let frac = delta
            .iter()
            .enumerate()
            .filter(|(i, _)| node.fixed[*i].is_none())
            .map(|(i, d)| (i, (d - 0.5).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let integral = delta
            .iter()
            .all(|d| d.abs() < opts.int_tol || (d - 1.0).abs() < opts.int_tol);

        if integral {
            let rounded: Vec<f64> = delta
                .iter()
                .map(|d| if *d > 0.5 { 1.0 } else { 0.0 })
                .collect();
            let better = incumbent
                .as_ref()
                .map_or(true, |(best, _, _)| bound < *best - 1e-12);
            if better {
                let per_scenario_costs: Vec<f64> = (0..s_count)
                    .map(|i| model.sdp.obj_psd()[1 + i].dot(&sol.psd[1 + i]))
                    .collect();
                let extracted = ExtensiveSolution {
                    status: sol.status,
                    value: bound,
                    x: sol.psd[0].clone(),
                    per_scenario_costs,
                    eta: Some(sol.free[model.eta_idx]),
                    delta: Some(delta.clone()),
                    v: None,
                    raw: sol,
                };
                incumbent = Some((bound, extracted, rounded));
            }
            nodes.push(NodeRecord {
                id: node.id,
                depth: node.depth,
                parent_bound: node.bound,
                bound: Some(bound),
                outcome: NodeOutcome::Incumbent,
            });
            continue;
        }

        let (branch_i, _) = frac.expect("non-integral relaxation has an unfixed scenario");
        nodes.push(NodeRecord {
            id: node.id,
            depth: node.depth,
            parent_bound: node.bound,
            bound: Some(bound),
            outcome: NodeOutcome::Branched,
        });
        for v in [true, false] {
            let mut fixed = node.fixed.clone();
            fixed[branch_i] = Some(v);
            heap.push(Node {
                id: next_id,
                depth: node.depth + 1,
                fixed,
                bound,
            });
            next_id += 1;
        }
    }

    let Some((value, incumbent, delta)) = incumbent else {
        return Err(Error::solve_failed(
            SdpStatus::NumericalFailure,
            "branch and bound finished without any integral point",
        ));
    };
    Ok(BnbResult {
        status,
        value,
        x: incumbent.x.clone(),
        delta,
        eta: incumbent.eta.expect("value-at-risk form maps eta"),
        node_count,
        nodes,
        form: ef,
        incumbent,
    })
}

/// Winning pattern from [`var_brute_force`].
#[derive(Debug, Clone)]
pub struct BruteForceVar {
    pub value: f64,
    /// Selection pattern as 0/1 per scenario.
    pub pattern: Vec<f64>,
    pub eta: f64,
    /// Raw recourse cost `q.y_i` per scenario at the winning solution.
    pub scenario_costs: Vec<f64>,
}

/// Reference oracle: enumerate every knapsack-feasible selection pattern
/// and solve the pattern's SDP with the quantile bounded by the selected
/// scenarios (`eta >= q.y_i` for selected `i`), without any big-M rows.
/// Exponential in the scenario count; for validation only.
pub fn var_brute_force(
    p: &ProblemData,
    scen: &ScenarioSet,
    alpha: f64,
    rho: f64,
    opts: &SolverOptions,
) -> Result<BruteForceVar, Error> {
    let s_count = scen.len();
    let pis = scen.probabilities();
    let mut best: Option<BruteForceVar> = None;
    for mask in 0u32..(1 << s_count) {
        let selected: Vec<bool> = (0..s_count).map(|i| mask & (1 << i) != 0).collect();
        let mass: f64 = pis
            .iter()
            .zip(&selected)
            .filter(|(_, s)| **s)
            .map(|(pi, _)| pi)
            .sum();
        if mass < alpha - 1e-12 {
            continue;
        }
        let mut b = BlockSdpBuilder::new();
        let x = b.add_psd_block(p.n, p.c.scale(1.0 + rho));
        let ys: Vec<PsdVar> = pis
            .iter()
            .map(|pi| b.add_psd_block(p.m, p.q.scale(*pi)))
            .collect();
        for (i, sc) in scen.scenarios().iter().enumerate() {
            for j in 0..p.s {
                b.eq(
                    RowExpr::new()
                        .psd(x, p.t.block(j).clone())
                        .psd(ys[i], p.w.block(j).clone()),
                    sc.z[j],
                );
            }
        }
        for (g, rhs) in &p.x_set.eq {
            b.eq(RowExpr::new().psd(x, g.clone()), *rhs);
        }
        for (h, rhs) in &p.x_set.ineq {
            b.leq(RowExpr::new().psd(x, h.clone()), *rhs);
        }
        if let Some(cap) = p.x_set.trace_cap {
            b.leq(RowExpr::new().psd(x, SymMatrix::identity(p.n)), cap);
        }
        let eta = b.add_free(rho);
        if rho == 0.0 {
            // No quantile term; the selection only needs to exist.
            b.eq(RowExpr::new().free(eta, 1.0), 0.0);
        } else {
            for (i, sel) in selected.iter().enumerate() {
                if *sel {
                    // q.y_i - eta <= 0
                    b.leq(RowExpr::new().psd(ys[i], p.q.clone()).free(eta, -1.0), 0.0);
                }
            }
        }
        let sdp = b.finish()?;
        let sol = solve(&sdp, opts);
        if sol.status == SdpStatus::PrimalInfeasible {
            continue;
        }
        if !sol.status.value_usable() {
            return Err(Error::solve_failed(sol.status, format!("pattern {mask:b}")));
        }
        let value = sol.primal_objective;
        if best.as_ref().map_or(true, |b| value < b.value) {
            let pattern = selected
                .iter()
                .map(|s| if *s { 1.0 } else { 0.0 })
                .collect();
            let scenario_costs = (0..s_count).map(|i| p.q.dot(&sol.psd[1 + i])).collect();
            best = Some(BruteForceVar {
                value,
                pattern,
                eta: sol.free[0],
                scenario_costs,
            });
        }
    }
    best.ok_or_else(|| {
        Error::InvalidInput("no selection pattern reaches the knapsack level".into())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extensive::{build_cvar, build_ee, solve_extensive};
    use crate::model::{MatrixTuple, Scenario, Spectrahedron};

    fn opts() -> BendersOptions {
        BendersOptions::default()
    }

    /// phi(t) = |t| recourse; x is a scalar in [0, 1] entering the residual.
    fn kink_problem() -> ProblemData {
        ProblemData {
            n: 1,
            m: 2,
            s: 1,
            c: SymMatrix::from_diagonal(&[0.1]),
            q: SymMatrix::identity(2),
            t: MatrixTuple::new(vec![SymMatrix::identity(1)]).unwrap(),
            w: MatrixTuple::new(vec![SymMatrix::from_diagonal(&[1.0, -1.0])]).unwrap(),
            x_set: Spectrahedron::trace_ball(1, 1.0),
        }
    }

    fn kink_scen() -> ScenarioSet {
        ScenarioSet::new(vec![
            Scenario {
                pi: 0.5,
                z: vec![0.5],
            },
            Scenario {
                pi: 0.5,
                z: vec![2.0],
            },
        ])
        .unwrap()
    }

    fn diag_problem() -> ProblemData {
        ProblemData {
            t: MatrixTuple::new(vec![SymMatrix::zeros(1)]).unwrap(),
            c: SymMatrix::zeros(1),
            ..kink_problem()
        }
    }

    #[test]
    fn t_zero_converges_in_two_iterations() {
        let scen = kink_scen();
        let res = benders_solve(&diag_problem(), &scen, &RiskSpec::Expectation, &opts()).unwrap();
        assert_eq!(res.status, ConvergenceStatus::Converged);
        assert!(res.iterations <= 2, "iterations {}", res.iterations);
        // E|z| = 0.5 * 0.5 + 0.5 * 2.
        assert!((res.value - 1.25).abs() < 1e-6, "value {}", res.value);
    }

    #[test]
    fn risk_neutral_matches_extensive() {
        let p = kink_problem();
        let scen = kink_scen();
        let res = benders_solve(&p, &scen, &RiskSpec::Expectation, &opts()).unwrap();
        assert_eq!(res.status, ConvergenceStatus::Converged);
        // Hand value: min over x in [0,1] of 0.1x + 0.5|0.5 - x| + 0.5(2 - x),
        // minimized at the kink x = 0.5.
        assert!((res.value - 0.8).abs() < 1e-5, "value {}", res.value);
        assert!(
            (res.x.get(0, 0) - 0.5).abs() < 1e-4,
            "x {}",
            res.x.get(0, 0)
        );

        let ef = crate::extensive::build_risk_neutral(&p, &scen).unwrap();
        let ext = solve_extensive(&ef, &opts().solver).unwrap();
        assert!(
            (res.value - ext.value).abs() < 1e-5,
            "{} vs {}",
            res.value,
            ext.value
        );
    }

    #[test]
    fn cvar_matches_extensive() {
        let p = kink_problem();
        let scen = ScenarioSet::new(vec![
            Scenario {
                pi: 0.4,
                z: vec![0.5],
            },
            Scenario {
                pi: 0.3,
                z: vec![1.0],
            },
            Scenario {
                pi: 0.3,
                z: vec![2.0],
            },
        ])
        .unwrap();
        let spec = RiskSpec::MeanRisk {
            base: Box::new(RiskSpec::CVaR { alpha: 0.5 }),
            rho: 1.0,
        };
        let res = benders_solve(&p, &scen, &spec, &opts()).unwrap();
        assert_eq!(res.status, ConvergenceStatus::Converged);
        let ef = build_cvar(&p, &scen, 0.5, 1.0).unwrap();
        let ext = solve_extensive(&ef, &opts().solver).unwrap();
        assert!(
            (res.value - ext.value).abs() < 1e-5,
            "{} vs {}",
            res.value,
            ext.value
        );
    }

    #[test]
    fn expected_excess_matches_extensive() {
        let p = kink_problem();
        let scen = kink_scen();
        let spec = RiskSpec::MeanRisk {
            base: Box::new(RiskSpec::ExpectedExcess { eta: 1.0 }),
            rho: 0.5,
        };
        let res = benders_solve(&p, &scen, &spec, &opts()).unwrap();
        assert_eq!(res.status, ConvergenceStatus::Converged);
        let ef = build_ee(&p, &scen, 1.0, 0.5).unwrap();
        let ext = solve_extensive(&ef, &opts().solver).unwrap();
        assert!(
            (res.value - ext.value).abs() < 1e-5,
            "{} vs {}",
            res.value,
            ext.value
        );
    }

    #[test]
    fn single_cut_agrees_with_multi_cut() {
        let p = kink_problem();
        let scen = kink_scen();
        for spec in [
            RiskSpec::Expectation,
            RiskSpec::MeanRisk {
                base: Box::new(RiskSpec::CVaR { alpha: 0.4 }),
                rho: 1.0,
            },
            RiskSpec::MeanRisk {
                base: Box::new(RiskSpec::ExpectedExcess { eta: 0.8 }),
                rho: 0.7,
            },
        ] {
            let multi = benders_solve(&p, &scen, &spec, &opts()).unwrap();
            let single = benders_solve(
                &p,
                &scen,
                &spec,
                &BendersOptions {
                    single_cut: true,
                    ..opts()
                },
            )
            .unwrap();
            assert_eq!(single.status, ConvergenceStatus::Converged, "{spec:?}");
            assert!(
                (multi.value - single.value).abs() < 1e-5,
                "{spec:?}: {} vs {}",
                multi.value,
                single.value
            );
        }
    }

    #[test]
    fn bounds_are_monotone() {
        let p = kink_problem();
        let scen = kink_scen();
        let spec = RiskSpec::MeanRisk {
            base: Box::new(RiskSpec::CVaR { alpha: 0.4 }),
            rho: 1.0,
        };
        let res = benders_solve(&p, &scen, &spec, &opts()).unwrap();
        for w in res.lb_history.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-9,
                "lower bounds regressed: {:?}",
                res.lb_history
            );
        }
        let mut best = f64::INFINITY;
        for ub in &res.ub_history {
            best = best.min(*ub);
        }
        assert!((best - res.value).abs() < 1e-12);
        assert!(res.value - res.lower_bound <= 1e-6 * (1.0 + res.value.abs()));
    }

    #[test]
    fn cuts_are_valid_on_sampled_points() {
        use rand::Rng;
        use rand::SeedableRng;
        let p = kink_problem();
        let scen = kink_scen();
        let spec = RiskSpec::MeanRisk {
            base: Box::new(RiskSpec::CVaR { alpha: 0.4 }),
            rho: 1.0,
        };
        let res = benders_solve(&p, &scen, &spec, &opts()).unwrap();
        let oracle = RecourseOracle::verify(&p, &opts().solver).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let x = SymMatrix::from_diagonal(&[rng.gen_range(0.0..1.0)]);
            for cut in &res.cuts {
                let lhs = cut.g.dot(&x) + cut.offset;
                match cut.origin {
                    CutOrigin::Scenario(i) => {
                        let t = oracle.residual(&x, &scen.scenarios()[i].z).unwrap();
                        let phi = oracle.phi(&t).unwrap();
                        assert!(lhs <= phi + 1e-7, "scenario cut above phi: {lhs} vs {phi}");
                    }
                    CutOrigin::Aggregate => {
                        let costs: Vec<f64> = scen
                            .scenarios()
                            .iter()
                            .map(|sc| {
                                let t = oracle.residual(&x, &sc.z).unwrap();
                                p.c.dot(&x) + oracle.phi(&t).unwrap()
                            })
                            .collect();
                        let dist = DiscreteDist::from_parts(&scen.probabilities(), &costs).unwrap();
                        let r = MasterRisk::from_spec(&spec).unwrap().evaluate(&dist);
                        assert!(
                            lhs <= r + 1e-7,
                            "aggregate cut above objective: {lhs} vs {r}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn cut_log_is_thread_count_invariant() {
        let p = kink_problem();
        let scen = kink_scen();
        let spec = RiskSpec::MeanRisk {
            base: Box::new(RiskSpec::CVaR { alpha: 0.4 }),
            rho: 1.0,
        };
        let ambient = benders_solve(&p, &scen, &spec, &opts()).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let serial = pool.install(|| benders_solve(&p, &scen, &spec, &opts()).unwrap());
        assert_eq!(render_cut_log(&ambient.cuts), render_cut_log(&serial.cuts));
        assert_eq!(ambient.value.to_bits(), serial.value.to_bits());
    }

    #[test]
    fn bnb_single_scenario_is_one_node() {
        let scen = ScenarioSet::new(vec![Scenario {
            pi: 1.0,
            z: vec![2.0],
        }])
        .unwrap();
        let res = bnb_solve_var(&diag_problem(), &scen, 0.5, 1.0, &BnbOptions::default()).unwrap();
        assert_eq!(res.status, ConvergenceStatus::Converged);
        assert_eq!(res.node_count, 1, "nodes {:?}", res.nodes);
        assert_eq!(res.delta, vec![1.0]);
        // q.y + rho * eta with eta = q.y = 2.
        assert!((res.value - 4.0).abs() < 1e-5, "value {}", res.value);
    }

    #[test]
    fn bnb_matches_brute_force() {
        let p = diag_problem();
        let scen = ScenarioSet::new(vec![
            Scenario {
                pi: 0.3,
                z: vec![-1.0],
            },
            Scenario {
                pi: 0.4,
                z: vec![1.0],
            },
            Scenario {
                pi: 0.3,
                z: vec![2.0],
            },
        ])
        .unwrap();
        let res = bnb_solve_var(&p, &scen, 0.6, 1.0, &BnbOptions::default()).unwrap();
        let bf = var_brute_force(&p, &scen, 0.6, 1.0, &SolverOptions::default()).unwrap();
        assert!(
            (res.value - bf.value).abs() < 1e-5,
            "{} vs {}",
            res.value,
            bf.value
        );
        assert_eq!(res.delta, bf.pattern);
        // E|z| + rho * eta with the cheapest feasible pair {1, 2}: eta = 1.
        assert!(
            (res.value - (1.3 + 1.0)).abs() < 1e-5,
            "value {}",
            res.value
        );
    }

    #[test]
    fn bnb_selects_dominant_cheap_scenario() {
        let p = diag_problem();
        let third = 1.0 / 3.0;
        let scen = ScenarioSet::new(vec![
            Scenario {
                pi: third,
                z: vec![0.5],
            },
            Scenario {
                pi: third,
                z: vec![2.0],
            },
            Scenario {
                pi: 1.0 - 2.0 * third,
                z: vec![3.0],
            },
        ])
        .unwrap();
        let res = bnb_solve_var(&p, &scen, 0.25, 1.0, &BnbOptions::default()).unwrap();
        let bf = var_brute_force(&p, &scen, 0.25, 1.0, &SolverOptions::default()).unwrap();
        assert_eq!(res.delta, bf.pattern);
        assert_eq!(res.delta, vec![1.0, 0.0, 0.0]);
        assert!((res.value - bf.value).abs() < 1e-5);
    }

    #[test]
    fn bnb_child_bounds_dominate_parents() {
        let p = diag_problem();
        let scen = ScenarioSet::new(vec![
            Scenario {
                pi: 0.3,
                z: vec![-1.0],
            },
            Scenario {
                pi: 0.4,
                z: vec![1.0],
            },
            Scenario {
                pi: 0.3,
                z: vec![2.0],
            },
        ])
        .unwrap();
        let res = bnb_solve_var(&p, &scen, 0.6, 1.0, &BnbOptions::default()).unwrap();
        for rec in &res.nodes {
            if let Some(bound) = rec.bound {
                assert!(
                    bound >= rec.parent_bound - 1e-9,
                    "node {} bound {bound} below parent {}",
                    rec.id,
                    rec.parent_bound
                );
            }
        }
        // Big-M rows stay strictly slack at the incumbent for unselected
        // scenarios.
        let m = res.form.big_m.unwrap();
        let costs = crate::extensive::unweighted_costs(&scen, &res.incumbent);
        for (i, d) in res.delta.iter().enumerate() {
            if *d == 0.0 {
                let slack = m - (costs[i] - res.eta);
                assert!(slack > 1e-6, "big-M binds on scenario {i}: slack {slack}");
            }
        }
    }

    #[test]
    fn bnb_rho_zero_collapses() {
        let p = diag_problem();
        let scen = kink_scen();
        let res = bnb_solve_var(&p, &scen, 0.5, 0.0, &BnbOptions::default()).unwrap();
        assert_eq!(res.node_count, 1);
        assert!((res.value - 1.25).abs() < 1e-6, "value {}", res.value);
        let bf = var_brute_force(&p, &scen, 0.5, 0.0, &SolverOptions::default()).unwrap();
        assert!((res.value - bf.value).abs() < 1e-6);
    }

    #[test]
    fn rejects_unsupported_specs() {
        let err = benders_solve(
            &diag_problem(),
            &kink_scen(),
            &RiskSpec::MeanRisk {
                base: Box::new(RiskSpec::VaR { alpha: 0.5 }),
                rho: 1.0,
            },
            &opts(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnsupportedSpec(_)));
    }
}
