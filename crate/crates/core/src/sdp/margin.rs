//! Strict feasibility margins.
//!
//! For a problem in standard form `min c.x  s.t. A x = b, x in K`, the
//! primal margin is the largest `lambda` such that some feasible point
//! satisfies `X_b >= lambda I` on every PSD block and `x_i >= lambda` on
//! every nonnegative scalar. The dual margin is the largest `lambda` with
//! `c - A' y >= lambda` in the same blockwise sense for some multiplier `y`
//! (free components of `c - A' y` must vanish exactly).
//!
//! Both are themselves SDPs: substitute `X = Z + lambda I` (primal) or
//! introduce the dual slack explicitly (dual) and maximize the scalar
//! `lambda`. A positive dual margin certifies strict dual feasibility; the
//! witness multiplier is returned alongside the value.

use super::{solve, BlockSdp, BlockSdpBuilder, RowExpr, SdpStatus, SolverOptions};
use crate::model::SymMatrix;

/// Which side of the problem to probe for strict feasibility.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Primal,
    Dual,
}

/// Result of a margin computation.
#[derive(Debug, Clone)]
pub struct MarginReport {
    pub side: Side,
    /// Best interior radius: `+inf` when the margin program is unbounded,
    /// `-inf` when the side is infeasible outright, `NaN` when the auxiliary
    /// solve failed.
    pub margin: f64,
    /// Dual side: multiplier `y` attaining the margin (empty when the margin
    /// is infinite or the solve failed). Primal side: always empty.
    pub witness: Vec<f64>,
    /// Status of the auxiliary interior-point solve.
    pub status: SdpStatus,
}

impl MarginReport {
    /// True when the side admits a strictly interior point with margin
    /// exceeding `tol`.
    pub fn is_strict(&self, tol: f64) -> bool {
        self.margin > tol
    }
}

/// Computes the strict feasibility margin of one side of `sdp`.
pub fn strict_feasibility_margin(sdp: &BlockSdp, side: Side, opts: &SolverOptions) -> MarginReport {
    let aux = match side {
        Side::Dual => dual_margin_program(sdp),
        Side::Primal => primal_margin_program(sdp),
    };
    let sol = solve(&aux.problem, opts);
    let (margin, witness) = match sol.status {
        SdpStatus::Optimal | SdpStatus::NearOptimal | SdpStatus::DivergingIterates => {
            let lambda = sol.free[aux.lambda_index];
            let witness = match side {
                Side::Dual => sol.free[..aux.lambda_index].to_vec(),
                Side::Primal => Vec::new(),
            };
            (lambda, witness)
        }
        SdpStatus::PrimalInfeasible => (f64::NEG_INFINITY, Vec::new()),
        SdpStatus::DualInfeasible => (f64::INFINITY, Vec::new()),
        _ => (f64::NAN, Vec::new()),
    };
    MarginReport {
        side,
        margin,
        witness,
        status: sol.status,
    }
}

struct AuxProgram {
    problem: BlockSdp,
    /// Index of `lambda` among the auxiliary free variables.
    lambda_index: usize,
}

/// max lambda s.t. exists y with  c - A'y - lambda >= 0  blockwise,
/// free components of c - A'y zero. Variables: slack Z_b (PSD), y (free,
/// one per row of the original), lambda (free), slack z_i (nonneg).
fn dual_margin_program(sdp: &BlockSdp) -> AuxProgram {
    let mut b = BlockSdpBuilder::new();
    let z_blocks: Vec<_> = sdp
        .psd_dims()
        .iter()
        .map(|&k| b.add_psd_block(k, SymMatrix::zeros(k)))
        .collect();
    let y_vars: Vec<_> = (0..sdp.n_rows()).map(|_| b.add_free(0.0)).collect();
    let lambda = b.add_free(-1.0); // minimize -lambda
    let z_nonneg: Vec<_> = (0..sdp.n_nonneg()).map(|_| b.add_nonneg(0.0)).collect();

    // One row per PSD entry (p <= q): Z_pq + sum_j y_j (A_jb)_pq + lambda d_pq = (C_b)_pq.
    for (blk, &dim) in sdp.psd_dims().iter().enumerate() {
        for p in 0..dim {
            for q in p..dim {
                let mut expr =
                    RowExpr::new().psd(z_blocks[blk], SymMatrix::pairing_basis(dim, p, q));
                for (j, row) in sdp.rows().iter().enumerate() {
                    if let Some((_, a)) = row.psd.iter().find(|(bidx, _)| *bidx == blk) {
                        let coeff = a.get(p, q);
                        if coeff != 0.0 {
                            expr = expr.free(y_vars[j], coeff);
                        }
                    }
                }
                if p == q {
                    expr = expr.free(lambda, 1.0);
                }
                b.eq(expr, sdp.obj_psd()[blk].get(p, q));
            }
        }
    }
    // Nonnegative components: z_i + sum_j y_j e_ji + lambda = d_i.
    for i in 0..sdp.n_nonneg() {
        let mut expr = RowExpr::new().nonneg(z_nonneg[i], 1.0).free(lambda, 1.0);
        for (j, row) in sdp.rows().iter().enumerate() {
            if let Some((_, e)) = row.nonneg.iter().find(|(idx, _)| *idx == i) {
                expr = expr.free(y_vars[j], *e);
            }
        }
        b.eq(expr, sdp.obj_nonneg()[i]);
    }
    // Free components must vanish exactly: sum_j y_j f_jl = d_l.
    for l in 0..sdp.n_free() {
        let mut expr = RowExpr::new();
        for (j, row) in sdp.rows().iter().enumerate() {
            if let Some((_, f)) = row.free.iter().find(|(idx, _)| *idx == l) {
                expr = expr.free(y_vars[j], *f);
            }
        }
        b.eq(expr, sdp.obj_free()[l]);
    }

    let lambda_index = y_vars.len();
    AuxProgram {
        problem: b.finish().expect("margin program construction"),
        lambda_index,
    }
}

/// max lambda s.t. exists x feasible with X >= lambda I blockwise: substitute
/// X_b = Z_b + lambda I, x_i = z_i + lambda with Z PSD, z >= 0.
fn primal_margin_program(sdp: &BlockSdp) -> AuxProgram {
    let mut b = BlockSdpBuilder::new();
    let z_blocks: Vec<_> = sdp
        .psd_dims()
        .iter()
        .map(|&k| b.add_psd_block(k, SymMatrix::zeros(k)))
        .collect();
    // Free variables of the original problem stay as they are.
    let free_vars: Vec<_> = (0..sdp.n_free()).map(|_| b.add_free(0.0)).collect();
    let lambda = b.add_free(-1.0);
    let z_nonneg: Vec<_> = (0..sdp.n_nonneg()).map(|_| b.add_nonneg(0.0)).collect();

    for row in sdp.rows() {
        let mut expr = RowExpr::new();
        let mut lambda_coeff = 0.0;
        for (blk, a) in &row.psd {
            expr = expr.psd(z_blocks[*blk], a.clone());
            lambda_coeff += a.trace();
        }
        for (i, e) in &row.nonneg {
            expr = expr.nonneg(z_nonneg[*i], *e);
            lambda_coeff += e;
        }
        for (l, f) in &row.free {
            expr = expr.free(free_vars[*l], *f);
        }
        if lambda_coeff != 0.0 {
            expr = expr.free(lambda, lambda_coeff);
        }
        b.eq(expr, row.rhs);
    }

    let lambda_index = free_vars.len();
    AuxProgram {
        problem: b.finish().expect("margin program construction"),
        lambda_index,
    }
}
