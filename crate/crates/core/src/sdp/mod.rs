//! Block-structured semidefinite programs and the embedded solver.
//!
//! Standard form (primal):
//! ```text
//! min   sum_b <C_b, X_b> + d_f'w + d_n'v
//! s.t.  sum_b <A_jb, X_b> + e_jf'w + e_jn'v = b_j   (j = 1..m)
//!       X_b PSD, v >= 0, w free
//! ```
//! The dual attaches a multiplier `u_j` to each row; dual feasibility is
//! `C_b - sum_j u_j A_jb` PSD per block, `d_n - E_n'u >= 0`, and
//! `d_f - E_f'u = 0`.
//!
//! Submodules: [`solver`] (homogeneous self-dual interior point method),
//! [`margin`] (strict feasibility margins of either side), [`sdpa`]
//! (SDPA sparse-format export/import).

mod margin;
mod sdpa;
mod solver;

pub use margin::{strict_feasibility_margin, MarginReport, Side};
pub use sdpa::{read_sdpa, write_sdpa, write_sidecar, SdpaMeta};
pub use solver::solve;

use crate::model::SymMatrix;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum SdpError {
    #[error(
        "row {row}: coefficient for PSD block {block} has dimension {got}, expected {expected}"
    )]
    RowBlockDim {
        row: usize,
        block: usize,
        expected: usize,
        got: usize,
    },

    #[error("row {row}: reference to nonexistent {kind} variable {idx}")]
    BadVariable {
        row: usize,
        kind: &'static str,
        idx: usize,
    },

    #[error("problem has no variables")]
    EmptyProblem,

    #[error("{what} contains a non-finite value")]
    NonFinite { what: String },

    #[error("SDPA parse error at line {line}: {msg}")]
    SdpaParse { line: usize, msg: String },

    #[error("sidecar parse error: {0}")]
    SidecarParse(String),
}

/// Typed handle to a PSD matrix block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PsdVar(pub usize);

/// Typed handle to a free scalar variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreeVar(pub usize);

/// Typed handle to a nonnegative scalar variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NonnegVar(pub usize);

/// One equality row: sparse coefficients against each variable kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    /// `(block index, coefficient matrix)`, sorted by block index.
    pub psd: Vec<(usize, SymMatrix)>,
    /// `(free variable index, coefficient)`, sorted.
    pub free: Vec<(usize, f64)>,
    /// `(nonnegative variable index, coefficient)`, sorted.
    pub nonneg: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// Immutable block SDP in standard form. Build through [`BlockSdpBuilder`];
/// rows are canonicalized (sorted, duplicates merged, zero terms dropped) so
/// that structural equality is meaningful.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSdp {
    psd_dims: Vec<usize>,
    n_free: usize,
    n_nonneg: usize,
    obj_psd: Vec<SymMatrix>,
    obj_free: Vec<f64>,
    obj_nonneg: Vec<f64>,
    rows: Vec<Row>,
}

impl BlockSdp {
    pub fn psd_dims(&self) -> &[usize] {
        &self.psd_dims
    }

    pub fn n_psd_blocks(&self) -> usize {
        self.psd_dims.len()
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn n_nonneg(&self) -> usize {
        self.n_nonneg
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn obj_psd(&self) -> &[SymMatrix] {
        &self.obj_psd
    }

    pub fn obj_free(&self) -> &[f64] {
        &self.obj_free
    }

    pub fn obj_nonneg(&self) -> &[f64] {
        &self.obj_nonneg
    }

    /// Objective value at an assembled point.
    pub fn objective_value(&self, psd: &[SymMatrix], free: &[f64], nonneg: &[f64]) -> f64 {
        let mut v = 0.0;
        for (c, x) in self.obj_psd.iter().zip(psd) {
            v += c.dot(x);
        }
        for (d, w) in self.obj_free.iter().zip(free) {
            v += d * w;
        }
        for (d, z) in self.obj_nonneg.iter().zip(nonneg) {
            v += d * z;
        }
        v
    }

    /// Row left-hand-side values at an assembled point.
    pub fn row_values(&self, psd: &[SymMatrix], free: &[f64], nonneg: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| {
                let mut v = 0.0;
                for (b, a) in &r.psd {
                    v += a.dot(&psd[*b]);
                }
                for (i, e) in &r.free {
                    v += e * free[*i];
                }
                for (i, e) in &r.nonneg {
                    v += e * nonneg[*i];
                }
                v
            })
            .collect()
    }

    /// Largest absolute value in the problem data, used to scale divergence
    /// and warning thresholds.
    pub fn data_norm(&self) -> f64 {
        let mut nrm = 0.0f64;
        for c in &self.obj_psd {
            nrm = nrm.max(c.as_dmatrix().amax());
        }
        for d in self.obj_free.iter().chain(&self.obj_nonneg) {
            nrm = nrm.max(d.abs());
        }
        for r in &self.rows {
            for (_, a) in &r.psd {
                nrm = nrm.max(a.as_dmatrix().amax());
            }
            for (_, e) in r.free.iter().chain(&r.nonneg) {
                nrm = nrm.max(e.abs());
            }
            nrm = nrm.max(r.rhs.abs());
        }
        nrm
    }
}

/// Incremental construction of a [`BlockSdp`].
#[derive(Debug, Default)]
pub struct BlockSdpBuilder {
    psd_dims: Vec<usize>,
    obj_psd: Vec<SymMatrix>,
    obj_free: Vec<f64>,
    obj_nonneg: Vec<f64>,
    rows: Vec<Row>,
}

/// Sparse row under construction; combine with [`BlockSdpBuilder::eq`],
/// [`BlockSdpBuilder::leq`] or [`BlockSdpBuilder::geq`].
#[derive(Debug, Default, Clone)]
pub struct RowExpr {
    psd: Vec<(usize, SymMatrix)>,
    free: Vec<(usize, f64)>,
    nonneg: Vec<(usize, f64)>,
}

impl RowExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn psd(mut self, var: PsdVar, coeff: SymMatrix) -> Self {
        self.psd.push((var.0, coeff));
        self
    }

    pub fn free(mut self, var: FreeVar, coeff: f64) -> Self {
        self.free.push((var.0, coeff));
        self
    }

    pub fn nonneg(mut self, var: NonnegVar, coeff: f64) -> Self {
        self.nonneg.push((var.0, coeff));
        self
    }
}

impl BlockSdpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_psd_block(&mut self, dim: usize, cost: SymMatrix) -> PsdVar {
        assert_eq!(cost.dim(), dim, "PSD block cost dimension mismatch");
        self.psd_dims.push(dim);
        self.obj_psd.push(cost);
        PsdVar(self.psd_dims.len() - 1)
    }

    pub fn add_free(&mut self, cost: f64) -> FreeVar {
        self.obj_free.push(cost);
        FreeVar(self.obj_free.len() - 1)
    }

    pub fn add_nonneg(&mut self, cost: f64) -> NonnegVar {
        self.obj_nonneg.push(cost);
        NonnegVar(self.obj_nonneg.len() - 1)
    }

    /// Adds the equality row `expr = rhs`.
    pub fn eq(&mut self, expr: RowExpr, rhs: f64) {
        self.rows.push(Row {
            psd: expr.psd,
            free: expr.free,
            nonneg: expr.nonneg,
            rhs,
        });
    }

    /// Adds `expr <= rhs` via a fresh slack: `expr + slack = rhs`.
    /// Returns the slack variable.
    pub fn leq(&mut self, expr: RowExpr, rhs: f64) -> NonnegVar {
        let slack = self.add_nonneg(0.0);
        self.eq(expr.nonneg(slack, 1.0), rhs);
        slack
    }

    /// Adds `expr >= rhs` via a fresh surplus: `expr - slack = rhs`.
    /// Returns the surplus variable.
    pub fn geq(&mut self, expr: RowExpr, rhs: f64) -> NonnegVar {
        let slack = self.add_nonneg(0.0);
        self.eq(expr.nonneg(slack, -1.0), rhs);
        slack
    }

    /// Validates and canonicalizes the rows, producing the immutable problem.
    pub fn finish(self) -> Result<BlockSdp, SdpError> {
        let n_free = self.obj_free.len();
        let n_nonneg = self.obj_nonneg.len();
        if self.psd_dims.is_empty() && n_free == 0 && n_nonneg == 0 {
            return Err(SdpError::EmptyProblem);
        }
        for (b, c) in self.obj_psd.iter().enumerate() {
            if !c.is_finite() {
                return Err(SdpError::NonFinite {
                    what: format!("objective for PSD block {b}"),
                });
            }
        }
        if self
            .obj_free
            .iter()
            .chain(&self.obj_nonneg)
            .any(|v| !v.is_finite())
        {
            return Err(SdpError::NonFinite {
                what: "scalar objective".into(),
            });
        }

        let mut rows = Vec::with_capacity(self.rows.len());
        for (j, raw) in self.rows.into_iter().enumerate() {
            if !raw.rhs.is_finite() {
                return Err(SdpError::NonFinite {
                    what: format!("rhs of row {j}"),
                });
            }
            // Merge duplicate PSD terms, check dimensions, drop zero terms.
            let mut psd: Vec<(usize, SymMatrix)> = Vec::with_capacity(raw.psd.len());
            let mut sorted = raw.psd;
            sorted.sort_by_key(|(b, _)| *b);
            for (b, a) in sorted {
                if b >= self.psd_dims.len() {
                    return Err(SdpError::BadVariable {
                        row: j,
                        kind: "PSD",
                        idx: b,
                    });
                }
                if a.dim() != self.psd_dims[b] {
                    return Err(SdpError::RowBlockDim {
                        row: j,
                        block: b,
                        expected: self.psd_dims[b],
                        got: a.dim(),
                    });
                }
                if !a.is_finite() {
                    return Err(SdpError::NonFinite {
                        what: format!("row {j}, block {b}"),
                    });
                }
                match psd.last_mut() {
                    Some((prev, acc)) if *prev == b => *acc = &*acc + &a,
                    _ => psd.push((b, a)),
                }
            }
            psd.retain(|(_, a)| a.as_dmatrix().amax() != 0.0);

            let merge_scalars = |terms: Vec<(usize, f64)>,
                                 count: usize,
                                 kind: &'static str|
             -> Result<Vec<(usize, f64)>, SdpError> {
                let mut sorted = terms;
                sorted.sort_by_key(|(i, _)| *i);
                let mut out: Vec<(usize, f64)> = Vec::with_capacity(sorted.len());
                for (i, e) in sorted {
                    if i >= count {
                        return Err(SdpError::BadVariable {
                            row: j,
                            kind,
                            idx: i,
                        });
                    }
                    if !e.is_finite() {
                        return Err(SdpError::NonFinite {
                            what: format!("row {j}, {kind} var {i}"),
                        });
                    }
                    match out.last_mut() {
                        Some((prev, acc)) if *prev == i => *acc += e,
                        _ => out.push((i, e)),
                    }
                }
                out.retain(|(_, e)| *e != 0.0);
                Ok(out)
            };
            let free = merge_scalars(raw.free, n_free, "free")?;
            let nonneg = merge_scalars(raw.nonneg, n_nonneg, "nonneg")?;
            rows.push(Row {
                psd,
                free,
                nonneg,
                rhs: raw.rhs,
            });
        }

        Ok(BlockSdp {
            psd_dims: self.psd_dims,
            n_free,
            n_nonneg,
            obj_psd: self.obj_psd,
            obj_free: self.obj_free,
            obj_nonneg: self.obj_nonneg,
            rows,
        })
    }
}

/// Termination status of a solve. `NumericalFailure` is reported through this
/// enum rather than as an error so that callers always get the final iterate
/// diagnostics alongside it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    /// Residuals and duality gap within tolerances.
    Optimal,
    /// Within a relaxed multiple of the tolerances (stalled or iterate norm
    /// grew large enough to distrust further progress).
    NearOptimal,
    /// Certificate of primal infeasibility found (`dual` holds the ray).
    PrimalInfeasible,
    /// Certificate of dual infeasibility / primal unboundedness found
    /// (primal fields hold the improving ray).
    DualInfeasible,
    /// Primal iterate norm exceeded the divergence threshold while the gap
    /// kept shrinking: the infimum is approached but not attained.
    DivergingIterates,
    /// Iteration cap reached without meeting even relaxed tolerances.
    IterLimit,
    /// Linear algebra broke down (after the regularization retry).
    NumericalFailure,
}

impl SdpStatus {
    /// Statuses whose reported objective value approximates the optimum.
    pub fn value_usable(self) -> bool {
        matches!(
            self,
            SdpStatus::Optimal | SdpStatus::NearOptimal | SdpStatus::DivergingIterates
        )
    }
}

/// Solver configuration. Defaults pin the tolerances used across the crate's
/// tests: `feas_tol = gap_tol = 1e-8`, 200 iterations.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Primal and dual residual tolerance (scaled by `1 + ||b||`, `1 + ||c||`).
    pub feas_tol: f64,
    /// Duality gap tolerance, applied as `gap <= gap_tol * (1 + |pobj|)`.
    pub gap_tol: f64,
    pub max_iter: usize,
    /// NearOptimal classification: within `near_factor` times the tolerances.
    pub near_factor: f64,
    /// Declare diverging iterates when the de-homogenized primal norm exceeds
    /// `diverge_factor * (1 + data norm)` while the gap shrinks.
    pub diverge_factor: f64,
    /// Attach a primal-norm warning (and downgrade Optimal to NearOptimal)
    /// beyond `norm_warn_factor * (1 + data norm)`.
    pub norm_warn_factor: f64,
    /// Ratio `tau/kappa` below which the homogeneous embedding declares
    /// infeasibility.
    pub infeas_ratio: f64,
    /// Record per-iteration statistics in the solution.
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            max_iter: 200,
            near_factor: 1e3,
            diverge_factor: 1e8,
            norm_warn_factor: 1e6,
            infeas_ratio: 1e-10,
            record_trace: false,
        }
    }
}

/// Per-iteration statistics (recorded when `SolverOptions::record_trace`).
#[derive(Debug, Clone)]
pub struct IterateStats {
    pub iter: usize,
    pub pobj: f64,
    pub dobj: f64,
    pub mu: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub tau: f64,
    pub kappa: f64,
    pub primal_norm: f64,
    /// Bound on how far below `dobj` the value `pobj` may sit due to
    /// infeasibility of the current iterate: `(|rd.x| + |rp.y|)/tau^2`.
    pub duality_slack_bound: f64,
}

/// Result of a solve. For infeasibility certificates the primal/dual fields
/// carry the certifying ray (see [`SdpStatus`]).
#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub psd: Vec<SymMatrix>,
    pub free: Vec<f64>,
    pub nonneg: Vec<f64>,
    /// Row multipliers, indexed like the original rows (dropped dependent
    /// rows get multiplier 0).
    pub dual: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub primal_norm: f64,
    pub primal_norm_warning: bool,
    /// Indices of constraint rows removed as linearly dependent.
    pub dropped_rows: Vec<usize>,
    pub trace: Vec<IterateStats>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_canonicalizes_rows() {
        let mut b = BlockSdpBuilder::new();
        let x = b.add_psd_block(2, SymMatrix::identity(2));
        let w = b.add_free(1.0);
        // Duplicate terms merge; zero terms vanish.
        b.eq(
            RowExpr::new()
                .psd(x, SymMatrix::identity(2))
                .psd(x, SymMatrix::scaled_identity(2, -1.0))
                .free(w, 2.0)
                .free(w, 3.0),
            1.0,
        );
        let sdp = b.finish().unwrap();
        assert!(sdp.rows()[0].psd.is_empty());
        assert_eq!(sdp.rows()[0].free, vec![(0, 5.0)]);
    }

    #[test]
    fn builder_rejects_bad_dims() {
        let mut b = BlockSdpBuilder::new();
        let x = b.add_psd_block(2, SymMatrix::identity(2));
        b.eq(RowExpr::new().psd(x, SymMatrix::identity(3)), 0.0);
        assert!(matches!(b.finish(), Err(SdpError::RowBlockDim { .. })));
    }

    #[test]
    fn leq_adds_slack() {
        let mut b = BlockSdpBuilder::new();
        let x = b.add_psd_block(1, SymMatrix::identity(1));
        b.leq(RowExpr::new().psd(x, SymMatrix::identity(1)), 2.0);
        let sdp = b.finish().unwrap();
        assert_eq!(sdp.n_nonneg(), 1);
        assert_eq!(sdp.rows()[0].nonneg, vec![(0, 1.0)]);
    }
}
