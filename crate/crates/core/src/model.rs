//! Core data model: symmetric matrices, matrix tuples, spectrahedra,
//! two-stage problem data, scenario sets, and validation.
//!
//! Everything downstream (solver, recourse oracle, extensive forms) consumes
//! these containers. Construction enforces the structural invariants that are
//! cheap and local (squareness, exact symmetry, matching tuple dimensions);
//! cross-field consistency of a whole problem is checked by
//! [`validate_problem`], which reports *all* violations instead of failing on
//! the first one.

use nalgebra::DMatrix;

/// Relative asymmetry accepted by [`SymMatrix::symmetrized`] before the input
/// is rejected outright.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Tolerance on `sum(pi) - 1` for scenario probabilities.
pub const PROBABILITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("matrix is not square: {rows} rows, row {bad_row} has {bad_len} entries")]
    NotSquare {
        rows: usize,
        bad_row: usize,
        bad_len: usize,
    },

    #[error("matrix has dimension 0")]
    EmptyMatrix,

    #[error("matrix is not symmetric: entry ({i},{j}) = {a} but ({j},{i}) = {b}")]
    NotSymmetric { i: usize, j: usize, a: f64, b: f64 },

    #[error("asymmetry {defect:e} exceeds the {SYMMETRY_TOL:e} symmetrization tolerance")]
    AsymmetryTooLarge { defect: f64 },

    #[error("{what}: expected dimension {expected}, got {got}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matrix tuple is empty")]
    EmptyTuple,

    #[error("matrix tuple blocks have mixed dimensions: block 0 is {first}, block {idx} is {got}")]
    MixedTupleDims {
        first: usize,
        idx: usize,
        got: usize,
    },

    #[error("scenario set is empty")]
    EmptyScenarioSet,

    #[error("scenario {idx}: probability {pi} is not strictly positive")]
    NonPositiveProbability { idx: usize, pi: f64 },

    #[error("scenario probabilities sum to {sum}, which is off by more than {PROBABILITY_TOL:e}")]
    ProbabilitySum { sum: f64 },

    #[error("scenario {idx}: support vector has length {got}, expected {expected}")]
    ScenarioDim {
        idx: usize,
        expected: usize,
        got: usize,
    },
}

/// Dense symmetric matrix with exactly equal mirrored entries.
///
/// The symmetry invariant is bitwise: `a[i][j]` and `a[j][i]` are the same
/// f64 bit pattern. The only way to bring a not-exactly-symmetric matrix into
/// the type is the explicit [`SymMatrix::symmetrized`] constructor, which
/// averages the mirrored entries and reports the defect it absorbed.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    data: DMatrix<f64>,
}

impl SymMatrix {
    /// Builds from row data, requiring exact (bitwise) symmetry.
    pub fn new(rows: &[Vec<f64>]) -> Result<Self, ModelError> {
        let n = rows.len();
        if n == 0 {
            return Err(ModelError::EmptyMatrix);
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(ModelError::NotSquare {
                    rows: n,
                    bad_row: i,
                    bad_len: r.len(),
                });
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if rows[i][j].to_bits() != rows[j][i].to_bits() {
                    return Err(ModelError::NotSymmetric {
                        i,
                        j,
                        a: rows[i][j],
                        b: rows[j][i],
                    });
                }
            }
        }
        let data = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Ok(SymMatrix { data })
    }

    /// Builds from possibly asymmetric row data by averaging `(A + A')/2`.
    ///
    /// Returns the matrix together with the relative asymmetry that was
    /// absorbed, `max |a_ij - a_ji| / max(1, max |a_ij|)`. Inputs with a
    /// defect beyond [`SYMMETRY_TOL`] (or non-finite defect) are rejected.
    pub fn symmetrized(rows: &[Vec<f64>]) -> Result<(Self, f64), ModelError> {
        let n = rows.len();
        if n == 0 {
            return Err(ModelError::EmptyMatrix);
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(ModelError::NotSquare {
                    rows: n,
                    bad_row: i,
                    bad_len: r.len(),
                });
            }
        }
        let mut max_abs = 0.0f64;
        let mut max_defect = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                max_abs = max_abs.max(rows[i][j].abs());
                if j > i {
                    max_defect = max_defect.max((rows[i][j] - rows[j][i]).abs());
                }
            }
        }
        let rel = max_defect / max_abs.max(1.0);
        if !(rel <= SYMMETRY_TOL) {
            return Err(ModelError::AsymmetryTooLarge { defect: rel });
        }
        let data = DMatrix::from_fn(n, n, |i, j| 0.5 * (rows[i][j] + rows[j][i]));
        Ok((SymMatrix { data }, rel))
    }

    /// Explicit symmetrization of an arbitrary square `DMatrix`, `(A+A')/2`.
    ///
    /// Used where an algebraic identity guarantees symmetry up to roundoff
    /// (congruence transforms inside the solver) and the drift should simply
    /// be projected out. Panics if the matrix is not square or is empty.
    pub fn symmetric_part(m: &DMatrix<f64>) -> Self {
        assert!(
            m.is_square() && m.nrows() > 0,
            "symmetric_part needs a nonempty square matrix"
        );
        let n = m.nrows();
        let data = DMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
        SymMatrix { data }
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0);
        SymMatrix {
            data: DMatrix::zeros(dim, dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        assert!(dim > 0);
        SymMatrix {
            data: DMatrix::identity(dim, dim),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        assert!(!diag.is_empty());
        let n = diag.len();
        SymMatrix {
            data: DMatrix::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 }),
        }
    }

    /// Scaled identity `t * I`.
    pub fn scaled_identity(dim: usize, t: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[(i, i)] = t;
        }
        m
    }

    /// Pairing basis `E_pq` with `<E_pq, X> = X[p][q]` for symmetric `X`
    /// (1 on a diagonal position, 0.5 on each of a mirrored off-diagonal
    /// pair).
    pub fn pairing_basis(dim: usize, p: usize, q: usize) -> Self {
        assert!(p < dim && q < dim);
        let mut m = Self::zeros(dim);
        if p == q {
            m.data[(p, p)] = 1.0;
        } else {
            m.data[(p, q)] = 0.5;
            m.data[(q, p)] = 0.5;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    /// Sets the `(i,j)` and `(j,i)` entries together, preserving symmetry.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[(i, j)] = v;
        self.data[(j, i)] = v;
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_dmatrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.data[(i, i)]).sum()
    }

    /// Frobenius (trace) inner product `<A, B> = tr(A B)`.
    ///
    /// Panics on dimension mismatch; use [`frobenius_pair`] for the checked
    /// tuple pairing.
    pub fn dot(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.dim(), other.dim(), "frobenius dot: dimension mismatch");
        let mut acc = 0.0;
        for j in 0..self.dim() {
            for i in 0..self.dim() {
                acc += self.data[(i, j)] * other.data[(i, j)];
            }
        }
        acc
    }

    /// Frobenius norm `sqrt(<A, A>)`.
    pub fn norm(&self) -> f64 {
        self.data.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, t: f64) -> SymMatrix {
        SymMatrix {
            data: &self.data * t,
        }
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self
            .data
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// Whether the matrix is PSD up to `tol` on the smallest eigenvalue.
    pub fn is_psd(&self, tol: f64) -> bool {
        self.min_eigenvalue() >= -tol
    }
}

impl std::ops::Add<&SymMatrix> for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        assert_eq!(self.dim(), rhs.dim());
        SymMatrix {
            data: &self.data + &rhs.data,
        }
    }
}

impl std::ops::Sub<&SymMatrix> for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        assert_eq!(self.dim(), rhs.dim());
        SymMatrix {
            data: &self.data - &rhs.data,
        }
    }
}

/// Frobenius inner product of each tuple block with `x`:
/// `(T•x)_j = <T_j, x>`.
pub fn frobenius_pair(t: &MatrixTuple, x: &SymMatrix) -> Result<Vec<f64>, ModelError> {
    if t.block_dim() != x.dim() {
        return Err(ModelError::DimMismatch {
            what: "frobenius pairing",
            expected: t.block_dim(),
            got: x.dim(),
        });
    }
    Ok(t.blocks().iter().map(|b| b.dot(x)).collect())
}

/// Frobenius norm of a symmetric matrix.
pub fn frobenius_norm(x: &SymMatrix) -> f64 {
    x.norm()
}

/// Ordered tuple of symmetric matrices of one common dimension. Represents
/// the linear maps `x -> T•x = (<T_1,x>, ..., <T_s,x>)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixTuple {
    blocks: Vec<SymMatrix>,
}

impl MatrixTuple {
    pub fn new(blocks: Vec<SymMatrix>) -> Result<Self, ModelError> {
        if blocks.is_empty() {
            return Err(ModelError::EmptyTuple);
        }
        let first = blocks[0].dim();
        for (idx, b) in blocks.iter().enumerate().skip(1) {
            if b.dim() != first {
                return Err(ModelError::MixedTupleDims {
                    first,
                    idx,
                    got: b.dim(),
                });
            }
        }
        Ok(MatrixTuple { blocks })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn block_dim(&self) -> usize {
        self.blocks[0].dim()
    }

    pub fn blocks(&self) -> &[SymMatrix] {
        &self.blocks
    }

    pub fn block(&self, j: usize) -> &SymMatrix {
        &self.blocks[j]
    }

    /// Adjoint of the pairing map: `u -> sum_j u_j T_j`.
    pub fn adjoint_apply(&self, u: &[f64]) -> SymMatrix {
        assert_eq!(u.len(), self.len(), "adjoint: coefficient count mismatch");
        let mut acc = SymMatrix::zeros(self.block_dim()).into_dmatrix();
        for (uj, b) in u.iter().zip(&self.blocks) {
            acc += b.as_dmatrix() * *uj;
        }
        SymMatrix::symmetric_part(&acc)
    }

    /// Upper bound on the operator norm of `x -> T•x` from the symmetric
    /// matrices (Frobenius) with the Euclidean norm on the image:
    /// `sqrt(sum_j ||T_j||_F^2)`.
    pub fn operator_norm_bound(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.norm().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// First-stage feasible set
/// `X = { x PSD : <G_k,x> = g_k, <H_l,x> <= h_l, tr(x) <= cap }`.
///
/// The set is treated as compact exactly when `trace_cap` is present
/// (`x PSD` with a trace cap is bounded); operations that require
/// compactness (the value-at-risk big-M model) insist on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrahedron {
    pub dim: usize,
    /// Equality constraints `<G_k, x> = g_k`.
    pub eq: Vec<(SymMatrix, f64)>,
    /// Inequality constraints `<H_l, x> <= h_l`.
    pub ineq: Vec<(SymMatrix, f64)>,
    /// Optional trace cap `tr(x) <= cap`; presence marks the set compact.
    pub trace_cap: Option<f64>,
}

impl Spectrahedron {
    /// PSD cone slice with no linear constraints (not compact).
    pub fn free(dim: usize) -> Self {
        Spectrahedron {
            dim,
            eq: Vec::new(),
            ineq: Vec::new(),
            trace_cap: None,
        }
    }

    /// The singleton `{0}`, written as entrywise equality constraints.
    pub fn zero_point(dim: usize) -> Self {
        let mut eq = Vec::new();
        for p in 0..dim {
            for q in p..dim {
                eq.push((SymMatrix::pairing_basis(dim, p, q), 0.0));
            }
        }
        Spectrahedron {
            dim,
            eq,
            ineq: Vec::new(),
            trace_cap: Some(0.0),
        }
    }

    /// `{ x PSD : tr(x) <= cap }`.
    pub fn trace_ball(dim: usize, cap: f64) -> Self {
        Spectrahedron {
            dim,
            eq: Vec::new(),
            ineq: Vec::new(),
            trace_cap: Some(cap),
        }
    }

    pub fn is_compact(&self) -> bool {
        self.trace_cap.is_some()
    }

    /// Checks membership of `x` up to `tol` (PSD, equalities, inequalities,
    /// trace cap).
    pub fn contains(&self, x: &SymMatrix, tol: f64) -> bool {
        if x.dim() != self.dim || !x.is_psd(tol) {
            return false;
        }
        for (g, rhs) in &self.eq {
            if (g.dot(x) - rhs).abs() > tol {
                return false;
            }
        }
        for (h, rhs) in &self.ineq {
            if h.dot(x) - rhs > tol {
                return false;
            }
        }
        if let Some(cap) = self.trace_cap {
            if x.trace() - cap > tol {
                return false;
            }
        }
        true
    }
}

/// Data of the parametric two-stage problem
/// `min { c•x + phi(z - T•x) : x in X }` with recourse
/// `phi(t) = min { q•y : W•y = t, y PSD }`.
///
/// Plain container: all fields are public and no cross-field consistency is
/// enforced here, so that [`validate_problem`] can report every defect of a
/// malformed instance at once.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemData {
    /// First-stage matrix dimension.
    pub n: usize,
    /// Second-stage matrix dimension.
    pub m: usize,
    /// Number of coupling rows (length of `z` and of the tuples).
    pub s: usize,
    /// First-stage cost matrix, dimension `n`.
    pub c: SymMatrix,
    /// Second-stage cost matrix, dimension `m`.
    pub q: SymMatrix,
    /// Technology tuple, `s` blocks of dimension `n`.
    pub t: MatrixTuple,
    /// Recourse tuple, `s` blocks of dimension `m`.
    pub w: MatrixTuple,
    /// First-stage feasible set, dimension `n`.
    pub x_set: Spectrahedron,
}

/// One scenario: probability mass and support point.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub pi: f64,
    pub z: Vec<f64>,
}

/// Finite discrete scenario distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    scenarios: Vec<Scenario>,
}

impl ScenarioSet {
    /// Validating constructor: probabilities strictly positive and summing to
    /// one within [`PROBABILITY_TOL`], all support vectors of equal length.
    pub fn new(scenarios: Vec<Scenario>) -> Result<Self, ModelError> {
        let set = Self::new_unchecked(scenarios);
        set.check()?;
        Ok(set)
    }

    /// Builds without validation, for data that is about to be passed through
    /// [`validate_problem`] (which reports rather than fails).
    pub fn new_unchecked(scenarios: Vec<Scenario>) -> Self {
        ScenarioSet { scenarios }
    }

    fn check(&self) -> Result<(), ModelError> {
        if self.scenarios.is_empty() {
            return Err(ModelError::EmptyScenarioSet);
        }
        let dim = self.scenarios[0].z.len();
        let mut sum = 0.0;
        for (idx, sc) in self.scenarios.iter().enumerate() {
            if !(sc.pi > 0.0) {
                return Err(ModelError::NonPositiveProbability { idx, pi: sc.pi });
            }
            if sc.z.len() != dim {
                return Err(ModelError::ScenarioDim {
                    idx,
                    expected: dim,
                    got: sc.z.len(),
                });
            }
            sum += sc.pi;
        }
        if !((sum - 1.0).abs() <= PROBABILITY_TOL) {
            return Err(ModelError::ProbabilitySum { sum });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    /// Length of the support vectors (0 for an empty set).
    pub fn support_dim(&self) -> usize {
        self.scenarios.first().map_or(0, |sc| sc.z.len())
    }

    pub fn scenarios(&self) -> &[Scenario] {
        &self.scenarios
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.scenarios.iter().map(|sc| sc.pi).collect()
    }

    /// Returns a copy with probabilities divided by their sum. This is the
    /// only place the library rescales probabilities; nothing renormalizes
    /// implicitly.
    pub fn renormalized(&self) -> Result<Self, ModelError> {
        if self.scenarios.is_empty() {
            return Err(ModelError::EmptyScenarioSet);
        }
        let sum: f64 = self.scenarios.iter().map(|sc| sc.pi).sum();
        if !(sum > 0.0) {
            return Err(ModelError::ProbabilitySum { sum });
        }
        let scenarios = self
            .scenarios
            .iter()
            .map(|sc| Scenario {
                pi: sc.pi / sum,
                z: sc.z.clone(),
            })
            .collect();
        ScenarioSet::new(scenarios)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone)]
pub struct ValidationIssue {
    pub severity: Severity,
    pub message: String,
}

/// Collected validation findings. `is_ok` means "no errors"; warnings (for
/// example absorbed asymmetry from parsing) do not block use.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn error(&mut self, message: impl Into<String>) {
        self.issues.push(ValidationIssue {
            severity: Severity::Error,
            message: message.into(),
        });
    }

    pub fn warning(&mut self, message: impl Into<String>) {
        self.issues.push(ValidationIssue {
            severity: Severity::Warning,
            message: message.into(),
        });
    }

    pub fn is_ok(&self) -> bool {
        self.issues.iter().all(|i| i.severity != Severity::Error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &ValidationIssue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &ValidationIssue> {
        self.issues
            .iter()
            .filter(|i| i.severity == Severity::Warning)
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.issues.extend(other.issues);
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.issues.is_empty() {
            return writeln!(f, "ok: no issues");
        }
        for issue in &self.issues {
            let tag = match issue.severity {
                Severity::Warning => "warning",
                Severity::Error => "error",
            };
            writeln!(f, "{tag}: {}", issue.message)?;
        }
        Ok(())
    }
}

fn check_finite(report: &mut ValidationReport, what: &str, m: &SymMatrix) {
    if !m.is_finite() {
        report.error(format!("{what} contains a non-finite entry"));
    }
}

/// Checks dimensional consistency, finiteness, and the scenario distribution
/// of a problem/scenario pair. Reports all violations; never fails early.
pub fn validate_problem(p: &ProblemData, scen: &ScenarioSet) -> ValidationReport {
    let mut report = ValidationReport::default();

    if p.n == 0 {
        report.error("first-stage dimension n must be at least 1");
    }
    if p.m == 0 {
        report.error("second-stage dimension m must be at least 1");
    }
    if p.s == 0 {
        report.error("coupling dimension s must be at least 1");
    }

    if p.c.dim() != p.n {
        report.error(format!(
            "c has dimension {}, expected n = {}",
            p.c.dim(),
            p.n
        ));
    }
    if p.q.dim() != p.m {
        report.error(format!(
            "q has dimension {}, expected m = {}",
            p.q.dim(),
            p.m
        ));
    }
    if p.t.len() != p.s {
        report.error(format!("T has {} blocks, expected s = {}", p.t.len(), p.s));
    }
    if p.t.block_dim() != p.n {
        report.error(format!(
            "T blocks have dimension {}, expected n = {}",
            p.t.block_dim(),
            p.n
        ));
    }
    if p.w.len() != p.s {
        report.error(format!("W has {} blocks, expected s = {}", p.w.len(), p.s));
    }
    if p.w.block_dim() != p.m {
        report.error(format!(
            "W blocks have dimension {}, expected m = {}",
            p.w.block_dim(),
            p.m
        ));
    }
    if p.x_set.dim != p.n {
        report.error(format!(
            "X lives in dimension {}, expected n = {}",
            p.x_set.dim, p.n
        ));
    }

    check_finite(&mut report, "c", &p.c);
    check_finite(&mut report, "q", &p.q);
    for (j, b) in p.t.blocks().iter().enumerate() {
        check_finite(&mut report, &format!("T[{j}]"), b);
    }
    for (j, b) in p.w.blocks().iter().enumerate() {
        check_finite(&mut report, &format!("W[{j}]"), b);
    }
    for (k, (g, rhs)) in p.x_set.eq.iter().enumerate() {
        if g.dim() != p.x_set.dim {
            report.error(format!(
                "X equality {k} has matrix dimension {}, expected {}",
                g.dim(),
                p.x_set.dim
            ));
        }
        check_finite(&mut report, &format!("X equality {k}"), g);
        if !rhs.is_finite() {
            report.error(format!("X equality {k} has non-finite right-hand side"));
        }
    }
    for (l, (h, rhs)) in p.x_set.ineq.iter().enumerate() {
        if h.dim() != p.x_set.dim {
            report.error(format!(
                "X inequality {l} has matrix dimension {}, expected {}",
                h.dim(),
                p.x_set.dim
            ));
        }
        check_finite(&mut report, &format!("X inequality {l}"), h);
        if !rhs.is_finite() {
            report.error(format!("X inequality {l} has non-finite right-hand side"));
        }
    }
    if let Some(cap) = p.x_set.trace_cap {
        if !cap.is_finite() {
            report.error("X trace cap is not finite");
        } else if cap < 0.0 {
            report.warning(format!("X trace cap {cap} is negative; X is empty"));
        }
    }

    if scen.is_empty() {
        report.error("scenario set is empty");
    } else {
        let mut sum = 0.0;
        for (idx, sc) in scen.scenarios().iter().enumerate() {
            if !(sc.pi > 0.0) {
                report.error(format!(
                    "scenario {idx}: probability {} not strictly positive",
                    sc.pi
                ));
            }
            if !sc.pi.is_finite() {
                report.error(format!("scenario {idx}: probability not finite"));
            }
            if sc.z.len() != p.s {
                report.error(format!(
                    "scenario {idx}: support vector length {} does not match s = {}",
                    sc.z.len(),
                    p.s
                ));
            }
            if sc.z.iter().any(|v| !v.is_finite()) {
                report.error(format!(
                    "scenario {idx}: support vector has a non-finite entry"
                ));
            }
            sum += sc.pi;
        }
        if sum.is_finite() && (sum - 1.0).abs() > PROBABILITY_TOL {
            report.error(format!(
                "scenario probabilities sum to {sum}, expected 1 within {PROBABILITY_TOL:e}"
            ));
        }
    }

    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_asymmetric_input() {
        let err = SymMatrix::new(&[vec![1.0, 2.0], vec![2.1, 1.0]]).unwrap_err();
        assert!(matches!(err, ModelError::NotSymmetric { .. }));
    }

    #[test]
    fn symmetrized_averages_small_defects() {
        let eps = 1e-12;
        let (m, defect) = SymMatrix::symmetrized(&[vec![1.0, 2.0 + eps], vec![2.0, 1.0]]).unwrap();
        assert!(defect > 0.0 && defect <= SYMMETRY_TOL);
        assert_eq!(m.get(0, 1), m.get(1, 0));
        assert!((m.get(0, 1) - (2.0 + eps / 2.0)).abs() < 1e-15);

        let err = SymMatrix::symmetrized(&[vec![1.0, 2.0], vec![2.5, 1.0]]).unwrap_err();
        assert!(matches!(err, ModelError::AsymmetryTooLarge { .. }));
    }

    #[test]
    fn frobenius_pair_identity_blocks() {
        // (I, 2I) paired with diag(1,3) gives (4, 8).
        let t = MatrixTuple::new(vec![
            SymMatrix::identity(2),
            SymMatrix::scaled_identity(2, 2.0),
        ])
        .unwrap();
        let x = SymMatrix::from_diagonal(&[1.0, 3.0]);
        let vals = frobenius_pair(&t, &x).unwrap();
        assert_eq!(vals, vec![4.0, 8.0]);
    }

    #[test]
    fn frobenius_norm_full_matrix() {
        // [[3,4],[4,3]] has squared entries summing to 50.
        let x = SymMatrix::new(&[vec![3.0, 4.0], vec![4.0, 3.0]]).unwrap();
        assert!((frobenius_norm(&x) - 50f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn frobenius_pair_dim_mismatch() {
        let t = MatrixTuple::new(vec![SymMatrix::identity(3)]).unwrap();
        let x = SymMatrix::identity(2);
        assert!(matches!(
            frobenius_pair(&t, &x),
            Err(ModelError::DimMismatch { .. })
        ));
    }

    #[test]
    fn pairing_basis_extracts_entries() {
        let x = SymMatrix::new(&[vec![1.0, 2.0], vec![2.0, 5.0]]).unwrap();
        assert_eq!(SymMatrix::pairing_basis(2, 0, 0).dot(&x), 1.0);
        assert_eq!(SymMatrix::pairing_basis(2, 0, 1).dot(&x), 2.0);
        assert_eq!(SymMatrix::pairing_basis(2, 1, 1).dot(&x), 5.0);
    }

    #[test]
    fn tuple_rejects_mixed_dims() {
        let err =
            MatrixTuple::new(vec![SymMatrix::identity(2), SymMatrix::identity(3)]).unwrap_err();
        assert!(matches!(err, ModelError::MixedTupleDims { .. }));
    }

    #[test]
    fn scenario_set_validation() {
        let ok = ScenarioSet::new(vec![
            Scenario {
                pi: 0.5,
                z: vec![0.0],
            },
            Scenario {
                pi: 0.5,
                z: vec![1.0],
            },
        ]);
        assert!(ok.is_ok());

        let bad_sum = ScenarioSet::new(vec![
            Scenario {
                pi: 0.6,
                z: vec![0.0],
            },
            Scenario {
                pi: 0.6,
                z: vec![1.0],
            },
        ]);
        assert!(matches!(bad_sum, Err(ModelError::ProbabilitySum { .. })));

        let bad_pi = ScenarioSet::new(vec![
            Scenario {
                pi: 0.0,
                z: vec![0.0],
            },
            Scenario {
                pi: 1.0,
                z: vec![1.0],
            },
        ]);
        assert!(matches!(
            bad_pi,
            Err(ModelError::NonPositiveProbability { .. })
        ));
    }

    #[test]
    fn renormalize_is_explicit() {
        let raw = ScenarioSet::new_unchecked(vec![
            Scenario {
                pi: 0.6,
                z: vec![0.0],
            },
            Scenario {
                pi: 0.6,
                z: vec![1.0],
            },
        ]);
        let fixed = raw.renormalized().unwrap();
        assert!((fixed.probabilities()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn validate_reports_all_problems() {
        // n = 2 declared, but T blocks have dimension 3 and probabilities sum
        // to 1.2: both must appear in one report.
        let p = ProblemData {
            n: 2,
            m: 2,
            s: 1,
            c: SymMatrix::identity(2),
            q: SymMatrix::identity(2),
            t: MatrixTuple::new(vec![SymMatrix::identity(3)]).unwrap(),
            w: MatrixTuple::new(vec![SymMatrix::identity(2)]).unwrap(),
            x_set: Spectrahedron::trace_ball(2, 1.0),
        };
        let scen = ScenarioSet::new_unchecked(vec![
            Scenario {
                pi: 0.6,
                z: vec![0.0],
            },
            Scenario {
                pi: 0.6,
                z: vec![1.0],
            },
        ]);
        let report = validate_problem(&p, &scen);
        assert!(!report.is_ok());
        let text = report.to_string();
        assert!(text.contains("T blocks have dimension 3"));
        assert!(text.contains("sum to 1.2"));
    }

    #[test]
    fn validate_reports_nan() {
        let nan = f64::NAN;
        let q = SymMatrix::new(&[vec![nan, 0.0], vec![0.0, 1.0]]).unwrap();
        let p = ProblemData {
            n: 1,
            m: 2,
            s: 1,
            c: SymMatrix::identity(1),
            q,
            t: MatrixTuple::new(vec![SymMatrix::identity(1)]).unwrap(),
            w: MatrixTuple::new(vec![SymMatrix::identity(2)]).unwrap(),
            x_set: Spectrahedron::trace_ball(1, 1.0),
        };
        let scen = ScenarioSet::new_unchecked(vec![Scenario {
            pi: 1.0,
            z: vec![0.0],
        }]);
        let report = validate_problem(&p, &scen);
        assert!(!report.is_ok());
        assert!(report.to_string().contains("q contains a non-finite entry"));
    }

    #[test]
    fn spectrahedron_membership() {
        let ball = Spectrahedron::trace_ball(2, 1.0);
        assert!(ball.contains(&SymMatrix::scaled_identity(2, 0.5), 1e-9));
        assert!(!ball.contains(&SymMatrix::identity(2), 1e-9));
        assert!(!ball.contains(&SymMatrix::from_diagonal(&[0.5, -0.1]), 1e-9));

        let zero = Spectrahedron::zero_point(2);
        assert!(zero.contains(&SymMatrix::zeros(2), 1e-9));
        assert!(!zero.contains(&SymMatrix::scaled_identity(2, 1e-3), 1e-9));
    }
}
