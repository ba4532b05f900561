//! On-disk formats: problem and scenario instances, perturbation plans, and
//! machine-readable solve results. Everything is JSON with an explicit
//! `format_version` so readers can refuse files from a future layout.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use stochsdp_core::model::{
    validate_problem, MatrixTuple, ProblemData, Scenario, ScenarioSet, Spectrahedron, SymMatrix,
};
use stochsdp_core::stability::{PerturbMode, PerturbationPlan};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub s: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EqConstraintFile {
    #[serde(rename = "G")]
    pub matrix: Vec<Vec<f64>>,
    pub g: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IneqConstraintFile {
    #[serde(rename = "H")]
    pub matrix: Vec<Vec<f64>>,
    pub h: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeasibleSetFile {
    #[serde(default)]
    pub eq: Vec<EqConstraintFile>,
    #[serde(default)]
    pub ineq: Vec<IneqConstraintFile>,
    #[serde(default)]
    pub trace_cap: Option<f64>,
}

/// Instance data of the two-stage problem; matrices are dense row lists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemFile {
    pub format_version: u32,
    pub dims: Dims,
    pub c: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "T")]
    pub t: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "W")]
    pub w: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "X")]
    pub x: FeasibleSetFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub pi: f64,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub format_version: u32,
    pub scenarios: Vec<ScenarioEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanFile {
    pub format_version: u32,
    /// One of `weight-dirichlet-jitter`, `support-gaussian-jitter`,
    /// `atom-merge-split`.
    pub mode: String,
    pub magnitudes: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
}

/// Machine-readable record of one solve, written by `solve --out`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveResultFile {
    pub format_version: u32,
    pub method: String,
    pub risk: String,
    pub status: String,
    pub value: f64,
    pub x: Vec<Vec<f64>>,
    /// Realized second-stage costs per scenario (unweighted).
    pub per_scenario_costs: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node_count: Option<usize>,
}

fn check_version(found: u32, what: &str) -> Result<(), String> {
    if found == FORMAT_VERSION {
        Ok(())
    } else {
        Err(format!(
            "{what}: format_version {found} not supported (this build reads {FORMAT_VERSION})"
        ))
    }
}

fn read_to_string(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn sym_from_rows(rows: &[Vec<f64>], what: &str) -> Result<SymMatrix, String> {
    SymMatrix::new(rows).map_err(|e| format!("{what}: {e}"))
}

pub fn problem_from_file(file: &ProblemFile) -> Result<ProblemData, String> {
    check_version(file.format_version, "problem file")?;
    let c = sym_from_rows(&file.c, "matrix c")?;
    let q = sym_from_rows(&file.q, "matrix q")?;
    let t_blocks: Vec<SymMatrix> = file
        .t
        .iter()
        .enumerate()
        .map(|(j, rows)| sym_from_rows(rows, &format!("T[{j}]")))
        .collect::<Result<_, _>>()?;
    let w_blocks: Vec<SymMatrix> = file
        .w
        .iter()
        .enumerate()
        .map(|(j, rows)| sym_from_rows(rows, &format!("W[{j}]")))
        .collect::<Result<_, _>>()?;
    let t = MatrixTuple::new(t_blocks).map_err(|e| format!("T: {e}"))?;
    let w = MatrixTuple::new(w_blocks).map_err(|e| format!("W: {e}"))?;
    let eq = file
        .x
        .eq
        .iter()
        .enumerate()
        .map(|(k, con)| Ok((sym_from_rows(&con.matrix, &format!("X.eq[{k}]"))?, con.g)))
        .collect::<Result<Vec<_>, String>>()?;
    let ineq = file
        .x
        .ineq
        .iter()
        .enumerate()
        .map(|(l, con)| Ok((sym_from_rows(&con.matrix, &format!("X.ineq[{l}]"))?, con.h)))
        .collect::<Result<Vec<_>, String>>()?;
    Ok(ProblemData {
        n: file.dims.n,
        m: file.dims.m,
        s: file.dims.s,
        c,
        q,
        t,
        w,
        x_set: Spectrahedron {
            dim: file.dims.n,
            eq,
            ineq,
            trace_cap: file.x.trace_cap,
        },
    })
}

pub fn scenarios_from_file(file: &ScenarioFile) -> Result<ScenarioSet, String> {
    check_version(file.format_version, "scenario file")?;
    if file.scenarios.is_empty() {
        return Err("scenario file: no scenarios".into());
    }
    Ok(ScenarioSet::new_unchecked(
        file.scenarios.iter().map(|e| Scenario { pi: e.pi, z: e.z.clone() }).collect(),
    ))
}

/// Loads and cross-validates an instance pair. Validation warnings go to
/// stderr; errors abort with the full report.
pub fn load_instance(
    problem_path: &Path,
    scenario_path: &Path,
    renormalize: bool,
) -> Result<(ProblemData, ScenarioSet), String> {
    let text = read_to_string(problem_path)?;
    let pf: ProblemFile =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", problem_path.display()))?;
    let p = problem_from_file(&pf).map_err(|e| format!("{}: {e}", problem_path.display()))?;

    let text = read_to_string(scenario_path)?;
    let sf: ScenarioFile =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", scenario_path.display()))?;
    let mut scen =
        scenarios_from_file(&sf).map_err(|e| format!("{}: {e}", scenario_path.display()))?;
    if renormalize {
        scen = scen
            .renormalized()
            .map_err(|e| format!("{}: {e}", scenario_path.display()))?;
    }

    let report = validate_problem(&p, &scen);
    for w in report.warnings() {
        eprintln!("warning: {}", w.message);
    }
    if !report.is_ok() {
        let mut msg = String::from("instance failed validation:");
        for issue in report.errors() {
            msg.push_str("\n  - ");
            msg.push_str(&issue.message);
        }
        return Err(msg);
    }
    Ok((p, scen))
}

pub fn load_plan(path: &Path) -> Result<PerturbationPlan, String> {
    let text = read_to_string(path)?;
    let pf: PlanFile =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    check_version(pf.format_version, "plan file")?;
    let mode = PerturbMode::parse(&pf.mode).ok_or_else(|| {
        format!(
            "{}: unknown mode {:?} (expected weight-dirichlet-jitter, \
             support-gaussian-jitter, or atom-merge-split)",
            path.display(),
            pf.mode
        )
    })?;
    Ok(PerturbationPlan {
        mode,
        magnitudes: pf.magnitudes,
        replications: pf.replications,
        seed: pf.seed,
    })
}
