//! `stochsdp`: two-stage stochastic semidefinite programming from the
//! command line.
//!
//! Exit codes: 0 success, 1 assumption/verification failure, 2 usage or
//! parse error, 3 convergence failure (bounds are still printed).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use stochsdp_core::decompose::{
    benders_solve, bnb_solve_var, render_cut_log, BendersOptions, BnbOptions, ConvergenceStatus,
};
use stochsdp_core::extensive::{build_for_spec, solve_extensive, unweighted_costs};
use stochsdp_core::model::{ProblemData, ScenarioSet, SymMatrix};
use stochsdp_core::recourse::{check_a1, check_a2, lipschitz_bound, A1Certificate, RecourseOracle};
use stochsdp_core::risk::RiskSpec;
use stochsdp_core::sdp::{read_sdpa, write_sdpa, write_sidecar, SdpaMeta, SolverOptions};
use stochsdp_core::stability::stability_sweep;
use stochsdp_core::Error;

use stochsdp_cli::files::{self, SolveResultFile, FORMAT_VERSION};
use stochsdp_cli::grammar;

/// Two-stage stochastic semidefinite programming toolkit: assumption
/// checks, mean-risk solves, SDPA export, and stability sweeps.
#[derive(Parser)]
#[command(name = "stochsdp", version)]
struct Cli {
    /// Cap on concurrently solved subproblems (1 = bit-reproducible output)
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Renormalize scenario weights whose sum drifted away from one
    #[arg(long, global = true)]
    renormalize: bool,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Verify complete recourse and strict dual feasibility, and report
    /// the recourse Lipschitz bound
    Check { problem: PathBuf, scenarios: PathBuf },

    /// Minimize the chosen risk functional of the two-stage costs
    Solve {
        problem: PathBuf,
        scenarios: PathBuf,

        /// Risk functional: E | E+rho*EE(eta) | E+rho*CVaR(alpha) |
        /// E+rho*VaR(alpha) | E+rho*Mad(p)
        #[arg(long)]
        risk: String,

        /// Solution method; value-at-risk objectives require (and are the
        /// only ones allowed with) `bnb`
        #[arg(long, value_enum)]
        method: Method,

        /// Write a machine-readable JSON result here
        #[arg(long)]
        out: Option<PathBuf>,

        /// Model the textbook big-M / semideviation inequality forms
        /// verbatim instead of the tightened defaults
        #[arg(long)]
        literal_constraints: bool,

        /// Cutting planes: one aggregate cut per iteration instead of one
        /// per scenario
        #[arg(long)]
        single_cut: bool,

        /// Cutting planes: print the accumulated cut log
        #[arg(long)]
        cut_log: bool,
    },

    /// Flatten the problem and write it in SDPA sparse format with a
    /// sidecar for the structure the format cannot express
    Export {
        problem: PathBuf,
        scenarios: PathBuf,

        /// Risk functional (same grammar as `solve`)
        #[arg(long)]
        risk: String,

        #[arg(long, value_enum, default_value = "sdpa")]
        format: ExportFormat,

        /// Output path; the sidecar lands next to it with extension
        /// `.sidecar`
        #[arg(long)]
        out: PathBuf,

        /// See `solve --literal-constraints`
        #[arg(long)]
        literal_constraints: bool,
    },

    /// Re-solve under perturbed scenario sets and report value/solution
    /// distances as CSV
    Stability {
        problem: PathBuf,
        scenarios: PathBuf,

        /// Risk functional (same grammar as `solve`)
        #[arg(long)]
        risk: String,

        /// Perturbation plan file (mode, magnitudes, replications, seed)
        #[arg(long)]
        plan: PathBuf,

        /// Write the CSV here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Extensive,
    Benders,
    Bnb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExportFormat {
    Sdpa,
}

enum Failure {
    /// Bad arguments, unreadable files, malformed data: exit 2.
    Usage(String),
    /// Library-level failure; the variant picks the exit code.
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<String> for Failure {
    fn from(msg: String) -> Self {
        Failure::Usage(msg)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Core(Error::AssumptionFailed { .. }) => 1,
            Failure::Core(Error::SolveFailed { .. }) => 3,
            Failure::Core(_) => 2,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: failed to size the thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.cmd, cli.renormalize) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}

fn run(cmd: Cmd, renormalize: bool) -> Result<u8, Failure> {
    match cmd {
        Cmd::Check { problem, scenarios } => {
            let opts = apply_env(SolverOptions::default())?;
            cmd_check(&problem, &scenarios, renormalize, &opts)
        }
        Cmd::Solve {
            problem,
            scenarios,
            risk,
            method,
            out,
            literal_constraints,
            single_cut,
            cut_log,
        } => cmd_solve(
            &problem,
            &scenarios,
            &risk,
            method,
            out.as_deref(),
            literal_constraints,
            single_cut,
            cut_log,
            renormalize,
        ),
        Cmd::Export { problem, scenarios, risk, format, out, literal_constraints } => {
            let opts = apply_env(SolverOptions::default())?;
            cmd_export(
                &problem,
                &scenarios,
                &risk,
                format,
                &out,
                literal_constraints,
                renormalize,
                &opts,
            )
        }
        Cmd::Stability { problem, scenarios, risk, plan, out } => {
            let opts = apply_env(SolverOptions::default())?;
            cmd_stability(&problem, &scenarios, &risk, &plan, out.as_deref(), renormalize, &opts)
        }
    }
}

/// Applies the documented environment overrides on top of `opts`:
/// `STOCHSDP_FEAS_TOL`, `STOCHSDP_GAP_TOL` (positive reals) and
/// `STOCHSDP_MAX_ITER` (positive integer).
fn apply_env(mut opts: SolverOptions) -> Result<SolverOptions, Failure> {
    if let Some(v) = env_value::<f64>("STOCHSDP_FEAS_TOL")? {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Failure::Usage("STOCHSDP_FEAS_TOL must be a positive real".into()));
        }
        opts.feas_tol = v;
    }
    if let Some(v) = env_value::<f64>("STOCHSDP_GAP_TOL")? {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Failure::Usage("STOCHSDP_GAP_TOL must be a positive real".into()));
        }
        opts.gap_tol = v;
    }
    if let Some(v) = env_value::<usize>("STOCHSDP_MAX_ITER")? {
        if v == 0 {
            return Err(Failure::Usage("STOCHSDP_MAX_ITER must be at least 1".into()));
        }
        opts.max_iter = v;
    }
    Ok(opts)
}

fn env_value<T: std::str::FromStr>(name: &str) -> Result<Option<T>, Failure> {
    match std::env::var(name) {
        Ok(raw) => raw
            .parse::<T>()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("{name}: cannot parse {raw:?}"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Failure::Usage(format!("{name}: {e}"))),
    }
}

fn vec_fmt(v: &[f64]) -> String {
    let body: Vec<String> = v.iter().map(|x| format!("{x:.16e}")).collect();
    format!("[{}]", body.join(", "))
}

fn matrix_rows(m: &SymMatrix) -> Vec<Vec<f64>> {
    (0..m.dim()).map(|i| (0..m.dim()).map(|j| m.get(i, j)).collect()).collect()
}

fn cmd_check(
    problem: &Path,
    scenarios: &Path,
    renormalize: bool,
    opts: &SolverOptions,
) -> Result<u8, Failure> {
    let (p, scen) = files::load_instance(problem, scenarios, renormalize)?;
    println!("instance: n = {}, m = {}, s = {}, scenarios = {}", p.n, p.m, p.s, scen.len());

    let a2 = check_a2(&p, opts)?;
    if a2.holds {
        println!(
            "strict dual feasibility (A2): OK, margin {:.6e}, witness u0 = {}",
            a2.margin,
            vec_fmt(&a2.witness)
        );
    } else {
        println!("strict dual feasibility (A2): FAIL, margin {:.6e}", a2.margin);
    }

    let a1 = check_a1(&p, opts)?;
    match (&a1.holds, &a1.certificate) {
        (true, A1Certificate::BoundedDirections { max_abs }) => println!(
            "complete recourse (A1): OK, all dual recession directions vanish \
             (largest magnitude {max_abs:.3e})"
        ),
        (false, A1Certificate::RecessionDirection(d)) => println!(
            "complete recourse (A1): FAIL, the dual multiplier set is unbounded \
             along {}",
            vec_fmt(d)
        ),
        // A verdict never pairs with the other certificate kind.
        (true, A1Certificate::RecessionDirection(_))
        | (false, A1Certificate::BoundedDirections { .. }) => unreachable!(),
    }

    match lipschitz_bound(&p, opts) {
        Ok(l) => println!("recourse Lipschitz bound L-hat: {l:.16e}"),
        Err(e) => println!("recourse Lipschitz bound L-hat: unavailable ({e})"),
    }

    if a1.holds && a2.holds {
        println!("verdict: assumptions hold");
        Ok(0)
    } else {
        println!("verdict: assumption check FAILED");
        Ok(1)
    }
}

struct SolveOutcome {
    exit: u8,
    record: SolveResultFile,
}

#[allow(clippy::too_many_arguments)]
fn cmd_solve(
    problem: &Path,
    scenarios: &Path,
    risk: &str,
    method: Method,
    out: Option<&Path>,
    literal: bool,
    single_cut: bool,
    cut_log: bool,
    renormalize: bool,
) -> Result<u8, Failure> {
    let spec = grammar::parse_risk(risk).map_err(Failure::Usage)?;
    let binaries = grammar::needs_binaries(&spec);
    match method {
        Method::Bnb if !binaries => {
            return Err(Failure::Usage(format!(
                "--method bnb applies only to E+rho*VaR(alpha) objectives; \
                 {risk:?} has no binary selectors"
            )));
        }
        Method::Extensive | Method::Benders if binaries => {
            return Err(Failure::Usage(format!(
                "risk spec {risk:?} introduces binary selectors; solve it with --method bnb"
            )));
        }
        _ => {}
    }
    if method != Method::Benders && (single_cut || cut_log) {
        eprintln!("warning: --single-cut/--cut-log only affect --method benders; ignored");
    }

    let (p, scen) = files::load_instance(problem, scenarios, renormalize)?;
    let outcome = match method {
        Method::Extensive => {
            let opts = apply_env(SolverOptions::default())?;
            run_extensive(&p, &scen, &spec, risk, literal, &opts)?
        }
        Method::Benders => {
            let mut bopts = BendersOptions { single_cut, ..BendersOptions::default() };
            bopts.solver = apply_env(bopts.solver)?;
            run_benders(&p, &scen, &spec, risk, cut_log, &bopts)?
        }
        Method::Bnb => {
            let mut bopts = BnbOptions { literal_constraints: literal, ..BnbOptions::default() };
            bopts.solver = apply_env(bopts.solver)?;
            run_bnb(&p, &scen, &spec, risk, &bopts)?
        }
    };

    print_record(&outcome.record);
    if let Some(path) = out {
        let json = serde_json::to_string_pretty(&outcome.record)
            .expect("result record serializes") +
            "\n";
        fs::write(path, json).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        eprintln!("result written to {}", path.display());
    }
    Ok(outcome.exit)
}

fn print_record(r: &SolveResultFile) {
    println!("method: {}", r.method);
    println!("risk: {}", r.risk);
    println!("status: {}", r.status);
    println!("value: {:.16e}", r.value);
    for (i, row) in r.x.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        println!("x[{i}]: {}", cells.join(" "));
    }
    println!("per-scenario second-stage costs:");
    for (i, c) in r.per_scenario_costs.iter().enumerate() {
        println!("  scenario {i}: {c:.16e}");
    }
    if let Some(eta) = r.eta {
        println!("eta: {eta:.16e}");
    }
    if let Some(delta) = &r.delta {
        println!("delta: {}", vec_fmt(delta));
    }
    if let Some(lb) = r.lower_bound {
        println!("lower bound: {lb:.16e}");
    }
    if let Some(it) = r.iterations {
        println!("iterations: {it}");
    }
    if let Some(nc) = r.node_count {
        println!("nodes processed: {nc}");
    }
}

fn run_extensive(
    p: &ProblemData,
    scen: &ScenarioSet,
    spec: &RiskSpec,
    risk: &str,
    literal: bool,
    opts: &SolverOptions,
) -> Result<SolveOutcome, Failure> {
    let form = build_for_spec(p, scen, spec, literal, opts)?;
    let sol = solve_extensive(&form, opts)?;

    let mut exit = 0u8;
    if !sol.status.value_usable() {
        eprintln!("solve did not produce a usable value: status {:?}", sol.status);
        eprintln!(
            "objective bracket: primal {:.16e}, dual {:.16e}",
            sol.raw.primal_objective, sol.raw.dual_objective
        );
        exit = 3;
    } else if sol.raw.primal_norm_warning {
        eprintln!(
            "warning: primal iterates grew large (norm {:.3e}); the infimum \
             may not be attained and x is only an approximate minimizer",
            sol.raw.primal_norm
        );
    }

    let record = SolveResultFile {
        format_version: FORMAT_VERSION,
        method: "extensive".into(),
        risk: risk.trim().into(),
        status: format!("{:?}", sol.status),
        value: sol.value,
        x: matrix_rows(&sol.x),
        per_scenario_costs: unweighted_costs(scen, &sol),
        eta: sol.eta,
        delta: sol.delta.clone(),
        lower_bound: Some(sol.raw.dual_objective),
        iterations: Some(sol.raw.iterations),
        node_count: None,
    };
    Ok(SolveOutcome { exit, record })
}

fn run_benders(
    p: &ProblemData,
    scen: &ScenarioSet,
    spec: &RiskSpec,
    risk: &str,
    cut_log: bool,
    bopts: &BendersOptions,
) -> Result<SolveOutcome, Failure> {
    let res = benders_solve(p, scen, spec, bopts)?;
    if cut_log {
        println!("{}", render_cut_log(&res.cuts));
    }

    let exit = match res.status {
        ConvergenceStatus::Converged => 0,
        ConvergenceStatus::IterLimit => {
            eprintln!(
                "cutting planes hit the iteration cap ({} iterations); best value \
                 {:.16e}, master lower bound {:.16e}",
                res.iterations, res.value, res.lower_bound
            );
            3
        }
    };

    // Realized second-stage cost per scenario at the incumbent.
    let oracle = RecourseOracle::verify(p, &bopts.solver)?;
    let mut costs = Vec::with_capacity(scen.len());
    for sc in scen.scenarios() {
        let t = oracle.residual(&res.x, &sc.z)?;
        costs.push(oracle.phi(&t)?);
    }

    let record = SolveResultFile {
        format_version: FORMAT_VERSION,
        method: "benders".into(),
        risk: risk.trim().into(),
        status: format!("{:?}", res.status),
        value: res.value,
        x: matrix_rows(&res.x),
        per_scenario_costs: costs,
        eta: None,
        delta: None,
        lower_bound: Some(res.lower_bound),
        iterations: Some(res.iterations),
        node_count: None,
    };
    Ok(SolveOutcome { exit, record })
}

fn run_bnb(
    p: &ProblemData,
    scen: &ScenarioSet,
    spec: &RiskSpec,
    risk: &str,
    bopts: &BnbOptions,
) -> Result<SolveOutcome, Failure> {
    let RiskSpec::MeanRisk { base, rho } = spec else {
        unreachable!("dispatch only sends value-at-risk specs here");
    };
    let RiskSpec::VaR { alpha } = base.as_ref() else {
        unreachable!("dispatch only sends value-at-risk specs here");
    };

    let res = bnb_solve_var(p, scen, *alpha, *rho, bopts)?;
    let exit = match res.status {
        ConvergenceStatus::Converged => 0,
        ConvergenceStatus::IterLimit => {
            eprintln!(
                "branch-and-bound hit the node cap after {} nodes; incumbent value {:.16e}",
                res.node_count, res.value
            );
            3
        }
    };

    // The root relaxation is a valid global lower bound.
    let root_bound = res.nodes.first().and_then(|n| n.bound);
    let record = SolveResultFile {
        format_version: FORMAT_VERSION,
        method: "bnb".into(),
        risk: risk.trim().into(),
        status: format!("{:?}", res.status),
        value: res.value,
        x: matrix_rows(&res.x),
        per_scenario_costs: unweighted_costs(scen, &res.incumbent),
        eta: Some(res.eta),
        delta: Some(res.delta.clone()),
        lower_bound: root_bound,
        iterations: None,
        node_count: Some(res.node_count),
    };
    Ok(SolveOutcome { exit, record })
}

#[allow(clippy::too_many_arguments)]
fn cmd_export(
    problem: &Path,
    scenarios: &Path,
    risk: &str,
    format: ExportFormat,
    out: &Path,
    literal: bool,
    renormalize: bool,
    opts: &SolverOptions,
) -> Result<u8, Failure> {
    let ExportFormat::Sdpa = format;
    let spec = grammar::parse_risk(risk).map_err(Failure::Usage)?;
    let (p, scen) = files::load_instance(problem, scenarios, renormalize)?;
    let form = build_for_spec(&p, &scen, &spec, literal, opts)?;

    let mut dat = Vec::new();
    write_sdpa(&form.sdp, &mut dat).map_err(|e| Failure::Usage(format!("render: {e}")))?;
    let meta = form.sdpa_meta();
    let mut side = Vec::new();
    write_sidecar(&meta, &mut side).map_err(|e| Failure::Usage(format!("render: {e}")))?;

    // Verify the pair reproduces the problem before anything hits disk.
    let dat_text = std::str::from_utf8(&dat).expect("export is ASCII");
    let side_text = std::str::from_utf8(&side).expect("export is ASCII");
    let meta_back = SdpaMeta::parse(side_text).map_err(Error::from)?;
    let back = read_sdpa(dat_text, &meta_back).map_err(Error::from)?;
    if back != form.sdp || meta_back != meta {
        return Err(Failure::Usage(
            "internal round-trip verification failed: the exported pair does not \
             reproduce the problem"
                .into(),
        ));
    }

    fs::write(out, &dat).map_err(|e| Failure::Usage(format!("{}: {e}", out.display())))?;
    let side_path = out.with_extension("sidecar");
    fs::write(&side_path, &side)
        .map_err(|e| Failure::Usage(format!("{}: {e}", side_path.display())))?;

    println!(
        "wrote {} ({} rows; {} PSD blocks; {} nonnegative and {} free scalars)",
        out.display(),
        form.sdp.n_rows(),
        form.sdp.n_psd_blocks(),
        form.sdp.n_nonneg(),
        form.sdp.n_free()
    );
    match meta.big_m {
        Some(m) => println!(
            "wrote {} ({} binary selectors, big-M {m:.6e})",
            side_path.display(),
            meta.binary_indices.len()
        ),
        None => println!("wrote {}", side_path.display()),
    }
    println!("round-trip verification: OK");
    Ok(0)
}

fn cmd_stability(
    problem: &Path,
    scenarios: &Path,
    risk: &str,
    plan_path: &Path,
    out: Option<&Path>,
    renormalize: bool,
    opts: &SolverOptions,
) -> Result<u8, Failure> {
    let spec = grammar::parse_risk(risk).map_err(Failure::Usage)?;
    let plan = files::load_plan(plan_path)?;
    let (p, scen) = files::load_instance(problem, scenarios, renormalize)?;

    let report = stability_sweep(&p, &scen, &spec, &plan, opts)?;
    for n in &report.notes {
        eprintln!("note: {n}");
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }

    let csv = report.to_csv();
    match out {
        Some(path) => {
            fs::write(path, &csv)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            eprintln!("report written to {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(0)
}
