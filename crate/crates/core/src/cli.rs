//! Command-line front end.
//!
//! Every subcommand produces a [`RunReport`]. Exit codes: 0 pass, 1 fail or
//! domain error, 2 usage or IO error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::algebra::{verify_deformation, MapDocument, ParamsDocument};
use crate::dynamics::{
    self, equivalence_check, field_to_deformation, magnetic_hamiltonian, ClosedFormCoeffs, CoeffsDocument,
    EquivalenceOptions, FieldConfig, Trajectory,
};
use crate::nc2d::{self, Nc2dError, Params2DDocument, Pivot};
use crate::nc3d::{self, FeasibleBranch, FrozenMask, Params3D, SolveOptions};
use crate::par::{self, Execution};
use crate::DeformationParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Error,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail | Status::Error => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub status: Status,
    pub metrics: BTreeMap<String, f64>,
    pub errata_notes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
}

impl RunReport {
    fn new(pass: bool) -> Self {
        Self {
            status: if pass { Status::Pass } else { Status::Fail },
            metrics: BTreeMap::new(),
            errata_notes: Vec::new(),
            error: None,
            result: None,
        }
    }

    fn error(msg: impl ToString) -> Self {
        Self { status: Status::Error, error: Some(msg.to_string()), ..Self::new(false) }
    }

    fn metric(mut self, name: &str, value: f64) -> Self {
        self.metrics.insert(name.to_string(), value);
        self
    }

    fn with_result(mut self, v: Value) -> Self {
        self.result = Some(v);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("status: {}\n", serde_json::to_value(self.status).unwrap().as_str().unwrap());
        if let Some(e) = &self.error {
            s += &format!("error: {e}\n");
        }
        let width = self.metrics.keys().map(String::len).max().unwrap_or(0).max(6);
        if !self.metrics.is_empty() {
            s += &format!("{:<width$}  value\n", "metric");
            for (k, v) in &self.metrics {
                s += &format!("{k:<width$}  {v:.16e}\n");
            }
        }
        for note in &self.errata_notes {
            s += &format!("errata: {note}\n");
        }
        if let Some(r) = &self.result {
            s += "result:\n";
            s += &serde_json::to_string_pretty(r).unwrap();
            s += "\n";
        }
        s
    }
}

pub const ERRATUM_FREQUENCY: &str =
    "cyclotron frequency law 2*eta/(m_p*hbar) carries a spurious factor 2; the integrated rotation rate is |eta|/(m_p*hbar)";
pub const ERRATUM_FTHETA_RATIOS: &str =
    "f_theta_x, f_theta_y gauge ratios re-derived from the momentum matching: f_theta_x = -(beta_y/alpha_y)(f_theta - theta), f_theta_y = -(alpha_x/beta_x)(f_theta + theta)";

#[derive(Debug, Parser)]
#[command(name = "ncphase", version, about = "Noncommutative phase-space maps and constraint solving")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
struct Common {
    /// Emit the report as JSON.
    #[arg(long)]
    json: bool,
    /// Write the report (the trajectory CSV for `simulate`) to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Verify a linear map against a deformation.
    CheckMap(CheckMapArgs),
    /// Complete a two-dimensional parameter set from its free entries.
    #[command(allow_negative_numbers = true)]
    Solve2d(Solve2dArgs),
    /// Solve the three-dimensional constraint system numerically.
    Solve3d(Solve3dArgs),
    /// Generate feasible three-dimensional instances.
    Gen3d(Gen3dArgs),
    /// Match a gauge field to a noncommutative free particle.
    #[command(allow_negative_numbers = true)]
    MatchField(MatchFieldArgs),
    /// Integrate a scenario and write the trajectory as CSV.
    Simulate(SimulateArgs),
    /// Check the momentum equivalence for a scenario.
    Equivalence(EquivalenceArgs),
    /// Evaluate a grid of solve2d or match-field runs.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct CheckMapArgs {
    #[arg(long)]
    map: PathBuf,
    /// Deformation parameters file.
    #[arg(long)]
    theta: PathBuf,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Solve2dArgs {
    #[arg(long)]
    theta: f64,
    #[arg(long)]
    eta: f64,
    #[arg(long)]
    f_theta: f64,
    /// Imaginary part of f_theta; nonzero selects the imaginary variant.
    #[arg(long, default_value_t = 0.0)]
    f_theta_im: f64,
    #[arg(long)]
    f_eta: f64,
    #[arg(long, conflicts_with = "f_theta_y", required_unless_present = "f_theta_y")]
    f_theta_x: Option<f64>,
    #[arg(long)]
    f_theta_y: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    hbar: f64,
    /// Residual tolerance, relative to the parameter scale.
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BranchArg {
    NullSpace,
    ZeroC,
}

#[derive(Debug, Args)]
struct Solve3dArgs {
    /// Starting point (Params3D JSON). Without it a feasible instance is
    /// generated from --seed and perturbed.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Perturbation amplitude applied to f_eta of the generated instance.
    #[arg(long, default_value_t = 1e-3)]
    perturb: f64,
    /// Comma-separated unknowns or groups (theta, eta, f_theta, f_eta) to hold fixed.
    #[arg(long, default_value = "theta,eta")]
    freeze: String,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 50)]
    max_iter: usize,
    #[arg(long, default_value_t = 1.0)]
    hbar: f64,
    /// Include the per-iteration history.
    #[arg(long)]
    trace: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Gen3dArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    count: u64,
    #[arg(long, default_value_t = 1.0)]
    hbar: f64,
    #[arg(long, value_enum, default_value_t = BranchArg::NullSpace)]
    branch: BranchArg,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct MatchFieldArgs {
    /// FieldConfig JSON; overrides the individual field flags.
    #[arg(long)]
    field: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    alpha_x: f64,
    #[arg(long, default_value_t = 0.0)]
    alpha_y: f64,
    #[arg(long, default_value_t = 0.0)]
    beta_x: f64,
    #[arg(long, default_value_t = 0.0)]
    beta_y: f64,
    #[arg(long, default_value_t = 1.0)]
    e: f64,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 1.0)]
    m_p: f64,
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    #[arg(long, default_value_t = 0.0)]
    f_theta: f64,
    #[arg(long, default_value_t = 1.0)]
    hbar: f64,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    /// Closed-form deviation tolerance, relative to the orbit amplitude.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Write the report here instead of standard output.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct EquivalenceArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 64)]
    samples: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 4096)]
    steps: usize,
    /// Multiplies the matched eta in the noncommutative evolution.
    #[arg(long, default_value_t = 1.0)]
    eta_scale: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run grid points on the calling thread only.
    #[arg(long)]
    sequential: bool,
    #[command(flatten)]
    common: Common,
}

/// `{"field": {...}, "coeffs": {...}, "params": {...}, "dt": …, "steps": …}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub field: FieldConfig,
    pub coeffs: CoeffsDocument,
    #[serde(default)]
    pub params: ScenarioParams,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub steps: Option<usize>,
}

/// The free members `(θ, f_θ)` of the matched family, and ħ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioParams {
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub f_theta: f64,
    #[serde(default = "one")]
    pub hbar: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self { theta: 0.0, f_theta: 0.0, hbar: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    Solve2d,
    MatchField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub name: String,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default)]
    pub start: Option<f64>,
    #[serde(default)]
    pub stop: Option<f64>,
    #[serde(default)]
    pub count: Option<usize>,
}

impl SweepAxis {
    fn points(&self) -> anyhow::Result<Vec<f64>> {
        match (&self.values, self.start, self.stop, self.count) {
            (Some(v), None, None, None) => Ok(v.clone()),
            (None, Some(a), Some(b), Some(n)) => Ok(match n {
                0 => Vec::new(),
                1 => vec![a],
                _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
            }),
            _ => bail!("axis {:?} needs either values or start/stop/count", self.name),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub kind: SweepKind,
    #[serde(default)]
    pub base: BTreeMap<String, f64>,
    pub axes: Vec<SweepAxis>,
}

pub const MAX_SWEEP_POINTS: usize = 1_000_000;

const SOLVE2D_KEYS: [&str; 6] = ["theta", "eta", "f_theta", "f_eta", "f_theta_x", "hbar"];
const MATCH_KEYS: [&str; 10] = ["alpha_x", "alpha_y", "beta_x", "beta_y", "e", "c", "m_p", "theta", "f_theta", "hbar"];

/// Parses `argv` (program name first), runs the command and writes the
/// report to standard output.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    0
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    2
                }
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            2
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> anyhow::Result<i32> {
    let (report, common, report_path) = match cmd {
        Command::CheckMap(a) => (check_map(&a)?, a.common, None),
        Command::Solve2d(a) => (solve2d(&a), a.common, None),
        Command::Solve3d(a) => (solve3d(&a)?, a.common, None),
        Command::Gen3d(a) => (gen3d(&a)?, a.common, None),
        Command::MatchField(a) => (match_field(&a)?, a.common, None),
        Command::Simulate(a) => {
            let path = a.report.clone();
            (simulate(&a)?, a.common, Some(path))
        }
        Command::Equivalence(a) => (equivalence(&a)?, a.common, None),
        Command::Sweep(a) => (sweep(&a)?, a.common, None),
    };
    let text = if common.json { report.to_json() } else { report.to_table() };
    // `simulate` uses --out for the trajectory; its report has its own flag.
    let target = match report_path {
        Some(p) => p,
        None => common.out,
    };
    match target {
        Some(path) => write_file(&path, text.as_bytes())?,
        None => out.write_all(text.as_bytes()).context("writing report")?,
    }
    Ok(report.status.exit_code())
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn check_map(a: &CheckMapArgs) -> anyhow::Result<RunReport> {
    let map = read_json::<MapDocument>(&a.map)?.to_map().context("invalid map")?;
    let params = read_json::<ParamsDocument>(&a.theta)?.to_params().context("invalid deformation")?;
    Ok(match verify_deformation(&map, &params, a.tol) {
        Ok(r) => RunReport::new(r.pass)
            .metric("max_abs_xx", r.max_abs_xx)
            .metric("max_abs_pp", r.max_abs_pp)
            .metric("max_abs_xp", r.max_abs_xp)
            .metric("tol", r.tol),
        Err(e) => RunReport::error(e),
    })
}

fn solve2d_report(
    theta: f64,
    eta: f64,
    f_theta: Complex64,
    f_eta: f64,
    pivot: Pivot,
    hbar: f64,
    tol: f64,
) -> RunReport {
    let res = if f_theta.im != 0.0 {
        match pivot {
            Pivot::ThetaX(fx) => nc2d::complete_2d_imaginary(theta, eta, f_theta, f_eta, fx, hbar, None),
            Pivot::ThetaY(_) => Err(Nc2dError::Document("the imaginary variant pivots on f_theta_x".into())),
        }
    } else {
        nc2d::complete_2d_pivot(theta, eta, f_theta.re, f_eta, pivot, hbar, None)
    };
    match res {
        Ok(p) => {
            let residual = nc2d::residual_2d_max(&p);
            let scale = p.scale();
            let mut r = RunReport::new(residual <= tol * scale).metric("residual_max", residual).metric("scale", scale);
            if !p.imaginary_mode {
                let (a, b) = p.f_eta_x_alternatives();
                if a.is_finite() && b.is_finite() {
                    r = r.metric("f_eta_x_gap", (a - b).abs() / a.abs().max(b.abs()).max(1.0));
                }
            }
            r.with_result(serde_json::to_value(Params2DDocument::from(&p)).unwrap())
        }
        Err(e) => {
            let class = match &e {
                Nc2dError::SingularBranch(c) => Some(c.to_string()),
                _ => None,
            };
            let r = RunReport::error(e);
            match class {
                Some(c) => r.with_result(json!({ "singular_class": c })),
                None => r,
            }
        }
    }
}

fn solve2d(a: &Solve2dArgs) -> RunReport {
    let pivot = match (a.f_theta_x, a.f_theta_y) {
        (Some(x), _) => Pivot::ThetaX(x),
        (None, Some(y)) => Pivot::ThetaY(y),
        (None, None) => unreachable!("clap requires one pivot"),
    };
    solve2d_report(a.theta, a.eta, Complex64::new(a.f_theta, a.f_theta_im), a.f_eta, pivot, a.hbar, a.tol)
}

fn solve3d(a: &Solve3dArgs) -> anyhow::Result<RunReport> {
    let frozen = FrozenMask::parse(&a.freeze)?;
    let start = match &a.input {
        Some(path) => read_json::<Params3D>(path)?,
        None => match nc3d::generate_feasible_3d(a.seed, a.hbar) {
            Ok(p) => nc3d::perturb_f_eta(&p, a.seed, a.perturb),
            Err(e) => return Ok(RunReport::error(e)),
        },
    };
    let opts = SolveOptions { tol: a.tol, max_iter: a.max_iter, trace: a.trace };
    Ok(match nc3d::solve_3d(&start, frozen, opts) {
        Ok(rep) => {
            let obstruction =
                start.deformation_params().map(|p| crate::algebra::sw_obstruction(&p)).unwrap_or(f64::NAN);
            RunReport::new(rep.converged())
                .metric("iterations", rep.iterations as f64)
                .metric("residual_max", rep.residual_max)
                .metric("start_residual_max", nc3d::residual_3d_max(&start))
                .metric("sw_obstruction", obstruction)
                .with_result(serde_json::to_value(&rep).unwrap())
        }
        Err(e) => RunReport::error(e),
    })
}

fn gen3d(a: &Gen3dArgs) -> anyhow::Result<RunReport> {
    let branch = match a.branch {
        BranchArg::NullSpace => FeasibleBranch::NullSpace,
        BranchArg::ZeroC => FeasibleBranch::ZeroC,
    };
    let seeds: Vec<u64> = (0..a.count).map(|i| a.seed.wrapping_add(i)).collect();
    let results = par::map_slice(Execution::Parallel, &seeds, |s| nc3d::generate_feasible_3d_with(*s, a.hbar, branch));
    let mut instances = Vec::with_capacity(results.len());
    let mut worst = 0.0_f64;
    for r in results {
        match r {
            Ok(p) => {
                worst = worst.max(nc3d::residual_3d_max(&p));
                instances.push(p);
            }
            Err(e) => return Ok(RunReport::error(e)),
        }
    }
    Ok(RunReport::new(worst <= a.tol)
        .metric("count", instances.len() as f64)
        .metric("residual_max", worst)
        .with_result(serde_json::to_value(&instances).unwrap()))
}

fn match_report(field: &FieldConfig, theta: f64, f_theta: f64, hbar: f64, tol: f64) -> RunReport {
    match field_to_deformation(field, theta, f_theta, hbar) {
        Ok(m) => {
            let residual = nc2d::residual_2d_max(&m.params());
            let mut r = RunReport::new(residual <= tol * m.params().scale())
                .metric("eta", m.eta)
                .metric("f_eta", m.f_eta)
                .metric("f_theta_x", m.f_theta_x)
                .metric("f_theta_y", m.f_theta_y)
                .metric("omega_commutative", m.omega_commutative)
                .metric("omega_nc", m.omega_nc)
                .metric("abs_omega_nc", m.omega_nc.abs())
                .metric("residual_max", residual);
            r.errata_notes.push(ERRATUM_FTHETA_RATIOS.to_string());
            r.with_result(json!({
                "match": m,
                "params": Params2DDocument::from(&m.params()),
            }))
        }
        Err(e) => RunReport::error(e),
    }
}

fn match_field(a: &MatchFieldArgs) -> anyhow::Result<RunReport> {
    let field = match &a.field {
        Some(p) => read_json(p)?,
        None => FieldConfig::new(a.alpha_x, a.alpha_y, a.beta_x, a.beta_y, a.e, a.c, a.m_p),
    };
    Ok(match_report(&field, a.theta, a.f_theta, a.hbar, a.tol))
}

fn simulate(a: &SimulateArgs) -> anyhow::Result<RunReport> {
    let sc: Scenario = read_json(&a.scenario)?;
    let Some(csv_path) = &a.common.out else {
        bail!("simulate needs --out for the trajectory CSV");
    };
    let field = sc.field;
    if let Err(e) = field.validate() {
        return Ok(RunReport::error(e));
    }
    let coeffs = ClosedFormCoeffs::from_document(&field, &sc.coeffs);
    let steps = a.steps.or(sc.steps).unwrap_or(4096);
    if steps == 0 {
        bail!("steps must be positive");
    }
    let dt = match (a.dt.or(sc.dt), field.period()) {
        (Some(dt), _) => dt,
        (None, Some(t)) => t / steps as f64,
        (None, None) => bail!("B_z = 0: the scenario needs an explicit dt"),
    };
    let hbar = sc.params.hbar;
    let params = match DeformationParams::commutative(2, hbar) {
        Ok(p) => p,
        Err(e) => return Ok(RunReport::error(e)),
    };
    let z0 = dynamics::commutative_closed_form(&coeffs, &field, 0.0);
    let h = magnetic_hamiltonian(&field);
    let mut traj: Trajectory = match dynamics::evolve_linear(&h, &params, &z0, dt, steps) {
        Ok(t) => t,
        Err(e) => return Ok(RunReport::error(e)),
    };

    let matched = field_to_deformation(&field, sc.params.theta, sc.params.f_theta, hbar).and_then(|m| m.map());
    let match_info = match &matched {
        Ok(map) => {
            traj.hat = Some(
                traj.states
                    .iter()
                    .map(|z| {
                        let v = map.apply(z);
                        [v[0], v[1], v[2], v[3]]
                    })
                    .collect(),
            );
            json!({ "matched": true })
        }
        Err(e) => json!({ "matched": false, "reason": e.to_string() }),
    };

    let mut buf = Vec::new();
    traj.write_csv(&mut buf).context("formatting trajectory")?;
    write_file(csv_path, &buf)?;

    let e0 = h.energy(&z0);
    let drift =
        traj.states.iter().map(|z| (h.energy(z) - e0).abs()).fold(0.0_f64, f64::max) / e0.abs().max(f64::MIN_POSITIVE);
    let amplitude = coeffs.amplitude().max(1.0);
    let deviation = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(t, z)| {
            let exact = dynamics::commutative_closed_form(&coeffs, &field, *t);
            (0..4).map(|k| (z[k] - exact[k]).abs()).fold(0.0_f64, f64::max)
        })
        .fold(0.0_f64, f64::max)
        / amplitude;
    Ok(RunReport::new(deviation <= a.tol)
        .metric("rows", traj.len() as f64)
        .metric("steps", steps as f64)
        .metric("dt", dt)
        .metric("energy_drift", drift)
        .metric("closed_form_deviation", deviation)
        .with_result(match_info))
}

fn equivalence(a: &EquivalenceArgs) -> anyhow::Result<RunReport> {
    let sc: Scenario = read_json(&a.scenario)?;
    let field = sc.field;
    let coeffs = ClosedFormCoeffs::from_document(&field, &sc.coeffs);
    let opts = EquivalenceOptions {
        theta: sc.params.theta,
        f_theta: sc.params.f_theta,
        hbar: sc.params.hbar,
        eta_scale: a.eta_scale,
        steps_per_period: a.steps,
    };
    Ok(match equivalence_check(&field, &coeffs, a.samples, a.tol, &opts) {
        Ok(r) => {
            let mut rep = RunReport::new(r.pass)
                .metric("momentum_deviation", r.momentum_deviation)
                .metric("commutative_deviation", r.commutative_deviation)
                .metric("nc_deviation", r.nc_deviation)
                .metric("energy_drift", r.energy_drift)
                .metric("eta", r.eta)
                .metric("omega_extracted", r.omega_extracted)
                .metric("omega_nc", r.omega_nc)
                .metric("omega_cyclotron", r.omega_cyclotron)
                .metric("omega_literal", r.omega_literal)
                .metric("frequency_error", r.frequency_error)
                .metric("literal_frequency_ratio", r.literal_frequency_ratio);
            if r.period.is_some() {
                rep.errata_notes.push(ERRATUM_FREQUENCY.to_string());
            }
            rep
        }
        Err(e) => RunReport::error(e),
    })
}

fn sweep_point(kind: SweepKind, v: &BTreeMap<String, f64>) -> RunReport {
    let g = |k: &str, d: f64| v.get(k).copied().unwrap_or(d);
    match kind {
        SweepKind::Solve2d => solve2d_report(
            g("theta", 0.0),
            g("eta", 0.0),
            Complex64::new(g("f_theta", 0.0), 0.0),
            g("f_eta", 0.0),
            Pivot::ThetaX(g("f_theta_x", 1.0)),
            g("hbar", 1.0),
            1e-12,
        ),
        SweepKind::MatchField => {
            let field = FieldConfig::new(
                g("alpha_x", 0.0),
                g("alpha_y", 0.0),
                g("beta_x", 0.0),
                g("beta_y", 0.0),
                g("e", 1.0),
                g("c", 1.0),
                g("m_p", 1.0),
            );
            match_report(&field, g("theta", 0.0), g("f_theta", 0.0), g("hbar", 1.0), 1e-12)
        }
    }
}

#[derive(Debug, Serialize)]
struct SweepRow {
    index: Vec<usize>,
    values: BTreeMap<String, f64>,
    status: Status,
    metrics: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<Value>,
}

/// Evaluates the Cartesian product of the axes in lexicographic index order
/// (last axis fastest).
pub fn run_sweep(cfg: &SweepConfig, exec: Execution) -> anyhow::Result<RunReport> {
    let keys: &[&str] = match cfg.kind {
        SweepKind::Solve2d => &SOLVE2D_KEYS,
        SweepKind::MatchField => &MATCH_KEYS,
    };
    if cfg.axes.len() > 3 {
        bail!("at most 3 sweep axes, got {}", cfg.axes.len());
    }
    for name in cfg.base.keys().chain(cfg.axes.iter().map(|a| &a.name)) {
        if !keys.contains(&name.as_str()) {
            bail!("unknown sweep parameter {name:?}");
        }
    }
    let points: Vec<Vec<f64>> = cfg.axes.iter().map(SweepAxis::points).collect::<anyhow::Result<_>>()?;
    let total = points.iter().try_fold(1usize, |acc, p| acc.checked_mul(p.len()));
    let total = match total {
        Some(n) if n <= MAX_SWEEP_POINTS => n,
        _ => bail!("sweep grid exceeds {MAX_SWEEP_POINTS} points"),
    };
    let rows = par::map_range(exec, total, |flat| {
        let mut index = vec![0; points.len()];
        let mut rest = flat;
        for (k, p) in points.iter().enumerate().rev() {
            index[k] = rest % p.len();
            rest /= p.len();
        }
        let mut values = cfg.base.clone();
        for (k, axis) in cfg.axes.iter().enumerate() {
            values.insert(axis.name.clone(), points[k][index[k]]);
        }
        let r = sweep_point(cfg.kind, &values);
        SweepRow { index, values, status: r.status, metrics: r.metrics, error: r.error, result: r.result }
    });
    let count = |s: Status| rows.iter().filter(|r| r.status == s).count() as f64;
    let (passed, failed, errors) = (count(Status::Pass), count(Status::Fail), count(Status::Error));
    Ok(RunReport::new(failed == 0.0 && errors == 0.0)
        .metric("points", rows.len() as f64)
        .metric("passed", passed)
        .metric("failed", failed)
        .metric("errors", errors)
        .with_result(serde_json::to_value(&rows).unwrap()))
}

fn sweep(a: &SweepArgs) -> anyhow::Result<RunReport> {
    let cfg: SweepConfig = read_json(&a.config)?;
    let exec = if a.sequential { Execution::Sequential } else { Execution::Parallel };
    run_sweep(&cfg, exec)
}
