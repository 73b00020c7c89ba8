//! Command-line front end. Every subcommand reads one JSON config, computes,
//! then writes its artifacts atomically into the output directory.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid config or input,
//! 3 no rank detected.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::losses::{ModelFamily, TaskData};
use crate::mtl::{recommended_gamma, recommended_lambda, rl_mtl, MtlConfig};
use crate::rank::{estimate_r, projected_estimates, select_rank, RankConfig};
use crate::simbench::{
    benchmark_h_grid, generate, run_grid, HarnessSettings, Method, ResultTable, SimSpec,
    REPLICATION_SEED_STRIDE,
};
use crate::stiefel::{projector_distance_spectral, OrthoBasis};
use crate::tl::rl_tl;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NO_RANK: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    NoRank(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::NoRank(_) => EXIT_NO_RANK,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::ShapeMismatch(_) => CliError::Input(e.to_string()),
            Error::NoRankDetected { .. } => CliError::NoRank(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "repmtl", version, about = "Robust multi-task and transfer learning with similar low-rank representations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a simulation grid and write results.csv and summary.csv.
    Simulate(CommonArgs),
    /// Fit the two-step multi-task estimator to task CSVs and write fit.json.
    Fit(CommonArgs),
    /// Transfer a fitted center to a target task and write transfer.json.
    Transfer(CommonArgs),
    /// Estimate the intrinsic dimension and write rank.json.
    Rank(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON config file; relative paths inside it resolve against its directory.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads; 0 picks the number of cores.
    #[arg(long, env = "REPMTL_THREADS", default_value_t = 0)]
    threads: usize,
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let (args, job): (&CommonArgs, fn(&CommonArgs) -> CliResult<()>) = match &cli.command {
        Command::Simulate(a) => (a, cmd_simulate),
        Command::Fit(a) => (a, cmd_fit),
        Command::Transfer(a) => (a, cmd_transfer),
        Command::Rank(a) => (a, cmd_rank),
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(args.threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_RUNTIME;
        }
    };
    match pool.install(|| job(args)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config<T: DeserializeOwned>(path: &Path) -> CliResult<(T, PathBuf)> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let config = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((config, base))
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Writes `bytes` to `dir/name` through a temporary file in the same
/// directory followed by a rename.
fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> CliResult<()> {
    let fail = |e: std::io::Error| CliError::Runtime(format!("writing {}: {e}", dir.join(name).display()));
    if let Some(parent) = dir.join(name).parent() {
        fs::create_dir_all(parent).map_err(fail)?;
    }
    let parent = dir.join(name).parent().map(Path::to_path_buf).unwrap_or_else(|| dir.to_path_buf());
    let mut tmp = tempfile::NamedTempFile::new_in(&parent).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.persist(dir.join(name)).map_err(|e| fail(e.error))?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// 17 significant digits, enough to round-trip any `f64`.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::Runtime(e.to_string());
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(&row).map_err(fail)?;
    }
    w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
}

/// Reads a task CSV with header `x1,…,xp,y`.
pub fn read_task_csv(path: &Path) -> CliResult<TaskData> {
    let name = path.display();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("{name}: {e}")))?;
    let header = reader
        .headers()
        .map_err(|e| CliError::Input(format!("{name}:1: {e}")))?
        .clone();
    let width = header.len();
    let p = width.saturating_sub(1);
    let header_ok = width >= 2
        && header.iter().take(p).enumerate().all(|(j, h)| h == format!("x{}", j + 1))
        && &header[p] == "y";
    if !header_ok {
        return Err(CliError::Input(format!(
            "{name}:1: header must be x1,...,xp,y, found {:?}",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut values = Vec::new();
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Input(format!("{name}: {e}")))?;
        let line = record.position().map_or(0, |pos| pos.line());
        if record.len() != width {
            return Err(CliError::Input(format!(
                "{name}:{line}: expected {width} fields, found {}",
                record.len()
            )));
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                CliError::Input(format!("{name}:{line}: field {} ({:?}) is not a number", j + 1, cell))
            })?;
            if !v.is_finite() {
                return Err(CliError::Input(format!("{name}:{line}: field {} is not finite", j + 1)));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::Input(format!("{name}: no data rows")));
    }
    let all = DMatrix::from_row_slice(rows, width, &values);
    let x = all.columns(0, p).into_owned();
    let y = all.column(p).into_owned();
    TaskData::new(x, y).map_err(|e| CliError::Input(format!("{name}: {e}")))
}

/// Writes `data` in the format [`read_task_csv`] accepts.
pub fn task_csv_bytes(data: &TaskData) -> CliResult<Vec<u8>> {
    let mut header: Vec<String> = (1..=data.p()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = (0..data.n()).map(|i| {
        let mut row: Vec<String> = data.x().row(i).iter().map(|&v| fmt_f64(v)).collect();
        row.push(fmt_f64(data.y()[i]));
        row
    });
    csv_bytes(&header_refs, rows)
}

fn read_tasks(base: &Path, files: &[PathBuf]) -> CliResult<Vec<TaskData>> {
    if files.is_empty() {
        return Err(CliError::Input("config lists no task files".into()));
    }
    let mut data = Vec::with_capacity(files.len());
    for f in files {
        let path = resolve(base, f);
        let task = read_task_csv(&path)?;
        if let Some(first) = data.first() {
            let first: &TaskData = first;
            if task.p() != first.p() {
                return Err(CliError::Input(format!(
                    "{}: has p={} but the first task has p={}",
                    path.display(),
                    task.p(),
                    first.p()
                )));
            }
        }
        data.push(task);
    }
    Ok(data)
}

/// Model family as written in configs, e.g. `{"kind": "tanh", "bend": 0.5}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyConfig {
    #[default]
    Linear,
    Logistic,
    /// `g(u) = u + bend·tanh(u)`.
    Tanh { bend: f64 },
}

impl FamilyConfig {
    pub fn build(&self) -> CliResult<ModelFamily> {
        let family = match self {
            FamilyConfig::Linear => ModelFamily::Linear,
            FamilyConfig::Logistic => ModelFamily::logistic(),
            FamilyConfig::Tanh { bend } => ModelFamily::tanh_link(*bend),
        };
        family.spot_check()?;
        Ok(family)
    }
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> CliResult<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::Input(format!("{what} must be a non-empty rectangular array of rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), cols, &flat))
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub spec: SimSpec,
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "benchmark_h_grid")]
    pub h_grid: Vec<f64>,
    #[serde(default)]
    pub settings: HarnessSettings,
    /// Also write every generated data set and its truth under `data/`.
    #[serde(default)]
    pub export_data: bool,
}

fn all_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_reps() -> usize {
    50
}

impl SimulateConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.reps == 0 {
            return Err(CliError::Input("reps must be at least 1".into()));
        }
        if self.methods.is_empty() || self.h_grid.is_empty() {
            return Err(CliError::Input("methods and h_grid must be non-empty".into()));
        }
        for &h in &self.h_grid {
            self.spec.with_h(h).validate()?;
        }
        if let Some(rank) = &self.settings.rank {
            rank.validate()?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct TruthReport<'a> {
    h: f64,
    rep: usize,
    master_seed: u64,
    center: Vec<Vec<f64>>,
    beta_stars: Vec<Vec<f64>>,
    inlier_set: &'a [usize],
    outlier_set: &'a [usize],
}

fn table_files(table: &ResultTable) -> CliResult<Vec<(String, Vec<u8>)>> {
    let results = csv_bytes(
        &["method", "h", "rep", "subset", "error"],
        table.records.iter().map(|r| {
            vec![
                r.method.as_str().into(),
                fmt_f64(r.h),
                r.rep.to_string(),
                r.subset.as_str().into(),
                fmt_f64(r.error),
            ]
        }),
    )?;
    let summary = csv_bytes(
        &["method", "h", "subset", "mean", "sd", "count"],
        table.summary.iter().map(|c| {
            vec![
                c.method.as_str().into(),
                fmt_f64(c.h),
                c.subset.as_str().into(),
                fmt_f64(c.mean),
                fmt_f64(c.sd),
                c.count.to_string(),
            ]
        }),
    )?;
    let failures = csv_bytes(
        &["method", "h", "rep", "message"],
        table
            .failures
            .iter()
            .map(|f| vec![f.method.as_str().into(), fmt_f64(f.h), f.rep.to_string(), f.message.clone()]),
    )?;
    let diagnostics = csv_bytes(
        &["h", "rep", "max_effective_distance", "adaptive_r"],
        table.diagnostics.iter().map(|d| {
            vec![
                fmt_f64(d.h),
                d.rep.to_string(),
                fmt_f64(d.max_effective_distance),
                d.adaptive_r.map(|r| r.to_string()).unwrap_or_default(),
            ]
        }),
    )?;
    Ok(vec![
        ("results.csv".into(), results),
        ("summary.csv".into(), summary),
        ("failures.csv".into(), failures),
        ("diagnostics.csv".into(), diagnostics),
    ])
}

fn exported_data(config: &SimulateConfig) -> CliResult<Vec<(String, Vec<u8>)>> {
    let mut files = Vec::new();
    for (i, &h) in config.h_grid.iter().enumerate() {
        for rep in 0..config.reps {
            let seed = config
                .spec
                .master_seed
                .wrapping_add(REPLICATION_SEED_STRIDE.wrapping_mul(rep as u64));
            let spec = config.spec.with_h(h).with_seed(seed);
            let (data, truth) = generate(&spec)?;
            let dir = format!("data/h{i}_rep{rep}");
            for (t, d) in data.iter().enumerate() {
                files.push((format!("{dir}/task{}.csv", t + 1), task_csv_bytes(d)?));
            }
            let report = TruthReport {
                h,
                rep,
                master_seed: seed,
                center: rows_of(truth.center_star.matrix()),
                beta_stars: truth.beta_stars.iter().map(vec_of).collect(),
                inlier_set: &truth.inlier_set,
                outlier_set: &truth.outlier_set,
            };
            files.push((format!("{dir}/truth.json"), to_json(&report)?));
        }
    }
    Ok(files)
}

fn cmd_simulate(args: &CommonArgs) -> CliResult<()> {
    let (config, _) = load_config::<SimulateConfig>(&args.config)?;
    config.validate()?;
    let table = run_grid(&config.spec, &config.h_grid, &config.methods, config.reps, &config.settings)?;
    let mut files = table_files(&table)?;
    if config.export_data {
        files.extend(exported_data(&config)?);
    }
    for (name, bytes) in &files {
        write_atomic(&args.out, name, bytes)?;
    }
    if !table.failures.is_empty() {
        eprintln!("warning: {} method runs failed; see failures.csv", table.failures.len());
    }
    Ok(())
}


/// `r` in a fit config: a positive integer or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RankChoice {
    Fixed(usize),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_outer")]
    pub max_outer_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_step")]
    pub riemannian_step: f64,
    #[serde(default = "default_substeps")]
    pub riemannian_substeps: usize,
}

fn default_outer() -> usize {
    MtlConfig::new(0.0, 0.0, 1).max_outer_iters
}
fn default_tol() -> f64 {
    MtlConfig::new(0.0, 0.0, 1).tol
}
fn default_step() -> f64 {
    MtlConfig::new(0.0, 0.0, 1).riemannian_step
}
fn default_substeps() -> usize {
    MtlConfig::new(0.0, 0.0, 1).riemannian_substeps
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer_iters: default_outer(),
            tol: default_tol(),
            riemannian_step: default_step(),
            riemannian_substeps: default_substeps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub tasks: Vec<PathBuf>,
    #[serde(default)]
    pub family: FamilyConfig,
    pub r: RankChoice,
    /// Defaults to `√(r(p + ln T))`.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Defaults to `0.5·√(p + ln T)`.
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Used when `r` is `"auto"`; defaults to the recommended multi-task settings.
    #[serde(default)]
    pub rank: Option<RankConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankProfile {
    pub singular_values: Vec<f64>,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub file: PathBuf,
    pub n: usize,
    pub theta: Vec<f64>,
    pub step1_beta: Vec<f64>,
    pub beta: Vec<f64>,
    pub distance_to_center: f64,
}

/// Contents of `fit.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub family: FamilyConfig,
    pub p: usize,
    pub r: usize,
    /// Present when `r` was selected automatically.
    pub r_hat: Option<usize>,
    pub rank: Option<RankProfile>,
    pub lambda: f64,
    pub gamma: f64,
    /// `p x r`, one inner array per row.
    pub center: Vec<Vec<f64>>,
    pub tasks: Vec<TaskReport>,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

fn cmd_fit(args: &CommonArgs) -> CliResult<()> {
    let (config, base) = load_config::<FitConfig>(&args.config)?;
    let family = config.family.build()?;
    let data = read_tasks(&base, &config.tasks)?;
    let (p, tasks) = (data[0].p(), data.len());
    let n_min = data.iter().map(TaskData::n).min().unwrap_or(1);

    let (r, r_hat, rank) = match config.r {
        RankChoice::Fixed(r) => (r, None, None),
        RankChoice::Auto(_) => {
            let rc = config.rank.clone().unwrap_or_else(|| RankConfig::recommended_mtl(tasks));
            rc.validate()?;
            let est = estimate_r(&data, &family, &rc, n_min)?;
            let profile = RankProfile { singular_values: est.singular_values, threshold: est.threshold };
            (est.r_hat.min(p), Some(est.r_hat), Some(profile))
        }
    };
    if r == 0 {
        return Err(CliError::Input("r must be at least 1".into()));
    }
    let mtl = MtlConfig {
        lambda: config.lambda.unwrap_or_else(|| recommended_lambda(r, p, tasks)),
        gamma: config.gamma.unwrap_or_else(|| recommended_gamma(p, tasks)),
        r,
        max_outer_iters: config.solver.max_outer_iters,
        tol: config.solver.tol,
        riemannian_step: config.solver.riemannian_step,
        riemannian_substeps: config.solver.riemannian_substeps,
    };
    mtl.validate(p)?;
    let fit = rl_mtl(&data, &family, &mtl)?;
    let mut reports = Vec::with_capacity(tasks);
    for (t, d) in data.iter().enumerate() {
        reports.push(TaskReport {
            file: config.tasks[t].clone(),
            n: d.n(),
            theta: vec_of(&fit.per_task_theta[t]),
            step1_beta: vec_of(&fit.step1_beta[t]),
            beta: vec_of(&fit.beta[t]),
            distance_to_center: projector_distance_spectral(&fit.per_task_basis[t], &fit.center)?,
        });
    }
    let report = FitReport {
        family: config.family.clone(),
        p,
        r,
        r_hat,
        rank,
        lambda: mtl.lambda,
        gamma: mtl.gamma,
        center: rows_of(fit.center.matrix()),
        tasks: reports,
        objective_trace: fit.objective_trace,
        converged: fit.converged,
    };
    if !report.converged {
        eprintln!("warning: step 1 stopped at max_outer_iters before reaching tol");
    }
    write_atomic(&args.out, "fit.json", &to_json(&report)?)
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    /// A `fit.json` written by `fit`.
    pub fit: PathBuf,
    pub target: PathBuf,
    /// Defaults to `0.5·√(p + ln T)` with `T` the number of fitted tasks.
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Defaults to the family recorded in the fit.
    #[serde(default)]
    pub family: Option<FamilyConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub family: FamilyConfig,
    pub gamma: f64,
    pub n0: usize,
    pub theta0: Vec<f64>,
    pub step1_beta0: Vec<f64>,
    pub beta0: Vec<f64>,
}

fn cmd_transfer(args: &CommonArgs) -> CliResult<()> {
    let (config, base) = load_config::<TransferConfig>(&args.config)?;
    let fit_path = resolve(&base, &config.fit);
    let (fit, _) = load_config::<FitReport>(&fit_path)?;
    let center = OrthoBasis::new(matrix_from_rows(&fit.center, "center")?)
        .map_err(|e| CliError::Input(format!("{}: center: {e}", fit_path.display())))?;
    let family_config = config.family.clone().unwrap_or_else(|| fit.family.clone());
    let family = family_config.build()?;
    let target = read_task_csv(&resolve(&base, &config.target))?;
    if target.p() != center.p() {
        return Err(CliError::Input(format!(
            "target has p={} but the fit has p={}",
            target.p(),
            center.p()
        )));
    }
    let gamma = config
        .gamma
        .unwrap_or_else(|| recommended_gamma(center.p(), fit.tasks.len().max(1)));
    let tl = rl_tl(&target, &family, &center, gamma)?;
    let report = TransferReport {
        family: family_config,
        gamma,
        n0: target.n(),
        theta0: vec_of(&tl.theta0),
        step1_beta0: vec_of(&tl.step1_beta0),
        beta0: vec_of(&tl.beta0),
    };
    write_atomic(&args.out, "transfer.json", &to_json(&report)?)
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankCommandConfig {
    #[serde(default)]
    pub tasks: Vec<PathBuf>,
    #[serde(default)]
    pub family: FamilyConfig,
    /// Defaults to the recommended multi-task settings.
    #[serde(default)]
    pub rank: Option<RankConfig>,
    /// Per-task sample size in the threshold; defaults to the smallest task.
    #[serde(default)]
    pub n: Option<usize>,
    /// Headerless `p x T` CSV used directly as `B̂` instead of fitting tasks.
    #[serde(default)]
    pub b_hat: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub r_hat: Option<usize>,
    pub singular_values: Vec<f64>,
    pub threshold: f64,
    pub n: usize,
    pub tasks: usize,
}

fn read_matrix_csv(path: &Path) -> CliResult<DMatrix<f64>> {
    let name = path.display();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("{name}: {e}")))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Input(format!("{name}: {e}")))?;
        let line = record.position().map_or(0, |pos| pos.line());
        let row = record
            .iter()
            .map(|c| c.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| CliError::Input(format!("{name}:{line}: non-numeric entry")))?;
        if rows.first().is_some_and(|first: &Vec<f64>| first.len() != row.len()) {
            return Err(CliError::Input(format!("{name}:{line}: ragged row")));
        }
        rows.push(row);
    }
    matrix_from_rows(&rows, &name.to_string())
}

fn cmd_rank(args: &CommonArgs) -> CliResult<()> {
    let (config, base) = load_config::<RankCommandConfig>(&args.config)?;
    let (b_hat, n) = match &config.b_hat {
        Some(path) => {
            if !config.tasks.is_empty() {
                return Err(CliError::Input("give either tasks or b_hat, not both".into()));
            }
            let n = config
                .n
                .ok_or_else(|| CliError::Input("b_hat requires n".into()))?;
            (read_matrix_csv(&resolve(&base, path))?, n)
        }
        None => {
            let family = config.family.build()?;
            let data = read_tasks(&base, &config.tasks)?;
            let n = config
                .n
                .unwrap_or_else(|| data.iter().map(TaskData::n).min().unwrap_or(1));
            let radius = config
                .rank
                .as_ref()
                .map_or(RankConfig::recommended_mtl(data.len()).radius, |r| r.radius);
            (projected_estimates(&data, &family, radius)?, n)
        }
    };
    let tasks = b_hat.ncols();
    let rank = config.rank.clone().unwrap_or_else(|| RankConfig::recommended_mtl(tasks));
    rank.validate()?;
    let (report, outcome) = match select_rank(&b_hat, &rank, n) {
        Ok(est) => (
            RankReport {
                r_hat: Some(est.r_hat),
                singular_values: est.singular_values,
                threshold: est.threshold,
                n,
                tasks,
            },
            Ok(()),
        ),
        Err(Error::NoRankDetected { singular_values, threshold, sigma_max }) => (
            RankReport { r_hat: None, singular_values, threshold, n, tasks },
            Err(CliError::NoRank(format!(
                "no rank detected: largest singular value {sigma_max} is below threshold {threshold}"
            ))),
        ),
        Err(e) => return Err(e.into()),
    };
    write_atomic(&args.out, "rank.json", &to_json(&report)?)?;
    if let Some(r) = report.r_hat {
        println!("r_hat = {r}");
    }
    outcome
}
