//! Synthetic experiments: data generation, baselines, error metrics and the
//! replication runner.
//!
//! Seeding is fixed: the shared structure (center, Rademacher signs) comes
//! from `master_seed`; task `t` draws from its own generator seeded with
//! `master_seed + t` on a separate stream; replication `k` of an experiment
//! uses `master_seed + 10000·k` as its master seed.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{single_task_fit, Coefficients, ModelFamily, TaskData};
use crate::mtl::{fit_shared, initial_center, recommended_lambda, rl_mtl, MtlConfig};
use crate::rank::{estimate_r, RankConfig};
use crate::stiefel::{orthonormalize, projector_distance_spectral, random_orthobasis, OrthoBasis};

/// Seed offset between replications.
pub const REPLICATION_SEED_STRIDE: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OutlierGenerator {
    /// Coefficient entries i.i.d. uniform on `[low, high)`.
    UniformCoef { low: f64, high: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutlierSpec {
    /// Zero-based task index.
    pub task: usize,
    pub generator: OutlierGenerator,
}

/// Full generative description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub tasks: usize,
    pub n: usize,
    pub p: usize,
    pub r: usize,
    #[serde(default)]
    pub h: f64,
    /// One `r`-vector per task; entries for outlier tasks are ignored.
    pub theta_stars: Vec<Vec<f64>>,
    #[serde(default)]
    pub outliers: Vec<OutlierSpec>,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    pub master_seed: u64,
}

fn default_noise_sd() -> f64 {
    1.0
}

/// The six low-dimensional parameters of the no-outlier benchmark.
pub fn benchmark_thetas() -> Vec<Vec<f64>> {
    vec![
        vec![1.0, 0.5, 0.0],
        vec![1.0, -1.0, 1.0],
        vec![1.5, 1.5, 0.0],
        vec![1.0, 1.0, 0.0],
        vec![1.0, 0.0, 1.0],
        vec![-1.0, -1.0, -1.0],
    ]
}

impl SimSpec {
    /// `T = 6, n = 100, p = 20, r = 3`, standard normal noise, no outliers.
    pub fn benchmark(master_seed: u64) -> Self {
        Self {
            tasks: 6,
            n: 100,
            p: 20,
            r: 3,
            h: 0.0,
            theta_stars: benchmark_thetas(),
            outliers: Vec::new(),
            noise_sd: 1.0,
            master_seed,
        }
    }

    /// The benchmark plus a seventh task whose coefficients are Unif(−1, 1).
    pub fn benchmark_with_outlier(master_seed: u64) -> Self {
        let mut spec = Self::benchmark(master_seed);
        spec.tasks = 7;
        spec.theta_stars.push(vec![0.0; 3]);
        spec.outliers.push(OutlierSpec {
            task: 6,
            generator: OutlierGenerator::UniformCoef { low: -1.0, high: 1.0 },
        });
        spec
    }

    pub fn with_h(&self, h: f64) -> Self {
        Self { h, ..self.clone() }
    }

    pub fn with_seed(&self, master_seed: u64) -> Self {
        Self { master_seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.tasks == 0 || self.n == 0 || self.p == 0 || self.r == 0 {
            return bad("tasks, n, p and r must be positive".into());
        }
        if self.r > self.p {
            return bad(format!("r = {} exceeds p = {}", self.r, self.p));
        }
        if self.theta_stars.len() != self.tasks {
            return bad(format!(
                "theta_stars has {} entries for {} tasks",
                self.theta_stars.len(),
                self.tasks
            ));
        }
        if let Some(t) = self.theta_stars.iter().position(|th| th.len() != self.r) {
            return bad(format!("theta_stars[{t}] does not have length r = {}", self.r));
        }
        if !(self.h.is_finite() && self.h >= 0.0) {
            return bad(format!("h must be finite and non-negative, got {}", self.h));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return bad(format!("noise_sd must be non-negative, got {}", self.noise_sd));
        }
        let mut seen = vec![false; self.tasks];
        for o in &self.outliers {
            if o.task >= self.tasks || seen[o.task] {
                return bad(format!("invalid or repeated outlier task index {}", o.task));
            }
            seen[o.task] = true;
            let OutlierGenerator::UniformCoef { low, high } = o.generator;
            if !(low < high && low.is_finite() && high.is_finite()) {
                return bad(format!("outlier range [{low}, {high}) is empty"));
            }
        }
        if seen.iter().all(|&s| s) {
            return bad("at least one inlier task is required".into());
        }
        Ok(())
    }

    fn outlier(&self, t: usize) -> Option<&OutlierSpec> {
        self.outliers.iter().find(|o| o.task == t)
    }
}

/// Ground truth behind a generated data set.
#[derive(Debug, Clone)]
pub struct SimTruth {
    pub center_star: OrthoBasis,
    /// `Ā + h·a_t (I_r, 0)ᵀ` for inliers (not re-orthonormalized); empty
    /// matrices for outliers.
    pub task_reps: Vec<DMatrix<f64>>,
    pub beta_stars: Vec<Coefficients>,
    pub inlier_set: Vec<usize>,
    pub outlier_set: Vec<usize>,
    /// Spectral projector distance between the column space of each inlier
    /// representation and the center; `None` for outliers.
    pub effective_distance: Vec<Option<f64>>,
}

/// Draws one data set. Deterministic in `spec.master_seed`.
pub fn generate(spec: &SimSpec) -> Result<(Vec<TaskData>, SimTruth)> {
    spec.validate()?;
    let (p, r) = (spec.p, spec.r);
    let mut shared = ChaCha8Rng::seed_from_u64(spec.master_seed);
    let center = random_orthobasis(&mut shared, p, r)?;
    let signs: Vec<f64> = (0..spec.tasks)
        .map(|_| if shared.random::<bool>() { 1.0 } else { -1.0 })
        .collect();

    let mut data = Vec::with_capacity(spec.tasks);
    let mut truth = SimTruth {
        center_star: center.clone(),
        task_reps: Vec::with_capacity(spec.tasks),
        beta_stars: Vec::with_capacity(spec.tasks),
        inlier_set: Vec::new(),
        outlier_set: Vec::new(),
        effective_distance: Vec::with_capacity(spec.tasks),
    };
    for t in 0..spec.tasks {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.master_seed.wrapping_add(t as u64));
        rng.set_stream(1);
        let beta = match spec.outlier(t) {
            Some(o) => {
                let OutlierGenerator::UniformCoef { low, high } = o.generator;
                let unif = Uniform::new(low, high)
                    .map_err(|e| Error::InvalidArgument(format!("outlier range: {e}")))?;
                truth.outlier_set.push(t);
                truth.task_reps.push(DMatrix::zeros(0, 0));
                truth.effective_distance.push(None);
                DVector::from_fn(p, |_, _| rng.sample(unif))
            }
            None => {
                let mut rep = center.matrix().clone();
                for k in 0..r {
                    rep[(k, k)] += spec.h * signs[t];
                }
                let theta = DVector::from_column_slice(&spec.theta_stars[t]);
                let beta = &rep * theta;
                let dist = orthonormalize(&rep)
                    .and_then(|q| projector_distance_spectral(&q, &center))
                    .ok();
                truth.inlier_set.push(t);
                truth.task_reps.push(rep);
                truth.effective_distance.push(dist);
                beta
            }
        };
        let x = DMatrix::<f64>::from_fn(spec.n, p, |_, _| rng.sample(StandardNormal));
        let noise = DVector::<f64>::from_fn(spec.n, |_, _| spec.noise_sd * rng.sample::<f64, _>(StandardNormal));
        let y = &x * &beta + noise;
        data.push(TaskData::new(x, y)?);
        truth.beta_stars.push(beta);
    }
    Ok((data, truth))
}

/// Shared-representation ERM: `min_{A, θ_t} Σ_t f_t(Aθ_t)` over a single
/// orthonormal `A`, started from [`initial_center`]. Returns `Aθ_t` per task.
pub fn baseline_naive_shared(data: &[TaskData], family: &ModelFamily, r: usize) -> Result<Vec<Coefficients>> {
    let start = initial_center(data, family, r)?;
    let (basis, thetas) = fit_shared(data, family, start)?;
    Ok(thetas.iter().map(|th| basis.lift(th)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Inliers,
    Outliers,
    All,
}

impl Subset {
    pub fn as_str(&self) -> &'static str {
        match self {
            Subset::Inliers => "inliers",
            Subset::Outliers => "outliers",
            Subset::All => "all",
        }
    }
}

/// `max_{t ∈ subset} ‖β̂_t − β*_t‖₂`.
pub fn max_error(fits: &[Coefficients], truth: &SimTruth, subset: Subset) -> Result<f64> {
    if fits.len() != truth.beta_stars.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} fits for {} tasks",
            fits.len(),
            truth.beta_stars.len()
        )));
    }
    let indices: Vec<usize> = match subset {
        Subset::Inliers => truth.inlier_set.clone(),
        Subset::Outliers => truth.outlier_set.clone(),
        Subset::All => (0..fits.len()).collect(),
    };
    if indices.is_empty() {
        return Err(Error::EmptySubset);
    }
    indices
        .into_iter()
        .map(|t| {
            if fits[t].len() != truth.beta_stars[t].len() {
                return Err(Error::ShapeMismatch(format!("fit {t} has the wrong length")));
            }
            Ok((&fits[t] - &truth.beta_stars[t]).norm())
        })
        .try_fold(0.0f64, |acc, e| e.map(|e| acc.max(e)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Two-step estimator with the true `r`.
    RlMtlOracle,
    /// Two-step estimator with `r` chosen by singular-value thresholding.
    RlMtlAdaptive,
    /// Shared-representation ERM with the true `r`.
    RlMtlNaive,
    SingleTask,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::RlMtlOracle,
        Method::RlMtlAdaptive,
        Method::RlMtlNaive,
        Method::SingleTask,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::RlMtlOracle => "rl_mtl_oracle",
            Method::RlMtlAdaptive => "rl_mtl_adaptive",
            Method::RlMtlNaive => "rl_mtl_naive",
            Method::SingleTask => "single_task",
        }
    }
}

/// Tuning used by the harness. `λ = lambda_constant·√(r(p + ln T))` and
/// `γ = gamma_constant·√(p + ln T)` with `r` the dimension the method uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessSettings {
    pub lambda_constant: f64,
    pub gamma_constant: f64,
    pub max_outer_iters: usize,
    pub tol: f64,
    pub riemannian_step: f64,
    pub riemannian_substeps: usize,
    /// Defaults to [`RankConfig::recommended_mtl`] for the spec's `T`.
    pub rank: Option<RankConfig>,
}

impl Default for HarnessSettings {
    fn default() -> Self {
        let base = MtlConfig::new(0.0, 0.0, 1);
        Self {
            lambda_constant: 1.0,
            gamma_constant: 0.5,
            max_outer_iters: base.max_outer_iters,
            tol: base.tol,
            riemannian_step: base.riemannian_step,
            riemannian_substeps: base.riemannian_substeps,
            rank: None,
        }
    }
}

impl HarnessSettings {
    pub fn mtl_config(&self, r: usize, p: usize, tasks: usize) -> MtlConfig {
        MtlConfig {
            lambda: self.lambda_constant * recommended_lambda(r, p, tasks),
            gamma: self.gamma_constant * (p as f64 + (tasks as f64).ln()).sqrt(),
            r,
            max_outer_iters: self.max_outer_iters,
            tol: self.tol,
            riemannian_step: self.riemannian_step,
            riemannian_substeps: self.riemannian_substeps,
        }
    }

    pub fn rank_config(&self, tasks: usize) -> RankConfig {
        self.rank.clone().unwrap_or_else(|| RankConfig::recommended_mtl(tasks))
    }
}

/// Output of one method on one data set.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub fits: Vec<Coefficients>,
    /// Dimension used, when the method has one.
    pub r_used: Option<usize>,
}

/// Runs `method` with the linear family on a generated data set.
pub fn run_method(
    method: Method,
    data: &[TaskData],
    spec: &SimSpec,
    settings: &HarnessSettings,
) -> Result<MethodRun> {
    let family = ModelFamily::Linear;
    let n = data.iter().map(|d| d.n()).min().unwrap_or(spec.n);
    match method {
        Method::SingleTask => Ok(MethodRun {
            fits: data.iter().map(|d| single_task_fit(&family, d)).collect::<Result<_>>()?,
            r_used: None,
        }),
        Method::RlMtlNaive => Ok(MethodRun {
            fits: baseline_naive_shared(data, &family, spec.r)?,
            r_used: Some(spec.r),
        }),
        Method::RlMtlOracle | Method::RlMtlAdaptive => {
            let r = if method == Method::RlMtlOracle {
                spec.r
            } else {
                estimate_r(data, &family, &settings.rank_config(data.len()), n)?.r_hat.min(spec.p)
            };
            let cfg = settings.mtl_config(r, spec.p, data.len());
            Ok(MethodRun {
                fits: rl_mtl(data, &family, &cfg)?.beta,
                r_used: Some(r),
            })
        }
    }
}

/// One replication's error for one method and subset.
#[derive(Debug, Clone, PartialEq)]
pub struct RepRecord {
    pub method: Method,
    pub h: f64,
    pub rep: usize,
    pub subset: Subset,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub method: Method,
    pub h: f64,
    pub rep: usize,
    pub message: String,
}

/// Mean and sample standard deviation of the errors of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub method: Method,
    pub h: f64,
    pub subset: Subset,
    pub mean: f64,
    pub sd: f64,
    /// Replications that contributed. With none, `mean` is NaN and `sd` is 0.
    pub count: usize,
}

/// Per-replication diagnostics independent of the method.
#[derive(Debug, Clone, PartialEq)]
pub struct RepDiagnostics {
    pub h: f64,
    pub rep: usize,
    /// Largest effective subspace distance over inlier tasks.
    pub max_effective_distance: f64,
    /// `r` chosen by the adaptive method, when it ran and succeeded.
    pub adaptive_r: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub records: Vec<RepRecord>,
    pub summary: Vec<CellSummary>,
    pub failures: Vec<Failure>,
    pub diagnostics: Vec<RepDiagnostics>,
}

impl ResultTable {
    pub fn cell(&self, method: Method, h: f64, subset: Subset) -> Option<&CellSummary> {
        self.summary
            .iter()
            .find(|c| c.method == method && c.h == h && c.subset == subset)
    }

    fn extend(&mut self, other: ResultTable) {
        self.records.extend(other.records);
        self.summary.extend(other.summary);
        self.failures.extend(other.failures);
        self.diagnostics.extend(other.diagnostics);
    }
}

struct RepOutcome {
    records: Vec<RepRecord>,
    failures: Vec<Failure>,
    diagnostics: RepDiagnostics,
}

fn run_one_rep(spec: &SimSpec, methods: &[Method], rep: usize, settings: &HarnessSettings) -> RepOutcome {
    let seed = spec
        .master_seed
        .wrapping_add(REPLICATION_SEED_STRIDE.wrapping_mul(rep as u64));
    let rep_spec = spec.with_seed(seed);
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut diagnostics = RepDiagnostics {
        h: spec.h,
        rep,
        max_effective_distance: f64::NAN,
        adaptive_r: None,
    };
    let (data, truth) = match generate(&rep_spec) {
        Ok(v) => v,
        Err(e) => {
            for &method in methods {
                failures.push(Failure { method, h: spec.h, rep, message: e.to_string() });
            }
            return RepOutcome { records, failures, diagnostics };
        }
    };
    diagnostics.max_effective_distance = truth
        .effective_distance
        .iter()
        .flatten()
        .fold(0.0, |m, &d| m.max(d));
    for &method in methods {
        match run_method(method, &data, &rep_spec, settings) {
            Ok(run) => {
                if method == Method::RlMtlAdaptive {
                    diagnostics.adaptive_r = run.r_used;
                }
                for subset in [Subset::Inliers, Subset::Outliers] {
                    match max_error(&run.fits, &truth, subset) {
                        Ok(error) => records.push(RepRecord { method, h: spec.h, rep, subset, error }),
                        Err(Error::EmptySubset) => {}
                        Err(e) => failures.push(Failure { method, h: spec.h, rep, message: e.to_string() }),
                    }
                }
            }
            Err(e) => failures.push(Failure { method, h: spec.h, rep, message: e.to_string() }),
        }
    }
    RepOutcome { records, failures, diagnostics }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    match values.len() {
        0 => (f64::NAN, 0.0),
        1 => (values[0], 0.0),
        k => {
            let mean = values.iter().sum::<f64>() / k as f64;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
            (mean, var.sqrt())
        }
    }
}

/// Runs `reps` replications of `spec` (at its own `h`) for every method.
/// Replications run in parallel; aggregation is ordered by replication index,
/// so the table is bit-identical across runs and thread counts.
pub fn run_replications(
    spec: &SimSpec,
    methods: &[Method],
    reps: usize,
    settings: &HarnessSettings,
) -> Result<ResultTable> {
    spec.validate()?;
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    let outcomes: Vec<RepOutcome> = (0..reps)
        .into_par_iter()
        .map(|rep| run_one_rep(spec, methods, rep, settings))
        .collect();

    let mut table = ResultTable::default();
    for o in outcomes {
        table.records.extend(o.records);
        table.failures.extend(o.failures);
        table.diagnostics.push(o.diagnostics);
    }
    for &method in methods {
        for subset in [Subset::Inliers, Subset::Outliers] {
            let values: Vec<f64> = table
                .records
                .iter()
                .filter(|r| r.method == method && r.subset == subset)
                .map(|r| r.error)
                .collect();
            let (mean, sd) = mean_sd(&values);
            table.summary.push(CellSummary {
                method,
                h: spec.h,
                subset,
                mean,
                sd,
                count: values.len(),
            });
        }
    }
    Ok(table)
}

/// [`run_replications`] over a grid of similarity levels.
pub fn run_grid(
    spec: &SimSpec,
    h_grid: &[f64],
    methods: &[Method],
    reps: usize,
    settings: &HarnessSettings,
) -> Result<ResultTable> {
    let mut table = ResultTable::default();
    for &h in h_grid {
        table.extend(run_replications(&spec.with_h(h), methods, reps, settings)?);
    }
    Ok(table)
}

/// The similarity grid `0, 0.1, …, 0.8`.
pub fn benchmark_h_grid() -> Vec<f64> {
    (0..=8).map(|k| k as f64 / 10.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn h_zero_reps_equal_center() {
        let (_, truth) = generate(&SimSpec::benchmark(1)).unwrap();
        for rep in &truth.task_reps {
            assert_eq!(rep, truth.center_star.matrix());
        }
        assert!(truth.effective_distance.iter().all(|d| d.unwrap() < 1e-12));
    }

    #[test]
    fn noiseless_inlier_is_exact() {
        let spec = SimSpec { noise_sd: 0.0, ..SimSpec::benchmark(2) };
        let (data, truth) = generate(&spec).unwrap();
        for (d, b) in data.iter().zip(&truth.beta_stars) {
            assert_eq!(d.x() * b, *d.y());
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SimSpec::benchmark_with_outlier(3).with_h(0.3);
        let (a, ta) = generate(&spec).unwrap();
        let (b, tb) = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.beta_stars, tb.beta_stars);
        let (c, _) = generate(&spec.with_seed(4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn outlier_generation() {
        let (_, truth) = generate(&SimSpec::benchmark_with_outlier(5)).unwrap();
        assert_eq!(truth.inlier_set, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(truth.outlier_set, vec![6]);
        assert!(truth.beta_stars[6].iter().all(|v| (-1.0..1.0).contains(v)));
    }

    #[test]
    fn inlier_betas_follow_the_construction() {
        let spec = SimSpec::benchmark(6).with_h(0.5);
        let (_, truth) = generate(&spec).unwrap();
        for &t in &truth.inlier_set {
            let theta = DVector::from_column_slice(&spec.theta_stars[t]);
            assert!((&truth.task_reps[t] * theta - &truth.beta_stars[t]).amax() < 1e-15);
            let diff = &truth.task_reps[t] - truth.center_star.matrix();
            assert!((diff.abs().max() - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn spec_validation() {
        let mut s = SimSpec::benchmark(1);
        s.theta_stars.pop();
        assert!(s.validate().is_err());
        let mut s = SimSpec::benchmark(1);
        s.outliers.push(OutlierSpec { task: 9, generator: OutlierGenerator::UniformCoef { low: -1.0, high: 1.0 } });
        assert!(s.validate().is_err());
        let mut s = SimSpec::benchmark(1);
        s.r = 30;
        assert!(s.validate().is_err());
    }

    #[test]
    fn max_error_examples() {
        let (_, truth) = generate(&SimSpec::benchmark_with_outlier(7)).unwrap();
        let exact = truth.beta_stars.clone();
        assert_eq!(max_error(&exact, &truth, Subset::All).unwrap(), 0.0);
        let mut off = exact.clone();
        off[2][5] += 0.37;
        assert!((max_error(&off, &truth, Subset::Inliers).unwrap() - 0.37).abs() < 1e-12);
        assert_eq!(max_error(&off, &truth, Subset::Outliers).unwrap(), 0.0);

        let (_, clean) = generate(&SimSpec::benchmark(7)).unwrap();
        assert!(matches!(
            max_error(&clean.beta_stars, &clean, Subset::Outliers),
            Err(Error::EmptySubset)
        ));
    }

    #[test]
    fn max_error_matches_recomputation() {
        let (_, truth) = generate(&SimSpec::benchmark(8)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let fits: Vec<_> = truth
            .beta_stars
            .iter()
            .map(|b| b + DVector::from_fn(b.len(), |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let mut oracle = 0.0f64;
        for (f, b) in fits.iter().zip(&truth.beta_stars) {
            let sq: f64 = f.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
            oracle = oracle.max(sq.sqrt());
        }
        assert!((max_error(&fits, &truth, Subset::All).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn naive_recovers_noiseless_shared_model() {
        let spec = SimSpec { noise_sd: 0.0, ..SimSpec::benchmark(9) };
        let (data, truth) = generate(&spec).unwrap();
        let fits = baseline_naive_shared(&data, &ModelFamily::Linear, 3).unwrap();
        assert!(max_error(&fits, &truth, Subset::All).unwrap() < 1e-4);
    }

    #[test]
    fn naive_single_task_full_rank_is_ols() {
        let spec = SimSpec { tasks: 1, p: 4, r: 1, theta_stars: vec![vec![1.0]], ..SimSpec::benchmark(10) };
        let (data, _) = generate(&spec).unwrap();
        let fits = baseline_naive_shared(&data, &ModelFamily::Linear, 4).unwrap();
        let single = single_task_fit(&ModelFamily::Linear, &data[0]).unwrap();
        assert!((&fits[0] - single).amax() < 1e-10);
    }

    #[test]
    fn single_rep_noiseless_has_zero_sd() {
        let spec = SimSpec { noise_sd: 0.0, ..SimSpec::benchmark(12) };
        let table = run_replications(&spec, &Method::ALL, 1, &HarnessSettings::default()).unwrap();
        // The benchmark's smallest signal direction sits below the default
        // rank threshold, so the adaptive method is excluded here.
        for cell in table
            .summary
            .iter()
            .filter(|c| c.subset == Subset::Inliers && c.method != Method::RlMtlAdaptive)
        {
            assert_eq!(cell.count, 1);
            assert_eq!(cell.sd, 0.0);
            assert!(cell.mean <= 1e-3, "{:?}", cell);
        }
        let outl = table.cell(Method::SingleTask, 0.0, Subset::Outliers).unwrap();
        assert_eq!(outl.count, 0);
        assert!(outl.mean.is_nan());
    }

    #[test]
    fn bookkeeping_separates_inliers_and_outliers() {
        let spec = SimSpec::benchmark_with_outlier(13);
        let table = run_replications(&spec, &[Method::SingleTask], 2, &HarnessSettings::default()).unwrap();
        for rep in 0..2 {
            let seed = 13 + REPLICATION_SEED_STRIDE * rep as u64;
            let (data, truth) = generate(&spec.with_seed(seed)).unwrap();
            let fits: Vec<_> = data.iter().map(|d| single_task_fit(&ModelFamily::Linear, d).unwrap()).collect();
            let inl = truth.inlier_set.iter().map(|&t| (&fits[t] - &truth.beta_stars[t]).norm()).fold(0.0, f64::max);
            let out = (&fits[6] - &truth.beta_stars[6]).norm();
            let rec = |s: Subset| table.records.iter().find(|r| r.rep == rep && r.subset == s).unwrap().error;
            assert_eq!(rec(Subset::Inliers), inl);
            assert_eq!(rec(Subset::Outliers), out);
        }
    }

    #[test]
    fn replications_are_deterministic() {
        let spec = SimSpec::benchmark(14).with_h(0.2);
        let s = HarnessSettings::default();
        let a = run_replications(&spec, &Method::ALL, 3, &s).unwrap();
        let b = run_replications(&spec, &Method::ALL, 3, &s).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}
