//! Data-generating processes, pseudo-true values, and the Monte Carlo
//! coverage and power harness.
//!
//! Two designs are built in:
//!
//! - **Example 1 (combining data sets)** — observations `(Y, Z)` with
//!   `(Y, Z⁰)` bivariate normal, means `(δ, 0)`, unit variances, correlation
//!   `ρ`, and either `Z = Z⁰` or the shifted lognormal
//!   `Z = exp(σ Z⁰) - exp(σ²/2)`. The working restriction `E Y = 0` is wrong
//!   whenever `δ ≠ 0`, so `δ` measures misspecification. The pipeline is the
//!   two-step estimator of the combining-data moment model.
//! - **Example 2 (invalid instrument)** — linear IV data `(y, x, z1, z2)`
//!   with shifted-lognormal errors, a valid weak instrument `z1` and a
//!   possibly invalid instrument `z2` with `E z2 ε = δ`. The pipeline is the
//!   one-step estimator with the instrument outer-product weight (2SLS).
//!
//! Pseudo-true values come from closed forms that must pass a large-sample
//! oracle check (an `n = 10⁶` fit) before any coverage or power study will
//! run; verification is cached in a text file so sweeps pay the cost once.
//!
//! Replication `r` draws its dataset from random stream `(seed, r)` and its
//! bootstrap draw `b` from `(seed, r, b)`, so tables are bitwise identical
//! across thread counts.

use std::collections::HashSet;
use std::io::Write as _;
use std::path::PathBuf;

use crate::bootstrap::{
    bootstrap_quantile, empirical_quantile_min_rule, run_bootstrap, BootstrapRequest,
    ResamplePlan,
};
use crate::estimate::{
    iv_instrument_recipe, one_step, two_step, two_step_from, GmmFit, MinimizeOptions,
};
use crate::exec::{default_threads, run_indexed};
use crate::inference::{ci_asymptotic, ci_bootstrap, j_test, CiKind, ConfidenceInterval};
use crate::model::{combining_data_model, linear_iv_model, Dataset, MomentModel};
use crate::rng::{stream_id, CounterRng, StreamDomain};
use crate::variance::{sigma_conventional, sigma_mr};
use crate::{Error, Result};

/// Sample size of the pseudo-true oracle fit.
pub const ORACLE_N: usize = 1_000_000;
/// Replication index reserved for oracle/pilot draws, outside the range the
/// studies use.
const PILOT_REPLICATION: u32 = u32::MAX;

/// Shape of the `Z` marginal in Example 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZShape {
    /// `Z = Z⁰` (plain bivariate normal design).
    Normal,
    /// `Z = exp(σ Z⁰) - exp(σ²/2)`, mean 0 and variance
    /// `(e^{σ²} - 1)e^{σ²}`.
    Lognormal { sigma: f64 },
}

/// Example 1 design parameters.
#[derive(Debug, Clone, Copy)]
pub struct Example1Spec {
    pub n: usize,
    /// Correlation of the underlying normals, |ρ| < 1.
    pub rho: f64,
    pub shape: ZShape,
    /// True mean of Y; the assumed mean is 0, so δ ≠ 0 misspecifies.
    pub delta: f64,
}

impl Example1Spec {
    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::argument("example 1 needs n >= 1"));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::argument("example 1 needs |rho| < 1"));
        }
        if let ZShape::Lognormal { sigma } = self.shape {
            if !(sigma > 0.0) {
                return Err(Error::argument("example 1 lognormal shape needs sigma > 0"));
            }
        }
        Ok(())
    }
}

/// Example 2 design parameters.
#[derive(Debug, Clone, Copy)]
pub struct Example2Spec {
    pub n: usize,
    /// Instrument invalidity: `E z2 ε = δ`.
    pub delta: f64,
    /// First-instrument strength (0.25 makes it relatively weak).
    pub gamma1: f64,
    /// Second-instrument coefficient; `None` selects the strong-but-invalid
    /// value that keeps the pseudo-true coefficient at exactly 0.
    pub gamma2: Option<f64>,
}

impl Example2Spec {
    pub fn gamma2_value(&self) -> f64 {
        self.gamma2.unwrap_or_else(|| gamma2_strong_invalid(self.delta))
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::argument("example 2 needs n >= 1"));
        }
        if self.gamma1 == 0.0 {
            return Err(Error::argument("example 2 needs gamma1 != 0"));
        }
        Ok(())
    }
}

/// `E ε u` for the shifted-lognormal errors with underlying normal
/// correlation 0.99: `e^{1.99} - e`.
pub fn rho_eps_u() -> f64 {
    (1.99f64).exp() - std::f64::consts::E
}

/// The strong-but-invalid second-instrument coefficient
/// `γ₂ = -δ ρ_εu / ((e-1)e + δ²)`, which keeps the one-step pseudo-true
/// coefficient at 0 for every δ.
pub fn gamma2_strong_invalid(delta: f64) -> f64 {
    let e = std::f64::consts::E;
    -delta * rho_eps_u() / ((e - 1.0) * e + delta * delta)
}

/// Draws an Example-1 dataset on stream `(seed, replication)`, columns
/// `(Y, Z)`.
pub fn simulate_example1(spec: &Example1Spec, seed: u64, replication: u32) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = CounterRng::new(seed, StreamDomain::Simulate, stream_id(replication, 0));
    let rho = spec.rho;
    let mix = (1.0 - rho * rho).sqrt();
    let mut rows = Vec::with_capacity(2 * spec.n);
    for _ in 0..spec.n {
        let (e1, e2) = rng.next_normal_pair();
        let y = spec.delta + e1;
        let z0 = rho * e1 + mix * e2;
        let z = match spec.shape {
            ZShape::Normal => z0,
            ZShape::Lognormal { sigma } => (sigma * z0).exp() - (0.5 * sigma * sigma).exp(),
        };
        rows.push(y);
        rows.push(z);
    }
    Dataset::from_rows(rows, 2)
}

/// Draws an Example-2 dataset on stream `(seed, replication)`, columns
/// `(y, x, z1, z2)` with `β₀ = 0`.
pub fn simulate_example2(spec: &Example2Spec, seed: u64, replication: u32) -> Result<Dataset> {
    spec.validate()?;
    let e = std::f64::consts::E;
    let err_scale = 1.0 / ((e - 1.0) * e); // δ/((e-1)e) multiplies ε in z2
    let shift = (0.5f64).exp();
    let corr = 0.99_f64;
    let mix = (1.0 - corr * corr).sqrt();
    let gamma2 = spec.gamma2_value();
    let mut rng = CounterRng::new(seed, StreamDomain::Simulate, stream_id(replication, 0));
    let mut rows = Vec::with_capacity(4 * spec.n);
    for _ in 0..spec.n {
        let (z1, z20) = rng.next_normal_pair();
        let (n1, n3) = rng.next_normal_pair();
        let eps = n1.exp() - shift;
        let u = (corr * n1 + mix * n3).exp() - shift;
        let z2 = z20 + spec.delta * err_scale * eps;
        let x = spec.gamma1 * z1 + gamma2 * z2 + u;
        let y = eps; // β₀ = 0
        rows.extend_from_slice(&[y, x, z1, z2]);
    }
    Dataset::from_rows(rows, 4)
}

/// Closed-form pseudo-true value of the Example-1 two-step estimator:
/// `θ₀ = E Z - Cov(Y, Z)·δ` with `Var Y = 1`, i.e. `-ρδ` for the normal
/// design and `-ρ σ e^{σ²/2} δ` for the lognormal one (Stein's identity for
/// `Cov(Y, e^{σZ⁰})`).
pub fn pseudo_true_example1(spec: &Example1Spec) -> f64 {
    let v = match spec.shape {
        ZShape::Normal => -spec.rho * spec.delta,
        ZShape::Lognormal { sigma } => {
            -spec.rho * sigma * (0.5 * sigma * sigma).exp() * spec.delta
        }
    };
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

/// Closed-form probability limit of the Example-2 one-step (2SLS)
/// coefficient. With the strong-invalid `γ₂` it is exactly 0 for every δ.
pub fn pseudo_true_example2(spec: &Example2Spec) -> f64 {
    if spec.gamma2.is_none() {
        return 0.0;
    }
    let e = std::f64::consts::E;
    let c = (e - 1.0) * e;
    let k = spec.delta * spec.delta / c;
    let a = (1.0 + k) * spec.gamma2_value() + spec.delta * rho_eps_u() / c;
    let denom = (1.0 + k) * spec.gamma1 * spec.gamma1 + a * a;
    let v = a * spec.delta / denom;
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

/// One of the two built-in Monte Carlo designs, with its estimation
/// pipeline.
#[derive(Debug, Clone, Copy)]
pub enum StudyModel {
    Example1(Example1Spec),
    Example2(Example2Spec),
}

impl StudyModel {
    pub fn n(&self) -> usize {
        match self {
            StudyModel::Example1(s) => s.n,
            StudyModel::Example2(s) => s.n,
        }
    }

    pub fn with_n(&self, n: usize) -> StudyModel {
        match *self {
            StudyModel::Example1(mut s) => {
                s.n = n;
                StudyModel::Example1(s)
            }
            StudyModel::Example2(mut s) => {
                s.n = n;
                StudyModel::Example2(s)
            }
        }
    }

    pub fn simulate(&self, seed: u64, replication: u32) -> Result<Dataset> {
        match self {
            StudyModel::Example1(s) => simulate_example1(s, seed, replication),
            StudyModel::Example2(s) => simulate_example2(s, seed, replication),
        }
    }

    pub fn moment_model(&self) -> MomentModel {
        match self {
            StudyModel::Example1(_) => combining_data_model(),
            StudyModel::Example2(_) => linear_iv_model(),
        }
    }

    /// The estimation pipeline the paper's tables use: two-step for
    /// Example 1, one-step 2SLS for Example 2.
    pub fn fit(&self, model: &MomentModel, data: &Dataset) -> Result<GmmFit> {
        let opts = MinimizeOptions::default();
        match self {
            StudyModel::Example1(_) => two_step(model, data, &opts),
            StudyModel::Example2(_) => one_step(model, data, &iv_instrument_recipe(), &opts),
        }
    }

    pub fn pseudo_true(&self) -> f64 {
        match self {
            StudyModel::Example1(s) => pseudo_true_example1(s),
            StudyModel::Example2(s) => pseudo_true_example2(s),
        }
    }

    /// Cache key for the oracle verification: design parameters (not n)
    /// plus the closed-form value itself, so a formula change re-verifies.
    pub fn cache_key(&self) -> String {
        match self {
            StudyModel::Example1(s) => {
                let shape = match s.shape {
                    ZShape::Normal => "normal".to_string(),
                    ZShape::Lognormal { sigma } => format!("lognormal:{sigma}"),
                };
                format!(
                    "example1 rho={} shape={} delta={} psi={}",
                    s.rho,
                    shape,
                    s.delta,
                    self.pseudo_true()
                )
            }
            StudyModel::Example2(s) => format!(
                "example2 delta={} gamma1={} gamma2={} psi={}",
                s.delta,
                s.gamma1,
                s.gamma2_value(),
                self.pseudo_true()
            ),
        }
    }
}

/// Checks the closed-form pseudo-true value against a large-n fit of the
/// same pipeline. Returns the closed form on success.
pub fn verify_pseudo_true(study: &StudyModel, seed: u64) -> Result<f64> {
    let closed = study.pseudo_true();
    let big = study.with_n(ORACLE_N);
    let data = big.simulate(seed, PILOT_REPLICATION)?;
    let model = big.moment_model();
    let fit = big.fit(&model, &data)?;
    let var = sigma_mr(&model, &data, &fit)?;
    let se = var.std_error(0)?;
    let tol = (8.0 * se).max(0.02);
    let gap = (fit.theta[0] - closed).abs();
    if gap > tol {
        return Err(Error::PseudoTrueUnverified(format!(
            "closed form {closed} vs n={ORACLE_N} estimate {} (gap {gap:.4}, tol {tol:.4})",
            fit.theta[0]
        )));
    }
    Ok(closed)
}

/// Persistent record of pseudo-true values that already passed their oracle
/// check. Backed by a plain text file (one verified key per line) so sweeps
/// across n reuse one verification per design.
#[derive(Debug, Clone, Default)]
pub struct PseudoTrueCache {
    path: Option<PathBuf>,
    verified: HashSet<String>,
}

impl PseudoTrueCache {
    pub fn in_memory() -> Self {
        PseudoTrueCache::default()
    }

    pub fn at_path(path: PathBuf) -> Self {
        let verified = std::fs::read_to_string(&path)
            .map(|s| s.lines().map(|l| l.trim().to_string()).collect())
            .unwrap_or_default();
        PseudoTrueCache {
            path: Some(path),
            verified,
        }
    }

    /// Returns the verified pseudo-true value, running the oracle check on a
    /// cache miss and refusing on failure.
    pub fn ensure_verified(&mut self, study: &StudyModel, seed: u64) -> Result<f64> {
        let key = study.cache_key();
        if self.verified.contains(&key) {
            return Ok(study.pseudo_true());
        }
        let value = verify_pseudo_true(study, seed)?;
        self.verified.insert(key.clone());
        if let Some(path) = &self.path {
            if let Ok(mut f) = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
            {
                let _ = writeln!(f, "{key}");
            }
        }
        Ok(value)
    }
}

/// Coverage-study configuration.
#[derive(Debug, Clone)]
pub struct CoverageConfig {
    pub study: StudyModel,
    /// Monte Carlo replications (r).
    pub replications: usize,
    /// Bootstrap draws per replication (B).
    pub bootstrap_draws: usize,
    /// Nominal levels, e.g. `[0.90, 0.95]`.
    pub levels: Vec<f64>,
    pub kinds: Vec<CiKind>,
    /// Run the asymptotic J test each replication.
    pub j_tests: bool,
    /// Run the HH bootstrap J test each replication (costs B extra two-step
    /// fits for Example 2).
    pub j_bootstrap: bool,
    pub j_level: f64,
    pub seed: u64,
    /// 0 means all available cores.
    pub threads: usize,
}

impl CoverageConfig {
    pub fn new(study: StudyModel, replications: usize, bootstrap_draws: usize, seed: u64) -> Self {
        CoverageConfig {
            study,
            replications,
            bootstrap_draws,
            levels: vec![0.90, 0.95],
            kinds: CiKind::ALL.to_vec(),
            j_tests: true,
            j_bootstrap: false,
            j_level: 0.05,
            seed,
            threads: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::argument("coverage study needs r >= 1"));
        }
        if self.bootstrap_draws == 0
            && self
                .kinds
                .iter()
                .any(|k| matches!(k, CiKind::MrStar | CiKind::HhStar | CiKind::BnStar))
        {
            return Err(Error::argument("bootstrap CI kinds need B >= 1"));
        }
        if self.levels.is_empty() || self.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return Err(Error::argument("levels must lie in (0,1)"));
        }
        if self.kinds.is_empty() && !self.j_tests && !self.j_bootstrap {
            return Err(Error::argument("nothing requested"));
        }
        if !(self.j_level > 0.0 && self.j_level < 1.0) {
            return Err(Error::argument("J-test level must be in (0,1)"));
        }
        Ok(())
    }
}

/// Aggregated coverage for one (level, kind) cell.
#[derive(Debug, Clone)]
pub struct CoverageRow {
    pub level: f64,
    pub kind: CiKind,
    pub covered: usize,
    /// Replications that produced a CI (degenerate ones included).
    pub valid: usize,
    /// Replications where this CI kind errored.
    pub failures: usize,
    /// Zero-length (degenerate) intervals among the valid ones.
    pub degenerate: usize,
    pub halfwidth_sum: f64,
}

impl CoverageRow {
    pub fn coverage(&self) -> f64 {
        if self.valid == 0 {
            f64::NAN
        } else {
            self.covered as f64 / self.valid as f64
        }
    }

    pub fn mean_halfwidth(&self) -> f64 {
        if self.valid == 0 {
            f64::NAN
        } else {
            self.halfwidth_sum / self.valid as f64
        }
    }

    /// Monte Carlo standard error `sqrt(p(1-p)/valid)`.
    pub fn mc_stderr(&self) -> f64 {
        let p = self.coverage();
        if self.valid == 0 {
            f64::NAN
        } else {
            (p * (1.0 - p) / self.valid as f64).sqrt()
        }
    }
}

/// Aggregated rejection rate of a test.
#[derive(Debug, Clone, Default)]
pub struct TestRate {
    pub rejections: usize,
    pub valid: usize,
    pub failures: usize,
}

impl TestRate {
    pub fn rate(&self) -> f64 {
        if self.valid == 0 {
            f64::NAN
        } else {
            self.rejections as f64 / self.valid as f64
        }
    }

    pub fn mc_stderr(&self) -> f64 {
        let p = self.rate();
        if self.valid == 0 {
            f64::NAN
        } else {
            (p * (1.0 - p) / self.valid as f64).sqrt()
        }
    }
}

/// Output of a coverage study: one row per (level, kind) plus J-test rates.
#[derive(Debug, Clone)]
pub struct CoverageTable {
    pub rows: Vec<CoverageRow>,
    pub j_asymptotic: Option<TestRate>,
    pub j_hh_bootstrap: Option<TestRate>,
    pub pseudo_true: f64,
    pub replications: usize,
    pub bootstrap_draws: usize,
    pub seed: u64,
}

impl CoverageTable {
    pub fn row(&self, level: f64, kind: CiKind) -> Option<&CoverageRow> {
        self.rows
            .iter()
            .find(|r| r.kind == kind && (r.level - level).abs() < 1e-12)
    }
}

#[derive(Clone)]
struct CiOutcome {
    covered: bool,
    halfwidth: f64,
    degenerate: bool,
}

#[derive(Clone)]
struct RepOutcome {
    /// kinds × levels
    cis: Vec<Vec<Option<CiOutcome>>>,
    j_asym: Option<bool>,
    j_boot: Option<bool>,
}

impl RepOutcome {
    fn all_failed(kinds: usize, levels: usize) -> Self {
        RepOutcome {
            cis: vec![vec![None; levels]; kinds],
            j_asym: None,
            j_boot: None,
        }
    }
}

/// Runs the coverage experiment: per replication, simulate → fit → build the
/// requested CIs → record coverage of the verified pseudo-true value and the
/// J-test decisions. Deterministic in `(config, seed)` for any thread count.
pub fn coverage_study(config: &CoverageConfig, cache: &mut PseudoTrueCache) -> Result<CoverageTable> {
    config.validate()?;
    let psi = cache.ensure_verified(&config.study, config.seed)?;
    let threads = if config.threads == 0 {
        default_threads()
    } else {
        config.threads
    };
    let model = config.study.moment_model();
    let kinds = &config.kinds;
    let levels = &config.levels;
    let want_mr_var = kinds.iter().any(|k| matches!(k, CiKind::Mr | CiKind::MrStar));
    let want_c_var = kinds
        .iter()
        .any(|k| matches!(k, CiKind::C | CiKind::HhStar | CiKind::BnStar));
    let request = BootstrapRequest {
        mr: kinds.contains(&CiKind::MrStar),
        hh: kinds.contains(&CiKind::HhStar),
        bn: kinds.contains(&CiKind::BnStar),
        // Example 1's pipeline is itself the J pipeline; piggyback J* on it.
        j_stat: config.j_bootstrap && matches!(config.study, StudyModel::Example1(_)),
    };
    let any_bootstrap = request.mr || request.hh || request.bn || request.j_stat;

    let outcomes: Vec<RepOutcome> = run_indexed(threads, config.replications, |r| {
        run_replication(config, &model, psi, r as u32, kinds, levels, want_mr_var, want_c_var, request)
            .unwrap_or_else(|_| RepOutcome::all_failed(kinds.len(), levels.len()))
    });
    let _ = any_bootstrap;

    let mut rows = Vec::new();
    for (ki, kind) in kinds.iter().enumerate() {
        for (li, level) in levels.iter().enumerate() {
            let mut row = CoverageRow {
                level: *level,
                kind: *kind,
                covered: 0,
                valid: 0,
                failures: 0,
                degenerate: 0,
                halfwidth_sum: 0.0,
            };
            for out in &outcomes {
                match &out.cis[ki][li] {
                    Some(ci) => {
                        row.valid += 1;
                        if ci.covered {
                            row.covered += 1;
                        }
                        if ci.degenerate {
                            row.degenerate += 1;
                        }
                        row.halfwidth_sum += ci.halfwidth;
                    }
                    None => row.failures += 1,
                }
            }
            rows.push(row);
        }
    }
    let fold_test = |get: fn(&RepOutcome) -> Option<bool>| {
        let mut rate = TestRate::default();
        for out in &outcomes {
            match get(out) {
                Some(reject) => {
                    rate.valid += 1;
                    if reject {
                        rate.rejections += 1;
                    }
                }
                None => rate.failures += 1,
            }
        }
        rate
    };
    Ok(CoverageTable {
        rows,
        j_asymptotic: config.j_tests.then(|| fold_test(|o| o.j_asym)),
        j_hh_bootstrap: config.j_bootstrap.then(|| fold_test(|o| o.j_boot)),
        pseudo_true: psi,
        replications: config.replications,
        bootstrap_draws: config.bootstrap_draws,
        seed: config.seed,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_replication(
    config: &CoverageConfig,
    model: &MomentModel,
    psi: f64,
    replication: u32,
    kinds: &[CiKind],
    levels: &[f64],
    want_mr_var: bool,
    want_c_var: bool,
    request: BootstrapRequest,
) -> Result<RepOutcome> {
    let data = config.study.simulate(config.seed, replication)?;
    let mut outcome = RepOutcome::all_failed(kinds.len(), levels.len());
    let fit = match config.study.fit(model, &data) {
        Ok(f) => f,
        Err(_) => return Ok(outcome),
    };
    let var_mr = if want_mr_var {
        sigma_mr(model, &data, &fit).ok()
    } else {
        None
    };
    let var_c = if want_c_var {
        sigma_conventional(model, &data, &fit).ok()
    } else {
        None
    };
    let plan = ResamplePlan::new(config.bootstrap_draws, config.seed, replication);
    let boot = if request.mr || request.hh || request.bn || request.j_stat {
        run_bootstrap(model, &data, &fit, &plan, 0, request, 1).ok()
    } else {
        None
    };

    for (ki, kind) in kinds.iter().enumerate() {
        for (li, level) in levels.iter().enumerate() {
            let alpha = 1.0 - level;
            let ci: Option<ConfidenceInterval> = match kind {
                CiKind::C => var_c
                    .as_ref()
                    .and_then(|v| ci_asymptotic(&fit, v, 0, alpha).ok()),
                CiKind::Mr => var_mr
                    .as_ref()
                    .and_then(|v| ci_asymptotic(&fit, v, 0, alpha).ok()),
                CiKind::MrStar => match (&var_mr, boot.as_ref().and_then(|b| b.mr.as_ref())) {
                    (Some(v), Some(d)) => ci_bootstrap(&fit, v, d, 0, alpha).ok(),
                    _ => None,
                },
                CiKind::HhStar => match (&var_c, boot.as_ref().and_then(|b| b.hh.as_ref())) {
                    (Some(v), Some(d)) => ci_bootstrap(&fit, v, d, 0, alpha).ok(),
                    _ => None,
                },
                CiKind::BnStar => match (&var_c, boot.as_ref().and_then(|b| b.bn.as_ref())) {
                    (Some(v), Some(d)) => ci_bootstrap(&fit, v, d, 0, alpha).ok(),
                    _ => None,
                },
            };
            outcome.cis[ki][li] = ci.map(|ci| CiOutcome {
                covered: ci.covers(psi),
                halfwidth: ci.halfwidth,
                degenerate: ci.degenerate,
            });
        }
    }

    if config.j_tests || config.j_bootstrap {
        // J tests come from the two-step pipeline; Example 2's anchor is the
        // 2SLS fit itself.
        let j_fit = match config.study {
            StudyModel::Example1(_) => Some(fit.clone()),
            StudyModel::Example2(_) => {
                two_step_from(model, &data, fit.clone(), &MinimizeOptions::default()).ok()
            }
        };
        if let Some(j_fit) = j_fit {
            if config.j_tests {
                outcome.j_asym = j_test(model, &data, &j_fit, config.j_level)
                    .ok()
                    .map(|res| res.reject);
            }
            if config.j_bootstrap {
                let j_star = match config.study {
                    StudyModel::Example1(_) => boot.as_ref().and_then(|b| b.j_star.clone()),
                    StudyModel::Example2(_) => run_bootstrap(
                        model,
                        &data,
                        &j_fit,
                        &plan,
                        0,
                        BootstrapRequest {
                            j_stat: true,
                            ..Default::default()
                        },
                        1,
                    )
                    .ok()
                    .and_then(|b| b.j_star),
                };
                outcome.j_boot = j_star.and_then(|(js, _failures)| {
                    if js.is_empty() {
                        return None;
                    }
                    let statistic = data.n() as f64 * j_fit.criterion;
                    let critical = empirical_quantile_min_rule(&js, 1.0 - config.j_level);
                    Some(statistic > critical)
                });
            }
        }
    }
    Ok(outcome)
}

/// Power-study configuration. The grid must contain the pseudo-true value
/// (the default grid is `ψ ± 4·se` in 41 points).
#[derive(Debug, Clone)]
pub struct PowerConfig {
    pub study: StudyModel,
    pub replications: usize,
    pub bootstrap_draws: usize,
    /// Test level α (the paper's power curves use 0.10).
    pub alpha: f64,
    /// Null values to evaluate; empty selects the default grid.
    pub theta_grid: Vec<f64>,
    pub seed: u64,
    pub threads: usize,
}

/// Rejection frequencies over the grid for one test kind.
#[derive(Debug, Clone)]
pub struct PowerRow {
    pub theta_null: f64,
    pub kind: CiKind,
    pub rejections: usize,
    pub valid: usize,
    pub failures: usize,
}

impl PowerRow {
    pub fn rate(&self) -> f64 {
        if self.valid == 0 {
            f64::NAN
        } else {
            self.rejections as f64 / self.valid as f64
        }
    }
}

/// Output of a power study: size-corrected critical values and rejection
/// frequencies per (grid point, test kind).
#[derive(Debug, Clone)]
pub struct PowerCurve {
    pub rows: Vec<PowerRow>,
    /// The size-corrected critical value per test kind.
    pub criticals: Vec<(CiKind, f64)>,
    pub grid: Vec<f64>,
    pub pseudo_true: f64,
    pub alpha: f64,
    pub replications: usize,
    pub seed: u64,
}

struct PowerRep {
    theta_hat: f64,
    se_c: Option<f64>,
    se_mr: Option<f64>,
    z_hh: Option<f64>,
    z_bn: Option<f64>,
    z_mr: Option<f64>,
}

/// Default power grid: `ψ ± 4·se_MR` in 41 points, from a pilot replication.
pub fn default_power_grid(study: &StudyModel, seed: u64) -> Result<Vec<f64>> {
    let psi = study.pseudo_true();
    let data = study.simulate(seed, PILOT_REPLICATION - 1)?;
    let model = study.moment_model();
    let fit = study.fit(&model, &data)?;
    let se = sigma_mr(&model, &data, &fit)?.std_error(0)?;
    let points = 41;
    let half = 4.0 * se;
    Ok((0..points)
        .map(|i| psi - half + 2.0 * half * i as f64 / (points - 1) as f64)
        .collect())
}

/// Two-phase power study: phase 1 runs `r` null replications and
/// size-corrects each test's decision statistic (`|T|` for asymptotic tests,
/// `|T| - z*` for bootstrap tests) at its empirical `1-α` null quantile;
/// phase 2 reuses the same replications to compute rejection frequencies
/// across the grid.
pub fn power_study(config: &PowerConfig, cache: &mut PseudoTrueCache) -> Result<PowerCurve> {
    if config.replications == 0 {
        return Err(Error::argument("power study needs r >= 1"));
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::argument("alpha must be in (0,1)"));
    }
    let psi = cache.ensure_verified(&config.study, config.seed)?;
    let grid = if config.theta_grid.is_empty() {
        default_power_grid(&config.study, config.seed)?
    } else {
        config.theta_grid.clone()
    };
    let scale = grid.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if !grid.iter().any(|t| (t - psi).abs() <= 1e-9 * scale) {
        return Err(Error::argument(
            "theta grid must contain the pseudo-true value",
        ));
    }
    let threads = if config.threads == 0 {
        default_threads()
    } else {
        config.threads
    };
    let model = config.study.moment_model();
    let request = BootstrapRequest {
        mr: true,
        hh: true,
        bn: true,
        j_stat: false,
    };

    let reps: Vec<Option<PowerRep>> = run_indexed(threads, config.replications, |r| {
        let data = config.study.simulate(config.seed, r as u32).ok()?;
        let fit = config.study.fit(&model, &data).ok()?;
        let se_c = sigma_conventional(&model, &data, &fit)
            .ok()
            .and_then(|v| v.std_error(0).ok());
        let se_mr = sigma_mr(&model, &data, &fit)
            .ok()
            .and_then(|v| v.std_error(0).ok());
        let plan = ResamplePlan::new(config.bootstrap_draws, config.seed, r as u32);
        let boot = run_bootstrap(&model, &data, &fit, &plan, 0, request, 1).ok()?;
        let quantile = |d: &Option<crate::bootstrap::TStatDistribution>| -> Option<f64> {
            let d = d.as_ref()?;
            if d.degenerate {
                // zero-length interval: reject everywhere, z* = 0
                Some(0.0)
            } else {
                bootstrap_quantile(d, config.alpha).ok()
            }
        };
        Some(PowerRep {
            theta_hat: fit.theta[0],
            se_c,
            se_mr,
            z_hh: quantile(&boot.hh),
            z_bn: quantile(&boot.bn),
            z_mr: quantile(&boot.mr),
        })
    });

    // decision statistic of each test at a null value, when computable
    let stat = |rep: &PowerRep, kind: CiKind, theta0: f64| -> Option<f64> {
        let t_c = rep.se_c.map(|se| (rep.theta_hat - theta0).abs() / se);
        let t_mr = rep.se_mr.map(|se| (rep.theta_hat - theta0).abs() / se);
        match kind {
            CiKind::C => t_c,
            CiKind::Mr => t_mr,
            CiKind::HhStar => Some(t_c? - rep.z_hh?),
            CiKind::BnStar => Some(t_c? - rep.z_bn?),
            CiKind::MrStar => Some(t_mr? - rep.z_mr?),
        }
    };

    let mut criticals = Vec::new();
    for kind in CiKind::ALL {
        let draws: Vec<f64> = reps
            .iter()
            .flatten()
            .filter_map(|rep| stat(rep, kind, psi))
            .collect();
        if draws.is_empty() {
            return Err(Error::Argument(format!(
                "no usable null replications for {kind}"
            )));
        }
        let cv = crate::inference::size_corrected_critical(&draws, config.alpha)?;
        criticals.push((kind, cv));
    }

    let mut rows = Vec::new();
    for &theta0 in &grid {
        for &(kind, cv) in &criticals {
            let mut row = PowerRow {
                theta_null: theta0,
                kind,
                rejections: 0,
                valid: 0,
                failures: 0,
            };
            for rep in &reps {
                match rep.as_ref().and_then(|rep| stat(rep, kind, theta0)) {
                    Some(s) => {
                        row.valid += 1;
                        if s > cv {
                            row.rejections += 1;
                        }
                    }
                    None => row.failures += 1,
                }
            }
            rows.push(row);
        }
    }
    Ok(PowerCurve {
        rows,
        criticals,
        grid,
        pseudo_true: psi,
        alpha: config.alpha,
        replications: config.replications,
        seed: config.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example1_lognormal_moments() {
        let spec = Example1Spec {
            n: 400_000,
            rho: 0.5,
            shape: ZShape::Lognormal { sigma: 1.5 },
            delta: 0.6,
        };
        let data = simulate_example1(&spec, 42, 0).unwrap();
        let n = data.n() as f64;
        let (mut sy, mut sz, mut szz) = (0.0, 0.0, 0.0);
        for i in 0..data.n() {
            let r = data.row(i);
            sy += r[0];
            sz += r[1];
            szz += r[1] * r[1];
        }
        let mean_y = sy / n;
        let mean_z = sz / n;
        let var_z = szz / n - mean_z * mean_z;
        assert!((mean_y - 0.6).abs() < 0.01, "mean Y {mean_y}");
        assert!(mean_z.abs() < 0.08, "mean Z {mean_z}");
        // (e^{2.25} - 1)e^{2.25} ≈ 80.75, heavy-tailed so allow 10%
        let target = ((2.25f64).exp() - 1.0) * (2.25f64).exp();
        assert!((var_z - target).abs() < 0.1 * target, "var Z {var_z} vs {target}");
    }

    #[test]
    fn example2_instrument_moments() {
        let spec = Example2Spec {
            n: 400_000,
            delta: 0.5,
            gamma1: 0.25,
            gamma2: None,
        };
        let data = simulate_example2(&spec, 7, 0).unwrap();
        let n = data.n() as f64;
        let (mut s_z1e, mut s_z2e, mut s_e) = (0.0, 0.0, 0.0);
        for i in 0..data.n() {
            let r = data.row(i);
            let eps = r[0]; // y = ε when β₀ = 0
            s_z1e += r[2] * eps;
            s_z2e += r[3] * eps;
            s_e += eps;
        }
        assert!((s_z1e / n).abs() < 0.02, "E z1 ε = {}", s_z1e / n);
        assert!((s_z2e / n - 0.5).abs() < 0.03, "E z2 ε = {}", s_z2e / n);
        assert!((s_e / n).abs() < 0.02, "E ε = {}", s_e / n);
    }

    #[test]
    fn pseudo_true_closed_forms() {
        // δ = 0 → 0 for any shape
        for shape in [ZShape::Normal, ZShape::Lognormal { sigma: 1.5 }] {
            let spec = Example1Spec { n: 10, rho: 0.5, shape, delta: 0.0 };
            assert_eq!(pseudo_true_example1(&spec), 0.0);
        }
        // normal design: -ρδ
        let spec = Example1Spec {
            n: 10,
            rho: 0.5,
            shape: ZShape::Normal,
            delta: -0.3,
        };
        assert!((pseudo_true_example1(&spec) - 0.15).abs() < 1e-15);
        // lognormal: -ρσe^{σ²/2}δ ≈ -1.3861 at (0.5, 1.5, 0.6)
        let spec = Example1Spec {
            n: 10,
            rho: 0.5,
            shape: ZShape::Lognormal { sigma: 1.5 },
            delta: 0.6,
        };
        let psi = pseudo_true_example1(&spec);
        assert!((psi - (-0.45 * (1.125f64).exp())).abs() < 1e-12);
        assert!((psi + 1.3861).abs() < 1e-3);
    }

    #[test]
    fn gamma2_and_rho_eps_u_values() {
        // ρ_εu = e^{1.99} - e ≈ 4.5973
        assert!((rho_eps_u() - 4.5973).abs() < 1e-3, "{}", rho_eps_u());
        assert_eq!(gamma2_strong_invalid(0.0), 0.0);
        // δ = 0.5: γ₂ ≈ -0.4672
        let g2 = gamma2_strong_invalid(0.5);
        assert!((g2 + 0.467).abs() < 1e-2, "{g2}");
        // strong-invalid γ₂ keeps the pseudo-true value at 0 for every δ
        for delta in [0.0, 0.25, 0.5, 0.9] {
            let spec = Example2Spec { n: 10, delta, gamma1: 0.25, gamma2: None };
            assert_eq!(pseudo_true_example2(&spec), 0.0);
        }
    }

    #[test]
    fn rho_eps_u_matches_sample_moment() {
        // oracle for the lognormal cross-moment: large-n mean of εu
        let spec = Example2Spec {
            n: 400_000,
            delta: 0.0,
            gamma1: 0.25,
            gamma2: None,
        };
        let data = simulate_example2(&spec, 11, 0).unwrap();
        let mut s = 0.0;
        for i in 0..data.n() {
            let r = data.row(i);
            let eps = r[0];
            let u = r[1] - 0.25 * r[2]; // x = γ₁z1 + u when γ₂ = 0
            s += eps * u;
        }
        let m = s / data.n() as f64;
        assert!((m - rho_eps_u()).abs() < 0.15, "{m} vs {}", rho_eps_u());
    }

    #[test]
    fn simulation_is_deterministic_per_replication() {
        let spec = Example1Spec {
            n: 50,
            rho: 0.5,
            shape: ZShape::Lognormal { sigma: 1.5 },
            delta: 0.0,
        };
        let a = simulate_example1(&spec, 3, 7).unwrap();
        let b = simulate_example1(&spec, 3, 7).unwrap();
        let c = simulate_example1(&spec, 3, 8).unwrap();
        assert_eq!(a.row(13), b.row(13));
        assert_ne!(a.row(13), c.row(13));
    }

    #[test]
    fn coverage_study_small_smoke_and_determinism() {
        let study = StudyModel::Example1(Example1Spec {
            n: 40,
            rho: 0.5,
            shape: ZShape::Lognormal { sigma: 1.5 },
            delta: 0.0,
        });
        let mut config = CoverageConfig::new(study, 24, 19, 99);
        config.j_bootstrap = true;
        config.threads = 1;
        // skip the oracle cost in the smoke test: pre-verify into the cache
        let mut cache = PseudoTrueCache::in_memory();
        cache.verified.insert(study.cache_key());
        let a = coverage_study(&config, &mut cache).unwrap();
        config.threads = 4;
        let b = coverage_study(&config, &mut cache).unwrap();
        assert_eq!(a.rows.len(), 2 * 5);
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.covered, rb.covered);
            assert_eq!(ra.valid, rb.valid);
            assert_eq!(ra.halfwidth_sum.to_bits(), rb.halfwidth_sum.to_bits());
        }
        let ja = a.j_asymptotic.unwrap();
        let jb = b.j_asymptotic.unwrap();
        assert_eq!(ja.rejections, jb.rejections);
        for row in &a.rows {
            let p = row.coverage();
            assert!(p.is_nan() || (0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn power_study_null_point_is_calibrated() {
        let study = StudyModel::Example1(Example1Spec {
            n: 60,
            rho: 0.5,
            shape: ZShape::Lognormal { sigma: 1.5 },
            delta: 0.0,
        });
        let mut cache = PseudoTrueCache::in_memory();
        cache.verified.insert(study.cache_key());
        let config = PowerConfig {
            study,
            replications: 120,
            bootstrap_draws: 19,
            alpha: 0.10,
            theta_grid: vec![-0.4, 0.0, 0.4],
            seed: 5,
            threads: 2,
        };
        let curve = power_study(&config, &mut cache).unwrap();
        // at the pseudo-true value the rejection rate is α by construction
        let tol = 2.0 * (0.1f64 * 0.9 / 120.0).sqrt() + 1e-9;
        for row in curve.rows.iter().filter(|r| r.theta_null == 0.0) {
            let rate = row.rate();
            assert!(
                (rate - 0.10).abs() <= tol + 0.05,
                "{:?} null rejection {rate}",
                row.kind
            );
        }
    }

    #[test]
    fn pseudo_true_cache_roundtrip() {
        let dir = std::env::temp_dir().join(format!("mrgmm-cache-{}", std::process::id()));
        let _ = std::fs::create_dir_all(&dir);
        let path = dir.join("pseudo_true_verified.txt");
        let _ = std::fs::remove_file(&path);
        let study = StudyModel::Example1(Example1Spec {
            n: 40,
            rho: 0.5,
            shape: ZShape::Normal,
            delta: 0.3,
        });
        {
            let mut cache = PseudoTrueCache::at_path(path.clone());
            cache.verified.insert(study.cache_key());
            // write-through happens on ensure_verified; simulate by writing;
            // here just persist manually through the public path
            std::fs::write(&path, format!("{}\n", study.cache_key())).unwrap();
        }
        let cache = PseudoTrueCache::at_path(path.clone());
        assert!(cache.verified.contains(&study.cache_key()));
        let _ = std::fs::remove_file(&path);
    }
}
