//! Nonparametric iid resampling and the three bootstrap t distributions.
//!
//! All three schemes re-estimate the same pipeline (one-step or two-step) on
//! each resample and studentize the deviation `θ̂*_k - θ̂_k`; they differ in
//! what they resample and which variance goes in the denominator:
//!
//! - **MR** — resamples the empirical distribution, keeps the *original*
//!   moment function, and studentizes both sides with the
//!   misspecification-robust variance. No recentering anywhere.
//! - **HH** — recenters the bootstrap moment function to
//!   `g*(x, θ) = g(x, θ) - g_n(θ̂)` so the bootstrap moment condition holds,
//!   and studentizes with the conventional variance computed from the
//!   recentered moments.
//! - **BN** — resamples with empirical-likelihood probabilities `p̂_i`
//!   (which make `Σ p̂_i g_i(θ̂) = 0`), keeps the original moment function,
//!   and studentizes with the conventional variance.
//!
//! Draw `b` of replication `r` reads random stream `(seed, r, b)`, so the
//! resulting distributions do not depend on thread schedule.

use nalgebra::DVector;

use crate::estimate::{one_step, two_step_from, GmmFit, MinimizeOptions, Step};
use crate::exec::run_indexed;
use crate::model::{eval_g_mean, Dataset, MomentModel};
use crate::rng::{stream_id, CounterRng, StreamDomain};
use crate::variance::{sigma_conventional, sigma_mr};
use crate::{Error, Result};

/// Fraction of failed draws beyond which a bootstrap distribution is
/// declared degenerate.
pub const FAILURE_BUDGET: f64 = 0.2;

/// Bootstrap replication plan: `b_total` draws on the replication-scoped
/// stream `(seed, replication)`.
#[derive(Debug, Clone, Copy)]
pub struct ResamplePlan {
    /// Number of bootstrap replications (B).
    pub b_total: usize,
    /// 64-bit seed shared by the whole experiment.
    pub seed: u64,
    /// Replication index scoping the streams (0 for standalone use).
    pub replication: u32,
}

impl ResamplePlan {
    pub fn new(b_total: usize, seed: u64, replication: u32) -> Self {
        ResamplePlan {
            b_total,
            seed,
            replication,
        }
    }
}

/// Resampling scheme of a bootstrap t distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Mr,
    Hh,
    Bn,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scheme::Mr => write!(f, "MR"),
            Scheme::Hh => write!(f, "HH"),
            Scheme::Bn => write!(f, "BN"),
        }
    }
}

/// Sorted absolute bootstrap t draws for one coordinate.
#[derive(Debug, Clone)]
pub struct TStatDistribution {
    /// Nondecreasing `|T*|` values of the successful draws.
    pub abs_t: Vec<f64>,
    /// Draws discarded because estimation or the variance failed.
    pub failures: usize,
    pub scheme: Scheme,
    pub coordinate: usize,
    /// Set when the distribution could not be formed at all (BN weights not
    /// converged); callers produce zero-length intervals.
    pub degenerate: bool,
}

impl TStatDistribution {
    pub fn total_draws(&self) -> usize {
        self.abs_t.len() + self.failures
    }
}

/// Empirical-likelihood weights `p̂_i` at an estimate, with the dual
/// multiplier.
#[derive(Debug, Clone)]
pub struct ElWeights {
    pub p: Vec<f64>,
    pub lambda: DVector<f64>,
    pub converged: bool,
}

/// Uniform-with-replacement resample indices for draw `b` of the plan.
pub fn resample_indices(n: usize, plan: &ResamplePlan, b: usize) -> Vec<usize> {
    let mut out = vec![0usize; n];
    resample_indices_into(n, plan, b, &mut out);
    out
}

fn resample_indices_into(n: usize, plan: &ResamplePlan, b: usize, out: &mut [usize]) {
    let mut rng = CounterRng::new(
        plan.seed,
        StreamDomain::Resample,
        stream_id(plan.replication, b as u32),
    );
    for slot in out.iter_mut() {
        *slot = rng.next_index(n);
    }
}

/// Multinomial resample indices with probabilities `p` (the BN scheme),
/// via inverse-CDF on the BN-domain stream.
pub fn weighted_resample_indices(p: &[f64], plan: &ResamplePlan, b: usize) -> Vec<usize> {
    let n = p.len();
    let mut cdf = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &pi in p {
        acc += pi;
        cdf.push(acc);
    }
    let mut rng = CounterRng::new(
        plan.seed,
        StreamDomain::ResampleBn,
        stream_id(plan.replication, b as u32),
    );
    let mut out = vec![0usize; n];
    for slot in out.iter_mut() {
        let u = rng.next_f64() * acc;
        *slot = match cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(i) => i,
            Err(i) => i.min(n - 1),
        };
    }
    out
}

/// Solves the EL dual at `θ̂`: `λ̂ = argmin_λ -Σ log(1 + λ'g_i(θ̂))` by
/// damped Newton, and returns `p_i = 1/(n(1 + λ̂'g_i))`.
///
/// Non-convergence (zero outside the convex hull of the moments, a stalled
/// line search, or the iteration cap) is a reported state, not an error: the
/// paper's experiments treat it as a realizable outcome.
pub fn el_probabilities(model: &MomentModel, data: &Dataset, theta: &[f64]) -> Result<ElWeights> {
    let n = data.n();
    let lg = model.lg();
    // materialize g_i(θ̂) once
    let mut g = vec![0.0; n * lg];
    let mut buf = vec![0.0; lg];
    for i in 0..n {
        model.eval_g(data.row(i), theta, &mut buf);
        if buf.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation { what: "g", index: i });
        }
        g[i * lg..(i + 1) * lg].copy_from_slice(&buf);
    }

    let guard = 1e-10; // domain floor for 1 + λ'g_i
    let mut lambda = DVector::zeros(lg);
    let mut denoms = vec![1.0f64; n];
    let objective = |denoms: &[f64]| -> f64 { -denoms.iter().map(|d| d.ln()).sum::<f64>() };
    let mut value = objective(&denoms);
    let mut converged = false;

    for _ in 0..100 {
        // gradient -Σ g_i/(1+λ'g_i) and Hessian Σ g_i g_i'/(1+λ'g_i)²
        let mut grad = DVector::zeros(lg);
        let mut hess = nalgebra::DMatrix::zeros(lg, lg);
        for i in 0..n {
            let gi = &g[i * lg..(i + 1) * lg];
            let d = denoms[i];
            let wi = 1.0 / d;
            let wi2 = wi * wi;
            for a in 0..lg {
                grad[a] -= gi[a] * wi;
                for b2 in 0..lg {
                    hess[(a, b2)] += gi[a] * gi[b2] * wi2;
                }
            }
        }
        // mean gradient is Σ p_i g_i up to sign; tol 1e-10 keeps the
        // feasibility invariant an order tighter than its 1e-8 bound
        if grad.amax() / n as f64 <= 1e-10 {
            converged = true;
            break;
        }
        let (dir, _) = crate::linalg::ridge_solve(&hess, &(-&grad));
        // damped step with the domain guard; near the optimum the objective
        // changes fall below f64 roundoff (it has scale ~n), so accept steps
        // that do not increase it beyond roundoff slack
        let slack = 1e-12 * value.abs().max(1.0);
        let mut alpha = 1.0;
        let mut stepped = false;
        for _ in 0..60 {
            let trial = &lambda + alpha * &dir;
            let mut ok = true;
            let mut trial_denoms = Vec::with_capacity(n);
            for i in 0..n {
                let gi = &g[i * lg..(i + 1) * lg];
                let mut d = 1.0;
                for a in 0..lg {
                    d += trial[a] * gi[a];
                }
                if d <= guard {
                    ok = false;
                    break;
                }
                trial_denoms.push(d);
            }
            if ok {
                let trial_value = objective(&trial_denoms);
                if trial_value <= value + slack {
                    lambda = trial;
                    denoms = trial_denoms;
                    value = trial_value;
                    stepped = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !stepped {
            break; // stalled: report non-convergence
        }
    }

    if !converged {
        return Ok(ElWeights {
            p: Vec::new(),
            lambda,
            converged: false,
        });
    }
    let inv_n = 1.0 / n as f64;
    let p: Vec<f64> = denoms.iter().map(|d| inv_n / d).collect();
    // A hull violation can push λ to infinity with a vanishing gradient; at a
    // genuine interior optimum Σp_i = 1 holds identically, so use it as the
    // convergence certificate.
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-6 || p.iter().any(|&pi| !(pi > 0.0) || !pi.is_finite()) {
        return Ok(ElWeights {
            p: Vec::new(),
            lambda,
            converged: false,
        });
    }
    Ok(ElWeights {
        p,
        lambda,
        converged: true,
    })
}

/// Re-runs the fit's estimation pipeline on a (re)sample, warm-starting at
/// the original estimates with a full multi-start fallback.
pub(crate) fn refit_pipeline(
    model: &MomentModel,
    data: &Dataset,
    template: &GmmFit,
) -> Result<GmmFit> {
    match template.step {
        Step::OneStep => {
            match one_step(model, data, &template.recipe, &MinimizeOptions::warm(&template.theta)) {
                Err(Error::NonConvergence { .. }) => {
                    one_step(model, data, &template.recipe, &MinimizeOptions::default())
                }
                other => other,
            }
        }
        Step::TwoStep => {
            let first_template = template
                .first_step
                .as_ref()
                .ok_or_else(|| Error::contract("two-step template lacks its first step"))?;
            let first = match one_step(
                model,
                data,
                &first_template.recipe,
                &MinimizeOptions::warm(&first_template.theta),
            ) {
                Err(Error::NonConvergence { .. }) => {
                    one_step(model, data, &first_template.recipe, &MinimizeOptions::default())
                }
                other => other,
            }?;
            match two_step_from(model, data, first.clone(), &MinimizeOptions::warm(&template.theta))
            {
                Err(Error::NonConvergence { .. }) => {
                    two_step_from(model, data, first, &MinimizeOptions::default())
                }
                other => other,
            }
        }
    }
}

/// Which statistics to compute in one pass over the bootstrap draws.
#[derive(Debug, Clone, Copy, Default)]
pub struct BootstrapRequest {
    pub mr: bool,
    pub hh: bool,
    pub bn: bool,
    /// Bootstrap J statistics from the HH-recentered two-step pipeline.
    pub j_stat: bool,
}

/// Bootstrap outputs for one dataset/fit.
#[derive(Debug, Clone, Default)]
pub struct BootstrapOutput {
    pub mr: Option<TStatDistribution>,
    pub hh: Option<TStatDistribution>,
    pub bn: Option<TStatDistribution>,
    /// Sorted bootstrap J statistics plus their failure count.
    pub j_star: Option<(Vec<f64>, usize)>,
}

#[derive(Default, Clone)]
struct DrawOutcome {
    mr: Option<Option<f64>>,
    hh: Option<Option<f64>>,
    bn: Option<Option<f64>>,
    j: Option<Option<f64>>,
}

/// Runs up to all three schemes (plus bootstrap J statistics) over the same
/// plan. The MR and HH schemes share each draw's resample; BN draws its own
/// EL-weighted resample. `threads` parallelizes over draws (use 1 inside an
/// already-parallel Monte Carlo loop).
pub fn run_bootstrap(
    model: &MomentModel,
    data: &Dataset,
    fit: &GmmFit,
    plan: &ResamplePlan,
    k: usize,
    request: BootstrapRequest,
    threads: usize,
) -> Result<BootstrapOutput> {
    if plan.b_total == 0 {
        return Err(Error::argument("bootstrap needs B >= 1"));
    }
    if k >= model.ltheta() {
        return Err(Error::argument("coordinate out of range"));
    }
    if request.j_stat && fit.step != Step::TwoStep {
        return Err(Error::contract("bootstrap J statistics need a two-step fit"));
    }
    let n = data.n();
    let n_f = n as f64;
    let theta_k = fit.theta[k];

    // HH recentering anchor: the same-step estimate on the original sample.
    let hh_model = if request.hh || request.j_stat {
        let center = eval_g_mean(model, data, fit.theta.as_slice())?;
        Some(model.recentered(center.as_slice()))
    } else {
        None
    };

    // BN weights at the fit; non-convergence degenerates the BN distribution.
    let bn_weights = if request.bn {
        Some(el_probabilities(model, data, fit.theta.as_slice())?)
    } else {
        None
    };
    let bn_alive = bn_weights.as_ref().map(|w| w.converged).unwrap_or(false);

    let outcomes: Vec<DrawOutcome> = run_indexed(threads, plan.b_total, |b| {
        let mut outcome = DrawOutcome::default();
        if request.mr || request.hh || request.j_stat {
            let mut idx = vec![0usize; n];
            resample_indices_into(n, plan, b, &mut idx);
            let mut gathered = Vec::new();
            data.gather_into(&idx, &mut gathered);
            let resample = data.from_gathered(gathered);
            if request.mr {
                outcome.mr = Some(mr_draw(model, &resample, fit, k, theta_k, n_f));
            }
            if request.hh || request.j_stat {
                let hh_model = hh_model.as_ref().expect("hh model prepared");
                let (t, j) = hh_draw(hh_model, &resample, fit, k, theta_k, n_f);
                if request.hh {
                    outcome.hh = Some(t);
                }
                if request.j_stat {
                    outcome.j = Some(j);
                }
            }
        }
        if request.bn {
            if bn_alive {
                let w = bn_weights.as_ref().expect("bn weights");
                let idx = weighted_resample_indices(&w.p, plan, b);
                let mut gathered = Vec::new();
                data.gather_into(&idx, &mut gathered);
                let resample = data.from_gathered(gathered);
                outcome.bn = Some(bn_draw(model, &resample, fit, k, theta_k, n_f));
            } else {
                outcome.bn = Some(None);
            }
        }
        outcome
    });

    let collect = |get: fn(&DrawOutcome) -> Option<Option<f64>>,
                   scheme: Scheme,
                   degenerate: bool|
     -> Result<TStatDistribution> {
        let mut abs_t = Vec::with_capacity(plan.b_total);
        let mut failures = 0usize;
        for o in &outcomes {
            match get(o).expect("scheme was requested") {
                Some(t) => abs_t.push(t),
                None => failures += 1,
            }
        }
        if !degenerate && failures as f64 > FAILURE_BUDGET * plan.b_total as f64 {
            return Err(Error::BootstrapDegenerate {
                failures,
                total: plan.b_total,
            });
        }
        abs_t.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(TStatDistribution {
            abs_t,
            failures,
            scheme,
            coordinate: k,
            degenerate,
        })
    };

    let mut out = BootstrapOutput::default();
    if request.mr {
        out.mr = Some(collect(|o| o.mr, Scheme::Mr, false)?);
    }
    if request.hh {
        out.hh = Some(collect(|o| o.hh, Scheme::Hh, false)?);
    }
    if request.bn {
        out.bn = Some(collect(|o| o.bn, Scheme::Bn, !bn_alive)?);
    }
    if request.j_stat {
        let mut js = Vec::with_capacity(plan.b_total);
        let mut failures = 0usize;
        for o in &outcomes {
            match o.j.expect("j was requested") {
                Some(j) => js.push(j),
                None => failures += 1,
            }
        }
        if failures as f64 > FAILURE_BUDGET * plan.b_total as f64 {
            return Err(Error::BootstrapDegenerate {
                failures,
                total: plan.b_total,
            });
        }
        js.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        out.j_star = Some((js, failures));
    }
    Ok(out)
}

fn finite_positive(se: f64) -> bool {
    se.is_finite() && se > 0.0
}

fn mr_draw(
    model: &MomentModel,
    resample: &Dataset,
    fit: &GmmFit,
    k: usize,
    theta_k: f64,
    n_f: f64,
) -> Option<f64> {
    let refit = refit_pipeline(model, resample, fit).ok()?;
    let var = sigma_mr(model, resample, &refit).ok()?;
    let se = (var.sigma[(k, k)] / n_f).sqrt();
    if !finite_positive(se) {
        return None;
    }
    let t = (refit.theta[k] - theta_k).abs() / se;
    t.is_finite().then_some(t)
}

fn hh_draw(
    hh_model: &MomentModel,
    resample: &Dataset,
    fit: &GmmFit,
    k: usize,
    theta_k: f64,
    n_f: f64,
) -> (Option<f64>, Option<f64>) {
    let refit = match refit_pipeline(hh_model, resample, fit) {
        Ok(f) => f,
        Err(_) => return (None, None),
    };
    let j_star = Some(n_f * refit.criterion);
    let t = (|| {
        let var = sigma_conventional(hh_model, resample, &refit).ok()?;
        let se = (var.sigma[(k, k)] / n_f).sqrt();
        if !finite_positive(se) {
            return None;
        }
        let t = (refit.theta[k] - theta_k).abs() / se;
        t.is_finite().then_some(t)
    })();
    (t, j_star)
}

fn bn_draw(
    model: &MomentModel,
    resample: &Dataset,
    fit: &GmmFit,
    k: usize,
    theta_k: f64,
    n_f: f64,
) -> Option<f64> {
    let refit = refit_pipeline(model, resample, fit).ok()?;
    let var = sigma_conventional(model, resample, &refit).ok()?;
    let se = (var.sigma[(k, k)] / n_f).sqrt();
    if !finite_positive(se) {
        return None;
    }
    let t = (refit.theta[k] - theta_k).abs() / se;
    t.is_finite().then_some(t)
}

/// MR bootstrap t distribution: non-recentered resampling, robust variance
/// on both sides.
pub fn mr_bootstrap_t(
    model: &MomentModel,
    data: &Dataset,
    fit: &GmmFit,
    plan: &ResamplePlan,
    k: usize,
) -> Result<TStatDistribution> {
    let sample_var = sigma_mr(model, data, fit)?;
    if !(sample_var.sigma[(k, k)] > 0.0) {
        return Err(Error::VarianceInvalid(format!(
            "sample Σ̂_MR[{k},{k}] must be positive before bootstrapping"
        )));
    }
    let out = run_bootstrap(
        model,
        data,
        fit,
        plan,
        k,
        BootstrapRequest {
            mr: true,
            ..Default::default()
        },
        1,
    )?;
    Ok(out.mr.expect("mr requested"))
}

/// Hall-Horowitz bootstrap t distribution: recentered moments, conventional
/// variance.
pub fn hh_bootstrap_t(
    model: &MomentModel,
    data: &Dataset,
    fit: &GmmFit,
    plan: &ResamplePlan,
    k: usize,
) -> Result<TStatDistribution> {
    let out = run_bootstrap(
        model,
        data,
        fit,
        plan,
        k,
        BootstrapRequest {
            hh: true,
            ..Default::default()
        },
        1,
    )?;
    Ok(out.hh.expect("hh requested"))
}

/// Brown-Newey bootstrap t distribution: EL-weighted resampling of the
/// original moments, conventional variance. A failed EL solve yields a
/// degenerate distribution rather than an error.
pub fn bn_bootstrap_t(
    model: &MomentModel,
    data: &Dataset,
    fit: &GmmFit,
    weights: &ElWeights,
    plan: &ResamplePlan,
    k: usize,
) -> Result<TStatDistribution> {
    if !weights.converged {
        return Ok(TStatDistribution {
            abs_t: Vec::new(),
            failures: plan.b_total,
            scheme: Scheme::Bn,
            coordinate: k,
            degenerate: true,
        });
    }
    let n = data.n();
    let n_f = n as f64;
    let theta_k = fit.theta[k];
    let mut abs_t = Vec::with_capacity(plan.b_total);
    let mut failures = 0usize;
    for b in 0..plan.b_total {
        let idx = weighted_resample_indices(&weights.p, plan, b);
        let mut gathered = Vec::new();
        data.gather_into(&idx, &mut gathered);
        let resample = data.from_gathered(gathered);
        match bn_draw(model, &resample, fit, k, theta_k, n_f) {
            Some(t) => abs_t.push(t),
            None => failures += 1,
        }
    }
    if failures as f64 > FAILURE_BUDGET * plan.b_total as f64 {
        return Err(Error::BootstrapDegenerate {
            failures,
            total: plan.b_total,
        });
    }
    abs_t.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(TStatDistribution {
        abs_t,
        failures,
        scheme: Scheme::Bn,
        coordinate: k,
        degenerate: false,
    })
}

/// The bootstrap critical value: the order statistic `z` minimizing
/// `|P*(|T*| ≤ z) - (1 - α)|`, taking the smallest minimizer.
pub fn bootstrap_quantile(dist: &TStatDistribution, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::argument("alpha must be in (0,1)"));
    }
    if dist.degenerate || dist.abs_t.is_empty() {
        return Err(Error::QuantileUnavailable(format!(
            "{} distribution has no draws",
            dist.scheme
        )));
    }
    Ok(empirical_quantile_min_rule(&dist.abs_t, 1.0 - alpha))
}

/// Shared order-statistic rule: among sorted `values`, the first value whose
/// empirical CDF step `i/m` is closest to `target`.
pub fn empirical_quantile_min_rule(sorted: &[f64], target: f64) -> f64 {
    let m = sorted.len();
    debug_assert!(m > 0);
    let mut best_i = 1usize;
    let mut best_gap = (1.0 / m as f64 - target).abs();
    for i in 2..=m {
        let gap = (i as f64 / m as f64 - target).abs();
        if gap < best_gap {
            best_gap = gap;
            best_i = i;
        }
    }
    sorted[best_i - 1]
}
