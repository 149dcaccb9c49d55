//! GMM criterion, weight-matrix recipes, and the one-step / two-step
//! estimators.
//!
//! The criterion is `J_n(θ, W) = g_n(θ)' W g_n(θ)`. The one-step estimator
//! minimizes it with a nonrandom weight (identity, a fixed matrix, or an
//! instrument-style per-observation outer-product weight); the two-step
//! estimator re-minimizes with the inverse *centered* second-moment matrix of
//! the moments at the first-step estimate:
//!
//! `W_n(θ) = ( n⁻¹ Σ (g_i(θ) - g_n(θ))(g_i(θ) - g_n(θ))' )⁻¹`.
//!
//! Minimization is Newton with the analytic gradient `∇J = 2 G_n' W g_n` and
//! Hessian `2 H̃_n(θ, W) = 2{ (g_n'W ⊗ I) G2_n + G_n' W G_n }`, ridge
//! regularized when the curvature is not positive definite, with backtracking
//! line search and a deterministic multi-start grid.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::kahan::KahanVec;
use crate::linalg;
use crate::model::{check_model_data, eval_g_mean, eval_moment_means, Dataset, MomentModel, MomentStats};
use crate::{Error, Result};

/// Per-observation feature map for outer-product weights
/// `W = (n⁻¹ Σ z_i z_i')⁻¹`, e.g. the instrument second-moment weight.
#[derive(Clone)]
pub struct FeatureExtractor {
    dim: usize,
    f: Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
}

impl FeatureExtractor {
    pub fn new(dim: usize, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        FeatureExtractor { dim, f: Arc::new(f) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn eval(&self, row: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        (self.f)(row, out)
    }
}

impl std::fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeatureExtractor").field("dim", &self.dim).finish()
    }
}

/// How a weight matrix is built. Every realized recipe can report the
/// per-observation influence terms the robust variance needs.
#[derive(Debug, Clone)]
pub enum WeightRecipe {
    /// `W = I`.
    Identity,
    /// A user-supplied symmetric positive-definite matrix.
    Fixed(DMatrix<f64>),
    /// Inverse centered second-moment matrix of the moments at a first-step
    /// anchor estimate (the two-step weight).
    CenteredMomentCov,
    /// `W = (n⁻¹ Σ z_i z_i')⁻¹` for a per-observation feature `z_i`.
    PerObsOuter(FeatureExtractor),
}

impl WeightRecipe {
    /// A random weight has per-observation influence on the estimator's
    /// sampling distribution; a nonrandom one does not.
    pub fn is_random(&self) -> bool {
        matches!(self, WeightRecipe::CenteredMomentCov | WeightRecipe::PerObsOuter(_))
    }
}

/// Which estimator produced a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    OneStep,
    TwoStep,
}

/// A converged GMM estimate together with the weight that produced it.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub theta: DVector<f64>,
    pub step: Step,
    pub recipe: WeightRecipe,
    /// Realized weight matrix.
    pub weight: DMatrix<f64>,
    /// For random weights, the matrix whose inverse is `weight`
    /// (`n⁻¹Σ(g_i-g_n)(g_i-g_n)'` or `n⁻¹Σ z_i z_i'`).
    pub weight_base: Option<DMatrix<f64>>,
    pub criterion: f64,
    pub converged: bool,
    /// `‖∇J_n(θ̂)‖_∞` at the returned point.
    pub grad_norm: f64,
    /// Max distance between converged multi-start solutions, as a
    /// uniqueness diagnostic (`None` for a single start).
    pub multistart_spread: Option<f64>,
    /// Present on two-step fits: the first-step anchor.
    pub first_step: Option<Box<GmmFit>>,
}

/// Optimizer settings.
#[derive(Debug, Clone)]
pub struct MinimizeOptions {
    /// Explicit start points; when empty, `default_starts` grid points over
    /// the model domain are used.
    pub starts: Vec<Vec<f64>>,
    pub default_starts: usize,
    /// Tolerance on `‖∇J_n‖_∞`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            starts: Vec::new(),
            default_starts: 5,
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

impl MinimizeOptions {
    /// Warm-start variant used by the bootstrap: try `theta` first, fall back
    /// to the default grid if it stalls.
    pub fn warm(theta: &DVector<f64>) -> Self {
        MinimizeOptions {
            starts: vec![theta.iter().copied().collect()],
            ..Default::default()
        }
    }
}

/// `J_n(θ, W) = g_n(θ)' W g_n(θ)`.
pub fn criterion(
    model: &MomentModel,
    data: &Dataset,
    theta: &[f64],
    w: &DMatrix<f64>,
) -> Result<f64> {
    validate_weight_shape(model, w)?;
    let g = eval_g_mean(model, data, theta)?;
    Ok(quadratic_form(&g, w))
}

fn quadratic_form(g: &DVector<f64>, w: &DMatrix<f64>) -> f64 {
    (w * g).dot(g)
}

fn validate_weight_shape(model: &MomentModel, w: &DMatrix<f64>) -> Result<()> {
    if w.nrows() != model.lg() || w.ncols() != model.lg() {
        return Err(Error::argument(format!(
            "weight must be {0}x{0}",
            model.lg()
        )));
    }
    if linalg::asymmetry(w) > 1e-12 {
        return Err(Error::argument("weight matrix is not symmetric"));
    }
    Ok(())
}

/// The two-step weight: inverse centered second-moment matrix of
/// `{g(X_i, θ)}`. Returns `(W, base)` where `base` is the centered
/// second-moment matrix that was inverted.
pub fn centered_weight(
    model: &MomentModel,
    data: &Dataset,
    theta: &[f64],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_model_data(model, data)?;
    let lg = model.lg();
    let n = data.n();
    let g_n = eval_g_mean(model, data, theta)?;
    let mut acc = KahanVec::zeros(lg * lg);
    let mut buf = vec![0.0; lg];
    let mut outer = vec![0.0; lg * lg];
    for i in 0..n {
        model.eval_g(data.row(i), theta, &mut buf);
        for a in 0..lg {
            let da = buf[a] - g_n[a];
            for b in 0..lg {
                outer[a + lg * b] = da * (buf[b] - g_n[b]);
            }
        }
        acc.add_slice(&outer);
    }
    let base = DMatrix::from_vec(lg, lg, acc.into_mean(n));
    let (w, _cond) = linalg::sym_inverse(&base, "centered weight").map_err(|e| match e {
        Error::Singular { cond, .. } => Error::SingularWeight {
            context: "centered moment covariance",
            cond,
        },
        other => other,
    })?;
    Ok((w, base))
}

/// Realizes a one-step recipe into `(W, base)`; `base` is present for random
/// recipes.
pub fn realize_weight(
    model: &MomentModel,
    data: &Dataset,
    recipe: &WeightRecipe,
) -> Result<(DMatrix<f64>, Option<DMatrix<f64>>)> {
    match recipe {
        WeightRecipe::Identity => Ok((DMatrix::identity(model.lg(), model.lg()), None)),
        WeightRecipe::Fixed(w) => {
            validate_weight_shape(model, w)?;
            let mut sym = w.clone();
            linalg::symmetrize(&mut sym);
            if sym.clone().cholesky().is_none() {
                return Err(Error::argument("fixed weight matrix is not positive definite"));
            }
            Ok((sym, None))
        }
        WeightRecipe::CenteredMomentCov => Err(Error::contract(
            "centered-moment-covariance weight needs a first-step anchor; use two_step",
        )),
        WeightRecipe::PerObsOuter(extractor) => {
            if extractor.dim() != model.lg() {
                return Err(Error::argument("feature dimension must equal L_g"));
            }
            let lg = model.lg();
            let mut acc = KahanVec::zeros(lg * lg);
            let mut z = vec![0.0; lg];
            let mut outer = vec![0.0; lg * lg];
            for i in 0..data.n() {
                extractor.eval(data.row(i), &mut z);
                for a in 0..lg {
                    for b in 0..lg {
                        outer[a + lg * b] = z[a] * z[b];
                    }
                }
                acc.add_slice(&outer);
            }
            let base = DMatrix::from_vec(lg, lg, acc.into_mean(data.n()));
            let (w, _) = linalg::sym_inverse(&base, "per-observation outer weight").map_err(
                |e| match e {
                    Error::Singular { cond, .. } => Error::SingularWeight {
                        context: "per-observation outer product",
                        cond,
                    },
                    other => other,
                },
            )?;
            Ok((w, Some(base)))
        }
    }
}

/// The curvature contraction `D[p,k] = Σ_i a_i · ∂²g_i/∂θ_p∂θ_k` appearing
/// in `H̃` — the `(a' ⊗ I) G2` term written for the column-major `G2`
/// layout.
pub(crate) fn curvature_term(a: &DVector<f64>, jac2: &DMatrix<f64>, lg: usize, lt: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(lt, lt);
    for p in 0..lt {
        for k in 0..lt {
            let mut s = 0.0;
            for i in 0..lg {
                s += a[i] * jac2[(i + lg * p, k)];
            }
            d[(p, k)] = s;
        }
    }
    d
}

/// `H̃_n(θ, W) = (g_n'W ⊗ I) G2_n + G_n' W G_n`: half the Hessian of `J_n`,
/// and the bread matrix of the robust sandwich when evaluated at a fit.
pub fn h_tilde(stats: &MomentStats, w: &DMatrix<f64>) -> DMatrix<f64> {
    let lg = stats.g_n.len();
    let lt = stats.theta.len();
    let wg = w * &stats.g_n;
    let mut h = stats.jac_n.transpose() * w * &stats.jac_n;
    h += curvature_term(&wg, &stats.jac2_n, lg, lt);
    h
}

struct Candidate {
    theta: DVector<f64>,
    criterion: f64,
    grad_norm: f64,
    converged: bool,
}

/// Newton minimization of `J_n(·, W)` from one start. Always returns the best
/// point reached.
fn newton_from(
    model: &MomentModel,
    data: &Dataset,
    w: &DMatrix<f64>,
    start: &[f64],
    opts: &MinimizeOptions,
) -> Result<Candidate> {
    let lt = model.ltheta();
    let domain = model.domain().to_vec();
    let clamp = |theta: &mut DVector<f64>| {
        for j in 0..lt {
            theta[j] = theta[j].clamp(domain[j].0, domain[j].1);
        }
    };
    let mut theta = DVector::from_row_slice(start);
    clamp(&mut theta);
    let mut value = criterion_at(model, data, theta.as_slice(), w)?;

    for _ in 0..opts.max_iter {
        let stats = eval_moment_means(model, data, theta.as_slice())?;
        let grad = 2.0 * stats.jac_n.transpose() * (w * &stats.g_n);
        let grad_norm = grad.amax();
        if grad_norm <= opts.tol {
            return Ok(Candidate {
                theta,
                criterion: value,
                grad_norm,
                converged: true,
            });
        }
        let hess = 2.0 * h_tilde(&stats, w);
        let (dir, _ridge) = linalg::ridge_solve(&hess, &(-&grad));
        let slope = grad.dot(&dir);
        // ridge_solve guarantees a descent direction up to roundoff
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let mut trial = &theta + alpha * &dir;
            clamp(&mut trial);
            let trial_value = criterion_at(model, data, trial.as_slice(), w)?;
            if trial_value <= value + 1e-4 * alpha * slope || trial_value < value {
                theta = trial;
                value = trial_value;
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            break; // line-search stall
        }
    }
    // final gradient at the stopping point
    let stats = eval_moment_means(model, data, theta.as_slice())?;
    let grad = 2.0 * stats.jac_n.transpose() * (w * &stats.g_n);
    let grad_norm = grad.amax();
    Ok(Candidate {
        theta,
        criterion: value,
        grad_norm,
        converged: grad_norm <= opts.tol,
    })
}

fn criterion_at(model: &MomentModel, data: &Dataset, theta: &[f64], w: &DMatrix<f64>) -> Result<f64> {
    let g = eval_g_mean(model, data, theta)?;
    Ok(quadratic_form(&g, w))
}

fn default_start_grid(model: &MomentModel, count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|s| {
            let frac = (s + 1) as f64 / (count + 1) as f64;
            model
                .domain()
                .iter()
                .map(|(lo, hi)| lo + frac * (hi - lo))
                .collect()
        })
        .collect()
}

/// Minimizes `J_n(·, W)` over the model domain from every start, keeping the
/// best converged solution. Ties on the criterion break to the smaller
/// `‖θ̂‖`, then the lower start index.
pub fn minimize_criterion(
    model: &MomentModel,
    data: &Dataset,
    w: &DMatrix<f64>,
    opts: &MinimizeOptions,
) -> Result<GmmFit> {
    check_model_data(model, data)?;
    validate_weight_shape(model, w)?;
    let starts = if opts.starts.is_empty() {
        default_start_grid(model, opts.default_starts)
    } else {
        opts.starts.clone()
    };
    if starts.is_empty() {
        return Err(Error::argument("at least one start point is required"));
    }

    let mut best: Option<Candidate> = None;
    let mut converged: Vec<DVector<f64>> = Vec::new();
    for start in &starts {
        if start.len() != model.ltheta() {
            return Err(Error::argument("start point has wrong dimension"));
        }
        let cand = newton_from(model, data, w, start, opts)?;
        if cand.converged {
            converged.push(cand.theta.clone());
        }
        best = Some(match best {
            None => cand,
            Some(cur) => {
                let replace = if cand.converged != cur.converged {
                    cand.converged
                } else if cand.criterion != cur.criterion {
                    cand.criterion < cur.criterion
                } else {
                    cand.theta.norm() < cur.theta.norm()
                };
                if replace {
                    cand
                } else {
                    cur
                }
            }
        });
    }
    let best = best.expect("at least one start");
    if !best.converged {
        return Err(Error::NonConvergence {
            best_theta: best.theta.iter().copied().collect(),
            best_criterion: best.criterion,
        });
    }
    let spread = if converged.len() > 1 {
        Some(
            converged
                .iter()
                .map(|t| (t - &best.theta).amax())
                .fold(0.0_f64, f64::max),
        )
    } else {
        None
    };
    Ok(GmmFit {
        theta: best.theta,
        step: Step::OneStep,
        recipe: WeightRecipe::Fixed(w.clone()),
        weight: w.clone(),
        weight_base: None,
        criterion: best.criterion,
        converged: true,
        grad_norm: best.grad_norm,
        multistart_spread: spread,
        first_step: None,
    })
}

/// One-step GMM with a nonrandom or per-observation-outer weight recipe.
pub fn one_step(
    model: &MomentModel,
    data: &Dataset,
    recipe: &WeightRecipe,
    opts: &MinimizeOptions,
) -> Result<GmmFit> {
    let (w, base) = realize_weight(model, data, recipe)?;
    let mut fit = minimize_criterion(model, data, &w, opts)?;
    fit.recipe = recipe.clone();
    fit.weight_base = base;
    Ok(fit)
}

/// Two-step GMM: identity-weight first step, then the centered-moment
/// covariance weight anchored at the first step.
pub fn two_step(model: &MomentModel, data: &Dataset, opts: &MinimizeOptions) -> Result<GmmFit> {
    let first = one_step(model, data, &WeightRecipe::Identity, opts)?;
    two_step_from(model, data, first, opts)
}

/// Two-step GMM anchored at an arbitrary first-step fit.
pub fn two_step_from(
    model: &MomentModel,
    data: &Dataset,
    first: GmmFit,
    opts: &MinimizeOptions,
) -> Result<GmmFit> {
    let (w, base) = centered_weight(model, data, first.theta.as_slice()).map_err(|e| match e {
        Error::SingularWeight { cond, .. } => Error::SingularWeight {
            context: "first-step anchor",
            cond,
        },
        other => other,
    })?;
    // warm-start the second step at the anchor alongside the caller's starts
    let mut step2_opts = opts.clone();
    if step2_opts.starts.is_empty() {
        let mut starts = default_start_grid(model, opts.default_starts);
        starts.insert(0, first.theta.iter().copied().collect());
        step2_opts.starts = starts;
    }
    let mut fit = minimize_criterion(model, data, &w, &step2_opts)?;
    fit.step = Step::TwoStep;
    fit.recipe = WeightRecipe::CenteredMomentCov;
    fit.weight_base = Some(base);
    fit.first_step = Some(Box::new(first));
    Ok(fit)
}

/// The instrument outer-product recipe for the built-in linear IV model:
/// features `(z1, z2)` from observations `(y, x, z1, z2)`.
pub fn iv_instrument_recipe() -> WeightRecipe {
    WeightRecipe::PerObsOuter(FeatureExtractor::new(2, |row, out| {
        out[0] = row[2];
        out[1] = row[3];
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{combining_data_model, linear_iv_model, mean_model, Dataset};
    use crate::rng::{CounterRng, StreamDomain};

    fn identity(lg: usize) -> DMatrix<f64> {
        DMatrix::identity(lg, lg)
    }

    #[test]
    fn criterion_hand_values() {
        // g_n = (1,2)', W = I → 5
        let model = combining_data_model();
        let data = Dataset::from_rows(vec![1.0, 2.0, 0.0, 0.0, 2.0, 4.0], 2).unwrap();
        let j = criterion(&model, &data, &[0.0], &identity(2)).unwrap();
        assert!((j - 5.0).abs() < 1e-14);

        // g_n = (1,1)', W = diag(2,1) → 3
        let model1 = mean_model(2);
        let data1 = Dataset::from_rows(vec![2.0, 2.0], 2).unwrap();
        let w = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let j = criterion(&model1, &data1, &[1.0, 1.0], &w).unwrap();
        assert!((j - 3.0).abs() < 1e-14);
    }

    #[test]
    fn criterion_rejects_asymmetric_weight() {
        let model = mean_model(2);
        let data = Dataset::from_rows(vec![0.0, 0.0], 2).unwrap();
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            criterion(&model, &data, &[0.0, 0.0], &w),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn centered_weight_scalar() {
        let model = mean_model(1);
        let data = Dataset::from_column(vec![0.0, 2.0]).unwrap();
        let (w, base) = centered_weight(&model, &data, &[0.0]).unwrap();
        assert!((base[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((w[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn centered_weight_zero_variance_is_singular() {
        let model = mean_model(1);
        let data = Dataset::from_column(vec![3.0, 3.0, 3.0]).unwrap();
        assert!(matches!(
            centered_weight(&model, &data, &[0.0]),
            Err(Error::SingularWeight { .. })
        ));
    }

    #[test]
    fn centered_weight_collinear_rows_is_singular() {
        // Example-1 triple: centered g values are rank 1.
        let model = combining_data_model();
        let data = Dataset::from_rows(vec![1.0, 2.0, 0.0, 0.0, 2.0, 4.0], 2).unwrap();
        assert!(matches!(
            centered_weight(&model, &data, &[0.0]),
            Err(Error::SingularWeight { .. })
        ));
    }

    #[test]
    fn minimize_mean_model() {
        let model = mean_model(1);
        let data = Dataset::from_column(vec![1.0, 2.0, 3.0]).unwrap();
        let fit = minimize_criterion(&model, &data, &identity(1), &MinimizeOptions::default())
            .unwrap();
        assert!((fit.theta[0] - 2.0).abs() < 1e-12);
        assert!(fit.criterion < 1e-20);
        assert!(fit.converged);
    }

    #[test]
    fn one_step_combining_data_is_zbar() {
        let model = combining_data_model();
        let data = Dataset::from_rows(
            vec![0.4, 1.0, -0.2, 3.0, 0.9, -1.0, 0.1, 2.0],
            2,
        )
        .unwrap();
        let fit = one_step(&model, &data, &WeightRecipe::Identity, &MinimizeOptions::default())
            .unwrap();
        let zbar = (1.0 + 3.0 - 1.0 + 2.0) / 4.0;
        assert!((fit.theta[0] - zbar).abs() < 1e-10);
    }

    #[test]
    fn two_step_matches_closed_form() {
        // θ̂₂ = Z̄ - (Cov(Y,Z)/Var(Y))·Ȳ for the combining-data model.
        let model = combining_data_model();
        let mut rng = CounterRng::new(11, StreamDomain::Misc, 0);
        for rep in 0..20 {
            let n = 60;
            let mut rows = Vec::with_capacity(2 * n);
            for _ in 0..n {
                let (a, b) = rng.next_normal_pair();
                rows.push(0.3 + a);
                rows.push(0.5 * a + 0.8 * b);
            }
            let data = Dataset::from_rows(rows, 2).unwrap();
            let fit = two_step(&model, &data, &MinimizeOptions::default()).unwrap();

            let n_f = n as f64;
            let ybar: f64 = (0..n).map(|i| data.row(i)[0]).sum::<f64>() / n_f;
            let zbar: f64 = (0..n).map(|i| data.row(i)[1]).sum::<f64>() / n_f;
            let var_y: f64 = (0..n).map(|i| (data.row(i)[0] - ybar).powi(2)).sum::<f64>() / n_f;
            let cov_yz: f64 = (0..n)
                .map(|i| (data.row(i)[0] - ybar) * (data.row(i)[1] - zbar))
                .sum::<f64>()
                / n_f;
            let closed = zbar - cov_yz / var_y * ybar;
            assert!(
                (fit.theta[0] - closed).abs() <= 1e-8,
                "rep {rep}: {} vs {closed}",
                fit.theta[0]
            );
            assert!(fit.first_step.is_some());
        }
    }

    #[test]
    fn one_step_iv_matches_2sls() {
        let model = linear_iv_model();
        let mut rng = CounterRng::new(5, StreamDomain::Misc, 1);
        for _ in 0..20 {
            let n = 80;
            let mut rows = Vec::with_capacity(4 * n);
            for _ in 0..n {
                let (z1, z2) = rng.next_normal_pair();
                let (e, u) = rng.next_normal_pair();
                let x = 0.7 * z1 - 0.4 * z2 + 0.5 * e + u;
                let y = 0.25 * x + e;
                rows.extend_from_slice(&[y, x, z1, z2]);
            }
            let data = Dataset::from_rows(rows, 4).unwrap();
            let fit = one_step(&model, &data, &iv_instrument_recipe(), &MinimizeOptions::default())
                .unwrap();

            // 2SLS closed form: β = (x'Z (Z'Z)⁻¹ Z'x)⁻¹ x'Z (Z'Z)⁻¹ Z'y
            let mut zx = DVector::zeros(2);
            let mut zy = DVector::zeros(2);
            let mut zz = DMatrix::zeros(2, 2);
            for i in 0..n {
                let r = data.row(i);
                let z = DVector::from_row_slice(&[r[2], r[3]]);
                zx += &z * r[1];
                zy += &z * r[0];
                zz += &z * z.transpose();
            }
            let zz_inv = zz.try_inverse().unwrap();
            let denom = (zx.transpose() * &zz_inv * &zx)[(0, 0)];
            let numer = (zx.transpose() * &zz_inv * &zy)[(0, 0)];
            let beta = numer / denom;
            assert!(
                (fit.theta[0] - beta).abs() <= 1e-8,
                "{} vs {beta}",
                fit.theta[0]
            );
        }
    }

    #[test]
    fn two_step_criterion_beats_one_step_under_same_weight() {
        let model = combining_data_model();
        let mut rng = CounterRng::new(3, StreamDomain::Misc, 2);
        let n = 50;
        let mut rows = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let (a, b) = rng.next_normal_pair();
            rows.push(0.6 + a);
            rows.push(0.5 * a + b);
        }
        let data = Dataset::from_rows(rows, 2).unwrap();
        let fit2 = two_step(&model, &data, &MinimizeOptions::default()).unwrap();
        let theta1 = fit2.first_step.as_ref().unwrap().theta.clone();
        let j_at_first =
            criterion(&model, &data, theta1.as_slice(), &fit2.weight).unwrap();
        assert!(fit2.criterion <= j_at_first + 1e-14);
        assert!(fit2.criterion >= 0.0);
    }

    #[test]
    fn one_step_rejects_centered_recipe() {
        let model = mean_model(1);
        let data = Dataset::from_column(vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            one_step(&model, &data, &WeightRecipe::CenteredMomentCov, &MinimizeOptions::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn just_identified_criterion_is_zero() {
        let model = mean_model(2);
        let data = Dataset::from_rows(vec![1.0, 4.0, 3.0, 0.0, 2.0, 2.0], 2).unwrap();
        let fit = one_step(&model, &data, &WeightRecipe::Identity, &MinimizeOptions::default())
            .unwrap();
        assert!(fit.criterion < 1e-18);
        assert!((fit.theta[0] - 2.0).abs() < 1e-10);
        assert!((fit.theta[1] - 2.0).abs() < 1e-10);
    }
}
