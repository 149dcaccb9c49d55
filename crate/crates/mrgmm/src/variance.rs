//! Conventional and misspecification-robust sandwich covariance estimators.
//!
//! When the moment condition may fail (`E g(X, θ) ≠ 0` for every θ), the GMM
//! estimator is still asymptotically normal around its pseudo-true value, but
//! with extra variance terms coming from the Jacobian and the (random) weight
//! matrix hitting the nonzero moment mean. The robust estimator is
//! `Σ̂_MR = H_n⁻¹ V_n H_n⁻¹'` with
//!
//! - bread `H_n = G_n'W G_n + (g_n'W ⊗ I) G2_n`,
//! - `V_n = B Ω_n B'` where `B = [G_n'W  I]` for a nonrandom weight and
//!   `B = [G_n'W  I  G_n']` for a random one,
//! - `Ω_n` the second-moment matrix of the stacked per-observation terms
//!   `(g_i - g_n; (G_i - G_n)'W g_n)`, extended by `W_i g_n` when the weight
//!   is random, where `W_i = -W(m_i - M̄)W` is the weight's influence
//!   (`m_i` the per-observation matrix averaged into the inverse, `M̄` its
//!   mean).
//!
//! The conventional estimator (valid only under correct specification) is
//! `Σ̂_C(1) = (G'WG)⁻¹ G'W Ω̂_C W G (G'WG)⁻¹` for one-step fits and
//! `Σ̂_C(2) = (G'Ω̂_C⁻¹G)⁻¹` for two-step fits, with the *uncentered*
//! `Ω̂_C = n⁻¹ Σ g_i g_i'`.

use nalgebra::{DMatrix, DVector};

use crate::estimate::{h_tilde, GmmFit, Step, WeightRecipe};
use crate::kahan::KahanVec;
use crate::linalg;
use crate::model::{check_model_data, eval_moment_means, Dataset, MomentModel};
use crate::{Error, Result};

/// Which asymptotic theory a covariance estimate is valid under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceKind {
    Conventional,
    MisspecificationRobust,
}

/// An `L_θ × L_θ` covariance estimate of `√n (θ̂ - plim θ̂)`.
#[derive(Debug, Clone)]
pub struct VarianceEstimate {
    pub sigma: DMatrix<f64>,
    pub kind: VarianceKind,
    pub step: Step,
    pub n: usize,
}

impl VarianceEstimate {
    /// Standard error of the k-th coordinate: `sqrt(Σ̂_kk / n)`.
    pub fn std_error(&self, k: usize) -> Result<f64> {
        let s = self.sigma[(k, k)];
        if !(s > 0.0) {
            return Err(Error::VarianceInvalid(format!(
                "Σ̂[{k},{k}] = {s} is not positive"
            )));
        }
        Ok((s / self.n as f64).sqrt())
    }
}

/// The pieces of the robust sandwich, exposed for diagnostics and tests.
#[derive(Debug, Clone)]
pub struct SandwichParts {
    pub h: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub v: DMatrix<f64>,
    /// Per-observation weight influence matrices `W_i` (random weights only).
    pub w_influence: Option<Vec<DMatrix<f64>>>,
}

/// Bread matrix `H_n` at the fit: `G'WG + (g'W ⊗ I) G2`.
pub fn hessian_h(model: &MomentModel, data: &Dataset, fit: &GmmFit) -> Result<DMatrix<f64>> {
    let stats = eval_moment_means(model, data, fit.theta.as_slice())?;
    let h = h_tilde(&stats, &fit.weight);
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation { what: "H", index: 0 });
    }
    Ok(h)
}

enum WeightInfluence {
    /// Nonrandom weight: no influence terms.
    None,
    /// `W_i = -W (m_i - base) W` with `m_i = ĝ_i ĝ_i'` at the first-step
    /// estimate (two-step weight) or `m_i = z_i z_i'` (per-obs outer weight).
    Centered {
        /// θ at which the per-observation vector is evaluated (first-step
        /// estimate), `None` when the feature does not depend on θ.
        anchor_theta: Option<DVector<f64>>,
        base: DMatrix<f64>,
    },
}

fn weight_influence(fit: &GmmFit) -> Result<WeightInfluence> {
    match (&fit.step, &fit.recipe) {
        (Step::TwoStep, _) => {
            let first = fit.first_step.as_ref().ok_or_else(|| {
                Error::contract("step-2 robust variance needs the first-step anchor fit")
            })?;
            let base = fit.weight_base.clone().ok_or_else(|| {
                Error::contract("step-2 fit is missing the centered-covariance base matrix")
            })?;
            Ok(WeightInfluence::Centered {
                anchor_theta: Some(first.theta.clone()),
                base,
            })
        }
        (Step::OneStep, WeightRecipe::PerObsOuter(_)) => {
            let base = fit.weight_base.clone().ok_or_else(|| {
                Error::contract("per-obs-outer fit is missing its base matrix")
            })?;
            Ok(WeightInfluence::Centered {
                anchor_theta: None,
                base,
            })
        }
        _ => Ok(WeightInfluence::None),
    }
}

/// The stacked-moment second-moment matrix `Ω_n` and, on request, the
/// per-observation `W_i` influence matrices.
fn robust_omega_impl(
    model: &MomentModel,
    data: &Dataset,
    fit: &GmmFit,
    keep_w_terms: bool,
) -> Result<(DMatrix<f64>, Option<Vec<DMatrix<f64>>>)> {
    check_model_data(model, data)?;
    let (lg, lt) = (model.lg(), model.ltheta());
    let n = data.n();
    let w = &fit.weight;
    let influence = weight_influence(fit)?;

    let stats = eval_moment_means(model, data, fit.theta.as_slice())?;
    let g_n = &stats.g_n;
    let jac_n = &stats.jac_n;
    let wg = w * g_n; // W g_n, reused per observation

    let dim = match influence {
        WeightInfluence::None => lg + lt,
        WeightInfluence::Centered { .. } => 2 * lg + lt,
    };
    let mut acc = KahanVec::zeros(dim * dim);
    let mut outer = vec![0.0; dim * dim];
    let mut s = vec![0.0; dim];
    let mut g_buf = vec![0.0; lg];
    let mut jac_buf = vec![0.0; lg * lt];
    let mut w_terms: Option<Vec<DMatrix<f64>>> = if keep_w_terms
        && matches!(influence, WeightInfluence::Centered { .. })
    {
        Some(Vec::with_capacity(n))
    } else {
        None
    };

    // constants for the W_i block
    let (anchor_theta, base) = match &influence {
        WeightInfluence::Centered { anchor_theta, base } => {
            (anchor_theta.clone(), Some(base.clone()))
        }
        WeightInfluence::None => (None, None),
    };
    let anchor_mean = match &anchor_theta {
        Some(th) => Some(crate::model::eval_g_mean(model, data, th.as_slice())?),
        None => None,
    };
    // c = W · base · W g_n
    let const_term = base.as_ref().map(|b| w * (b * &wg));

    let mut feat_buf = vec![0.0; lg];
    for i in 0..n {
        let row = data.row(i);
        model.eval_g(row, fit.theta.as_slice(), &mut g_buf);
        model.eval_jac(row, fit.theta.as_slice(), &mut jac_buf);
        if g_buf.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation { what: "g", index: i });
        }
        if jac_buf.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation { what: "G", index: i });
        }
        // block 1: g_i - g_n
        for a in 0..lg {
            s[a] = g_buf[a] - g_n[a];
        }
        // block 2: (G_i - G_n)' W g_n
        for p in 0..lt {
            let mut acc_p = 0.0;
            for a in 0..lg {
                acc_p += (jac_buf[a + lg * p] - jac_n[(a, p)]) * wg[a];
            }
            s[lg + p] = acc_p;
        }
        // block 3: W_i g_n for random weights
        if let Some(base) = &base {
            // per-observation vector entering the weight: ĝ_i at the anchor
            // estimate, or the extractor feature.
            match (&anchor_theta, &fit.recipe) {
                (Some(th), _) => {
                    model.eval_g(row, th.as_slice(), &mut feat_buf);
                    let am = anchor_mean.as_ref().expect("anchor mean");
                    for a in 0..lg {
                        feat_buf[a] -= am[a];
                    }
                }
                (None, WeightRecipe::PerObsOuter(extractor)) => {
                    extractor.eval(row, &mut feat_buf);
                }
                _ => unreachable!("centered influence without anchor or extractor"),
            }
            let feat = DVector::from_row_slice(&feat_buf);
            let w_feat = w * &feat;
            let dot = feat.dot(&wg);
            let c = const_term.as_ref().expect("const term");
            for a in 0..lg {
                s[lg + lt + a] = -dot * w_feat[a] + c[a];
            }
            if let Some(terms) = &mut w_terms {
                // W_i = -W (feat feat' - base) W
                let m = &feat * feat.transpose() - base;
                terms.push(-(w * m * w));
            }
        }
        for a in 0..dim {
            for b in 0..dim {
                outer[a + dim * b] = s[a] * s[b];
            }
        }
        acc.add_slice(&outer);
    }
    let omega = DMatrix::from_vec(dim, dim, acc.into_mean(n));
    Ok((omega, w_terms))
}

/// `Ω_n` plus the `W_i` influence terms (present for random weights).
pub fn omega_robust(
    model: &MomentModel,
    data: &Dataset,
    fit: &GmmFit,
) -> Result<(DMatrix<f64>, Option<Vec<DMatrix<f64>>>)> {
    robust_omega_impl(model, data, fit, true)
}

fn v_bracket(model: &MomentModel, fit: &GmmFit, jac_n: &DMatrix<f64>, random: bool) -> DMatrix<f64> {
    let (lg, lt) = (model.lg(), model.ltheta());
    let gtw = jac_n.transpose() * &fit.weight;
    let cols = if random { 2 * lg + lt } else { lg + lt };
    let mut b = DMatrix::zeros(lt, cols);
    b.view_mut((0, 0), (lt, lg)).copy_from(&gtw);
    b.view_mut((0, lg), (lt, lt)).copy_from(&DMatrix::identity(lt, lt));
    if random {
        b.view_mut((0, lg + lt), (lt, lg)).copy_from(&jac_n.transpose());
    }
    b
}

/// Misspecification-robust covariance `Σ̂_MR = H_n⁻¹ V_n H_n⁻¹'`, symmetrized.
pub fn sigma_mr(model: &MomentModel, data: &Dataset, fit: &GmmFit) -> Result<VarianceEstimate> {
    let parts = sandwich_parts(model, data, fit, false)?;
    let (h_inv, _cond) =
        linalg::sym_inverse_indefinite(&parts.h, "sandwich bread").map_err(|e| match e {
            Error::Singular { cond, .. } => Error::Singular {
                context: "sandwich bread",
                cond,
            },
            other => other,
        })?;
    let mut sigma = &h_inv * &parts.v * h_inv.transpose();
    linalg::symmetrize(&mut sigma);
    Ok(VarianceEstimate {
        sigma,
        kind: VarianceKind::MisspecificationRobust,
        step: fit.step,
        n: data.n(),
    })
}

/// All sandwich pieces at once (used by [`sigma_mr`] and the diagnostics).
pub fn sandwich_parts(
    model: &MomentModel,
    data: &Dataset,
    fit: &GmmFit,
    keep_w_terms: bool,
) -> Result<SandwichParts> {
    let stats = eval_moment_means(model, data, fit.theta.as_slice())?;
    let h = h_tilde(&stats, &fit.weight);
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation { what: "H", index: 0 });
    }
    let random = matches!(weight_influence(fit)?, WeightInfluence::Centered { .. });
    let (omega, w_influence) = robust_omega_impl(model, data, fit, keep_w_terms)?;
    let b = v_bracket(model, fit, &stats.jac_n, random);
    let mut v = &b * &omega * b.transpose();
    linalg::symmetrize(&mut v);
    Ok(SandwichParts {
        h,
        omega,
        v,
        w_influence,
    })
}

/// Conventional covariance estimator, valid under correct specification:
/// the `Σ̂_C(1)` sandwich with the fit's weight for one-step fits, the
/// efficient-weight form `Σ̂_C(2)` for two-step fits. `Ω̂_C` is uncentered.
pub fn sigma_conventional(
    model: &MomentModel,
    data: &Dataset,
    fit: &GmmFit,
) -> Result<VarianceEstimate> {
    check_model_data(model, data)?;
    let lg = model.lg();
    let n = data.n();
    let stats = eval_moment_means(model, data, fit.theta.as_slice())?;

    // uncentered Ω̂_C = n⁻¹ Σ g_i g_i'
    let mut acc = KahanVec::zeros(lg * lg);
    let mut g_buf = vec![0.0; lg];
    let mut outer = vec![0.0; lg * lg];
    for i in 0..n {
        model.eval_g(data.row(i), fit.theta.as_slice(), &mut g_buf);
        if g_buf.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation { what: "g", index: i });
        }
        for a in 0..lg {
            for b in 0..lg {
                outer[a + lg * b] = g_buf[a] * g_buf[b];
            }
        }
        acc.add_slice(&outer);
    }
    let omega_c = DMatrix::from_vec(lg, lg, acc.into_mean(n));

    let sigma = match fit.step {
        Step::TwoStep => {
            let (omega_inv, _) = linalg::sym_inverse(&omega_c, "conventional moment covariance")?;
            let inner = stats.jac_n.transpose() * &omega_inv * &stats.jac_n;
            let (sig, _) = linalg::sym_inverse_indefinite(&inner, "G'Ω⁻¹G")?;
            sig
        }
        Step::OneStep => {
            let gtw = stats.jac_n.transpose() * &fit.weight;
            let bread = &gtw * &stats.jac_n;
            let (bread_inv, _) = linalg::sym_inverse_indefinite(&bread, "G'WG")?;
            let meat = &gtw * &omega_c * gtw.transpose();
            &bread_inv * meat * bread_inv.transpose()
        }
    };
    let mut sigma = sigma;
    linalg::symmetrize(&mut sigma);
    Ok(VarianceEstimate {
        sigma,
        kind: VarianceKind::Conventional,
        step: fit.step,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::{
        iv_instrument_recipe, one_step, two_step, MinimizeOptions, WeightRecipe,
    };
    use crate::model::{combining_data_model, linear_iv_model, mean_model, Dataset};
    use crate::rng::{CounterRng, StreamDomain};

    fn normal_rows(seed: u64, n: usize, f: impl Fn(&mut CounterRng) -> Vec<f64>) -> Vec<f64> {
        let mut rng = CounterRng::new(seed, StreamDomain::Misc, 9);
        let mut rows = Vec::new();
        for _ in 0..n {
            rows.extend(f(&mut rng));
        }
        rows
    }

    #[test]
    fn hessian_mean_model_is_one() {
        // g(x,θ) = x - θ: G = -1, G2 = 0, exact root kills the second term.
        let model = mean_model(1);
        let data = Dataset::from_column(vec![1.0, 2.0, 3.0]).unwrap();
        let fit = one_step(&model, &data, &WeightRecipe::Identity, &MinimizeOptions::default())
            .unwrap();
        let h = hessian_h(&model, &data, &fit).unwrap();
        assert!((h[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hessian_combining_data_step1() {
        // G = (0,-1)', G2 = 0 → H = G'G = 1 at any θ.
        let model = combining_data_model();
        let data = Dataset::from_rows(vec![0.5, 1.0, -0.5, 2.0], 2).unwrap();
        let fit = one_step(&model, &data, &WeightRecipe::Identity, &MinimizeOptions::default())
            .unwrap();
        let h = hessian_h(&model, &data, &fit).unwrap();
        assert!((h[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn w_influence_mean_is_zero() {
        let model = combining_data_model();
        let rows = normal_rows(21, 120, |rng| {
            let (a, b) = rng.next_normal_pair();
            vec![0.4 + a, 0.6 * a + 0.8 * b]
        });
        let data = Dataset::from_rows(rows, 2).unwrap();
        let fit = two_step(&model, &data, &MinimizeOptions::default()).unwrap();
        let (_omega, w_terms) = omega_robust(&model, &data, &fit).unwrap();
        let terms = w_terms.expect("two-step has W_i terms");
        let mut mean = DMatrix::zeros(2, 2);
        for t in &terms {
            mean += t;
        }
        mean /= terms.len() as f64;
        let scale = fit.weight.amax();
        assert!(mean.amax() <= 1e-12 * scale, "{} vs {}", mean.amax(), scale);
    }

    #[test]
    fn w_influence_mean_is_zero_per_obs_outer() {
        let model = linear_iv_model();
        let rows = normal_rows(22, 150, |rng| {
            let (z1, z2) = rng.next_normal_pair();
            let (e, u) = rng.next_normal_pair();
            let x = 0.6 * z1 + 0.3 * z2 + u;
            vec![0.2 * x + e, x, z1, z2]
        });
        let data = Dataset::from_rows(rows, 4).unwrap();
        let fit = one_step(&model, &data, &iv_instrument_recipe(), &MinimizeOptions::default())
            .unwrap();
        let (_omega, w_terms) = omega_robust(&model, &data, &fit).unwrap();
        let terms = w_terms.expect("per-obs-outer has W_i terms");
        let mut mean = DMatrix::zeros(2, 2);
        for t in &terms {
            mean += t;
        }
        mean /= terms.len() as f64;
        assert!(mean.amax() <= 1e-12 * fit.weight.amax());
    }

    #[test]
    fn just_identified_robust_equals_conventional() {
        let model = mean_model(1);
        let mut rng = CounterRng::new(33, StreamDomain::Misc, 3);
        for _ in 0..20 {
            let n = 40;
            let mut xs = Vec::with_capacity(n);
            for _ in 0..n / 2 {
                let (a, b) = rng.next_normal_pair();
                xs.push(1.5 + 2.0 * a);
                xs.push(1.5 + 2.0 * b);
            }
            let data = Dataset::from_column(xs).unwrap();
            let fit =
                one_step(&model, &data, &WeightRecipe::Identity, &MinimizeOptions::default())
                    .unwrap();
            let mr = sigma_mr(&model, &data, &fit).unwrap();
            let c = sigma_conventional(&model, &data, &fit).unwrap();
            let rel = (&mr.sigma - &c.sigma).amax() / c.sigma.amax();
            assert!(rel <= 1e-10, "relative gap {rel}");
        }
    }

    #[test]
    fn omega_upper_block_is_centered_covariance_at_exact_root() {
        let model = mean_model(1);
        let data = Dataset::from_column(vec![1.0, 2.0, 6.0]).unwrap();
        let fit = one_step(&model, &data, &WeightRecipe::Identity, &MinimizeOptions::default())
            .unwrap();
        let (omega, _) = omega_robust(&model, &data, &fit).unwrap();
        // centered variance of g_i = x_i - x̄: mean of squared deviations
        let xbar = 3.0;
        let var = ((1.0_f64 - xbar).powi(2) + (2.0 - xbar).powi(2) + (6.0 - xbar).powi(2)) / 3.0;
        assert!((omega[(0, 0)] - var).abs() < 1e-10);
        // lower block (G_i - G_n)'g_n vanishes: G constant and g_n ≈ 0
        assert!(omega[(1, 1)].abs() < 1e-20);
    }

    #[test]
    fn variance_estimates_are_symmetric_with_nonnegative_diagonal() {
        let model = combining_data_model();
        let rows = normal_rows(44, 200, |rng| {
            let (a, b) = rng.next_normal_pair();
            vec![0.3 + a, 0.5 * a + 0.87 * b]
        });
        let data = Dataset::from_rows(rows, 2).unwrap();
        let fit = two_step(&model, &data, &MinimizeOptions::default()).unwrap();
        for est in [
            sigma_mr(&model, &data, &fit).unwrap(),
            sigma_conventional(&model, &data, &fit).unwrap(),
        ] {
            assert_eq!(crate::linalg::asymmetry(&est.sigma), 0.0);
            assert!(est.sigma[(0, 0)] >= 0.0);
        }
    }

    #[test]
    fn singular_dataset_rejected() {
        let model = combining_data_model();
        let data = Dataset::from_rows(vec![1.0, 2.0, 1.0, 2.0], 2).unwrap();
        // two identical observations: centered weight singular
        assert!(two_step(&model, &data, &MinimizeOptions::default()).is_err());
    }
}
