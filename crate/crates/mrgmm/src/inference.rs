//! t statistics, confidence intervals, overidentification (J) tests, and
//! size-corrected critical values.
//!
//! Five interval constructions share one shape, `θ̂_k ± z·sqrt(Σ̂_kk/n)`,
//! and differ in `(Σ̂, z)`:
//!
//! | kind  | variance       | critical value                      |
//! |-------|----------------|-------------------------------------|
//! | `C`   | conventional   | normal quantile `z_{α/2}`           |
//! | `MR`  | robust         | normal quantile `z_{α/2}`           |
//! | `HH*` | conventional   | HH bootstrap quantile of `|T*|`     |
//! | `BN*` | conventional   | BN bootstrap quantile of `|T*|`     |
//! | `MR*` | robust         | MR bootstrap quantile of `|T*|`     |

use crate::bootstrap::{
    bootstrap_quantile, empirical_quantile_min_rule, run_bootstrap, BootstrapRequest,
    ResamplePlan, Scheme, TStatDistribution,
};
use crate::estimate::{GmmFit, Step};
use crate::model::{Dataset, MomentModel};
use crate::stats::{chi2_quantile, normal_quantile};
use crate::variance::{VarianceEstimate, VarianceKind};
use crate::{Error, Result};

/// Confidence interval families reported by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CiKind {
    /// Conventional asymptotic.
    C,
    /// Robust asymptotic.
    Mr,
    /// Hall-Horowitz bootstrap percentile-t.
    HhStar,
    /// Brown-Newey bootstrap percentile-t.
    BnStar,
    /// Misspecification-robust bootstrap percentile-t.
    MrStar,
}

impl CiKind {
    pub const ALL: [CiKind; 5] = [
        CiKind::C,
        CiKind::Mr,
        CiKind::HhStar,
        CiKind::BnStar,
        CiKind::MrStar,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            CiKind::C => "C",
            CiKind::Mr => "MR",
            CiKind::HhStar => "HH*",
            CiKind::BnStar => "BN*",
            CiKind::MrStar => "MR*",
        }
    }

    pub fn parse(s: &str) -> Option<CiKind> {
        match s.trim().to_ascii_uppercase().as_str() {
            "C" => Some(CiKind::C),
            "MR" => Some(CiKind::Mr),
            "HH*" | "HH" => Some(CiKind::HhStar),
            "BN*" | "BN" => Some(CiKind::BnStar),
            "MR*" | "MRSTAR" | "MR_STAR" => Some(CiKind::MrStar),
            _ => None,
        }
    }
}

impl std::fmt::Display for CiKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// A symmetric interval `center ± halfwidth` at a nominal level.
#[derive(Debug, Clone, Copy)]
pub struct ConfidenceInterval {
    pub center: f64,
    pub halfwidth: f64,
    pub lo: f64,
    pub hi: f64,
    pub kind: CiKind,
    /// Nominal coverage `1 - α`.
    pub level: f64,
    /// Zero-length interval from a degenerate bootstrap distribution.
    pub degenerate: bool,
}

impl ConfidenceInterval {
    pub fn covers(&self, value: f64) -> bool {
        self.lo <= value && value <= self.hi
    }
}

/// `T = (θ̂_k - θ_null) / sqrt(Σ̂_kk / n)`.
pub fn t_statistic(
    fit: &GmmFit,
    sigma: &VarianceEstimate,
    k: usize,
    theta_null_k: f64,
) -> Result<f64> {
    let se = sigma.std_error(k)?;
    Ok((fit.theta[k] - theta_null_k) / se)
}

/// Asymptotic interval with the standard-normal critical value; the kind is
/// `C` or `MR` according to the variance estimator.
pub fn ci_asymptotic(
    fit: &GmmFit,
    sigma: &VarianceEstimate,
    k: usize,
    alpha: f64,
) -> Result<ConfidenceInterval> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::argument("alpha must be in (0,1)"));
    }
    let se = sigma.std_error(k)?;
    let z = normal_quantile(1.0 - alpha / 2.0);
    let center = fit.theta[k];
    let halfwidth = z * se;
    Ok(ConfidenceInterval {
        center,
        halfwidth,
        lo: center - halfwidth,
        hi: center + halfwidth,
        kind: match sigma.kind {
            VarianceKind::Conventional => CiKind::C,
            VarianceKind::MisspecificationRobust => CiKind::Mr,
        },
        level: 1.0 - alpha,
        degenerate: false,
    })
}

/// Symmetric percentile-t interval with the bootstrap critical value. The
/// variance kind must match the scheme (robust for MR, conventional for
/// HH/BN); a degenerate BN distribution produces a zero-length interval.
pub fn ci_bootstrap(
    fit: &GmmFit,
    sigma: &VarianceEstimate,
    dist: &TStatDistribution,
    k: usize,
    alpha: f64,
) -> Result<ConfidenceInterval> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::argument("alpha must be in (0,1)"));
    }
    let matched = matches!(
        (dist.scheme, sigma.kind),
        (Scheme::Mr, VarianceKind::MisspecificationRobust)
            | (Scheme::Hh, VarianceKind::Conventional)
            | (Scheme::Bn, VarianceKind::Conventional)
    );
    if !matched {
        return Err(Error::contract(format!(
            "{} bootstrap distribution paired with {:?} variance",
            dist.scheme, sigma.kind
        )));
    }
    if dist.coordinate != k {
        return Err(Error::contract("distribution was built for another coordinate"));
    }
    let kind = match dist.scheme {
        Scheme::Mr => CiKind::MrStar,
        Scheme::Hh => CiKind::HhStar,
        Scheme::Bn => CiKind::BnStar,
    };
    let center = fit.theta[k];
    if dist.degenerate {
        return Ok(ConfidenceInterval {
            center,
            halfwidth: 0.0,
            lo: center,
            hi: center,
            kind,
            level: 1.0 - alpha,
            degenerate: true,
        });
    }
    let se = sigma.std_error(k)?;
    let z = bootstrap_quantile(dist, alpha)?;
    let halfwidth = z * se;
    Ok(ConfidenceInterval {
        center,
        halfwidth,
        lo: center - halfwidth,
        hi: center + halfwidth,
        kind,
        level: 1.0 - alpha,
        degenerate: false,
    })
}

/// Flavor of an overidentification test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JTestKind {
    Asymptotic,
    HhBootstrap,
}

/// Result of an overidentification (J) test.
#[derive(Debug, Clone)]
pub struct JTestResult {
    /// `n · J_n(θ̂_(2), W_n)`.
    pub statistic: f64,
    /// `L_g - L_θ`.
    pub df: usize,
    pub critical: f64,
    pub reject: bool,
    pub kind: JTestKind,
    /// Failed bootstrap draws (bootstrap kind only).
    pub failures: usize,
}

/// Asymptotic J test: compares `n` times the minimized two-step criterion to
/// the chi-square `1 - level` quantile with `L_g - L_θ` degrees of freedom.
pub fn j_test(
    model: &MomentModel,
    data: &Dataset,
    fit2: &GmmFit,
    level: f64,
) -> Result<JTestResult> {
    if fit2.step != Step::TwoStep {
        return Err(Error::contract("the J test needs a two-step fit"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::argument("level must be in (0,1)"));
    }
    let df = model.lg() - model.ltheta();
    let statistic = data.n() as f64 * fit2.criterion;
    if df == 0 {
        return Ok(JTestResult {
            statistic: 0.0,
            df,
            critical: 0.0,
            reject: false,
            kind: JTestKind::Asymptotic,
            failures: 0,
        });
    }
    let critical = chi2_quantile(df as f64, 1.0 - level);
    Ok(JTestResult {
        statistic,
        df,
        critical,
        reject: statistic > critical,
        kind: JTestKind::Asymptotic,
        failures: 0,
    })
}

/// Hall-Horowitz bootstrap J test: the critical value is the empirical
/// `1 - level` quantile of `n·J*_n(θ̂*_(2), W*_n)` over B recentered draws.
pub fn j_test_bootstrap(
    model: &MomentModel,
    data: &Dataset,
    fit2: &GmmFit,
    plan: &ResamplePlan,
    level: f64,
) -> Result<JTestResult> {
    if fit2.step != Step::TwoStep {
        return Err(Error::contract("the bootstrap J test needs a two-step fit"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::argument("level must be in (0,1)"));
    }
    let df = model.lg() - model.ltheta();
    if df == 0 {
        return Ok(JTestResult {
            statistic: 0.0,
            df,
            critical: 0.0,
            reject: false,
            kind: JTestKind::HhBootstrap,
            failures: 0,
        });
    }
    let out = run_bootstrap(
        model,
        data,
        fit2,
        plan,
        0,
        BootstrapRequest {
            j_stat: true,
            ..Default::default()
        },
        1,
    )?;
    let (js, failures) = out.j_star.expect("j requested");
    if js.is_empty() {
        return Err(Error::BootstrapDegenerate {
            failures,
            total: plan.b_total,
        });
    }
    let statistic = data.n() as f64 * fit2.criterion;
    let critical = empirical_quantile_min_rule(&js, 1.0 - level);
    Ok(JTestResult {
        statistic,
        df,
        critical,
        reject: statistic > critical,
        kind: JTestKind::HhBootstrap,
        failures,
    })
}

/// Size-corrected critical value: the empirical `1 - α` quantile (same
/// order-statistic rule as the bootstrap quantile) of the test's decision
/// statistic under the null DGP — `|T|` for asymptotic tests,
/// `|T| - z*(data)` for bootstrap tests.
pub fn size_corrected_critical(null_draws: &[f64], alpha: f64) -> Result<f64> {
    if null_draws.is_empty() {
        return Err(Error::argument("size correction needs at least one null draw"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::argument("alpha must be in (0,1)"));
    }
    let mut sorted = null_draws.to_vec();
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(Error::argument("null draws must be finite"));
    }
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(empirical_quantile_min_rule(&sorted, 1.0 - alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::{one_step, two_step, MinimizeOptions, WeightRecipe};
    use crate::model::{combining_data_model, mean_model, Dataset};
    use crate::rng::{CounterRng, StreamDomain};
    use crate::variance::{sigma_conventional, sigma_mr};
    use nalgebra::DMatrix;

    fn fixed_sigma(value: f64, n: usize, kind: VarianceKind) -> VarianceEstimate {
        VarianceEstimate {
            sigma: DMatrix::from_element(1, 1, value),
            kind,
            step: Step::OneStep,
            n,
        }
    }

    fn mean_fit(data: &Dataset) -> GmmFit {
        one_step(
            &mean_model(1),
            data,
            &WeightRecipe::Identity,
            &MinimizeOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn t_statistic_hand_value() {
        let data = Dataset::from_column(vec![1.2; 4]).unwrap();
        let mut fit = mean_fit(&data);
        fit.theta[0] = 1.2;
        let sigma = fixed_sigma(4.0, 100, VarianceKind::Conventional);
        let t = t_statistic(&fit, &sigma, 0, 1.0).unwrap();
        assert!((t - 1.0).abs() < 1e-12);
        assert_eq!(t_statistic(&fit, &sigma, 0, 1.2).unwrap(), 0.0);
    }

    #[test]
    fn t_statistic_rejects_zero_variance() {
        let data = Dataset::from_column(vec![1.0, 2.0]).unwrap();
        let fit = mean_fit(&data);
        let sigma = fixed_sigma(0.0, 10, VarianceKind::Conventional);
        assert!(matches!(
            t_statistic(&fit, &sigma, 0, 0.0),
            Err(Error::VarianceInvalid(_))
        ));
    }

    #[test]
    fn ci_asymptotic_quantiles() {
        let data = Dataset::from_column(vec![0.0, 0.0]).unwrap();
        let mut fit = mean_fit(&data);
        fit.theta[0] = 0.0;
        // α = 0.05 → z = 1.959964
        let sigma = fixed_sigma(1.0, 1, VarianceKind::Conventional);
        let ci = ci_asymptotic(&fit, &sigma, 0, 0.05).unwrap();
        assert!((ci.halfwidth - 1.959964).abs() < 1e-5);
        assert_eq!(ci.kind, CiKind::C);
        assert!(!ci.degenerate);
        // α = 2(1 - Φ(1)) → halfwidth 1
        let ci = ci_asymptotic(&fit, &sigma, 0, 0.31731).unwrap();
        assert!((ci.halfwidth - 1.0).abs() < 1e-4);
    }

    #[test]
    fn ci_bootstrap_quantile_and_kind_matching() {
        let data = Dataset::from_column(vec![0.5; 3]).unwrap();
        let mut fit = mean_fit(&data);
        fit.theta[0] = 0.0;
        let dist = TStatDistribution {
            abs_t: (1..=10).map(f64::from).collect(),
            failures: 0,
            scheme: Scheme::Mr,
            coordinate: 0,
            degenerate: false,
        };
        let robust = fixed_sigma(1.0, 100, VarianceKind::MisspecificationRobust);
        let ci = ci_bootstrap(&fit, &robust, &dist, 0, 0.1).unwrap();
        assert!((ci.halfwidth - 0.9).abs() < 1e-12);
        assert_eq!(ci.kind, CiKind::MrStar);

        // MR distribution with a conventional variance is a contract error
        let conventional = fixed_sigma(1.0, 100, VarianceKind::Conventional);
        assert!(matches!(
            ci_bootstrap(&fit, &conventional, &dist, 0, 0.1),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn ci_bootstrap_degenerate_bn() {
        let data = Dataset::from_column(vec![0.5; 3]).unwrap();
        let mut fit = mean_fit(&data);
        fit.theta[0] = 0.7;
        let dist = TStatDistribution {
            abs_t: Vec::new(),
            failures: 5,
            scheme: Scheme::Bn,
            coordinate: 0,
            degenerate: true,
        };
        let sigma = fixed_sigma(1.0, 100, VarianceKind::Conventional);
        let ci = ci_bootstrap(&fit, &sigma, &dist, 0, 0.1).unwrap();
        assert!(ci.degenerate);
        assert_eq!(ci.lo, 0.7);
        assert_eq!(ci.hi, 0.7);
        assert!(!ci.covers(0.70001));
    }

    #[test]
    fn ci_duality_with_t_statistic() {
        let mut rng = CounterRng::new(17, StreamDomain::Misc, 4);
        let model = combining_data_model();
        let mut rows = Vec::new();
        for _ in 0..80 {
            let (a, b) = rng.next_normal_pair();
            rows.push(0.2 + a);
            rows.push(0.6 * a + 0.8 * b);
        }
        let data = Dataset::from_rows(rows, 2).unwrap();
        let fit = two_step(&model, &data, &MinimizeOptions::default()).unwrap();
        for sigma in [
            sigma_mr(&model, &data, &fit).unwrap(),
            sigma_conventional(&model, &data, &fit).unwrap(),
        ] {
            let alpha = 0.1;
            let ci = ci_asymptotic(&fit, &sigma, 0, alpha).unwrap();
            let z = normal_quantile(1.0 - alpha / 2.0);
            for theta_null in [-0.5, ci.lo, ci.lo + 1e-6, fit.theta[0], ci.hi, 0.9] {
                let t = t_statistic(&fit, &sigma, 0, theta_null).unwrap();
                assert_eq!(
                    ci.covers(theta_null),
                    t.abs() <= z + 1e-12,
                    "duality broken at {theta_null}"
                );
            }
        }
    }

    #[test]
    fn halfwidth_monotone_in_level() {
        let data = Dataset::from_column(vec![0.5; 3]).unwrap();
        let fit = mean_fit(&data);
        let sigma = fixed_sigma(1.0, 100, VarianceKind::Conventional);
        let mut last = 0.0;
        for alpha in [0.5, 0.2, 0.1, 0.05, 0.01] {
            let ci = ci_asymptotic(&fit, &sigma, 0, alpha).unwrap();
            assert!(ci.halfwidth > last);
            last = ci.halfwidth;
        }
    }

    #[test]
    fn j_test_just_identified_never_rejects() {
        let model = mean_model(1);
        let data = Dataset::from_column(vec![1.0, 3.0, 2.0, 5.0]).unwrap();
        let first = one_step(&model, &data, &WeightRecipe::Identity, &MinimizeOptions::default())
            .unwrap();
        let fit2 =
            crate::estimate::two_step_from(&model, &data, first, &MinimizeOptions::default())
                .unwrap();
        let res = j_test(&model, &data, &fit2, 0.05).unwrap();
        assert_eq!(res.statistic, 0.0);
        assert_eq!(res.df, 0);
        assert!(!res.reject);
        let plan = ResamplePlan::new(9, 1, 0);
        let boot = j_test_bootstrap(&model, &data, &fit2, &plan, 0.05).unwrap();
        assert!(!boot.reject);
    }

    #[test]
    fn j_statistic_invariant_to_row_permutation() {
        let model = combining_data_model();
        let mut rng = CounterRng::new(8, StreamDomain::Misc, 5);
        let mut rows = Vec::new();
        for _ in 0..40 {
            let (a, b) = rng.next_normal_pair();
            rows.push(0.4 + a);
            rows.push(0.5 * a + 0.9 * b);
        }
        let fwd = Dataset::from_rows(rows.clone(), 2).unwrap();
        let mut rev_rows = Vec::new();
        for i in (0..40).rev() {
            rev_rows.extend_from_slice(&rows[2 * i..2 * i + 2]);
        }
        let rev = Dataset::from_rows(rev_rows, 2).unwrap();
        let opts = MinimizeOptions::default();
        let ja = j_test(&model, &fwd, &two_step(&model, &fwd, &opts).unwrap(), 0.05).unwrap();
        let jb = j_test(&model, &rev, &two_step(&model, &rev, &opts).unwrap(), 0.05).unwrap();
        assert!((ja.statistic - jb.statistic).abs() < 1e-9);
    }

    #[test]
    fn size_corrected_critical_examples() {
        let draws: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(size_corrected_critical(&draws, 0.10).unwrap(), 90.0);
        let constant = vec![3.25; 40];
        assert_eq!(size_corrected_critical(&constant, 0.10).unwrap(), 3.25);
        assert!(size_corrected_critical(&[], 0.1).is_err());
    }

    #[test]
    fn size_corrected_critical_normal_oracle() {
        // |N(0,1)| draws: the 0.90 quantile is 1.6449
        let mut rng = CounterRng::new(2718, StreamDomain::Misc, 6);
        let mut draws = Vec::with_capacity(100_000);
        for _ in 0..50_000 {
            let (a, b) = rng.next_normal_pair();
            draws.push(a.abs());
            draws.push(b.abs());
        }
        let q = size_corrected_critical(&draws, 0.10).unwrap();
        assert!((q - 1.6449).abs() < 0.02, "{q}");
    }
}
