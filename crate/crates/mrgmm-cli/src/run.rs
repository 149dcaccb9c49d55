//! Command dispatch: estimation on CSV data, bootstrap CIs, coverage and
//! power studies, and the selftest.

use std::time::Instant;

use mrgmm::bootstrap::{run_bootstrap, BootstrapRequest, ResamplePlan};
use mrgmm::estimate::{
    iv_instrument_recipe, one_step, two_step, two_step_from, GmmFit, MinimizeOptions,
    WeightRecipe,
};
use mrgmm::experiments::{
    coverage_study, power_study, CoverageConfig, PowerConfig, PseudoTrueCache, StudyModel,
};
use mrgmm::inference::{
    ci_asymptotic, ci_bootstrap, j_test, j_test_bootstrap, CiKind, ConfidenceInterval,
};
use mrgmm::model::{combining_data_model, linear_iv_model, mean_model, Dataset, MomentModel};
use mrgmm::variance::{sigma_conventional, sigma_mr};

use crate::output::{write_manifest, write_results_csv, write_table_txt, ResultRow};
use crate::selftest::run_selftest;
use crate::settings::{CommandKind, ModelId, RunConfig};
use crate::svg::{line_chart, Series};

/// Level used for the J tests reported by the studies (the tables' "J at
/// 5%").
pub const J_LEVEL: f64 = 0.05;

/// Failures split by exit code: usage errors exit 2, runtime errors exit 1.
#[derive(Debug)]
pub enum RunError {
    Usage(String),
    Runtime(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Usage(m) => write!(f, "usage error: {m}"),
            RunError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> RunError {
    RunError::Runtime(e.to_string())
}

/// Executes a resolved configuration, writing `results.csv`, `table.txt`,
/// `manifest.json`, and (for sweeps and power studies) `figure.svg` into the
/// output directory.
pub fn run(config: &RunConfig) -> Result<(), RunError> {
    if config.command == CommandKind::Selftest {
        return if run_selftest() {
            Ok(())
        } else {
            Err(RunError::Runtime("selftest failed".into()))
        };
    }
    let started = Instant::now();
    std::fs::create_dir_all(&config.out)
        .map_err(|e| runtime(format!("cannot create {}: {e}", config.out.display())))?;

    let (rows, table, figure) = match config.command {
        CommandKind::Estimate => run_on_data(config, false)?,
        CommandKind::Ci => run_on_data(config, true)?,
        CommandKind::Coverage => run_coverage(config)?,
        CommandKind::Power => run_power(config)?,
        CommandKind::Selftest => unreachable!(),
    };

    write_results_csv(&config.out.join("results.csv"), &rows).map_err(runtime)?;
    write_table_txt(&config.out.join("table.txt"), &table).map_err(runtime)?;
    if let Some(svg) = figure {
        std::fs::write(config.out.join("figure.svg"), svg).map_err(runtime)?;
    }
    write_manifest(
        &config.out.join("manifest.json"),
        config,
        started.elapsed().as_secs_f64(),
    )
    .map_err(runtime)?;
    Ok(())
}

fn model_label(model: ModelId) -> &'static str {
    match model {
        ModelId::Example1 => "example1",
        ModelId::Example2 => "example2",
        ModelId::Mean => "mean",
    }
}

/// The estimation pipeline for user data files.
fn fit_data_model(
    config: &RunConfig,
    data: &Dataset,
) -> Result<(MomentModel, GmmFit), RunError> {
    let opts = MinimizeOptions::default();
    match config.model {
        ModelId::Example1 => {
            let model = combining_data_model();
            let fit = two_step(&model, data, &opts).map_err(runtime)?;
            Ok((model, fit))
        }
        ModelId::Example2 => {
            let model = linear_iv_model();
            let fit = one_step(&model, data, &iv_instrument_recipe(), &opts).map_err(runtime)?;
            Ok((model, fit))
        }
        ModelId::Mean => {
            let model = mean_model(data.d());
            let fit = one_step(&model, data, &WeightRecipe::Identity, &opts).map_err(runtime)?;
            Ok((model, fit))
        }
    }
}

type CommandOutput = (Vec<ResultRow>, String, Option<String>);

fn run_on_data(config: &RunConfig, with_bootstrap: bool) -> Result<CommandOutput, RunError> {
    let path = config.data.as_ref().expect("validated");
    let data = Dataset::from_csv_path(path).map_err(runtime)?;
    let (model, fit) = fit_data_model(config, &data)?;
    let var_mr = sigma_mr(&model, &data, &fit).map_err(runtime)?;
    let var_c = sigma_conventional(&model, &data, &fit).map_err(runtime)?;
    let kinds: Vec<CiKind> = if with_bootstrap {
        config.kinds().map_err(RunError::Usage)?
    } else {
        vec![CiKind::C, CiKind::Mr]
    };

    let base_row = ResultRow {
        model: model_label(config.model).into(),
        n: data.n(),
        ..Default::default()
    };
    let mut rows = Vec::new();
    let mut table = String::new();
    table.push_str(&format!(
        "model {}  data {}  n {}\n",
        model_label(config.model),
        path.display(),
        data.n()
    ));
    table.push_str(&format!("theta_hat: {:?}\n", fit.theta.as_slice()));
    table.push_str(&format!(
        "criterion {:.6e}  converged {}\n\n",
        fit.criterion, fit.converged
    ));
    table.push_str("coord  level  kind  center  halfwidth\n");

    for k in 0..model.ltheta() {
        let boot = if with_bootstrap {
            let request = BootstrapRequest {
                mr: kinds.contains(&CiKind::MrStar),
                hh: kinds.contains(&CiKind::HhStar),
                bn: kinds.contains(&CiKind::BnStar),
                j_stat: false,
            };
            if request.mr || request.hh || request.bn {
                let plan = ResamplePlan::new(config.bootstrap_draws, config.seed, 0);
                Some(
                    run_bootstrap(&model, &data, &fit, &plan, k, request, config.threads.max(1))
                        .map_err(runtime)?,
                )
            } else {
                None
            }
        } else {
            None
        };
        for &level in &config.levels {
            let alpha = 1.0 - level;
            for &kind in &kinds {
                let (ci, failures): (ConfidenceInterval, usize) = match kind {
                    CiKind::C => (ci_asymptotic(&fit, &var_c, k, alpha).map_err(runtime)?, 0),
                    CiKind::Mr => (ci_asymptotic(&fit, &var_mr, k, alpha).map_err(runtime)?, 0),
                    CiKind::MrStar => {
                        let dist = boot.as_ref().and_then(|b| b.mr.as_ref()).expect("mr dist");
                        (
                            ci_bootstrap(&fit, &var_mr, dist, k, alpha).map_err(runtime)?,
                            dist.failures,
                        )
                    }
                    CiKind::HhStar => {
                        let dist = boot.as_ref().and_then(|b| b.hh.as_ref()).expect("hh dist");
                        (
                            ci_bootstrap(&fit, &var_c, dist, k, alpha).map_err(runtime)?,
                            dist.failures,
                        )
                    }
                    CiKind::BnStar => {
                        let dist = boot.as_ref().and_then(|b| b.bn.as_ref()).expect("bn dist");
                        (
                            ci_bootstrap(&fit, &var_c, dist, k, alpha).map_err(runtime)?,
                            dist.failures,
                        )
                    }
                };
                rows.push(ResultRow {
                    coord: k,
                    level,
                    kind: kind.label().into(),
                    estimate: Some(ci.center),
                    halfwidth: Some(ci.halfwidth),
                    degenerate: Some(if ci.degenerate { 1.0 } else { 0.0 }),
                    failures,
                    ..base_row.clone()
                });
                table.push_str(&format!(
                    "{k}  {level}  {}  {:.6}  {:.6}\n",
                    kind.label(),
                    ci.center,
                    ci.halfwidth
                ));
            }
        }
    }

    // J tests for the overidentified pipelines
    if model.lg() > model.ltheta() {
        let j_fit = match fit.step {
            mrgmm::estimate::Step::TwoStep => Some(fit.clone()),
            mrgmm::estimate::Step::OneStep => {
                two_step_from(&model, &data, fit.clone(), &MinimizeOptions::default()).ok()
            }
        };
        if let Some(j_fit) = j_fit {
            let jt = j_test(&model, &data, &j_fit, J_LEVEL).map_err(runtime)?;
            rows.push(ResultRow {
                coord: 0,
                level: J_LEVEL,
                kind: "J".into(),
                estimate: Some(jt.statistic),
                halfwidth: Some(jt.critical),
                covered: Some(jt.reject),
                ..base_row.clone()
            });
            table.push_str(&format!(
                "\nJ = {:.4} (chi2 df {} critical {:.4}) reject at 5%: {}\n",
                jt.statistic, jt.df, jt.critical, jt.reject
            ));
            if with_bootstrap && config.bootstrap_draws > 0 {
                let plan = ResamplePlan::new(config.bootstrap_draws, config.seed, 0);
                let jb = j_test_bootstrap(&model, &data, &j_fit, &plan, J_LEVEL).map_err(runtime)?;
                rows.push(ResultRow {
                    coord: 0,
                    level: J_LEVEL,
                    kind: "J*".into(),
                    estimate: Some(jb.statistic),
                    halfwidth: Some(jb.critical),
                    covered: Some(jb.reject),
                    failures: jb.failures,
                    ..base_row.clone()
                });
                table.push_str(&format!(
                    "J* critical {:.4} reject at 5%: {}\n",
                    jb.critical, jb.reject
                ));
            }
        }
    }
    Ok((rows, table, None))
}

fn spec_fields(config: &RunConfig, delta: f64) -> ResultRow {
    let mut row = ResultRow {
        model: model_label(config.model).into(),
        n: config.n,
        delta: Some(delta),
        ..Default::default()
    };
    match config.model {
        ModelId::Example1 => {
            row.rho = Some(config.rho);
            row.sigma = Some(config.sigma);
        }
        ModelId::Example2 => {
            row.gamma1 = Some(config.gamma1);
            row.gamma2 = Some(match config.gamma2 {
                Some(g) => g,
                None => mrgmm::experiments::gamma2_strong_invalid(delta),
            });
        }
        ModelId::Mean => {}
    }
    row
}

fn run_coverage(config: &RunConfig) -> Result<CommandOutput, RunError> {
    let kinds = config.kinds().map_err(RunError::Usage)?;
    let mut cache = PseudoTrueCache::at_path(config.out.join("pseudo_true_verified.txt"));
    let mut rows = Vec::new();
    let mut table = String::new();
    table.push_str(&format!(
        "coverage  model {}  n {}  r {}  B {}  seed {}\n",
        model_label(config.model),
        config.n,
        config.replications,
        config.bootstrap_draws,
        config.seed
    ));
    // figure series: coverage against delta at the first level
    let mut fig_series: Vec<Series> = kinds
        .iter()
        .map(|k| Series {
            label: k.label().to_string(),
            points: Vec::new(),
        })
        .collect();

    for &delta in &config.deltas {
        let study = config.study_at(delta).map_err(RunError::Usage)?;
        let cov_config = CoverageConfig {
            study,
            replications: config.replications,
            bootstrap_draws: config.bootstrap_draws,
            levels: config.levels.clone(),
            kinds: kinds.clone(),
            j_tests: true,
            j_bootstrap: config.j_bootstrap,
            j_level: J_LEVEL,
            seed: config.seed,
            threads: config.threads,
        };
        let result = coverage_study(&cov_config, &mut cache).map_err(runtime)?;

        table.push_str(&format!(
            "\ndelta = {}  (pseudo-true value {:.6})\n",
            delta, result.pseudo_true
        ));
        table.push_str(&format!("{:<6}", "kind"));
        for level in &config.levels {
            table.push_str(&format!("  {level:>7}"));
        }
        table.push('\n');
        for (ki, kind) in kinds.iter().enumerate() {
            table.push_str(&format!("{:<6}", kind.label()));
            for &level in &config.levels {
                let row = result.row(level, *kind).expect("requested cell");
                table.push_str(&format!("  {:>7.3}", row.coverage()));
                rows.push(ResultRow {
                    level,
                    kind: kind.label().into(),
                    halfwidth: Some(row.mean_halfwidth()),
                    coverage: Some(row.coverage()),
                    mc_stderr: Some(row.mc_stderr()),
                    degenerate: Some(if row.valid == 0 {
                        f64::NAN
                    } else {
                        row.degenerate as f64 / row.valid as f64
                    }),
                    failures: row.failures,
                    ..spec_fields(config, delta)
                });
                if ki < fig_series.len() && (level - config.levels[0]).abs() < 1e-12 {
                    fig_series[ki].points.push((delta, row.coverage()));
                }
            }
            table.push('\n');
        }
        if let Some(j) = &result.j_asymptotic {
            rows.push(ResultRow {
                level: J_LEVEL,
                kind: "J".into(),
                coverage: Some(j.rate()),
                mc_stderr: Some(j.mc_stderr()),
                failures: j.failures,
                ..spec_fields(config, delta)
            });
            table.push_str(&format!("J at 5%: {:.3}", j.rate()));
        }
        if let Some(j) = &result.j_hh_bootstrap {
            rows.push(ResultRow {
                level: J_LEVEL,
                kind: "J*".into(),
                coverage: Some(j.rate()),
                mc_stderr: Some(j.mc_stderr()),
                failures: j.failures,
                ..spec_fields(config, delta)
            });
            table.push_str(&format!("   J* at 5%: {:.3}", j.rate()));
        }
        table.push('\n');
    }

    let figure = (config.deltas.len() >= 2).then(|| {
        line_chart(
            &format!(
                "coverage of nominal {} intervals, {} n={}",
                config.levels[0],
                model_label(config.model),
                config.n
            ),
            "delta",
            "coverage",
            &fig_series,
        )
    });
    Ok((rows, table, figure))
}

fn run_power(config: &RunConfig) -> Result<CommandOutput, RunError> {
    if config.deltas.len() != 1 {
        return Err(RunError::Usage(
            "power runs a single design point; pass one --delta".into(),
        ));
    }
    let delta = config.deltas[0];
    let study: StudyModel = config.study_at(delta).map_err(RunError::Usage)?;
    let mut cache = PseudoTrueCache::at_path(config.out.join("pseudo_true_verified.txt"));
    let power_config = PowerConfig {
        study,
        replications: config.replications,
        bootstrap_draws: config.bootstrap_draws,
        alpha: config.alpha,
        theta_grid: config
            .theta_grid
            .map(|g| g.points())
            .unwrap_or_default(),
        seed: config.seed,
        threads: config.threads,
    };
    let curve = power_study(&power_config, &mut cache).map_err(|e| match e {
        mrgmm::Error::Argument(m) => RunError::Usage(m),
        other => runtime(other),
    })?;

    let mut rows = Vec::new();
    let mut table = String::new();
    table.push_str(&format!(
        "power  model {}  n {}  delta {}  alpha {}  r {}  B {}  seed {}\n",
        model_label(config.model),
        config.n,
        delta,
        config.alpha,
        config.replications,
        config.bootstrap_draws,
        config.seed
    ));
    table.push_str(&format!("pseudo-true value {:.6}\n", curve.pseudo_true));
    table.push_str("size-corrected critical values: ");
    for (kind, cv) in &curve.criticals {
        table.push_str(&format!("{}={cv:.4}  ", kind.label()));
    }
    table.push_str("\n\ntheta_null");
    for (kind, _) in &curve.criticals {
        table.push_str(&format!("  {:>7}", kind.label()));
    }
    table.push('\n');

    let mut fig_series: Vec<Series> = curve
        .criticals
        .iter()
        .map(|(k, _)| Series {
            label: k.label().to_string(),
            points: Vec::new(),
        })
        .collect();
    for &theta0 in &curve.grid {
        table.push_str(&format!("{theta0:>10.5}"));
        for (ki, (kind, _)) in curve.criticals.iter().enumerate() {
            let row = curve
                .rows
                .iter()
                .find(|r| r.kind == *kind && r.theta_null == theta0)
                .expect("power cell");
            table.push_str(&format!("  {:>7.3}", row.rate()));
            fig_series[ki].points.push((theta0, row.rate()));
            rows.push(ResultRow {
                level: config.alpha,
                kind: kind.label().into(),
                estimate: Some(theta0),
                coverage: Some(row.rate()),
                mc_stderr: Some(
                    (row.rate() * (1.0 - row.rate()) / row.valid.max(1) as f64).sqrt(),
                ),
                failures: row.failures,
                ..spec_fields(config, delta)
            });
        }
        table.push('\n');
    }
    let figure = Some(line_chart(
        &format!(
            "size-corrected power, {} n={} delta={} alpha={}",
            model_label(config.model),
            config.n,
            delta,
            config.alpha
        ),
        "theta under test",
        "rejection frequency",
        &fig_series,
    ));
    Ok((rows, table, figure))
}

