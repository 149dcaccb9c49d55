//! Built-in diagnostics: each check has an independent oracle and prints one
//! pass/fail line.

use mrgmm::bootstrap::{bootstrap_quantile, el_probabilities, Scheme, TStatDistribution};
use mrgmm::estimate::{iv_instrument_recipe, one_step, two_step, MinimizeOptions, WeightRecipe};
use mrgmm::experiments::{simulate_example1, simulate_example2, Example1Spec, Example2Spec, ZShape};
use mrgmm::model::{check_derivatives, combining_data_model, linear_iv_model, mean_model, Dataset};
use mrgmm::rng::{CounterRng, StreamDomain};
use mrgmm::variance::{omega_robust, sigma_conventional, sigma_mr};

struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn example1_data(seed: u64, rep: u32, n: usize) -> Dataset {
    let spec = Example1Spec {
        n,
        rho: 0.5,
        shape: ZShape::Lognormal { sigma: 1.5 },
        delta: 0.3,
    };
    simulate_example1(&spec, seed, rep).expect("simulate example 1")
}

fn derivative_checks() -> Check {
    let mut worst = 0.0f64;
    let mut rng = CounterRng::new(7, StreamDomain::Misc, 0);
    let mut ok = true;
    for rep in 0..20u32 {
        let theta = 2.0 * rng.next_f64() - 1.0;

        let data1 = example1_data(11, rep, 40);
        let r1 = check_derivatives(&combining_data_model(), &data1, &[theta], 1e-5, 1e-6);

        let spec2 = Example2Spec {
            n: 40,
            delta: 0.25,
            gamma1: 0.25,
            gamma2: None,
        };
        let data2 = simulate_example2(&spec2, 13, rep).expect("simulate example 2");
        let r2 = check_derivatives(&linear_iv_model(), &data2, &[theta], 1e-5, 1e-6);

        let xs: Vec<f64> = (0..30).map(|_| 3.0 * rng.next_f64()).collect();
        let data3 = Dataset::from_column(xs).expect("mean data");
        let r3 = check_derivatives(&mean_model(1), &data3, &[theta], 1e-5, 1e-6);

        for r in [r1, r2, r3] {
            match r {
                Ok(report) => {
                    worst = worst.max(report.max_rel_err_jac).max(report.max_rel_err_jac2);
                    ok &= report.all_ok();
                }
                Err(_) => ok = false,
            }
        }
    }
    Check {
        name: "finite-difference derivative checks (built-in models)",
        passed: ok,
        detail: format!("max relative error {worst:.2e} (tol 1e-6)"),
    }
}

fn quantile_brute_force() -> Check {
    let mut rng = CounterRng::new(23, StreamDomain::Misc, 1);
    let mut mismatches = 0usize;
    let cases = 1000;
    for _ in 0..cases {
        let m = 1 + (rng.next_u64() % 50) as usize;
        let mut vals: Vec<f64> = (0..m).map(|_| 5.0 * rng.next_f64()).collect();
        vals.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let alpha = 0.01 + 0.48 * rng.next_f64();
        let target = 1.0 - alpha;
        let mut best = (f64::INFINITY, 0.0);
        for (i, &v) in vals.iter().enumerate() {
            let gap = ((i + 1) as f64 / m as f64 - target).abs();
            if gap < best.0 {
                best = (gap, v);
            }
        }
        let dist = TStatDistribution {
            abs_t: vals,
            failures: 0,
            scheme: Scheme::Mr,
            coordinate: 0,
            degenerate: false,
        };
        if bootstrap_quantile(&dist, alpha).unwrap() != best.1 {
            mismatches += 1;
        }
    }
    Check {
        name: "bootstrap quantile vs brute-force order statistics",
        passed: mismatches == 0,
        detail: format!("{mismatches}/{cases} mismatches"),
    }
}

fn w_influence_mean_zero() -> Check {
    let model1 = combining_data_model();
    let data1 = example1_data(17, 0, 150);
    let opts = MinimizeOptions::default();
    let mut worst = 0.0f64;
    let mut ok = true;

    match two_step(&model1, &data1, &opts)
        .and_then(|fit| omega_robust(&model1, &data1, &fit).map(|o| (fit, o)))
    {
        Ok((fit, (_omega, Some(terms)))) => {
            let mut mean = mrgmm::nalgebra::DMatrix::zeros(2, 2);
            for t in &terms {
                mean += t;
            }
            mean /= terms.len() as f64;
            let rel = mean.amax() / fit.weight.amax();
            worst = worst.max(rel);
            ok &= rel <= 1e-12;
        }
        _ => ok = false,
    }

    let model2 = linear_iv_model();
    let spec2 = Example2Spec {
        n: 150,
        delta: 0.25,
        gamma1: 0.25,
        gamma2: None,
    };
    let data2 = simulate_example2(&spec2, 19, 0).expect("simulate");
    match one_step(&model2, &data2, &iv_instrument_recipe(), &opts)
        .and_then(|fit| omega_robust(&model2, &data2, &fit).map(|o| (fit, o)))
    {
        Ok((fit, (_omega, Some(terms)))) => {
            let mut mean = mrgmm::nalgebra::DMatrix::zeros(2, 2);
            for t in &terms {
                mean += t;
            }
            mean /= terms.len() as f64;
            let rel = mean.amax() / fit.weight.amax();
            worst = worst.max(rel);
            ok &= rel <= 1e-12;
        }
        _ => ok = false,
    }
    Check {
        name: "weight influence terms mean-zero",
        passed: ok,
        detail: format!("max relative mean {worst:.2e} (tol 1e-12)"),
    }
}

fn just_identified_equivalence() -> Check {
    let model = mean_model(1);
    let opts = MinimizeOptions::default();
    let mut rng = CounterRng::new(29, StreamDomain::Misc, 2);
    let mut worst = 0.0f64;
    let mut ok = true;
    for _ in 0..100 {
        let xs: Vec<f64> = (0..40).map(|_| 4.0 * rng.next_f64() - 2.0).collect();
        let data = Dataset::from_column(xs).expect("data");
        match one_step(&model, &data, &WeightRecipe::Identity, &opts) {
            Ok(fit) => {
                let mr = sigma_mr(&model, &data, &fit);
                let c = sigma_conventional(&model, &data, &fit);
                match (mr, c) {
                    (Ok(mr), Ok(c)) => {
                        let rel = (&mr.sigma - &c.sigma).amax() / c.sigma.amax();
                        worst = worst.max(rel);
                        ok &= rel <= 1e-10;
                    }
                    _ => ok = false,
                }
            }
            Err(_) => ok = false,
        }
    }
    Check {
        name: "just-identified robust = conventional variance",
        passed: ok,
        detail: format!("max relative gap {worst:.2e} (tol 1e-10)"),
    }
}

fn el_feasibility() -> Check {
    let model = combining_data_model();
    let opts = MinimizeOptions::default();
    let mut worst = 0.0f64;
    let mut converged = 0usize;
    let mut ok = true;
    for rep in 0..50u32 {
        let data = example1_data(31, rep, 120);
        let Ok(fit) = two_step(&model, &data, &opts) else {
            continue;
        };
        let Ok(w) = el_probabilities(&model, &data, fit.theta.as_slice()) else {
            ok = false;
            continue;
        };
        if !w.converged {
            continue;
        }
        converged += 1;
        let mut feas = [0.0f64; 2];
        let mut g = [0.0f64; 2];
        for i in 0..data.n() {
            model.eval_g(data.row(i), fit.theta.as_slice(), &mut g);
            feas[0] += w.p[i] * g[0];
            feas[1] += w.p[i] * g[1];
        }
        let err = feas[0].abs().max(feas[1].abs());
        worst = worst.max(err);
        ok &= err <= 1e-8 && w.p.iter().all(|&p| p > 0.0);
    }
    Check {
        name: "EL feasibility on converged cases",
        passed: ok && converged > 0,
        detail: format!("max |Σ p_i g_i| = {worst:.2e} over {converged} converged cases (tol 1e-8)"),
    }
}

/// Runs all checks, printing one line each; returns true when all pass.
pub fn run_selftest() -> bool {
    let checks = [
        derivative_checks(),
        quantile_brute_force(),
        w_influence_mean_zero(),
        just_identified_equivalence(),
        el_feasibility(),
    ];
    let mut all = true;
    for c in &checks {
        println!(
            "{} {} — {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
        all &= c.passed;
    }
    println!(
        "selftest: {}/{} checks passed",
        checks.iter().filter(|c| c.passed).count(),
        checks.len()
    );
    all
}
