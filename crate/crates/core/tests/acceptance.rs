//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. Runs as a plain binary so the lines print under `cargo test`.

mod common;

use std::time::Instant;

use cemee::estimate::{
    estimating_function_direct, estimating_function_indirect, fit, EstimatingSystem, Estimator, EstimatorOptions,
    FitResult,
};
use cemee::harness::{run_experiment, CellReport, CellSpec, ExperimentPlan, ReplicationReport};
use cemee::panel::{build_design, write_panel, ClusterPanel};
use cemee::simulate::{
    generate_scenario, sample_markov_states, sample_truncated_normal, shift_constant, true_indirect_effect,
    true_marginal_effect, Scenario, ScenarioConfig,
};
use cemee::variance::{covariance, SmallSample};
use cemee::weights::ReferencePolicy;
use common::brute::{brute_direct, brute_indirect, empirical, random_theta, tiny_panel};
use common::{random_panel, rng, Shape};
use nalgebra::DVector;
use rand::Rng;

const SEED: u64 = 20_240_611;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn within(x: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&x)
}

fn describe(c: &CellReport) -> String {
    let s = &c.summary;
    format!(
        "{} {}: bias {:+.2e}, SE {:.4}, empSD {:.4}, CP {:.3} (n={}, failed {})",
        c.spec.generator.scenario, c.estimator, s.bias, s.se, s.emp_sd, s.cp, s.n, c.failures
    )
}

fn cell(scenario: Scenario) -> CellSpec {
    CellSpec::new(ScenarioConfig::new(scenario, 50, 20))
}

fn criterion_1() -> Verdict {
    let one = true_marginal_effect(&ScenarioConfig::new(Scenario::I, 50, 20)).unwrap();
    let four = true_indirect_effect(&ScenarioConfig::new(Scenario::IV, 50, 20));
    verdict(
        (one - 0.47703).abs() < 5e-4 && four == -0.1,
        format!("Scenario I truth {one:.5} (target 0.47703 ± 5e-4); Scenario IV indirect truth {four}"),
    )
}

fn table_one() -> ReplicationReport {
    let plan = ExperimentPlan::new(vec![cell(Scenario::I), cell(Scenario::II), cell(Scenario::III)], 500, SEED);
    run_experiment(&plan).expect("table one plan runs")
}

fn criterion_2(report: &ReplicationReport) -> Verdict {
    let rows = [report.find(0, Estimator::CemeeDirect).unwrap(), report.find(0, Estimator::Emee).unwrap()];
    let pass = rows.iter().all(|c| c.summary.bias.abs() < 0.01 && within(c.summary.cp, 0.92, 0.97));
    verdict(pass, rows.map(describe).join("; "))
}

fn criterion_3(report: &ReplicationReport) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for k in [1, 2] {
        let c = report.find(k, Estimator::CemeeDirect).unwrap();
        let e = report.find(k, Estimator::Emee).unwrap();
        pass &= within(c.summary.cp, 0.90, 0.97) && e.summary.cp < 0.75;
        parts.push(describe(c));
        parts.push(describe(e));
    }
    verdict(pass, parts.join("; "))
}

fn criterion_4() -> Verdict {
    let plan = ExperimentPlan::new(vec![cell(Scenario::IV)], 500, SEED).with_estimators(vec![Estimator::CemeeIndirect]);
    let report = run_experiment(&plan).expect("indirect plan runs");
    let c = report.find(0, Estimator::CemeeIndirect).unwrap();
    verdict(c.summary.bias.abs() < 0.005 && within(c.summary.cp, 0.92, 0.97), describe(c))
}

fn criterion_5() -> Verdict {
    let mut cells = Vec::new();
    for policy in [ReferencePolicy::AlwaysTreat, ReferencePolicy::ObservedDistribution] {
        let mut c = cell(Scenario::LagII);
        c.generator.reference_policy = policy;
        cells.push(c);
    }
    let plan = ExperimentPlan::new(cells, 300, SEED).with_estimators(vec![Estimator::CemeeDirect]);
    let report = run_experiment(&plan).expect("lag plan runs");
    let st = report.find(0, Estimator::CemeeDirect).unwrap();
    let otd = report.find(1, Estimator::CemeeDirect).unwrap();
    let ok = |c: &CellReport| c.summary.bias.abs() < 0.02 && within(c.summary.cp, 0.90, 0.98);
    // One (M, G) cell is run, so "≥ 90% of cells" means this cell.
    let larger = st.summary.se > otd.summary.se;
    verdict(
        ok(st) && ok(otd) && larger,
        format!(
            "ST truth {:.5} {}; OTD truth {:.5} {}; ST SE > OTD SE in {}/1 cells",
            st.truth,
            describe(st),
            otd.truth,
            describe(otd),
            usize::from(larger)
        ),
    )
}

fn both(panel: &ClusterPanel) -> (FitResult, FitResult) {
    let options = EstimatorOptions::new(Estimator::CemeeDirect);
    let c = fit(panel, &common::moderator(), &common::control(), &options).unwrap();
    let e = fit(panel, &common::moderator(), &common::control(), &EstimatorOptions { estimator: Estimator::Emee, ..options }).unwrap();
    (c, e)
}

fn criterion_6() -> Verdict {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let panel = random_panel(SEED + seed, Shape { clusters: 8, max_size: 4, equal: true, horizon: 10, unavailable: 0.1 });
        let (c, e) = both(&panel);
        worst = worst.max((&c.beta - &e.beta).amax());
    }
    let mut singleton_worst: f64 = 0.0;
    for seed in 0..20u64 {
        let panel = random_panel(SEED + 500 + seed, Shape { clusters: 15, max_size: 1, equal: true, horizon: 10, unavailable: 0.1 });
        let (c, e) = both(&panel);
        let mut gap = |a: &[f64], b: &[f64]| {
            for (x, y) in a.iter().zip(b) {
                singleton_worst = singleton_worst.max((x - y).abs() / x.abs().max(y.abs()).max(1.0));
            }
        };
        gap(c.alpha.as_slice(), e.alpha.as_slice());
        gap(c.beta.as_slice(), e.beta.as_slice());
        gap(c.bread.as_slice(), e.bread.as_slice());
        for (u, v) in c.contributions.iter().zip(&e.contributions) {
            gap(u.score.as_slice(), v.score.as_slice());
        }
        for mode in [SmallSample::Never, SmallSample::Always] {
            let (a, b) = (covariance(&c, mode).unwrap(), covariance(&e, mode).unwrap());
            gap(a.covariance.as_slice(), b.covariance.as_slice());
        }
    }
    verdict(
        worst < 1e-8 && singleton_worst < 1e-12,
        format!("equal sizes: max |β̂ diff| {worst:.1e} over 100 panels; singletons: max rel. diff {singleton_worst:.1e} over 20 panels"),
    )
}

fn criterion_7() -> Verdict {
    let (mut worst, mut direct, mut indirect): (f64, usize, usize) = (0.0, 0, 0);
    let policies = [ReferencePolicy::ObservedDistribution, ReferencePolicy::AlwaysTreat, ReferencePolicy::FixedProbability(0.3)];
    let mut seed = 0u64;
    while direct < 20 || indirect < 20 {
        let panel = tiny_panel(SEED + seed);
        let theta = random_theta(seed);
        let delta = 1 + (seed as usize % 2);
        let policy = policies[seed as usize % 3];
        seed += 1;
        let pt = empirical(&panel, delta);
        if !(pt > 0.0 && pt < 1.0) {
            continue;
        }
        let design = build_design(&panel, &common::moderator(), &common::control(), delta).unwrap();
        let th = DVector::from_vec(theta.clone());
        let mut gap = |got: &DVector<f64>, want: &[f64]| {
            for (g, w) in got.iter().zip(want) {
                worst = worst.max((g - w).abs() / g.abs().max(w.abs()).max(1.0));
            }
        };
        if direct < 20 {
            let options = EstimatorOptions::new(Estimator::CemeeDirect).with_delta(delta).with_policy(policy);
            let v = estimating_function_direct(&design, &th, &options).unwrap().value;
            gap(&v, &brute_direct(&panel, &theta, delta, policy, pt, true));
            direct += 1;
        }
        if indirect < 20 && panel.clusters.iter().any(|c| c.members.len() > 1) {
            let options = EstimatorOptions::new(Estimator::CemeeIndirect).with_delta(delta).with_policy(policy);
            let v = estimating_function_indirect(&design, &th, &options).unwrap().value;
            let joint = [[(1.0 - pt) * (1.0 - pt), (1.0 - pt) * pt], [pt * (1.0 - pt), pt * pt]];
            gap(&v, &brute_indirect(&panel, &theta, delta, policy, joint));
            indirect += 1;
        }
    }
    verdict(worst <= 1e-12, format!("{direct} direct + {indirect} indirect tiny panels, max rel. diff {worst:.1e}"))
}

fn criterion_8() -> Verdict {
    // Jacobian against central differences.
    let mut jac_worst: f64 = 0.0;
    for seed in 0..10u64 {
        let panel = random_panel(SEED + 900 + seed, Shape { clusters: 6, max_size: 4, equal: false, horizon: 8, unavailable: 0.1 });
        let mut r = rng(seed);
        let theta = DVector::from_fn(5, |_, _| r.random_range(-0.4..0.4));
        for estimator in [Estimator::CemeeDirect, Estimator::CemeeIndirect] {
            let design = build_design(&panel, &common::moderator(), &common::control(), 1).unwrap();
            let Ok(system) = EstimatingSystem::new(&design, &EstimatorOptions::new(estimator)) else { continue };
            let jac = system.jacobian(&theta).unwrap();
            for c in 0..5 {
                let (mut up, mut down) = (theta.clone(), theta.clone());
                up[c] += 1e-6;
                down[c] -= 1e-6;
                let fd = (system.value(&up).unwrap() - system.value(&down).unwrap()) / 2e-6;
                for r in 0..5 {
                    jac_worst = jac_worst.max((jac[(r, c)] - fd[r]).abs() / jac[(r, c)].abs().max(1e-3));
                }
            }
        }
    }
    let mut r = rng(SEED);
    let params = Scenario::II.default_random_effect();
    let shift = shift_constant(&params).unwrap();
    let n = 1_000_000;
    let mgf_re = (0..n).map(|_| (sample_truncated_normal(&params, &mut r) + shift).exp()).sum::<f64>() / n as f64;

    let config = ScenarioConfig::new(Scenario::IV, 200, 20).with_seed(SEED);
    let panel = generate_scenario(&config).unwrap();
    let col = panel.column_index("n_treated_others").unwrap();
    let (mut sum, mut count) = (0.0, 0.0);
    for (_, m) in panel.individuals() {
        for row in &m.rows {
            sum += (config.beta20 * row.state[col]).exp();
            count += 1.0;
        }
    }
    let mgf = (config.p_rand * config.beta20.exp() + 1.0 - config.p_rand).powi(19);
    let mgf_ratio = sum / count / mgf;

    let mut counts = [0usize; 3];
    for _ in 0..2000 {
        for z in sample_markov_states(500, &mut r) {
            counts[z as usize] += 1;
        }
    }
    let shares = counts.map(|c| c as f64 / 1e6);
    let markov = shares.iter().map(|s| (s - 1.0 / 3.0).abs()).fold(0.0, f64::max);

    verdict(
        jac_worst <= 1e-5 && (mgf_re - 1.0).abs() < 0.005 && (mgf_ratio - 1.0).abs() < 0.01 && markov < 0.005,
        format!(
            "Jacobian max rel. err {jac_worst:.1e}; E[exp(e')] = {mgf_re:.4}; peer MGF ratio {mgf_ratio:.4}; \
             stationary shares {:.4}/{:.4}/{:.4}",
            shares[0], shares[1], shares[2]
        ),
    )
}

fn criterion_9() -> Verdict {
    let pools = [1, 4].map(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap());
    let outputs: Vec<(Vec<u8>, Vec<u8>, Vec<u8>)> = pools
        .iter()
        .map(|pool| {
            pool.install(|| {
                let mut csv = Vec::new();
                let panel = generate_scenario(&ScenarioConfig::new(Scenario::IV, 30, 8).with_seed(SEED)).unwrap();
                write_panel(&panel, &mut csv).unwrap();
                let plan = ExperimentPlan::new(vec![CellSpec::new(ScenarioConfig::new(Scenario::II, 20, 6))], 40, SEED)
                    .with_estimators(vec![Estimator::CemeeDirect, Estimator::Emee, Estimator::CemeeIndirect]);
                let report = run_experiment(&plan).unwrap();
                let mut table = Vec::new();
                report.write_csv(&mut table).unwrap();
                (csv, table, serde_json::to_vec(&report).unwrap())
            })
        })
        .collect();
    let same = outputs[0] == outputs[1];
    verdict(
        same,
        format!(
            "1 vs 4 threads: panel CSV {} bytes, report table {} bytes, report JSON {} bytes, identical: {same}",
            outputs[0].0.len(),
            outputs[0].1.len(),
            outputs[0].2.len()
        ),
    )
}

fn main() {
    let start = Instant::now();
    let mut failed = 0;
    let mut report = |n: usize, f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let v = f();
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {n}: {} [{:.1}s] {}",
            if v.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            v.detail
        );
    };
    report(1, &mut criterion_1);
    let mut table = None;
    report(2, &mut || {
        let t = table.get_or_insert_with(table_one);
        criterion_2(t)
    });
    report(3, &mut || criterion_3(table.as_ref().unwrap()));
    report(4, &mut criterion_4);
    report(5, &mut criterion_5);
    report(6, &mut criterion_6);
    report(7, &mut criterion_7);
    report(8, &mut criterion_8);
    report(9, &mut criterion_9);
    println!("acceptance: {} of 9 criteria passed in {:.0}s", 9 - failed, start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
