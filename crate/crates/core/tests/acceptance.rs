//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::ffi::{OsStr, OsString};
use std::process::Command;
use std::time::Instant;

use common::*;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use sedpce::gas::{solve_ied, GasSystem, SlpConfig};
use sedpce::grid::{batch_solve, compute_ptdf, solve_model, DispatchModel};
use sedpce::lp::{self, LpStatus, SolverConfig};
use sedpce::orthopoly::{build_bases, build_multi_index_set, eval_terms, monic_orthogonal_coeffs, MultiIndex};
use sedpce::scenarios::{synthesize, SynthConfig};
use sedpce::sparse_fit::{loo_mse, omp_fit, FitConfig, OmpOptions, RegressionDesign};
use sedpce::transforms::{fit_whitener, MomentTable};
use sedpce::uq::{compare_moments, empirical_stats, sample_training_design, SurrogateModel, UqReport};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for moments in [uniform_moments(10), normal_moments(10)] {
        let oracle = gram_schmidt_monic(&moments, 5);
        for (l, want) in oracle.iter().enumerate() {
            let (got, _) = monic_orthogonal_coeffs(&moments, l).map_err(|e| e.to_string())?;
            for (g, w) in got.iter().zip(want) {
                worst = worst.max((g - w).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst <= 1e-10 && secs < 1.0, format!("max coefficient error {worst:.2e}, {secs:.3} s"))
}

fn criterion_2() -> Outcome {
    let mut r = rng(2);
    let low = Normal::new(-2.0, 0.5).unwrap();
    let high = Normal::new(1.5, 1.0).unwrap();
    let raw: Vec<Vec<f64>> = (0..10_000)
        .map(|_| vec![if r.random_bool(0.4) { low.sample(&mut r) } else { high.sample(&mut r) }])
        .collect();
    let w = fit_whitener(&raw, 1.0).map_err(|e| e.to_string())?;
    let xi = w.transform_all(&raw).map_err(|e| e.to_string())?;
    let table = MomentTable::from_rows(&xi, 10).map_err(|e| e.to_string())?;
    let basis = &build_bases(&table, 5).map_err(|e| e.to_string())?[0];
    let n = xi.len() as f64;
    let values: Vec<Vec<f64>> = (0..=5).map(|l| xi.iter().map(|x| basis.eval(l, x[0])).collect()).collect();
    let avg = |f: &dyn Fn(usize) -> f64| (0..xi.len()).map(f).sum::<f64>() / n;
    let norm: Vec<f64> = (0..=5).map(|l| avg(&|i| values[l][i] * values[l][i]).sqrt()).collect();
    let mut worst_mean: f64 = 0.0;
    let mut worst_pair: f64 = 0.0;
    for l in 1..=5 {
        worst_mean = worst_mean.max(avg(&|i| values[l][i]).abs() / norm[l]);
        for m in 1..l {
            worst_pair = worst_pair.max(avg(&|i| values[l][i] * values[m][i]).abs() / (norm[l] * norm[m]));
        }
    }
    check(
        worst_mean <= 1e-6 && worst_pair <= 1e-6,
        format!("mean residual {worst_mean:.2e}, orthogonality residual {worst_pair:.2e}"),
    )
}

fn criterion_3() -> Outcome {
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = r.random_range(5..=30);
        let p = r.random_range(1..=(n - 2).min(6));
        let cols: Vec<Vec<f64>> = (0..p).map(|_| (0..n).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let fast = loo_mse(&cols, &y).map_err(|e| e.to_string())?;
        let slow = explicit_loo_mse(&cols, &y);
        worst = worst.max((fast - slow).abs() / slow.max(1.0));
    }
    check(worst <= 1e-10, format!("max shortcut-vs-retraining gap {worst:.2e} over 100 regressions"))
}

fn criterion_4() -> Outcome {
    let set = build_multi_index_set(10, 3, 0.75, 2).map_err(|e| e.to_string())?;
    let mut recovered = 0;
    let mut worst_coef: f64 = 0.0;
    for trial in 0..100u64 {
        let mut r = rng(4000 + trial);
        let xi: Vec<Vec<f64>> = (0..200).map(|_| (0..10).map(|_| StandardNormal.sample(&mut r)).collect()).collect();
        let table = MomentTable::from_rows(&xi, 6).map_err(|e| e.to_string())?;
        let bases = build_bases(&table, 3).map_err(|e| e.to_string())?;
        let planted: Vec<MultiIndex> = set.indices.choose_multiple(&mut r, 5).cloned().collect();
        let coefs: Vec<f64> = (0..5)
            .map(|_| {
                let m: f64 = r.random_range(0.5..2.0);
                if r.random_bool(0.5) { m } else { -m }
            })
            .collect();
        let y: Vec<f64> = xi
            .iter()
            .map(|x| {
                let v = eval_terms(&bases, &planted, x).unwrap();
                let e: f64 = StandardNormal.sample(&mut r);
                v.iter().zip(&coefs).map(|(a, b)| a * b).sum::<f64>() + 1e-3 * e
            })
            .collect();
        let design = RegressionDesign::from_bases(&bases, set.indices.clone(), &xi, y).map_err(|e| e.to_string())?;
        let fit = omp_fit(&design, &OmpOptions { max_terms: 100, loo_target: 1e-6, patience: 10 })
            .map_err(|e| e.to_string())?;
        let mut same = fit.indices.len() == planted.len();
        for (idx, c) in planted.iter().zip(&coefs) {
            match fit.indices.iter().position(|i| i == idx) {
                Some(k) => worst_coef = worst_coef.max((fit.coefficients[k] - c).abs()),
                None => same = false,
            }
        }
        if same {
            recovered += 1;
        }
    }
    check(
        recovered >= 95 && worst_coef <= 1e-2,
        format!("support recovered in {recovered}/100 trials, max coefficient error {worst_coef:.2e}"),
    )
}

fn criterion_5() -> Outcome {
    let mut r = rng(5);
    let cfg = SolverConfig::default();
    let mut worst_lp: f64 = 0.0;
    let mut mismatched = 0;
    for _ in 0..50 {
        let problem = random_lp(&mut r);
        let sol = lp::solve(&problem, &cfg).map_err(|e| e.to_string())?;
        match (vertex_optimum(&problem), sol.status) {
            (Some(best), LpStatus::Optimal) => worst_lp = worst_lp.max((sol.objective - best).abs() / (1.0 + best.abs())),
            (None, LpStatus::Infeasible) => {}
            _ => mismatched += 1,
        }
    }
    let mut worst_flow: f64 = 0.0;
    for _ in 0..20 {
        let nb = r.random_range(2..=10);
        let sys = random_network(&mut r, nb);
        let ptdf = compute_ptdf(&sys).map_err(|e| e.to_string())?;
        let mut inj: Vec<f64> = (0..nb).map(|_| r.random_range(-100.0..100.0)).collect();
        inj[0] = -inj[1..].iter().sum::<f64>();
        for (g, w) in ptdf.flows(&inj).iter().zip(dc_flows(&sys, &inj)) {
            worst_flow = worst_flow.max((g - w).abs());
        }
    }
    check(
        mismatched == 0 && worst_lp <= 1e-8 && worst_flow <= 1e-9,
        format!("LP gap {worst_lp:.2e} ({mismatched} status mismatches), PTDF flow gap {worst_flow:.2e} MW"),
    )
}

fn criterion_6() -> Outcome {
    let sys = sedpce::io::load_system(&fixture_path("gas_toy.json")).map_err(|e| e.to_string())?;
    let model = DispatchModel::new(sys).map_err(|e| e.to_string())?;
    let s = solve_ied(&model, &[], &SolverConfig::default(), &SlpConfig::default()).map_err(|e| e.to_string())?;
    let mut plain = five_bus();
    let wind = synthesize(&plain, 1, &SynthConfig::default(), 6).map_err(|e| e.to_string())?.rows.remove(0);
    plain.gas = Some(GasSystem::default());
    let model = DispatchModel::new(plain).map_err(|e| e.to_string())?;
    let with_empty = solve_ied(&model, &wind, &SolverConfig::default(), &SlpConfig::default()).map_err(|e| e.to_string())?;
    let electric = solve_model(&model, &wind, &SolverConfig::default()).map_err(|e| e.to_string())?;
    let same = with_empty.dispatch == electric;
    check(
        s.weymouth_residual <= 1e-6 && s.slp_iterations <= 20 && same,
        format!(
            "toy residual {:.2e} after {} iterations, empty-gas dispatch identical: {same}",
            s.weymouth_residual, s.slp_iterations
        ),
    )
}

struct Study {
    mc_seconds: f64,
    predict_seconds: f64,
    reports: Vec<UqReport>,
}

fn criterion_7(study: &mut Option<Study>) -> Outcome {
    let start = Instant::now();
    let sys = five_bus();
    let data = synthesize(&sys, 10_000, &SynthConfig::default(), 2024).map_err(|e| e.to_string())?;
    let model = DispatchModel::new(sys).map_err(|e| e.to_string())?;
    let t = Instant::now();
    let outcomes = batch_solve(&model, &data.rows, &SolverConfig::default());
    let mc_seconds = t.elapsed().as_secs_f64();
    let costs: Vec<f64> = outcomes
        .iter()
        .map(|o| o.as_ref().ok().and_then(|o| o.cost).ok_or("scenario without optimal dispatch"))
        .collect::<Result<_, _>>()?;
    let mc = UqReport::from_values(&costs, mc_seconds).map_err(|e| e.to_string())?;
    let mut reports = vec![mc.clone()];
    let mut lines = Vec::new();
    let mut pass = true;
    let mut predict_seconds = f64::INFINITY;
    let m = data.width();
    for (factor, sigma_limit) in [(2.5, 5.0), (9.0, 2.0)] {
        let n_train = (factor * m as f64).round() as usize;
        let (train, _) = sample_training_design(data.len(), n_train, 7).map_err(|e| e.to_string())?;
        let y: Vec<f64> = train.iter().map(|&i| costs[i]).collect();
        let surrogate = SurrogateModel::fit(&data.rows, &train, &y, &FitConfig::default(), 1.0, 7)
            .map_err(|e| e.to_string())?;
        let t = Instant::now();
        let pred = surrogate.predict(&data.rows).map_err(|e| e.to_string())?;
        predict_seconds = predict_seconds.min(t.elapsed().as_secs_f64());
        let (mean, std) = empirical_stats(&pred).map_err(|e| e.to_string())?;
        let (dmu, dsigma) = compare_moments(mc.mean, mc.std, mean, std).map_err(|e| e.to_string())?;
        reports.push(UqReport::from_values(&pred, 0.0).map_err(|e| e.to_string())?);
        pass &= dmu <= 0.1 && dsigma <= sigma_limit;
        lines.push(format!(
            "N={n_train}: dmu {dmu:.2e}% dsigma {dsigma:.2e}% (D={}, {} terms)",
            surrogate.expansion.degree,
            surrogate.expansion.indices.len()
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs <= 300.0;
    *study = Some(Study { mc_seconds, predict_seconds, reports });
    check(
        pass,
        format!("MC mean {:.1} std {:.1}; {}; {secs:.1} s", mc.mean, mc.std, lines.join("; ")),
    )
}

fn criterion_8(study: &Option<Study>) -> Outcome {
    let s = study.as_ref().ok_or("end-to-end study did not run")?;
    let speedup = s.mc_seconds / s.predict_seconds;
    check(
        speedup >= 10.0,
        format!("batch solve {:.3} s, predict {:.4} s, speedup {speedup:.0}x", s.mc_seconds, s.predict_seconds),
    )
}

fn criterion_9(study: &Option<Study>) -> Outcome {
    let s = study.as_ref().ok_or("end-to-end study did not run")?;
    for r in &s.reports {
        r.check().map_err(|e| e.to_string())?;
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let system = fixture_path("five_bus.json");
    let wind = dir.path().join("wind.csv");
    let sedpce = |args: Vec<OsString>| -> Result<(), String> {
        let out = Command::new(env!("CARGO_BIN_EXE_sedpce")).args(args).output().map_err(|e| e.to_string())?;
        if out.status.success() {
            Ok(())
        } else {
            Err(String::from_utf8_lossy(&out.stderr).into_owned())
        }
    };
    let args = |list: &[&dyn AsRef<OsStr>]| list.iter().map(|a| a.as_ref().to_os_string()).collect::<Vec<_>>();
    sedpce(args(&[&"synth", &"--system", &system, &"--rows", &"2000", &"--out", &wind]))?;
    let mut bytes = Vec::new();
    for name in ["a.json", "b.json"] {
        let out = dir.path().join(name);
        sedpce(args(&[
            &"mc", &"--system", &system, &"--scenarios", &wind, &"--out", &out, &"--seed", &"7", &"--no-timing",
        ]))?;
        let b = std::fs::read(&out).map_err(|e| e.to_string())?;
        let report: UqReport = serde_json::from_slice(&b).map_err(|e| e.to_string())?;
        report.check().map_err(|e| e.to_string())?;
        bytes.push(b);
    }
    check(
        bytes[0] == bytes[1],
        format!("{} reports pass CDF/PDF checks; mc reruns byte-identical: {}", s.reports.len() + 2, bytes[0] == bytes[1]),
    )
}

fn main() {
    let mut study = None;
    let results: Vec<(usize, &str, Outcome)> = vec![
        (1, "orthogonal polynomial oracle", criterion_1()),
        (2, "empirical orthogonality", criterion_2()),
        (3, "leave-one-out oracle", criterion_3()),
        (4, "sparse recovery", criterion_4()),
        (5, "LP and PTDF oracles", criterion_5()),
        (6, "gas SLP", criterion_6()),
        (7, "end-to-end desk study", criterion_7(&mut study)),
        (8, "surrogate speedup", criterion_8(&study)),
        (9, "report invariants", criterion_9(&study)),
    ];
    let mut failed = 0;
    for (k, name, res) in &results {
        match res {
            Ok(d) => println!("criterion {k:>2} PASS  {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {k:>2} FAIL  {name}: {d}");
            }
        }
    }
    println!(
        "criterion 10 SKIP  118-bus dataset (optional): the published 118-bus/20-node data is not bundled; \
         fetch it and run the pipeline through the CLI"
    );
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
