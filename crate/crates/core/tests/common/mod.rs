//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sedpce::grid::{Bus, Commitment, CostSegment, Generator, Line, Load, PowerSystem, WindFarm};
use sedpce::lp::{LpProblem, Relation};

pub fn fixture_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

pub fn five_bus() -> PowerSystem {
    sedpce::io::load_system(&fixture_path("five_bus.json")).expect("bundled fixture loads")
}

/// Brute-force optimum over every basic solution of a bounded LP.
/// Returns `None` when no vertex is feasible.
pub fn vertex_optimum(lp: &LpProblem) -> Option<f64> {
    let n = lp.num_vars();
    // hyperplanes a^T x = b: rows, then lower and upper bounds
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for i in 0..lp.num_rows() {
        let mut a = vec![0.0; n];
        for &(r, c, v) in &lp.entries {
            if r == i {
                a[c] += v;
            }
        }
        planes.push((a, lp.rhs[i]));
    }
    for j in 0..n {
        for b in [lp.lower[j], lp.upper[j]] {
            assert!(b.is_finite(), "oracle needs finite bounds");
            let mut a = vec![0.0; n];
            a[j] = 1.0;
            planes.push((a, b));
        }
    }
    let mut best: Option<f64> = None;
    let mut pick: Vec<usize> = (0..n).collect();
    loop {
        let m = DMatrix::from_fn(n, n, |i, j| planes[pick[i]].0[j]);
        let rhs = DVector::from_fn(n, |i, _| planes[pick[i]].1);
        if m.determinant().abs() > 1e-9 {
            if let Some(x) = m.lu().solve(&rhs) {
                let x: Vec<f64> = x.iter().copied().collect();
                if feasible(lp, &x) {
                    let obj: f64 = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
                    best = Some(best.map_or(obj, |b: f64| b.min(obj)));
                }
            }
        }
        if !next_combination(&mut pick, planes.len()) {
            break;
        }
    }
    best
}

fn feasible(lp: &LpProblem, x: &[f64]) -> bool {
    let tol = 1e-9;
    for j in 0..x.len() {
        if x[j] < lp.lower[j] - tol || x[j] > lp.upper[j] + tol {
            return false;
        }
    }
    let act = lp.activities(x);
    act.iter().zip(&lp.rhs).zip(&lp.relations).all(|((a, b), rel)| {
        let t = tol * (1.0 + b.abs());
        match rel {
            Relation::Le => *a <= b + t,
            Relation::Ge => *a >= b - t,
            Relation::Eq => (a - b).abs() <= t,
        }
    })
}

fn next_combination(pick: &mut [usize], n: usize) -> bool {
    let k = pick.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if pick[i] < n - k + i {
            pick[i] += 1;
            for j in i + 1..k {
                pick[j] = pick[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Small bounded LP with integer-valued data.
pub fn random_lp(rng: &mut ChaCha8Rng) -> LpProblem {
    let n = rng.random_range(1..=6);
    let m = rng.random_range(1..=5);
    let mut lp = LpProblem::new();
    for _ in 0..n {
        let lo = rng.random_range(-5..=0) as f64;
        let hi = lo + rng.random_range(1..=8) as f64;
        lp.add_var(rng.random_range(-6..=6) as f64, lo, hi);
    }
    for _ in 0..m {
        let mut coeffs = Vec::new();
        for j in 0..n {
            if rng.random_bool(0.7) {
                coeffs.push((j, rng.random_range(-4..=4) as f64));
            }
        }
        let rel = match rng.random_range(0..5) {
            0 => Relation::Eq,
            1 | 2 => Relation::Ge,
            _ => Relation::Le,
        };
        lp.add_constraint(&coeffs, rel, rng.random_range(-8..=8) as f64);
    }
    lp
}

/// Random connected network: spanning tree plus extra edges, bus 1 slack.
pub fn random_network(rng: &mut ChaCha8Rng, buses: usize) -> PowerSystem {
    let mut lines = Vec::new();
    let mut id = 1;
    for b in 2..=buses as u32 {
        let parent = rng.random_range(1..b);
        lines.push(Line { id, from: parent, to: b, reactance: rng.random_range(0.01..0.2), min_flow: None, max_flow: None });
        id += 1;
    }
    for _ in 0..rng.random_range(0..=buses) {
        let a = rng.random_range(1..=buses as u32);
        let b = rng.random_range(1..=buses as u32);
        if a != b {
            lines.push(Line { id, from: a, to: b, reactance: rng.random_range(0.01..0.2), min_flow: None, max_flow: None });
            id += 1;
        }
    }
    let generators = vec![linear_gen(1, 1, 1e4, 10.0)];
    PowerSystem {
        name: "random".into(),
        periods: 1,
        cost_model: "piecewise_linear".into(),
        buses: (1..=buses as u32).map(|i| Bus { id: i, slack: i == 1 }).collect(),
        lines,
        uc_schedule: vec![Commitment { generator: 1, initial: 1, status: vec![1] }],
        generators,
        loads: vec![],
        wind_farms: vec![],
        gas: None,
    }
}

pub fn linear_gen(id: u32, bus: u32, p_max: f64, marginal: f64) -> Generator {
    Generator {
        id,
        bus,
        p_min: 0.0,
        p_max,
        ramp_up: p_max,
        ramp_down: p_max,
        startup_ramp: p_max,
        shutdown_ramp: p_max,
        cost_segments: vec![CostSegment { up_to: p_max, marginal }],
        initial_output: None,
    }
}

pub fn wind_farm(id: u32, bus: u32) -> WindFarm {
    WindFarm { id, bus, capacity: None }
}

pub fn load(bus: u32, demand: Vec<f64>) -> Load {
    Load { bus, demand }
}

/// DC power flow by solving the reduced susceptance system directly.
pub fn dc_flows(system: &PowerSystem, injections: &[f64]) -> Vec<f64> {
    let nb = system.buses.len();
    let index = |id: u32| system.buses.iter().position(|b| b.id == id).unwrap();
    let slack = system.buses.iter().position(|b| b.slack).unwrap();
    let mut b = DMatrix::<f64>::zeros(nb, nb);
    for l in &system.lines {
        let (f, t) = (index(l.from), index(l.to));
        let y = 1.0 / l.reactance;
        b[(f, f)] += y;
        b[(t, t)] += y;
        b[(f, t)] -= y;
        b[(t, f)] -= y;
    }
    let keep: Vec<usize> = (0..nb).filter(|&i| i != slack).collect();
    let red = DMatrix::from_fn(keep.len(), keep.len(), |i, j| b[(keep[i], keep[j])]);
    let p = DVector::from_fn(keep.len(), |i, _| injections[keep[i]]);
    let theta_red = red.lu().solve(&p).expect("connected network");
    let mut theta = vec![0.0; nb];
    for (k, &i) in keep.iter().enumerate() {
        theta[i] = theta_red[k];
    }
    system.lines.iter().map(|l| (theta[index(l.from)] - theta[index(l.to)]) / l.reactance).collect()
}

/// Monic orthogonal polynomial coefficients by Gram-Schmidt on monomials,
/// with inner products taken from the moment sequence.
pub fn gram_schmidt_monic(moments: &[f64], degree: usize) -> Vec<Vec<f64>> {
    let inner = |p: &[f64], q: &[f64]| -> f64 {
        let mut s = 0.0;
        for (a, pa) in p.iter().enumerate() {
            for (b, qb) in q.iter().enumerate() {
                s += pa * qb * moments[a + b];
            }
        }
        s
    };
    let mut out: Vec<Vec<f64>> = Vec::new();
    for l in 0..=degree {
        let mut p = vec![0.0; l + 1];
        p[l] = 1.0;
        for q in &out {
            let c = inner(&p, q) / inner(q, q);
            for (k, qk) in q.iter().enumerate() {
                p[k] -= c * qk;
            }
        }
        out.push(p);
    }
    out
}

pub fn uniform_moments(order: usize) -> Vec<f64> {
    (0..=order).map(|k| if k % 2 == 1 { 0.0 } else { 1.0 / (k as f64 + 1.0) }).collect()
}

pub fn normal_moments(order: usize) -> Vec<f64> {
    (0..=order).map(|k| if k % 2 == 1 { 0.0 } else { (1..k).step_by(2).map(|v| v as f64).product() }).collect()
}

/// Least-squares fit with row `skip` removed, solved by normal equations.
pub fn retrain_without(columns: &[Vec<f64>], y: &[f64], skip: usize) -> Vec<f64> {
    let keep: Vec<usize> = (0..y.len()).filter(|&i| i != skip).collect();
    let a = DMatrix::from_fn(keep.len(), columns.len(), |i, j| columns[j][keep[i]]);
    let b = DVector::from_fn(keep.len(), |i, _| y[keep[i]]);
    let svd = a.svd(true, true);
    svd.solve(&b, 1e-14).expect("svd solve").iter().copied().collect()
}

/// Leave-one-out mean squared error by explicit retraining.
pub fn explicit_loo_mse(columns: &[Vec<f64>], y: &[f64]) -> f64 {
    let n = y.len();
    (0..n)
        .map(|i| {
            let beta = retrain_without(columns, y, i);
            let pred: f64 = columns.iter().zip(&beta).map(|(c, b)| c[i] * b).sum();
            (y[i] - pred).powi(2)
        })
        .sum::<f64>()
        / n as f64
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
