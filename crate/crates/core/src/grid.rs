//! Multi-period DC economic dispatch with fixed unit commitment.
//!
//! A [`PowerSystem`] is the JSON-facing description of the network. A
//! [`DispatchModel`] wraps it with the precomputed PTDF matrix and index maps
//! and is what the solve routines work from.

use std::collections::{HashMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gas::GasSystem;
use crate::lp::{self, LpError, LpProblem, LpStatus, Relation, SolverConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("network is disconnected: bus {0} cannot reach the slack bus")]
    DisconnectedNetwork(u32),
    #[error("susceptance matrix is singular")]
    SingularSusceptanceMatrix,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("negative wind value {value} at column {column}")]
    NegativeWind { column: usize, value: f64 },
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: u32,
    #[serde(default)]
    pub slack: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: u32,
    pub from: u32,
    pub to: u32,
    /// Per-unit series reactance.
    pub reactance: f64,
    /// Thermal limits in MW; `None` means unlimited in that direction.
    #[serde(default)]
    pub min_flow: Option<f64>,
    #[serde(default)]
    pub max_flow: Option<f64>,
}

/// One convex cost block: output up to `up_to` MW is charged `marginal` $/MWh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSegment {
    pub up_to: f64,
    pub marginal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: u32,
    pub bus: u32,
    pub p_min: f64,
    pub p_max: f64,
    pub ramp_up: f64,
    pub ramp_down: f64,
    pub startup_ramp: f64,
    pub shutdown_ramp: f64,
    /// Breakpoints must be increasing and end at `p_max`.
    pub cost_segments: Vec<CostSegment>,
    /// Output before the first period; defaults to `p_min * x0`.
    #[serde(default)]
    pub initial_output: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub bus: u32,
    pub demand: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindFarm {
    pub id: u32,
    pub bus: u32,
    /// Installed capacity in MW; used only by the scenario generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Commitment {
    pub generator: u32,
    /// Status before the first period.
    pub initial: u8,
    pub status: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSystem {
    #[serde(default)]
    pub name: String,
    pub periods: usize,
    /// Free-form note on the cost assumption for this instance.
    #[serde(default = "default_cost_model")]
    pub cost_model: String,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
    pub wind_farms: Vec<WindFarm>,
    pub uc_schedule: Vec<Commitment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gas: Option<GasSystem>,
}

fn default_cost_model() -> String {
    "piecewise_linear".to_string()
}

impl PowerSystem {
    /// Number of scenario columns (`W * T`).
    pub fn scenario_width(&self) -> usize {
        self.wind_farms.len() * self.periods
    }

    /// Column labels `w{farm}_t{hour}`, farm-major.
    pub fn scenario_labels(&self) -> Vec<String> {
        self.wind_farms
            .iter()
            .flat_map(|w| (1..=self.periods).map(move |t| format!("w{}_t{}", w.id, t)))
            .collect()
    }

    pub fn slack_bus(&self) -> Option<u32> {
        self.buses.iter().find(|b| b.slack).map(|b| b.id)
    }

    pub fn commitment(&self, generator: u32) -> Option<&Commitment> {
        self.uc_schedule.iter().find(|c| c.generator == generator)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let bad = |msg: String| Err(GridError::InvalidSystem(msg));
        if self.periods == 0 {
            return bad("periods must be at least 1".into());
        }
        let mut bus_ids = HashMap::new();
        for (i, b) in self.buses.iter().enumerate() {
            if bus_ids.insert(b.id, i).is_some() {
                return bad(format!("buses: duplicate id {}", b.id));
            }
        }
        match self.buses.iter().filter(|b| b.slack).count() {
            1 => {}
            n => return bad(format!("buses: expected exactly one slack bus, found {n}")),
        }
        let known = |bus: u32| bus_ids.contains_key(&bus);
        for l in &self.lines {
            if !known(l.from) || !known(l.to) {
                return bad(format!("lines[{}]: unknown endpoint bus", l.id));
            }
            if l.from == l.to {
                return bad(format!("lines[{}]: self loop", l.id));
            }
            if !(l.reactance > 0.0) || !l.reactance.is_finite() {
                return bad(format!("lines[{}].reactance must be positive", l.id));
            }
            if let (Some(lo), Some(hi)) = (l.min_flow, l.max_flow) {
                if lo > hi {
                    return bad(format!("lines[{}]: min_flow exceeds max_flow", l.id));
                }
            }
        }
        let mut gen_ids = HashMap::new();
        for g in &self.generators {
            if gen_ids.insert(g.id, ()).is_some() {
                return bad(format!("generators: duplicate id {}", g.id));
            }
            if !known(g.bus) {
                return bad(format!("generators[{}].bus {} does not exist", g.id, g.bus));
            }
            if !(0.0 <= g.p_min && g.p_min <= g.p_max) {
                return bad(format!("generators[{}]: need 0 <= p_min <= p_max", g.id));
            }
            for (name, r) in [
                ("ramp_up", g.ramp_up),
                ("ramp_down", g.ramp_down),
                ("startup_ramp", g.startup_ramp),
                ("shutdown_ramp", g.shutdown_ramp),
            ] {
                if !(r >= 0.0) {
                    return bad(format!("generators[{}].{name} must be nonnegative", g.id));
                }
            }
            if g.cost_segments.is_empty() {
                return bad(format!("generators[{}].cost_segments is empty", g.id));
            }
            let mut prev_end = 0.0;
            let mut prev_marginal = f64::NEG_INFINITY;
            for (k, s) in g.cost_segments.iter().enumerate() {
                if !(s.up_to > prev_end) || !s.marginal.is_finite() {
                    return bad(format!("generators[{}].cost_segments[{k}]: breakpoints must increase", g.id));
                }
                if s.marginal < prev_marginal {
                    return bad(format!(
                        "generators[{}].cost_segments[{k}]: marginal cost decreases (cost not convex)",
                        g.id
                    ));
                }
                prev_end = s.up_to;
                prev_marginal = s.marginal;
            }
            if (prev_end - g.p_max).abs() > 1e-9 * (1.0 + g.p_max) {
                return bad(format!("generators[{}]: last cost breakpoint must equal p_max", g.id));
            }
            let Some(c) = self.commitment(g.id) else {
                return bad(format!("uc_schedule: no entry for generator {}", g.id));
            };
            if c.status.len() != self.periods {
                return bad(format!(
                    "uc_schedule[{}]: {} periods given, expected {}",
                    g.id,
                    c.status.len(),
                    self.periods
                ));
            }
            if c.initial > 1 || c.status.iter().any(|&x| x > 1) {
                return bad(format!("uc_schedule[{}]: status must be 0 or 1", g.id));
            }
        }
        for c in &self.uc_schedule {
            if !gen_ids.contains_key(&c.generator) {
                return bad(format!("uc_schedule: unknown generator {}", c.generator));
            }
        }
        for (i, d) in self.loads.iter().enumerate() {
            if !known(d.bus) {
                return bad(format!("loads[{i}].bus {} does not exist", d.bus));
            }
            if d.demand.len() != self.periods {
                return bad(format!("loads[{i}].demand has {} entries, expected {}", d.demand.len(), self.periods));
            }
            if d.demand.iter().any(|v| !v.is_finite()) {
                return bad(format!("loads[{i}].demand is not finite"));
            }
        }
        let mut wind_ids = HashMap::new();
        for w in &self.wind_farms {
            if wind_ids.insert(w.id, ()).is_some() {
                return bad(format!("wind_farms: duplicate id {}", w.id));
            }
            if !known(w.bus) {
                return bad(format!("wind_farms[{}].bus {} does not exist", w.id, w.bus));
            }
            if w.capacity.is_some_and(|c| !(c >= 0.0) || !c.is_finite()) {
                return bad(format!("wind_farms[{}].capacity must be finite and nonnegative", w.id));
            }
        }
        if let Some(gas) = &self.gas {
            gas.validate(self).map_err(|e| GridError::InvalidSystem(e.to_string()))?;
        }
        Ok(())
    }
}

/// Injection shift factors: flow on line `l` per MW injected at bus `b` and
/// withdrawn at the slack bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtdfMatrix {
    pub line_ids: Vec<u32>,
    pub bus_ids: Vec<u32>,
    pub slack: usize,
    /// Row-major `lines x buses`.
    pub factors: Vec<f64>,
}

impl PtdfMatrix {
    pub fn get(&self, line: usize, bus: usize) -> f64 {
        self.factors[line * self.bus_ids.len() + bus]
    }

    /// Line flows for a vector of bus injections.
    pub fn flows(&self, injections: &[f64]) -> Vec<f64> {
        let nb = self.bus_ids.len();
        self.factors
            .chunks_exact(nb)
            .map(|row| row.iter().zip(injections).map(|(k, p)| k * p).sum())
            .collect()
    }
}

pub fn compute_ptdf(system: &PowerSystem) -> Result<PtdfMatrix, GridError> {
    let nb = system.buses.len();
    let index: HashMap<u32, usize> = system.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
    let slack_id = system
        .slack_bus()
        .ok_or_else(|| GridError::InvalidSystem("no slack bus".into()))?;
    let slack = index[&slack_id];

    let mut adjacency = vec![Vec::new(); nb];
    for l in &system.lines {
        let (f, t) = (index[&l.from], index[&l.to]);
        adjacency[f].push(t);
        adjacency[t].push(f);
    }
    let mut seen = vec![false; nb];
    let mut queue = VecDeque::from([slack]);
    seen[slack] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adjacency[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(GridError::DisconnectedNetwork(system.buses[i].id));
    }

    // Reduced susceptance matrix with the slack row/column removed.
    let reduced = |i: usize| if i < slack { i } else { i - 1 };
    let nr = nb - 1;
    let mut bmat = nalgebra::DMatrix::<f64>::zeros(nr, nr);
    for l in &system.lines {
        let (f, t) = (index[&l.from], index[&l.to]);
        let y = 1.0 / l.reactance;
        if f != slack {
            bmat[(reduced(f), reduced(f))] += y;
        }
        if t != slack {
            bmat[(reduced(t), reduced(t))] += y;
        }
        if f != slack && t != slack {
            bmat[(reduced(f), reduced(t))] -= y;
            bmat[(reduced(t), reduced(f))] -= y;
        }
    }
    let x = if nr == 0 {
        nalgebra::DMatrix::<f64>::zeros(0, 0)
    } else {
        bmat.clone()
            .lu()
            .try_inverse()
            .ok_or(GridError::SingularSusceptanceMatrix)?
    };
    if x.iter().any(|v| !v.is_finite()) {
        return Err(GridError::SingularSusceptanceMatrix);
    }
    let angle = |bus: usize, inj: usize| -> f64 {
        if bus == slack || inj == slack {
            0.0
        } else {
            x[(reduced(bus), reduced(inj))]
        }
    };
    let mut factors = vec![0.0; system.lines.len() * nb];
    for (li, l) in system.lines.iter().enumerate() {
        let (f, t) = (index[&l.from], index[&l.to]);
        for b in 0..nb {
            factors[li * nb + b] = (angle(f, b) - angle(t, b)) / l.reactance;
        }
    }
    Ok(PtdfMatrix {
        line_ids: system.lines.iter().map(|l| l.id).collect(),
        bus_ids: system.buses.iter().map(|b| b.id).collect(),
        slack,
        factors,
    })
}

/// A validated system with its PTDF matrix and index maps.
#[derive(Debug, Clone)]
pub struct DispatchModel {
    pub system: PowerSystem,
    pub ptdf: PtdfMatrix,
    bus_index: HashMap<u32, usize>,
    gen_bus: Vec<usize>,
    wind_bus: Vec<usize>,
    /// Commitment per generator, `status[g][t]` for `t = 0..=T` (index 0 is the initial state).
    status: Vec<Vec<bool>>,
    /// Net withdrawals by bus and period before wind.
    load_by_bus: Vec<Vec<f64>>,
}

impl DispatchModel {
    pub fn new(system: PowerSystem) -> Result<Self, GridError> {
        system.validate()?;
        let ptdf = compute_ptdf(&system)?;
        let bus_index: HashMap<u32, usize> = system.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
        let gen_bus = system.generators.iter().map(|g| bus_index[&g.bus]).collect();
        let wind_bus = system.wind_farms.iter().map(|w| bus_index[&w.bus]).collect();
        let status = system
            .generators
            .iter()
            .map(|g| {
                let c = system.commitment(g.id).expect("validated");
                std::iter::once(c.initial == 1)
                    .chain(c.status.iter().map(|&s| s == 1))
                    .collect()
            })
            .collect();
        let mut load_by_bus = vec![vec![0.0; system.periods]; system.buses.len()];
        for d in &system.loads {
            let b = bus_index[&d.bus];
            for (t, v) in d.demand.iter().enumerate() {
                load_by_bus[b][t] += v;
            }
        }
        Ok(Self { system, ptdf, bus_index, gen_bus, wind_bus, status, load_by_bus })
    }

    pub fn periods(&self) -> usize {
        self.system.periods
    }

    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.bus_index.get(&id).copied()
    }

    pub fn gen_bus(&self, g: usize) -> usize {
        self.gen_bus[g]
    }

    /// Whether generator `g` is committed in period `t` (0-based).
    pub fn committed(&self, g: usize, t: usize) -> bool {
        self.status[g][t + 1]
    }

    fn initial_output(&self, g: usize) -> f64 {
        let gen = &self.system.generators[g];
        gen.initial_output
            .unwrap_or(if self.status[g][0] { gen.p_min } else { 0.0 })
    }

    pub fn check_wind(&self, wind: &[f64]) -> Result<(), GridError> {
        let expected = self.system.scenario_width();
        if wind.len() != expected {
            return Err(GridError::DimensionMismatch { expected, got: wind.len() });
        }
        if let Some((column, &value)) = wind.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(GridError::NegativeWind { column, value });
        }
        Ok(())
    }

    /// Net injection per bus and period excluding conventional generation.
    fn fixed_injections(&self, wind: &[f64]) -> Vec<Vec<f64>> {
        let t_max = self.periods();
        let mut inj: Vec<Vec<f64>> = self.load_by_bus.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
        for (w, &b) in self.wind_bus.iter().enumerate() {
            for t in 0..t_max {
                inj[b][t] += wind[w * t_max + t];
            }
        }
        inj
    }
}

/// Where the SED variables live inside an assembled LP.
#[derive(Debug, Clone, PartialEq)]
pub struct SedLayout {
    /// `segments[g][t]`: LP columns whose sum is `P_g^t` (empty when decommitted).
    pub segments: Vec<Vec<Vec<usize>>>,
    pub periods: usize,
}

impl SedLayout {
    pub fn output(&self, x: &[f64], g: usize, t: usize) -> f64 {
        self.segments[g][t].iter().map(|&j| x[j]).sum()
    }
}

/// Append the dispatch variables and constraints to `lp`.
pub fn add_sed_to_lp(lp: &mut LpProblem, model: &DispatchModel, wind: &[f64]) -> Result<SedLayout, GridError> {
    model.check_wind(wind)?;
    let sys = &model.system;
    let t_max = sys.periods;
    let ng = sys.generators.len();

    // Generation: one bounded column per cost segment and committed period.
    let mut segments = vec![vec![Vec::new(); t_max]; ng];
    for (g, gen) in sys.generators.iter().enumerate() {
        for t in 0..t_max {
            if !model.committed(g, t) {
                continue;
            }
            let mut start = 0.0;
            for seg in &gen.cost_segments {
                let width = seg.up_to - start;
                let floor = (gen.p_min - start).clamp(0.0, width);
                segments[g][t].push(lp.add_var(seg.marginal, floor, width));
                start = seg.up_to;
            }
        }
    }
    let terms = |g: usize, t: usize, scale: f64| -> Vec<(usize, f64)> {
        segments[g][t].iter().map(|&j| (j, scale)).collect()
    };

    // Power balance.
    let fixed = model.fixed_injections(wind);
    for t in 0..t_max {
        let coeffs: Vec<(usize, f64)> = (0..ng).flat_map(|g| terms(g, t, 1.0)).collect();
        let net_load: f64 = -fixed.iter().map(|r| r[t]).sum::<f64>();
        lp.add_constraint(&coeffs, Relation::Eq, net_load);
    }

    // Line limits: flow column f with bounds [min, max] tied to the PTDF expression.
    for (l, line) in sys.lines.iter().enumerate() {
        if line.min_flow.is_none() && line.max_flow.is_none() {
            continue;
        }
        let lo = line.min_flow.unwrap_or(f64::NEG_INFINITY);
        let hi = line.max_flow.unwrap_or(f64::INFINITY);
        for t in 0..t_max {
            let mut coeffs = Vec::new();
            for g in 0..ng {
                let k = model.ptdf.get(l, model.gen_bus[g]);
                if k.abs() > 1e-12 {
                    coeffs.extend(terms(g, t, k));
                }
            }
            let offset: f64 = fixed.iter().enumerate().map(|(b, r)| model.ptdf.get(l, b) * r[t]).sum();
            let f = lp.add_var(0.0, lo, hi);
            coeffs.push((f, -1.0));
            lp.add_constraint(&coeffs, Relation::Eq, -offset);
        }
    }

    // Ramping: P^t - P^{t-1} = r with r bounded by the commitment-dependent limits.
    for (g, gen) in sys.generators.iter().enumerate() {
        for t in 0..t_max {
            let x_now = f64::from(u8::from(model.status[g][t + 1]));
            let x_prev = f64::from(u8::from(model.status[g][t]));
            let lo = -gen.ramp_down * x_now - gen.shutdown_ramp * (x_prev - x_now) - gen.p_max * (1.0 - x_prev);
            let hi = gen.ramp_up * x_prev + gen.startup_ramp * (x_now - x_prev) + gen.p_max * (1.0 - x_now);
            let mut coeffs = terms(g, t, 1.0);
            let mut constant = 0.0;
            if t == 0 {
                constant -= model.initial_output(g);
            } else {
                coeffs.extend(terms(g, t - 1, -1.0));
            }
            // Skip rows the generation bounds already imply.
            let range = |committed: bool| if committed { (gen.p_min, gen.p_max) } else { (0.0, 0.0) };
            let (now_lo, now_hi) = range(model.committed(g, t));
            let (prev_lo, prev_hi) = if t == 0 {
                let p0 = model.initial_output(g);
                (p0, p0)
            } else {
                range(model.committed(g, t - 1))
            };
            let implied = lo <= now_lo - prev_hi && now_hi - prev_lo <= hi;
            if !implied {
                let r = lp.add_var(0.0, lo, hi);
                coeffs.push((r, -1.0));
                lp.add_constraint(&coeffs, Relation::Eq, -constant);
            }
        }
    }

    Ok(SedLayout { segments, periods: t_max })
}

pub fn build_sed_lp(model: &DispatchModel, wind: &[f64]) -> Result<(LpProblem, SedLayout), GridError> {
    let mut lp = LpProblem::new();
    let layout = add_sed_to_lp(&mut lp, model, wind)?;
    Ok((lp, layout))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSolution {
    pub status: LpStatus,
    /// Minimum production cost in $; present only when optimal.
    pub cost: Option<f64>,
    /// `generation[g][t]` in MW.
    pub generation: Vec<Vec<f64>>,
    /// `flows[l][t]` in MW.
    pub flows: Vec<Vec<f64>>,
    pub iterations: usize,
}

impl DispatchSolution {
    pub(crate) fn from_lp(model: &DispatchModel, wind: &[f64], layout: &SedLayout, sol: &lp::LpSolution) -> Self {
        let t_max = model.periods();
        let ng = model.system.generators.len();
        if sol.status != LpStatus::Optimal {
            return Self { status: sol.status, cost: None, generation: Vec::new(), flows: Vec::new(), iterations: sol.iterations };
        }
        let generation: Vec<Vec<f64>> = (0..ng).map(|g| (0..t_max).map(|t| layout.output(&sol.x, g, t)).collect()).collect();
        let mut inj = model.fixed_injections(wind);
        for g in 0..ng {
            for t in 0..t_max {
                inj[model.gen_bus[g]][t] += generation[g][t];
            }
        }
        let nl = model.system.lines.len();
        let mut flows = vec![vec![0.0; t_max]; nl];
        for t in 0..t_max {
            let column: Vec<f64> = inj.iter().map(|r| r[t]).collect();
            for (l, f) in model.ptdf.flows(&column).into_iter().enumerate() {
                flows[l][t] = f;
            }
        }
        Self { status: sol.status, cost: Some(sol.objective), generation, flows, iterations: sol.iterations }
    }

    /// Largest per-period power balance residual in MW.
    pub fn balance_residual(&self, model: &DispatchModel, wind: &[f64]) -> f64 {
        let fixed = model.fixed_injections(wind);
        (0..model.periods())
            .map(|t| {
                let gen: f64 = self.generation.iter().map(|g| g[t]).sum();
                let other: f64 = fixed.iter().map(|r| r[t]).sum();
                (gen + other).abs()
            })
            .fold(0.0, f64::max)
    }
}

pub fn solve_model(model: &DispatchModel, wind: &[f64], config: &SolverConfig) -> Result<DispatchSolution, GridError> {
    let (lp, layout) = build_sed_lp(model, wind)?;
    let sol = lp::solve(&lp, config)?;
    Ok(DispatchSolution::from_lp(model, wind, &layout, &sol))
}

/// Build, solve and decode the dispatch LP for one wind realisation.
pub fn solve_sed(system: &PowerSystem, wind: &[f64], config: &SolverConfig) -> Result<DispatchSolution, GridError> {
    let model = DispatchModel::new(system.clone())?;
    solve_model(&model, wind, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostOutcome {
    pub status: LpStatus,
    pub cost: Option<f64>,
}

/// Solve every scenario row; the output order matches the input order.
pub fn batch_solve(model: &DispatchModel, scenarios: &[Vec<f64>], config: &SolverConfig) -> Vec<Result<CostOutcome, GridError>> {
    scenarios
        .par_iter()
        .map(|row| solve_model(model, row, config).map(|s| CostOutcome { status: s.status, cost: s.cost }))
        .collect()
}
