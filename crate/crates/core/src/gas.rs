//! Gas network coupling for the dispatch problem.
//!
//! The Weymouth relation `g = W * sqrt(pi_from^2 - pi_to^2)` is handled by
//! successive linear programming. Each LP works in squared pressures
//! `u = pi^2`, where the relation reads `g^2 = W^2 (u_from - u_to)`; only the
//! flow square is linearised, which stays well defined at zero flow. Steps are
//! confined to a pressure trust region, pipeline rows carry penalised elastic
//! slacks so a short step never makes the LP infeasible, and a small proximal
//! cost pins pressures that the economics leave undetermined.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{add_sed_to_lp, DispatchModel, DispatchSolution, GridError, PowerSystem, SedLayout};
use crate::lp::{self, LpError, LpProblem, LpStatus, Relation, SolverConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GasError {
    #[error("invalid gas system: {0}")]
    InvalidGas(String),
    #[error("pressure order violated: from-side {from} below to-side {to}")]
    PressureOrderViolation { from: f64, to: f64 },
    #[error("linearisation point has (near) zero flow {0}")]
    ZeroFlowSingularity(f64),
    #[error("SLP did not converge in {iterations} iterations (Weymouth residual {residual:.3e})")]
    SlpNonconvergence { iterations: usize, residual: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasWell {
    pub id: u32,
    pub node: u32,
    /// $ per unit of gas.
    pub cost: f64,
    pub g_min: f64,
    pub g_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasNode {
    pub id: u32,
    pub pressure_min: f64,
    pub pressure_max: f64,
}

/// Passive pipeline; gas flows from `from` to `to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub id: u32,
    pub from: u32,
    pub to: u32,
    pub weymouth: f64,
    pub capacity: f64,
}

/// Compressor drawing from `from` (suction) and delivering to `to`
/// (discharge) with `pi_to <= ratio * pi_from`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compressor {
    pub id: u32,
    pub from: u32,
    pub to: u32,
    pub ratio: f64,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasLoad {
    pub node: u32,
    pub demand: Vec<f64>,
}

/// Gas-fired unit: burns `theta * P_g` at `node`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenCoupling {
    pub generator: u32,
    pub node: u32,
    pub theta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GasSystem {
    #[serde(default)]
    pub wells: Vec<GasWell>,
    #[serde(default)]
    pub nodes: Vec<GasNode>,
    #[serde(default)]
    pub pipelines: Vec<Pipeline>,
    #[serde(default)]
    pub compressors: Vec<Compressor>,
    #[serde(default)]
    pub gas_loads: Vec<GasLoad>,
    #[serde(default)]
    pub gen_coupling: Vec<GenCoupling>,
}

impl GasSystem {
    pub fn is_empty(&self) -> bool {
        self.wells.is_empty() && self.nodes.is_empty() && self.pipelines.is_empty() && self.compressors.is_empty()
    }

    pub fn validate(&self, power: &PowerSystem) -> Result<(), GasError> {
        let bad = |m: String| Err(GasError::InvalidGas(m));
        let mut ids = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if ids.insert(n.id, i).is_some() {
                return bad(format!("gas.nodes: duplicate id {}", n.id));
            }
            if !(0.0 <= n.pressure_min && n.pressure_min <= n.pressure_max) || !n.pressure_max.is_finite() {
                return bad(format!("gas.nodes[{}]: need 0 <= pressure_min <= pressure_max", n.id));
            }
        }
        let known = |id: u32| ids.contains_key(&id);
        for w in &self.wells {
            if !known(w.node) {
                return bad(format!("gas.wells[{}].node {} does not exist", w.id, w.node));
            }
            if !(0.0 <= w.g_min && w.g_min <= w.g_max) || !w.cost.is_finite() {
                return bad(format!("gas.wells[{}]: need 0 <= g_min <= g_max and finite cost", w.id));
            }
        }
        for p in &self.pipelines {
            if !known(p.from) || !known(p.to) || p.from == p.to {
                return bad(format!("gas.pipelines[{}]: bad endpoints", p.id));
            }
            if !(p.weymouth > 0.0) || !(p.capacity >= 0.0) {
                return bad(format!("gas.pipelines[{}]: need weymouth > 0 and capacity >= 0", p.id));
            }
        }
        for c in &self.compressors {
            if !known(c.from) || !known(c.to) || c.from == c.to {
                return bad(format!("gas.compressors[{}]: bad endpoints", c.id));
            }
            if !(c.ratio >= 1.0) || !(c.capacity >= 0.0) {
                return bad(format!("gas.compressors[{}]: need ratio >= 1 and capacity >= 0", c.id));
            }
        }
        for (i, d) in self.gas_loads.iter().enumerate() {
            if !known(d.node) {
                return bad(format!("gas.gas_loads[{i}].node {} does not exist", d.node));
            }
            if d.demand.len() != power.periods || d.demand.iter().any(|v| !v.is_finite()) {
                return bad(format!("gas.gas_loads[{i}].demand must have {} finite entries", power.periods));
            }
        }
        for c in &self.gen_coupling {
            if !known(c.node) {
                return bad(format!("gas.gen_coupling: node {} does not exist", c.node));
            }
            if !power.generators.iter().any(|g| g.id == c.generator) {
                return bad(format!("gas.gen_coupling: generator {} does not exist", c.generator));
            }
            if !(c.theta >= 0.0) {
                return bad(format!("gas.gen_coupling[{}]: theta must be nonnegative", c.generator));
            }
        }
        Ok(())
    }
}

/// Steady-state pipeline flow for the given end pressures.
pub fn weymouth_flow(weymouth: f64, p_from: f64, p_to: f64) -> Result<f64, GasError> {
    if p_from < p_to {
        return Err(GasError::PressureOrderViolation { from: p_from, to: p_to });
    }
    Ok(weymouth * (p_from * p_from - p_to * p_to).sqrt())
}

/// First-order expansion `g ~ d_from * pi_from + d_to * pi_to + constant`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeymouthTangent {
    pub d_from: f64,
    pub d_to: f64,
    pub constant: f64,
}

impl WeymouthTangent {
    pub fn eval(&self, p_from: f64, p_to: f64) -> f64 {
        self.d_from * p_from + self.d_to * p_to + self.constant
    }
}

const ZERO_FLOW: f64 = 1e-12;

/// Tangent plane of the Weymouth surface at `(p_from, p_to)` with flow `flow`.
pub fn linearize_weymouth(weymouth: f64, p_from: f64, p_to: f64, flow: f64) -> Result<WeymouthTangent, GasError> {
    if p_from < p_to {
        return Err(GasError::PressureOrderViolation { from: p_from, to: p_to });
    }
    if !(flow > ZERO_FLOW) {
        return Err(GasError::ZeroFlowSingularity(flow));
    }
    let w2 = weymouth * weymouth;
    Ok(WeymouthTangent {
        d_from: w2 * p_from / flow,
        d_to: -w2 * p_to / flow,
        constant: flow - w2 * (p_from * p_from - p_to * p_to) / flow,
    })
}

/// Nodal pressures and pipeline flows for one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasOperatingPoint {
    pub pressures: Vec<f64>,
    pub flows: Vec<f64>,
}

impl GasOperatingPoint {
    /// Midpoint pressures with every pipeline's sending end raised 1%, flows
    /// from the Weymouth relation.
    pub fn initial(gas: &GasSystem) -> Self {
        let index: HashMap<u32, usize> = gas.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let mut pressures: Vec<f64> = gas.nodes.iter().map(|n| 0.5 * (n.pressure_min + n.pressure_max)).collect();
        for p in &gas.pipelines {
            let f = index[&p.from];
            let node = &gas.nodes[f];
            pressures[f] = (0.5 * (node.pressure_min + node.pressure_max) * 1.01).min(node.pressure_max);
        }
        let flows = gas
            .pipelines
            .iter()
            .map(|p| {
                let (a, b) = (pressures[index[&p.from]], pressures[index[&p.to]]);
                p.weymouth * (a * a - b * b).max(0.0).sqrt()
            })
            .collect();
        Self { pressures, flows }
    }

    pub fn tangent(&self, gas: &GasSystem, pipeline: usize) -> Result<WeymouthTangent, GasError> {
        let p = &gas.pipelines[pipeline];
        let from = gas.nodes.iter().position(|n| n.id == p.from).expect("validated");
        let to = gas.nodes.iter().position(|n| n.id == p.to).expect("validated");
        linearize_weymouth(p.weymouth, self.pressures[from], self.pressures[to], self.flows[pipeline])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlpConfig {
    pub max_iterations: usize,
    /// Initial trust-region radius as a fraction of each node's pressure range.
    pub trust_fraction: f64,
    pub pressure_tolerance: f64,
    pub residual_tolerance: f64,
}

impl Default for SlpConfig {
    fn default() -> Self {
        Self { max_iterations: 50, trust_fraction: 0.1, pressure_tolerance: 1e-6, residual_tolerance: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasDispatch {
    /// `wells[s][t]`
    pub wells: Vec<Vec<f64>>,
    /// `pressures[a][t]`
    pub pressures: Vec<Vec<f64>>,
    pub pipeline_flows: Vec<Vec<f64>>,
    pub compressor_flows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IedSolution {
    /// Electric dispatch; `cost` is the total electric plus gas cost.
    pub dispatch: DispatchSolution,
    pub gas: Option<GasDispatch>,
    pub slp_iterations: usize,
    /// Largest `|g - W sqrt(pi_from^2 - pi_to^2)|` over pipelines and periods.
    pub weymouth_residual: f64,
    /// Production cost of every SLP iterate.
    pub cost_trace: Vec<f64>,
}

struct GasIndex {
    node: HashMap<u32, usize>,
    gen: HashMap<u32, usize>,
}

struct GasColumns {
    wells: Vec<Vec<usize>>,
    /// Squared pressure as `u_hat + up - down`.
    up: Vec<Vec<usize>>,
    down: Vec<Vec<usize>>,
    u_hat: Vec<Vec<f64>>,
    pipes: Vec<Vec<usize>>,
    comps: Vec<Vec<usize>>,
}

/// Integrated electricity-gas dispatch.
pub fn solve_ied(model: &DispatchModel, wind: &[f64], config: &SolverConfig, slp: &SlpConfig) -> Result<IedSolution, GasError> {
    let gas = match &model.system.gas {
        Some(g) if !g.is_empty() => g,
        _ => {
            let dispatch = crate::grid::solve_model(model, wind, config)?;
            let trace = dispatch.cost.into_iter().collect();
            return Ok(IedSolution { dispatch, gas: None, slp_iterations: 0, weymouth_residual: 0.0, cost_trace: trace });
        }
    };
    let t_max = model.periods();
    let idx = GasIndex {
        node: gas.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect(),
        gen: model.system.generators.iter().enumerate().map(|(i, g)| (g.id, i)).collect(),
    };
    let start = GasOperatingPoint::initial(gas);
    let mut pressures: Vec<Vec<f64>> = start.pressures.iter().map(|&p| vec![p; t_max]).collect();
    let mut flows: Vec<Vec<f64>> = start.flows.iter().map(|&g| vec![g; t_max]).collect();

    let cost_scale = model
        .system
        .generators
        .iter()
        .flat_map(|g| g.cost_segments.iter().map(|s| s.marginal.abs()))
        .chain(gas.wells.iter().map(|w| w.cost.abs()))
        .fold(1.0, f64::max);
    let elastic_weight = 1e4 * cost_scale;
    let proximal_weight = 1e-7 * cost_scale;

    let mut fraction = slp.trust_fraction;
    let mut accepted_cost: Option<f64> = None;
    let mut trace = Vec::new();
    let mut residual = f64::INFINITY;

    for iteration in 1..=slp.max_iterations {
        let mut lp = LpProblem::new();
        let layout = add_sed_to_lp(&mut lp, model, wind)?;
        let cols = add_gas_columns(&mut lp, gas, &pressures, fraction, proximal_weight, t_max);
        add_gas_rows(&mut lp, gas, &idx, &layout, &cols, &flows, elastic_weight, t_max);
        let sol = lp::solve(&lp, config)?;
        if sol.status != LpStatus::Optimal {
            let dispatch = DispatchSolution::from_lp(model, wind, &layout, &sol);
            return Ok(IedSolution { dispatch, gas: None, slp_iterations: iteration, weymouth_residual: f64::NAN, cost_trace: trace });
        }

        let production_cost = production_cost(&sol.x, &cols, &layout, gas, model);
        let new_pressures: Vec<Vec<f64>> = (0..gas.nodes.len())
            .map(|a| {
                (0..t_max)
                    .map(|t| {
                        let u = cols.u_hat[a][t] + sol.x[cols.up[a][t]] - sol.x[cols.down[a][t]];
                        u.max(0.0).sqrt()
                    })
                    .collect()
            })
            .collect();
        let new_flows: Vec<Vec<f64>> = cols.pipes.iter().map(|p| p.iter().map(|&j| sol.x[j]).collect()).collect();

        let mut step: f64 = 0.0;
        for (old, new) in pressures.iter().zip(&new_pressures) {
            for (a, b) in old.iter().zip(new) {
                step = step.max((a - b).abs());
            }
        }
        residual = weymouth_residual(gas, &idx, &new_pressures, &new_flows);
        trace.push(production_cost);

        if let Some(prev) = accepted_cost {
            if production_cost > prev + 1e-9 * (1.0 + prev.abs()) {
                fraction *= 0.5;
            }
        }
        accepted_cost = Some(production_cost);
        pressures = new_pressures;
        flows = new_flows;

        if step <= slp.pressure_tolerance && residual <= slp.residual_tolerance {
            let mut dispatch = DispatchSolution::from_lp(model, wind, &layout, &sol);
            dispatch.cost = Some(production_cost);
            let gas_out = GasDispatch {
                wells: cols.wells.iter().map(|w| w.iter().map(|&j| sol.x[j]).collect()).collect(),
                pressures,
                pipeline_flows: flows,
                compressor_flows: cols.comps.iter().map(|c| c.iter().map(|&j| sol.x[j]).collect()).collect(),
            };
            return Ok(IedSolution {
                dispatch,
                gas: Some(gas_out),
                slp_iterations: iteration,
                weymouth_residual: residual,
                cost_trace: trace,
            });
        }
    }
    Err(GasError::SlpNonconvergence { iterations: slp.max_iterations, residual })
}

fn add_gas_columns(
    lp: &mut LpProblem,
    gas: &GasSystem,
    pressures: &[Vec<f64>],
    fraction: f64,
    proximal_weight: f64,
    t_max: usize,
) -> GasColumns {
    let wells = gas
        .wells
        .iter()
        .map(|w| (0..t_max).map(|_| lp.add_var(w.cost, w.g_min, w.g_max)).collect())
        .collect();
    let mut up = Vec::new();
    let mut down = Vec::new();
    let mut u_hat = Vec::new();
    for (a, node) in gas.nodes.iter().enumerate() {
        let radius = fraction * (node.pressure_max - node.pressure_min);
        let (mut ups, mut downs, mut hats) = (Vec::new(), Vec::new(), Vec::new());
        for t in 0..t_max {
            let p = pressures[a][t].clamp(node.pressure_min, node.pressure_max);
            let lo = (p - radius).max(node.pressure_min);
            let hi = (p + radius).min(node.pressure_max);
            let u = p * p;
            ups.push(lp.add_var(proximal_weight, 0.0, (hi * hi - u).max(0.0)));
            downs.push(lp.add_var(proximal_weight, 0.0, (u - lo * lo).max(0.0)));
            hats.push(u);
        }
        up.push(ups);
        down.push(downs);
        u_hat.push(hats);
    }
    let pipes = gas
        .pipelines
        .iter()
        .map(|p| (0..t_max).map(|_| lp.add_var(0.0, 0.0, p.capacity)).collect())
        .collect();
    let comps = gas
        .compressors
        .iter()
        .map(|c| (0..t_max).map(|_| lp.add_var(0.0, 0.0, c.capacity)).collect())
        .collect();
    GasColumns { wells, up, down, u_hat, pipes, comps }
}

#[allow(clippy::too_many_arguments)]
fn add_gas_rows(
    lp: &mut LpProblem,
    gas: &GasSystem,
    idx: &GasIndex,
    layout: &SedLayout,
    cols: &GasColumns,
    flows: &[Vec<f64>],
    elastic_weight: f64,
    t_max: usize,
) {
    for t in 0..t_max {
        // Newton row on g^2 = W^2 (u_from - u_to):  2 g_hat g - W^2 (u_from - u_to) + e+ - e- = g_hat^2.
        for (b, p) in gas.pipelines.iter().enumerate() {
            let (f, to) = (idx.node[&p.from], idx.node[&p.to]);
            let w2 = p.weymouth * p.weymouth;
            let g_hat = flows[b][t].max(0.0);
            let constant = g_hat * g_hat + w2 * (cols.u_hat[f][t] - cols.u_hat[to][t]);
            let plus = lp.add_var(elastic_weight, 0.0, f64::INFINITY);
            let minus = lp.add_var(elastic_weight, 0.0, f64::INFINITY);
            let coeffs = [
                (cols.pipes[b][t], 2.0 * g_hat),
                (cols.up[f][t], -w2),
                (cols.down[f][t], w2),
                (cols.up[to][t], w2),
                (cols.down[to][t], -w2),
                (plus, 1.0),
                (minus, -1.0),
            ];
            lp.add_constraint(&coeffs, Relation::Eq, constant);
        }
        // Compressor: u_to - ratio^2 u_from <= 0.
        for comp in &gas.compressors {
            let (f, to) = (idx.node[&comp.from], idx.node[&comp.to]);
            let r2 = comp.ratio * comp.ratio;
            let constant = cols.u_hat[to][t] - r2 * cols.u_hat[f][t];
            let coeffs = [
                (cols.up[to][t], 1.0),
                (cols.down[to][t], -1.0),
                (cols.up[f][t], -r2),
                (cols.down[f][t], r2),
            ];
            lp.add_constraint(&coeffs, Relation::Le, -constant);
        }
        // Nodal balance.
        for node in &gas.nodes {
            let mut coeffs = Vec::new();
            for (s, w) in gas.wells.iter().enumerate() {
                if w.node == node.id {
                    coeffs.push((cols.wells[s][t], 1.0));
                }
            }
            for (b, p) in gas.pipelines.iter().enumerate() {
                if p.to == node.id {
                    coeffs.push((cols.pipes[b][t], 1.0));
                }
                if p.from == node.id {
                    coeffs.push((cols.pipes[b][t], -1.0));
                }
            }
            for (c, comp) in gas.compressors.iter().enumerate() {
                if comp.to == node.id {
                    coeffs.push((cols.comps[c][t], 1.0));
                }
                if comp.from == node.id {
                    coeffs.push((cols.comps[c][t], -1.0));
                }
            }
            for cpl in gas.gen_coupling.iter().filter(|c| c.node == node.id) {
                let g = idx.gen[&cpl.generator];
                for &j in &layout.segments[g][t] {
                    coeffs.push((j, -cpl.theta));
                }
            }
            let demand: f64 = gas.gas_loads.iter().filter(|d| d.node == node.id).map(|d| d.demand[t]).sum();
            lp.add_constraint(&coeffs, Relation::Eq, demand);
        }
    }
}

fn production_cost(x: &[f64], cols: &GasColumns, layout: &SedLayout, gas: &GasSystem, model: &DispatchModel) -> f64 {
    let t_max = layout.periods;
    let mut cost = 0.0;
    for (g, gen) in model.system.generators.iter().enumerate() {
        for t in 0..t_max {
            for (k, &j) in layout.segments[g][t].iter().enumerate() {
                cost += gen.cost_segments[k].marginal * x[j];
            }
        }
    }
    for (s, w) in gas.wells.iter().enumerate() {
        for t in 0..t_max {
            cost += w.cost * x[cols.wells[s][t]];
        }
    }
    cost
}

fn weymouth_residual(gas: &GasSystem, idx: &GasIndex, pressures: &[Vec<f64>], flows: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (b, p) in gas.pipelines.iter().enumerate() {
        let (f, to) = (idx.node[&p.from], idx.node[&p.to]);
        for (t, &g) in flows[b].iter().enumerate() {
            let head = pressures[f][t].powi(2) - pressures[to][t].powi(2);
            let physical = p.weymouth * head.max(0.0).sqrt();
            worst = worst.max((g - physical).abs());
        }
    }
    worst
}
