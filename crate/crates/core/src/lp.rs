//! Linear programs with bounded variables.
//!
//! The solver is a two-phase primal simplex on a dense tableau. Variables
//! carry explicit lower/upper bounds (either may be infinite), so bound
//! constraints never become rows. Pricing uses the largest reduced cost with
//! lowest-index tie-breaking and falls back to Bland's rule after a run of
//! degenerate pivots.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("malformed problem: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl Relation {
    fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

/// A minimisation LP in sparse triplet form.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub relations: Vec<Relation>,
    pub rhs: Vec<f64>,
    /// `(row, col, value)` entries; duplicates are summed.
    pub entries: Vec<(usize, usize, f64)>,
}

impl LpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    pub fn add_constraint(&mut self, coeffs: &[(usize, f64)], relation: Relation, rhs: f64) -> usize {
        let row = self.rhs.len();
        self.relations.push(relation);
        self.rhs.push(rhs);
        for &(col, v) in coeffs {
            if v != 0.0 {
                self.entries.push((row, col, v));
            }
        }
        row
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        let m = self.num_rows();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::Malformed("bound vectors do not match variable count".into()));
        }
        if self.relations.len() != m {
            return Err(LpError::Malformed("relation vector does not match row count".into()));
        }
        for (j, &c) in self.objective.iter().enumerate() {
            if !c.is_finite() {
                return Err(LpError::Malformed(format!("objective coefficient {j} is not finite")));
            }
        }
        for j in 0..n {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY || lo > hi {
                return Err(LpError::Malformed(format!("variable {j} has invalid bounds [{lo}, {hi}]")));
            }
        }
        for (i, &b) in self.rhs.iter().enumerate() {
            if !b.is_finite() {
                return Err(LpError::Malformed(format!("rhs of row {i} is not finite")));
            }
        }
        for &(i, j, v) in &self.entries {
            if i >= m || j >= n {
                return Err(LpError::Malformed(format!("entry ({i}, {j}) out of range for {m}x{n}")));
            }
            if !v.is_finite() {
                return Err(LpError::Malformed(format!("entry ({i}, {j}) is not finite")));
            }
        }
        Ok(())
    }

    /// Row activities `A x`.
    pub fn activities(&self, x: &[f64]) -> Vec<f64> {
        let mut act = vec![0.0; self.num_rows()];
        for &(i, j, v) in &self.entries {
            act[i] += v * x[j];
        }
        act
    }

    /// Largest violation of any row or bound, each scaled by `1 + |rhs|`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let act = self.activities(x);
        let mut worst: f64 = 0.0;
        for i in 0..self.num_rows() {
            let gap = act[i] - self.rhs[i];
            let v = match self.relations[i] {
                Relation::Le => gap.max(0.0),
                Relation::Ge => (-gap).max(0.0),
                Relation::Eq => gap.abs(),
            };
            worst = worst.max(v / (1.0 + self.rhs[i].abs()));
        }
        for j in 0..self.num_vars() {
            let v = (self.lower[j] - x[j]).max(x[j] - self.upper[j]).max(0.0);
            let scale = 1.0 + self.lower[j].abs().min(self.upper[j].abs()).min(1e300);
            worst = worst.max(v / scale);
        }
        worst
    }

    /// Plain-text dump, one constraint per line, fixed-point numbers.
    pub fn dump(&self) -> String {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.num_rows()];
        for &(i, j, v) in &self.entries {
            rows[i].push((j, v));
        }
        let mut out = String::new();
        out.push_str("minimize:");
        for (j, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                let _ = write!(out, " {c:+.9} x{j}");
            }
        }
        out.push('\n');
        for (i, row) in rows.iter_mut().enumerate() {
            row.sort_by_key(|&(j, _)| j);
            let _ = write!(out, "c{i}:");
            for &(j, v) in row.iter() {
                let _ = write!(out, " {v:+.9} x{j}");
            }
            let _ = writeln!(out, " {} {:.9}", self.relations[i].symbol(), self.rhs[i]);
        }
        for j in 0..self.num_vars() {
            let _ = writeln!(out, "bound x{j}: {:.9} <= x{j} <= {:.9}", self.lower[j], self.upper[j]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Feasibility and optimality tolerance.
    pub tolerance: f64,
    /// Pivot cap; `None` means `50 * (rows + cols)`.
    pub max_iterations: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iterations: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub diagnostics: Option<String>,
}

const PIVOT_TOL: f64 = 1e-9;
const DEGENERATE_RUN_BEFORE_BLAND: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Slot {
    Basic(usize),
    AtLower,
    AtUpper,
    /// Free nonbasic variable parked at zero.
    Free,
}

struct Tableau {
    m: usize,
    ncols: usize,
    /// Row-major `m x ncols`, holds `B^-1 A`.
    t: Vec<f64>,
    beta: Vec<f64>,
    basis: Vec<usize>,
    slot: Vec<Slot>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    d: Vec<f64>,
    cost: Vec<f64>,
    iterations: usize,
    max_iterations: usize,
    degenerate_run: usize,
}

enum PhaseOutcome {
    Optimal,
    Unbounded(usize),
    IterationLimit,
}

impl Tableau {
    fn nonbasic_value(&self, j: usize) -> f64 {
        match self.slot[j] {
            Slot::AtLower => self.lo[j],
            Slot::AtUpper => self.hi[j],
            Slot::Free => 0.0,
            Slot::Basic(r) => self.beta[r],
        }
    }

    fn reset_reduced_costs(&mut self) {
        self.d.copy_from_slice(&self.cost);
        for i in 0..self.m {
            let cb = self.cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.ncols..(i + 1) * self.ncols];
                for (dj, &a) in self.d.iter_mut().zip(row) {
                    *dj -= cb * a;
                }
            }
        }
        for i in 0..self.m {
            self.d[self.basis[i]] = 0.0;
        }
    }

    /// Entering candidate and its direction (+1 increase, -1 decrease).
    fn price(&self, opt_tol: f64, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut best_score = 0.0;
        for j in 0..self.ncols {
            let dj = self.d[j];
            let dir = match self.slot[j] {
                Slot::Basic(_) => continue,
                _ if self.lo[j] == self.hi[j] => continue,
                Slot::AtLower if dj < -opt_tol => 1.0,
                Slot::AtUpper if dj > opt_tol => -1.0,
                Slot::Free if dj < -opt_tol => 1.0,
                Slot::Free if dj > opt_tol => -1.0,
                _ => continue,
            };
            if bland {
                return Some((j, dir));
            }
            if dj.abs() > best_score {
                best_score = dj.abs();
                best = Some((j, dir));
            }
        }
        best
    }

    fn run(&mut self, opt_tol: f64) -> PhaseOutcome {
        loop {
            if self.iterations >= self.max_iterations {
                return PhaseOutcome::IterationLimit;
            }
            let bland = self.degenerate_run >= DEGENERATE_RUN_BEFORE_BLAND;
            let Some((q, dir)) = self.price(opt_tol, bland) else {
                return PhaseOutcome::Optimal;
            };
            self.iterations += 1;

            // Ratio test over basic variables; ties keep the lowest variable index.
            let mut theta = f64::INFINITY;
            let mut leave: Option<(usize, bool)> = None;
            for i in 0..self.m {
                let a = self.t[i * self.ncols + q] * dir;
                let b = self.basis[i];
                let (ratio, to_upper) = if a > PIVOT_TOL {
                    if self.lo[b] == f64::NEG_INFINITY {
                        continue;
                    }
                    (((self.beta[i] - self.lo[b]) / a).max(0.0), false)
                } else if a < -PIVOT_TOL {
                    if self.hi[b] == f64::INFINITY {
                        continue;
                    }
                    (((self.hi[b] - self.beta[i]) / -a).max(0.0), true)
                } else {
                    continue;
                };
                let better = match leave {
                    None => true,
                    Some((r, _)) => {
                        ratio < theta - 1e-12 || (ratio <= theta + 1e-12 && b < self.basis[r])
                    }
                };
                if better {
                    theta = ratio;
                    leave = Some((i, to_upper));
                }
            }
            let flip = self.hi[q] - self.lo[q];
            if flip.is_finite() && flip <= theta {
                // Bound flip: entering variable crosses to its other bound.
                for i in 0..self.m {
                    self.beta[i] -= flip * dir * self.t[i * self.ncols + q];
                }
                self.slot[q] = if dir > 0.0 { Slot::AtUpper } else { Slot::AtLower };
                self.degenerate_run = 0;
                continue;
            }
            let Some((r, to_upper)) = leave else {
                return PhaseOutcome::Unbounded(q);
            };
            if theta <= 1e-12 {
                self.degenerate_run += 1;
            } else {
                self.degenerate_run = 0;
            }
            let entering_value = self.nonbasic_value(q) + dir * theta;
            for i in 0..self.m {
                self.beta[i] -= theta * dir * self.t[i * self.ncols + q];
            }
            let leaving = self.basis[r];
            self.slot[leaving] = if to_upper { Slot::AtUpper } else { Slot::AtLower };
            self.pivot(r, q);
            self.beta[r] = entering_value;
            self.basis[r] = q;
            self.slot[q] = Slot::Basic(r);
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let n = self.ncols;
        let p = self.t[r * n + q];
        for v in &mut self.t[r * n..(r + 1) * n] {
            *v /= p;
        }
        let (before, rest) = self.t.split_at_mut(r * n);
        let (prow, after) = rest.split_at_mut(n);
        for row in before.chunks_exact_mut(n).chain(after.chunks_exact_mut(n)) {
            let f = row[q];
            if f != 0.0 {
                for (x, &pr) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * pr;
                }
                row[q] = 0.0;
            }
        }
        let f = self.d[q];
        if f != 0.0 {
            for (x, &pr) in self.d.iter_mut().zip(prow.iter()) {
                *x -= f * pr;
            }
            self.d[q] = 0.0;
        }
    }
}

/// Solve `problem`. Never mutates the input.
pub fn solve(problem: &LpProblem, config: &SolverConfig) -> Result<LpSolution, LpError> {
    problem.validate()?;
    let n = problem.num_vars();
    let m = problem.num_rows();
    let tol = config.tolerance;

    // Columns: structural [0, n), slack [n, n + m), artificial [n + m, n + 2m).
    let ncols = n + 2 * m;
    let mut a = vec![0.0; m * ncols];
    for &(i, j, v) in &problem.entries {
        a[i * ncols + j] += v;
    }
    let mut lo = Vec::with_capacity(ncols);
    let mut hi = Vec::with_capacity(ncols);
    lo.extend_from_slice(&problem.lower);
    hi.extend_from_slice(&problem.upper);
    for rel in &problem.relations {
        let (l, h) = match rel {
            Relation::Le => (0.0, f64::INFINITY),
            Relation::Ge => (f64::NEG_INFINITY, 0.0),
            Relation::Eq => (0.0, 0.0),
        };
        lo.push(l);
        hi.push(h);
    }
    for _ in 0..m {
        lo.push(0.0);
        hi.push(f64::INFINITY);
    }

    let mut slot = vec![Slot::AtLower; ncols];
    for j in 0..n {
        slot[j] = if lo[j].is_finite() {
            Slot::AtLower
        } else if hi[j].is_finite() {
            Slot::AtUpper
        } else {
            Slot::Free
        };
    }
    let mut x_n = vec![0.0; n];
    for j in 0..n {
        x_n[j] = match slot[j] {
            Slot::AtLower => lo[j],
            Slot::AtUpper => hi[j],
            _ => 0.0,
        };
    }

    let mut basis = vec![0; m];
    let mut beta = vec![0.0; m];
    for i in 0..m {
        let row = &mut a[i * ncols..(i + 1) * ncols];
        let residual = problem.rhs[i] - row[..n].iter().zip(&x_n).map(|(c, x)| c * x).sum::<f64>();
        let s = n + i;
        let art = n + m + i;
        row[s] = 1.0;
        if residual >= lo[s] && residual <= hi[s] {
            basis[i] = s;
            beta[i] = residual;
            slot[s] = Slot::Basic(i);
            hi[art] = 0.0;
        } else {
            let clamp = residual.clamp(lo[s], hi[s]);
            slot[s] = if clamp == lo[s] { Slot::AtLower } else { Slot::AtUpper };
            let sigma = if residual > clamp { 1.0 } else { -1.0 };
            row[art] = sigma;
            if sigma < 0.0 {
                for v in row.iter_mut() {
                    *v = -*v;
                }
            }
            basis[i] = art;
            beta[i] = (residual - clamp).abs();
            slot[art] = Slot::Basic(i);
        }
    }
    // Artificials that never entered the basis are pinned at zero.
    for i in 0..m {
        let art = n + m + i;
        if !matches!(slot[art], Slot::Basic(_)) {
            slot[art] = Slot::AtLower;
        }
    }

    let max_iterations = config.max_iterations.unwrap_or(50 * (m + n).max(1));
    let mut tab = Tableau {
        m,
        ncols,
        t: a,
        beta,
        basis,
        slot,
        lo,
        hi,
        d: vec![0.0; ncols],
        cost: vec![0.0; ncols],
        iterations: 0,
        max_iterations,
        degenerate_run: 0,
    };

    let needs_phase_one = tab.basis.iter().any(|&b| b >= n + m);
    if needs_phase_one {
        for i in 0..m {
            tab.cost[n + m + i] = 1.0;
        }
        tab.reset_reduced_costs();
        match tab.run(tol) {
            PhaseOutcome::IterationLimit => return Ok(finish(problem, &tab, LpStatus::IterationLimit, None)),
            PhaseOutcome::Unbounded(_) => unreachable!("phase one objective is bounded below"),
            PhaseOutcome::Optimal => {}
        }
        let infeasibility: f64 = (0..m)
            .filter_map(|i| (tab.basis[i] >= n + m).then_some(tab.beta[i].max(0.0)))
            .sum();
        let scale = 1.0 + problem.rhs.iter().fold(0.0f64, |acc, b| acc.max(b.abs()));
        if infeasibility > tol * scale {
            let diag = format!("phase one stalled with total artificial mass {infeasibility:.3e}");
            return Ok(finish(problem, &tab, LpStatus::Infeasible, Some(diag)));
        }
        for i in 0..m {
            let art = n + m + i;
            tab.cost[art] = 0.0;
            tab.hi[art] = 0.0;
            if let Slot::Basic(r) = tab.slot[art] {
                tab.beta[r] = 0.0;
            }
        }
    }

    let cmax = problem.objective.iter().fold(1.0f64, |acc, c| acc.max(c.abs()));
    tab.cost[..n].copy_from_slice(&problem.objective);
    tab.reset_reduced_costs();
    tab.degenerate_run = 0;
    let outcome = tab.run(tol * cmax);
    Ok(match outcome {
        PhaseOutcome::Optimal => finish(problem, &tab, LpStatus::Optimal, None),
        PhaseOutcome::IterationLimit => finish(problem, &tab, LpStatus::IterationLimit, None),
        PhaseOutcome::Unbounded(q) => {
            let diag = format!("improving ray along column {q} with no blocking bound");
            finish(problem, &tab, LpStatus::Unbounded, Some(diag))
        }
    })
}

fn finish(problem: &LpProblem, tab: &Tableau, status: LpStatus, diagnostics: Option<String>) -> LpSolution {
    let n = problem.num_vars();
    let mut x: Vec<f64> = (0..n).map(|j| tab.nonbasic_value(j)).collect();
    if status == LpStatus::Optimal {
        // Snap round-off back inside the bounds.
        for (j, v) in x.iter_mut().enumerate() {
            *v = v.clamp(problem.lower[j], problem.upper[j]);
        }
        x = refine(problem, tab, x);
    }
    let objective = problem.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    LpSolution { status, x, objective, iterations: tab.iterations, diagnostics }
}

/// Recompute basic structural values from the final basis with a fresh LU
/// solve, removing drift accumulated by tableau updates.
fn refine(problem: &LpProblem, tab: &Tableau, x: Vec<f64>) -> Vec<f64> {
    let n = problem.num_vars();
    let m = problem.num_rows();
    if m == 0 || m > 600 {
        return x;
    }
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(i, j, v) in &problem.entries {
        cols[j].push((i, v));
    }
    let mut bmat = nalgebra::DMatrix::<f64>::zeros(m, m);
    let mut rhs = nalgebra::DVector::<f64>::from_column_slice(&problem.rhs);
    for (j, col) in cols.iter().enumerate() {
        if !matches!(tab.slot[j], Slot::Basic(_)) {
            for &(i, v) in col {
                rhs[i] -= v * x[j];
            }
        }
    }
    for i in 0..m {
        // Nonbasic slacks sit at a bound; artificials are zero after phase one.
        let s = n + i;
        if !matches!(tab.slot[s], Slot::Basic(_)) {
            rhs[i] -= tab.nonbasic_value(s);
        }
    }
    for (r, &b) in tab.basis.iter().enumerate() {
        if b < n {
            for &(i, v) in &cols[b] {
                bmat[(i, r)] += v;
            }
        } else if b < n + m {
            bmat[(b - n, r)] = 1.0;
        } else {
            bmat[(b - n - m, r)] = 1.0;
        }
    }
    let Some(sol) = bmat.lu().solve(&rhs) else {
        return x;
    };
    let mut refined = x.clone();
    for (r, &b) in tab.basis.iter().enumerate() {
        if b < n {
            refined[b] = sol[r].clamp(problem.lower[b], problem.upper[b]);
        }
    }
    if problem.max_violation(&refined) <= problem.max_violation(&x) {
        refined
    } else {
        x
    }
}
