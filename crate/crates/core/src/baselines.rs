//! Non-learning TE policies: shortest path, load balance, and the
//! proportional-fair NUM program solved with a primal log-barrier method.
//!
//! The NUM program maximizes `Σ_k log x_k` over path flows `f_kj ≥ 0` with
//! `x_k = Σ_j f_kj`, `x_k ≤ B_k` and link loads within capacity. The solver
//! follows the barrier central path with damped Newton steps; the barrier
//! multipliers `1 / (t·slack)` double as dual certificates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::SplitAction;
use crate::topology::{NetworkGraph, SessionSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("only alpha = 1 (log utility) is supported, got {0}")]
    UnsupportedAlpha(f64),
    #[error("session {0} has invalid demand")]
    BadDemand(usize),
    #[error("session {0} has no candidate paths")]
    NoPaths(usize),
    #[error("newton system is singular")]
    Singular,
}

pub fn sp_action(sessions: &[SessionSpec]) -> SplitAction {
    let ratios = sessions
        .iter()
        .map(|s| {
            let mut r = vec![0.0; s.paths.len()];
            r[0] = 1.0;
            r
        })
        .collect();
    SplitAction::new(ratios).expect("one-hot blocks are valid")
}

pub fn lb_action(sessions: &[SessionSpec]) -> SplitAction {
    SplitAction::uniform(&crate::action::path_sizes(sessions))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NumTolerances {
    /// Target duality gap bound `m / t` in utility units.
    pub gap: f64,
    /// Cap on Newton iterations across all centering steps.
    pub max_iters: usize,
}

impl Default for NumTolerances {
    fn default() -> Self {
        Self { gap: 1e-6, max_iters: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NumDiagnostics {
    /// Largest `(load - C_e) / C_e`, clipped at zero.
    pub max_capacity_violation: f64,
    /// Largest `(x_k - B_k) / B_k`, clipped at zero.
    pub max_demand_violation: f64,
    /// Largest `|Σ_j f_kj - x_k| / x_k`.
    pub flow_consistency_residual: f64,
    /// Largest `λ_e · slack_e` over capacity constraints (Mbps units).
    pub complementary_slackness: f64,
    /// Largest Lagrangian-gradient entry divided by the largest objective
    /// gradient entry.
    pub stationarity: f64,
    /// Duality-gap bound at exit.
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NumSolution {
    /// Per-session throughput, bits/s.
    pub throughput: Vec<f64>,
    /// Per-session, per-path flow, bits/s.
    pub flows: Vec<Vec<f64>>,
    /// `Σ_k log x_k` with `x_k` in Mbps, over non-degenerate sessions.
    pub objective: f64,
    /// Capacity multipliers per link (utility per Mbps); zero for unused links.
    pub capacity_duals: Vec<f64>,
    /// Sessions with no demand; their ratios fall back to uniform.
    pub degenerate: Vec<bool>,
    pub diagnostics: NumDiagnostics,
}

/// A linear constraint `coeffs · f ≤ bound`.
struct Row {
    vars: Vec<usize>,
    sign: f64,
    bound: f64,
}

impl Row {
    fn value(&self, f: &[f64]) -> f64 {
        self.sign * self.vars.iter().map(|&v| f[v]).sum::<f64>()
    }

    fn slack(&self, f: &[f64]) -> f64 {
        self.bound - self.value(f)
    }

    fn along(&self, d: &[f64]) -> f64 {
        self.sign * self.vars.iter().map(|&v| d[v]).sum::<f64>()
    }
}

struct Problem {
    /// Variable ranges per active session.
    groups: Vec<std::ops::Range<usize>>,
    rows: Vec<Row>,
    /// Row index of each used link's capacity constraint.
    link_rows: Vec<(usize, usize)>,
    n: usize,
}

impl Problem {
    fn objective(&self, f: &[f64]) -> f64 {
        self.groups.iter().map(|g| f[g.clone()].iter().sum::<f64>().ln()).sum()
    }

    /// Barrier value `-t·F(f) - Σ log slack`, or `None` outside the interior.
    fn barrier(&self, f: &[f64], t: f64) -> Option<f64> {
        let mut v = -t * self.objective(f);
        for r in &self.rows {
            let s = r.slack(f);
            if !(s > 0.0) {
                return None;
            }
            v -= s.ln();
        }
        Some(v)
    }

    /// Newton direction for the barrier at weight `t`, and the gradient.
    ///
    /// The Hessian is `D + Σ_r w_r a_r a_rᵀ`: a diagonal from single-variable
    /// rows plus rank-one terms from the utility groups and multi-variable
    /// rows. Near the optimum the rank-one weights grow like `t²`, so the
    /// dense Hessian becomes numerically singular. Instead this solves the
    /// equivalent augmented system `[D Aᵀ; A −W⁻¹]`, scaled so every
    /// entry is at most one in magnitude.
    fn newton_step(&self, f: &[f64], t: f64) -> Result<(DVector<f64>, DVector<f64>), NumError> {
        let n = self.n;
        let mut diag = vec![0.0; n];
        let mut grad = DVector::<f64>::zeros(n);
        // (vars, weight) for each rank-one term.
        let mut lifted: Vec<(&[usize], f64)> = Vec::new();
        let group_vars: Vec<Vec<usize>> = self.groups.iter().map(|g| g.clone().collect()).collect();
        for vars in &group_vars {
            let x: f64 = vars.iter().map(|&i| f[i]).sum();
            for &i in vars {
                grad[i] -= t / x;
            }
            lifted.push((vars, t / (x * x)));
        }
        for r in &self.rows {
            let s = r.slack(f);
            for &i in &r.vars {
                grad[i] += r.sign / s;
            }
            if r.vars.len() == 1 {
                diag[r.vars[0]] += 1.0 / (s * s);
            } else {
                lifted.push((&r.vars, 1.0 / (s * s)));
            }
        }
        let mut jacobi = diag.clone();
        for (vars, w) in &lifted {
            for &i in *vars {
                jacobi[i] += w;
            }
        }
        let scale: Vec<f64> = jacobi.iter().map(|h| 1.0 / h.max(f64::MIN_POSITIVE).sqrt()).collect();
        let q = lifted.len();
        let mut k = DMatrix::zeros(n + q, n + q);
        let mut rhs = DVector::zeros(n + q);
        for i in 0..n {
            k[(i, i)] = diag[i] * scale[i] * scale[i];
            rhs[i] = -grad[i] * scale[i];
        }
        for (r, (vars, w)) in lifted.iter().enumerate() {
            let sw = w.sqrt();
            for &i in *vars {
                let v = sw * scale[i];
                k[(i, n + r)] = v;
                k[(n + r, i)] = v;
            }
            k[(n + r, n + r)] = -1.0;
        }
        let y = k.lu().solve(&rhs).ok_or(NumError::Singular)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(NumError::Singular);
        }
        let step = DVector::from_iterator(n, (0..n).map(|i| y[i] * scale[i]));
        Ok((step, grad))
    }
}

/// Solves the proportional-fair NUM program over the sessions' candidate
/// paths, using each session's mean demand as `B_k`.
pub fn num_solve(
    g: &NetworkGraph,
    sessions: &[SessionSpec],
    alpha: f64,
    tol: &NumTolerances,
) -> Result<NumSolution, NumError> {
    if alpha != 1.0 {
        return Err(NumError::UnsupportedAlpha(alpha));
    }
    let demand_mbps: Vec<f64> = sessions.iter().map(|s| s.demand_mean / 1e6).collect();
    for (k, s) in sessions.iter().enumerate() {
        if s.paths.is_empty() {
            return Err(NumError::NoPaths(k));
        }
        if !(demand_mbps[k] >= 0.0) || !demand_mbps[k].is_finite() {
            return Err(NumError::BadDemand(k));
        }
    }
    let degenerate: Vec<bool> = demand_mbps.iter().map(|&b| b <= 1e-12).collect();

    // Variable layout over active sessions only.
    let mut groups = Vec::new();
    let mut var_of: Vec<Option<usize>> = Vec::with_capacity(sessions.len());
    let mut n = 0;
    for (k, s) in sessions.iter().enumerate() {
        if degenerate[k] {
            var_of.push(None);
            continue;
        }
        var_of.push(Some(n));
        groups.push(n..n + s.paths.len());
        n += s.paths.len();
    }

    let mut users: Vec<Vec<usize>> = vec![Vec::new(); g.link_count()];
    for (k, s) in sessions.iter().enumerate() {
        let Some(base) = var_of[k] else { continue };
        for (j, p) in s.paths.iter().enumerate() {
            for l in p.links() {
                users[l.0].push(base + j);
            }
        }
    }
    let mut rows = Vec::new();
    let mut link_rows = Vec::new();
    for (e, vars) in users.iter().enumerate() {
        if !vars.is_empty() {
            link_rows.push((e, rows.len()));
            rows.push(Row { vars: vars.clone(), sign: 1.0, bound: g.links()[e].capacity / 1e6 });
        }
    }
    for (grp, &b) in groups.iter().zip(demand_mbps.iter().enumerate().filter(|(k, _)| !degenerate[*k]).map(|(_, b)| b)) {
        rows.push(Row { vars: grp.clone().collect(), sign: 1.0, bound: b });
    }
    for v in 0..n {
        rows.push(Row { vars: vec![v], sign: -1.0, bound: 0.0 });
    }
    let problem = Problem { groups, rows, link_rows, n };

    let mut f = vec![0.0; n];
    let mut iterations = 0;
    let mut t = 1.0;
    let mut converged = true;
    if n > 0 {
        // Scaled load-balance start, strictly inside every constraint.
        for (k, s) in sessions.iter().enumerate() {
            if let Some(base) = var_of[k] {
                let share = demand_mbps[k] / s.paths.len() as f64;
                f[base..base + s.paths.len()].iter_mut().for_each(|v| *v = share);
            }
        }
        let theta = problem.link_rows.iter().fold(1.0f64, |th, &(_, r)| {
            let load = problem.rows[r].value(&f);
            th.min(problem.rows[r].bound / load)
        });
        f.iter_mut().for_each(|v| *v *= 0.5 * theta);

        let m = problem.rows.len() as f64;
        loop {
            let ok = center(&problem, &mut f, t, &mut iterations, tol.max_iters)?;
            if !ok {
                converged = false;
                break;
            }
            if m / t < tol.gap {
                break;
            }
            t *= 10.0;
        }
    }

    // Barrier multipliers at the central point serve as dual certificates.
    let duals: Vec<f64> = problem.rows.iter().map(|r| 1.0 / (t * r.slack(&f))).collect();
    push_to_boundary(&problem, &mut f);

    let mut capacity_duals = vec![0.0; g.link_count()];
    let mut comp_slack: f64 = 0.0;
    for &(e, r) in &problem.link_rows {
        capacity_duals[e] = duals[r];
        comp_slack = comp_slack.max(duals[r] * problem.rows[r].slack(&f).max(0.0));
    }
    let mut lagrangian = vec![0.0; n];
    let mut obj_grad_max: f64 = 0.0;
    for grp in &problem.groups {
        let x: f64 = f[grp.clone()].iter().sum();
        for i in grp.clone() {
            lagrangian[i] += 1.0 / x;
            obj_grad_max = obj_grad_max.max(1.0 / x);
        }
    }
    for (r, lambda) in problem.rows.iter().zip(&duals) {
        for &i in &r.vars {
            lagrangian[i] -= lambda * r.sign;
        }
    }
    let stationarity = if n == 0 {
        0.0
    } else {
        lagrangian.iter().map(|v| v.abs()).fold(0.0, f64::max) / obj_grad_max
    };

    let mut flows = Vec::with_capacity(sessions.len());
    let mut throughput = Vec::with_capacity(sessions.len());
    let mut demand_violation: f64 = 0.0;
    for (k, s) in sessions.iter().enumerate() {
        match var_of[k] {
            Some(base) => {
                let fk: Vec<f64> = f[base..base + s.paths.len()].iter().map(|v| v.max(0.0) * 1e6).collect();
                let x: f64 = fk.iter().sum();
                demand_violation = demand_violation.max((x - s.demand_mean) / s.demand_mean);
                flows.push(fk);
                throughput.push(x);
            }
            None => {
                flows.push(vec![0.0; s.paths.len()]);
                throughput.push(0.0);
            }
        }
    }
    let mut capacity_violation: f64 = 0.0;
    for (e, link) in g.links().iter().enumerate() {
        let load: f64 = users[e].iter().map(|&v| f[v].max(0.0) * 1e6).sum();
        capacity_violation = capacity_violation.max((load - link.capacity) / link.capacity);
    }
    let flow_consistency_residual = flows
        .iter()
        .zip(&throughput)
        .filter(|(_, &x)| x > 0.0)
        .map(|(fk, &x)| (fk.iter().sum::<f64>() - x).abs() / x)
        .fold(0.0, f64::max);

    Ok(NumSolution {
        objective: problem.objective(&f),
        throughput,
        flows,
        capacity_duals,
        degenerate,
        diagnostics: NumDiagnostics {
            max_capacity_violation: capacity_violation.max(0.0),
            max_demand_violation: demand_violation.max(0.0),
            flow_consistency_residual,
            complementary_slackness: comp_slack,
            stationarity,
            gap: problem.rows.len() as f64 / t,
            iterations,
            converged,
        },
    })
}

/// Scales each session's flows up, one session at a time, until its demand
/// or one of its links binds. Every step raises one session's throughput and
/// leaves the others unchanged, so the objective only improves; this closes
/// the small gap the barrier leaves against every constraint.
fn push_to_boundary(p: &Problem, f: &mut [f64]) {
    for grp in &p.groups {
        let own = |r: &Row, f: &[f64]| r.vars.iter().filter(|v| grp.contains(v)).map(|&v| f[v]).sum::<f64>();
        let mut factor = f64::INFINITY;
        for r in p.rows.iter().filter(|r| r.sign > 0.0) {
            let mine = own(r, f);
            if mine > 0.0 {
                let others = r.value(f) - mine;
                factor = factor.min((r.bound - others) / mine);
            }
        }
        // Stay a hair inside so rounding never reports a violated constraint.
        let factor = factor * (1.0 - 1e-14);
        if factor.is_finite() && factor > 1.0 {
            for v in grp.clone() {
                f[v] *= factor;
            }
        }
    }
}

/// Damped Newton centering for barrier weight `t`. Returns `false` when the
/// iteration budget runs out.
fn center(p: &Problem, f: &mut [f64], t: f64, iterations: &mut usize, cap: usize) -> Result<bool, NumError> {
    let mut prev = f64::INFINITY;
    for _ in 0..200 {
        if *iterations >= cap {
            return Ok(false);
        }
        *iterations += 1;
        let (step, grad) = p.newton_step(f, t)?;
        let decrement = -grad.dot(&step);
        // Past the quadratic-convergence threshold, keep polishing until the
        // decrement stops shrinking; the certificates need the exact center.
        if decrement <= 1e-24 || (decrement < 1e-10 && decrement > 0.25 * prev) {
            return Ok(true);
        }
        prev = decrement;
        let d: Vec<f64> = step.iter().copied().collect();
        let mut alpha: f64 = 1.0;
        for r in &p.rows {
            let rate = r.along(&d);
            if rate > 0.0 {
                alpha = alpha.min(0.99 * r.slack(f) / rate);
            }
        }
        let trial = |a: f64| -> Vec<f64> { f.iter().zip(&d).map(|(x, dx)| x + a * dx).collect() };
        // Close to the center the quadratic model is exact enough that Armijo
        // comparisons drown in rounding; take the (interior) step directly.
        if decrement > 1e-6 {
            let current = p.barrier(f, t).expect("iterate is interior");
            loop {
                let cand = trial(alpha);
                match p.barrier(&cand, t) {
                    Some(v) if v <= current - 0.01 * alpha * decrement => break,
                    _ => alpha *= 0.5,
                }
                if alpha < 1e-20 {
                    return Ok(true);
                }
            }
        }
        let next = trial(alpha);
        if p.barrier(&next, t).is_none() {
            return Ok(true);
        }
        f.copy_from_slice(&next);
    }
    Ok(true)
}

/// Split ratios `w_kj = f_kj / Σ_j f_kj`; degenerate sessions get uniform.
pub fn num_action(sol: &NumSolution) -> SplitAction {
    let ratios = sol
        .flows
        .iter()
        .map(|fk| {
            let total: f64 = fk.iter().sum();
            if total > 0.0 && total.is_finite() {
                fk.iter().map(|v| v / total).collect()
            } else {
                vec![1.0 / fk.len() as f64; fk.len()]
            }
        })
        .collect::<Vec<Vec<f64>>>();
    SplitAction::project(&ratios.concat(), &ratios.iter().map(Vec::len).collect::<Vec<_>>())
        .expect("layout matches flows")
}

/// Ratios from flows, flagging sessions whose flows are all zero.
pub fn ratios_from_flows(flows: &[f64]) -> (Vec<f64>, bool) {
    let total: f64 = flows.iter().sum();
    if total > 0.0 {
        (flows.iter().map(|v| v / total).collect(), false)
    } else {
        (vec![1.0 / flows.len() as f64; flows.len()], true)
    }
}
