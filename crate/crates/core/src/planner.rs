//! Socially optimal routing.
//!
//! A single stochastic path against the safe path is solved exactly on a
//! (latency x belief) grid. With `M` stochastic paths the same solver is run on
//! a per-path share of the arrivals (`N/M` users, safe-path slope `M`), and a
//! slot's decision is made by an exact dynamic program over integer flows that
//! adds the immediate costs of all paths to their discounted per-path values.
//! For `M = 1` the two coincide.
//!
//! A depth-limited rollout evaluator with a myopic base policy is available as
//! an alternative cost oracle.

use std::io::Write;

use crate::congestion::{
    bayes_update_probs, expected_alpha, group_probs, observer_count, prob_hazard_report, ErrorCostModel,
    HazardParams, HazardSummary, ObservationModel, PathState,
};
use crate::error::{Error, Result};
use crate::policy::{cost_intercepts, myopic_allocation, reference_flow, steady_latency, FlowAllocation};
use crate::scenario::Scenario;

/// Uniform grid over `latency in [0, l_max]` and `belief in [0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefLatencyGrid {
    pub belief_points: usize,
    pub latency_points: usize,
    pub latency_max: f64,
}

impl BeliefLatencyGrid {
    pub fn new(belief_points: usize, latency_points: usize, latency_max: f64) -> Result<Self> {
        if belief_points < 2 || latency_points < 2 {
            return Err(Error::invalid("grid", "each axis needs at least two points"));
        }
        if !(latency_max.is_finite() && latency_max > 0.0) {
            return Err(Error::invalid("grid.latency_max", "must be finite and > 0"));
        }
        Ok(BeliefLatencyGrid {
            belief_points,
            latency_points,
            latency_max,
        })
    }

    pub fn len(&self) -> usize {
        self.belief_points * self.latency_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn belief(&self, i: usize) -> f64 {
        i as f64 / (self.belief_points - 1) as f64
    }

    pub fn latency(&self, j: usize) -> f64 {
        self.latency_max * j as f64 / (self.latency_points - 1) as f64
    }

    /// Flat index of grid point (latency `j`, belief `i`).
    pub fn index(&self, j: usize, i: usize) -> usize {
        j * self.belief_points + i
    }

    /// `(latency, belief)` of a flat index.
    pub fn point(&self, k: usize) -> (f64, f64) {
        (
            self.latency(k / self.belief_points),
            self.belief(k % self.belief_points),
        )
    }

    fn stencil(&self, ell: f64, x: f64) -> Stencil {
        let fy = (ell.clamp(0.0, self.latency_max) / self.latency_max) * (self.latency_points - 1) as f64;
        let fx = x.clamp(0.0, 1.0) * (self.belief_points - 1) as f64;
        let j0 = (fy.floor() as usize).min(self.latency_points - 2);
        let i0 = (fx.floor() as usize).min(self.belief_points - 2);
        Stencil {
            base: self.index(j0, i0),
            tx: fx - i0 as f64,
            ty: fy - j0 as f64,
        }
    }

    /// Bilinear interpolation of `values`, clamping queries to the grid.
    pub fn interpolate(&self, values: &[f64], ell: f64, x: f64) -> f64 {
        self.stencil(ell, x).apply(values, self.belief_points)
    }
}

#[derive(Debug, Clone, Copy)]
struct Stencil {
    base: usize,
    tx: f64,
    ty: f64,
}

impl Stencil {
    #[inline]
    fn apply(&self, v: &[f64], stride: usize) -> f64 {
        let b = self.base;
        let lo = v[b] + self.tx * (v[b + 1] - v[b]);
        let hi = v[b + stride] + self.tx * (v[b + stride + 1] - v[b + stride]);
        lo + self.ty * (hi - lo)
    }
}

/// One stochastic path competing with its share of the safe path.
#[derive(Debug, Clone, PartialEq)]
pub struct SubProblem {
    pub ell0: f64,
    /// Congestion slope of the safe path as seen by this share (`M`).
    pub safe_slope: f64,
    pub hazard: HazardParams,
    pub obs: ObservationModel,
    pub err: ErrorCostModel,
    pub rho: f64,
    /// Support and probabilities of this share's arrivals.
    pub users: Vec<(f64, f64)>,
}

impl SubProblem {
    pub fn from_scenario(s: &Scenario) -> Self {
        let m = s.m() as f64;
        SubProblem {
            ell0: s.ell0,
            safe_slope: m,
            hazard: s.hazard,
            obs: s.obs,
            err: s.err,
            rho: s.rho,
            users: s
                .arrivals
                .pmf()
                .into_iter()
                .map(|(k, p)| (f64::from(k) / m, p))
                .collect(),
        }
    }

    pub fn max_users(&self) -> f64 {
        self.users.iter().map(|u| u.0).fold(0.0, f64::max)
    }

    pub fn mean_users(&self) -> f64 {
        self.users.iter().map(|(n, p)| n * p).sum()
    }

    /// Cost of the share's travellers in one slot when `n` of `users` take the
    /// stochastic path with cost intercept `intercept`.
    pub fn immediate(&self, ell_plus_v: f64, n: f64, users: f64) -> f64 {
        let rest = users - n;
        let stoch = if n > 0.0 { n * (ell_plus_v + n) } else { 0.0 };
        stoch + rest * (self.ell0 + self.safe_slope * rest)
    }

    /// Next states and their probabilities after `n` travellers use the path.
    pub fn transitions(&self, ell: f64, x: f64, n: f64) -> [(f64, f64, f64); 2] {
        let obs_n = observer_count(n);
        if obs_n == 0 {
            let next = expected_alpha(x, &self.hazard) * ell;
            return [(1.0, next, x), (0.0, next, x)];
        }
        let g = group_probs(obs_n, &self.obs).expect("observers >= 1");
        let p1 = prob_hazard_report(x, g.q_h, g.q_l);
        let x1 = bayes_update_probs(x, HazardSummary::Hazard, &g).belief;
        let x0 = bayes_update_probs(x, HazardSummary::Clear, &g).belief;
        let base = ell + n;
        [
            (p1, expected_alpha(x1, &self.hazard) * base, x1),
            (1.0 - p1, expected_alpha(x0, &self.hazard) * base, x0),
        ]
    }
}

/// How the error cost enters a backup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorTerm {
    /// A known intercept `V(n_prev)`.
    Fixed(f64),
    /// `V(n)` of the candidate flow itself, standing in for the unknown
    /// previous flow inside the recursion.
    SameSlot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    pub belief_points: usize,
    pub latency_points: usize,
    /// Latency axis cap; defaults to `4 * ell0`.
    pub latency_max: Option<f64>,
    /// Target sup-norm distance to the fixed point; defaults to `1e-6` times
    /// the all-safe value.
    pub tol: Option<f64>,
    pub max_sweeps: usize,
    /// Policy-evaluation sweeps between two full Bellman sweeps.
    pub eval_sweeps: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            belief_points: 101,
            latency_points: 101,
            latency_max: None,
            tol: None,
            max_sweeps: 20_000,
            eval_sweeps: 20,
        }
    }
}

/// Discounted cost-to-go of a sub-problem on a grid plus its greedy policy.
#[derive(Debug, Clone)]
pub struct ValueFunction {
    pub grid: BeliefLatencyGrid,
    pub sub: SubProblem,
    pub values: Vec<f64>,
    /// Greedy stochastic flow at the support point closest to the mean share.
    pub greedy: Vec<u32>,
    pub residual: f64,
    pub sweeps: usize,
    pub tol: f64,
}

impl ValueFunction {
    pub fn value(&self, ell: f64, x: f64) -> f64 {
        self.grid.interpolate(&self.values, ell, x)
    }

    /// `E_y[C(next state)]` after `n` travellers use the path.
    pub fn continuation(&self, ell: f64, x: f64, n: f64) -> f64 {
        self.sub
            .transitions(ell, x, n)
            .iter()
            .filter(|t| t.0 > 0.0)
            .map(|&(p, l, b)| p * self.value(l, b))
            .sum()
    }

    /// Immediate cost plus discounted continuation for `n` of `users`.
    pub fn backup(&self, ell: f64, x: f64, n: f64, users: f64, err: ErrorTerm) -> f64 {
        let v = match err {
            ErrorTerm::Fixed(v) => v,
            ErrorTerm::SameSlot => self.sub.err.cost(n),
        };
        self.sub.immediate(ell + v, n, users) + self.sub.rho * self.continuation(ell, x, n)
    }

    /// Columnar text export: `belief latency value greedy`, one row per point.
    pub fn export<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "belief latency value greedy")?;
        for k in 0..self.grid.len() {
            let (l, x) = self.grid.point(k);
            writeln!(w, "{x} {l} {} {}", self.values[k], self.greedy[k])?;
        }
        Ok(())
    }
}

/// Bellman backup of one candidate flow at a state.
pub fn bellman_backup(
    value: &ValueFunction,
    exp_ell: f64,
    x: f64,
    n: f64,
    users: f64,
    err: ErrorTerm,
) -> f64 {
    value.backup(exp_ell, x, n, users, err)
}

struct Branches {
    /// Per grid point and flow `0..=max_flow`: two (probability, stencil) pairs.
    data: Vec<[(f64, Stencil); 2]>,
    flows: usize,
}

/// Solves a sub-problem by value iteration (with optional partial policy
/// evaluation between full sweeps).
pub fn value_iteration(
    sub: &SubProblem,
    grid: &BeliefLatencyGrid,
    cfg: &PlannerConfig,
) -> Result<ValueFunction> {
    if !(sub.rho > 0.0 && sub.rho < 1.0) {
        return Err(Error::invalid("rho", "must lie in (0, 1)"));
    }
    let max_flow = sub.max_users().floor() as usize;
    let flows = max_flow + 1;
    let npts = grid.len();
    let stride = grid.belief_points;

    let mut data = Vec::with_capacity(npts * flows);
    for k in 0..npts {
        let (ell, x) = grid.point(k);
        for n in 0..flows {
            let t = sub.transitions(ell, x, n as f64);
            data.push([
                (t[0].0, grid.stencil(t[0].1, t[0].2)),
                (t[1].0, grid.stencil(t[1].1, t[1].2)),
            ]);
        }
    }
    let br = Branches { data, flows };

    // immediate[n] for each (point, users) pair is cheap; cache per point the
    // stochastic part n*(ell + n + V(n)) and reuse it across support points.
    let all_safe: f64 = sub
        .users
        .iter()
        .map(|(u, p)| p * sub.immediate(0.0, 0.0, *u))
        .sum::<f64>()
        / (1.0 - sub.rho);
    let tol = cfg.tol.unwrap_or(1e-6 * all_safe.max(1.0));
    let target = tol * (1.0 - sub.rho) / sub.rho;

    // Start from the all-safe value: it is an upper bound, which keeps the
    // partial-evaluation iterates monotone.
    let mut values = vec![all_safe; npts];
    let mut choice = vec![0u16; npts * sub.users.len()];
    let mut cont = vec![0.0; flows];
    let mut residual = f64::INFINITY;
    let mut sweeps = 0;

    let cont_at = |values: &[f64], k: usize, n: usize| -> f64 {
        let b = &br.data[k * br.flows + n];
        let mut c = b[0].0 * b[0].1.apply(values, stride);
        if b[1].0 > 0.0 {
            c += b[1].0 * b[1].1.apply(values, stride);
        }
        c
    };

    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        let mut next = vec![0.0; npts];
        let mut res: f64 = 0.0;
        for k in 0..npts {
            let (ell, _) = grid.point(k);
            for (n, c) in cont.iter_mut().enumerate() {
                *c = sub.rho * cont_at(&values, k, n);
            }
            let mut v = 0.0;
            for (s, &(users, p)) in sub.users.iter().enumerate() {
                let top = (users.floor() as usize).min(max_flow);
                let mut best = f64::INFINITY;
                let mut arg = 0;
                for (n, c) in cont.iter().enumerate().take(top + 1) {
                    let nf = n as f64;
                    let q = sub.immediate(ell + sub.err.cost(nf), nf, users) + c;
                    if q < best {
                        best = q;
                        arg = n;
                    }
                }
                choice[k * sub.users.len() + s] = arg as u16;
                v += p * best;
            }
            if !v.is_finite() {
                let (l, x) = grid.point(k);
                return Err(Error::Numeric(format!(
                    "non-finite value {v} at grid point latency={l}, belief={x} after {sweeps} sweeps"
                )));
            }
            res = res.max((v - values[k]).abs());
            next[k] = v;
        }
        values = next;
        residual = res;
        if residual < target {
            break;
        }
        for _ in 0..cfg.eval_sweeps {
            let mut next = vec![0.0; npts];
            for k in 0..npts {
                let (ell, _) = grid.point(k);
                let mut v = 0.0;
                for (s, &(users, p)) in sub.users.iter().enumerate() {
                    let n = choice[k * sub.users.len() + s] as usize;
                    let nf = n as f64;
                    v += p
                        * (sub.immediate(ell + sub.err.cost(nf), nf, users)
                            + sub.rho * cont_at(&values, k, n));
                }
                next[k] = v;
            }
            values = next;
        }
    }
    if residual >= target {
        return Err(Error::Numeric(format!(
            "value iteration stopped after {sweeps} sweeps with residual {residual} (target {target})"
        )));
    }

    let mean = sub.mean_users();
    let s_ref = (0..sub.users.len())
        .min_by(|&a, &b| {
            (sub.users[a].0 - mean)
                .abs()
                .total_cmp(&(sub.users[b].0 - mean).abs())
        })
        .unwrap_or(0);
    let greedy = (0..npts)
        .map(|k| u32::from(choice[k * sub.users.len() + s_ref]))
        .collect();
    Ok(ValueFunction {
        grid: grid.clone(),
        sub: sub.clone(),
        values,
        greedy,
        residual,
        sweeps,
        tol,
    })
}

/// Grid-based planner for a whole scenario.
#[derive(Debug, Clone)]
pub struct Planner {
    pub value: ValueFunction,
    pub ell0: f64,
    pub m: usize,
}

impl Planner {
    pub fn solve(scenario: &Scenario, cfg: &PlannerConfig) -> Result<Self> {
        let sub = SubProblem::from_scenario(scenario);
        let grid = BeliefLatencyGrid::new(
            cfg.belief_points,
            cfg.latency_points,
            cfg.latency_max.unwrap_or(scenario.latency_cap()),
        )?;
        let value = value_iteration(&sub, &grid, cfg)?;
        Ok(Planner {
            value,
            ell0: scenario.ell0,
            m: scenario.m(),
        })
    }

    /// Cost attributable to a stochastic path carrying `n` this slot:
    /// its travellers' cost now plus its discounted per-path value.
    pub fn path_term(&self, state: &PathState, n: f64) -> f64 {
        let sub = &self.value.sub;
        let stoch = if n > 0.0 {
            n * (state.exp_latency + sub.err.cost(state.prev_flow) + n)
        } else {
            0.0
        };
        stoch + sub.rho * self.value.continuation(state.exp_latency, state.belief, n)
    }

    /// Long-run cost estimate of an allocation from the given public state.
    pub fn evaluate(&self, states: &[PathState], alloc: &FlowAllocation) -> f64 {
        let n0 = alloc.safe();
        let mut c = n0 * (self.ell0 + n0);
        for (s, &n) in states.iter().zip(alloc.stochastic()) {
            c += self.path_term(s, n);
        }
        c
    }

    /// Minimises [`Planner::evaluate`] over integer allocations of `n_t`
    /// users. Ties go to the smaller stochastic flows.
    pub fn optimal_allocation(&self, states: &[PathState], n_t: u32) -> FlowAllocation {
        self.optimal_allocation_at(states, f64::from(n_t), 1.0)
    }

    /// Exact minimiser over flows on the lattice `k * resolution`; the safe
    /// path takes whatever is left. Ties go to the smaller stochastic flow.
    pub fn optimal_allocation_at(&self, states: &[PathState], n_t: f64, resolution: f64) -> FlowAllocation {
        let nt = (n_t / resolution + 1e-9).floor() as usize;
        let m = states.len();
        // best[s] = minimal sum of path terms with s units on the paths seen so far
        let mut best = vec![0.0; nt + 1];
        for v in best.iter_mut().skip(1) {
            *v = f64::INFINITY;
        }
        let mut picks: Vec<Vec<u32>> = Vec::with_capacity(m);
        for st in states {
            let g: Vec<f64> = (0..=nt)
                .map(|n| self.path_term(st, n as f64 * resolution))
                .collect();
            let mut nb = vec![f64::INFINITY; nt + 1];
            let mut pk = vec![0u32; nt + 1];
            for s in 0..=nt {
                for (n, gn) in g.iter().enumerate().take(s + 1) {
                    let c = best[s - n] + gn;
                    if c < nb[s] {
                        nb[s] = c;
                        pk[s] = n as u32;
                    }
                }
            }
            best = nb;
            picks.push(pk);
        }
        let mut total_best = f64::INFINITY;
        let mut s_best = 0;
        for (s, b) in best.iter().enumerate() {
            let n0 = (n_t - s as f64 * resolution).max(0.0);
            let c = n0 * (self.ell0 + n0) + b;
            if c < total_best {
                total_best = c;
                s_best = s;
            }
        }
        let mut stoch = vec![0.0; m];
        let mut s = s_best;
        for k in (0..m).rev() {
            let n = picks[k][s] as usize;
            stoch[k] = n as f64 * resolution;
            s -= n;
        }
        FlowAllocation::from_stochastic(&stoch, n_t)
    }

    /// Best stochastic flow of a single path at a real-valued resolution,
    /// with `users` travellers in this path's share.
    pub fn best_flow(&self, state: &PathState, users: f64, resolution: f64) -> f64 {
        let sub = &self.value.sub;
        let steps = (users / resolution).floor() as usize;
        let v = sub.err.cost(state.prev_flow);
        let mut best = f64::INFINITY;
        let mut arg = 0.0;
        for k in 0..=steps {
            let n = k as f64 * resolution;
            let q = self
                .value
                .backup(state.exp_latency, state.belief, n, users, ErrorTerm::Fixed(v));
            if q < best {
                best = q;
                arg = n;
            }
        }
        arg
    }

    /// Myopic flow of a single path's share against a safe path of slope `M`.
    pub fn myopic_flow(&self, state: &PathState, users: f64) -> f64 {
        let sub = &self.value.sub;
        let c1 = state.exp_latency + sub.err.cost(state.prev_flow);
        ((sub.ell0 + sub.safe_slope * users - c1) / (1.0 + sub.safe_slope)).clamp(0.0, users)
    }
}

/// Public snapshot used by the rollout evaluator.
fn advance_expected(
    scenario: &Scenario,
    states: &[PathState],
    alloc: &FlowAllocation,
) -> Vec<(f64, Vec<PathState>)> {
    let hz = &scenario.hazard;
    let mut out = vec![(1.0, Vec::with_capacity(states.len()))];
    for (s, &n) in states.iter().zip(alloc.stochastic()) {
        let obs_n = observer_count(n);
        let mut options: Vec<(f64, f64)> = Vec::with_capacity(2);
        if obs_n == 0 {
            options.push((1.0, s.belief));
        } else {
            let g = group_probs(obs_n, &scenario.obs).expect("observers >= 1");
            let p1 = prob_hazard_report(s.belief, g.q_h, g.q_l);
            options.push((p1, bayes_update_probs(s.belief, HazardSummary::Hazard, &g).belief));
            options.push((
                1.0 - p1,
                bayes_update_probs(s.belief, HazardSummary::Clear, &g).belief,
            ));
        }
        let mut grown = Vec::with_capacity(out.len() * options.len());
        for (p, list) in &out {
            for &(q, x) in &options {
                if q <= 0.0 {
                    continue;
                }
                let mut l = list.clone();
                l.push(PathState {
                    exp_latency: expected_alpha(x, hz) * (s.exp_latency + n),
                    belief: x,
                    prev_flow: n,
                    observed_slots: s.observed_slots + u32::from(obs_n > 0),
                    true_alpha_high: s.true_alpha_high,
                    true_latency: s.true_latency,
                });
                grown.push((p * q, l));
            }
        }
        out = grown;
    }
    out
}

fn social_cost(scenario: &Scenario, states: &[PathState], alloc: &FlowAllocation) -> f64 {
    let n0 = alloc.safe();
    let mut c = n0 * scenario.safe_cost(n0);
    for (s, &n) in states.iter().zip(alloc.stochastic()) {
        if n > 0.0 {
            c += n * (s.cost_intercept(&scenario.err) + n);
        }
    }
    c
}

/// Depth-limited lookahead with full observation branching and a myopic base
/// policy after the first slot. Future slots use the mean arrival count.
pub struct Rollout<'a> {
    pub scenario: &'a Scenario,
    pub depth: usize,
    /// Values the leaves with a solved planner when given, else with zero.
    pub terminal: Option<&'a Planner>,
}

impl Rollout<'_> {
    /// Cost of playing `alloc` now and the base policy afterwards.
    pub fn evaluate(&self, states: &[PathState], alloc: &FlowAllocation) -> f64 {
        let now = social_cost(self.scenario, states, alloc);
        if self.depth <= 1 {
            return now + self.scenario.rho * self.leaf(states, alloc);
        }
        now + self.scenario.rho
            * advance_expected(self.scenario, states, alloc)
                .iter()
                .map(|(p, next)| p * self.base_value(next, self.depth - 1))
                .sum::<f64>()
    }

    fn base_value(&self, states: &[PathState], depth: usize) -> f64 {
        let n = self.scenario.n_mean().round();
        let alloc = myopic_allocation(&cost_intercepts(self.scenario, states), n);
        let now = social_cost(self.scenario, states, &alloc);
        if depth <= 1 {
            return now + self.scenario.rho * self.leaf(states, &alloc);
        }
        now + self.scenario.rho
            * advance_expected(self.scenario, states, &alloc)
                .iter()
                .map(|(p, next)| p * self.base_value(next, depth - 1))
                .sum::<f64>()
    }

    fn leaf(&self, states: &[PathState], alloc: &FlowAllocation) -> f64 {
        match self.terminal {
            None => 0.0,
            Some(pl) => states
                .iter()
                .zip(alloc.stochastic())
                .map(|(s, &n)| pl.value.continuation(s.exp_latency, s.belief, n))
                .sum(),
        }
    }

    /// Enumerates stochastic flows on a lattice of step `resolution` and
    /// returns the cheapest allocation. Exponential in `M`; meant for small
    /// instances and checks.
    pub fn optimal_allocation(&self, states: &[PathState], n_t: f64, resolution: f64) -> FlowAllocation {
        let m = states.len();
        let steps = (n_t / resolution).floor() as usize;
        let mut idx = vec![0usize; m];
        let mut best = (f64::INFINITY, FlowAllocation::all_safe(m, n_t));
        loop {
            let used: usize = idx.iter().sum();
            if used <= steps {
                let stoch: Vec<f64> = idx.iter().map(|&k| k as f64 * resolution).collect();
                let alloc = FlowAllocation::from_stochastic(&stoch, n_t);
                let c = self.evaluate(states, &alloc);
                if c < best.0 {
                    best = (c, alloc);
                }
            }
            let mut d = 0;
            while d < m {
                idx[d] += 1;
                if idx[d] <= steps {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == m {
                break;
            }
        }
        best.1
    }
}

/// Where the planner's slice of the state space is taken for threshold sweeps:
/// the current expected latency is `E[alpha|x] * (prev_latency + prev_flow)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSlice {
    pub prev_latency: f64,
    pub prev_flow: f64,
    /// Travellers in the path's share this slot.
    pub users: f64,
    /// Step of the flow search.
    pub resolution: f64,
}

impl ThresholdSlice {
    /// Slice through the prior-average steady state at the reference flow.
    pub fn default_for(scenario: &Scenario) -> Self {
        let m = scenario.m() as f64;
        let n_ref = reference_flow(scenario);
        ThresholdSlice {
            prev_latency: scenario.prior_xbar.expect(|x| steady_latency(x, n_ref, scenario)),
            prev_flow: n_ref,
            users: scenario.n_mean() / m,
            resolution: 0.01,
        }
    }

    pub fn state_at(&self, x: f64, hazard: &HazardParams) -> PathState {
        let ell = expected_alpha(x, hazard) * (self.prev_latency + self.prev_flow);
        PathState {
            exp_latency: ell,
            belief: x,
            prev_flow: self.prev_flow,
            observed_slots: 0,
            true_alpha_high: false,
            true_latency: ell,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Threshold {
    pub x_th: f64,
    /// Set when `n* - n_myopic` never changes sign on `[0, 1]`.
    pub no_crossing: bool,
    /// `(x, n* - n_myopic)` on the coarse sweep.
    pub sweep: Vec<(f64, f64)>,
    pub sign_changes: usize,
}

/// `n* - n_myopic` at belief `x` on the slice.
pub fn flow_gap(planner: &Planner, slice: &ThresholdSlice, x: f64) -> f64 {
    let st = slice.state_at(x, &planner.value.sub.hazard);
    planner.best_flow(&st, slice.users, slice.resolution) - planner.myopic_flow(&st, slice.users)
}

/// Belief at which the optimum starts sending more travellers than the myopic
/// equilibrium, located by a sweep followed by bisection.
pub fn exploration_threshold(
    planner: &Planner,
    slice: &ThresholdSlice,
    points: usize,
    tol: f64,
) -> Threshold {
    let points = points.max(2);
    let sweep: Vec<(f64, f64)> = (0..points)
        .map(|k| {
            let x = k as f64 / (points - 1) as f64;
            (x, flow_gap(planner, slice, x))
        })
        .collect();
    let pos: Vec<bool> = sweep.iter().map(|s| s.1 > 0.0).collect();
    let sign_changes = pos.windows(2).filter(|w| w[0] != w[1]).count();
    let first = pos.windows(2).position(|w| !w[0] && w[1]);
    match first {
        None => Threshold {
            x_th: if pos[0] { 0.0 } else { 1.0 },
            no_crossing: true,
            sweep,
            sign_changes,
        },
        Some(j) => {
            let (mut lo, mut hi) = (sweep[j].0, sweep[j + 1].0);
            while hi - lo > tol {
                let mid = 0.5 * (lo + hi);
                if flow_gap(planner, slice, mid) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            Threshold {
                x_th: 0.5 * (lo + hi),
                no_crossing: false,
                sweep,
                sign_changes,
            }
        }
    }
}
