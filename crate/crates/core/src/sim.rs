//! Seeded episodes, Monte-Carlo summaries and trace export.
//!
//! Within a slot the order is fixed: the platform publishes the public state,
//! the policy allocates the arrivals, the hidden hazard state evolves, the
//! travellers' reports are fused, and beliefs and latencies are updated.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;

use crate::congestion::{
    expected_latency_update, fuse_observations, latency_step, observer_count, posterior_belief,
    HazardSummary, PathState,
};
use crate::error::{Error, Result};
use crate::planner::{exploration_threshold, Planner, PlannerConfig, Rollout, ThresholdSlice};
use crate::policy::{
    char_choose_params, char_step, cost_intercepts, deterministic_recommendation_allocation,
    expected_cost_at_xbar, hiding_allocation, myopic_allocation, CharParams, FlowAllocation, ReceiverMode,
};
use crate::rng::{replication_seed, substream, Purpose};
use crate::scenario::Scenario;

/// Names accepted by [`PolicyKind::parse`].
pub const POLICY_NAMES: &[&str] = &[
    "myopic",
    "hiding",
    "det-rec",
    "det-rec-obedient",
    "char",
    "optimal",
    "construction",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Myopic,
    Hiding,
    DetRec(ReceiverMode),
    Char,
    Optimal,
    /// Explore every path in slot 0 with an equal split, then keep sending
    /// `N(t)/M` travellers to a path while that is cheaper than the empty
    /// safe path, otherwise leave it.
    Construction,
}

impl PolicyKind {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "myopic" => PolicyKind::Myopic,
            "hiding" => PolicyKind::Hiding,
            "det-rec" => PolicyKind::DetRec(ReceiverMode::Rational),
            "det-rec-obedient" => PolicyKind::DetRec(ReceiverMode::Obedient),
            "char" => PolicyKind::Char,
            "optimal" => PolicyKind::Optimal,
            "construction" => PolicyKind::Construction,
            _ => {
                return Err(Error::invalid(
                    "policy",
                    format!(
                        "unknown policy `{name}`; valid names: {}",
                        POLICY_NAMES.join(", ")
                    ),
                ))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Myopic => "myopic",
            PolicyKind::Hiding => "hiding",
            PolicyKind::DetRec(ReceiverMode::Rational) => "det-rec",
            PolicyKind::DetRec(ReceiverMode::Obedient) => "det-rec-obedient",
            PolicyKind::Char => "char",
            PolicyKind::Optimal => "optimal",
            PolicyKind::Construction => "construction",
        }
    }

    pub fn needs_planner(&self) -> bool {
        matches!(self, PolicyKind::Char | PolicyKind::Optimal)
    }
}

/// Cost oracle CHAR uses to rank hidden-group sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CharEvaluator {
    /// Immediate cost plus the planner's discounted per-path values.
    #[default]
    Planner,
    /// Depth-limited rollout with the planner's values at the leaves.
    Rollout { depth: usize },
}

#[derive(Debug, Clone)]
enum Prepared {
    Myopic,
    Hiding(Vec<f64>),
    DetRec(ReceiverMode),
    Char {
        params: CharParams,
        exp_cost: Vec<f64>,
        planner: Arc<Planner>,
        evaluator: CharEvaluator,
    },
    Optimal(Arc<Planner>, f64),
    Construction,
}

/// A policy ready to run on one scenario.
#[derive(Debug, Clone)]
pub struct Policy {
    pub kind: PolicyKind,
    prepared: Prepared,
    /// Notes produced while preparing (for example a CHAR fallback).
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct PolicyOptions {
    pub planner: PlannerConfig,
    pub char_evaluator: CharEvaluator,
    /// Reused instead of solving again when present.
    pub solved: Option<Arc<Planner>>,
    /// Flow lattice of the optimal policy; `None` means whole users.
    pub optimal_resolution: Option<f64>,
}

/// Decision for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub alloc: FlowAllocation,
    /// Hidden-group size chosen by CHAR.
    pub n_hide: Option<u32>,
}

impl Policy {
    pub fn prepare(kind: PolicyKind, scenario: &Scenario, opts: &PolicyOptions) -> Result<Self> {
        let planner = || -> Result<Arc<Planner>> {
            match &opts.solved {
                Some(p) => Ok(p.clone()),
                None => Ok(Arc::new(Planner::solve(scenario, &opts.planner)?)),
            }
        };
        let mut notes = Vec::new();
        let prepared = match kind {
            PolicyKind::Myopic => Prepared::Myopic,
            PolicyKind::Hiding => Prepared::Hiding(expected_cost_at_xbar(scenario)),
            PolicyKind::DetRec(mode) => Prepared::DetRec(mode),
            PolicyKind::Optimal => {
                let r = opts.optimal_resolution.unwrap_or(1.0);
                if !(r > 0.0 && r.is_finite()) {
                    return Err(Error::invalid("resolution", "must be finite and > 0"));
                }
                Prepared::Optimal(planner()?, r)
            }
            PolicyKind::Construction => Prepared::Construction,
            PolicyKind::Char => {
                let pl = planner()?;
                let ov = scenario.char_overrides;
                let x_th = match ov.x_th {
                    Some(x) => x,
                    None => {
                        let slice = ThresholdSlice::default_for(scenario);
                        exploration_threshold(&pl, &slice, 50, 1e-3).x_th
                    }
                };
                match char_choose_params(&scenario.prior_xbar, x_th, scenario.m()) {
                    Ok(mut params) => {
                        if let Some(p) = ov.p_low {
                            params.p_low = p;
                        }
                        if let Some(p) = ov.p_high {
                            params.p_high = p;
                        }
                        params.validate(scenario.m())?;
                        Prepared::Char {
                            params,
                            exp_cost: expected_cost_at_xbar(scenario),
                            planner: pl,
                            evaluator: opts.char_evaluator,
                        }
                    }
                    Err(Error::DegeneratePrior(msg)) => {
                        notes.push(format!("char falls back to hiding: {msg}"));
                        Prepared::Hiding(expected_cost_at_xbar(scenario))
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        Ok(Policy {
            kind,
            prepared,
            notes,
        })
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn char_params(&self) -> Option<CharParams> {
        match &self.prepared {
            Prepared::Char { params, .. } => Some(*params),
            _ => None,
        }
    }

    pub fn planner(&self) -> Option<Arc<Planner>> {
        match &self.prepared {
            Prepared::Char { planner, .. } | Prepared::Optimal(planner, _) => Some(planner.clone()),
            _ => None,
        }
    }

    pub fn decide(
        &self,
        scenario: &Scenario,
        states: &[PathState],
        n_t: u32,
        slot: usize,
    ) -> Result<Decision> {
        let nt = f64::from(n_t);
        let plain = |alloc| Ok(Decision { alloc, n_hide: None });
        match &self.prepared {
            Prepared::Myopic => plain(myopic_allocation(&cost_intercepts(scenario, states), nt)),
            Prepared::Hiding(c) => plain(hiding_allocation(scenario, nt, c)),
            Prepared::DetRec(mode) => plain(deterministic_recommendation_allocation(
                scenario, nt, states, *mode,
            )),
            Prepared::Optimal(pl, r) => plain(pl.optimal_allocation_at(states, nt, *r)),
            Prepared::Construction => {
                let share = nt / scenario.m() as f64;
                let stoch: Vec<f64> = states
                    .iter()
                    .map(|s| {
                        if slot == 0 || s.cost_intercept(&scenario.err) + share < scenario.ell0 {
                            share
                        } else {
                            0.0
                        }
                    })
                    .collect();
                plain(FlowAllocation::from_stochastic(&stoch, nt))
            }
            Prepared::Char {
                params,
                exp_cost,
                planner,
                evaluator,
            } => {
                let hiding = hiding_allocation(scenario, nt, exp_cost);
                let (alloc, n_hide) = match evaluator {
                    CharEvaluator::Planner => {
                        char_step(states, n_t, params, &hiding, |a| Ok(planner.evaluate(states, a)))?
                    }
                    CharEvaluator::Rollout { depth } => {
                        let r = Rollout {
                            scenario,
                            depth: *depth,
                            terminal: Some(planner),
                        };
                        char_step(states, n_t, params, &hiding, |a| Ok(r.evaluate(states, a)))?
                    }
                };
                Ok(Decision {
                    alloc,
                    n_hide: Some(n_hide),
                })
            }
        }
    }
}

/// Evolves a hidden hazard state by one slot.
pub fn evolve_truth<R: Rng + ?Sized>(
    chain: &crate::congestion::TwoStateChain,
    high: bool,
    rng: &mut R,
) -> bool {
    rng.gen::<f64>() < chain.prob_next_high(high)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub flow: f64,
    pub observers: u32,
    pub y: HazardSummary,
    pub prior_belief: f64,
    pub posterior_belief: f64,
    /// Published expected latency during the slot.
    pub exp_latency: f64,
    pub true_latency: f64,
    pub true_high: bool,
    /// Flow of the previous slot (sets the error cost).
    pub prev_flow: f64,
    pub degenerate_update: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub slot: usize,
    pub arrivals: u32,
    pub safe_flow: f64,
    pub paths: Vec<PathRecord>,
    pub immediate_cost: f64,
    pub n_hide: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub policy: String,
    pub seed: u64,
    pub slots: Vec<SlotRecord>,
    /// Public state after the last slot.
    pub final_states: Vec<PathState>,
}

/// Immediate social cost of an allocation at a public state.
pub fn immediate_cost(scenario: &Scenario, states: &[PathState], alloc: &FlowAllocation) -> f64 {
    let n0 = alloc.safe();
    let mut c = n0 * scenario.safe_cost(n0);
    for (s, &n) in states.iter().zip(alloc.stochastic()) {
        // an unused path costs nothing even when its expected latency has diverged
        if n > 0.0 {
            c += n * (s.cost_intercept(&scenario.err) + n);
        }
    }
    c
}

pub fn run_episode(scenario: &Scenario, policy: &Policy, horizon: usize, seed: u64) -> Result<EpisodeTrace> {
    if horizon == 0 {
        return Err(Error::invalid("T", "horizon must be >= 1"));
    }
    let mut states = scenario.initial_states(seed);
    let mut slots = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let n_t = scenario
            .arrivals
            .sample(&mut substream(seed, Purpose::Arrivals, 0, t));
        let decision = policy
            .decide(scenario, &states, n_t, t)
            .and_then(|d| d.alloc.check(f64::from(n_t)).map(|_| d))
            .map_err(|e| Error::AtSlot {
                slot: t,
                source: Box::new(e),
            })?;
        let cost = immediate_cost(scenario, &states, &decision.alloc);

        let mut records = Vec::with_capacity(states.len());
        for (i, st) in states.iter_mut().enumerate() {
            let spec = &scenario.paths[i];
            if t > 0 {
                st.true_alpha_high = evolve_truth(
                    &spec.chain,
                    st.true_alpha_high,
                    &mut substream(seed, Purpose::Truth, i, t),
                );
            }
            let n = decision.alloc.flows[i + 1].max(0.0);
            let k = observer_count(n);
            let y = fuse_observations(
                st.true_alpha_high,
                k,
                &scenario.obs,
                &mut substream(seed, Purpose::Observation, i, t),
            );
            let upd = posterior_belief(st.belief, y, k, &scenario.obs).map_err(|e| Error::AtSlot {
                slot: t,
                source: Box::new(e),
            })?;
            records.push(PathRecord {
                flow: n,
                observers: k,
                y,
                prior_belief: st.belief,
                posterior_belief: upd.belief,
                exp_latency: st.exp_latency,
                true_latency: st.true_latency,
                true_high: st.true_alpha_high,
                prev_flow: st.prev_flow,
                degenerate_update: upd.degenerate,
            });
            st.exp_latency = scenario.saturate(expected_latency_update(
                st.exp_latency,
                n,
                upd.belief,
                &scenario.hazard,
            ));
            st.true_latency = scenario.saturate(latency_step(
                st.true_latency,
                n,
                scenario.hazard.alpha(st.true_alpha_high),
            )?);
            if k > 0 {
                st.belief = scenario
                    .belief_carry
                    .next_prior(st.belief, upd.belief, st.observed_slots);
                st.observed_slots += 1;
            }
            st.prev_flow = n;
        }
        slots.push(SlotRecord {
            slot: t,
            arrivals: n_t,
            safe_flow: decision.alloc.safe(),
            paths: records,
            immediate_cost: cost,
            n_hide: decision.n_hide,
        });
    }
    Ok(EpisodeTrace {
        policy: policy.name().to_string(),
        seed,
        slots,
        final_states: states,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscountedCost {
    pub value: f64,
    /// Upper bound on the cost beyond the horizon, `rho^T * c_max / (1 - rho)`.
    pub truncation_bound: f64,
}

pub fn discounted_cost(trace: &EpisodeTrace, rho: f64) -> DiscountedCost {
    discounted_cost_until(trace, rho, trace.slots.len())
}

pub fn discounted_cost_until(trace: &EpisodeTrace, rho: f64, horizon: usize) -> DiscountedCost {
    let mut value = 0.0;
    let mut w = 1.0;
    let mut c_max: f64 = 0.0;
    for s in trace.slots.iter().take(horizon) {
        value += w * s.immediate_cost;
        c_max = c_max.max(s.immediate_cost);
        w *= rho;
    }
    DiscountedCost {
        value,
        truncation_bound: w * c_max / (1.0 - rho),
    }
}

/// `|x_i(t) - xbar|` per slot for one path, and its mean over the last 10 %.
pub fn convergence_diagnostic(trace: &EpisodeTrace, path: usize, xbar: f64) -> (Vec<f64>, f64) {
    let series: Vec<f64> = trace
        .slots
        .iter()
        .map(|s| (s.paths[path].prior_belief - xbar).abs())
        .collect();
    let tail = (series.len() / 10).max(1);
    let terminal = series[series.len() - tail..].iter().sum::<f64>() / tail as f64;
    (series, terminal)
}

#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub policy: String,
    pub horizon: usize,
    pub replications: usize,
    pub seed: u64,
    pub mean: f64,
    pub stderr: f64,
    pub costs: Vec<f64>,
}

pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    // corrected two-pass: the second sum cancels the rounding error of `mean`
    let (sq, lin) = xs.iter().fold((0.0, 0.0), |(sq, lin), x| {
        (sq + (x - mean).powi(2), lin + (x - mean))
    });
    let var = ((sq - lin * lin / n) / (n - 1.0)).max(0.0);
    (mean, (var / n).sqrt())
}

/// Runs `reps` episodes and reports discounted costs truncated at each checkpoint.
/// Replication `r` uses seed `replication_seed(seed, r)`, so summaries of
/// different policies with the same base seed are paired.
pub fn monte_carlo_checkpoints(
    scenario: &Scenario,
    policy: &Policy,
    checkpoints: &[usize],
    reps: usize,
    seed: u64,
    jobs: usize,
) -> Result<Vec<McSummary>> {
    if reps < 2 {
        return Err(Error::invalid("reps", "need at least two replications"));
    }
    let horizon = checkpoints.iter().copied().max().unwrap_or(0);
    let run = |r: usize| -> Result<Vec<f64>> {
        let tr = run_episode(scenario, policy, horizon, replication_seed(seed, r))?;
        Ok(checkpoints
            .iter()
            .map(|&t| discounted_cost_until(&tr, scenario.rho, t).value)
            .collect())
    };
    let per_rep: Vec<Vec<f64>> = if jobs <= 1 {
        (0..reps).map(run).collect::<Result<_>>()?
    } else {
        let mut out: Vec<Option<Result<Vec<f64>>>> = (0..reps).map(|_| None).collect();
        std::thread::scope(|sc| {
            let chunks: Vec<_> = out.chunks_mut(reps.div_ceil(jobs)).enumerate().collect();
            let size = reps.div_ceil(jobs);
            for (c, chunk) in chunks {
                let run = &run;
                sc.spawn(move || {
                    for (k, slot) in chunk.iter_mut().enumerate() {
                        *slot = Some(run(c * size + k));
                    }
                });
            }
        });
        out.into_iter()
            .map(|o| o.expect("every replication ran"))
            .collect::<Result<_>>()?
    };
    Ok(checkpoints
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let costs: Vec<f64> = per_rep.iter().map(|v| v[k]).collect();
            let (mean, stderr) = mean_stderr(&costs);
            McSummary {
                policy: policy.name().to_string(),
                horizon: t,
                replications: reps,
                seed,
                mean,
                stderr,
                costs,
            }
        })
        .collect())
}

pub fn monte_carlo(
    scenario: &Scenario,
    policy: &Policy,
    horizon: usize,
    reps: usize,
    seed: u64,
) -> Result<McSummary> {
    Ok(monte_carlo_checkpoints(scenario, policy, &[horizon], reps, seed, 1)?.remove(0))
}

fn fmt_f(x: f64) -> String {
    format!("{x}")
}

/// One row per (slot, path); path 0 is the safe path.
pub fn write_trace_csv<W: Write>(trace: &EpisodeTrace, scenario: &Scenario, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    wr.write_record([
        "slot",
        "path",
        "flow",
        "y",
        "prior_belief",
        "posterior_belief",
        "exp_latency",
        "true_latency",
        "immediate_cost",
    ])
    .map_err(io)?;
    for s in &trace.slots {
        let safe_lat = scenario.ell0;
        wr.write_record([
            s.slot.to_string(),
            "0".into(),
            fmt_f(s.safe_flow),
            String::new(),
            String::new(),
            String::new(),
            fmt_f(safe_lat),
            fmt_f(safe_lat),
            fmt_f(s.immediate_cost),
        ])
        .map_err(io)?;
        for (i, p) in s.paths.iter().enumerate() {
            wr.write_record([
                s.slot.to_string(),
                (i + 1).to_string(),
                fmt_f(p.flow),
                p.y.code().to_string(),
                fmt_f(p.prior_belief),
                fmt_f(p.posterior_belief),
                fmt_f(p.exp_latency),
                fmt_f(p.true_latency),
                fmt_f(s.immediate_cost),
            ])
            .map_err(io)?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Summary rows: `policy, mean, stderr, replications, T, seed`.
pub fn write_summary_csv<W: Write>(rows: &[McSummary], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    wr.write_record(["policy", "mean", "stderr", "replications", "T", "seed"])
        .map_err(io)?;
    for r in rows {
        wr.write_record([
            r.policy.clone(),
            fmt_f(r.mean),
            fmt_f(r.stderr),
            r.replications.to_string(),
            r.horizon.to_string(),
            r.seed.to_string(),
        ])
        .map_err(io)?;
    }
    wr.flush()?;
    Ok(())
}

/// Recomputes every update and cost of a trace from its raw events and
/// returns the largest absolute discrepancy.
pub fn trace_discrepancy(trace: &EpisodeTrace, scenario: &Scenario) -> f64 {
    let mut worst: f64 = 0.0;
    for (t, s) in trace.slots.iter().enumerate() {
        let mut cost = s.safe_flow * scenario.safe_cost(s.safe_flow);
        let total = s.safe_flow + s.paths.iter().map(|p| p.flow).sum::<f64>();
        worst = worst.max((total - f64::from(s.arrivals)).abs());
        for (i, p) in s.paths.iter().enumerate() {
            if p.flow > 0.0 {
                cost += p.flow * (p.exp_latency + scenario.err.cost(p.prev_flow) + p.flow);
            }
            let post = posterior_belief(p.prior_belief, p.y, p.observers, &scenario.obs)
                .map(|u| u.belief)
                .unwrap_or(f64::NAN);
            worst = worst.max((post - p.posterior_belief).abs());
            if let Some(next) = trace.slots.get(t + 1) {
                let q = &next.paths[i];
                let el = scenario.saturate(expected_latency_update(
                    p.exp_latency,
                    p.flow,
                    p.posterior_belief,
                    &scenario.hazard,
                ));
                worst = worst.max((el - q.exp_latency).abs() / el.abs().max(1.0));
                let tl = scenario.saturate(scenario.hazard.alpha(p.true_high) * (p.true_latency + p.flow));
                worst = worst.max((tl - q.true_latency).abs() / tl.abs().max(1.0));
                worst = worst.max((q.prev_flow - p.flow).abs());
            }
        }
        worst = worst.max((cost - s.immediate_cost).abs() / cost.abs().max(1.0));
    }
    worst
}
