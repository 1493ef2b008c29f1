//! Routing behaviours: myopic equilibrium, information hiding, deterministic
//! recommendation and CHAR (combined hiding and probabilistic recommendation).

use rand::Rng;

use crate::congestion::{expected_alpha, PathState, FLOW_EPS};
use crate::error::{Error, Result};
use crate::scenario::{DiscreteDist, Scenario};

/// Flows for one slot. Index 0 is the safe path, `1..=M` the stochastic paths.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowAllocation {
    pub flows: Vec<f64>,
}

impl FlowAllocation {
    pub fn all_safe(m: usize, n_t: f64) -> Self {
        let mut flows = vec![0.0; m + 1];
        flows[0] = n_t;
        FlowAllocation { flows }
    }

    /// Builds an allocation from stochastic-path flows; the safe path gets the rest.
    pub fn from_stochastic(stoch: &[f64], n_t: f64) -> Self {
        let used: f64 = stoch.iter().sum();
        let mut flows = Vec::with_capacity(stoch.len() + 1);
        flows.push((n_t - used).max(0.0));
        flows.extend_from_slice(stoch);
        FlowAllocation { flows }
    }

    pub fn m(&self) -> usize {
        self.flows.len() - 1
    }

    pub fn total(&self) -> f64 {
        self.flows.iter().sum()
    }

    pub fn safe(&self) -> f64 {
        self.flows[0]
    }

    pub fn stochastic(&self) -> &[f64] {
        &self.flows[1..]
    }

    pub fn check(&self, n_t: f64) -> Result<()> {
        if self.flows.iter().any(|f| !(*f >= -FLOW_EPS)) {
            return Err(Error::Invariant(format!("negative flow in {:?}", self.flows)));
        }
        if (self.total() - n_t).abs() > 1e-9 * n_t.max(1.0) {
            return Err(Error::Invariant(format!(
                "flows {:?} sum to {} instead of {n_t}",
                self.flows,
                self.total()
            )));
        }
        Ok(())
    }

    /// Integer flows by largest remainder; ties go to the lower index, so the
    /// safe path wins them.
    pub fn rounded(&self) -> Vec<u32> {
        let total = self.total().round() as i64;
        let mut base: Vec<i64> = self.flows.iter().map(|f| f.max(0.0).floor() as i64).collect();
        let mut rest = total - base.iter().sum::<i64>();
        let mut order: Vec<usize> = (0..self.flows.len()).collect();
        let frac = |i: usize| self.flows[i].max(0.0) - self.flows[i].max(0.0).floor();
        order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
        let mut k = 0;
        while rest > 0 {
            base[order[k % order.len()]] += 1;
            rest -= 1;
            k += 1;
        }
        base.into_iter().map(|v| v.max(0) as u32).collect()
    }
}

/// Cost intercepts `[c_0(0), c_1(0), ..., c_M(0)]` seen by travellers.
pub fn cost_intercepts(scenario: &Scenario, states: &[PathState]) -> Vec<f64> {
    let mut c = Vec::with_capacity(states.len() + 1);
    c.push(scenario.ell0);
    c.extend(states.iter().map(|s| s.cost_intercept(&scenario.err)));
    c
}

/// Myopic equilibrium by water-filling: every used path ends at the same cost
/// level `c*` and every unused path has intercept at least `c*`.
pub fn myopic_allocation(intercepts: &[f64], n_t: f64) -> FlowAllocation {
    let mut order: Vec<usize> = (0..intercepts.len()).collect();
    order.sort_by(|&a, &b| intercepts[a].total_cmp(&intercepts[b]).then(a.cmp(&b)));
    let mut level = intercepts[order[0]] + n_t;
    let mut acc = 0.0;
    for (k, &i) in order.iter().enumerate() {
        acc += intercepts[i];
        let cand = (n_t + acc) / (k as f64 + 1.0);
        let next = order.get(k + 1).map(|&j| intercepts[j]).unwrap_or(f64::INFINITY);
        if cand <= next {
            level = cand;
            break;
        }
    }
    let flows = intercepts.iter().map(|c| (level - c).max(0.0)).collect();
    FlowAllocation { flows }
}

/// Long-run latency of a path with stationary hazard probability `xbar`
/// carrying a constant flow `n`, capped at the scenario's latency cap.
pub fn steady_latency(xbar: f64, n: f64, scenario: &Scenario) -> f64 {
    let a = expected_alpha(xbar, &scenario.hazard);
    let cap = scenario.latency_cap();
    if a >= 1.0 {
        cap
    } else {
        (a * n / (1.0 - a)).min(cap)
    }
}

/// Reference per-path flow used for prior cost estimates.
pub fn reference_flow(scenario: &Scenario) -> f64 {
    scenario.n_mean() / (scenario.m() as f64 + 1.0)
}

/// Prior expected cost intercept `E_xbar[c_i(0)]` of every stochastic path.
pub fn expected_cost_at_xbar(scenario: &Scenario) -> Vec<f64> {
    let n_ref = reference_flow(scenario);
    let lat = scenario.prior_xbar.expect(|x| steady_latency(x, n_ref, scenario));
    vec![lat + scenario.err.cost(n_ref); scenario.m()]
}

/// Constant allocation induced when the platform reveals nothing.
pub fn hiding_allocation(scenario: &Scenario, n_t: f64, exp_cost_at_xbar: &[f64]) -> FlowAllocation {
    let m = scenario.m() as f64;
    let cap = n_t / m;
    let stoch: Vec<f64> = exp_cost_at_xbar
        .iter()
        .map(|c| {
            let raw = (scenario.n_mean() + scenario.ell0 - c) / (m + 1.0);
            raw.min(cap).clamp(0.0, cap)
        })
        .collect();
    FlowAllocation::from_stochastic(&stoch, n_t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReceiverMode {
    /// Receivers reason about what a deterministic recommendation reveals and
    /// end up following the hiding allocation.
    #[default]
    Rational,
    /// Receivers follow the recommendation blindly (diagnostic only).
    Obedient,
}

pub fn deterministic_recommendation_allocation(
    scenario: &Scenario,
    n_t: f64,
    states: &[PathState],
    mode: ReceiverMode,
) -> FlowAllocation {
    match mode {
        ReceiverMode::Rational => hiding_allocation(scenario, n_t, &expected_cost_at_xbar(scenario)),
        ReceiverMode::Obedient => {
            let c = cost_intercepts(scenario, states);
            let best = (0..c.len())
                .min_by(|&a, &b| c[a].total_cmp(&c[b]).then(a.cmp(&b)))
                .unwrap_or(0);
            let mut flows = vec![0.0; c.len()];
            flows[best] = n_t;
            FlowAllocation { flows }
        }
    }
}

/// Recommendation probabilities of CHAR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharParams {
    /// Probability of recommending a path whose belief is below `x_th`.
    pub p_low: f64,
    /// Probability of recommending a path whose belief is at or above `x_th`.
    pub p_high: f64,
    pub x_th: f64,
    /// Prior mass of steady states below `x_th`.
    pub prob_below: f64,
}

impl CharParams {
    pub fn rec_prob(&self, belief: f64) -> f64 {
        if belief < self.x_th {
            self.p_low
        } else {
            self.p_high
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.p_low * self.prob_below >= self.p_high * (1.0 - self.prob_below) - 1e-15
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        for (name, p) in [("p_L", self.p_low), ("p_H", self.p_high)] {
            if !(0.0..=1.0).contains(&p) || p * m as f64 > 1.0 + 1e-12 {
                return Err(Error::invalid(
                    format!("char.{name}"),
                    "must lie in [0, 1/M] so the recommendation law is proper",
                ));
            }
        }
        if !self.is_feasible() {
            return Err(Error::invalid(
                "char.p_H",
                "violates p_L * P(x_th) >= p_H * (1 - P(x_th))",
            ));
        }
        Ok(())
    }
}

/// Default recommendation probabilities for a threshold `x_th`.
pub fn char_choose_params(prior: &DiscreteDist, x_th: f64, m: usize) -> Result<CharParams> {
    let p = prior.mass_below(x_th);
    if p <= 0.0 || p >= 1.0 {
        return Err(Error::DegeneratePrior(format!(
            "prior mass below x_th={x_th} is {p}; recommendations would carry no information"
        )));
    }
    let p_low = (1.0 / m as f64).min(0.9);
    let p_high = (0.5 * p_low * p / (1.0 - p)).min(p_low);
    Ok(CharParams {
        p_low,
        p_high,
        x_th,
        prob_below: p,
    })
}

/// Expected CHAR allocation when `n_hide` of the `n_t` arrivals are hidden.
pub fn char_allocation(
    n_hide: f64,
    n_t: f64,
    hiding: &FlowAllocation,
    beliefs: &[f64],
    params: &CharParams,
) -> FlowAllocation {
    let rec = n_t - n_hide;
    let stoch: Vec<f64> = beliefs
        .iter()
        .zip(hiding.stochastic())
        .map(|(&x, &h)| {
            let hidden = if n_t > 0.0 { n_hide * h / n_t } else { 0.0 };
            hidden + rec * params.rec_prob(x)
        })
        .collect();
    FlowAllocation::from_stochastic(&stoch, n_t)
}

/// One CHAR decision: enumerates the hidden-group size and keeps the candidate
/// with the lowest evaluated cost. Ties favour larger hidden groups.
pub fn char_step<F>(
    states: &[PathState],
    n_t: u32,
    params: &CharParams,
    hiding: &FlowAllocation,
    mut evaluate: F,
) -> Result<(FlowAllocation, u32)>
where
    F: FnMut(&FlowAllocation) -> Result<f64>,
{
    let beliefs: Vec<f64> = states.iter().map(|s| s.belief).collect();
    let nt = f64::from(n_t);
    let mut best: Option<(f64, FlowAllocation, u32)> = None;
    for n_hide in (0..=n_t).rev() {
        let alloc = char_allocation(f64::from(n_hide), nt, hiding, &beliefs, params);
        let cost = evaluate(&alloc)?;
        if best.as_ref().map_or(true, |b| cost < b.0) {
            best = Some((cost, alloc, n_hide));
        }
    }
    let (_, alloc, n_hide) = best.expect("at least one candidate");
    Ok((alloc, n_hide))
}

/// Draws the recommended path: `i` with probability `p(x_i)`, the safe path
/// with the residual probability.
pub fn sample_recommendation<R: Rng + ?Sized>(
    beliefs: &[f64],
    params: &CharParams,
    rng: &mut R,
) -> Result<usize> {
    let probs: Vec<f64> = beliefs.iter().map(|&x| params.rec_prob(x)).collect();
    let total: f64 = probs.iter().sum();
    if total > 1.0 + 1e-12 {
        return Err(Error::Invariant(format!(
            "recommendation probabilities sum to {total} > 1"
        )));
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i + 1);
        }
    }
    Ok(0)
}

/// Outcome of an incentive-compatibility check for one recommended path.
#[derive(Debug, Clone, PartialEq)]
pub struct IncentiveCheck {
    pub recommended: usize,
    /// Posterior expected cost of the recommended path.
    pub recommended_cost: f64,
    /// Posterior expected cost of every stochastic alternative (index = path).
    pub alternative_costs: Vec<(usize, f64)>,
    pub safe_cost: f64,
}

impl IncentiveCheck {
    pub fn against_stochastic(&self, tol: f64) -> bool {
        self.alternative_costs
            .iter()
            .all(|&(_, c)| self.recommended_cost <= c + tol)
    }

    pub fn against_safe(&self, tol: f64) -> bool {
        self.recommended_cost <= self.safe_cost + tol
    }
}

/// Posterior expected costs a recommended traveller faces, by exact
/// enumeration of the joint steady-state prior of all paths.
///
/// `cost(i, xbar)` is the expected cost of path `i` when its steady state is
/// `xbar`; the safe alternative costs `safe_cost`.
pub fn char_incentive_check(
    prior: &DiscreteDist,
    m: usize,
    params: &CharParams,
    recommended: usize,
    safe_cost: f64,
    cost: impl Fn(usize, f64) -> f64,
) -> Result<IncentiveCheck> {
    if recommended == 0 || recommended > m {
        return Err(Error::domain("recommended path must be a stochastic path"));
    }
    let k = prior.support.len();
    let mut idx = vec![0usize; m];
    let mut norm = 0.0;
    let mut acc = vec![0.0; m + 1];
    loop {
        let mut w = 1.0;
        for &j in &idx {
            w *= prior.weights[j];
        }
        let xs: Vec<f64> = idx.iter().map(|&j| prior.support[j]).collect();
        let like = params.rec_prob(xs[recommended - 1]);
        let post = w * like;
        norm += post;
        for p in 1..=m {
            acc[p] += post * cost(p, xs[p - 1]);
        }
        // advance the mixed-radix counter
        let mut d = 0;
        while d < m {
            idx[d] += 1;
            if idx[d] < k {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == m {
            break;
        }
    }
    if norm <= 0.0 {
        return Err(Error::DegeneratePrior(
            "recommendation has zero probability under the prior".into(),
        ));
    }
    let alternative_costs = (1..=m)
        .filter(|&p| p != recommended)
        .map(|p| (p, acc[p] / norm))
        .collect();
    Ok(IncentiveCheck {
        recommended,
        recommended_cost: acc[recommended] / norm,
        alternative_costs,
        safe_cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn myopic_examples() {
        let a = myopic_allocation(&[10.0, 10.0], 10.0);
        assert_eq!(a.flows, vec![5.0, 5.0]);
        let a = myopic_allocation(&[10.0, 25.0], 10.0);
        assert_eq!(a.flows, vec![10.0, 0.0]);
        let a = myopic_allocation(&[14.0, 10.0], 10.0);
        assert_abs_diff_eq!(a.flows[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.flows[1], 7.0, epsilon = 1e-12);
        let a = myopic_allocation(&[10.0, 10.0, 10.0], 12.0);
        for f in a.flows {
            assert_abs_diff_eq!(f, 4.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rounding_breaks_ties_towards_safe_path() {
        let a = FlowAllocation {
            flows: vec![2.5, 2.5, 5.0],
        };
        assert_eq!(a.rounded(), vec![3, 2, 5]);
    }

    #[test]
    fn char_params_examples() {
        let prior = DiscreteDist::uniform(vec![0.1, 0.2, 0.6, 0.9]);
        let p = char_choose_params(&prior, 0.5, 1).unwrap();
        assert_abs_diff_eq!(p.p_low, 0.9);
        assert_abs_diff_eq!(p.p_high, 0.45, epsilon = 1e-15);
        assert!(p.is_feasible());
        let p = char_choose_params(&prior, 0.15, 2).unwrap();
        assert_abs_diff_eq!(p.prob_below, 0.25);
        assert_abs_diff_eq!(p.p_low, 0.5);
        assert_abs_diff_eq!(p.p_high, 0.5 * 0.5 * (0.25 / 0.75), epsilon = 1e-15);
        assert!(char_choose_params(&prior, 0.05, 1).is_err());
        assert!(char_choose_params(&prior, 0.95, 1).is_err());
    }

    #[test]
    fn sample_recommendation_rejects_improper_law() {
        let params = CharParams {
            p_low: 0.6,
            p_high: 0.6,
            x_th: 0.5,
            prob_below: 0.5,
        };
        let mut rng = rand::thread_rng();
        assert!(sample_recommendation(&[0.1, 0.2], &params, &mut rng).is_err());
    }
}
