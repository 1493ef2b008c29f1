//! Latency evolution, observation fusion and Bayesian belief updates.

use rand::Rng;

use crate::error::{Error, Result};

/// Flows at or below this are treated as "nobody travelled".
pub const FLOW_EPS: f64 = 1e-9;

/// Correlation coefficients of the two hazard states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HazardParams {
    pub alpha_high: f64,
    pub alpha_low: f64,
}

impl HazardParams {
    pub fn new(alpha_high: f64, alpha_low: f64) -> Result<Self> {
        let h = HazardParams {
            alpha_high,
            alpha_low,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_high.is_finite() && self.alpha_high >= 1.0) {
            return Err(Error::invalid("alpha.H", "must be finite and >= 1"));
        }
        if !(self.alpha_low >= 0.0 && self.alpha_low < 1.0) {
            return Err(Error::invalid("alpha.L", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn alpha(&self, high: bool) -> f64 {
        if high {
            self.alpha_high
        } else {
            self.alpha_low
        }
    }
}

/// Two-state Markov chain driving a path's hazard state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoStateChain {
    /// Probability of moving from the low to the high state in one slot.
    pub p_lh: f64,
    /// Probability of moving from the high to the low state in one slot.
    pub p_hl: f64,
}

impl TwoStateChain {
    pub fn new(p_lh: f64, p_hl: f64) -> Result<Self> {
        let c = TwoStateChain { p_lh, p_hl };
        c.validate()?;
        Ok(c)
    }

    /// Chain with stationary high-state probability `xbar` and `p_lh + p_hl = mixing`.
    pub fn from_stationary(xbar: f64, mixing: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&xbar) {
            return Err(Error::invalid("stationary", "must lie in [0, 1]"));
        }
        if !(mixing > 0.0 && mixing <= 1.0) {
            return Err(Error::invalid("mixing", "must lie in (0, 1]"));
        }
        TwoStateChain::new(mixing * xbar, mixing * (1.0 - xbar))
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_lh) {
            return Err(Error::invalid("chain.p_LH", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.p_hl) {
            return Err(Error::invalid("chain.p_HL", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Long-run probability of the high state.
    pub fn stationary(&self) -> Result<f64> {
        let s = self.p_lh + self.p_hl;
        if s <= 0.0 {
            return Err(Error::UndefinedStationary);
        }
        Ok(self.p_lh / s)
    }

    /// Probability that the next state is high given the current one.
    pub fn prob_next_high(&self, high: bool) -> f64 {
        if high {
            1.0 - self.p_hl
        } else {
            self.p_lh
        }
    }
}

/// How a group of `n` travellers' reports is summarised into one signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObservationModel {
    /// `q_H(n) = 1 - 0.5 gamma^n`, `q_L(n) = 0.5 gamma^n`.
    Parametric { gamma: f64 },
    /// Majority vote over i.i.d. observers. An exact tie is settled by a fair coin.
    MajorityVote { accuracy: f64 },
}

impl Default for ObservationModel {
    fn default() -> Self {
        ObservationModel::Parametric { gamma: 0.6 }
    }
}

impl ObservationModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ObservationModel::Parametric { gamma } => {
                if !(gamma > 0.0 && gamma < 1.0) {
                    return Err(Error::invalid("observation.gamma", "must lie in (0, 1)"));
                }
            }
            ObservationModel::MajorityVote { accuracy } => {
                if !(accuracy > 0.5 && accuracy <= 1.0) {
                    return Err(Error::invalid("observation.accuracy", "must lie in (0.5, 1]"));
                }
            }
        }
        Ok(())
    }
}

/// `(q_H(n), q_L(n))`: probability the fused summary reads "hazard" under the
/// high and the low state respectively.
pub fn group_obs_probs(n: u32, obs: &ObservationModel) -> Result<(f64, f64)> {
    let g = group_probs(n, obs)?;
    Ok((g.q_h, g.q_l))
}

/// Group probabilities together with separately computed complements, so that
/// a "clear" report keeps its (tiny) likelihood under the high state even when
/// `q_H` rounds to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupProbs {
    pub q_h: f64,
    pub q_l: f64,
    /// `1 - q_H`.
    pub miss_h: f64,
    /// `1 - q_L`.
    pub miss_l: f64,
}

impl GroupProbs {
    pub fn from_raw(q_h: f64, q_l: f64) -> Self {
        GroupProbs {
            q_h,
            q_l,
            miss_h: 1.0 - q_h,
            miss_l: 1.0 - q_l,
        }
    }
}

pub fn group_probs(n: u32, obs: &ObservationModel) -> Result<GroupProbs> {
    if n == 0 {
        return Err(Error::domain("group_obs_probs needs at least one observer"));
    }
    Ok(match *obs {
        ObservationModel::Parametric { gamma } => {
            let g = 0.5 * gamma.powi(n as i32);
            GroupProbs {
                q_h: 1.0 - g,
                q_l: g,
                miss_h: g,
                miss_l: 1.0 - g,
            }
        }
        ObservationModel::MajorityVote { accuracy } => {
            // with half-weight ties the vote is symmetric: 1 - q(p) = q(1 - p)
            let hi = majority_hazard_prob(n, accuracy);
            let lo = majority_hazard_prob(n, 1.0 - accuracy);
            GroupProbs {
                q_h: hi,
                q_l: lo,
                miss_h: lo,
                miss_l: hi,
            }
        }
    })
}

/// Probability that a majority of `n` voters, each saying "hazard" with
/// probability `p`, says "hazard" (ties count one half).
fn majority_hazard_prob(n: u32, p: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let mut total = 0.0;
    let half = n / 2;
    for k in half..=n {
        let w = if 2 * k == n {
            0.5
        } else if 2 * k > n {
            1.0
        } else {
            continue;
        };
        total += w * binom_pmf(n, k, p);
    }
    total.clamp(0.0, 1.0)
}

fn binom_pmf(n: u32, k: u32, p: f64) -> f64 {
    if n <= 1000 {
        let k_small = k.min(n - k);
        let mut c = 1.0_f64;
        for j in 0..k_small {
            c = c * f64::from(n - j) / f64::from(j + 1);
        }
        c * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
    } else {
        let ln = libm::lgamma(f64::from(n) + 1.0)
            - libm::lgamma(f64::from(k) + 1.0)
            - libm::lgamma(f64::from(n - k) + 1.0)
            + f64::from(k) * p.ln()
            + f64::from(n - k) * (1.0 - p).ln();
        ln.exp()
    }
}

/// Fused report of a path for one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HazardSummary {
    Hazard,
    Clear,
    /// Nobody travelled the path, so there is nothing to report.
    NoReport,
}

impl HazardSummary {
    /// Compact code used in CSV output: `1`, `0` or an empty field.
    pub fn code(&self) -> &'static str {
        match self {
            HazardSummary::Hazard => "1",
            HazardSummary::Clear => "0",
            HazardSummary::NoReport => "",
        }
    }
}

/// Number of reporting observers for a (possibly fractional) flow.
///
/// Any positive flow yields at least one observer.
pub fn observer_count(flow: f64) -> u32 {
    if flow <= FLOW_EPS {
        0
    } else {
        flow.round().max(1.0) as u32
    }
}

/// Draw the fused summary for `n` observers of a path in the given true state.
pub fn fuse_observations<R: Rng + ?Sized>(
    true_alpha_high: bool,
    n: u32,
    obs: &ObservationModel,
    rng: &mut R,
) -> HazardSummary {
    if n == 0 {
        return HazardSummary::NoReport;
    }
    let (qh, ql) = group_obs_probs(n, obs).expect("n >= 1");
    let p = if true_alpha_high { qh } else { ql };
    if rng.gen::<f64>() < p {
        HazardSummary::Hazard
    } else {
        HazardSummary::Clear
    }
}

/// Result of a Bayes step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeliefUpdate {
    pub belief: f64,
    /// Set when the evidence had zero probability under the prior and the
    /// prior was returned unchanged.
    pub degenerate: bool,
}

/// Bayes update of a hazard belief from raw group probabilities.
pub fn bayes_update(x: f64, y: HazardSummary, q_h: f64, q_l: f64) -> BeliefUpdate {
    bayes_update_probs(x, y, &GroupProbs::from_raw(q_h, q_l))
}

pub fn bayes_update_probs(x: f64, y: HazardSummary, g: &GroupProbs) -> BeliefUpdate {
    let (lh, ll) = match y {
        HazardSummary::NoReport => {
            return BeliefUpdate {
                belief: x,
                degenerate: false,
            }
        }
        HazardSummary::Hazard => (g.q_h, g.q_l),
        HazardSummary::Clear => (g.miss_h, g.miss_l),
    };
    let num = x * lh;
    let den = num + (1.0 - x) * ll;
    if den <= 0.0 {
        return BeliefUpdate {
            belief: x,
            degenerate: true,
        };
    }
    BeliefUpdate {
        belief: (num / den).clamp(0.0, 1.0),
        degenerate: false,
    }
}

/// Posterior hazard belief after observing `y` from `n` observers.
pub fn posterior_belief(x: f64, y: HazardSummary, n: u32, obs: &ObservationModel) -> Result<BeliefUpdate> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("belief {x} outside [0, 1]")));
    }
    if y == HazardSummary::NoReport {
        return Ok(bayes_update(x, y, 0.0, 0.0));
    }
    Ok(bayes_update_probs(x, y, &group_probs(n, obs)?))
}

/// Probability that the fused summary reads "hazard" under belief `x`.
pub fn prob_hazard_report(x: f64, q_h: f64, q_l: f64) -> f64 {
    x * q_h + (1.0 - x) * q_l
}

/// `E[alpha | x]`.
pub fn expected_alpha(x: f64, hazard: &HazardParams) -> f64 {
    x * hazard.alpha_high + (1.0 - x) * hazard.alpha_low
}

/// The latency correlation function `l(t+1) = f(l(t), n(t), alpha(t))`.
pub trait Dynamics {
    fn step(&self, ell: f64, n: f64, alpha: f64) -> f64;

    /// Expectation of `step` over the hazard state under belief `x_post`.
    fn expected_step(&self, ell: f64, n: f64, x_post: f64, hazard: &HazardParams) -> f64 {
        x_post * self.step(ell, n, hazard.alpha_high) + (1.0 - x_post) * self.step(ell, n, hazard.alpha_low)
    }
}

/// `f(l, n, alpha) = alpha (l + n)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LinearDynamics;

impl Dynamics for LinearDynamics {
    fn step(&self, ell: f64, n: f64, alpha: f64) -> f64 {
        alpha * (ell + n)
    }

    fn expected_step(&self, ell: f64, n: f64, x_post: f64, hazard: &HazardParams) -> f64 {
        expected_alpha(x_post, hazard) * (ell + n)
    }
}

/// One step of the default linear latency dynamics.
pub fn latency_step(ell: f64, n: f64, alpha: f64) -> Result<f64> {
    if ell < 0.0 || n < 0.0 || alpha < 0.0 || ell.is_nan() || n.is_nan() || alpha.is_nan() {
        return Err(Error::domain(format!(
            "latency_step needs non-negative inputs, got ell={ell}, n={n}, alpha={alpha}"
        )));
    }
    Ok(LinearDynamics.step(ell, n, alpha))
}

/// Next expected latency under the default linear dynamics.
pub fn expected_latency_update(exp_ell: f64, n: f64, x_post: f64, hazard: &HazardParams) -> f64 {
    LinearDynamics.expected_step(exp_ell, n, x_post, hazard)
}

/// Extra cost caused by imperfect fused reports, `V(n) = v0 / (1 + n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorCostModel {
    pub v0: f64,
}

impl ErrorCostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.v0.is_finite() && self.v0 >= 0.0) {
            return Err(Error::invalid("error_cost.v0", "must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn cost(&self, n_prev: f64) -> f64 {
        self.v0 / (1.0 + n_prev.max(0.0))
    }
}

pub fn error_cost(n_prev: f64, err: &ErrorCostModel) -> f64 {
    err.cost(n_prev)
}

/// Public and hidden state of one stochastic path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathState {
    /// Published expected latency for the current slot.
    pub exp_latency: f64,
    /// Prior hazard belief for the current slot.
    pub belief: f64,
    /// Flow on the path during the previous slot (drives the error cost).
    pub prev_flow: f64,
    /// Number of slots in which the path produced a report so far.
    pub observed_slots: u32,
    pub true_alpha_high: bool,
    pub true_latency: f64,
}

impl PathState {
    /// Cost intercept `E[l] + V(n_prev)` seen by a traveller considering this path.
    pub fn cost_intercept(&self, err: &ErrorCostModel) -> f64 {
        self.exp_latency + err.cost(self.prev_flow)
    }
}
