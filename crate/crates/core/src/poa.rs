//! Price-of-anarchy bounds, worst-case scenario generators and empirical ratios.

use std::io::Write;

use crate::congestion::{ErrorCostModel, HazardParams, ObservationModel, TwoStateChain};
use crate::error::{Error, Result};
use crate::scenario::{Arrivals, BeliefCarry, CharOverrides, DiscreteDist, PathSpec, Scenario};
use crate::sim::{mean_stderr, monte_carlo_checkpoints, Policy};

/// `2 (1 - rho^k) / (2 - rho - rho^k)`.
pub fn bound_from_k(rho: f64, k: f64) -> f64 {
    // rearranged so rounding stays monotone in k near saturation
    let one_minus_rk = -(k * rho.ln()).exp_m1();
    2.0 / (1.0 + (1.0 - rho) / one_minus_rk)
}

/// Inputs of the myopic lower bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MyopicBoundInputs {
    pub rho: f64,
    pub alpha_high: f64,
    pub m: usize,
    pub ell0: f64,
    pub n_min: f64,
    pub n_max: f64,
    /// `V(N_min / M)`.
    pub v_at_min_share: f64,
}

impl MyopicBoundInputs {
    pub fn from_scenario(s: &Scenario) -> Self {
        let m = s.m();
        let n_min = f64::from(s.arrivals.min);
        MyopicBoundInputs {
            rho: s.rho,
            alpha_high: s.hazard.alpha_high,
            m,
            ell0: s.ell0,
            n_min,
            n_max: f64::from(s.arrivals.max),
            v_at_min_share: s.err.cost(n_min / m as f64),
        }
    }
}

/// Returns `(k, bound)` of the myopic price-of-anarchy lower bound.
pub fn myopic_bound(p: &MyopicBoundInputs) -> Result<(f64, f64)> {
    if !(p.alpha_high > 1.0) {
        return Err(Error::domain("alpha_H must exceed 1 for the logarithm base"));
    }
    let m = p.m as f64;
    let slack = p.ell0 - p.n_min / m - p.v_at_min_share;
    if !(slack > 0.0) {
        return Err(Error::domain("ell0 must exceed N_min/M + V(N_min/M)"));
    }
    let arg = m * slack * (p.alpha_high - 1.0) / (p.alpha_high * p.n_max) + 1.0;
    let k = 1.0 + arg.ln() / p.alpha_high.ln();
    Ok((k, bound_from_k(p.rho, k)))
}

/// Closed-form price of anarchy of CHAR for `M` paths and mean arrivals `N`.
pub fn char_poa(m: usize, n: f64, err: &ErrorCostModel) -> f64 {
    let mf = m as f64;
    let arg = n * (2.0 * mf + 1.0) / (2.0 * mf * (mf + 1.0));
    1.0 + 1.0 / (2.0 * (mf + 1.0) * (1.0 + (mf / n) * err.cost(arg)))
}

/// Geometry of the worst case for myopic routing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MyopicWorstParams {
    pub m: usize,
    pub n_min: u32,
    pub n_max: u32,
    pub ell0: f64,
    pub alpha_high: f64,
    pub v0: f64,
    pub rho: f64,
    /// Observer accuracy; kept just below one so beliefs can still move after
    /// a certain-looking report.
    pub accuracy: f64,
}

impl Default for MyopicWorstParams {
    fn default() -> Self {
        MyopicWorstParams {
            m: 1,
            n_min: 9,
            n_max: 11,
            ell0: 1000.0,
            alpha_high: 1.01,
            v0: 0.1,
            rho: 0.98,
            accuracy: 1.0 - 1e-9,
        }
    }
}

/// Scenario in which myopic travellers never explore although one exploring
/// slot would reveal a free path.
///
/// Every path starts in the low state and then stays high forever; the prior
/// belief `1/alpha_H` makes the expected coefficient exactly one, and the
/// expected latency is set so that `c_i(0) = c_0(N_max)`.
pub fn myopic_worst_scenario(p: &MyopicWorstParams) -> Result<Scenario> {
    if !(p.alpha_high > 1.0) {
        return Err(Error::domain("alpha_H must exceed 1"));
    }
    let err = ErrorCostModel { v0: p.v0 };
    let x0 = 1.0 / p.alpha_high;
    let ell = p.ell0 + f64::from(p.n_max) - err.cost(0.0);
    let paths = (0..p.m)
        .map(|i| PathSpec {
            name: format!("worst-{}", i + 1),
            chain: TwoStateChain { p_lh: 1.0, p_hl: 0.0 },
            initial_belief: x0,
            initial_exp_latency: ell,
            initial_true_latency: None,
            initial_high: Some(false),
        })
        .collect();
    let s = Scenario {
        name: "myopic-worst".into(),
        paths,
        ell0: p.ell0,
        hazard: HazardParams::new(p.alpha_high, 0.0)?,
        obs: ObservationModel::MajorityVote { accuracy: p.accuracy },
        err,
        arrivals: Arrivals::uniform(p.n_min, p.n_max),
        rho: p.rho,
        prior_xbar: DiscreteDist::uniform(vec![x0]),
        belief_carry: BeliefCarry::Posterior,
        char_overrides: CharOverrides::default(),
        latency_ceiling: None,
        defaulted: Vec::new(),
    };
    s.validate()?;
    Ok(s)
}

/// Geometry of the worst cases for information hiding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HidingWorstParams {
    pub n_min: u32,
    pub n_max: u32,
    pub ell0: f64,
    pub alpha_high: f64,
    pub alpha_low: f64,
    pub v0: f64,
    pub rho: f64,
    /// Initial latency of the over-exploration case as a multiple of `ell0`.
    pub latency_scale: f64,
}

impl Default for HidingWorstParams {
    fn default() -> Self {
        HidingWorstParams {
            n_min: 9,
            n_max: 11,
            ell0: 30.0,
            alpha_high: 1.02,
            alpha_low: 0.3,
            v0: 1.0,
            rho: 0.98,
            latency_scale: 10.0,
        }
    }
}

/// `(over, under)`: in the first the prior promises a cheap path that is in
/// fact congested and hazardous, so hiding sends everyone there; in the
/// second the prior scares everyone away from a path that is in fact free.
pub fn hiding_worst_scenarios(p: &HidingWorstParams) -> Result<(Scenario, Scenario)> {
    let hazard = HazardParams::new(p.alpha_high, p.alpha_low)?;
    let err = ErrorCostModel { v0: p.v0 };
    let base = |name: &str, path: PathSpec, prior: Vec<f64>| Scenario {
        name: name.into(),
        paths: vec![path],
        ell0: p.ell0,
        hazard,
        obs: ObservationModel::default(),
        err,
        arrivals: Arrivals::uniform(p.n_min, p.n_max),
        rho: p.rho,
        prior_xbar: DiscreteDist::uniform(prior),
        belief_carry: BeliefCarry::Posterior,
        char_overrides: CharOverrides::default(),
        latency_ceiling: None,
        defaulted: Vec::new(),
    };
    let over = base(
        "hiding-over",
        PathSpec {
            name: "lure".into(),
            chain: TwoStateChain { p_lh: 1.0, p_hl: 0.0 },
            initial_belief: 0.9,
            initial_exp_latency: p.latency_scale * p.ell0,
            initial_true_latency: None,
            initial_high: Some(true),
        },
        vec![0.05, 0.1],
    );
    let under = base(
        "hiding-under",
        PathSpec {
            name: "shunned".into(),
            chain: TwoStateChain { p_lh: 0.0, p_hl: 1.0 },
            initial_belief: 0.1,
            initial_exp_latency: 0.0,
            initial_true_latency: None,
            initial_high: Some(false),
        },
        vec![0.9, 0.95],
    );
    over.validate()?;
    under.validate()?;
    Ok((over, under))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoaReport {
    pub scenario: String,
    pub policy: String,
    pub reference: String,
    pub horizon: usize,
    pub numerator: f64,
    pub numerator_stderr: f64,
    pub denominator: f64,
    pub denominator_stderr: f64,
    pub ratio: f64,
    /// Delta-method standard error of the ratio over paired replications.
    pub ratio_stderr: f64,
    pub bound: Option<f64>,
    pub k: Option<f64>,
}

/// Ratio of mean discounted costs of `policy` over `reference`, both run on
/// the same replication seeds.
pub fn empirical_poa(
    scenario: &Scenario,
    policy: &Policy,
    reference: &Policy,
    horizon: usize,
    reps: usize,
    seed: u64,
    jobs: usize,
) -> Result<PoaReport> {
    let num = monte_carlo_checkpoints(scenario, policy, &[horizon], reps, seed, jobs)?.remove(0);
    let den = monte_carlo_checkpoints(scenario, reference, &[horizon], reps, seed, jobs)?.remove(0);
    if !(den.mean > 0.0) {
        return Err(Error::Numeric("reference policy has zero cost".into()));
    }
    let ratio = num.mean / den.mean;
    let resid: Vec<f64> = num
        .costs
        .iter()
        .zip(&den.costs)
        .map(|(a, b)| a - ratio * b)
        .collect();
    let (_, se_resid) = mean_stderr(&resid);
    Ok(PoaReport {
        scenario: scenario.name.clone(),
        policy: policy.name().into(),
        reference: reference.name().into(),
        horizon,
        numerator: num.mean,
        numerator_stderr: num.stderr,
        denominator: den.mean,
        denominator_stderr: den.stderr,
        ratio,
        ratio_stderr: se_resid / den.mean,
        bound: None,
        k: None,
    })
}

impl PoaReport {
    /// Attaches the myopic lower bound of `scenario` when it is defined.
    pub fn with_myopic_bound(mut self, scenario: &Scenario) -> Self {
        if let Ok((k, bound)) = myopic_bound(&MyopicBoundInputs::from_scenario(scenario)) {
            self.k = Some(k);
            self.bound = Some(bound);
        }
        self
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// `scenario, policy, ratio, stderr, bound, k`.
pub fn write_poa_csv<W: Write>(reports: &[PoaReport], mut w: W) -> std::io::Result<()> {
    writeln!(w, "scenario,policy,ratio,stderr,bound,k")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.scenario,
            r.policy,
            r.ratio,
            r.ratio_stderr,
            opt(r.bound),
            opt(r.k)
        )?;
    }
    Ok(())
}

/// Long format: `scenario, policy, quantity, value`.
pub fn write_poa_long<W: Write>(reports: &[PoaReport], mut w: W) -> std::io::Result<()> {
    writeln!(w, "scenario,policy,quantity,value")?;
    for r in reports {
        let rows = [
            ("numerator", Some(r.numerator)),
            ("numerator_stderr", Some(r.numerator_stderr)),
            ("denominator", Some(r.denominator)),
            ("denominator_stderr", Some(r.denominator_stderr)),
            ("ratio", Some(r.ratio)),
            ("ratio_stderr", Some(r.ratio_stderr)),
            ("bound", r.bound),
            ("k", r.k),
        ];
        for (q, v) in rows {
            if let Some(v) = v {
                writeln!(w, "{},{},{},{}", r.scenario, r.policy, q, v)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bound_examples() {
        assert_abs_diff_eq!(bound_from_k(0.98, 50.0), 1.93901, epsilon = 1e-4);
        assert_abs_diff_eq!(bound_from_k(0.7, 1.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn char_closed_form_example() {
        let v = char_poa(1, 121.0, &ErrorCostModel { v0: 10.0 });
        assert_abs_diff_eq!(v, 1.249775, epsilon = 1e-6);
    }

    #[test]
    fn myopic_bound_needs_alpha_above_one() {
        let mut p = MyopicBoundInputs {
            rho: 0.98,
            alpha_high: 1.0,
            m: 1,
            ell0: 100.0,
            n_min: 9.0,
            n_max: 11.0,
            v_at_min_share: 0.1,
        };
        assert!(myopic_bound(&p).is_err());
        p.alpha_high = 1.3;
        let (k, b) = myopic_bound(&p).unwrap();
        assert!(k > 1.0 && b > 1.0 && b < 2.0);
    }
}
