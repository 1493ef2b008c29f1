//! Game instance description.

use rand::Rng;

use crate::congestion::{ErrorCostModel, HazardParams, ObservationModel, PathState, TwoStateChain};
use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};

/// Shape of the per-slot arrival distribution on `{min, ..., max}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArrivalDist {
    Uniform,
    /// Normal with the scenario mean and this standard deviation, rounded to
    /// integers and truncated to `[min, max]`.
    TruncatedNormal {
        std: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arrivals {
    pub min: u32,
    pub max: u32,
    /// Nominal mean `N` used by closed-form allocations.
    pub mean: f64,
    pub dist: ArrivalDist,
}

impl Arrivals {
    pub fn fixed(n: u32) -> Self {
        Arrivals {
            min: n,
            max: n,
            mean: f64::from(n),
            dist: ArrivalDist::Uniform,
        }
    }

    pub fn uniform(min: u32, max: u32) -> Self {
        Arrivals {
            min,
            max,
            mean: 0.5 * f64::from(min + max),
            dist: ArrivalDist::Uniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min < 1 {
            return Err(Error::invalid("arrivals.min", "must be >= 1"));
        }
        if self.max < self.min {
            return Err(Error::invalid("arrivals.max", "must be >= arrivals.min"));
        }
        if !(self.mean >= f64::from(self.min) && self.mean <= f64::from(self.max)) {
            return Err(Error::invalid("arrivals.mean", "must lie in [min, max]"));
        }
        if let ArrivalDist::TruncatedNormal { std } = self.dist {
            if !(std.is_finite() && std > 0.0) {
                return Err(Error::invalid("arrivals.std", "must be finite and > 0"));
            }
        }
        Ok(())
    }

    /// Support and probabilities of `N(t)`.
    pub fn pmf(&self) -> Vec<(u32, f64)> {
        let ks: Vec<u32> = (self.min..=self.max).collect();
        let raw: Vec<f64> = match self.dist {
            ArrivalDist::Uniform => vec![1.0; ks.len()],
            ArrivalDist::TruncatedNormal { std } => ks
                .iter()
                .map(|&k| {
                    let k = f64::from(k);
                    normal_cdf((k + 0.5 - self.mean) / std) - normal_cdf((k - 0.5 - self.mean) / std)
                })
                .collect(),
        };
        let total: f64 = raw.iter().sum();
        ks.into_iter().zip(raw.into_iter().map(|w| w / total)).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        if self.min == self.max {
            return self.min;
        }
        if self.dist == ArrivalDist::Uniform {
            return rng.gen_range(self.min..=self.max);
        }
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let pmf = self.pmf();
        for &(k, p) in &pmf {
            acc += p;
            if u < acc {
                return k;
            }
        }
        self.max
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Discrete distribution over `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    pub support: Vec<f64>,
    pub weights: Vec<f64>,
}

impl DiscreteDist {
    pub fn uniform(support: Vec<f64>) -> Self {
        let w = 1.0 / support.len() as f64;
        let weights = vec![w; support.len()];
        DiscreteDist { support, weights }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if self.support.is_empty() || self.support.len() != self.weights.len() {
            return Err(Error::invalid(
                field,
                "support and weights must be non-empty and of equal length",
            ));
        }
        if self.support.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::invalid(
                format!("{field}.support"),
                "points must lie in [0, 1]",
            ));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid(format!("{field}.weights"), "must be non-negative"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("{field}.weights"), "must sum to 1"));
        }
        Ok(())
    }

    /// Mass strictly below `x`.
    pub fn mass_below(&self, x: f64) -> f64 {
        self.support
            .iter()
            .zip(&self.weights)
            .filter(|(s, _)| **s < x)
            .map(|(_, w)| w)
            .sum()
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.support
            .iter()
            .zip(&self.weights)
            .map(|(s, w)| w * f(*s))
            .sum()
    }
}

/// How the prior belief of the next slot is formed from this slot's posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BeliefCarry {
    /// `x(t+1) = x'(t)`.
    #[default]
    Posterior,
    /// Running average of posteriors: `x(t+1) = x(t) + (x'(t) - x(t)) / (m + 1)`
    /// where `m` counts earlier slots that produced a report.
    RunningAverage,
}

impl BeliefCarry {
    pub fn name(&self) -> &'static str {
        match self {
            BeliefCarry::Posterior => "posterior",
            BeliefCarry::RunningAverage => "running-average",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "posterior" => Ok(BeliefCarry::Posterior),
            "running-average" => Ok(BeliefCarry::RunningAverage),
            _ => Err(Error::invalid(
                "belief_update",
                format!("unknown rule `{s}` (expected posterior or running-average)"),
            )),
        }
    }

    pub fn next_prior(&self, prior: f64, posterior: f64, observed_before: u32) -> f64 {
        match self {
            BeliefCarry::Posterior => posterior,
            BeliefCarry::RunningAverage => prior + (posterior - prior) / (f64::from(observed_before) + 1.0),
        }
    }
}

/// Optional overrides of the CHAR recommendation probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CharOverrides {
    pub p_low: Option<f64>,
    pub p_high: Option<f64>,
    pub x_th: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSpec {
    pub name: String,
    pub chain: TwoStateChain,
    pub initial_belief: f64,
    pub initial_exp_latency: f64,
    /// Hidden latency at slot 0; defaults to the expected latency.
    pub initial_true_latency: Option<f64>,
    /// Hidden hazard state at slot 0; drawn from the stationary law when absent.
    pub initial_high: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub paths: Vec<PathSpec>,
    pub ell0: f64,
    pub hazard: HazardParams,
    pub obs: ObservationModel,
    pub err: ErrorCostModel,
    pub arrivals: Arrivals,
    pub rho: f64,
    pub prior_xbar: DiscreteDist,
    pub belief_carry: BeliefCarry,
    pub char_overrides: CharOverrides,
    /// Saturation level applied to simulated latencies; `None` leaves them unbounded.
    pub latency_ceiling: Option<f64>,
    /// Fields filled with defaults rather than read from a file.
    pub defaulted: Vec<String>,
}

impl Scenario {
    pub fn m(&self) -> usize {
        self.paths.len()
    }

    pub fn n_mean(&self) -> f64 {
        self.arrivals.mean
    }

    /// Upper end of the latency axis used by the planner and by steady-state estimates.
    pub fn latency_cap(&self) -> f64 {
        self.latency_ceiling.unwrap_or(4.0 * self.ell0)
    }

    pub fn saturate(&self, ell: f64) -> f64 {
        match self.latency_ceiling {
            Some(c) => ell.min(c),
            None => ell,
        }
    }

    pub fn safe_cost(&self, n0: f64) -> f64 {
        self.ell0 + n0
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths.is_empty() {
            return Err(Error::invalid(
                "paths",
                "at least one stochastic path is required",
            ));
        }
        for (i, p) in self.paths.iter().enumerate() {
            p.chain
                .validate()
                .map_err(|e| prefix(e, &format!("paths[{i}]")))?;
            if !(0.0..=1.0).contains(&p.initial_belief) {
                return Err(Error::invalid(
                    format!("paths[{i}].initial_belief"),
                    "must lie in [0, 1]",
                ));
            }
            if !(p.initial_exp_latency.is_finite() && p.initial_exp_latency >= 0.0) {
                return Err(Error::invalid(
                    format!("paths[{i}].initial_exp_latency"),
                    "must be finite and >= 0",
                ));
            }
            if let Some(t) = p.initial_true_latency {
                if !(t.is_finite() && t >= 0.0) {
                    return Err(Error::invalid(
                        format!("paths[{i}].initial_true_latency"),
                        "must be finite and >= 0",
                    ));
                }
            }
        }
        if !(self.ell0.is_finite() && self.ell0 >= 0.0) {
            return Err(Error::invalid("ell0", "must be finite and >= 0"));
        }
        self.hazard.validate()?;
        self.obs.validate()?;
        self.err.validate()?;
        self.arrivals.validate()?;
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::invalid("rho", "must lie in (0, 1)"));
        }
        self.prior_xbar.validate("prior_xbar")?;
        if let Some(c) = self.latency_ceiling {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::invalid("latency_ceiling", "must be finite and > 0"));
            }
        }
        let o = self.char_overrides;
        for (name, v) in [
            ("char.p_L", o.p_low),
            ("char.p_H", o.p_high),
            ("char.x_th", o.x_th),
        ] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::invalid(name, "must lie in [0, 1]"));
                }
            }
        }
        Ok(())
    }

    /// Path states at slot 0 for a given episode seed.
    pub fn initial_states(&self, seed: u64) -> Vec<PathState> {
        self.paths
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let high = p.initial_high.unwrap_or_else(|| {
                    let xbar = p.chain.stationary().unwrap_or(0.5);
                    substream(seed, Purpose::Initial, i, 0).gen::<f64>() < xbar
                });
                PathState {
                    exp_latency: p.initial_exp_latency,
                    belief: p.initial_belief,
                    prev_flow: 0.0,
                    observed_slots: 0,
                    true_alpha_high: high,
                    true_latency: p.initial_true_latency.unwrap_or(p.initial_exp_latency),
                }
            })
            .collect()
    }
}

fn prefix(e: Error, at: &str) -> Error {
    match e {
        Error::Invalid { field, reason } => Error::Invalid {
            field: format!("{at}.{field}"),
            reason,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn truncated_normal_pmf_is_normalised_and_centred() {
        let a = Arrivals {
            min: 84,
            max: 158,
            mean: 121.0,
            dist: ArrivalDist::TruncatedNormal { std: 12.33 },
        };
        let pmf = a.pmf();
        let total: f64 = pmf.iter().map(|p| p.1).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        let mean: f64 = pmf.iter().map(|(k, p)| f64::from(*k) * p).sum();
        assert_abs_diff_eq!(mean, 121.0, epsilon = 1e-6);
    }

    #[test]
    fn uniform_pmf() {
        let pmf = Arrivals::uniform(8, 12).pmf();
        assert_eq!(pmf.len(), 5);
        assert!(pmf.iter().all(|p| (p.1 - 0.2).abs() < 1e-15));
    }

    #[test]
    fn running_average_first_observation_is_the_posterior() {
        let c = BeliefCarry::RunningAverage;
        assert_eq!(c.next_prior(0.7, 0.2, 0), 0.2);
        assert_abs_diff_eq!(c.next_prior(0.2, 0.8, 2), 0.4, epsilon = 1e-15);
    }
}
