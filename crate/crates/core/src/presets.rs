//! Named scenarios.

use crate::congestion::{ErrorCostModel, HazardParams, ObservationModel, TwoStateChain};
use crate::error::{Error, Result};
use crate::ingest::beijing_preset;
use crate::planner::ThresholdSlice;
use crate::poa::{hiding_worst_scenarios, myopic_worst_scenario, HidingWorstParams, MyopicWorstParams};
use crate::scenario::{Arrivals, BeliefCarry, CharOverrides, DiscreteDist, PathSpec, Scenario};

pub const PRESET_NAMES: [&str; 6] = [
    "beijing",
    "myopic-worst",
    "hiding-over",
    "hiding-under",
    "convergence",
    "threshold",
];

pub fn preset(name: &str) -> Result<Scenario> {
    match name {
        "beijing" => Ok(beijing_preset()),
        "myopic-worst" => myopic_worst_scenario(&MyopicWorstParams::default()),
        "hiding-over" => Ok(hiding_worst_scenarios(&HidingWorstParams::default())?.0),
        "hiding-under" => Ok(hiding_worst_scenarios(&HidingWorstParams::default())?.1),
        "convergence" => Ok(convergence_scenario()),
        "threshold" => Ok(threshold_scenario(5.0)),
        other => Err(Error::invalid(
            "preset",
            format!(
                "unknown preset `{other}`; valid names: {}",
                PRESET_NAMES.join(", ")
            ),
        )),
    }
}

/// One path with `xbar = 0.3` whose high state does not amplify latency, so
/// the optimal policy keeps observing it; beliefs carry as a running average
/// of the posteriors.
pub fn convergence_scenario() -> Scenario {
    Scenario {
        name: "convergence".into(),
        paths: vec![PathSpec {
            name: "path-1".into(),
            chain: TwoStateChain {
                p_lh: 0.12,
                p_hl: 0.28,
            },
            initial_belief: 0.7,
            initial_exp_latency: 10.0,
            initial_true_latency: None,
            initial_high: None,
        }],
        ell0: 20.0,
        hazard: HazardParams {
            alpha_high: 1.0,
            alpha_low: 0.3,
        },
        obs: ObservationModel::Parametric { gamma: 0.4 },
        err: ErrorCostModel { v0: 2.0 },
        arrivals: Arrivals::uniform(8, 12),
        rho: 0.98,
        prior_xbar: DiscreteDist::uniform(vec![0.1, 0.3, 0.5]),
        belief_carry: BeliefCarry::RunningAverage,
        char_overrides: CharOverrides::default(),
        latency_ceiling: None,
        defaulted: Vec::new(),
    }
}

/// One path, ten users per slot and sharp observations, so the optimal flow
/// moves smoothly with the belief.
pub fn threshold_scenario(v0: f64) -> Scenario {
    Scenario {
        name: "threshold".into(),
        paths: vec![PathSpec {
            name: "path-1".into(),
            chain: TwoStateChain {
                p_lh: 0.12,
                p_hl: 0.28,
            },
            initial_belief: 0.5,
            initial_exp_latency: 5.0,
            initial_true_latency: None,
            initial_high: None,
        }],
        ell0: 10.0,
        hazard: HazardParams {
            alpha_high: 1.3,
            alpha_low: 0.3,
        },
        obs: ObservationModel::Parametric { gamma: 0.05 },
        err: ErrorCostModel { v0 },
        arrivals: Arrivals::fixed(10),
        rho: 0.98,
        prior_xbar: DiscreteDist::uniform(vec![0.1, 0.3, 0.5]),
        belief_carry: BeliefCarry::Posterior,
        char_overrides: CharOverrides::default(),
        latency_ceiling: None,
        defaulted: Vec::new(),
    }
}

/// Belief slice used with [`threshold_scenario`].
pub fn threshold_slice() -> ThresholdSlice {
    ThresholdSlice {
        prev_latency: 5.0,
        prev_flow: 5.0,
        users: 10.0,
        resolution: 0.01,
    }
}
