use std::sync::OnceLock;

use hazard_core::congestion::{ErrorCostModel, HazardParams, ObservationModel, PathState, TwoStateChain};
use hazard_core::ingest::beijing_preset;
use hazard_core::planner::{
    exploration_threshold, flow_gap, ErrorTerm, Planner, PlannerConfig, Rollout, ThresholdSlice,
};
use hazard_core::policy::myopic_allocation;
use hazard_core::presets::{threshold_scenario, threshold_slice};
use hazard_core::scenario::{Arrivals, BeliefCarry, CharOverrides, DiscreteDist, PathSpec, Scenario};

fn one_path(ell0: f64, alpha_low: f64, v0: f64, users: u32, rho: f64) -> Scenario {
    Scenario {
        name: "one-path".into(),
        paths: vec![PathSpec {
            name: "p".into(),
            chain: TwoStateChain { p_lh: 0.1, p_hl: 0.3 },
            initial_belief: 0.5,
            initial_exp_latency: ell0,
            initial_true_latency: None,
            initial_high: None,
        }],
        ell0,
        hazard: HazardParams {
            alpha_high: 1.3,
            alpha_low,
        },
        obs: ObservationModel::Parametric { gamma: 0.6 },
        err: ErrorCostModel { v0 },
        arrivals: Arrivals::fixed(users),
        rho,
        prior_xbar: DiscreteDist::uniform(vec![0.25]),
        belief_carry: BeliefCarry::Posterior,
        char_overrides: CharOverrides::default(),
        latency_ceiling: None,
        defaulted: Vec::new(),
    }
}

fn state(exp_latency: f64, belief: f64) -> PathState {
    PathState {
        exp_latency,
        belief,
        prev_flow: 0.0,
        observed_slots: 0,
        true_alpha_high: false,
        true_latency: exp_latency,
    }
}

fn beijing_planner() -> &'static Planner {
    static P: OnceLock<Planner> = OnceLock::new();
    P.get_or_init(|| Planner::solve(&beijing_preset(), &PlannerConfig::default()).unwrap())
}

fn threshold_planner() -> &'static Planner {
    static P: OnceLock<Planner> = OnceLock::new();
    P.get_or_init(|| Planner::solve(&threshold_scenario(5.0), &PlannerConfig::default()).unwrap())
}

#[test]
fn one_shot_optimum_splits_six_four_where_myopic_sends_seven() {
    let s = one_path(20.0, 0.3, 0.0, 10, 1e-9);
    let p = Planner::solve(&s, &PlannerConfig::default()).unwrap();
    assert_eq!(p.best_flow(&state(16.0, 0.5), 10.0, 1.0), 6.0);
    assert_eq!(myopic_allocation(&[20.0, 16.0], 10.0).flows[1], 7.0);
}

#[test]
fn one_shot_optimum_reacts_to_cost_gap_at_half_the_myopic_rate() {
    let s = one_path(20.0, 0.3, 0.0, 10, 1e-9);
    let p = Planner::solve(&s, &PlannerConfig::default()).unwrap();
    for g in 0..=8 {
        let gap = f64::from(g);
        let opt = p.best_flow(&state(20.0 - gap, 0.5), 10.0, 0.01);
        let myo = myopic_allocation(&[20.0, 20.0 - gap], 10.0).flows[1];
        assert!((opt - (5.0 + gap / 4.0)).abs() <= 0.01, "gap {gap}: n* = {opt}");
        assert!(
            (myo - (5.0 + gap / 2.0)).abs() <= 1e-12,
            "gap {gap}: myopic = {myo}"
        );
    }
}

#[test]
fn depth_one_rollout_is_the_one_shot_minimiser() {
    let s = one_path(20.0, 0.3, 0.0, 10, 1e-9);
    let r = Rollout {
        scenario: &s,
        depth: 1,
        terminal: None,
    };
    let a = r.optimal_allocation(&[state(16.0, 0.5)], 10.0, 1.0);
    assert_eq!(a.flows, vec![4.0, 6.0]);
}

#[test]
fn optimum_explores_a_path_the_myopic_crowd_abandons() {
    let s = threshold_scenario(0.1);
    let p = Planner::solve(&s, &PlannerConfig::default()).unwrap();
    for x in [0.1, 0.5, 0.9] {
        let st = state(25.0, x);
        assert_eq!(p.myopic_flow(&st, 10.0), 0.0);
        assert!(p.best_flow(&st, 10.0, 1.0) > 0.0, "no exploration at x = {x}");
    }
}

#[test]
fn certain_free_path_gets_no_more_than_the_myopic_flow() {
    let s = one_path(10.0, 0.0, 1.0, 10, 0.98);
    let p = Planner::solve(&s, &PlannerConfig::default()).unwrap();
    let st = state(0.0, 0.0);
    let opt = p.best_flow(&st, 10.0, 1.0);
    let myo = myopic_allocation(&[10.0, st.exp_latency + s.err.cost(st.prev_flow)], 10.0).flows[1];
    assert!(opt > 0.0 && opt <= myo, "n* = {opt}, myopic = {myo}");
}

#[test]
fn values_are_nonnegative_and_greedy_flows_bounded() {
    let vf = &threshold_planner().value;
    assert!(vf.values.iter().all(|v| *v >= 0.0));
    assert!(vf.greedy.iter().all(|n| *n <= 10));
}

#[test]
fn value_grows_with_latency_and_belief() {
    let vf = &threshold_planner().value;
    let g = &vf.grid;
    for j in 0..g.latency_points {
        for i in 0..g.belief_points {
            let v = vf.values[g.index(j, i)];
            let slack = 1e-9 * v.abs().max(1.0);
            if j > 0 {
                assert!(
                    v >= vf.values[g.index(j - 1, i)] - slack,
                    "latency axis at ({j}, {i})"
                );
            }
            if i > 0 {
                assert!(
                    v >= vf.values[g.index(j, i - 1)] - slack,
                    "belief axis at ({j}, {i})"
                );
            }
        }
    }
}

#[test]
fn solved_values_are_a_bellman_fixed_point() {
    let vf = &threshold_planner().value;
    let rho = vf.sub.rho;
    let bound = vf.tol * (1.0 + rho) / (1.0 - rho);
    let mut worst: f64 = 0.0;
    for k in 0..vf.grid.len() {
        let (ell, x) = vf.grid.point(k);
        let backed: f64 = vf
            .sub
            .users
            .iter()
            .map(|&(users, p)| {
                let best = (0..=users.floor() as u32)
                    .map(|n| vf.backup(ell, x, f64::from(n), users, ErrorTerm::SameSlot))
                    .fold(f64::INFINITY, f64::min);
                p * best
            })
            .sum();
        worst = worst.max((backed - vf.values[k]).abs());
    }
    assert!(
        worst <= bound,
        "one more backup moved a value by {worst} (bound {bound})"
    );
}

#[test]
fn beijing_value_iteration_converges() {
    let vf = &beijing_planner().value;
    let rho = vf.sub.rho;
    assert!(vf.residual < vf.tol * (1.0 - rho) / rho);
    let v = vf.value(beijing_preset().ell0, 0.5);
    assert!(
        (v / 163_059.584_274_766 - 1.0).abs() < 1e-6,
        "regression value moved: {v}"
    );
}

#[test]
fn halving_the_grid_changes_beijing_value_by_under_two_percent() {
    let s = beijing_preset();
    let coarse = Planner::solve(
        &s,
        &PlannerConfig {
            belief_points: 51,
            latency_points: 51,
            ..PlannerConfig::default()
        },
    )
    .unwrap();
    for (ell, x) in [(s.ell0, 0.5), (0.5 * s.ell0, 0.3), (2.0 * s.ell0, 0.7)] {
        let fine = beijing_planner().value.value(ell, x);
        let rough = coarse.value.value(ell, x);
        assert!(
            (fine - rough).abs() / fine < 0.02,
            "({ell}, {x}): {fine} vs {rough}"
        );
    }
}

#[test]
fn beijing_threshold_lies_inside_the_unit_interval() {
    let s = beijing_preset();
    let th = exploration_threshold(beijing_planner(), &ThresholdSlice::default_for(&s), 50, 1e-3);
    assert!(!th.no_crossing);
    assert!(th.x_th > 0.0 && th.x_th < 1.0);
    assert!(
        (th.x_th - 0.4729).abs() < 1e-3,
        "regression value moved: {}",
        th.x_th
    );
}

#[test]
fn identical_paths_get_near_identical_flows() {
    let mut s = one_path(20.0, 0.3, 1.0, 12, 0.98);
    s.paths.push(s.paths[0].clone());
    let p = Planner::solve(&s, &PlannerConfig::default()).unwrap();
    for (ell, x) in [(6.0, 0.2), (10.0, 0.5), (14.0, 0.8)] {
        let a = p.optimal_allocation(&[state(ell, x), state(ell, x)], 12);
        assert!(a.check(12.0).is_ok());
        assert!((a.flows[1] - a.flows[2]).abs() <= 1.0, "{:?}", a.flows);
    }
}

#[test]
fn myopic_flow_falls_with_belief_and_error_cost() {
    let slice = threshold_slice();
    let lo = threshold_planner();
    let hi = Planner::solve(&threshold_scenario(20.0), &PlannerConfig::default()).unwrap();
    let hz = threshold_scenario(5.0).hazard;
    let mut prev = f64::INFINITY;
    for i in 0..50 {
        let x = i as f64 / 49.0;
        let st = slice.state_at(x, &hz);
        let a = lo.myopic_flow(&st, slice.users);
        assert!(a <= prev + 1e-12, "x = {x}");
        assert!(hi.myopic_flow(&st, slice.users) <= a + 1e-12, "x = {x}");
        prev = a;
    }
}

#[test]
fn flow_gap_is_nondecreasing_in_belief() {
    let slice = threshold_slice();
    let gaps: Vec<f64> = (0..50)
        .map(|i| flow_gap(threshold_planner(), &slice, i as f64 / 49.0))
        .collect();
    assert!(gaps.windows(2).all(|w| w[1] >= w[0]), "{gaps:?}");
}

#[test]
fn flow_gap_is_nonincreasing_in_error_cost() {
    let slice = threshold_slice();
    let hi = Planner::solve(&threshold_scenario(20.0), &PlannerConfig::default()).unwrap();
    let bad: Vec<(f64, f64, f64)> = (0..50)
        .map(|i| i as f64 / 49.0)
        .map(|x| {
            (
                x,
                flow_gap(threshold_planner(), &slice, x),
                flow_gap(&hi, &slice, x),
            )
        })
        .filter(|(_, lo, hi)| hi > lo)
        .collect();
    assert!(
        bad.is_empty(),
        "gap rises with v0 at {} of 50 beliefs; first (x, v0=5, v0=20) = {:?}",
        bad.len(),
        bad.first()
    );
}
