use hazard_core::congestion::PathState;
use hazard_core::ingest::beijing_preset;
use hazard_core::policy::{
    char_allocation, char_choose_params, char_incentive_check, char_step,
    deterministic_recommendation_allocation, expected_cost_at_xbar, hiding_allocation, myopic_allocation,
    sample_recommendation, steady_latency, CharParams, FlowAllocation, ReceiverMode,
};
use hazard_core::presets::convergence_scenario;
use hazard_core::scenario::{DiscreteDist, Scenario};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn one_path(n: u32) -> Scenario {
    let mut s = convergence_scenario();
    s.arrivals = hazard_core::scenario::Arrivals::fixed(n);
    s
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

#[test]
fn myopic_examples() {
    assert_eq!(myopic_allocation(&[10.0, 10.0], 10.0).flows, vec![5.0, 5.0]);
    assert_eq!(myopic_allocation(&[10.0, 25.0], 10.0).flows, vec![10.0, 0.0]);
    assert_eq!(myopic_allocation(&[20.0, 16.0], 10.0).flows, vec![3.0, 7.0]);
    assert_eq!(
        myopic_allocation(&[10.0, 10.0, 10.0], 12.0).flows,
        vec![4.0, 4.0, 4.0]
    );
}

#[test]
fn hiding_examples() {
    let s = one_path(10);
    let c0 = s.ell0;
    let a = hiding_allocation(&s, 10.0, &[c0]);
    assert_eq!(a.flows, vec![5.0, 5.0]);
    let a = hiding_allocation(&s, 10.0, &[c0 + 10.0 + 1.0]);
    assert_eq!(a.flows, vec![10.0, 0.0]);
    let a = hiding_allocation(&s, 10.0, &[c0 - 100.0]);
    assert_eq!(a.flows, vec![0.0, 10.0]);
    // both branches of the min agree where they cross
    let cross = c0 + 10.0 - 2.0 * 10.0;
    let a = hiding_allocation(&s, 10.0, &[cross]);
    assert!((a.flows[1] - 10.0).abs() < 1e-12);
}

#[test]
fn deterministic_recommendation_modes() {
    let s = beijing_preset();
    let states: Vec<PathState> = (0..4).map(|i| state(40.0 + 10.0 * i as f64, 0.5)).collect();
    let rational = deterministic_recommendation_allocation(&s, 121.0, &states, ReceiverMode::Rational);
    let hiding = hiding_allocation(&s, 121.0, &expected_cost_at_xbar(&s));
    assert_eq!(rational, hiding);
    let obedient = deterministic_recommendation_allocation(&s, 121.0, &states, ReceiverMode::Obedient);
    assert_eq!(obedient.flows, vec![0.0, 121.0, 0.0, 0.0, 0.0]);
}

#[test]
fn char_parameter_examples() {
    let half = DiscreteDist::uniform(vec![0.2, 0.6]);
    let p = char_choose_params(&half, 0.4, 1).unwrap();
    assert_eq!((p.p_low, p.p_high), (0.9, 0.45));
    assert!(p.p_low * 0.5 >= p.p_high * 0.5);

    let quarter = DiscreteDist::uniform(vec![0.1, 0.5, 0.6, 0.7]);
    let p = char_choose_params(&quarter, 0.3, 2).unwrap();
    assert_eq!(p.p_low, 0.5);
    assert!((p.p_high - 0.5 * 0.5 * (0.25 / 0.75)).abs() < 1e-15);
    assert!(p.p_low * 0.25 >= p.p_high * 0.75);

    let mostly_low = DiscreteDist {
        support: vec![0.1, 0.9],
        weights: vec![0.999, 0.001],
    };
    let p = char_choose_params(&mostly_low, 0.5, 1).unwrap();
    assert_eq!(p.p_high, p.p_low);
}

#[test]
fn char_step_prefers_larger_hidden_groups_on_ties() {
    let states = [state(10.0, 0.2), state(10.0, 0.8)];
    let params = CharParams {
        p_low: 0.4,
        p_high: 0.1,
        x_th: 0.5,
        prob_below: 0.5,
    };
    let hiding = FlowAllocation::from_stochastic(&[3.0, 3.0], 12.0);
    let (alloc, n_hide) = char_step(&states, 12, &params, &hiding, |_| Ok(1.0)).unwrap();
    assert_eq!(n_hide, 12);
    assert_eq!(alloc, hiding);
    // an evaluator that rewards exploring the low-belief path picks full recommendation
    let (alloc, n_hide) = char_step(&states, 12, &params, &hiding, |a| Ok(-a.flows[1])).unwrap();
    assert_eq!(n_hide, 0);
    assert!((alloc.flows[1] - 12.0 * 0.4).abs() < 1e-12);
    assert!(alloc.check(12.0).is_ok());
}

#[test]
fn char_allocation_mixes_hidden_and_recommended_users() {
    let params = CharParams {
        p_low: 0.4,
        p_high: 0.1,
        x_th: 0.5,
        prob_below: 0.5,
    };
    let hiding = FlowAllocation::from_stochastic(&[3.0, 3.0], 12.0);
    let a = char_allocation(6.0, 12.0, &hiding, &[0.2, 0.8], &params);
    for (got, want) in a.flows.iter().zip([6.0, 1.5 + 2.4, 1.5 + 0.6]) {
        assert!((got - want).abs() < 1e-12, "{:?}", a.flows);
    }
}

#[test]
fn recommendation_frequencies() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let single = CharParams {
        p_low: 0.9,
        p_high: 0.1,
        x_th: 0.5,
        prob_below: 0.5,
    };
    let hits = (0..100_000)
        .filter(|_| sample_recommendation(&[0.2], &single, &mut rng).unwrap() == 1)
        .count();
    assert!((hits as f64 / 1e5 - 0.9).abs() < 0.01);

    let silent = CharParams {
        p_low: 0.0,
        p_high: 0.0,
        ..single
    };
    assert!((0..1000).all(|_| sample_recommendation(&[0.2, 0.7], &silent, &mut rng).unwrap() == 0));

    let pair = CharParams { p_low: 0.4, ..single };
    let mut counts = [0u32; 3];
    for _ in 0..100_000 {
        counts[sample_recommendation(&[0.3, 0.3], &pair, &mut rng).unwrap()] += 1;
    }
    assert!((f64::from(counts[1]) - f64::from(counts[2])).abs() / 1e5 < 0.01);
    assert!(sample_recommendation(&[0.2, 0.2], &single, &mut rng).is_err());
}

#[test]
fn recommended_path_is_incentive_compatible() {
    let s = beijing_preset();
    let prior = &s.prior_xbar;
    let n_ref = 121.0 / 5.0;
    let cost = |_: usize, x: f64| steady_latency(x, n_ref, &s) + s.err.cost(n_ref);
    let prior_mean = prior.expect(|x| cost(1, x));
    for x_th in [0.15, 0.3, 0.5] {
        for m in 1..=3 {
            let params = char_choose_params(prior, x_th, m).unwrap();
            for rec in 1..=m {
                let check = char_incentive_check(prior, m, &params, rec, prior_mean, cost).unwrap();
                assert!(check.against_stochastic(1e-12), "x_th {x_th}, M {m}: {check:?}");
                assert!(check.against_safe(1e-12), "x_th {x_th}, M {m}: {check:?}");
            }
        }
    }
}
