use hazard_core::congestion::{
    error_cost, expected_latency_update, group_probs, latency_step, posterior_belief, ErrorCostModel,
    HazardParams, HazardSummary, ObservationModel, TwoStateChain,
};
use hazard_core::ingest::{fit_two_state_chain, generate_labels};
use hazard_core::poa::{bound_from_k, char_poa};
use hazard_core::policy::{char_choose_params, myopic_allocation, FlowAllocation};
use hazard_core::scenario::DiscreteDist;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn obs_model() -> impl Strategy<Value = ObservationModel> {
    prop_oneof![
        (0.01f64..0.99).prop_map(|gamma| ObservationModel::Parametric { gamma }),
        (0.51f64..=1.0).prop_map(|accuracy| ObservationModel::MajorityVote { accuracy }),
    ]
}

proptest! {
    #[test]
    fn posterior_is_a_martingale(x in 0.0f64..=1.0, n in 1u32..40, obs in obs_model()) {
        let g = group_probs(n, &obs).unwrap();
        let p1 = x * g.q_h + (1.0 - x) * g.q_l;
        let h = posterior_belief(x, HazardSummary::Hazard, n, &obs).unwrap().belief;
        let c = posterior_belief(x, HazardSummary::Clear, n, &obs).unwrap().belief;
        prop_assert!((p1 * h + (1.0 - p1) * c - x).abs() < 1e-12);
    }

    #[test]
    fn hazard_report_raises_belief_and_clear_lowers_it(x in 0.0f64..=1.0, n in 1u32..40, obs in obs_model()) {
        let h = posterior_belief(x, HazardSummary::Hazard, n, &obs).unwrap().belief;
        let c = posterior_belief(x, HazardSummary::Clear, n, &obs).unwrap().belief;
        prop_assert!((0.0..=1.0).contains(&h) && (0.0..=1.0).contains(&c));
        prop_assert!(c <= x + 1e-15 && x <= h + 1e-15);
        let none = posterior_belief(x, HazardSummary::NoReport, 0, &obs).unwrap().belief;
        prop_assert_eq!(none, x);
    }

    #[test]
    fn observation_probabilities_are_monotone_and_informative(n in 1u32..200, obs in obs_model()) {
        let a = group_probs(n, &obs).unwrap();
        let b = group_probs(n + 1, &obs).unwrap();
        prop_assert!(a.q_h > a.q_l);
        // majority vote is flat from 2k-1 to 2k; allow rounding there
        prop_assert!(b.q_h >= a.q_h - 1e-12 && b.q_l <= a.q_l + 1e-12);
        prop_assert!((a.q_h + a.miss_h - 1.0).abs() < 1e-12 && (a.q_l + a.miss_l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn latency_is_increasing_in_each_argument(
        ell in 0.1f64..100.0, n in 0.1f64..50.0, alpha in 0.1f64..3.0, d in 0.01f64..5.0,
    ) {
        let base = latency_step(ell, n, alpha).unwrap();
        prop_assert!(latency_step(ell + d, n, alpha).unwrap() > base);
        prop_assert!(latency_step(ell, n + d, alpha).unwrap() > base);
        prop_assert!(latency_step(ell, n, alpha + d).unwrap() > base);
    }

    #[test]
    fn expected_latency_rises_with_posterior(
        ell in 0.0f64..100.0, n in 0.0f64..50.0, x in 0.0f64..0.99, dx in 0.0f64..0.01,
        ah in 1.0f64..2.0, al in 0.0f64..0.99,
    ) {
        let hz = HazardParams::new(ah, al).unwrap();
        prop_assert!(expected_latency_update(ell, n, x + dx, &hz) >= expected_latency_update(ell, n, x, &hz));
    }

    #[test]
    fn error_cost_is_nonnegative_and_nonincreasing(n in 0.0f64..1e4, d in 0.0f64..100.0, v0 in 0.0f64..100.0) {
        let e = ErrorCostModel { v0 };
        prop_assert!(error_cost(n, &e) >= 0.0);
        prop_assert!(error_cost(n + d, &e) <= error_cost(n, &e));
    }

    #[test]
    fn water_filling_balances_costs(
        intercepts in prop::collection::vec(0.0f64..50.0, 2..6),
        n in 0.0f64..100.0,
    ) {
        let a = myopic_allocation(&intercepts, n);
        prop_assert!(a.check(n).is_ok());
        let used: Vec<f64> = (0..a.flows.len())
            .filter(|&i| a.flows[i] > 1e-9)
            .map(|i| intercepts[i] + a.flows[i])
            .collect();
        if let Some(&level) = used.first() {
            for c in &used {
                prop_assert!((c - level).abs() < 1e-9);
            }
            for i in 0..a.flows.len() {
                if a.flows[i] <= 1e-9 {
                    prop_assert!(intercepts[i] >= level - 1e-9);
                }
            }
        }
    }

    #[test]
    fn myopic_flow_falls_as_a_path_gets_dearer(
        intercepts in prop::collection::vec(0.0f64..50.0, 2..6),
        n in 1.0f64..100.0, d in 0.0f64..10.0,
    ) {
        let a = myopic_allocation(&intercepts, n);
        let mut dearer = intercepts.clone();
        dearer[1] += d;
        let b = myopic_allocation(&dearer, n);
        prop_assert!(b.flows[1] <= a.flows[1] + 1e-9);
    }

    #[test]
    fn rounding_conserves_users(stoch in prop::collection::vec(0.0f64..10.0, 1..5), extra in 0.0f64..10.0) {
        let n: f64 = (stoch.iter().sum::<f64>() + extra).round();
        let a = FlowAllocation::from_stochastic(&stoch, n.max(stoch.iter().sum::<f64>().ceil()));
        let r = a.rounded();
        prop_assert_eq!(f64::from(r.iter().sum::<u32>()), a.total().round());
        for (ri, fi) in r.iter().zip(&a.flows) {
            prop_assert!((f64::from(*ri) - fi).abs() < 1.0);
        }
    }

    #[test]
    fn char_defaults_are_feasible(
        support in prop::collection::vec(0.0f64..1.0, 2..6), x_th in 0.0f64..1.0, m in 1usize..6,
    ) {
        let prior = DiscreteDist::uniform(support);
        if let Ok(p) = char_choose_params(&prior, x_th, m) {
            prop_assert!(p.is_feasible());
            prop_assert!(p.validate(m).is_ok());
        }
    }

    #[test]
    fn myopic_bound_lies_between_one_and_two(rho in 0.001f64..0.999, k in 1.0f64..1e4, dk in 0.0f64..100.0) {
        let b = bound_from_k(rho, k);
        prop_assert!((1.0 - 1e-12..2.0).contains(&b));
        prop_assert!(bound_from_k(rho, k + dk) >= b);
    }

    #[test]
    fn char_poa_stays_below_five_quarters(m in 1usize..50, n in 1.0f64..1e4, v0 in 1e-6f64..1e3) {
        let v = char_poa(m, n, &ErrorCostModel { v0 });
        prop_assert!(v >= 1.0 && v < 1.25);
        prop_assert!(v <= 1.0 + 0.5 / (m as f64 + 1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn chain_fit_recovers_generator(p_lh in 0.05f64..0.5, p_hl in 0.05f64..0.5, seed in any::<u64>()) {
        let chain = TwoStateChain::new(p_lh, p_hl).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels = generate_labels(&chain, 100_000, false, &mut rng);
        let fit = fit_two_state_chain(&labels).unwrap().chain;
        prop_assert!((fit.p_lh - p_lh).abs() < 0.02, "{} vs {}", fit.p_lh, p_lh);
        prop_assert!((fit.p_hl - p_hl).abs() < 0.02, "{} vs {}", fit.p_hl, p_hl);
    }
}
