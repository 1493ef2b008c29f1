use hazard_core::congestion::TwoStateChain;
use hazard_core::error::Error;
use hazard_core::ingest::{
    beijing_preset, fit_two_state_chain, generate_labels, load_scenario, read_labeled_sequences,
    save_scenario, scenario_from_json, scenario_hash, scenario_to_json, stationary,
};
use hazard_core::presets::{preset, PRESET_NAMES};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MINIMAL: &str = r#"{
  "schema_version": 1,
  "paths": [
    {"name": "a", "chain": {"stationary": 0.3, "mixing": 0.4},
     "initial_belief": 0.5, "initial_exp_latency": 10.0}
  ],
  "ell0": 20.0,
  "alpha": {"H": 1.3, "L": 0.3},
  "error_cost": {"v0": 2.0},
  "arrivals": {"min": 8, "max": 12},
  "rho": 0.98,
  "prior_xbar": {"support": [0.2, 0.4], "weights": [0.5, 0.5]}
}"#;

#[test]
fn beijing_preset_matches_published_values() {
    let s = beijing_preset();
    let xs: Vec<f64> = s.paths.iter().map(|p| stationary(&p.chain).unwrap()).collect();
    assert_eq!(xs, vec![0.3883, 0.1064, 0.1915, 0.9362]);
    assert_eq!(s.rho, 0.98);
    assert_eq!(s.n_mean(), 121.0);
}

#[test]
fn fitted_chain_recovers_a_published_steady_state() {
    let chain = TwoStateChain::from_stationary(0.3883, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let labels = generate_labels(&chain, 100_000, false, &mut rng);
    let fit = fit_two_state_chain(&labels).unwrap().chain;
    assert!((stationary(&fit).unwrap() - 0.3883).abs() < 0.02);
}

#[test]
fn labelled_csv_is_grouped_by_road_and_sorted_by_time() {
    let text = "road,timestamp_index,label\nb,2,1\na,1,1\na,0,1\nb,1,2\na,2,2\na,3,2\na,4,1\n";
    let seqs = read_labeled_sequences(text.as_bytes(), 5.0).unwrap();
    assert_eq!(seqs.len(), 2);
    assert_eq!(seqs[0].road, "b");
    assert_eq!(seqs[0].labels, vec![2, 1]);
    assert_eq!(seqs[1].labels, vec![1, 1, 2, 2, 1]);
    let fit = fit_two_state_chain(&seqs[1].labels).unwrap();
    assert_eq!((fit.chain.p_lh, fit.chain.p_hl), (0.5, 0.5));
    assert!(read_labeled_sequences("road,timestamp_index,label\na,0,3\n".as_bytes(), 5.0).is_err());
}

#[test]
fn every_preset_survives_a_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for name in PRESET_NAMES {
        let s = preset(name).unwrap();
        let path = dir.path().join(format!("{name}.json"));
        save_scenario(&s, &path).unwrap();
        let back = load_scenario(&path).unwrap();
        assert_eq!(back, s, "{name}");
        assert_eq!(scenario_hash(&back), scenario_hash(&s));
    }
    assert!(matches!(preset("nowhere"), Err(Error::Invalid { .. })));
}

#[test]
fn out_of_range_rho_is_reported_by_name() {
    let text = MINIMAL.replace("\"rho\": 0.98", "\"rho\": 1.2");
    match scenario_from_json(&text) {
        Err(Error::Invalid { field, .. }) => assert_eq!(field, "rho"),
        other => panic!("expected a rho error, got {other:?}"),
    }
}

#[test]
fn omitted_fields_are_defaulted_and_flagged() {
    let s = scenario_from_json(MINIMAL).unwrap();
    assert!(s.defaulted.iter().any(|d| d == "observation"));
    assert!(s.defaulted.iter().any(|d| d == "arrivals.mean"));
    assert_eq!(s.n_mean(), 10.0);
    assert!((stationary(&s.paths[0].chain).unwrap() - 0.3).abs() < 1e-12);
    let again = scenario_from_json(&scenario_to_json(&s).unwrap()).unwrap();
    assert_eq!(again, s);
}

#[test]
fn parse_errors_carry_the_json_path() {
    let text = MINIMAL.replace("\"ell0\": 20.0", "\"ell0\": \"fast\"");
    match scenario_from_json(&text) {
        Err(Error::Parse { path, .. }) => assert_eq!(path, "ell0"),
        other => panic!("expected a parse error, got {other:?}"),
    }
    let text = MINIMAL.replace("\"ell0\"", "\"ell_zero\"");
    assert!(scenario_from_json(&text).unwrap_err().is_config());
}

#[test]
fn hash_changes_with_content() {
    let a = beijing_preset();
    let mut b = a.clone();
    b.rho = 0.97;
    assert_ne!(scenario_hash(&a), scenario_hash(&b));
    assert_eq!(scenario_hash(&a).len(), 16);
}
