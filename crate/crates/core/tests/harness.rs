use fluidlogic::harness::{self, ExperimentConfig, ExperimentName, LorenzParams, LorenzVariant, MetricsFile, METRICS_SCHEMA};

const ALL: [ExperimentName; 4] = [ExperimentName::Swarm, ExperimentName::Lorenz, ExperimentName::Deontic, ExperimentName::Custom];

#[test]
fn presets_validate_and_round_trip() {
    for name in ALL {
        let cfg = ExperimentConfig::preset(name);
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg, "{}", name.as_str());
    }
}

#[test]
fn every_preset_builds_its_modal_setup() {
    for name in ALL {
        let s = harness::setup(&ExperimentConfig::preset(name)).unwrap();
        assert!(s.dim > 0);
        assert!(s.library.keys().count() > 0, "{}", name.as_str());
    }
}

#[test]
fn missing_block_and_bad_json_are_rejected() {
    let mut v: serde_json::Value = serde_json::from_str(&ExperimentConfig::preset(ExperimentName::Deontic).to_json()).unwrap();
    v["deontic"] = serde_json::Value::Null;
    let err = ExperimentConfig::from_json(&v.to_string()).and_then(|c| c.validate().map(|_| c));
    assert!(err.is_err());
    assert!(ExperimentConfig::from_json("{ not json").is_err());
}

#[test]
fn custom_run_reports_every_formula() {
    let cfg = ExperimentConfig::preset(ExperimentName::Custom);
    let out = harness::run(&cfg).unwrap();
    out.metrics.validate().unwrap();
    assert_eq!(out.metrics.schema, METRICS_SCHEMA);
    let p = cfg.custom.as_ref().unwrap();
    for name in p.formulas.keys() {
        let r = out.metrics.record(name).unwrap();
        for i in 0..p.worlds.len() {
            let (l, u) = (r.get(&format!("L_w{i}")).unwrap(), r.get(&format!("U_w{i}")).unwrap());
            assert!(l <= u + 1e-12);
        }
    }
    let again = harness::run(&cfg).unwrap();
    assert_eq!(again.metrics.to_json(), out.metrics.to_json());
    let parsed: MetricsFile = serde_json::from_str(&out.metrics.to_json()).unwrap();
    assert_eq!(parsed, out.metrics);
}

#[test]
fn deterministic_lorenz_model_has_no_quantifier_gap() {
    let mut cfg = ExperimentConfig::preset(ExperimentName::Lorenz);
    cfg.eval_n_mc = 16;
    cfg.lorenz = Some(LorenzParams {
        trajectories: 2,
        steps: 5,
        eval_starts: 2,
        oracle_n_mc: 16,
        rollout_horizon: 1.0,
        rollout_paths: 4,
        rollout_starts: 1,
        variants: vec![LorenzVariant::new("ode", false, false), LorenzVariant::new("sde", true, false)],
        ..LorenzParams::default()
    });
    let out = harness::run(&cfg).unwrap();
    out.metrics.validate().unwrap();
    assert_eq!(out.metrics.record("ode").unwrap().get("delta_q"), Some(0.0));
    assert!(out.metrics.record("sde").unwrap().get("delta_q").unwrap() > 0.0);
}
