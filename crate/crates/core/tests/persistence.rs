use scorelab::constructions::div_net;
use scorelab::error::Error;
use scorelab::harness::{self, EstimatorSpec, ExperimentConfig, GeneratorChoice};
use scorelab::{dsm::TrainConfig, rng, DiffusionSchedule};

#[test]
fn div_net_round_trips_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let net = div_net(4, 0.05).unwrap();
    let p = dir.path().join("div.txt");
    harness::save_net(&p, &net).unwrap();
    let back = harness::load_net(&p).unwrap();
    assert_eq!(back, net);
}

#[test]
fn trained_model_round_trips_on_100_points() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = ExperimentConfig::new(
        GeneratorChoice::named("sine", 2),
        DiffusionSchedule::new(0.1, 0.02, 1.0).unwrap(),
        4,
    );
    c.estimator = EstimatorSpec::Trained {
        train: TrainConfig {
            n_epochs: 3,
            hidden: vec![16, 16],
            ..Default::default()
        },
        n: 200,
        steps: None,
    };
    let model = harness::estimator_model(&c).unwrap();
    let p = dir.path().join("model.txt");
    harness::save_model(&p, &model).unwrap();
    let back = harness::load_model(&p).unwrap();
    let mut g = rng::stream(1, 0);
    let ys: Vec<f64> = (0..200).map(|_| rng::normal(&mut g)).collect();
    let ts: Vec<f64> = (0..100).map(|i| 0.02 + 0.0098 * i as f64).collect();
    let a = model.score_batch(&c.schedule, &ys, &ts).unwrap();
    let b = back.score_batch(&c.schedule, &ys, &ts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn truncated_model_names_missing_field() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.txt");
    std::fs::write(&p, "scoremodel 1\nbackend net\ndim 1\n").unwrap();
    let e = harness::load_model(&p).unwrap_err();
    assert!(matches!(e, Error::Parse { .. }), "{e}");
    assert!(e.to_string().contains("sigma"), "{e}");
}

#[test]
fn truncated_net_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("n.txt");
    let text = div_net(4, 0.1).unwrap().to_text();
    std::fs::write(&p, &text[..text.len() / 2]).unwrap();
    assert!(matches!(harness::load_net(&p).unwrap_err(), Error::Parse { .. }));
}

#[test]
fn persisted_run_writes_config_and_appends_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = ExperimentConfig::default();
    c.out_dir = dir.path().to_path_buf();
    let mut rec = harness::Recorder::new(&c);
    rec.measure("x", 1.0, 0.0, 0.0, false);
    let path = harness::persist_run(&c, &rec.rows).unwrap();
    harness::persist_run(&c, &rec.rows).unwrap();
    let rows = harness::read_records(&path).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.config_hash == c.hash()));
    let saved = dir.path().join(format!("config-{}.toml", c.hash()));
    let back = ExperimentConfig::load(&saved).unwrap();
    assert_eq!(back.hash(), c.hash());
}

#[test]
fn default_audit_passes() {
    let rows = harness::bound_audit(&ExperimentConfig::default()).unwrap();
    let failed: Vec<_> = rows.iter().filter(|r| r.pass == Some(false)).collect();
    assert!(failed.is_empty(), "{failed:#?}");
    assert!(rows.len() > 20);
}
