use scorelab::constructions::{assemble_score_net, verify_all, AssemblyOptions};
use scorelab::dsm::{self, McConfig, ScoreModel, TrainConfig};
use scorelab::generator::zoo;
use scorelab::harness::{self, EstimatorSpec, ExperimentConfig, GeneratorChoice};
use scorelab::sampler::{self, ReverseRunConfig};
use scorelab::{exec, rng, DiffusionSchedule};

fn small_trained(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(
        GeneratorChoice::named("sine", 1),
        DiffusionSchedule::new(0.1, 0.02, 1.0).unwrap(),
        seed,
    );
    c.estimator = EstimatorSpec::Trained {
        train: TrainConfig {
            n_epochs: 4,
            hidden: vec![16, 16],
            ..Default::default()
        },
        n: 300,
        steps: None,
    };
    c.sweep.n = vec![64, 128, 256, 1024];
    c.sweep.replicates = 2;
    c.mc.n_data = 100;
    c
}

fn run_all(threads: usize) -> Vec<String> {
    exec::with_threads(threads, || {
        let gen = zoo::gentle_curve(1);
        let sched = DiffusionSchedule::new(0.6, 0.2, 1.5).unwrap();
        let opts = AssemblyOptions {
            audit_t: 6,
            audit_y: 12,
            ..Default::default()
        };
        let a = assemble_score_net(&gen, &sched, 0.3, 0.01, &opts).unwrap();
        let (reports, pou) = verify_all(500, 3).unwrap();
        let cfg = small_trained(5);
        let model = harness::estimator_model(&cfg).unwrap();
        let samples = sampler::reverse_sample(
            &model,
            &cfg.schedule,
            &ReverseRunConfig {
                n_steps: 40,
                n_samples: 700,
                seed: 9,
            },
        )
        .unwrap();
        let data = gen.sample_data(0.6, 80, &mut rng::stream(1, 2)).unwrap();
        let or = ScoreModel::oracle(&gen, &sched).unwrap();
        let v = dsm::vincent_check(&or.clone().with_f_scale(0.8), &or, &gen, &sched, 60, &McConfig::new(4, 1, 6)).unwrap();
        let risk = dsm::empirical_risk(&ScoreModel::from_assembly(&a), &data, &sched, &McConfig::new(6, 2, 4)).unwrap();
        let sweep = harness::rate_sweep(&cfg).unwrap();
        let values: Vec<u64> = sweep.rows.iter().map(|r| r.value.to_bits()).collect();
        vec![
            a.f_net.to_text(),
            reports.iter().map(|r| r.row()).collect::<Vec<_>>().join("\n"),
            pou.to_bits().to_string(),
            model.to_text().unwrap(),
            format!("{samples:?}"),
            format!("{:?} {:?} {:?}", v.lhs.value.to_bits(), v.rhs.value.to_bits(), risk.value.to_bits()),
            format!("{values:?}"),
        ]
    })
}

#[test]
fn same_seed_reproduces_every_pipeline_bitwise() {
    let first = run_all(0);
    assert_eq!(first, run_all(0));
    assert_eq!(first, run_all(1), "outputs depend on the thread count");
}

#[test]
fn different_seeds_differ() {
    let a = harness::estimator_model(&small_trained(5)).unwrap().to_text().unwrap();
    let b = harness::estimator_model(&small_trained(6)).unwrap().to_text().unwrap();
    assert_ne!(a, b);
}
