use rand::Rng;
use todlab::activeloop::{
    evaluate, init_pools, oracle_label, prepare_data, run_experiment, ExperimentConfig,
    ExperimentSeeds, Oracle,
};
use todlab::data::{gen_two_moons, DatasetSource};
use todlab::nnet::init_network;
use todlab::sampling::{AcquisitionKind, AcquisitionStrategy};
use todlab::seeding;
use todlab::training::{revealed_labels, train_cycle, TrainConfig};

fn moons(n: usize) -> ExperimentConfig {
    ExperimentConfig::new(DatasetSource::TwoMoons { n, noise: 0.2 })
}

#[test]
fn single_random_cycle_equals_direct_training() {
    let mut cfg = moons(500);
    cfg.num_cycles = 1;
    cfg.train.lambda = 0.0;
    cfg.train.epochs = 20;
    cfg.strategy = AcquisitionStrategy::new(AcquisitionKind::Random);
    let seed = 6;
    let run = run_experiment(&cfg, seed).unwrap();

    let seeds = ExperimentSeeds(seed);
    let data = prepare_data(&cfg, seed).unwrap();
    let pools = init_pools(data.train.len(), cfg.start_fraction, seeds.pool()).unwrap();
    let w0 = init_network(&cfg.network_spec(&data.train), seeds.init(0)).unwrap();
    let train_cfg = TrainConfig {
        seed: seeds.train(1),
        ..cfg.train.clone()
    };
    let labels = revealed_labels(data.train.labels(), &pools);
    let (model, _, _) =
        train_cycle(&train_cfg, &pools, data.train.features(), &labels, &w0, &w0).unwrap();
    let (acc, loss) = evaluate(&model, &data.test).unwrap();

    assert_eq!(run.snapshots[1], model);
    assert_eq!(run.records[0].test_accuracy, acc);
    assert_eq!(run.records[0].test_loss, loss);
}

#[test]
fn revealed_labels_are_ground_truth() {
    let data = gen_two_moons(1000, 0.2, 8).unwrap();
    let mut oracle = Oracle::new(data.labels().to_vec());
    let mut rng = seeding::rng_for(8);
    for _ in 0..100 {
        let i = rng.random_range(0..data.len());
        assert_eq!(oracle_label(&mut oracle, i).unwrap(), data.label(i));
        assert_eq!(oracle.revealed()[i], Some(data.label(i)));
    }
}

#[test]
fn default_schedule_labels_ten_to_forty_percent() {
    let mut cfg = moons(400);
    cfg.train.epochs = 3;
    let run = run_experiment(&cfg, 0).unwrap();
    let pct: Vec<f64> = run
        .records
        .iter()
        .map(|r| (100.0 * r.labeled_fraction).round())
        .collect();
    assert_eq!(pct, vec![10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0]);
}

#[test]
fn final_acquisition_can_be_skipped() {
    let mut cfg = moons(400);
    cfg.train.epochs = 3;
    cfg.acquire_after_final_cycle = false;
    let run = run_experiment(&cfg, 0).unwrap();
    assert_eq!(run.reveal_count, 128); // 40 % of the 320 training rows
    assert!(run.records.last().unwrap().selection.chosen.is_empty());
}

#[test]
fn schedule_can_exhaust_the_pool() {
    let mut cfg = moons(100);
    cfg.start_fraction = 0.5;
    cfg.budget_fraction = 0.25;
    cfg.num_cycles = 2;
    cfg.train.epochs = 2;
    let run = run_experiment(&cfg, 1).unwrap();
    assert_eq!(run.final_pool.unlabeled_count(), 0);
    assert!(run.warnings.is_empty());
}
