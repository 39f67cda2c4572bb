use ear_core::datasets::{synth_dataset, SynthParams};
use ear_core::estimation::{
    init_model, sample_d1, PairwiseBatch, sample_d2, sample_d3, train_attr_task, train_item_task, train_multitask, TrainConfig,
    TrainingData,
};
use ear_core::rng_from_seed;

fn toy() -> ear_core::datasets::SynthDataset {
    synth_dataset(&SynthParams {
        n_users: 5,
        n_items: 30,
        n_attrs: 8,
        attrs_per_item: 2,
        interactions_per_user: 8,
        seed: 3,
        ..SynthParams::default()
    })
    .unwrap()
}

#[test]
fn item_task_loss_decreases_on_a_toy() {
    let ds = toy();
    let data = TrainingData { log: &ds.log, catalog: &ds.catalog, contexts: None };
    let cfg = TrainConfig { dim: 4, lr_item: 0.05, ..TrainConfig::default() };
    let mut rng = rng_from_seed(1);
    let mut model = init_model(5, &data, &cfg, &mut rng);
    let mut first = None;
    let mut last = 0.0;
    // 40 triples per epoch, five epochs: 200 SGD steps
    for _ in 0..5 {
        let d1 = sample_d1(&ds.log, &ds.catalog, 1, &mut rng).unwrap();
        let stats = train_item_task(&mut model, &d1, &PairwiseBatch::new(), &cfg, &mut rng).unwrap();
        first.get_or_insert(stats.mean_loss_before);
        last = stats.mean_loss_after;
    }
    assert!(last < first.unwrap(), "{} -> {last}", first.unwrap());
}

#[test]
fn attribute_task_loss_decreases_on_a_toy() {
    let ds = toy();
    let data = TrainingData { log: &ds.log, catalog: &ds.catalog, contexts: None };
    let cfg = TrainConfig { dim: 4, lr_attr: 0.05, ..TrainConfig::default() };
    let mut rng = rng_from_seed(2);
    let mut model = init_model(5, &data, &cfg, &mut rng);
    let d3 = sample_d3(&ds.log, &ds.catalog, 1, &mut rng).unwrap();
    let first = train_attr_task(&mut model, &d3, &cfg, &mut rng).unwrap();
    let mut last = first;
    for _ in 0..4 {
        last = train_attr_task(&mut model, &d3, &cfg, &mut rng).unwrap();
    }
    assert!(last.mean_loss_after < first.mean_loss_before);
}

#[test]
fn multitask_training_is_deterministic() {
    let ds = toy();
    let data = TrainingData { log: &ds.log, catalog: &ds.catalog, contexts: None };
    let cfg = TrainConfig { dim: 4, epochs_per_phase: 3, ..TrainConfig::default() };
    let run = || {
        let mut rng = rng_from_seed(9);
        let mut m = init_model(5, &data, &cfg, &mut rng);
        let rep = train_multitask(&mut m, &data, &cfg, &mut rng).unwrap();
        (m, rep)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(ra, rb);
    assert_eq!(a.users().as_slice(), b.users().as_slice());
    assert_eq!(ra.phases.len(), 2);
    let mut rng = rng_from_seed(0);
    let d2 = sample_d2(&ds.log, &ds.catalog, None, 1, &mut rng).unwrap();
    assert_eq!(d2.len() + d2.skipped, ds.log.len());
}
