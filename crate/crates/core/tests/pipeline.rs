use mlsn_core::checkpoint::Checkpoint;
use mlsn_core::data::gen_two_moons;
use mlsn_core::rng::{stream, Stream};
use mlsn_core::trainer::{
    prepare_split, run_experiment, train, ExperimentData, Method, SplitSpec, TrainConfig,
};

fn moons() -> ExperimentData {
    ExperimentData {
        dataset: gen_two_moons(1000, 0.15, &mut stream(0, Stream::Data)).unwrap(),
        split: SplitSpec { n_labeled: 6, ..SplitSpec::default() },
        weak_pairs: None,
    }
}

#[test]
fn default_config_mlsn_beats_supervised_on_two_moons() {
    let data = moons();
    let seeds: Vec<u64> = (1..=10).collect();
    let c = TrainConfig::default();
    let sup = run_experiment(&c, &data, Method::Supervised, &seeds).unwrap();
    let mlsn = run_experiment(&c, &data, Method::Mlsn, &seeds).unwrap();
    assert!(mlsn.mean < sup.mean, "mlsn {} vs supervised {}", mlsn.mean, sup.mean);
}

#[test]
fn repeated_experiment_is_bit_identical() {
    let data = moons();
    let c = TrainConfig { epochs: 4, ..TrainConfig::default() };
    let a = run_experiment(&c, &data, Method::Mlsn, &[3, 4]).unwrap();
    let b = run_experiment(&c, &data, Method::Mlsn, &[3, 4]).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.errors.iter().map(|e| e.to_bits()).collect::<Vec<_>>(), b.errors.iter().map(|e| e.to_bits()).collect::<Vec<_>>());
}

#[test]
fn checkpoint_file_round_trips_a_trained_model() {
    let data = moons();
    let (split, st) = prepare_split(&data.dataset, &data.split, 2).unwrap();
    let c = TrainConfig { epochs: 2, ..TrainConfig::default() };
    let out = train(&c, &split).unwrap();
    let ck = Checkpoint { student: out.student, teacher: out.teacher, standardizer: st };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.txt");
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);
}
