use mre::corpus::{compose_references, generate_tiered, read_records, write_records, TierSpec};
use mre::features::{FeatureSpec, Featurizer, Layout};
use mre::model::{Arch, RewardModel};
use mre::pairing::{make_pairs, normalize_all, read_pairs, write_pairs, PairLine};
use mre::scoring::ScoringSystem;
use mre::train::{prepare_pairs, TrainConfig, Trainer};
use mre::{Error, RewardModel32};

fn corpus(system: &str) -> (ScoringSystem, Vec<mre::corpus::ReportRecord>) {
    let s = ScoringSystem::preset(system).unwrap();
    let tiers = TierSpec::default_for(&s).unwrap();
    let recs = generate_tiered(&compose_references(12, 5), &s, &tiers, 5).unwrap();
    (s, recs)
}

#[test]
fn files_round_trip_for_both_presets() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["radcliq6", "mrscore7"] {
        let (s, recs) = corpus(name);
        let rp = dir.path().join(format!("{name}.jsonl"));
        write_records(&recs, &rp).unwrap();
        assert_eq!(read_records(&rp, &s).unwrap(), recs);

        let pairs = normalize_all(&make_pairs(&recs, &s).unwrap(), &s).unwrap();
        let lines: Vec<PairLine> = pairs.iter().map(PairLine::from).collect();
        let pp = dir.path().join(format!("{name}.pairs.jsonl"));
        write_pairs(&lines, &pp).unwrap();
        assert_eq!(read_pairs(&pp, s.len()).unwrap(), lines);
        assert!(matches!(read_pairs(&pp, s.len() + 1), Err(Error::Validation { .. })));
    }
}

#[test]
fn model_files_check_the_system() {
    let dir = tempfile::tempdir().unwrap();
    let spec = FeatureSpec::hashed(64, &[1, 2], &[3]).unwrap();
    let m = RewardModel::<f64>::init(spec, Arch::Mlp { hidden: 4 }, "radcliq6", 6, 9).unwrap();
    let p = dir.path().join("m.bin");
    m.save(&p).unwrap();
    assert_eq!(RewardModel::<f64>::load(&p, Some("radcliq6")).unwrap(), m);
    assert!(matches!(RewardModel::<f64>::load(&p, Some("mrscore7")), Err(Error::Validation { .. })));
    let mut bytes = std::fs::read(&p).unwrap();
    bytes.truncate(bytes.len() / 2);
    std::fs::write(&p, bytes).unwrap();
    assert!(RewardModel::<f64>::load(&p, None).is_err());
}

#[test]
fn checkpointed_training_matches_a_single_run_on_a_corpus() {
    let (s, recs) = corpus("radcliq6");
    let lines: Vec<PairLine> = normalize_all(&make_pairs(&recs, &s).unwrap(), &s)
        .unwrap()
        .iter()
        .map(PairLine::from)
        .collect();
    let spec = FeatureSpec::hashed(256, &[1, 2], &[3, 4]).unwrap();
    let pairs = prepare_pairs::<f64>(&Featurizer::new(spec.clone()).unwrap(), &lines).unwrap();
    let init = RewardModel::<f64>::init(spec, Arch::Linear, s.name(), s.len(), 1).unwrap();
    let cfg = TrainConfig { epochs: 3, ..Default::default() };

    let mut full = Trainer::new(init.clone(), cfg.clone()).unwrap();
    full.run(&pairs).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("ck.json");
    let mut first = Trainer::new(init, TrainConfig { epochs: 1, ..cfg.clone() }).unwrap();
    first.run(&pairs).unwrap();
    first.checkpoint(&ck).unwrap();
    let mut rest = Trainer::<f64>::resume(&ck, cfg).unwrap();
    rest.run(&pairs).unwrap();

    assert_eq!(rest.output_model(), full.output_model());
    assert_eq!(rest.log(), full.log());
}

#[test]
fn single_precision_and_stacked_layout_train() {
    let (s, recs) = corpus("mrscore7");
    let lines: Vec<PairLine> = normalize_all(&make_pairs(&recs, &s).unwrap(), &s)
        .unwrap()
        .iter()
        .map(PairLine::from)
        .collect();
    let spec = FeatureSpec::hashed(128, &[1], &[3]).unwrap().with_layout(Layout::Stacked);
    let pairs = prepare_pairs::<f32>(&Featurizer::new(spec.clone()).unwrap(), &lines).unwrap();
    let model: RewardModel32 = RewardModel::init(spec, Arch::Linear, s.name(), s.len(), 2).unwrap();
    let mut t = Trainer::new(model, TrainConfig { epochs: 2, ..Default::default() }).unwrap();
    t.run(&pairs).unwrap();
    assert_eq!(t.log().len(), 2);
    assert!(t.output_model().all_finite());
    assert!(t.log()[1].pair_accuracy > 0.5);
}
