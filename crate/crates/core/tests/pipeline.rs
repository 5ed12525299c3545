use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tvnet::checkpoint::Checkpoint;
use tvnet::data::{load_cohort, pad_truncate, synth_generate, write_cohort, NormStats, SynthSpec};
use tvnet::fodam::{fodam_forward, fodam_pool};
use tvnet::model::AblationConfig;
use tvnet::train::{cross_validate, kfold_indices, score_patients, ExperimentConfig, TrainConfig};

fn experiment(ablation: AblationConfig) -> ExperimentConfig {
    ExperimentConfig {
        t_max: 8,
        order: 3,
        ablation,
        folds: 3,
        train: TrainConfig {
            lr: 1e-2,
            batch_size: 16,
            epochs: 3,
            seed: 11,
        },
        ..ExperimentConfig::default()
    }
}

#[test]
fn csv_cohort_trains_like_in_memory_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = synth_generate(&SynthSpec {
        patients: 36,
        seed: 5,
        ..SynthSpec::default()
    })
    .unwrap();
    write_cohort(&cohort, dir.path()).unwrap();
    let loaded = load_cohort(
        &dir.path().join("visits.csv"),
        &dir.path().join("static.csv"),
        &dir.path().join("labels.csv"),
    )
    .unwrap();
    let exp = experiment(AblationConfig::FULL);
    assert_eq!(cross_validate(&cohort, &exp).unwrap(), cross_validate(&loaded, &exp).unwrap());
}

#[test]
fn saved_checkpoint_scores_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = synth_generate(&SynthSpec {
        patients: 30,
        ..SynthSpec::default()
    })
    .unwrap();
    for (_, ablation) in AblationConfig::PRESETS {
        let exp = experiment(ablation);
        let report = cross_validate(&cohort, &exp).unwrap();
        let fold = &report.folds[1];
        let path = dir.path().join("f.ckpt");
        fold.checkpoint.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let padded = pad_truncate(&cohort, exp.t_max).unwrap();
        let test = &kfold_indices(30, 3, exp.train.seed).unwrap()[1];
        assert_eq!(score_patients(&loaded, &padded, test).unwrap(), fold.scored);
    }
}

#[test]
fn test_fold_contents_never_reach_normalization() {
    let cohort = pad_truncate(&synth_generate(&SynthSpec::default()).unwrap(), 10).unwrap();
    let test = &kfold_indices(cohort.len(), 5, 0).unwrap()[0];
    let train: Vec<usize> = (0..cohort.len()).filter(|i| !test.contains(i)).collect();
    let before = NormStats::fit(&cohort, &train).unwrap();
    let mut poisoned = cohort.clone();
    for &i in test {
        for v in poisoned.patients[i].visits.data_mut() {
            *v = 1e6;
        }
        poisoned.patients[i].statics.iter_mut().for_each(|s| *s = -1e6);
    }
    assert_eq!(NormStats::fit(&poisoned, &train).unwrap(), before);
}

#[test]
fn attention_module_is_translation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..1000 {
        let m = rng.random_range(2..30);
        let shift = rng.random_range(-100.0..100.0);
        let features: Vec<Vec<f64>> = (0..rng.random_range(1..5))
            .map(|_| (0..m).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let outs: Vec<_> = features.iter().map(|r| fodam_forward(r).unwrap()).collect();
        let shifted: Vec<_> = features
            .iter()
            .map(|r| fodam_forward(&r.iter().map(|v| v + shift).collect::<Vec<_>>()).unwrap())
            .collect();
        let (a, b) = (fodam_pool(&outs).unwrap(), fodam_pool(&shifted).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }
}

#[test]
fn parallel_folds_match_sequential() {
    let cohort = synth_generate(&SynthSpec {
        patients: 30,
        ..SynthSpec::default()
    })
    .unwrap();
    let exp = experiment(AblationConfig::preset("A5").unwrap());
    let parallel = ExperimentConfig {
        parallel: true,
        ..exp.clone()
    };
    assert_eq!(cross_validate(&cohort, &exp).unwrap(), cross_validate(&cohort, &parallel).unwrap());
}

#[test]
fn too_few_patients_for_folds() {
    let cohort = synth_generate(&SynthSpec {
        patients: 4,
        ..SynthSpec::default()
    })
    .unwrap();
    let exp = ExperimentConfig {
        folds: 5,
        ..experiment(AblationConfig::FULL)
    };
    let err = cross_validate(&cohort, &exp).unwrap_err();
    assert_eq!(err.class(), tvnet::ErrorClass::Data);
}
