use super::*;
use crate::synthetic::{gen_dataset, make_dct_dictionary, LabeledDataset, SyntheticSpec};

fn tiny(seed: u64) -> (crate::linalg::Matrix, LabeledDataset, LabeledDataset) {
    let d_true = make_dct_dictionary(16, 32);
    let spec = SyntheticSpec {
        n: 16,
        m: 32,
        cardinalities: vec![3],
        train_per_cardinality: 200,
        test_per_cardinality: 100,
        sigmas: vec![0.04],
        seed,
    };
    let mut data = gen_dataset(&spec, &d_true).unwrap();
    (d_true, data.train.remove(0), data.test.remove(0))
}

fn config(model: ModelKind, epochs: usize) -> TrainConfig {
    TrainConfig {
        model,
        max_cardinality: 6,
        epochs,
        seed: 3,
        optimizer: AdamConfig {
            lr: 0.005,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn upticks(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] > w[0]).count()
}

#[test]
fn zero_epochs_reports_initial_metrics() {
    let (d, train_set, test_set) = tiny(1);
    let cfg = config(ModelKind::Lgm, 0);
    let model = Model::init(&cfg, 16, 32).unwrap();
    let (out, run) = train(&cfg, model.clone(), &train_set, &test_set, Some(&d)).unwrap();
    assert_eq!(out, model);
    assert_eq!(run.history.len(), 1);
    assert_eq!(run.history[0].epoch, 0);
    assert!(run.history[0].dict_distance.is_some());
    assert_eq!(run.to_csv().lines().count(), 2);
}

#[test]
fn lgm_smoke_run_loss_and_distance_trend() {
    let (d, train_set, test_set) = tiny(2);
    let cfg = config(ModelKind::Lgm, 5);
    let model = Model::init(&cfg, 16, 32).unwrap();
    let (_, run) = train(&cfg, model, &train_set, &test_set, Some(&d)).unwrap();
    assert_eq!(run.history.len(), 6);
    let losses: Vec<f64> = run.history.iter().map(|r| r.train_loss).collect();
    assert!(upticks(&losses) <= 2, "train losses {losses:?}");
    assert!(losses[5] < losses[0]);
    let dist: Vec<f64> = run
        .history
        .iter()
        .map(|r| r.dict_distance.unwrap())
        .collect();
    assert!(dist[5] < dist[0], "distances {dist:?}");
}

#[test]
fn training_is_reproducible() {
    let (d, train_set, test_set) = tiny(4);
    let cfg = TrainConfig {
        batch_size: 25,
        ..config(ModelKind::LgmMmse, 1)
    };
    let run = || {
        let model = Model::init(&cfg, 16, 32).unwrap();
        train(&cfg, model, &train_set, &test_set, Some(&d)).unwrap()
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
}

#[test]
fn lmp_and_lista_train() {
    let (d, train_set, test_set) = tiny(5);
    for kind in [ModelKind::Lmp, ModelKind::Lista] {
        let cfg = TrainConfig {
            lista_layers: 4,
            ..config(kind, 3)
        };
        let model = Model::init(&cfg, 16, 32).unwrap();
        let (_, run) = train(&cfg, model, &train_set, &test_set, Some(&d)).unwrap();
        let first = run.history[0].test_mse;
        let last = run.history[3].test_mse;
        assert!(last < first, "{kind:?}: {first} -> {last}");
    }
}

#[test]
fn lista_code_target_trains() {
    let (d, train_set, test_set) = tiny(6);
    let cfg = TrainConfig {
        lista_layers: 3,
        lista_target: ListaTarget::Code,
        ..config(ModelKind::Lista, 1)
    };
    let model = Model::init(&cfg, 16, 32).unwrap();
    let (_, run) = train(&cfg, model, &train_set, &test_set, Some(&d)).unwrap();
    assert!(run.history.iter().all(|r| r.test_mse.is_finite()));
}

#[test]
fn model_kind_must_match_parameters() {
    let (_, train_set, test_set) = tiny(7);
    let lista = Model::init(&config(ModelKind::Lista, 0), 16, 32).unwrap();
    assert!(train(
        &config(ModelKind::Lgm, 0),
        lista,
        &train_set,
        &test_set,
        None
    )
    .is_err());
}

#[test]
fn config_json_round_trip() {
    let cfg = config(ModelKind::LgmMmse, 2);
    let text = serde_json::to_string(&cfg).unwrap();
    assert!(text.contains("\"lgm-mmse\""));
    let back: TrainConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cfg);
    let partial: TrainConfig = serde_json::from_str(r#"{"model":"lista","epochs":1}"#).unwrap();
    assert_eq!(partial.batch_size, 50);
}

#[test]
fn model_checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for model in [ModelKind::Lgm, ModelKind::Lista] {
        let cfg = TrainConfig {
            model,
            ..Default::default()
        };
        let m = Model::init(&cfg, 6, 10).unwrap();
        let path = dir.path().join(format!("{model:?}"));
        m.save(&path).unwrap();
        assert_eq!(Model::load(&path).unwrap(), m);
    }
}

#[test]
fn refresh_reseeds_duplicate_atoms() {
    let (d, train_set, test_set) = tiny(6);
    let mut cfg = config(ModelKind::Lgm, 1);
    cfg.atom_refresh = Some(AtomRefresh {
        min_usage: 0.0,
        ..Default::default()
    });
    let Model::Lgm(init) = Model::init(&cfg, 16, 32).unwrap() else {
        unreachable!()
    };
    let mut atoms = init.analysis().atoms().clone();
    let first = atoms.col(0);
    atoms.set_col(5, &first);
    let model = Model::Lgm(crate::unrolled::LgmParams::tied(atoms).unwrap());
    let (out, _) = train(&cfg, model.clone(), &train_set, &test_set, Some(&d)).unwrap();
    let Model::Lgm(p) = out else { unreachable!() };
    let (a, b) = (p.analysis().atom(0), p.analysis().atom(5));
    let cos = crate::linalg::dot(a, b).abs() / (crate::linalg::norm2(a) * crate::linalg::norm2(b));
    assert!(cos < 0.9, "atoms still coincide: {cos}");
    // The same run again gives the same parameters.
    let (again, _) = train(&cfg, model, &train_set, &test_set, Some(&d)).unwrap();
    assert_eq!(again, Model::Lgm(p));
}

#[test]
fn refresh_rule_is_validated() {
    let mut cfg = config(ModelKind::Lgm, 1);
    cfg.atom_refresh = Some(AtomRefresh {
        max_coherence: 1.5,
        ..Default::default()
    });
    assert!(cfg.validate().is_err());
}
