//! Behaviour of the training loop on small generated datasets.

use rocore::clustering::ClusteringTerms;
use rocore::data::{generate_synthetic, Dataset, RelationInstance, SyntheticSpec};
use rocore::trainer::{
    evaluate, train, Mode, PretrainData, Schedule, TrainConfig, TrainError, Trainer,
};

fn small_dataset(seed: u64) -> Dataset {
    let spec = SyntheticSpec {
        num_predefined: 3,
        num_novel: 2,
        instances_per_class: 30,
        embedding_dim: 6,
        ..SyntheticSpec::default()
    };
    generate_synthetic(&spec, seed).unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: 16,
        pretrain_epochs: 3,
        max_outer_epochs: 3,
        min_outer_epochs: 1,
        hidden_dims: vec![16],
        bottleneck_dim: 8,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_freezes_parameters_but_regenerates_pseudo_labels() {
    let ds = small_dataset(1);
    let config = TrainConfig {
        learning_rate: 0.0,
        ..small_config()
    };
    let mut trainer = Trainer::new(&ds, config).unwrap();
    trainer.pretrain().unwrap();
    let cls = trainer.state.classification_params();
    let clu = trainer.state.clustering_params();
    let first = trainer.train_epoch(1).unwrap();
    let second = trainer.train_epoch(2).unwrap();
    assert_eq!(trainer.state.classification_params(), cls);
    assert_eq!(trainer.state.clustering_params(), clu);
    assert!(first.cls_steps > 0 && first.clustering_steps > 0);
    assert!(first.pseudo_label_ari.is_some() && first.kmeans_inertia > 0.0);
    assert_eq!(first.pseudo_label_change_rate, 1.0);
    assert_eq!(second.pseudo_label_change_rate, 0.0);
}

#[test]
fn zero_lambda_matches_center_ablation() {
    let ds = small_dataset(2);
    let zero = TrainConfig {
        lambda: 0.0,
        ..small_config()
    };
    let mut ablated = small_config();
    ablated.ablation.no_center = true;
    let a = train(&ds, &zero).unwrap();
    let b = train(&ds, &ablated).unwrap();
    assert_eq!(
        serde_json::to_string(&a.report.epochs).unwrap(),
        serde_json::to_string(&b.report.epochs).unwrap()
    );
    assert_eq!(
        a.state.classification_params(),
        b.state.classification_params()
    );
    assert_eq!(a.state.clustering_params(), b.state.clustering_params());
    assert!(a
        .report
        .epochs
        .iter()
        .all(|e| e.clustering_total == e.reconstruction));
}

#[test]
fn zero_outer_epochs_reports_only_pretraining() {
    let ds = small_dataset(3);
    let config = TrainConfig {
        max_outer_epochs: 0,
        ..small_config()
    };
    let out = train(&ds, &config).unwrap();
    assert!(out.report.epochs.is_empty());
    assert_eq!(out.report.pretrain_losses.len(), config.pretrain_epochs);
    assert!(!out.report.converged);
}

#[test]
fn pretraining_does_not_increase_reconstruction_loss() {
    for pretrain_on in [PretrainData::Both, PretrainData::Labeled] {
        let ds = small_dataset(4);
        let config = TrainConfig {
            pretrain_epochs: 10,
            pretrain_on,
            ..small_config()
        };
        let mut trainer = Trainer::new(&ds, config).unwrap();
        let losses = trainer.pretrain().unwrap().to_vec();
        assert_eq!(losses.len(), 10);
        assert!(losses[9] <= losses[0], "{losses:?}");
    }
}

#[test]
fn updates_touch_only_their_own_parameter_group() {
    let ds = small_dataset(5);
    for mode in [Mode::Standard, Mode::Incremental] {
        let config = TrainConfig {
            mode,
            ..small_config()
        };
        let mut trainer = Trainer::new(&ds, config).unwrap();
        let labeled: Vec<&RelationInstance> = ds.labeled.iter().take(12).collect();
        let labels: Vec<usize> = labeled.iter().map(|i| i.label.unwrap()).collect();
        let unlabeled: Vec<&RelationInstance> = ds.unlabeled.iter().take(12).collect();
        let (pseudo, _) = trainer.pseudo_labels(1).unwrap();
        let mut rng = rocore::rng::stream_rng(0, rocore::rng::Stream::Pairs, 0);
        let pairs =
            rocore::classifier::PairBatch::from_pseudo_labels(&pseudo[..12], None, &mut rng);

        let state = &mut trainer.state;
        let (cls_before, clu_before) = (state.classification_params(), state.clustering_params());
        let (_, grads) = state
            .cls_gradients(&labeled, &labels, &unlabeled, &pairs, 2.0, true, 0.5, None)
            .unwrap();
        state.apply_cls(&grads).unwrap();
        assert_ne!(state.classification_params(), cls_before);
        assert_eq!(state.clustering_params(), clu_before);

        let cls_mid = state.classification_params();
        let (_, grads) = state
            .clustering_gradients(&labeled, &labels, ClusteringTerms::default())
            .unwrap();
        state
            .autoencoder
            .apply_adam(&mut state.opt_clustering, &grads)
            .unwrap();
        assert_ne!(state.clustering_params(), clu_before);
        assert_eq!(state.classification_params(), cls_mid);
    }
}

#[test]
fn divergence_aborts_with_last_good_state() {
    let ds = small_dataset(6);
    let config = TrainConfig {
        learning_rate: 1e300,
        pretrain_epochs: 0,
        ..small_config()
    };
    let mut trainer = Trainer::new(&ds, config).unwrap();
    let before = trainer.state.classification_params();
    match trainer.train_epoch(1) {
        Err(TrainError::NonFinite {
            epoch,
            what,
            value,
            last_good,
        }) => {
            assert_eq!(epoch, 1);
            assert!(what.contains("loss"), "{what}");
            assert!(!value.is_finite());
            assert_eq!(last_good.classification_params(), before);
        }
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}

#[test]
fn per_batch_schedule_interleaves_clustering_steps() {
    let ds = small_dataset(7);
    let config = TrainConfig {
        schedule: Schedule::PerBatch,
        max_outer_epochs: 1,
        ..small_config()
    };
    let out = train(&ds, &config).unwrap();
    let e = &out.report.epochs[0];
    assert_eq!(e.cls_steps, e.clustering_steps);
}

#[test]
fn evaluation_needs_gold_and_scores_perfect_predictions_as_one() {
    let ds = small_dataset(8);
    let out = train(&ds, &small_config()).unwrap();
    let instances: Vec<&RelationInstance> = ds.unlabeled.iter().collect();
    let predicted = out.state.predict_novel(&instances).unwrap();
    let relabeled: Vec<RelationInstance> = ds
        .unlabeled
        .iter()
        .zip(&predicted)
        .map(|(inst, &p)| RelationInstance {
            label: Some(p),
            ..inst.clone()
        })
        .collect();
    let refs: Vec<&RelationInstance> = relabeled.iter().collect();
    let report = evaluate(&out.state, &refs).unwrap();
    assert_eq!((report.b3.f1, report.v.f1, report.ari), (1.0, 1.0, 1.0));

    let mut unlabeled = relabeled[0].clone();
    unlabeled.label = None;
    assert!(matches!(
        evaluate(&out.state, &[&unlabeled]),
        Err(TrainError::Evaluation(_))
    ));
}

#[test]
fn rejects_too_few_unlabeled_instances() {
    let spec = SyntheticSpec {
        num_predefined: 2,
        num_novel: 3,
        instances_per_class: 1,
        embedding_dim: 4,
        ..SyntheticSpec::default()
    };
    let ds = generate_synthetic(&spec, 0).unwrap();
    let config = TrainConfig {
        test_fraction: 0.5,
        ..small_config()
    };
    assert!(matches!(
        Trainer::new(&ds, config),
        Err(TrainError::Config(_))
    ));
}

#[test]
fn divergent_pretraining_aborts_at_epoch_zero() {
    let ds = small_dataset(9);
    let config = TrainConfig {
        learning_rate: 1e300,
        ..small_config()
    };
    let mut trainer = Trainer::new(&ds, config).unwrap();
    let before = trainer.state.clustering_params();
    match trainer.pretrain() {
        Err(TrainError::NonFinite {
            epoch,
            what,
            last_good,
            ..
        }) => {
            assert_eq!(epoch, 0);
            assert!(what.contains("pretraining"), "{what}");
            assert_eq!(last_good.clustering_params(), before);
        }
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}
