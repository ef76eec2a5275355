//! End-to-end checks on generated datasets.

use ndarray::Array2;
use rocore::clustering::{kmeans_canonical, KMeansConfig};
use rocore::data::{encode_entity_pair, generate_synthetic, SyntheticSpec};
use rocore::metrics::ari;

#[test]
fn raw_pair_vectors_of_benchmark_are_clusterable() {
    let ds = generate_synthetic(&SyntheticSpec::default(), 7).unwrap();
    let k = ds.pair_dim();
    let mut points = Array2::zeros((ds.unlabeled.len(), k));
    for (mut row, inst) in points.rows_mut().into_iter().zip(&ds.unlabeled) {
        row.assign(&ndarray::ArrayView1::from(
            &encode_entity_pair(inst, None).unwrap().0,
        ));
    }
    let ids: Vec<&str> = ds.unlabeled.iter().map(|i| i.id.as_str()).collect();
    let result = kmeans_canonical(
        points.view(),
        &ids,
        ds.num_novel,
        0,
        &KMeansConfig::default(),
    )
    .unwrap();
    let gold: Vec<usize> = ds.unlabeled.iter().map(|i| i.label.unwrap()).collect();
    let score = ari(&result.labels, &gold).unwrap();
    assert!(score >= 0.95, "ARI {score}");
}

#[test]
fn same_seed_writes_identical_files() {
    let spec = SyntheticSpec {
        instances_per_class: 10,
        ..SyntheticSpec::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for run in 0..2 {
        let ds = generate_synthetic(&spec, 3).unwrap();
        let (l, u) = (
            dir.path().join(format!("l{run}.jsonl")),
            dir.path().join(format!("u{run}.jsonl")),
        );
        ds.save(&l, &u).unwrap();
        files.push((std::fs::read(l).unwrap(), std::fs::read(u).unwrap()));
    }
    assert_eq!(files[0], files[1]);

    let other = generate_synthetic(&spec, 4).unwrap();
    let (l, u) = (dir.path().join("l9.jsonl"), dir.path().join("u9.jsonl"));
    other.save(&l, &u).unwrap();
    assert_ne!(std::fs::read(l).unwrap(), files[0].0);
}
