use proud_core::autodiff::Tensor;
use proud_core::datagen::{make_domain_suite, GeneratorConfig};
use proud_core::model::{Model, ModelSpec};
use proud_lab::formats::{
    read_checkpoint, read_dataset, read_embeddings, write_checkpoint, write_dataset,
    write_dataset_csv, write_embeddings, BlockKind, EmbeddingBlock, RunEmbeddings,
};
use proud_lab::LabError;

fn small_suite() -> proud_core::datagen::DatasetSuite {
    let cfg = GeneratorConfig {
        n_per_domain: 40,
        dim: 5,
        ..GeneratorConfig::default()
    };
    make_domain_suite(&cfg, 3).unwrap()
}

#[test]
fn dataset_round_trips_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("suite.prds");
    let suite = small_suite();
    write_dataset(&path, &suite).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_eq!(back.domains, suite.domains);
    assert_eq!((back.classes, back.dim), (suite.classes, suite.dim));
}

#[test]
fn dataset_csv_has_one_row_per_sample() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("suite.csv");
    let suite = small_suite();
    write_dataset_csv(&path, &suite).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let total: usize = suite.domains.iter().map(|d| d.len()).sum();
    assert_eq!(text.lines().count(), total + 1);
}

#[test]
fn corrupted_dataset_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("suite.prds");
    write_dataset(&path, &small_suite()).unwrap();
    let good = std::fs::read(&path).unwrap();

    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    std::fs::write(&path, &bad_magic).unwrap();
    assert!(matches!(read_dataset(&path), Err(LabError::Format { .. })));

    let mut trailing = good.clone();
    trailing.push(0);
    std::fs::write(&path, &trailing).unwrap();
    assert!(read_dataset(&path).is_err());

    std::fs::write(&path, &good[..good.len() / 2]).unwrap();
    assert!(read_dataset(&path).is_err());

    let missing = dir.path().join("nope.prds");
    let err = read_dataset(&missing).unwrap_err();
    assert!(err.to_string().contains("nope.prds"));
}

#[test]
fn checkpoint_round_trips_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.prck");
    let spec = ModelSpec {
        input_dim: 6,
        hidden: vec![5, 4],
        feature_dim: 3,
        classes: 4,
    };
    let model = Model::init(spec, 9).unwrap();
    write_checkpoint(&path, &model).unwrap();
    let back = read_checkpoint(&path).unwrap();
    assert_eq!(back.spec(), model.spec());
    for (a, b) in back.params().iter().zip(model.params()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.value, b.value);
    }
    let x = Tensor::from_vec(2, 6, (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
    assert_eq!(back.logits(&x).unwrap(), model.logits(&x).unwrap());
}

#[test]
fn embeddings_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.bin");
    let block = |id, kind, seed: u64| EmbeddingBlock {
        domain_id: id,
        kind,
        values: Tensor::from_vec(
            2,
            3,
            (0..6).map(|i| (i as f64 + seed as f64).sin()).collect(),
        )
        .unwrap(),
    };
    let runs = vec![
        RunEmbeddings {
            labeled: 0,
            test: 3,
            seed: 2022,
            blocks: vec![
                block(1, BlockKind::Features, 1),
                block(1, BlockKind::Prototypes, 2),
                block(0, BlockKind::Anchors, 3),
            ],
        },
        RunEmbeddings {
            labeled: 2,
            test: 1,
            seed: 7,
            blocks: vec![],
        },
    ];
    write_embeddings(&path, &runs).unwrap();
    assert_eq!(read_embeddings(&path).unwrap(), runs);
}
