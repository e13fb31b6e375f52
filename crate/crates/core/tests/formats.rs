use triplet_transformer::data::{generate_dataset, read_dataset, write_dataset, GeneratorConfig, MANIFEST_FILE};
use triplet_transformer::model::{Checkpoint, Model, ModelConfig};
use triplet_transformer::Error;

fn small() -> GeneratorConfig {
    GeneratorConfig { scenes: 12, seed: 3, ..GeneratorConfig::default() }
}

#[test]
fn scenes_are_one_json_object_per_line() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate_dataset(&small()).unwrap();
    write_dataset(tmp.path(), &data).unwrap();
    let text = std::fs::read_to_string(tmp.path().join("train.jsonl")).unwrap();
    assert_eq!(text.lines().count(), data.train.len());
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let t = &v["triplets"][0];
        for key in ["subject_label", "relation_label", "object_label", "subject", "relation", "object"] {
            assert!(!t[key].is_null(), "missing {key}");
        }
        assert_eq!(t["relation"].as_array().unwrap().len(), 16);
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest["relation_counts"].as_array().unwrap().len(), 30);
    assert_eq!(manifest["relation_cutoffs"], serde_json::json!([5, 10]));
    assert_eq!(manifest["generator"]["seed"], 3);
}

#[test]
fn dataset_round_trip_is_bit_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate_dataset(&small()).unwrap();
    write_dataset(tmp.path(), &data).unwrap();
    assert_eq!(read_dataset(tmp.path()).unwrap(), data);
}

#[test]
fn corrupt_scene_line_is_reported_with_its_number() {
    let tmp = tempfile::tempdir().unwrap();
    write_dataset(tmp.path(), &generate_dataset(&small()).unwrap()).unwrap();
    let path = tmp.path().join("val.jsonl");
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{\"id\": \"broken\"\n");
    let line = text.lines().count();
    std::fs::write(&path, text).unwrap();
    match read_dataset(tmp.path()) {
        Err(Error::Parse { line: l, .. }) => assert_eq!(l, line),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn labels_outside_the_manifest_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let mut data = generate_dataset(&small()).unwrap();
    data.test[0].triplets[0].relation_label = 99;
    write_dataset(tmp.path(), &data).unwrap();
    assert!(matches!(read_dataset(tmp.path()), Err(Error::LabelOutOfRange { id: 99, .. })));
}

#[test]
fn checkpoint_is_self_describing_json() {
    let tmp = tempfile::tempdir().unwrap();
    let config = ModelConfig { hidden: 8, heads: 2, memory_slots: 2, embedding_dim: 10, ..ModelConfig::default() };
    let model = Model::new(config.clone(), 9).unwrap();
    let path = tmp.path().join("checkpoint.json");
    Checkpoint::new(&model, "init", None).save(&path).unwrap();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["format"], "triplet-transformer-checkpoint");
    assert_eq!(v["version"], 1);
    assert_eq!(v["model"]["hidden"], 8);
    let text = v["params"].to_string();
    for name in ["rel.layer0.memory", "rel.positions", "global.input.weight", "classifier.outer.bias"] {
        assert!(text.contains(name), "missing {name}");
    }
    let back = Checkpoint::load(&path).unwrap().to_model().unwrap();
    assert_eq!(back.config, config);
    assert_eq!(back.params, model.params);

    std::fs::write(&path, "{\"format\": \"something-else\"}").unwrap();
    assert!(Checkpoint::load(&path).is_err());
}
