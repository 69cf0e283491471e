use htcl::checkpoint::Checkpoint;
use htcl::io;
use htcl::HtclError;
use htcl_core::data::{generate, GenConfig};
use htcl_core::model::{HtclModel, ModelDims};
use htcl_core::train::TrainConfig;

fn small_data() -> htcl_core::data::Generated {
    generate(&GenConfig { num_images: 30, num_predicates: 6, seed: 11, ..GenConfig::default() }).unwrap()
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let (model, store) = HtclModel::new(ModelDims::small(6, 4, 8), 5).unwrap();
    let ckpt = Checkpoint::new(model, store, TrainConfig::default(), vec![9, 5, 3, 2, 1, 0]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert!(back.store.diff_names(&ckpt.store).is_empty());
    assert_eq!(back.config, ckpt.config);
    assert_eq!(back.class_counts, ckpt.class_counts);
    assert_eq!(back.model.dims, ckpt.model.dims);
}

#[test]
fn checkpoint_rejects_missing_parameter() {
    let (model, store) = HtclModel::new(ModelDims::small(4, 3, 4), 1).unwrap();
    let ckpt = Checkpoint::new(model, store, TrainConfig::default(), vec![1; 4]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    let mut file = ckpt.to_file(&path).unwrap();
    let name = file.params.keys().next().unwrap().clone();
    file.params.remove(&name);
    io::write_json(&path, &file).unwrap();
    let err = Checkpoint::load(&path).unwrap_err();
    assert_eq!(err.kind(), "format", "{err}");
    assert!(err.to_string().contains(&name));
}

#[test]
fn split_round_trip_and_validation() {
    let data = small_data();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.json");
    io::save_split(&path, &data.train).unwrap();
    assert_eq!(io::load_split(&path).unwrap(), data.train);

    let mut bad = data.train.clone();
    bad.images[0].relations[0].predicate = 999;
    io::write_json(&path, &bad).unwrap();
    let err = io::load_split(&path).unwrap_err();
    assert_eq!(err.kind(), "invalid_scene");
    let v = err.to_json();
    assert_eq!(v["image_id"], serde_json::json!(bad.images[0].image_id));
}

#[test]
fn malformed_json_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.json");
    std::fs::write(&path, "{\n  \"images\": [,]\n}").unwrap();
    let err = io::load_split(&path).unwrap_err();
    assert!(matches!(err, HtclError::Json { .. }));
    assert_eq!(err.to_json()["line"], 2);
}

#[test]
fn csv_headers() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data();
    let preds: Vec<_> = Vec::new();
    let report =
        htcl_core::metrics::evaluate(&preds, &data.test, &[20], true, htcl_core::features::Task::PredCls).unwrap();
    let p = dir.path().join("report.csv");
    io::write_report(&p, &report).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(text.lines().next().unwrap(), "metric,K,value");
    assert_eq!(text.lines().count(), 5);
    let p = dir.path().join("loss.csv");
    io::write_loss_curve(&p, &[]).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap().trim_end(), io::LOSS_HEADER.join(","));
}
