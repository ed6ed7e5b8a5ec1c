use std::fs;
use std::path::Path;

use semvad::ingest::{self, Dataset};
use semvad::synth::{self, GroundTruth, SynthConfig};

fn small() -> SynthConfig {
    SynthConfig {
        n_train: 2,
        frames_per_video: 60,
        windows: SynthConfig::acceptance()
            .windows
            .into_iter()
            .map(|mut w| {
                w.start = 20;
                w.end = 40;
                w
            })
            .collect(),
        ..SynthConfig::acceptance()
    }
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn generated_dataset_loads_back_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let gen = synth::generate(&small()).unwrap();
    gen.write(dir.path()).unwrap();
    let loaded = Dataset::load(dir.path()).unwrap();
    assert_eq!(loaded.pool, gen.dataset.pool);
    assert_eq!(loaded.train.len(), 2);
    assert_eq!(loaded.test.len(), 4);
    for (a, b) in loaded.videos().zip(gen.dataset.videos()) {
        assert_eq!(a.video_id, b.video_id);
        assert_eq!(a.detections, b.detections);
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, b.labels);
    }
    let truth = GroundTruth::load(&dir.path().join(synth::GROUND_TRUTH_FILE)).unwrap();
    assert_eq!(truth.transition_matrix(), gen.truth.transition_matrix());
}

#[test]
fn save_of_a_loaded_dataset_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth::generate(&small()).unwrap().write(a.path()).unwrap();
    let loaded = Dataset::load(a.path()).unwrap();
    loaded.save(b.path()).unwrap();
    fs::copy(a.path().join(synth::GROUND_TRUTH_FILE), b.path().join(synth::GROUND_TRUTH_FILE)).unwrap();
    assert_eq!(read_tree(a.path()), read_tree(b.path()));
}

#[test]
fn regeneration_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth::generate(&small()).unwrap().write(a.path()).unwrap();
    synth::generate(&small()).unwrap().write(b.path()).unwrap();
    assert_eq!(read_tree(a.path()), read_tree(b.path()));
    let c = tempfile::tempdir().unwrap();
    let other = SynthConfig { seed: 8, ..small() };
    synth::generate(&other).unwrap().write(c.path()).unwrap();
    assert_ne!(read_tree(a.path()), read_tree(c.path()));
}

#[test]
fn corrupt_files_are_reported_with_their_path() {
    let dir = tempfile::tempdir().unwrap();
    synth::generate(&small()).unwrap().write(dir.path()).unwrap();
    let det = dir.path().join("test_01").join(ingest::DETECTIONS_FILE);
    let mut text = fs::read_to_string(&det).unwrap();
    text.push_str("{not json}\n");
    fs::write(&det, text).unwrap();
    let err = Dataset::load(dir.path()).unwrap_err().to_string();
    assert!(err.contains("test_01"), "{err}");
    assert!(err.contains("detections.jsonl:181"), "{err}");

    synth::generate(&small()).unwrap().write(dir.path()).unwrap();
    let feats = dir.path().join("train_00").join(ingest::FEATURES_FILE);
    let bytes = fs::read(&feats).unwrap();
    fs::write(&feats, &bytes[..bytes.len() - 4]).unwrap();
    assert!(Dataset::load(dir.path()).is_err());
}
