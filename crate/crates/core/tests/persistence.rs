//! Dataset directories and checkpoint files on disk.

use std::fs;

use npn_core::data::{
    generate_blobs, inject_symmetric, load_dataset, save_dataset, write_csv, BlobSpec, CSV_FILE,
    MANIFEST_FILE, NOISY_LABELS_FILE, TRUE_LABELS_FILE,
};
use npn_core::{Checkpoint, NpnError, TrainConfig, Trainer};

fn small() -> npn_core::BlobSplits {
    generate_blobs(&BlobSpec {
        classes: 4,
        per_class: 25,
        test_per_class: 5,
        dim: 3,
        separation: 2.0,
        seed: 4,
    })
    .unwrap()
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let noisy = inject_symmetric(&small().train, 0.3, 8).unwrap();
    save_dataset(&noisy, dir.path()).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), noisy);
}

#[test]
fn short_label_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small().train;
    assert_eq!(ds.len(), 100);
    save_dataset(&ds, dir.path()).unwrap();
    let path = dir.path().join(TRUE_LABELS_FILE);
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..198]).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(NpnError::Format { .. })));
}

#[test]
fn tampered_labels_fail_checksum() {
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&small().train, dir.path()).unwrap();
    let path = dir.path().join(NOISY_LABELS_FILE);
    let mut bytes = fs::read(&path).unwrap();
    bytes[0] ^= 1;
    fs::write(&path, bytes).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(NpnError::Checksum { .. })));
}

#[test]
fn unknown_noise_kind_is_a_manifest_error() {
    let dir = tempfile::tempdir().unwrap();
    let noisy = inject_symmetric(&small().train, 0.3, 8).unwrap();
    save_dataset(&noisy, dir.path()).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).unwrap().replace("\"symmetric\"", "\"pairflip\"");
    fs::write(&path, text).unwrap();
    match load_dataset(dir.path()) {
        Err(NpnError::Manifest { field, .. }) => assert_eq!(field, "noise.kind"),
        other => panic!("expected manifest error, got {other:?}"),
    }
}

#[test]
fn csv_export_has_one_row_per_sample() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small().test;
    let path = dir.path().join(CSV_FILE);
    write_csv(&ds, &path).unwrap();
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "true_label,noisy_label,x0,x1,x2");
    assert_eq!(lines.count(), ds.len());
}

#[test]
fn trainer_checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let splits = small();
    let cfg = TrainConfig {
        total_epochs: 3,
        warmup_epochs: 1,
        hidden: vec![6],
        batch_size: 16,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(cfg, &splits.train).unwrap();
    t.run_epoch(&splits.train, &splits.test).unwrap();
    t.run_epoch(&splits.train, &splits.test).unwrap();
    let ck = t.checkpoint(&splits.train);
    let path = dir.path().join("ck.npnc");
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);
}
