//! Training-loop contracts: determinism, resume, phase identities and
//! diagnostics on constructed models.

mod common;

use ndarray::{Array1, Array2};
use npn_core::data::{generate_blobs, inject_symmetric, AugmentSpec, BlobSpec, Dataset, Split};
use npn_core::label_space::{CandidateHistogram, HistogramStore};
use npn_core::model::{Dense, MlpNetwork, OptimizerState};
use npn_core::trainer::{
    evaluate, metrics_csv, run, train, DisambiguationMode, Method, TrainConfig, Trainer,
    FINAL_CHECKPOINT,
};
use npn_core::Checkpoint;

const NO_AUGMENT: AugmentSpec = AugmentSpec {
    weak_sigma: 0.0,
    strong_sigma: 0.0,
    strong_dropout: 0.0,
};

fn blobs(classes: usize, per_class: usize, separation: f64, seed: u64) -> (Dataset, Dataset) {
    let s = generate_blobs(&BlobSpec {
        classes,
        per_class,
        test_per_class: 20,
        dim: 6,
        separation,
        seed,
    })
    .unwrap();
    (s.train, s.test)
}

fn noisy_blobs(seed: u64) -> (Dataset, Dataset) {
    let (train, test) = blobs(5, 40, 3.0, seed);
    (inject_symmetric(&train, 0.4, seed + 1).unwrap(), test)
}

fn small_cfg(total: usize, warmup: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        total_epochs: total,
        warmup_epochs: warmup,
        batch_size: 32,
        hidden: vec![16],
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn identical_seeds_give_identical_metrics() {
    let (train_set, test_set) = noisy_blobs(1);
    let cfg = small_cfg(8, 3, 4);
    let a = train(&cfg, &train_set, &test_set).unwrap();
    let b = train(&cfg, &train_set, &test_set).unwrap();
    assert_eq!(metrics_csv(&a.metrics), metrics_csv(&b.metrics));
    assert_eq!(a.net, b.net);
    let c = train(&small_cfg(8, 3, 5), &train_set, &test_set).unwrap();
    assert_ne!(a.net, c.net);
}

#[test]
fn resume_from_checkpoint_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (train_set, test_set) = noisy_blobs(2);
    let cfg = TrainConfig {
        checkpoint_every: 3,
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..small_cfg(8, 2, 9)
    };
    let full = train(&cfg, &train_set, &test_set).unwrap();
    assert!(dir.path().join(FINAL_CHECKPOINT).exists());

    let ck = Checkpoint::load(&dir.path().join("checkpoint-0003.npnc")).unwrap();
    assert_eq!(ck.next_epoch, 3);
    let resume_cfg = TrainConfig {
        checkpoint_dir: None,
        ..cfg
    };
    let trainer = Trainer::from_checkpoint(resume_cfg, ck, &train_set).unwrap();
    let resumed = run(trainer, &train_set, &test_set, full.metrics[..3].to_vec()).unwrap();
    assert_eq!(metrics_csv(&resumed.metrics), metrics_csv(&full.metrics));
    assert_eq!(resumed.net, full.net);
    assert_eq!(resumed.histograms, full.histograms);
}

#[test]
fn checkpoint_from_another_seed_is_rejected() {
    let (train_set, _) = noisy_blobs(2);
    let t = Trainer::new(small_cfg(4, 1, 1), &train_set).unwrap();
    let ck = t.checkpoint(&train_set);
    assert!(Trainer::from_checkpoint(small_cfg(4, 1, 2), ck, &train_set).is_err());
}

#[test]
fn all_warmup_run_equals_standard_baseline() {
    let (train_set, test_set) = noisy_blobs(3);
    let npn = train(&small_cfg(6, 6, 2), &train_set, &test_set).unwrap();
    let standard = TrainConfig {
        method: Method::Standard,
        ..small_cfg(6, 6, 2)
    };
    let base = train(&standard, &train_set, &test_set).unwrap();
    assert_eq!(metrics_csv(&npn.metrics), metrics_csv(&base.metrics));
    assert_eq!(npn.net, base.net);
}

#[test]
fn histogram_mass_tracks_epochs() {
    let (train_set, test_set) = noisy_blobs(4);
    let mut t = Trainer::new(small_cfg(6, 2, 1), &train_set).unwrap();
    for epoch in 1..=6u64 {
        t.run_epoch(&train_set, &test_set).unwrap();
        assert!(t.histograms().histograms().iter().all(|h| h.total() == 1 + 2 * epoch));
    }
}

#[test]
fn hard_and_soft_share_warmup_trajectory() {
    let (train_set, test_set) = noisy_blobs(5);
    let hard = small_cfg(6, 3, 3);
    let soft = TrainConfig {
        mode: DisambiguationMode::Soft,
        ..hard.clone()
    };
    let mut a = Trainer::new(hard, &train_set).unwrap();
    let mut b = Trainer::new(soft, &train_set).unwrap();
    for _ in 0..3 {
        let ra = a.run_epoch(&train_set, &test_set).unwrap();
        let rb = b.run_epoch(&train_set, &test_set).unwrap();
        assert_eq!(ra.candidates, rb.candidates);
    }
    assert_eq!(a.histograms(), b.histograms());
    assert_eq!(a.network(), b.network());
}

#[test]
fn hard_and_soft_share_trajectory_for_frozen_model() {
    let (train_set, test_set) = noisy_blobs(6);
    let frozen = TrainConfig {
        warmup_lr: 0.0,
        robust_lr: 0.0,
        ..small_cfg(6, 2, 3)
    };
    let soft = TrainConfig {
        mode: DisambiguationMode::Soft,
        ..frozen.clone()
    };
    let mut a = Trainer::new(frozen, &train_set).unwrap();
    let mut b = Trainer::new(soft, &train_set).unwrap();
    for _ in 0..6 {
        let ra = a.run_epoch(&train_set, &test_set).unwrap();
        let rb = b.run_epoch(&train_set, &test_set).unwrap();
        assert_eq!(ra.candidates, rb.candidates);
        assert_eq!(a.histograms(), b.histograms());
    }
}

/// A single sample whose given label is 1 and whose model prediction is 2.
/// After one warm-up-like epoch of history its histogram is `[0,2,1,0]`; the
/// robust step adds `{1,2}` and disambiguates `[0,3,2,0]`.
#[test]
fn traced_sample_gets_weight_point_six() {
    let mut x = Array2::<f32>::zeros((1, 4));
    x[[0, 2]] = 1.0;
    let train_set = Dataset {
        noisy_labels: vec![1],
        ..Dataset::new(x.clone(), vec![1], Split::Train, 4).unwrap()
    };
    let test_set = Dataset::new(x, vec![1], Split::Test, 4).unwrap();
    let net = MlpNetwork::from_layers(vec![Dense {
        weights: Array2::eye(4),
        bias: Array1::zeros(4),
    }])
    .unwrap();
    let cfg = TrainConfig {
        total_epochs: 2,
        warmup_epochs: 1,
        batch_size: 1,
        alpha: 0.0,
        beta: 0.0,
        hidden: vec![],
        augment: NO_AUGMENT,
        ..TrainConfig::default()
    };
    let hist = CandidateHistogram::from_parts(vec![0, 2, 1, 0], 1).unwrap();
    let ck = Checkpoint {
        optimizer: OptimizerState::new(&net, cfg.momentum).unwrap(),
        net,
        histograms: HistogramStore::from_histograms(4, vec![hist]).unwrap(),
        seed: cfg.seed,
        next_epoch: 1,
        config: None,
        labels: None,
    };
    let mut t = Trainer::from_checkpoint(cfg, ck, &train_set).unwrap();
    let report = t.robust_epoch(&train_set, &test_set).unwrap();
    assert_eq!(t.histograms().histograms()[0].counts(), &[0, 3, 2, 0]);

    let e = 1f64.exp();
    let p1 = 1.0 / (3.0 + e);
    let expected = 0.6 * -p1.ln();
    let batch = &report.batches[0];
    assert!((batch.pll.unwrap() - expected).abs() < 1e-12);
    assert_eq!(batch.total, batch.pll.unwrap());
}

#[test]
fn clean_labels_give_full_hit_rate_and_precision() {
    for seed in 0..3 {
        let (train_set, test_set) = blobs(4, 30, 6.0, seed);
        let out = train(&small_cfg(12, 8, seed), &train_set, &test_set).unwrap();
        let warm_end = &out.metrics[7];
        assert_eq!(warm_end.hit_rate, 100.0);
        let first_robust = out.metrics[8].disamb_precision;
        assert!(out.metrics.last().unwrap().disamb_precision >= first_robust);
    }
}

#[test]
fn uninformative_model_precision_is_clean_fraction() {
    let (train_set, test_set) = blobs(10, 200, 3.0, 7);
    let train_set = inject_symmetric(&train_set, 0.4, 8).unwrap();
    let net = MlpNetwork::zeros(&[6, 10]).unwrap();
    let cfg = TrainConfig {
        total_epochs: 6,
        warmup_epochs: 2,
        warmup_lr: 0.0,
        robust_lr: 0.0,
        hidden: vec![],
        ..TrainConfig::default()
    };
    let mut t = Trainer::with_network(cfg, net, &train_set).unwrap();
    let clean = 100.0 * (1.0 - train_set.empirical_noise_rate());
    for _ in 0..6 {
        let r = t.run_epoch(&train_set, &test_set).unwrap();
        assert!((r.metrics.disamb_precision - clean).abs() < 1e-9);
    }
    assert!((clean - 60.0).abs() < 3.0);
}

#[test]
fn separable_blobs_are_fit_exactly() {
    let (train_set, test_set) = blobs(3, 40, 10.0, 11);
    let cfg = TrainConfig {
        method: Method::Standard,
        augment: NO_AUGMENT,
        ..small_cfg(200, 200, 1)
    };
    let mut t = Trainer::new(cfg, &train_set).unwrap();
    let mut reached = false;
    for _ in 0..200 {
        t.run_epoch(&train_set, &test_set).unwrap();
        if evaluate(t.network(), &train_set).unwrap() == 100.0 {
            reached = true;
            break;
        }
    }
    assert!(reached);
}

#[test]
fn two_well_separated_blobs_logistic_baseline() {
    let s = generate_blobs(&BlobSpec {
        classes: 2,
        per_class: 200,
        test_per_class: 200,
        dim: 2,
        separation: 10.0,
        seed: 5,
    })
    .unwrap();
    let cfg = TrainConfig {
        method: Method::Standard,
        hidden: vec![],
        augment: NO_AUGMENT,
        ..small_cfg(30, 30, 2)
    };
    let out = train(&cfg, &s.train, &s.test).unwrap();
    assert!(out.metrics.last().unwrap().test_acc >= 99.0);
}

#[test]
fn identical_blobs_are_at_chance() {
    let (train_set, test_set) = {
        let s = generate_blobs(&BlobSpec {
            classes: 4,
            per_class: 100,
            test_per_class: 500,
            dim: 4,
            separation: 0.0,
            seed: 2,
        })
        .unwrap();
        (s.train, s.test)
    };
    let out = train(&small_cfg(10, 10, 1), &train_set, &test_set).unwrap();
    let acc = out.metrics.last().unwrap().test_acc;
    assert!((acc - 25.0).abs() < 5.0, "{acc}");
}
