//! Helpers shared by the integration and acceptance targets.
#![allow(dead_code)]

use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::Array2;
use npn_core::data::{generate_blobs, inject_asymmetric, inject_symmetric, BlobSpec, Dataset, Split};
use npn_core::label_space::{disambiguate_counts, ComplementarySet, Disambiguation};
use npn_core::losses::{ce_loss, nl_loss, pll_hard_loss, pll_soft_loss, reg_loss, LossOutput, Probabilities};
use npn_core::trainer::{train, DisambiguationMode, Method, TrainConfig, TrainOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub const H: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Central differences of `f` with respect to every entry of `logits`.
pub fn numeric_grad(logits: &Array2<f64>, f: &dyn Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut grad = Array2::zeros(logits.dim());
    for idx in 0..logits.len() {
        let (r, c) = (idx / logits.ncols(), idx % logits.ncols());
        let mut plus = logits.clone();
        plus[[r, c]] += H;
        let mut minus = logits.clone();
        minus[[r, c]] -= H;
        grad[[r, c]] = (f(&plus) - f(&minus)) / (2.0 * H);
    }
    grad
}

pub type LossFn = Box<dyn Fn(&Probabilities) -> LossOutput>;

pub fn random_logits(rng: &mut ChaCha8Rng, batch: usize, classes: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((batch, classes), || rng.random_range(-3.0..3.0))
}

pub fn random_disamb(rng: &mut ChaCha8Rng, classes: usize) -> Disambiguation {
    let mut counts = vec![0u32; classes];
    let given = rng.random_range(0..classes);
    counts[given] = 1;
    for _ in 0..rng.random_range(0..10) {
        counts[given] += 1;
        counts[rng.random_range(0..classes)] += 1;
    }
    disambiguate_counts(&counts).unwrap()
}

pub fn random_comp(rng: &mut ChaCha8Rng, classes: usize) -> ComplementarySet {
    let a = rng.random_range(0..classes);
    let b = rng.random_range(0..classes);
    ComplementarySet::from_membership((0..classes).map(|c| c != a && c != b).collect())
}

pub fn make_loss(kind: usize, rng: &mut ChaCha8Rng, batch: usize, classes: usize) -> (&'static str, LossFn) {
    match kind {
        0 => {
            let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
            ("ce", Box::new(move |p| ce_loss(p, &labels).unwrap()))
        }
        1 => {
            let d: Vec<_> = (0..batch).map(|_| random_disamb(rng, classes)).collect();
            ("pll_hard", Box::new(move |p| pll_hard_loss(p, &d).unwrap()))
        }
        2 => {
            let d: Vec<_> = (0..batch).map(|_| random_disamb(rng, classes)).collect();
            ("pll_soft", Box::new(move |p| pll_soft_loss(p, &d).unwrap()))
        }
        3 => {
            let comps: Vec<_> = (0..batch).map(|_| random_comp(rng, classes)).collect();
            ("nl", Box::new(move |p| nl_loss(p, &comps).unwrap()))
        }
        _ => {
            let pseudo: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
            ("reg", Box::new(move |p| reg_loss(p, &pseudo).unwrap()))
        }
    }
}

/// Largest relative error over `instances` random problems of every loss.
pub fn worst_loss_gradient_error(instances: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = Vec::new();
    for kind in 0..5 {
        let mut name = "";
        let mut max_err: f64 = 0.0;
        for inst in 0..instances {
            let classes = [2, 3, 5, 10][inst % 4];
            let batch = 1 + inst % 3;
            let logits = random_logits(&mut rng, batch, classes);
            let (n, loss) = make_loss(kind, &mut rng, batch, classes);
            name = n;
            let analytic = loss(&Probabilities::from_logits(logits.view())).grad_logits;
            let numeric = numeric_grad(&logits, &|z| loss(&Probabilities::from_logits(z.view())).value);
            for (a, b) in analytic.iter().zip(numeric.iter()) {
                max_err = max_err.max(rel_err(*a, *b));
            }
        }
        worst.push((name, max_err));
    }
    worst
}

/// Largest absolute gap between batched losses (value and gradient) and a
/// loop over single-sample batches.
pub fn worst_batched_vs_loop_gap(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for inst in 0..instances {
        let classes = [2, 3, 5, 10][inst % 4];
        let batch = 2 + inst % 15;
        for kind in 0..5 {
            let logits = random_logits(&mut rng, batch, classes);
            let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
            let disamb: Vec<_> = (0..batch).map(|_| random_disamb(&mut rng, classes)).collect();
            let comps: Vec<_> = (0..batch).map(|_| random_comp(&mut rng, classes)).collect();
            let eval = |rows: std::ops::Range<usize>| -> LossOutput {
                let p = Probabilities::from_logits(logits.slice(ndarray::s![rows.clone(), ..]));
                match kind {
                    0 => ce_loss(&p, &labels[rows]).unwrap(),
                    1 => pll_hard_loss(&p, &disamb[rows]).unwrap(),
                    2 => pll_soft_loss(&p, &disamb[rows]).unwrap(),
                    3 => nl_loss(&p, &comps[rows]).unwrap(),
                    _ => reg_loss(&p, &labels[rows]).unwrap(),
                }
            };
            let batched = eval(0..batch);
            let mut value = 0.0;
            for i in 0..batch {
                let single = eval(i..i + 1);
                value += single.value;
                for c in 0..classes {
                    let expected = single.grad_logits[[0, c]] / batch as f64;
                    worst = worst.max((batched.grad_logits[[i, c]] - expected).abs());
                }
            }
            worst = worst.max((batched.value - value / batch as f64).abs());
        }
    }
    worst
}

/// Clean train split with labels `n mod classes`; features are irrelevant.
pub fn clean_labels(n: usize, classes: usize) -> Dataset {
    let labels = (0..n).map(|i| (i % classes) as u16).collect();
    Dataset::new(Array2::zeros((n, 2)), labels, Split::Train, classes).unwrap()
}

#[derive(Debug)]
pub struct NoiseReport {
    pub empirical_rate: f64,
    /// p-value of the chi-square test that destinations are uniform over the
    /// wrong classes of each true class.
    pub uniformity_p: f64,
    /// Every corrupted label is `(true + 1) mod C`.
    pub successor_only: bool,
}

pub fn noise_report(ds: &Dataset) -> NoiseReport {
    let c = ds.classes;
    let mut cells = vec![0u64; c * c];
    for (&t, &y) in ds.true_labels.iter().zip(&ds.noisy_labels) {
        cells[t as usize * c + y as usize] += 1;
    }
    let mut chi2 = 0.0;
    for t in 0..c {
        let row: Vec<f64> = (0..c).filter(|&d| d != t).map(|d| cells[t * c + d] as f64).collect();
        let expected = row.iter().sum::<f64>() / row.len() as f64;
        if expected > 0.0 {
            chi2 += row.iter().map(|o| (o - expected).powi(2) / expected).sum::<f64>();
        }
    }
    let df = (c * (c - 2)) as f64;
    let uniformity_p = 1.0 - ChiSquared::new(df).unwrap().cdf(chi2);
    let successor_only = ds
        .true_labels
        .iter()
        .zip(&ds.noisy_labels)
        .all(|(&t, &y)| y == t || y as usize == (t as usize + 1) % c);
    NoiseReport {
        empirical_rate: ds.empirical_noise_rate(),
        uniformity_p,
        successor_only,
    }
}

pub fn symmetric_report(rate: f64, seed: u64) -> NoiseReport {
    noise_report(&inject_symmetric(&clean_labels(100_000, 10), rate, seed).unwrap())
}

pub fn asymmetric_report(rate: f64, seed: u64) -> NoiseReport {
    noise_report(&inject_asymmetric(&clean_labels(100_000, 10), rate, seed).unwrap())
}

pub const BENCH_NOISE: f64 = 0.4;
pub const BENCH_SEEDS: [u64; 3] = [0, 1, 2];

/// Train and test splits of the benchmark with 40% symmetric noise.
pub fn benchmark_data(seed: u64) -> (Dataset, Dataset) {
    let splits = generate_blobs(&BlobSpec::benchmark(seed)).unwrap();
    let train = inject_symmetric(&splits.train, BENCH_NOISE, seed + 100).unwrap();
    (train, splits.test)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Standard,
    NlOnly,
    NlPll,
    NpnHard,
    NpnSoft,
}

impl Variant {
    pub fn config(self, seed: u64) -> TrainConfig {
        let base = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        match self {
            Variant::Standard => TrainConfig {
                method: Method::Standard,
                ..base
            },
            Variant::NlOnly => TrainConfig {
                pll: false,
                beta: 0.0,
                ..base
            },
            Variant::NlPll => TrainConfig { beta: 0.0, ..base },
            Variant::NpnHard => base,
            Variant::NpnSoft => TrainConfig {
                mode: DisambiguationMode::Soft,
                ..base
            },
        }
    }
}

pub struct TimedRun {
    pub outcome: TrainOutcome,
    pub elapsed: Duration,
}

pub fn benchmark_run(variant: Variant, seed: u64, metrics_path: Option<&Path>) -> TimedRun {
    let (train_set, test_set) = benchmark_data(seed);
    let cfg = TrainConfig {
        metrics_path: metrics_path.map(Path::to_path_buf),
        ..variant.config(seed)
    };
    let started = Instant::now();
    let outcome = train(&cfg, &train_set, &test_set).unwrap();
    TimedRun {
        outcome,
        elapsed: started.elapsed(),
    }
}
