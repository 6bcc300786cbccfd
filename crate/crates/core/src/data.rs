//! Synthetic Gaussian-blob datasets, label-noise injection, weak/strong
//! vector augmentation and the on-disk dataset layout.
//!
//! Every random draw comes from a stream keyed by `(seed, domain, index, ...)`
//! so generation, corruption and augmentation do not depend on visiting order.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NpnError, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FEATURES_FILE: &str = "features.bin";
pub const TRUE_LABELS_FILE: &str = "true_labels.bin";
pub const NOISY_LABELS_FILE: &str = "noisy_labels.bin";
pub const CSV_FILE: &str = "samples.csv";

/// Maximum asymmetric noise rate accepted.
pub const MAX_ASYMMETRIC_RATE: f64 = 0.5;

// Stream domains.
const DOMAIN_MEANS: u64 = 1;
const DOMAIN_TRAIN: u64 = 2;
const DOMAIN_TEST: u64 = 3;
const DOMAIN_NOISE: u64 = 4;
const DOMAIN_AUGMENT: u64 = 5;
pub(crate) const DOMAIN_SHUFFLE: u64 = 6;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for the stream identified by `seed` and `keys`.
pub fn stream_rng(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    let mixed = keys
        .iter()
        .fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k)));
    ChaCha8Rng::seed_from_u64(mixed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Symmetric,
    Asymmetric,
}

impl NoiseKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NoiseKind::Symmetric => "symmetric",
            NoiseKind::Asymmetric => "asymmetric",
        }
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = NpnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(NoiseKind::Symmetric),
            "asymmetric" => Ok(NoiseKind::Asymmetric),
            other => Err(NpnError::param(
                "noise",
                format!("unknown noise kind `{other}` (expected symmetric or asymmetric)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(NpnError::param("rate", "noise rate must lie in [0, 1)"));
        }
        if self.kind == NoiseKind::Asymmetric && self.rate > MAX_ASYMMETRIC_RATE {
            return Err(NpnError::param(
                "rate",
                format!("asymmetric noise rate must not exceed {MAX_ASYMMETRIC_RATE}"),
            ));
        }
        Ok(())
    }
}

/// Strengths of the weak and strong views.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSpec {
    pub weak_sigma: f64,
    pub strong_sigma: f64,
    pub strong_dropout: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            weak_sigma: 0.05,
            strong_sigma: 0.15,
            strong_dropout: 0.2,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.weak_sigma >= 0.0 && self.weak_sigma.is_finite()) {
            return Err(NpnError::param("weak_sigma", "must be finite and >= 0"));
        }
        if !(self.strong_sigma >= self.weak_sigma && self.strong_sigma.is_finite()) {
            return Err(NpnError::param("strong_sigma", "must be finite and >= weak_sigma"));
        }
        if !(0.0..1.0).contains(&self.strong_dropout) {
            return Err(NpnError::param("strong_dropout", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Weak,
    Strong,
}

impl View {
    fn key(self) -> u64 {
        match self {
            View::Weak => 1,
            View::Strong => 2,
        }
    }
}

/// Weak: additive Gaussian. Strong: larger Gaussian, then coordinate dropout.
pub fn augment<R: Rng + ?Sized>(
    x: ArrayView1<'_, f64>,
    spec: &AugmentSpec,
    view: View,
    rng: &mut R,
) -> Vec<f64> {
    match view {
        View::Weak => x
            .iter()
            .map(|&v| v + spec.weak_sigma * rng.sample::<f64, _>(StandardNormal))
            .collect(),
        View::Strong => x
            .iter()
            .map(|&v| {
                let noisy = v + spec.strong_sigma * rng.sample::<f64, _>(StandardNormal);
                if rng.random::<f64>() < spec.strong_dropout {
                    0.0
                } else {
                    noisy
                }
            })
            .collect(),
    }
}

/// Parameters of the Gaussian-blob generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub classes: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub seed: u64,
}

impl BlobSpec {
    /// The desk-scale benchmark: 10 classes in 20 dimensions, 500 train and
    /// 100 test samples per class, means at radius 3.
    pub fn benchmark(seed: u64) -> Self {
        BlobSpec {
            classes: 10,
            per_class: 500,
            test_per_class: 100,
            dim: 20,
            separation: 3.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(NpnError::param("classes", "need at least 2 classes"));
        }
        if self.classes > u16::MAX as usize {
            return Err(NpnError::param("classes", "labels are stored as u16"));
        }
        if self.per_class < 1 {
            return Err(NpnError::param("per_class", "need at least 1 sample per class"));
        }
        if self.dim < 2 {
            return Err(NpnError::param("dim", "need at least 2 dimensions"));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(NpnError::param("separation", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Per-dimension statistics of the clean training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f32>,
    /// Ground truth; used only for evaluation and diagnostics.
    pub true_labels: Vec<u16>,
    pub noisy_labels: Vec<u16>,
    pub split: Split,
    pub classes: usize,
    pub generator: Option<BlobSpec>,
    pub noise: Option<NoiseSpec>,
    pub standardization: Option<Standardization>,
}

impl Dataset {
    /// A clean dataset: noisy labels equal the true labels.
    pub fn new(features: Array2<f32>, labels: Vec<u16>, split: Split, classes: usize) -> Result<Self> {
        let ds = Dataset {
            features,
            noisy_labels: labels.clone(),
            true_labels: labels,
            split,
            classes,
            generator: None,
            noise: None,
            standardization: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(NpnError::param("classes", "need at least 2 classes"));
        }
        let n = self.features.nrows();
        if self.true_labels.len() != n {
            return Err(NpnError::dim("true labels", n, self.true_labels.len()));
        }
        if self.noisy_labels.len() != n {
            return Err(NpnError::dim("noisy labels", n, self.noisy_labels.len()));
        }
        let bad = |labels: &[u16]| labels.iter().any(|&y| y as usize >= self.classes);
        if bad(&self.true_labels) || bad(&self.noisy_labels) {
            return Err(NpnError::param("labels", format!("label outside [0, {})", self.classes)));
        }
        if self.split == Split::Test && self.noisy_labels != self.true_labels {
            return Err(NpnError::InvalidState("test split must carry clean labels".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn corrupted_count(&self) -> usize {
        self.true_labels
            .iter()
            .zip(&self.noisy_labels)
            .filter(|(t, y)| t != y)
            .count()
    }

    pub fn empirical_noise_rate(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.corrupted_count() as f64 / self.len() as f64
        }
    }

    /// Rows `indices` as a double-precision batch.
    pub fn batch(&self, indices: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((indices.len(), self.dim()));
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r)
                .assign(&self.features.row(i).mapv(|v| v as f64));
        }
        out
    }

    /// Rows `indices` under the given view, one stream per `(sample, epoch, view)`.
    pub fn augmented_batch(
        &self,
        indices: &[usize],
        spec: &AugmentSpec,
        view: View,
        seed: u64,
        epoch: usize,
    ) -> Array2<f64> {
        let raw = self.batch(indices);
        let mut out = Array2::zeros(raw.dim());
        for (r, &i) in indices.iter().enumerate() {
            let mut rng = stream_rng(seed, &[DOMAIN_AUGMENT, i as u64, epoch as u64, view.key()]);
            let row = augment(raw.row(r), spec, view, &mut rng);
            out.row_mut(r).assign(&ArrayView1::from(&row));
        }
        out
    }
}

/// Train and test splits sharing the same class means.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobSplits {
    pub train: Dataset,
    pub test: Dataset,
}

/// Class means on a sphere of radius `separation`, unit-variance samples,
/// features standardized with the train split's statistics. Sample `n`
/// belongs to class `n mod C`.
pub fn generate_blobs(spec: &BlobSpec) -> Result<BlobSplits> {
    spec.validate()?;
    let (c, d) = (spec.classes, spec.dim);
    let mut rng = stream_rng(spec.seed, &[DOMAIN_MEANS]);
    let means: Vec<Vec<f64>> = (0..c)
        .map(|_| {
            let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            dir.iter().map(|v| v / norm * spec.separation).collect()
        })
        .collect();

    let draw = |domain: u64, count: usize| -> (Array2<f64>, Vec<u16>) {
        let n = count * c;
        let mut x = Array2::zeros((n, d));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % c;
            let mut rng = stream_rng(spec.seed, &[domain, i as u64]);
            for (j, v) in x.row_mut(i).iter_mut().enumerate() {
                *v = means[class][j] + rng.sample::<f64, _>(StandardNormal);
            }
            labels.push(class as u16);
        }
        (x, labels)
    };
    let (train_x, train_y) = draw(DOMAIN_TRAIN, spec.per_class);
    let (test_x, test_y) = draw(DOMAIN_TEST, spec.test_per_class);

    let n = train_x.nrows() as f64;
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for j in 0..d {
        let col = train_x.column(j);
        mean[j] = col.sum() / n;
        let var = col.iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n;
        std[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let standardize = |x: Array2<f64>| -> Array2<f32> {
        let mut out = Array2::zeros(x.dim());
        for ((i, j), v) in x.indexed_iter() {
            out[[i, j]] = ((v - mean[j]) / std[j]) as f32;
        }
        out
    };

    let stats = Standardization {
        mean: mean.clone(),
        std: std.clone(),
    };
    let mut train = Dataset::new(standardize(train_x), train_y, Split::Train, c)?;
    let mut test = Dataset::new(standardize(test_x), test_y, Split::Test, c)?;
    for ds in [&mut train, &mut test] {
        ds.generator = Some(*spec);
        ds.standardization = Some(stats.clone());
    }
    Ok(BlobSplits { train, test })
}

fn check_injectable(ds: &Dataset) -> Result<()> {
    if ds.split != Split::Train {
        return Err(NpnError::InvalidState("noise is only injected into the train split".into()));
    }
    if ds.noise.is_some() || ds.noisy_labels != ds.true_labels {
        return Err(NpnError::InvalidState("dataset already carries label noise".into()));
    }
    Ok(())
}

fn inject(ds: &Dataset, spec: NoiseSpec, corrupt: impl Fn(usize, &mut ChaCha8Rng) -> usize) -> Result<Dataset> {
    spec.validate()?;
    check_injectable(ds)?;
    let mut out = ds.clone();
    for (i, (noisy, &truth)) in out.noisy_labels.iter_mut().zip(&ds.true_labels).enumerate() {
        let mut rng = stream_rng(spec.seed, &[DOMAIN_NOISE, i as u64]);
        if rng.random::<f64>() < spec.rate {
            *noisy = corrupt(truth as usize, &mut rng) as u16;
        }
    }
    out.noise = Some(spec);
    Ok(out)
}

/// Corrupts each label with probability `rate`, to a wrong class chosen uniformly.
pub fn inject_symmetric(ds: &Dataset, rate: f64, seed: u64) -> Result<Dataset> {
    let classes = ds.classes;
    let spec = NoiseSpec {
        kind: NoiseKind::Symmetric,
        rate,
        seed,
    };
    inject(ds, spec, |truth, rng| {
        let r = rng.random_range(0..classes - 1);
        if r >= truth {
            r + 1
        } else {
            r
        }
    })
}

/// Corrupts each label with probability `rate` to its successor, `C-1 -> 0`.
pub fn inject_asymmetric(ds: &Dataset, rate: f64, seed: u64) -> Result<Dataset> {
    let classes = ds.classes;
    let spec = NoiseSpec {
        kind: NoiseKind::Asymmetric,
        rate,
        seed,
    };
    inject(ds, spec, |truth, _| (truth + 1) % classes)
}

pub fn inject_noise(ds: &Dataset, spec: &NoiseSpec) -> Result<Dataset> {
    match spec.kind {
        NoiseKind::Symmetric => inject_symmetric(ds, spec.rate, spec.seed),
        NoiseKind::Asymmetric => inject_asymmetric(ds, spec.rate, spec.seed),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseRecord {
    kind: String,
    rate: f64,
    seed: u64,
    corrupted: usize,
    empirical_rate: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checksums {
    features: String,
    true_labels: String,
    noisy_labels: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    split: String,
    classes: usize,
    samples: usize,
    dim: usize,
    noise: Option<NoiseRecord>,
    generator: Option<BlobSpec>,
    standardization: Option<Standardization>,
    sha256: Checksums,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| NpnError::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| NpnError::io(path, e))
}

fn label_bytes(labels: &[u16]) -> Vec<u8> {
    labels.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Writes the manifest, binary features (LE f32, row-major) and labels (LE u16).
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir).map_err(|e| NpnError::io(dir, e))?;
    let features: Vec<u8> = ds.features.iter().flat_map(|v| v.to_le_bytes()).collect();
    let true_labels = label_bytes(&ds.true_labels);
    let noisy_labels = label_bytes(&ds.noisy_labels);
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        split: ds.split.to_string(),
        classes: ds.classes,
        samples: ds.len(),
        dim: ds.dim(),
        noise: ds.noise.map(|n| NoiseRecord {
            kind: n.kind.as_str().to_string(),
            rate: n.rate,
            seed: n.seed,
            corrupted: ds.corrupted_count(),
            empirical_rate: ds.empirical_noise_rate(),
        }),
        generator: ds.generator,
        standardization: ds.standardization.clone(),
        sha256: Checksums {
            features: sha256_hex(&features),
            true_labels: sha256_hex(&true_labels),
            noisy_labels: sha256_hex(&noisy_labels),
        },
    };
    write_file(&dir.join(FEATURES_FILE), &features)?;
    write_file(&dir.join(TRUE_LABELS_FILE), &true_labels)?;
    write_file(&dir.join(NOISY_LABELS_FILE), &noisy_labels)?;
    let json = serde_json::to_string_pretty(&manifest)?;
    write_file(&dir.join(MANIFEST_FILE), json.as_bytes())
}

fn manifest_err(field: &str, reason: impl Into<String>) -> NpnError {
    NpnError::Manifest {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn read_checked(dir: &Path, name: &str, expected_sha: &str, expected_len: usize, what: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    let bytes = read_file(&path)?;
    if bytes.len() != expected_len {
        return Err(NpnError::Format {
            what: "dataset file",
            reason: format!(
                "{name}: manifest implies {expected_len} bytes of {what}, file has {}",
                bytes.len()
            ),
        });
    }
    if sha256_hex(&bytes) != expected_sha {
        return Err(NpnError::Checksum { path });
    }
    Ok(bytes)
}

fn decode_labels(bytes: &[u8]) -> Vec<u16> {
    bytes
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect()
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = read_file(&manifest_path)?;
    let manifest: Manifest = serde_json::from_slice(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(manifest_err(
            "format_version",
            format!("unsupported version {}", manifest.format_version),
        ));
    }
    let split = match manifest.split.as_str() {
        "train" => Split::Train,
        "test" => Split::Test,
        other => return Err(manifest_err("split", format!("unknown split `{other}`"))),
    };
    let noise = match &manifest.noise {
        None => None,
        Some(rec) => {
            let kind = match rec.kind.as_str() {
                "symmetric" => NoiseKind::Symmetric,
                "asymmetric" => NoiseKind::Asymmetric,
                other => return Err(manifest_err("noise.kind", format!("unknown noise kind `{other}`"))),
            };
            let spec = NoiseSpec {
                kind,
                rate: rec.rate,
                seed: rec.seed,
            };
            spec.validate()
                .map_err(|e| manifest_err("noise.rate", e.to_string()))?;
            Some(spec)
        }
    };
    let (n, d) = (manifest.samples, manifest.dim);
    let feat_bytes = read_checked(dir, FEATURES_FILE, &manifest.sha256.features, n * d * 4, "features")?;
    let true_bytes = read_checked(dir, TRUE_LABELS_FILE, &manifest.sha256.true_labels, n * 2, "labels")?;
    let noisy_bytes = read_checked(dir, NOISY_LABELS_FILE, &manifest.sha256.noisy_labels, n * 2, "labels")?;
    let values: Vec<f32> = feat_bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let features = Array2::from_shape_vec((n, d), values).map_err(|e| NpnError::Format {
        what: "dataset file",
        reason: e.to_string(),
    })?;
    let ds = Dataset {
        features,
        true_labels: decode_labels(&true_bytes),
        noisy_labels: decode_labels(&noisy_bytes),
        split,
        classes: manifest.classes,
        generator: manifest.generator,
        noise,
        standardization: manifest.standardization,
    };
    ds.validate()?;
    if let Some(rec) = &manifest.noise {
        if rec.corrupted != ds.corrupted_count() {
            return Err(manifest_err("noise.corrupted", "does not match the label files"));
        }
    }
    Ok(ds)
}

/// Human-readable export: `true_label,noisy_label,x0,...` one sample per line.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("true_label,noisy_label");
    for j in 0..ds.dim() {
        out.push_str(&format!(",x{j}"));
    }
    out.push('\n');
    for i in 0..ds.len() {
        out.push_str(&format!("{},{}", ds.true_labels[i], ds.noisy_labels[i]));
        for v in ds.features.row(i) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| NpnError::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| NpnError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn spec(classes: usize, per_class: usize) -> BlobSpec {
        BlobSpec {
            classes,
            per_class,
            test_per_class: 5,
            dim: 4,
            separation: 3.0,
            seed: 9,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_blobs(&spec(3, 20)).unwrap();
        let b = generate_blobs(&spec(3, 20)).unwrap();
        assert_eq!(a, b);
        let mut other = spec(3, 20);
        other.seed = 10;
        assert_ne!(a.train.features, generate_blobs(&other).unwrap().train.features);
    }

    #[test]
    fn train_features_are_standardized() {
        let s = generate_blobs(&spec(4, 200)).unwrap();
        for col in s.train.features.columns() {
            let n = col.len() as f64;
            let mean = col.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = col.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-4);
        }
        assert_eq!(s.test.len(), 20);
        assert_eq!(s.train.true_labels[5], 1);
    }

    #[test]
    fn invalid_generator_params() {
        for bad in [
            BlobSpec { classes: 1, ..spec(2, 2) },
            BlobSpec { per_class: 0, ..spec(2, 2) },
            BlobSpec { dim: 1, ..spec(2, 2) },
            BlobSpec { separation: -1.0, ..spec(2, 2) },
        ] {
            assert!(generate_blobs(&bad).is_err());
        }
    }

    #[test]
    fn zero_rate_leaves_labels_clean() {
        let s = generate_blobs(&spec(5, 100)).unwrap();
        let noisy = inject_symmetric(&s.train, 0.0, 1).unwrap();
        assert_eq!(noisy.noisy_labels, noisy.true_labels);
        let noisy = inject_asymmetric(&s.train, 0.0, 1).unwrap();
        assert_eq!(noisy.noisy_labels, noisy.true_labels);
    }

    #[test]
    fn binary_symmetric_noise_flips_to_other_class() {
        let s = generate_blobs(&spec(2, 2000)).unwrap();
        let noisy = inject_symmetric(&s.train, 0.4, 3).unwrap();
        let rate = noisy.empirical_noise_rate();
        assert!((rate - 0.4).abs() < 0.03, "rate {rate}");
    }

    #[test]
    fn asymmetric_wraps_last_class() {
        let s = generate_blobs(&spec(3, 500)).unwrap();
        let noisy = inject_asymmetric(&s.train, 0.5, 3).unwrap();
        let mut wrapped = 0;
        for (&t, &y) in noisy.true_labels.iter().zip(&noisy.noisy_labels) {
            if t != y {
                assert_eq!(y, (t + 1) % 3);
                wrapped += (t == 2) as usize;
            }
        }
        assert!(wrapped > 0);
    }

    #[test]
    fn noise_rejections() {
        let s = generate_blobs(&spec(3, 10)).unwrap();
        assert!(inject_symmetric(&s.train, 1.0, 0).is_err());
        assert!(inject_symmetric(&s.train, -0.1, 0).is_err());
        assert!(inject_asymmetric(&s.train, 0.6, 0).is_err());
        assert!(inject_symmetric(&s.test, 0.2, 0).is_err());
        let once = inject_symmetric(&s.train, 0.2, 0).unwrap();
        assert!(inject_symmetric(&once, 0.2, 0).is_err());
    }

    #[test]
    fn noise_never_touches_features_or_truth() {
        let s = generate_blobs(&spec(4, 50)).unwrap();
        let noisy = inject_symmetric(&s.train, 0.7, 2).unwrap();
        assert_eq!(noisy.features, s.train.features);
        assert_eq!(noisy.true_labels, s.train.true_labels);
    }

    #[test]
    fn weak_view_with_zero_sigma_is_identity() {
        let spec = AugmentSpec {
            weak_sigma: 0.0,
            ..AugmentSpec::default()
        };
        let x = array![1.0, -2.0, 3.5];
        let mut rng = stream_rng(0, &[1]);
        assert_eq!(augment(x.view(), &spec, View::Weak, &mut rng), vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn augmentation_replays_from_stream() {
        let spec = AugmentSpec::default();
        let x = array![0.5, 0.25, -1.0, 2.0];
        let a = augment(x.view(), &spec, View::Strong, &mut stream_rng(4, &[7]));
        let b = augment(x.view(), &spec, View::Strong, &mut stream_rng(4, &[7]));
        assert_eq!(a, b);
    }

    #[test]
    fn augment_spec_validation() {
        let ok = AugmentSpec::default();
        assert!(ok.validate().is_ok());
        assert!(AugmentSpec { strong_dropout: 1.0, ..ok }.validate().is_err());
        assert!(AugmentSpec { strong_sigma: 0.01, ..ok }.validate().is_err());
        assert!(AugmentSpec { weak_sigma: -1.0, ..ok }.validate().is_err());
    }

    #[test]
    fn augmented_batch_is_order_independent() {
        let s = generate_blobs(&spec(3, 10)).unwrap();
        let aug = AugmentSpec::default();
        let a = s.train.augmented_batch(&[4, 7], &aug, View::Strong, 1, 3);
        let b = s.train.augmented_batch(&[7, 4], &aug, View::Strong, 1, 3);
        assert_eq!(a.row(0), b.row(1));
        assert_eq!(a.row(1), b.row(0));
    }

    #[test]
    fn noise_kind_parsing() {
        assert_eq!("asymmetric".parse::<NoiseKind>().unwrap(), NoiseKind::Asymmetric);
        assert!("pairflip".parse::<NoiseKind>().is_err());
    }
}
