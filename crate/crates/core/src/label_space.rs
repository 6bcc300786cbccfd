//! Label-set bookkeeping: candidate and complementary sets, the per-sample
//! candidate histogram, and hard/soft disambiguation of that histogram.
//!
//! A candidate set is the given (possibly noisy) label plus the model's top
//! prediction. Its raw counts sum to 2; when prediction and label agree the
//! single class carries a count of 2. Histograms accumulate those raw counts,
//! while set membership (and therefore the complement) is the boolean view.

use crate::error::{NpnError, Result};

const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// Index of the largest entry. Ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Multi-hot label counts over `C` classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector(Vec<u32>);

impl LabelVector {
    pub fn new(entries: Vec<u32>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(NpnError::param("classes", "label space needs at least 2 classes"));
        }
        Ok(LabelVector(entries))
    }

    pub fn one_hot(class: usize, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(NpnError::param("classes", "label space needs at least 2 classes"));
        }
        if class >= classes {
            return Err(NpnError::param(
                "class",
                format!("class {class} outside [0, {classes})"),
            ));
        }
        let mut entries = vec![0; classes];
        entries[class] = 1;
        Ok(LabelVector(entries))
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    pub fn is_one_hot(&self) -> bool {
        self.0.iter().map(|&v| v as u64).sum::<u64>() == 1
    }

    /// The class of a one-hot label.
    pub fn class(&self) -> Option<usize> {
        self.is_one_hot().then(|| argmax(&self.0))
    }
}

/// Given label plus top prediction, for one sample and one epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    counts: Vec<u32>,
    membership: Vec<bool>,
}

impl CandidateSet {
    /// Builds a candidate set from raw counts. Counts must sum to exactly 2.
    pub fn from_counts(counts: Vec<u32>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(NpnError::param("classes", "label space needs at least 2 classes"));
        }
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        if total != 2 {
            return Err(NpnError::InvalidState(format!(
                "candidate counts must sum to 2, got {total}"
            )));
        }
        let membership = counts.iter().map(|&c| c > 0).collect();
        Ok(CandidateSet { counts, membership })
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn membership(&self) -> &[bool] {
        &self.membership
    }

    pub fn contains(&self, class: usize) -> bool {
        self.membership.get(class).copied().unwrap_or(false)
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn members(&self) -> Vec<usize> {
        members(&self.membership)
    }
}

/// Every class outside the candidate set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplementarySet {
    membership: Vec<bool>,
}

impl ComplementarySet {
    pub fn from_membership(membership: Vec<bool>) -> Self {
        ComplementarySet { membership }
    }

    pub fn membership(&self) -> &[bool] {
        &self.membership
    }

    pub fn contains(&self, class: usize) -> bool {
        self.membership.get(class).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.membership.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> usize {
        self.membership.len()
    }

    pub fn members(&self) -> Vec<usize> {
        members(&self.membership)
    }
}

fn members(membership: &[bool]) -> Vec<usize> {
    membership
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect()
}

/// Candidate set of a noisy one-hot label and a probability row.
pub fn build_candidate_set(noisy_label: &LabelVector, probs: &[f64]) -> Result<CandidateSet> {
    let classes = noisy_label.classes();
    if probs.len() != classes {
        return Err(NpnError::dim("candidate probabilities", classes, probs.len()));
    }
    let given = noisy_label
        .class()
        .ok_or_else(|| NpnError::param("noisy_label", "must be one-hot"))?;
    validate_probs(probs)?;
    Ok(candidate_from_classes(given, argmax(probs), classes))
}

/// Candidate set from the given class and the predicted class directly.
pub(crate) fn candidate_from_classes(given: usize, predicted: usize, classes: usize) -> CandidateSet {
    let mut counts = vec![0u32; classes];
    counts[given] += 1;
    counts[predicted] += 1;
    let membership = counts.iter().map(|&c| c > 0).collect();
    CandidateSet { counts, membership }
}

fn validate_probs(probs: &[f64]) -> Result<()> {
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(NpnError::param("probs", "entries must lie in [0, 1]"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(NpnError::param(
            "probs",
            format!("entries must sum to 1, got {total}"),
        ));
    }
    Ok(())
}

pub fn build_complementary_set(candidate: &CandidateSet) -> ComplementarySet {
    ComplementarySet {
        membership: candidate.membership.iter().map(|&m| !m).collect(),
    }
}

/// Running per-class count of candidate-set membership.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateHistogram {
    counts: Vec<u32>,
    epochs_observed: u32,
}

impl CandidateHistogram {
    /// The `t = 0` histogram: just the given label.
    pub fn new(noisy_label: &LabelVector) -> Result<Self> {
        if !noisy_label.is_one_hot() {
            return Err(NpnError::param("noisy_label", "must be one-hot"));
        }
        Ok(CandidateHistogram {
            counts: noisy_label.entries().to_vec(),
            epochs_observed: 0,
        })
    }

    pub fn from_class(class: usize, classes: usize) -> Result<Self> {
        Self::new(&LabelVector::one_hot(class, classes)?)
    }

    /// Restores a histogram from raw parts, e.g. when reading a checkpoint.
    pub fn from_parts(counts: Vec<u32>, epochs_observed: u32) -> Result<Self> {
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        if total != 1 + 2 * epochs_observed as u64 {
            return Err(NpnError::InvalidState(format!(
                "histogram sums to {total} after {epochs_observed} epochs"
            )));
        }
        Ok(CandidateHistogram {
            counts,
            epochs_observed,
        })
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn epochs_observed(&self) -> u32 {
        self.epochs_observed
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn accumulate(&mut self, candidate: &CandidateSet) -> Result<()> {
        if candidate.counts.len() != self.counts.len() {
            return Err(NpnError::dim(
                "histogram accumulation",
                self.counts.len(),
                candidate.counts.len(),
            ));
        }
        for (h, &c) in self.counts.iter_mut().zip(&candidate.counts) {
            *h += c;
        }
        self.epochs_observed += 1;
        Ok(())
    }

    pub fn disambiguate(&self) -> Result<Disambiguation> {
        disambiguate_counts(&self.counts)
    }
}

/// Functional form of [`CandidateHistogram::accumulate`].
pub fn accumulate(
    hist: &CandidateHistogram,
    candidate: &CandidateSet,
) -> Result<CandidateHistogram> {
    let mut next = hist.clone();
    next.accumulate(candidate)?;
    Ok(next)
}

/// Hard and soft training targets derived from a histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Disambiguation {
    pub hard_label: usize,
    /// Share of the histogram mass held by `hard_label`, in `(0, 1]`.
    pub hard_weight: f64,
    /// The histogram normalized to a distribution.
    pub soft_label: Vec<f64>,
}

impl Disambiguation {
    pub fn classes(&self) -> usize {
        self.soft_label.len()
    }
}

pub fn disambiguate(hist: &CandidateHistogram) -> Result<Disambiguation> {
    hist.disambiguate()
}

/// Disambiguation of arbitrary non-negative counts.
pub fn disambiguate_counts(counts: &[u32]) -> Result<Disambiguation> {
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    if total == 0 {
        return Err(NpnError::InvalidState(
            "cannot disambiguate an all-zero histogram".into(),
        ));
    }
    let hard_label = argmax(counts);
    let total = total as f64;
    Ok(Disambiguation {
        hard_label,
        hard_weight: counts[hard_label] as f64 / total,
        soft_label: counts.iter().map(|&c| c as f64 / total).collect(),
    })
}

/// Histograms for every sample of a training split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistogramStore {
    classes: usize,
    histograms: Vec<CandidateHistogram>,
}

impl HistogramStore {
    pub fn from_labels(noisy_labels: &[u16], classes: usize) -> Result<Self> {
        let histograms = noisy_labels
            .iter()
            .map(|&y| CandidateHistogram::from_class(y as usize, classes))
            .collect::<Result<Vec<_>>>()?;
        Ok(HistogramStore {
            classes,
            histograms,
        })
    }

    pub fn from_histograms(classes: usize, histograms: Vec<CandidateHistogram>) -> Result<Self> {
        if let Some(h) = histograms.iter().find(|h| h.counts.len() != classes) {
            return Err(NpnError::dim("histogram store", classes, h.counts.len()));
        }
        Ok(HistogramStore {
            classes,
            histograms,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.histograms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.histograms.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&CandidateHistogram> {
        self.histograms.get(index)
    }

    pub fn histograms(&self) -> &[CandidateHistogram] {
        &self.histograms
    }

    pub fn accumulate(&mut self, index: usize, candidate: &CandidateSet) -> Result<()> {
        let len = self.histograms.len();
        self.histograms
            .get_mut(index)
            .ok_or_else(|| NpnError::param("index", format!("sample {index} outside [0, {len})")))?
            .accumulate(candidate)
    }

    pub fn disambiguate(&self, index: usize) -> Result<Disambiguation> {
        self.histograms
            .get(index)
            .ok_or_else(|| NpnError::param("index", format!("sample {index} out of range")))?
            .disambiguate()
    }

    /// Counts laid out class-major: all samples' class 0, then class 1, ...
    pub fn class_major_counts(&self) -> Vec<u32> {
        let n = self.histograms.len();
        let mut out = vec![0u32; n * self.classes];
        for (i, h) in self.histograms.iter().enumerate() {
            for (c, &v) in h.counts.iter().enumerate() {
                out[c * n + i] = v;
            }
        }
        out
    }

    pub fn from_class_major(
        classes: usize,
        epochs_observed: &[u32],
        counts: &[u32],
    ) -> Result<Self> {
        let n = epochs_observed.len();
        if counts.len() != n * classes {
            return Err(NpnError::dim("class-major histogram counts", n * classes, counts.len()));
        }
        let histograms = (0..n)
            .map(|i| {
                let row = (0..classes).map(|c| counts[c * n + i]).collect();
                CandidateHistogram::from_parts(row, epochs_observed[i])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(HistogramStore {
            classes,
            histograms,
        })
    }
}
