//! Loss terms over softmax outputs, each returning its mean value over the
//! batch and the analytic gradient with respect to the pre-softmax logits.

use ndarray::{s, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{NpnError, Result};
use crate::label_space::{argmax, ComplementarySet, Disambiguation};

/// Clipping bound applied inside every logarithm.
pub const PROB_EPS: f64 = 1e-12;

const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// A batch of probability rows (`batch × classes`).
#[derive(Debug, Clone, PartialEq)]
pub struct Probabilities(Array2<f64>);

impl Probabilities {
    /// Row-wise softmax with max subtraction.
    pub fn from_logits(logits: ArrayView2<'_, f64>) -> Self {
        let mut out = logits.to_owned();
        for mut row in out.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        Probabilities(out)
    }

    /// Wraps rows that are already distributions.
    pub fn try_new(rows: Array2<f64>) -> Result<Self> {
        if rows.ncols() < 2 {
            return Err(NpnError::param("probs", "need at least 2 classes"));
        }
        for row in rows.rows() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(NpnError::param("probs", "entries must lie in [0, 1]"));
            }
            if (row.sum() - 1.0).abs() > PROB_SUM_TOLERANCE {
                return Err(NpnError::param("probs", "rows must sum to 1"));
            }
        }
        Ok(Probabilities(rows))
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let classes = rows.first().map_or(0, |r| r.len());
        let mut flat = Vec::with_capacity(rows.len() * classes);
        for r in rows {
            if r.len() != classes {
                return Err(NpnError::dim("probability rows", classes, r.len()));
            }
            flat.extend_from_slice(r);
        }
        let arr = Array2::from_shape_vec((rows.len(), classes), flat)
            .map_err(|e| NpnError::param("probs", e.to_string()))?;
        Self::try_new(arr)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn batch(&self) -> usize {
        self.0.nrows()
    }

    pub fn classes(&self) -> usize {
        self.0.ncols()
    }

    /// Top-1 class per row, lowest index on ties.
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.0
            .rows()
            .into_iter()
            .map(|r| argmax(r.as_slice().expect("standard layout")))
            .collect()
    }

    /// Rows `start..end` as a new batch.
    pub fn slice_rows(&self, start: usize, end: usize) -> Probabilities {
        Probabilities(self.0.slice(s![start..end, ..]).to_owned())
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad_logits: Array2<f64>,
}

impl LossOutput {
    pub fn zeros(batch: usize, classes: usize) -> Self {
        LossOutput {
            value: 0.0,
            grad_logits: Array2::zeros((batch, classes)),
        }
    }

    /// Places this batch's gradient at rows `offset..offset + batch` of a
    /// larger zero gradient, so that losses over different views of a
    /// stacked forward pass can be combined.
    pub fn embed(&self, total_rows: usize, offset: usize) -> Result<LossOutput> {
        let rows = self.grad_logits.nrows();
        if offset + rows > total_rows {
            return Err(NpnError::dim("embedded loss rows", total_rows, offset + rows));
        }
        let mut grad = Array2::zeros((total_rows, self.grad_logits.ncols()));
        grad.slice_mut(s![offset..offset + rows, ..])
            .assign(&self.grad_logits);
        Ok(LossOutput {
            value: self.value,
            grad_logits: grad,
        })
    }
}

/// Weights of the negative-learning and consistency terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(NpnError::param("alpha", "must be finite and >= 0"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(NpnError::param("beta", "must be finite and >= 0"));
        }
        Ok(())
    }
}

fn clip(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn check_batch(context: &'static str, probs: &Probabilities, found: usize) -> Result<()> {
    if probs.batch() != found {
        return Err(NpnError::dim(context, probs.batch(), found));
    }
    Ok(())
}

fn check_class(context: &'static str, class: usize, classes: usize) -> Result<()> {
    if class >= classes {
        return Err(NpnError::dim(context, classes, class + 1));
    }
    Ok(())
}

/// `-w log p_k` per row, with gradient `w (p - e_k)`, averaged over the batch.
fn weighted_class_ce(
    probs: &Probabilities,
    targets: impl Iterator<Item = (usize, f64)>,
) -> Result<LossOutput> {
    let batch = probs.batch();
    let classes = probs.classes();
    let scale = 1.0 / batch as f64;
    let mut grad = probs.view().to_owned();
    let mut total = 0.0;
    for (i, (k, w)) in targets.enumerate() {
        check_class("target class", k, classes)?;
        total += -w * clip(probs.0[[i, k]]).ln();
        let mut row = grad.row_mut(i);
        row[k] -= 1.0;
        row.mapv_inplace(|g| g * w * scale);
    }
    Ok(LossOutput {
        value: total * scale,
        grad_logits: grad,
    })
}

/// Cross-entropy against one-hot labels given as class indices.
pub fn ce_loss(probs: &Probabilities, labels: &[usize]) -> Result<LossOutput> {
    check_batch("ce labels", probs, labels.len())?;
    weighted_class_ce(probs, labels.iter().map(|&k| (k, 1.0)))
}

/// Cross-entropy on the hard disambiguated label, scaled by its weight.
pub fn pll_hard_loss(probs: &Probabilities, disamb: &[Disambiguation]) -> Result<LossOutput> {
    check_batch("pll targets", probs, disamb.len())?;
    weighted_class_ce(probs, disamb.iter().map(|d| (d.hard_label, d.hard_weight)))
}

/// Cross-entropy against the normalized histogram.
pub fn pll_soft_loss(probs: &Probabilities, disamb: &[Disambiguation]) -> Result<LossOutput> {
    check_batch("pll targets", probs, disamb.len())?;
    let batch = probs.batch();
    let classes = probs.classes();
    let scale = 1.0 / batch as f64;
    let mut grad = probs.view().to_owned();
    let mut total = 0.0;
    for (i, d) in disamb.iter().enumerate() {
        if d.soft_label.len() != classes {
            return Err(NpnError::dim("soft label", classes, d.soft_label.len()));
        }
        let mut row = grad.row_mut(i);
        for (c, &t) in d.soft_label.iter().enumerate() {
            if t > 0.0 {
                total += -t * clip(probs.0[[i, c]]).ln();
            }
            row[c] = (row[c] - t) * scale;
        }
    }
    Ok(LossOutput {
        value: total * scale,
        grad_logits: grad,
    })
}

/// Negative learning: `-sum_{c in complement} log(1 - p_c)`, batch mean.
///
/// Through the softmax, `d/dz_j = [j in comp] p_j/(1-p_j) - p_j * sum_c p_c/(1-p_c)`.
/// Terms whose `1 - p_c` falls outside the clipping range are constant and
/// contribute no gradient.
pub fn nl_loss(probs: &Probabilities, comps: &[ComplementarySet]) -> Result<LossOutput> {
    check_batch("complementary sets", probs, comps.len())?;
    let batch = probs.batch();
    let classes = probs.classes();
    let scale = 1.0 / batch as f64;
    let mut grad = Array2::zeros((batch, classes));
    let mut total = 0.0;
    for (i, comp) in comps.iter().enumerate() {
        if comp.classes() != classes {
            return Err(NpnError::dim("complementary set", classes, comp.classes()));
        }
        let p = probs.row(i);
        let mut ratio = vec![0.0; classes];
        let mut ratio_sum = 0.0;
        for c in comp.members() {
            let q = 1.0 - p[c];
            total += -clip(q).ln();
            if (PROB_EPS..=1.0 - PROB_EPS).contains(&q) {
                ratio[c] = p[c] / q;
                ratio_sum += ratio[c];
            }
        }
        let mut row = grad.row_mut(i);
        for j in 0..classes {
            row[j] = (ratio[j] - p[j] * ratio_sum) * scale;
        }
    }
    Ok(LossOutput {
        value: total * scale,
        grad_logits: grad,
    })
}

/// Consistency term: strong-view cross-entropy against the weak view's
/// pseudo-label. The pseudo-labels are constants.
pub fn reg_loss(strong_probs: &Probabilities, weak_pseudo: &[usize]) -> Result<LossOutput> {
    check_batch("pseudo-labels", strong_probs, weak_pseudo.len())?;
    weighted_class_ce(strong_probs, weak_pseudo.iter().map(|&k| (k, 1.0)))
}

/// `pll + alpha * nl + beta * reg`, for values and gradients alike.
pub fn combined_loss(
    pll: &LossOutput,
    nl: &LossOutput,
    reg: &LossOutput,
    weights: LossWeights,
) -> Result<LossOutput> {
    let shape = pll.grad_logits.dim();
    for other in [nl, reg] {
        if other.grad_logits.dim() != shape {
            let (rows, cols) = other.grad_logits.dim();
            return Err(NpnError::dim(
                "combined loss gradient",
                shape.0 * shape.1,
                rows * cols,
            ));
        }
    }
    let mut grad = pll.grad_logits.clone();
    grad.scaled_add(weights.alpha, &nl.grad_logits);
    grad.scaled_add(weights.beta, &reg.grad_logits);
    Ok(LossOutput {
        value: pll.value + weights.alpha * nl.value + weights.beta * reg.value,
        grad_logits: grad,
    })
}
