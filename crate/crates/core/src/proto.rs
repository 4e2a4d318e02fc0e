//! Prototype mechanics: centroids, similarity, prediction and the episodic
//! softmax loss with its gradient.
//!
//! Similarity is the negated squared Euclidean distance, so the predicted
//! class is the argmax of similarity (the nearest centroid).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::all_finite;

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub centroids: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
}

impl PrototypeSet {
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }
}

/// Mean representation of each class's support shots.
pub fn compute_prototypes<V: AsRef<[f64]>>(support: &[Vec<V>]) -> Result<PrototypeSet> {
    let mut centroids = Vec::with_capacity(support.len());
    let mut counts = Vec::with_capacity(support.len());
    for (c, shots) in support.iter().enumerate() {
        let first = shots.first().ok_or(Error::EmptyClass(c))?.as_ref();
        let mut sum = vec![0.0; first.len()];
        for s in shots {
            let s = s.as_ref();
            if s.len() != sum.len() {
                return Err(Error::DimensionMismatch { what: "support representation".into(), expected: sum.len(), found: s.len() });
            }
            for (acc, x) in sum.iter_mut().zip(s) {
                *acc += x;
            }
        }
        let k = shots.len() as f64;
        sum.iter_mut().for_each(|x| *x /= k);
        centroids.push(sum);
        counts.push(shots.len());
    }
    Ok(PrototypeSet { centroids, counts })
}

/// `-‖query - proto‖²`.
pub fn similarity(query: &[f64], proto: &[f64]) -> f64 {
    -query.iter().zip(proto).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

/// Index of the most similar prototype; ties go to the lowest index.
pub fn predict(query: &[f64], protos: &PrototypeSet) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in protos.centroids.iter().enumerate() {
        let s = similarity(query, c);
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

/// Softmax over the similarities of `query` to every prototype.
pub fn class_probabilities(query: &[f64], protos: &PrototypeSet) -> Vec<f64> {
    let logits: Vec<f64> = protos.centroids.iter().map(|c| similarity(query, c)).collect();
    softmax(&logits)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| libm::exp(l - max)).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLossResult {
    /// Mean over query shots of `-log p(true class)`.
    pub loss: f64,
    pub per_query_loss: Vec<f64>,
    pub predictions: Vec<usize>,
    /// `∂loss/∂query_rep`, aligned with the query input.
    pub query_grads: Vec<Vec<f64>>,
    /// `∂loss/∂support_rep`, per class per shot.
    pub support_grads: Vec<Vec<Vec<f64>>>,
}

/// Prototypical loss for one episode.
///
/// `queries` holds `(representation, class)` pairs; `support[c]` holds the
/// representations of class `c`. Gradients reach the support shots through
/// the centroid mean.
pub fn episode_loss<Q: AsRef<[f64]>, S: AsRef<[f64]>>(
    queries: &[(Q, usize)],
    support: &[Vec<S>],
) -> Result<EpisodeLossResult> {
    if queries.is_empty() {
        return Err(Error::Empty("query set"));
    }
    for (q, _) in queries {
        if !all_finite(q.as_ref()) {
            return Err(Error::NonFinite("query representation"));
        }
    }
    for s in support.iter().flatten() {
        if !all_finite(s.as_ref()) {
            return Err(Error::NonFinite("support representation"));
        }
    }
    let protos = compute_prototypes(support)?;
    let n_classes = protos.len();
    let dim = protos.centroids[0].len();
    let inv_q = 1.0 / queries.len() as f64;

    let mut loss = 0.0;
    let mut per_query_loss = Vec::with_capacity(queries.len());
    let mut predictions = Vec::with_capacity(queries.len());
    let mut query_grads = Vec::with_capacity(queries.len());
    let mut centroid_grads = vec![vec![0.0; dim]; n_classes];

    for (q, label) in queries {
        let q = q.as_ref();
        if *label >= n_classes {
            return Err(Error::UnknownClass { label: *label, classes: n_classes });
        }
        if q.len() != dim {
            return Err(Error::DimensionMismatch { what: "query representation".into(), expected: dim, found: q.len() });
        }
        let logits: Vec<f64> = protos.centroids.iter().map(|c| similarity(q, c)).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|l| libm::exp(l - max)).sum();
        let lse = max + libm::log(sum_exp);
        let l = lse - logits[*label];
        per_query_loss.push(l);
        loss += l;
        predictions.push(predict(q, &protos).unwrap_or(0));

        // ∂l/∂logit_c = p_c - [c = y]; ∂logit_c/∂q = -2(q - c), ∂logit_c/∂c = 2(q - c)
        let mut gq = vec![0.0; dim];
        for (c, centroid) in protos.centroids.iter().enumerate() {
            let p = libm::exp(logits[c] - lse);
            let coeff = (p - if c == *label { 1.0 } else { 0.0 }) * inv_q;
            if coeff == 0.0 {
                continue;
            }
            for ((gqi, gci), (qi, ci)) in gq.iter_mut().zip(centroid_grads[c].iter_mut()).zip(q.iter().zip(centroid)) {
                let diff = qi - ci;
                *gqi -= 2.0 * coeff * diff;
                *gci += 2.0 * coeff * diff;
            }
        }
        query_grads.push(gq);
    }
    loss *= inv_q;
    if !loss.is_finite() {
        return Err(Error::NonFinite("episode loss"));
    }

    let support_grads = support
        .iter()
        .zip(&centroid_grads)
        .map(|(shots, gc)| {
            let k = shots.len() as f64;
            let g: Vec<f64> = gc.iter().map(|x| x / k).collect();
            vec![g; shots.len()]
        })
        .collect();

    Ok(EpisodeLossResult { loss, per_query_loss, predictions, query_grads, support_grads })
}
