use dha_nn::Scalar;

use super::encoder::euclidean;
use super::kmeans::{kmeans, KMeansConfig, KMeansFit};
use crate::error::{invalid, Result};

/// Mean silhouette coefficient with Euclidean distance.
///
/// `labels` are 0-based in `0..k`; every cluster must be non-empty and
/// `k >= 2`. Points in singleton clusters score 0, as do points whose
/// intra- and nearest-cluster distances are both 0.
pub fn silhouette_score<S: Scalar>(points: &[Vec<S>], labels: &[usize], k: usize) -> Result<S> {
    if k < 2 {
        return invalid("silhouette is undefined for fewer than 2 clusters");
    }
    if points.len() != labels.len() {
        return invalid("one label per point required");
    }
    let mut sizes = vec![0usize; k];
    for &l in labels {
        if l >= k {
            return invalid(format!("label {l} outside 0..{k}"));
        }
        sizes[l] += 1;
    }
    if let Some(j) = sizes.iter().position(|&s| s == 0) {
        return invalid(format!("cluster {j} is empty"));
    }
    let n = points.len();
    let mut total = S::zero();
    let mut sums = vec![S::zero(); k];
    for i in 0..n {
        if sizes[labels[i]] == 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = S::zero());
        for j in 0..n {
            if i != j {
                sums[labels[j]] += euclidean(&points[i], &points[j]);
            }
        }
        let own = labels[i];
        let a = sums[own] / S::from_usize(sizes[own] - 1).unwrap();
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / S::from_usize(sizes[c]).unwrap())
            .fold(S::infinity(), S::min);
        let denom = a.max(b);
        if denom > S::zero() {
            total += (b - a) / denom;
        }
    }
    Ok(total / S::from_usize(n).unwrap())
}

#[derive(Clone, Debug)]
pub struct KSelection<S> {
    pub best_k: usize,
    pub scores: Vec<(usize, S)>,
    pub fits: Vec<KMeansFit<S>>,
}

/// Silhouette-maximizing K over `ks`; ties go to the smaller K.
pub fn select_k<S: Scalar>(points: &[Vec<S>], ks: &[usize], seed: u64, config: &KMeansConfig) -> Result<KSelection<S>> {
    if ks.is_empty() {
        return invalid("empty K range");
    }
    if let Some(&k) = ks.iter().find(|&&k| k < 2 || k + 1 > points.len()) {
        return invalid(format!("K = {k} outside [2, N - 1] for N = {}", points.len()));
    }
    let mut sorted = ks.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut scores = Vec::new();
    let mut fits = Vec::new();
    for &k in &sorted {
        let fit = kmeans(points, k, seed, config)?;
        scores.push((k, silhouette_score(points, &fit.labels, k)?));
        fits.push(fit);
    }
    let mut best = 0;
    for (i, &(_, s)) in scores.iter().enumerate() {
        if s > scores[best].1 {
            best = i;
        }
    }
    Ok(KSelection {
        best_k: scores[best].0,
        scores,
        fits,
    })
}
