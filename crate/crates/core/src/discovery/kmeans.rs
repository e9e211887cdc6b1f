//! Lloyd's k-means with k-means++ seeding, random restarts and a
//! single-point transfer refinement at each Lloyd fixed point.

use dha_nn::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KMeansConfig {
    pub max_iter: usize,
    pub restarts: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iter: 300,
            restarts: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansFit<S> {
    /// 0-based cluster index per point.
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<S>>,
    pub inertia: S,
    pub iterations: usize,
    /// Inertia after each assignment step of the winning restart.
    pub inertia_trace: Vec<S>,
}

fn sq_dist<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn nearest<S: Scalar>(p: &[S], centroids: &[Vec<S>]) -> (usize, S) {
    let mut best = (0, S::infinity());
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

pub fn inertia<S: Scalar>(points: &[Vec<S>], labels: &[usize], centroids: &[Vec<S>]) -> S {
    points.iter().zip(labels).map(|(p, &l)| sq_dist(p, &centroids[l])).sum()
}

/// Greedy k-means++: each new center is the best of a few D²-weighted
/// candidates by resulting potential.
fn plus_plus_init<S: Scalar>(points: &[Vec<S>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<S>> {
    let n = points.len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let dists = |c: &[S]| -> Vec<f64> { points.iter().map(|p| sq_dist(p, c).to_f64().unwrap()).collect() };
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2 = dists(&centroids[0]);
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let idx = if total > 0.0 {
                let mut r = rng.random_range(0.0..total);
                let mut chosen = n - 1;
                for (i, &d) in d2.iter().enumerate() {
                    if r < d {
                        chosen = i;
                        break;
                    }
                    r -= d;
                }
                chosen
            } else {
                rng.random_range(0..n)
            };
            let cand: Vec<f64> = d2.iter().zip(dists(&points[idx])).map(|(&a, b)| a.min(b)).collect();
            let potential: f64 = cand.iter().sum();
            if best.as_ref().is_none_or(|b| potential < b.0) {
                best = Some((potential, idx, cand));
            }
        }
        let (_, idx, cand) = best.expect("at least one trial");
        centroids.push(points[idx].clone());
        d2 = cand;
    }
    centroids
}

/// Give every empty cluster the point currently farthest from its centroid,
/// taken from a cluster that keeps at least one member.
fn repair_empty<S: Scalar>(points: &[Vec<S>], labels: &mut [usize], centroids: &mut [Vec<S>]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return };
        let far = (0..points.len())
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&a, &b| {
                let da = sq_dist(&points[a], &centroids[labels[a]]);
                let db = sq_dist(&points[b], &centroids[labels[b]]);
                da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal).then(b.cmp(&a))
            })
            .expect("n >= k leaves a donor cluster");
        labels[far] = empty;
        centroids[empty] = points[far].clone();
    }
}

fn update_centroids<S: Scalar>(points: &[Vec<S>], labels: &[usize], centroids: &mut [Vec<S>]) {
    let dim = points[0].len();
    let mut sums = vec![vec![S::zero(); dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, &v) in sums[l].iter_mut().zip(p) {
            *s += v;
        }
    }
    for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
        if n > 0 {
            let nn = S::from_usize(n).unwrap();
            *c = s.into_iter().map(|v| v / nn).collect();
        }
    }
}

/// One pass of single-point transfers: move a point to another cluster when
/// that strictly lowers inertia, updating both centroids at once. Returns
/// whether anything moved.
fn transfer_pass<S: Scalar>(points: &[Vec<S>], labels: &mut [usize], centroids: &mut [Vec<S>]) -> bool {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    let mut moved = false;
    for (i, p) in points.iter().enumerate() {
        let from = labels[i];
        if counts[from] < 2 {
            continue;
        }
        let nf = S::from_usize(counts[from]).unwrap();
        let removal = nf / (nf - S::one()) * sq_dist(p, &centroids[from]);
        let mut best: Option<(usize, S)> = None;
        for to in (0..k).filter(|&t| t != from) {
            let nt = S::from_usize(counts[to]).unwrap();
            let gain = removal - nt / (nt + S::one()) * sq_dist(p, &centroids[to]);
            // relative margin keeps rounding noise from cycling points
            if gain > S::lit(1e-12) * (S::one() + removal) && best.is_none_or(|(_, g)| gain > g) {
                best = Some((to, gain));
            }
        }
        if let Some((to, _)) = best {
            let nt = S::from_usize(counts[to]).unwrap();
            for (d, &x) in p.iter().enumerate() {
                centroids[from][d] = (centroids[from][d] * nf - x) / (nf - S::one());
                centroids[to][d] = (centroids[to][d] * nt + x) / (nt + S::one());
            }
            counts[from] -= 1;
            counts[to] += 1;
            labels[i] = to;
            moved = true;
        }
    }
    moved
}

fn lloyd<S: Scalar>(points: &[Vec<S>], mut centroids: Vec<Vec<S>>, max_iter: usize) -> KMeansFit<S> {
    let mut labels: Vec<usize> = vec![usize::MAX; points.len()];
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter {
        let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        repair_empty(points, &mut next, &mut centroids);
        let changed = next != labels;
        labels = next;
        let current = inertia(points, &labels, &centroids);
        if let Some(&prev) = trace.last() {
            let slack = S::lit(1e-9) * (S::one() + prev);
            debug_assert!(current <= prev + slack, "inertia increased: {prev} -> {current}");
        }
        trace.push(current);
        iterations += 1;
        if !changed {
            // converged; escape the local optimum by single-point transfers
            if !transfer_pass(points, &mut labels, &mut centroids) {
                break;
            }
            update_centroids(points, &labels, &mut centroids);
            continue;
        }
        update_centroids(points, &labels, &mut centroids);
    }
    let inertia = inertia(points, &labels, &centroids);
    KMeansFit {
        labels,
        centroids,
        inertia,
        iterations,
        inertia_trace: trace,
    }
}

/// Best of `config.restarts` k-means++/Lloyd runs by inertia.
pub fn kmeans<S: Scalar>(points: &[Vec<S>], k: usize, seed: u64, config: &KMeansConfig) -> Result<KMeansFit<S>> {
    if k == 0 {
        return invalid("k must be at least 1");
    }
    if points.len() < k {
        return invalid(format!("k = {k} exceeds the {} points", points.len()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return invalid("points of different dimension");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansFit<S>> = None;
    for _ in 0..config.restarts.max(1) {
        let init = plus_plus_init(points, k, &mut rng);
        let fit = lloyd(points, init, config.max_iter.max(1));
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}
