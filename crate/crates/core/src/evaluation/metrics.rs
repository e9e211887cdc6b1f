use std::collections::HashMap;
use std::hash::Hash;

use crate::data::SegMask;
use crate::error::{invalid, Result};

/// C×C pixel counts, rows = ground truth, columns = prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add_labels(&mut self, truth: &[u8], pred: &[u8]) -> Result<()> {
        if truth.len() != pred.len() {
            return invalid(format!("{} truth pixels vs {} predicted", truth.len(), pred.len()));
        }
        let c = self.classes;
        for (&t, &p) in truth.iter().zip(pred) {
            let (t, p) = (t as usize, p as usize);
            if t >= c || p >= c {
                return invalid(format!("label {} outside {c} classes", t.max(p)));
            }
            self.counts[t * c + p] += 1;
        }
        Ok(())
    }

    pub fn add(&mut self, truth: &SegMask, pred: &SegMask) -> Result<()> {
        if (truth.height(), truth.width()) != (pred.height(), pred.width()) {
            return invalid("prediction and ground truth differ in size");
        }
        self.add_labels(truth.labels(), pred.labels())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return invalid("merging confusion matrices of different class counts");
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// IoU per class; `None` for classes absent from both truth and prediction.
    pub fn class_iou(&self) -> Vec<Option<f64>> {
        let c = self.classes;
        (0..c)
            .map(|k| {
                let tp = self.get(k, k);
                let fn_: u64 = (0..c).map(|p| self.get(k, p)).sum::<u64>() - tp;
                let fp: u64 = (0..c).map(|t| self.get(t, k)).sum::<u64>() - tp;
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    pub fn miou(&self) -> Result<f64> {
        let present: Vec<f64> = self.class_iou().into_iter().flatten().collect();
        if present.is_empty() {
            return invalid("no pixels evaluated");
        }
        Ok(present.iter().sum::<f64>() / present.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiouResult {
    pub class_iou: Vec<Option<f64>>,
    pub miou: f64,
}

/// Dataset-level mIoU: confusion accumulated over all pairs, then divided.
pub fn compute_miou(predictions: &[SegMask], truths: &[SegMask], classes: usize) -> Result<MiouResult> {
    if predictions.is_empty() {
        return invalid("empty evaluation set");
    }
    if predictions.len() != truths.len() {
        return invalid("one prediction per ground truth required");
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (p, t) in predictions.iter().zip(truths) {
        cm.add(t, p)?;
    }
    Ok(MiouResult {
        class_iou: cm.class_iou(),
        miou: cm.miou()?,
    })
}

/// Per-style mIoU with its image count.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleScore {
    pub style: String,
    pub miou: f64,
    pub images: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainMetrics {
    pub compound: Vec<StyleScore>,
    pub open: Vec<StyleScore>,
    /// Unweighted mean over compound styles.
    pub c: f64,
    /// Unweighted mean over compound and open styles.
    pub c_plus_o: f64,
    pub c_weighted: f64,
    pub c_plus_o_weighted: f64,
}

fn mean(xs: &[&StyleScore]) -> f64 {
    xs.iter().map(|s| s.miou).sum::<f64>() / xs.len() as f64
}

fn weighted(xs: &[&StyleScore]) -> f64 {
    let n: usize = xs.iter().map(|s| s.images).sum();
    if n == 0 {
        return mean(xs);
    }
    xs.iter().map(|s| s.miou * s.images as f64).sum::<f64>() / n as f64
}

pub fn aggregate_domains(compound: Vec<StyleScore>, open: Vec<StyleScore>) -> Result<DomainMetrics> {
    if compound.is_empty() {
        return invalid("no compound style scores");
    }
    let c: Vec<&StyleScore> = compound.iter().collect();
    let all: Vec<&StyleScore> = compound.iter().chain(&open).collect();
    Ok(DomainMetrics {
        c: mean(&c),
        c_plus_o: mean(&all),
        c_weighted: weighted(&c),
        c_plus_o_weighted: weighted(&all),
        compound,
        open,
    })
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index<A: Eq + Hash, B: Eq + Hash>(a: &[A], b: &[B]) -> Result<f64> {
    if a.is_empty() {
        return invalid("ARI of an empty labeling");
    }
    if a.len() != b.len() {
        return invalid("labelings of different lengths");
    }
    let choose2 = |n: u64| (n * n.saturating_sub(1) / 2) as f64;
    let mut joint: HashMap<(&A, &B), u64> = HashMap::new();
    let mut rows: HashMap<&A, u64> = HashMap::new();
    let mut cols: HashMap<&B, u64> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = joint.values().map(|&n| choose2(n)).sum();
    let sa: f64 = rows.values().map(|&n| choose2(n)).sum();
    let sb: f64 = cols.values().map(|&n| choose2(n)).sum();
    let total = choose2(a.len() as u64);
    let expected = if total > 0.0 { sa * sb / total } else { 0.0 };
    let max = 0.5 * (sa + sb);
    if max == expected {
        // both labelings trivial (one cluster, or all singletons): identical
        return Ok(if sa == sb { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}
