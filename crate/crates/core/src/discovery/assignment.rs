use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use dha_nn::Scalar;

use super::encoder::StyleCode;
use super::kmeans::KMeansFit;
use crate::data::{Manifest, Split};
use crate::error::{invalid, DhaError, IoContext, Result};

/// Hard partition of the compound target into `k` latent domains.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainAssignment<S> {
    /// image_id → domain in `1..=k`.
    pub domains: BTreeMap<String, usize>,
    pub centroids: Vec<StyleCode<S>>,
    pub k: usize,
}

impl<S: Scalar> DomainAssignment<S> {
    pub fn new(domains: BTreeMap<String, usize>, centroids: Vec<StyleCode<S>>) -> Result<Self> {
        let k = centroids.len();
        if k == 0 {
            return invalid("assignment needs at least one domain");
        }
        let mut seen = vec![false; k];
        for (id, &j) in &domains {
            if j == 0 || j > k {
                return invalid(format!("{id}: domain {j} outside 1..={k}"));
            }
            seen[j - 1] = true;
        }
        if let Some(j) = seen.iter().position(|&s| !s) {
            return invalid(format!("domain {} has no images", j + 1));
        }
        Ok(Self { domains, centroids, k })
    }

    /// Build from a k-means fit over codes listed in `ids` order.
    pub fn from_fit(ids: &[String], fit: &KMeansFit<S>) -> Result<Self> {
        if ids.len() != fit.labels.len() {
            return invalid("one id per clustered code required");
        }
        let domains = ids.iter().cloned().zip(fit.labels.iter().map(|&l| l + 1)).collect();
        Self::new(domains, fit.centroids.iter().cloned().map(StyleCode).collect())
    }

    pub fn domain_of(&self, image_id: &str) -> Option<usize> {
        self.domains.get(image_id).copied()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &j in self.domains.values() {
            sizes[j - 1] += 1;
        }
        sizes
    }

    pub fn members(&self, domain: usize) -> Vec<&str> {
        self.domains.iter().filter(|(_, &j)| j == domain).map(|(id, _)| id.as_str()).collect()
    }

    pub fn assignment_text(&self) -> String {
        let mut out = String::new();
        for (id, j) in &self.domains {
            let _ = writeln!(out, "{id}\t{j}");
        }
        out
    }

    pub fn centroid_text(&self) -> String {
        let mut out = String::new();
        for c in &self.centroids {
            let line: Vec<String> = c.0.iter().map(|v| v.to_f64().unwrap().to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn save(&self, assignment_path: &Path, centroid_path: &Path) -> Result<()> {
        fs::write(assignment_path, self.assignment_text()).at(assignment_path)?;
        fs::write(centroid_path, self.centroid_text()).at(centroid_path)
    }

    pub fn load(assignment_path: &Path, centroid_path: &Path) -> Result<Self> {
        let domains = read_assignment(assignment_path)?;
        let centroids = read_centroids(centroid_path)?;
        Self::new(domains, centroids)
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> DhaError {
    DhaError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn read_assignment(path: &Path) -> Result<BTreeMap<String, usize>> {
    if !path.exists() {
        return Err(DhaError::Missing(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).at(path)?;
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let (id, j) = raw
            .split_once('\t')
            .ok_or_else(|| parse_err(path, i + 1, "expected image_id<TAB>domain"))?;
        let j: usize = j.trim().parse().map_err(|_| parse_err(path, i + 1, format!("bad domain `{j}`")))?;
        if out.insert(id.to_string(), j).is_some() {
            return Err(parse_err(path, i + 1, format!("duplicate image_id {id}")));
        }
    }
    Ok(out)
}

pub fn read_centroids<S: Scalar>(path: &Path) -> Result<Vec<StyleCode<S>>> {
    if !path.exists() {
        return Err(DhaError::Missing(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).at(path)?;
    let mut out: Vec<StyleCode<S>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let values = raw
            .split_whitespace()
            .map(|t| t.parse::<f64>().map(S::lit).map_err(|_| parse_err(path, i + 1, format!("bad value `{t}`"))))
            .collect::<Result<Vec<S>>>()?;
        if let Some(first) = out.first() {
            if first.len() != values.len() {
                return Err(parse_err(path, i + 1, "centroids of different lengths"));
            }
        }
        out.push(StyleCode(values));
    }
    Ok(out)
}

/// Split the compound entries of `manifest` into one manifest per domain.
pub fn partition_manifest<S: Scalar>(manifest: &Manifest, assignment: &DomainAssignment<S>) -> Result<Vec<Manifest>> {
    let compound = manifest.split(Split::Compound);
    let compound_ids: HashSet<&str> = compound.entries.iter().map(|e| e.image_id.as_str()).collect();
    if let Some(id) = assignment.domains.keys().find(|id| !compound_ids.contains(id.as_str())) {
        return invalid(format!("assigned image {id} is not in the compound split"));
    }
    let mut parts = vec![Vec::new(); assignment.k];
    for e in compound.entries {
        let j = assignment
            .domain_of(&e.image_id)
            .ok_or_else(|| DhaError::Invalid(format!("compound image {} has no domain", e.image_id)))?;
        parts[j - 1].push(e);
    }
    parts.into_iter().map(Manifest::new).collect()
}
