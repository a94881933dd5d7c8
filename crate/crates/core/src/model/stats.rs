use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::corpus::{FeatureId, SparseDocMatrix};
use crate::error::{Error, Result};

/// A set of feature ids, iterated in increasing order.
pub type FeatureSet = BTreeSet<FeatureId>;

/// Additive sufficient statistics of a cluster: per-term token counts, their
/// total, and the number of member documents.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClusterStats {
    term_counts: BTreeMap<FeatureId, u64>,
    total_tokens: u64,
    doc_count: u64,
}

impl ClusterStats {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Statistics of a single document row.
    pub fn from_row(row: &[(FeatureId, u32)]) -> Self {
        let mut s = Self::from_counts(row.iter().map(|&(f, c)| (f, c as u64)), 0);
        s.doc_count = 1;
        s
    }

    /// Builds stats from (feature, count) pairs; duplicates are summed and
    /// zero counts dropped.
    pub fn from_counts<I>(counts: I, doc_count: u64) -> Self
    where
        I: IntoIterator<Item = (FeatureId, u64)>,
    {
        let mut term_counts = BTreeMap::new();
        let mut total = 0;
        for (f, c) in counts {
            if c == 0 {
                continue;
            }
            *term_counts.entry(f).or_insert(0) += c;
            total += c;
        }
        Self {
            term_counts,
            total_tokens: total,
            doc_count,
        }
    }

    pub fn count(&self, feature: FeatureId) -> u64 {
        self.term_counts.get(&feature).copied().unwrap_or(0)
    }

    pub fn term_counts(&self) -> &BTreeMap<FeatureId, u64> {
        &self.term_counts
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn doc_count(&self) -> u64 {
        self.doc_count
    }

    pub fn add_row(&mut self, row: &[(FeatureId, u32)]) {
        for &(f, c) in row {
            *self.term_counts.entry(f).or_insert(0) += c as u64;
            self.total_tokens += c as u64;
        }
        self.doc_count += 1;
    }

    /// Componentwise sum; this is how a merged cluster's statistics arise.
    pub fn add(&self, other: &ClusterStats) -> ClusterStats {
        let mut out = self.clone();
        out += other;
        out
    }

    /// Restriction to `feats`. The document count is kept.
    pub fn project(&self, feats: &FeatureSet) -> ClusterStats {
        let term_counts: BTreeMap<_, _> = self
            .term_counts
            .iter()
            .filter(|(f, _)| feats.contains(f))
            .map(|(&f, &c)| (f, c))
            .collect();
        let total_tokens = term_counts.values().sum();
        ClusterStats {
            term_counts,
            total_tokens,
            doc_count: self.doc_count,
        }
    }

    /// Tokens falling in `feats`, without materializing the projection.
    pub fn tokens_in(&self, feats: &FeatureSet) -> u64 {
        if feats.len() < self.term_counts.len() {
            feats.iter().map(|f| self.count(*f)).sum()
        } else {
            self.term_counts
                .iter()
                .filter(|(f, _)| feats.contains(f))
                .map(|(_, &c)| c)
                .sum()
        }
    }
}

impl std::ops::AddAssign<&ClusterStats> for ClusterStats {
    fn add_assign(&mut self, other: &ClusterStats) {
        for (&f, &c) in &other.term_counts {
            *self.term_counts.entry(f).or_insert(0) += c;
        }
        self.total_tokens += other.total_tokens;
        self.doc_count += other.doc_count;
    }
}

impl<'a> std::iter::Sum<&'a ClusterStats> for ClusterStats {
    fn sum<I: Iterator<Item = &'a ClusterStats>>(iter: I) -> Self {
        let mut acc = ClusterStats::empty();
        for s in iter {
            acc += s;
        }
        acc
    }
}

/// Aggregates document rows into one [`ClusterStats`] per cluster id.
pub fn stats_from_assignment(
    data: &SparseDocMatrix,
    assignments: &[usize],
    k: usize,
) -> Result<Vec<ClusterStats>> {
    if assignments.len() != data.n_docs() {
        return Err(Error::input(format!(
            "{} assignments for {} documents",
            assignments.len(),
            data.n_docs()
        )));
    }
    let mut out = vec![ClusterStats::empty(); k];
    for (doc, &c) in assignments.iter().enumerate() {
        if c >= k {
            return Err(Error::input(format!(
                "document {doc} assigned to cluster {c}, but K = {k}"
            )));
        }
        out[c].add_row(data.row(doc));
    }
    Ok(out)
}

/// Disjoint split of the lexicon into globally shared ("noise") features and
/// cluster-specific ("useful") ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturePartition {
    noise: FeatureSet,
    useful: FeatureSet,
}

impl FeaturePartition {
    /// Every feature useful, no noise.
    pub fn all_useful(n_features: usize) -> Self {
        Self {
            noise: FeatureSet::new(),
            useful: (0..n_features as FeatureId).collect(),
        }
    }

    /// Partition with the given noise set; everything else in `0..n_features` is useful.
    pub fn with_noise(n_features: usize, noise: FeatureSet) -> Result<Self> {
        if let Some(&f) = noise.iter().next_back() {
            if f as usize >= n_features {
                return Err(Error::input(format!("noise feature {f} out of range")));
            }
        }
        let useful = (0..n_features as FeatureId)
            .filter(|f| !noise.contains(f))
            .collect();
        Ok(Self { noise, useful })
    }

    pub fn noise(&self) -> &FeatureSet {
        &self.noise
    }

    pub fn useful(&self) -> &FeatureSet {
        &self.useful
    }

    pub fn n_features(&self) -> usize {
        self.noise.len() + self.useful.len()
    }

    /// Checks disjointness and coverage of `0..n_features`.
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.noise.intersection(&self.useful).next().is_some() {
            return Err(Error::input("noise and useful sets overlap"));
        }
        let covered = self.noise.len() + self.useful.len() == n_features
            && self
                .noise
                .iter()
                .chain(self.useful.iter())
                .all(|&f| (f as usize) < n_features);
        if !covered {
            return Err(Error::input(format!(
                "feature partition does not cover 0..{n_features}"
            )));
        }
        Ok(())
    }
}
