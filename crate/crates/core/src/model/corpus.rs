use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense integer identifier of a lexicon term.
pub type FeatureId = u32;

/// Ordered, duplicate-free list of terms. A term's position is its feature id.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Lexicon {
    terms: Vec<String>,
    index: HashMap<String, FeatureId>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_terms<I, S>(terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut lex = Self::new();
        for t in terms {
            let t = t.into();
            if lex.index.contains_key(&t) {
                return Err(Error::input(format!("duplicate lexicon term {t:?}")));
            }
            lex.insert(t);
        }
        Ok(lex)
    }

    /// Returns the id of `term`, adding it at the end if unseen.
    pub fn insert(&mut self, term: impl Into<String>) -> FeatureId {
        let term = term.into();
        if let Some(&id) = self.index.get(&term) {
            return id;
        }
        let id = self.terms.len() as FeatureId;
        self.index.insert(term.clone(), id);
        self.terms.push(term);
        id
    }

    pub fn id(&self, term: &str) -> Option<FeatureId> {
        self.index.get(term).copied()
    }

    pub fn term(&self, id: FeatureId) -> Option<&str> {
        self.terms.get(id as usize).map(String::as_str)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

impl TryFrom<Vec<String>> for Lexicon {
    type Error = Error;

    fn try_from(terms: Vec<String>) -> Result<Self> {
        Lexicon::from_terms(terms)
    }
}

impl From<Lexicon> for Vec<String> {
    fn from(lex: Lexicon) -> Self {
        lex.terms
    }
}

/// Document-by-term count matrix stored as sorted sparse rows.
///
/// Zero counts are never stored, and each row total is cached.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparseDocMatrix {
    n_features: usize,
    rows: Vec<Vec<(FeatureId, u32)>>,
    totals: Vec<u64>,
}

impl SparseDocMatrix {
    /// Builds a matrix over `n_features` features. Duplicate ids within a row
    /// are summed and zero counts dropped.
    pub fn from_rows(n_features: usize, rows: Vec<Vec<(FeatureId, u32)>>) -> Result<Self> {
        let mut clean = Vec::with_capacity(rows.len());
        let mut totals = Vec::with_capacity(rows.len());
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_unstable_by_key(|&(f, _)| f);
            let mut merged: Vec<(FeatureId, u32)> = Vec::with_capacity(row.len());
            for (f, c) in row {
                if f as usize >= n_features {
                    return Err(Error::input(format!(
                        "document {i}: feature id {f} out of range (M = {n_features})"
                    )));
                }
                if c == 0 {
                    continue;
                }
                match merged.last_mut() {
                    Some((lf, lc)) if *lf == f => *lc += c,
                    _ => merged.push((f, c)),
                }
            }
            totals.push(merged.iter().map(|&(_, c)| c as u64).sum());
            clean.push(merged);
        }
        Ok(Self {
            n_features,
            rows: clean,
            totals,
        })
    }

    pub fn n_docs(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, doc: usize) -> &[(FeatureId, u32)] {
        &self.rows[doc]
    }

    pub fn rows(&self) -> &[Vec<(FeatureId, u32)>] {
        &self.rows
    }

    pub fn doc_total(&self, doc: usize) -> u64 {
        self.totals[doc]
    }

    /// Corpus-wide count of every feature.
    pub fn column_totals(&self) -> Vec<u64> {
        let mut out = vec![0u64; self.n_features];
        for row in &self.rows {
            for &(f, c) in row {
                out[f as usize] += c as u64;
            }
        }
        out
    }

    /// Number of documents each feature occurs in.
    pub fn doc_frequencies(&self) -> Vec<usize> {
        let mut out = vec![0usize; self.n_features];
        for row in &self.rows {
            for &(f, _) in row {
                out[f as usize] += 1;
            }
        }
        out
    }
}
