//! Test-side oracles, written against document rows and statrs rather than
//! the library's cached statistics.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use statrs::function::gamma::ln_gamma;

pub type Row = Vec<(u32, u32)>;

/// A merge given as (left node, right node, shared features). New nodes are
/// numbered after the leaves in merge order.
pub type Merge = (usize, usize, BTreeSet<u32>);

/// Scalar hyperparameters, with per-feature vectors for the two priors.
pub struct Hyper {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma_u: f64,
    pub gamma_n: f64,
    pub sigma: Vec<f64>,
}

fn counts_of(rows: &[Row], docs: &[usize]) -> BTreeMap<u32, u64> {
    let mut out = BTreeMap::new();
    for &d in docs {
        for &(f, c) in &rows[d] {
            *out.entry(f).or_insert(0) += c as u64;
        }
    }
    out
}

/// Dirichlet-multinomial log marginal of the counts restricted to `feats`,
/// summing over every feature in the set including zero counts.
pub fn md(counts: &BTreeMap<u32, u64>, feats: &BTreeSet<u32>, prior: &[f64]) -> f64 {
    if feats.is_empty() {
        return 0.0;
    }
    let mut a0 = 0.0;
    let mut n = 0.0;
    let mut acc = 0.0;
    for &f in feats {
        let a = prior[f as usize];
        let t = *counts.get(&f).unwrap_or(&0) as f64;
        a0 += a;
        n += t;
        acc += ln_gamma(a + t) - ln_gamma(a);
    }
    acc + ln_gamma(a0) - ln_gamma(a0 + n)
}

fn beta_split(n_a: f64, n_b: f64, a: f64, b: f64) -> f64 {
    ln_gamma(a + n_a) - ln_gamma(a) + ln_gamma(b + n_b) - ln_gamma(b) + ln_gamma(a + b)
        - ln_gamma(a + b + n_a + n_b)
}

fn tokens(counts: &BTreeMap<u32, u64>, feats: &BTreeSet<u32>) -> f64 {
    feats
        .iter()
        .map(|f| *counts.get(f).unwrap_or(&0) as f64)
        .sum()
}

/// Full log marginal likelihood of a hierarchy over a hard clustering,
/// recomputed from the rows.
///
/// Root noise features share one distribution over the whole corpus. Every
/// leaf has its own distribution over the useful features; a merged node
/// shares a distribution over its noise set among all documents below it,
/// and each child keeps the rest of its block plus a split of its tokens
/// between the shared and kept parts.
pub fn hierarchy_score(
    rows: &[Row],
    assign: &[usize],
    k: usize,
    noise: &BTreeSet<u32>,
    useful: &BTreeSet<u32>,
    merges: &[Merge],
    h: &Hyper,
) -> f64 {
    let all_docs: Vec<usize> = (0..rows.len()).collect();
    let pooled = counts_of(rows, &all_docs);
    let mut score = 0.0;
    if !noise.is_empty() {
        score += beta_split(
            tokens(&pooled, useful),
            tokens(&pooled, noise),
            h.gamma_u,
            h.gamma_n,
        );
        score += md(&pooled, noise, &h.beta);
    }
    let mut sizes = vec![0.0; k];
    for &c in assign {
        sizes[c] += 1.0;
    }
    let s_tot: f64 = h.sigma[..k].iter().sum();
    for (s, n) in h.sigma[..k].iter().zip(&sizes) {
        score += ln_gamma(s + n) - ln_gamma(*s);
    }
    score += ln_gamma(s_tot) - ln_gamma(s_tot + rows.len() as f64);

    // Documents, block and parent block of every node.
    let mut docs: Vec<Vec<usize>> = (0..k)
        .map(|c| (0..rows.len()).filter(|&d| assign[d] == c).collect())
        .collect();
    let mut block: Vec<BTreeSet<u32>> = vec![useful.clone(); k];
    let mut parent: Vec<Option<usize>> = vec![None; k];
    for (l, r, s) in merges {
        let id = docs.len();
        let mut d = docs[*l].clone();
        d.extend(&docs[*r]);
        docs.push(d);
        block.push(s.clone());
        parent.push(None);
        parent[*l] = Some(id);
        parent[*r] = Some(id);
    }
    for node in 0..docs.len() {
        let counts = counts_of(rows, &docs[node]);
        match parent[node] {
            None => score += md(&counts, &block[node], &h.alpha),
            Some(p) => {
                let shared = &block[p];
                let kept: BTreeSet<u32> = block[node].difference(shared).copied().collect();
                let mass = |s: &BTreeSet<u32>| s.iter().map(|&f| h.alpha[f as usize]).sum::<f64>();
                if !shared.is_empty() && !kept.is_empty() {
                    score += beta_split(
                        tokens(&counts, shared),
                        tokens(&counts, &kept),
                        mass(shared),
                        mass(&kept),
                    );
                }
                score += md(&counts, &kept, &h.alpha);
            }
        }
    }
    score
}

/// `|a - b| <= tol * max(|a|, |b|, 1)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
