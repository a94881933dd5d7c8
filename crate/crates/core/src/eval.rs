//! Comparing clusterings: normalized mutual information, cutting the merge
//! tree into a fixed number of groups, and naming nodes by their shared terms.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dendrogram, Lexicon, NodeId};

/// A hard labeling of items `0..n` into categories `0..k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labeling {
    labels: Vec<usize>,
    k: usize,
}

impl Labeling {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::input(format!(
                "label {bad} out of range for k = {k}"
            )));
        }
        Ok(Self { labels, k })
    }

    /// Labeling with `k` one more than the largest id.
    pub fn from_ids(ids: &[usize]) -> Self {
        let k = ids.iter().max().map_or(0, |m| m + 1);
        Self {
            labels: ids.to_vec(),
            k,
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information `2 I(a; b) / (H(a) + H(b))`, natural logs.
///
/// Two constant labelings agree perfectly (1.0); a constant labeling carries
/// no information about a non-constant one (0.0).
pub fn nmi(a: &Labeling, b: &Labeling) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::input(format!(
            "labelings cover {} and {} items",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut ca = vec![0usize; a.k];
    let mut cb = vec![0usize; b.k];
    for (&x, &y) in a.labels.iter().zip(&b.labels) {
        *joint.entry((x, y)).or_insert(0) += 1;
        ca[x] += 1;
        cb[y] += 1;
    }
    let ha = entropy(ca.iter().copied(), n);
    let hb = entropy(cb.iter().copied(), n);
    match (ha > 0.0, hb > 0.0) {
        (false, false) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &c)| {
            let pxy = c as f64 / n;
            pxy * (pxy * n * n / (ca[x] as f64 * cb[y] as f64)).ln()
        })
        .sum();
    Ok((2.0 * mi / (ha + hb)).clamp(0.0, 1.0))
}

/// Group index of every leaf after undoing merges from the top until `k`
/// groups remain. Groups are numbered by their smallest leaf.
///
/// A synthetic root with more than two children is removed in one step, so
/// only `k = 1` and `k ≥ leaves − merges` are reachable.
pub fn cut_leaves(tree: &Dendrogram, k: usize) -> Result<Vec<usize>> {
    let leaves = tree.n_leaves();
    if k == 0 || k > leaves {
        return Err(Error::input(format!(
            "cannot cut {leaves} leaves into {k} groups"
        )));
    }
    if k == 1 {
        return Ok(vec![0; leaves]);
    }
    let finest = leaves - tree.n_merges();
    if k < finest {
        return Err(Error::input(format!(
            "the tree has {} merges over {leaves} leaves; {k} groups are not reachable",
            tree.n_merges()
        )));
    }
    // Replay the first `leaves - k` merges with a union-find over node ids.
    let mut parent: Vec<NodeId> = (0..tree.nodes().len()).collect();
    fn find(parent: &mut [NodeId], mut x: NodeId) -> NodeId {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for m in &tree.merge_trace()[..leaves - k] {
        let l = find(&mut parent, m.left);
        let r = find(&mut parent, m.right);
        parent[l] = m.new;
        parent[r] = m.new;
    }
    let mut group_of_root: HashMap<NodeId, usize> = HashMap::new();
    Ok((0..leaves)
        .map(|leaf| {
            let r = find(&mut parent, leaf);
            let next = group_of_root.len();
            *group_of_root.entry(r).or_insert(next)
        })
        .collect())
}

/// Document labeling induced by [`cut_leaves`]: each document takes its leaf's group.
pub fn cut(tree: &Dendrogram, k: usize) -> Result<Labeling> {
    let groups = cut_leaves(tree, k)?;
    let n_docs: usize = tree.nodes()[..tree.n_leaves()]
        .iter()
        .map(|n| n.member_docs.len())
        .sum();
    let mut labels = vec![usize::MAX; n_docs];
    for (leaf, &g) in groups.iter().enumerate() {
        for &d in &tree.nodes()[leaf].member_docs {
            match labels.get_mut(d) {
                Some(slot) if *slot == usize::MAX => *slot = g,
                _ => {
                    return Err(Error::Invariant(format!(
                        "document {d} listed twice or out of range"
                    )))
                }
            }
        }
    }
    Labeling::new(labels, k)
}

/// The node's shared noise terms, most frequent first (ties by feature id),
/// at most `top_n` of them.
pub fn node_labels(
    tree: &Dendrogram,
    node: NodeId,
    lex: &Lexicon,
    top_n: usize,
) -> Result<Vec<String>> {
    let n = tree
        .node(node)
        .ok_or_else(|| Error::input(format!("unknown node {node}")))?;
    let mut feats: Vec<(u64, u32)> = n
        .local_noise
        .iter()
        .map(|&f| (n.stats.count(f), f))
        .collect();
    feats.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    feats
        .into_iter()
        .take(top_n)
        .map(|(_, f)| {
            lex.term(f)
                .map(str::to_owned)
                .ok_or_else(|| Error::input(format!("feature {f} not in lexicon")))
        })
        .collect()
}
