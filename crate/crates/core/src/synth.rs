//! Synthetic corpora drawn from a known cluster hierarchy.
//!
//! Each internal node owns a block of features whose distribution is shared
//! by every leaf below it. A leaf draws its remaining features from its own
//! distribution. Documents are sampled leaf by leaf with derived seeds, so
//! the output does not depend on thread scheduling.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeatureId, FeatureSet, SparseDocMatrix};

/// Tree shape as a nested list: a node with no children is a leaf.
///
/// Structure 1 is `[[[],[]],[[],[]]]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Shape(pub Vec<Shape>);

impl Shape {
    pub fn leaf() -> Self {
        Shape(Vec::new())
    }

    pub fn node(children: Vec<Shape>) -> Self {
        Shape(children)
    }

    pub fn is_leaf(&self) -> bool {
        self.0.is_empty()
    }

    pub fn n_leaves(&self) -> usize {
        if self.is_leaf() {
            1
        } else {
            self.0.iter().map(Shape::n_leaves).sum()
        }
    }

    /// Internal nodes, root included.
    pub fn n_internal(&self) -> usize {
        if self.is_leaf() {
            0
        } else {
            1 + self.0.iter().map(Shape::n_internal).sum::<usize>()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StructureSpec {
    pub shape: Shape,
    pub n_features: usize,
    /// Noise-block size per internal node, pre-order with the root first.
    pub noise_alloc: Vec<usize>,
    pub min_useful_mass: f64,
    pub docs_per_leaf: usize,
    pub tokens_per_doc: u32,
    pub seed: u64,
}

impl Default for StructureSpec {
    fn default() -> Self {
        structure_1(500, 0)
    }
}

/// Four leaves under two intermediate nodes with 15 and 21 noise features.
pub fn structure_1(docs_per_leaf: usize, seed: u64) -> StructureSpec {
    let pair = || Shape::node(vec![Shape::leaf(), Shape::leaf()]);
    StructureSpec {
        shape: Shape::node(vec![pair(), pair()]),
        n_features: 50,
        noise_alloc: vec![0, 15, 21],
        min_useful_mass: 0.5,
        docs_per_leaf,
        tokens_per_doc: 100,
        seed,
    }
}

/// Five leaves: a pair under one intermediate node, and a leaf plus a pair
/// under the other. Three noise blocks of 12, 10 and 8 features.
pub fn structure_2(docs_per_leaf: usize, seed: u64) -> StructureSpec {
    let pair = || Shape::node(vec![Shape::leaf(), Shape::leaf()]);
    StructureSpec {
        shape: Shape::node(vec![pair(), Shape::node(vec![Shape::leaf(), pair()])]),
        n_features: 50,
        noise_alloc: vec![0, 12, 10, 8],
        min_useful_mass: 0.5,
        docs_per_leaf,
        tokens_per_doc: 100,
        seed,
    }
}

/// An internal node of the generating tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueNode {
    /// Distance from the root; the root has depth 0.
    pub depth: usize,
    pub parent: Option<usize>,
    /// Leaves below this node, ascending.
    pub leaves: Vec<usize>,
    /// Features this node's subtree shares.
    pub noise: FeatureSet,
    /// Probability mass of the block in every leaf below.
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Internal nodes in pre-order, root first.
    pub nodes: Vec<TrueNode>,
    /// Internal-node index that is the direct parent of each leaf.
    pub leaf_parent: Vec<usize>,
    /// Full feature distribution of each leaf.
    pub leaf_params: Vec<Vec<f64>>,
    /// Per document, the leaf it was drawn from.
    pub leaf_labels: Vec<usize>,
    /// Per depth `d = 1, 2, ...`: per document, the id of its ancestor at
    /// depth `d`. Internal nodes are numbered after the leaves; a leaf
    /// shallower than `d` labels itself.
    pub node_labels: Vec<Vec<usize>>,
}

impl GroundTruth {
    pub fn n_leaves(&self) -> usize {
        self.leaf_params.len()
    }

    /// Noise sets of all internal nodes, pre-order.
    pub fn true_noise_sets(&self) -> Vec<&FeatureSet> {
        self.nodes.iter().map(|n| &n.noise).collect()
    }

    /// Internal nodes on the path from a leaf to the root, nearest first.
    pub fn ancestors(&self, leaf: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = Some(self.leaf_parent[leaf]);
        while let Some(n) = cur {
            out.push(n);
            cur = self.nodes[n].parent;
        }
        out
    }

    /// Leaf mass on features outside every ancestor noise block.
    pub fn useful_mass(&self, leaf: usize) -> f64 {
        let noise: FeatureSet = self
            .ancestors(leaf)
            .into_iter()
            .flat_map(|n| self.nodes[n].noise.iter().copied())
            .collect();
        self.leaf_params[leaf]
            .iter()
            .enumerate()
            .filter(|(f, _)| !noise.contains(&(*f as FeatureId)))
            .map(|(_, p)| p)
            .sum()
    }

    /// Label of every document at depth `d`, where depth 1 is the children
    /// of the root. Depth 0 is the trivial one-group labeling.
    pub fn labels_at_depth(&self, d: usize) -> Vec<usize> {
        if d == 0 {
            return vec![0; self.leaf_labels.len()];
        }
        match self.node_labels.get(d - 1) {
            Some(l) => l.clone(),
            None => self.leaf_labels.clone(),
        }
    }
}

impl StructureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.shape.is_leaf() {
            return Err(Error::input("shape needs at least one internal node"));
        }
        if self.noise_alloc.len() != self.shape.n_internal() {
            return Err(Error::input(format!(
                "noise_alloc has {} entries for {} internal nodes",
                self.noise_alloc.len(),
                self.shape.n_internal()
            )));
        }
        if !(self.min_useful_mass > 0.0 && self.min_useful_mass <= 1.0) {
            return Err(Error::input("min_useful_mass must be in (0, 1]"));
        }
        if self.tokens_per_doc == 0 {
            return Err(Error::input("tokens_per_doc must be positive"));
        }
        if self.noise_alloc.iter().sum::<usize>() > self.n_features {
            return Err(Error::input(format!(
                "noise blocks need {} features, only {} exist",
                self.noise_alloc.iter().sum::<usize>(),
                self.n_features
            )));
        }
        Ok(())
    }
}

fn dirichlet_ones(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

struct Layout {
    nodes: Vec<TrueNode>,
    leaf_parent: Vec<usize>,
}

fn walk(shape: &Shape, depth: usize, parent: Option<usize>, out: &mut Layout) -> Vec<usize> {
    let me = out.nodes.len();
    out.nodes.push(TrueNode {
        depth,
        parent,
        leaves: Vec::new(),
        noise: FeatureSet::new(),
        mass: 0.0,
    });
    let mut leaves = Vec::new();
    for child in &shape.0 {
        if child.is_leaf() {
            leaves.push(out.leaf_parent.len());
            out.leaf_parent.push(me);
        } else {
            leaves.extend(walk(child, depth + 1, Some(me), out));
        }
    }
    out.nodes[me].leaves = leaves.clone();
    leaves
}

/// Draws the generating parameters.
///
/// Noise blocks are disjoint slices of a seeded feature permutation. A block
/// gets mass equal to its share of the features, scaled down uniformly when
/// some leaf would otherwise keep less than `min_useful_mass`. Within every
/// block, and over each leaf's own features, the split is Dirichlet(1).
pub fn gen_params(spec: &StructureSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let m = spec.n_features;
    let mut layout = Layout {
        nodes: Vec::new(),
        leaf_parent: Vec::new(),
    };
    walk(&spec.shape, 0, None, &mut layout);
    let Layout {
        mut nodes,
        leaf_parent,
    } = layout;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut perm: Vec<FeatureId> = (0..m as FeatureId).collect();
    perm.shuffle(&mut rng);
    let mut next = 0;
    for (node, &size) in nodes.iter_mut().zip(&spec.noise_alloc) {
        node.noise = perm[next..next + size].iter().copied().collect();
        next += size;
    }

    let ancestors = |leaf: usize| {
        let mut out = Vec::new();
        let mut cur = Some(leaf_parent[leaf]);
        while let Some(n) = cur {
            out.push(n);
            cur = nodes[n].parent;
        }
        out
    };
    let n_leaves = leaf_parent.len();
    let paths: Vec<Vec<usize>> = (0..n_leaves).map(ancestors).collect();
    let mut worst_noise = 0.0f64;
    for (leaf, path) in paths.iter().enumerate() {
        let count: usize = path.iter().map(|&n| spec.noise_alloc[n]).sum();
        if count >= m {
            return Err(Error::input(format!(
                "leaf {leaf} has no useful features left"
            )));
        }
        worst_noise = worst_noise.max(count as f64 / m as f64);
    }
    let cap = 1.0 - spec.min_useful_mass;
    let scale = if worst_noise > cap {
        cap / worst_noise
    } else {
        1.0
    };
    let masses: Vec<f64> = spec
        .noise_alloc
        .iter()
        .map(|&s| scale * s as f64 / m as f64)
        .collect();
    for (node, &w) in nodes.iter_mut().zip(&masses) {
        node.mass = w;
    }

    let block_params: Vec<Vec<f64>> = nodes
        .iter()
        .map(|n| dirichlet_ones(n.noise.len(), &mut rng))
        .collect();

    let mut leaf_params = Vec::with_capacity(n_leaves);
    for path in &paths {
        let mut theta = vec![0.0; m];
        let mut noise_mass = 0.0;
        let mut taken = vec![false; m];
        for &n in path {
            for (&f, &p) in nodes[n].noise.iter().zip(&block_params[n]) {
                theta[f as usize] = nodes[n].mass * p;
                taken[f as usize] = true;
            }
            noise_mass += nodes[n].mass;
        }
        let own: Vec<usize> = (0..m).filter(|&f| !taken[f]).collect();
        let draw = dirichlet_ones(own.len(), &mut rng);
        for (&f, p) in own.iter().zip(draw) {
            theta[f] = (1.0 - noise_mass) * p;
        }
        leaf_params.push(theta);
    }

    Ok(GroundTruth {
        nodes,
        leaf_parent,
        leaf_params,
        leaf_labels: Vec::new(),
        node_labels: Vec::new(),
    })
}

fn leaf_rng(seed: u64, leaf: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(leaf as u64 + 1);
    rng
}

/// Samples `docs_per_leaf` documents per leaf, leaf 0 first, and fills in
/// the labels of `gt`.
pub fn sample(gt: &GroundTruth, spec: &StructureSpec) -> Result<(SparseDocMatrix, GroundTruth)> {
    let m = spec.n_features;
    let per_leaf: Vec<Vec<Vec<(FeatureId, u32)>>> = (0..gt.n_leaves())
        .into_par_iter()
        .map(|leaf| -> Result<_> {
            let dist = WeightedIndex::new(&gt.leaf_params[leaf])
                .map_err(|e| Error::input(format!("leaf {leaf} parameters: {e}")))?;
            let mut rng = leaf_rng(spec.seed, leaf);
            let mut docs = Vec::with_capacity(spec.docs_per_leaf);
            let mut counts = vec![0u32; m];
            for _ in 0..spec.docs_per_leaf {
                counts.iter_mut().for_each(|c| *c = 0);
                for _ in 0..spec.tokens_per_doc {
                    counts[dist.sample(&mut rng)] += 1;
                }
                docs.push(
                    counts
                        .iter()
                        .enumerate()
                        .filter(|(_, &c)| c > 0)
                        .map(|(f, &c)| (f as FeatureId, c))
                        .collect(),
                );
            }
            Ok(docs)
        })
        .collect::<Result<_>>()?;

    let n_leaves = gt.n_leaves();
    let leaf_labels: Vec<usize> = (0..n_leaves)
        .flat_map(|l| std::iter::repeat_n(l, spec.docs_per_leaf))
        .collect();
    let max_depth = gt.nodes.iter().map(|n| n.depth).max().unwrap_or(0);
    let node_labels = (1..=max_depth)
        .map(|d| {
            let per_leaf: Vec<usize> = (0..n_leaves)
                .map(|leaf| {
                    gt.ancestors(leaf)
                        .into_iter()
                        .find(|&n| gt.nodes[n].depth == d)
                        .map_or(leaf, |n| n_leaves + n)
                })
                .collect();
            leaf_labels.iter().map(|&l| per_leaf[l]).collect()
        })
        .collect();

    let rows = per_leaf.into_iter().flatten().collect();
    let data = SparseDocMatrix::from_rows(m, rows)?;
    let mut out = gt.clone();
    out.leaf_labels = leaf_labels;
    out.node_labels = node_labels;
    Ok((data, out))
}

/// `gen_params` followed by `sample`.
pub fn generate(spec: &StructureSpec) -> Result<(SparseDocMatrix, GroundTruth)> {
    sample(&gen_params(spec)?, spec)
}
