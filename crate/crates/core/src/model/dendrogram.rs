use serde::{Deserialize, Serialize};

use super::stats::{ClusterStats, FeatureSet};
use crate::error::{Error, Result};

pub type NodeId = usize;

/// One node of the merge tree.
///
/// Leaves are the flat clusters (ids `0..n_leaves`, in cluster order).
/// Internal nodes are created by merges, in merge order. `local_noise` is the
/// feature set chosen at the creating merge; `eligible` is what ancestors may
/// still share (the global useful set for a leaf, `local_noise` otherwise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyNode {
    pub id: NodeId,
    pub children: Vec<NodeId>,
    pub parent: Option<NodeId>,
    pub local_noise: FeatureSet,
    pub eligible: FeatureSet,
    pub stats: ClusterStats,
    /// Document ids; populated on leaves only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub member_docs: Vec<usize>,
    /// Set on the root that collects the unmerged remainder of the forest.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub synthetic: bool,
}

impl HierarchyNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub left: NodeId,
    pub right: NodeId,
    pub new: NodeId,
    pub noise: FeatureSet,
    /// Change in log marginal likelihood, nats.
    pub delta: f64,
}

/// Binary merge tree over the flat clusters, with the ordered merge trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    nodes: Vec<HierarchyNode>,
    n_leaves: usize,
    root: Option<NodeId>,
    merge_trace: Vec<MergeRecord>,
}

impl Dendrogram {
    /// A forest of leaves, each eligible to share any feature in `useful`.
    pub fn from_leaves(
        leaves: Vec<(ClusterStats, Vec<usize>)>,
        useful: &FeatureSet,
    ) -> Result<Self> {
        if leaves.is_empty() {
            return Err(Error::input("a dendrogram needs at least one leaf"));
        }
        let nodes: Vec<_> = leaves
            .into_iter()
            .enumerate()
            .map(|(id, (stats, member_docs))| HierarchyNode {
                id,
                children: Vec::new(),
                parent: None,
                local_noise: FeatureSet::new(),
                eligible: useful.clone(),
                stats,
                member_docs,
                synthetic: false,
            })
            .collect();
        Ok(Self {
            n_leaves: nodes.len(),
            nodes,
            root: None,
            merge_trace: Vec::new(),
        })
    }

    pub fn nodes(&self) -> &[HierarchyNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Option<&HierarchyNode> {
        self.nodes.get(id)
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn merge_trace(&self) -> &[MergeRecord] {
        &self.merge_trace
    }

    pub fn n_merges(&self) -> usize {
        self.merge_trace.len()
    }

    /// Root id, once [`finish`](Self::finish) has run.
    pub fn root(&self) -> Option<NodeId> {
        self.root
    }

    pub fn is_finished(&self) -> bool {
        self.root.is_some()
    }

    /// Parentless nodes, excluding the synthetic root, in id order.
    pub fn forest_roots(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| !n.synthetic && n.parent.is_none_or(|p| self.nodes[p].synthetic))
            .map(|n| n.id)
            .collect()
    }

    /// Records the merge of two forest roots into a new node sharing `noise`.
    pub fn merge(
        &mut self,
        left: NodeId,
        right: NodeId,
        noise: FeatureSet,
        delta: f64,
    ) -> Result<NodeId> {
        if self.root.is_some() {
            return Err(Error::input("dendrogram already finished"));
        }
        if left == right {
            return Err(Error::input("cannot merge a node with itself"));
        }
        for id in [left, right] {
            match self.nodes.get(id) {
                None => return Err(Error::input(format!("unknown node {id}"))),
                Some(n) if n.parent.is_some() => {
                    return Err(Error::input(format!("node {id} was already merged")))
                }
                _ => {}
            }
        }
        let (l, r) = (&self.nodes[left], &self.nodes[right]);
        if !noise
            .iter()
            .all(|f| l.eligible.contains(f) && r.eligible.contains(f))
        {
            return Err(Error::input(format!(
                "noise set of merge ({left}, {right}) is not eligible in both children"
            )));
        }
        let id = self.nodes.len();
        let stats = l.stats.add(&r.stats);
        self.nodes.push(HierarchyNode {
            id,
            children: vec![left, right],
            parent: None,
            local_noise: noise.clone(),
            eligible: noise.clone(),
            stats,
            member_docs: Vec::new(),
            synthetic: false,
        });
        self.nodes[left].parent = Some(id);
        self.nodes[right].parent = Some(id);
        self.merge_trace.push(MergeRecord {
            left,
            right,
            new: id,
            noise,
            delta,
        });
        Ok(id)
    }

    /// Closes the tree: a single remaining node becomes the root, otherwise
    /// the remaining nodes hang under a synthetic root with no shared noise.
    pub fn finish(&mut self) -> NodeId {
        if let Some(r) = self.root {
            return r;
        }
        let roots = self.forest_roots();
        let root = if roots.len() == 1 {
            roots[0]
        } else {
            let id = self.nodes.len();
            let stats = roots.iter().map(|&r| &self.nodes[r].stats).sum();
            for &r in &roots {
                self.nodes[r].parent = Some(id);
            }
            self.nodes.push(HierarchyNode {
                id,
                children: roots,
                parent: None,
                local_noise: FeatureSet::new(),
                eligible: FeatureSet::new(),
                stats,
                member_docs: Vec::new(),
                synthetic: true,
            });
            id
        };
        self.root = Some(root);
        root
    }

    /// Leaf ids under `id`, ascending.
    pub fn leaves_under(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.is_leaf() {
                out.push(n);
            } else {
                stack.extend(node.children.iter().copied());
            }
        }
        out.sort_unstable();
        out
    }

    /// Path from `id` up to its topmost ancestor, starting with `id`.
    pub fn path_to_root(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path
    }

    /// Union of `local_noise` along the path from the root down to `id`.
    pub fn cumulative_noise(&self, id: NodeId) -> FeatureSet {
        self.path_to_root(id)
            .into_iter()
            .flat_map(|n| self.nodes[n].local_noise.iter().copied())
            .collect()
    }

    /// Rebuilds a dendrogram by replaying this one's merge trace on its leaves.
    pub fn replay(&self) -> Result<Dendrogram> {
        let useful = self.nodes[0].eligible.clone();
        let leaves = self.nodes[..self.n_leaves]
            .iter()
            .map(|n| (n.stats.clone(), n.member_docs.clone()))
            .collect();
        let mut d = Dendrogram::from_leaves(leaves, &useful)?;
        for m in &self.merge_trace {
            d.merge(m.left, m.right, m.noise.clone(), m.delta)?;
        }
        if self.root.is_some() {
            d.finish();
        }
        Ok(d)
    }

    /// Checks tree shape, statistics, the eligibility restriction, noise
    /// nesting along every path, and that the trace replays to this tree.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Invariant(msg));
        let useful = &self.nodes[0].eligible;
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return fail(format!("node at index {i} has id {}", n.id));
            }
            if let Some(p) = n.parent {
                if !self.nodes.get(p).is_some_and(|pn| pn.children.contains(&i)) {
                    return fail(format!("node {i} is not a child of its parent {p}"));
                }
            }
            for &c in &n.children {
                if self.nodes.get(c).and_then(|cn| cn.parent) != Some(i) {
                    return fail(format!("child {c} of node {i} does not point back"));
                }
            }
            if i < self.n_leaves {
                if !n.is_leaf() || &n.eligible != useful {
                    return fail(format!("leaf {i} malformed"));
                }
            } else if n.is_leaf() {
                return fail(format!("internal node {i} has no children"));
            }
            if !n.is_leaf() {
                let sum: ClusterStats = n.children.iter().map(|&c| &self.nodes[c].stats).sum();
                if sum != n.stats {
                    return fail(format!("stats of node {i} differ from its children's sum"));
                }
                if !n.synthetic && n.eligible != n.local_noise {
                    return fail(format!(
                        "eligible set of node {i} differs from its noise set"
                    ));
                }
                for &c in &n.children {
                    if !n.local_noise.is_subset(&self.nodes[c].eligible) {
                        return fail(format!("noise of node {i} not eligible in child {c}"));
                    }
                }
            }
            // Ancestor cumulative noise must nest inside the descendant's.
            let own = self.cumulative_noise(i);
            if let Some(p) = n.parent {
                if !self.cumulative_noise(p).is_subset(&own) {
                    return fail(format!("noise nesting violated between {p} and {i}"));
                }
            }
        }
        if let Some(r) = self.root {
            if self.nodes[r].parent.is_some() {
                return fail(format!("root {r} has a parent"));
            }
            let orphans = self.nodes.iter().filter(|n| n.parent.is_none()).count();
            if orphans != 1 {
                return fail(format!("{orphans} parentless nodes in a finished tree"));
            }
            if self.leaves_under(r).len() != self.n_leaves {
                return fail("root does not cover every leaf".into());
            }
        }
        let replayed = self.replay()?;
        if replayed != *self {
            return fail("merge trace does not replay to this tree".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fs(v: &[u32]) -> FeatureSet {
        v.iter().copied().collect()
    }

    fn three_leaves() -> Dendrogram {
        let leaves = (0..3)
            .map(|i| (ClusterStats::from_counts([(i as u32, 2)], 1), vec![i]))
            .collect();
        Dendrogram::from_leaves(leaves, &fs(&[0, 1, 2, 3])).unwrap()
    }

    #[test]
    fn merges_build_a_valid_tree() {
        let mut d = three_leaves();
        let a = d.merge(0, 1, fs(&[2, 3]), 0.5).unwrap();
        assert_eq!(a, 3);
        let b = d.merge(a, 2, fs(&[3]), 0.1).unwrap();
        assert_eq!(d.finish(), b);
        d.check_invariants().unwrap();
        assert_eq!(d.cumulative_noise(0), fs(&[2, 3]));
        assert_eq!(d.leaves_under(b), vec![0, 1, 2]);
        assert_eq!(d.node(a).unwrap().stats.total_tokens(), 4);
    }

    #[test]
    fn ineligible_noise_is_rejected() {
        let mut d = three_leaves();
        let a = d.merge(0, 1, fs(&[2]), 0.5).unwrap();
        assert!(d.merge(a, 2, fs(&[3]), 0.1).is_err());
        assert!(d.merge(0, 2, fs(&[]), 0.0).is_err());
    }

    #[test]
    fn unmerged_forest_gets_a_synthetic_root() {
        let mut d = three_leaves();
        d.merge(0, 1, fs(&[1]), 0.5).unwrap();
        let r = d.finish();
        let root = d.node(r).unwrap();
        assert!(root.synthetic);
        assert_eq!(root.children, vec![2, 3]);
        assert!(root.local_noise.is_empty());
        d.check_invariants().unwrap();
    }

    #[test]
    fn single_leaf_is_its_own_root() {
        let mut d =
            Dendrogram::from_leaves(vec![(ClusterStats::empty(), vec![0])], &fs(&[0])).unwrap();
        assert_eq!(d.finish(), 0);
        assert_eq!(d.n_merges(), 0);
        d.check_invariants().unwrap();
    }

    #[test]
    fn tampered_trees_fail_the_check() {
        let mut d = three_leaves();
        d.merge(0, 1, fs(&[2, 3]), 0.5).unwrap();
        d.finish();
        let mut bad = d.clone();
        bad.nodes[3].local_noise.insert(9);
        assert!(matches!(bad.check_invariants(), Err(Error::Invariant(_))));
        let mut bad = d.clone();
        bad.merge_trace[0].noise.remove(&2);
        assert!(bad.check_invariants().is_err());
    }
}
