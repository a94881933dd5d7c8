//! Second stage: agglomerative merging of the flat clusters, driven by the
//! change in hierarchy marginal likelihood.
//!
//! Each merge shares a subset of features ("noise" for the pair) under one
//! distribution. Only cluster statistics are read here, never document rows:
//! the score change of a merge depends on the two clusters' counts over the
//! shared features alone.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::flat::FlatClustering;
use crate::likelihood::{merge_delta, DeltaAccumulator};
use crate::model::{
    ClusterStats, Dendrogram, FeatureId, FeatureSet, HierarchyNode, MergeMode, ModelConfig, NodeId,
    PrefixRule,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeProposal {
    pub left: NodeId,
    pub right: NodeId,
    pub noise: FeatureSet,
    /// Score change of the merge, nats.
    pub delta: f64,
}

/// Features both nodes may still share. Anything a lower merge kept
/// cluster-specific is no longer available.
pub fn eligible_noise(a: &HierarchyNode, b: &HierarchyNode) -> FeatureSet {
    a.eligible.intersection(&b.eligible).copied().collect()
}

/// Greedy choice of the features two clusters should share.
///
/// Features are ranked by how much their token share (within the eligible
/// block) differs between the clusters, smallest first, lower id on ties.
/// Prefixes of the ranking are scored with the merge delta and one is picked
/// by `config.prefix_rule`. Returns `(∅, 0)` unless the pick improves on
/// sharing nothing.
pub fn greedy_noise_selection(
    a: &ClusterStats,
    b: &ClusterStats,
    eligible: &FeatureSet,
    config: &ModelConfig,
) -> (FeatureSet, f64) {
    if eligible.is_empty() {
        return (FeatureSet::new(), 0.0);
    }
    let ta = a.tokens_in(eligible) as f64;
    let tb = b.tokens_in(eligible) as f64;
    let share = |c: u64, t: f64| if t > 0.0 { c as f64 / t } else { 0.0 };
    let mut ranked: Vec<(f64, FeatureId, u64, u64)> = eligible
        .iter()
        .map(|&f| {
            let (ca, cb) = (a.count(f), b.count(f));
            ((share(ca, ta) - share(cb, tb)).abs(), f, ca, cb)
        })
        .collect();
    ranked.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));

    let mut acc = DeltaAccumulator::default();
    let mut best_len = 0;
    let mut best = 0.0;
    for (i, &(_, f, ca, cb)) in ranked.iter().enumerate() {
        acc.push(config.alpha.feature(f), ca, cb);
        let d = acc.delta();
        match config.prefix_rule {
            PrefixRule::StopAtFirstDecrease => {
                if d < best {
                    break;
                }
                best = d;
                best_len = i + 1;
            }
            PrefixRule::BestPrefix => {
                if d > best {
                    best = d;
                    best_len = i + 1;
                }
            }
        }
    }
    if best <= 0.0 {
        return (FeatureSet::new(), 0.0);
    }
    let noise = ranked[..best_len].iter().map(|r| r.1).collect();
    (noise, best)
}

/// Scores the merge of two nodes under `config.mode`: greedy selection in
/// FS mode, the whole eligible set otherwise.
pub fn evaluate_pair(a: &HierarchyNode, b: &HierarchyNode, config: &ModelConfig) -> MergeProposal {
    let eligible = eligible_noise(a, b);
    let (noise, delta) = match config.mode {
        MergeMode::Fs => greedy_noise_selection(&a.stats, &b.stats, &eligible, config),
        MergeMode::NoFs => {
            let d = merge_delta(&a.stats, &b.stats, &eligible, &config.alpha);
            (eligible, d)
        }
    };
    let (left, right) = if a.id < b.id {
        (a.id, b.id)
    } else {
        (b.id, a.id)
    };
    MergeProposal {
        left,
        right,
        noise,
        delta,
    }
}

/// Whether `p` beats the current best under the (delta, left, right) order.
fn better(p: &MergeProposal, best: Option<&MergeProposal>) -> bool {
    match best {
        None => true,
        Some(b) => {
            p.delta > b.delta || (p.delta == b.delta && (p.left, p.right) < (b.left, b.right))
        }
    }
}

fn accept(p: Option<MergeProposal>, mode: MergeMode) -> Option<MergeProposal> {
    match mode {
        MergeMode::Fs => p.filter(|p| p.delta > 0.0),
        MergeMode::NoFs => p,
    }
}

/// Best merge among all pairs of `active` nodes.
///
/// In FS mode only a strictly positive delta qualifies; in no-FS mode the
/// least damaging merge is always returned. Ties go to the smaller left id,
/// then the smaller right id.
pub fn best_merge(active: &[&HierarchyNode], config: &ModelConfig) -> Option<MergeProposal> {
    let mut best: Option<MergeProposal> = None;
    for (i, a) in active.iter().enumerate() {
        for b in &active[i + 1..] {
            let p = evaluate_pair(a, b, config);
            if better(&p, best.as_ref()) {
                best = Some(p);
            }
        }
    }
    accept(best, config.mode)
}

/// Builds the hierarchy over the flat clusters.
///
/// Starts from one leaf per cluster, every leaf eligible to share any useful
/// feature, and repeatedly applies the best merge until none qualifies.
/// Whatever remains unmerged hangs under a synthetic root.
///
/// In FS mode merging stops at two subtrees: the node joining the last two
/// would be the root, whose shared features are the root noise set fixed by
/// the flat stage. In no-FS mode merging continues to a single root.
///
/// Pair scores are cached between rounds; only pairs involving the new node
/// are evaluated after a merge.
pub fn run_mhac(flat: &FlatClustering, config: &ModelConfig) -> Result<Dendrogram> {
    let leaves = flat.stats.iter().cloned().zip(flat.members()).collect();
    let mut tree = Dendrogram::from_leaves(leaves, flat.partition.useful())?;

    let roots = tree.forest_roots();
    let pairs: Vec<(NodeId, NodeId)> = roots
        .iter()
        .enumerate()
        .flat_map(|(i, &a)| roots[i + 1..].iter().map(move |&b| (a, b)))
        .collect();
    let mut cache: BTreeMap<(NodeId, NodeId), MergeProposal> = {
        let nodes = tree.nodes();
        pairs
            .par_iter()
            .map(|&(a, b)| ((a, b), evaluate_pair(&nodes[a], &nodes[b], config)))
            .collect::<Vec<_>>()
            .into_iter()
            .collect()
    };

    loop {
        let min_roots = match config.mode {
            MergeMode::Fs => 3,
            MergeMode::NoFs => 2,
        };
        if tree.forest_roots().len() < min_roots {
            break;
        }
        let mut best: Option<&MergeProposal> = None;
        for p in cache.values() {
            if better(p, best) {
                best = Some(p);
            }
        }
        let Some(p) = accept(best.cloned(), config.mode) else {
            break;
        };
        let new = tree.merge(p.left, p.right, p.noise, p.delta)?;
        cache.retain(|&(a, b), _| a != p.left && a != p.right && b != p.left && b != p.right);
        let others: Vec<NodeId> = tree
            .forest_roots()
            .into_iter()
            .filter(|&r| r != new)
            .collect();
        let nodes = tree.nodes();
        let fresh: Vec<_> = others
            .par_iter()
            .map(|&o| ((o, new), evaluate_pair(&nodes[o], &nodes[new], config)))
            .collect();
        cache.extend(fresh);
    }
    tree.finish();
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::{log_flat, log_hierarchy};
    use crate::model::FeaturePartition;

    fn fs(v: &[u32]) -> FeatureSet {
        v.iter().copied().collect()
    }

    fn leaf(id: NodeId, eligible: &[u32]) -> HierarchyNode {
        HierarchyNode {
            id,
            children: vec![],
            parent: None,
            local_noise: FeatureSet::new(),
            eligible: fs(eligible),
            stats: ClusterStats::empty(),
            member_docs: vec![],
            synthetic: false,
        }
    }

    fn with_stats(mut n: HierarchyNode, counts: &[(u32, u64)]) -> HierarchyNode {
        n.stats = ClusterStats::from_counts(counts.iter().copied(), 1);
        n
    }

    /// Best merge delta over every subset of `eligible`.
    fn exhaustive(
        a: &ClusterStats,
        b: &ClusterStats,
        eligible: &FeatureSet,
        cfg: &ModelConfig,
    ) -> (FeatureSet, f64) {
        let feats: Vec<u32> = eligible.iter().copied().collect();
        let mut best = (FeatureSet::new(), 0.0);
        for mask in 1u32..(1 << feats.len()) {
            let s: FeatureSet = feats
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, &f)| f)
                .collect();
            let d = merge_delta(a, b, &s, &cfg.alpha);
            if d > best.1 {
                best = (s, d);
            }
        }
        best
    }

    #[test]
    fn eligibility_cases() {
        assert_eq!(
            eligible_noise(&leaf(0, &[0, 1, 2]), &leaf(1, &[0, 1, 2])),
            fs(&[0, 1, 2])
        );
        assert_eq!(
            eligible_noise(&leaf(3, &[1, 2]), &leaf(2, &[0, 1, 2])),
            fs(&[1, 2])
        );
        assert!(eligible_noise(&leaf(3, &[1]), &leaf(4, &[2])).is_empty());
    }

    #[test]
    fn greedy_on_empty_eligible() {
        let s = ClusterStats::from_counts([(0, 3)], 1);
        assert_eq!(
            greedy_noise_selection(&s, &s, &FeatureSet::new(), &ModelConfig::default()),
            (FeatureSet::new(), 0.0)
        );
    }

    #[test]
    fn identical_clusters_share_everything() {
        let cfg = ModelConfig::default();
        let counts: Vec<(u32, u64)> = (0..8).map(|f| (f, 3 + 2 * f as u64)).collect();
        let s = ClusterStats::from_counts(counts, 4);
        let all = fs(&[0, 1, 2, 3, 4, 5, 6, 7]);
        let (noise, delta) = greedy_noise_selection(&s, &s, &all, &cfg);
        assert_eq!(noise, all);
        assert!(delta > 0.0);
        let (ex, ex_delta) = exhaustive(&s, &s, &all, &cfg);
        assert_eq!(ex, all);
        assert!((ex_delta - delta).abs() < 1e-12);
    }

    #[test]
    fn equal_shares_beat_opposite_supports() {
        // f0 and f1 carry the same share in both clusters; f2 / f3 are disjoint.
        let cfg = ModelConfig::default();
        let a = ClusterStats::from_counts([(0, 20), (1, 20), (2, 40)], 1);
        let b = ClusterStats::from_counts([(0, 20), (1, 20), (3, 40)], 1);
        let all = fs(&[0, 1, 2, 3]);
        let (noise, delta) = greedy_noise_selection(&a, &b, &all, &cfg);
        assert_eq!(noise, fs(&[0, 1]));
        let (ex, ex_delta) = exhaustive(&a, &b, &all, &cfg);
        assert_eq!(ex, noise);
        assert!((ex_delta - delta).abs() < 1e-12);
    }

    #[test]
    fn best_prefix_dominates_the_full_set() {
        let cfg = ModelConfig {
            prefix_rule: PrefixRule::BestPrefix,
            ..ModelConfig::default()
        };
        let a = ClusterStats::from_counts([(0, 5), (1, 9), (2, 1), (3, 7)], 1);
        let b = ClusterStats::from_counts([(0, 4), (1, 1), (2, 9), (3, 6)], 1);
        let all = fs(&[0, 1, 2, 3]);
        let (_, d) = greedy_noise_selection(&a, &b, &all, &cfg);
        assert!(d >= merge_delta(&a, &b, &all, &cfg.alpha));
        assert!(d >= 0.0);
    }

    #[test]
    fn best_merge_picks_the_near_identical_pair() {
        let cfg = ModelConfig::default();
        let u = [0, 1, 2, 3, 4, 5];
        let n0 = with_stats(leaf(0, &u), &[(0, 30), (1, 30), (2, 10)]);
        let n1 = with_stats(leaf(1, &u), &[(0, 29), (1, 31), (2, 11)]);
        let n2 = with_stats(leaf(2, &u), &[(3, 30), (4, 30), (5, 10)]);
        let p = best_merge(&[&n0, &n1, &n2], &cfg).unwrap();
        assert_eq!((p.left, p.right), (0, 1));
        assert!(p.delta > 0.0);
        let d02 = evaluate_pair(&n0, &n2, &cfg).delta;
        let d12 = evaluate_pair(&n1, &n2, &cfg).delta;
        assert!(p.delta > d02 && p.delta > d12);
    }

    #[test]
    fn identical_nodes_merge_and_disjoint_ones_do_not() {
        let cfg = ModelConfig::default();
        let a = with_stats(leaf(0, &[0, 1]), &[(0, 1), (1, 1)]);
        let b = with_stats(leaf(1, &[0, 1]), &[(0, 1), (1, 1)]);
        let p = best_merge(&[&a, &b], &cfg).unwrap();
        assert!((p.delta - 1.2f64.ln()).abs() < 1e-12);
        let c = with_stats(leaf(0, &[0, 1]), &[(0, 2)]);
        let d = with_stats(leaf(1, &[0, 1]), &[(1, 2)]);
        assert!(best_merge(&[&c, &d], &cfg).is_none());
    }

    fn flat_from_stats(stats: Vec<ClusterStats>, m: usize, cfg: &ModelConfig) -> FlatClustering {
        let partition = FeaturePartition::all_useful(m);
        let mut assignments = Vec::new();
        for (k, s) in stats.iter().enumerate() {
            assignments.extend(std::iter::repeat_n(k, s.doc_count() as usize));
        }
        let score = log_flat(&stats, &partition, cfg).unwrap();
        FlatClustering {
            k: stats.len(),
            assignments,
            stats,
            partition,
            score,
            requested_k: 0,
            seed: 0,
        }
    }

    #[test]
    fn single_cluster_gives_a_bare_leaf() {
        let cfg = ModelConfig::default();
        let flat = flat_from_stats(vec![ClusterStats::from_counts([(0, 4)], 2)], 3, &cfg);
        let d = run_mhac(&flat, &cfg).unwrap();
        assert_eq!(d.n_merges(), 0);
        assert_eq!(d.root(), Some(0));
    }

    #[test]
    fn disjoint_supports_never_merge() {
        let cfg = ModelConfig::default();
        let stats = (0..3u32)
            .map(|k| ClusterStats::from_counts([(2 * k, 10), (2 * k + 1, 10)], 2))
            .collect();
        let flat = flat_from_stats(stats, 6, &cfg);
        let d = run_mhac(&flat, &cfg).unwrap();
        assert_eq!(d.n_merges(), 0);
        let root = d.node(d.root().unwrap()).unwrap();
        assert!(root.synthetic);
        assert_eq!(root.children.len(), 3);
    }

    #[test]
    fn cached_run_matches_naive_rounds_and_the_tree_score() {
        let cfg = ModelConfig::default();
        // Two pairs that share f0..f3 within the pair, plus pair-specific features.
        let stats = vec![
            ClusterStats::from_counts([(0, 40), (1, 20), (2, 10), (4, 30)], 5),
            ClusterStats::from_counts([(0, 41), (1, 19), (2, 11), (5, 30)], 5),
            ClusterStats::from_counts([(6, 40), (7, 20), (3, 10), (8, 30)], 5),
            ClusterStats::from_counts([(6, 39), (7, 21), (3, 10), (9, 30)], 5),
        ];
        let flat = flat_from_stats(stats, 10, &cfg);
        let d = run_mhac(&flat, &cfg).unwrap();
        d.check_invariants().unwrap();

        let mut naive = Dendrogram::from_leaves(
            flat.stats.iter().cloned().zip(flat.members()).collect(),
            flat.partition.useful(),
        )
        .unwrap();
        loop {
            let roots = naive.forest_roots();
            let active: Vec<&HierarchyNode> =
                roots.iter().map(|&r| naive.node(r).unwrap()).collect();
            if active.len() < 3 {
                break;
            }
            let Some(p) = best_merge(&active, &cfg) else {
                break;
            };
            naive.merge(p.left, p.right, p.noise, p.delta).unwrap();
        }
        naive.finish();
        assert_eq!(naive, d);
        assert_eq!(d.n_merges(), 2);

        let total: f64 = d.merge_trace().iter().map(|m| m.delta).sum();
        let h = log_hierarchy(&d, &flat.partition, &cfg).unwrap();
        assert!((h - flat.score - total).abs() < 1e-9 * h.abs());
    }

    #[test]
    fn fs_mode_never_forms_the_root() {
        let cfg = ModelConfig::default();
        let s = ClusterStats::from_counts([(0, 10), (1, 10)], 2);
        let flat = flat_from_stats(vec![s.clone(), s.clone(), s], 2, &cfg);
        let d = run_mhac(&flat, &cfg).unwrap();
        assert_eq!(d.n_merges(), 1);
        assert!(d.node(d.root().unwrap()).unwrap().synthetic);
    }

    #[test]
    fn no_fs_mode_merges_to_one_root() {
        let cfg = ModelConfig {
            mode: MergeMode::NoFs,
            ..ModelConfig::default()
        };
        let stats = (0..4u32)
            .map(|k| ClusterStats::from_counts([(k, 10), (4, 3)], 2))
            .collect();
        let flat = flat_from_stats(stats, 5, &cfg);
        let d = run_mhac(&flat, &cfg).unwrap();
        assert_eq!(d.n_merges(), 3);
        assert!(!d.node(d.root().unwrap()).unwrap().synthetic);
        assert!(d.merge_trace().iter().any(|m| m.delta < 0.0));
        let total: f64 = d.merge_trace().iter().map(|m| m.delta).sum();
        let h = log_hierarchy(&d, &flat.partition, &cfg).unwrap();
        assert!((h - flat.score - total).abs() < 1e-9 * h.abs());
        d.check_invariants().unwrap();
    }
}
