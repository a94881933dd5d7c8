//! Closed-form log marginal likelihoods (nats) of multinomial counts under
//! Dirichlet priors.
//!
//! Document multinomial coefficients are left out everywhere: they depend only
//! on the fixed per-document counts and cancel in every comparison.

use crate::error::{Error, Result};
use crate::model::{ClusterStats, Dendrogram, FeaturePartition, FeatureSet, ModelConfig, Prior};

/// Natural log of the gamma function for `x > 0`.
#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `ln Γ(a + n) − ln Γ(a)`, the log rising factorial.
#[inline]
fn ln_rising(a: f64, n: u64) -> f64 {
    if n == 0 {
        0.0
    } else {
        ln_gamma(a + n as f64) - ln_gamma(a)
    }
}

/// Multinomial-Dirichlet log marginal likelihood of `stats` projected onto
/// `feats`:
///
/// ```text
/// ln Γ(α₀) − ln Γ(α₀ + n) + Σ_j [ln Γ(α_j + t_j) − ln Γ(α_j)]
/// ```
///
/// with α₀ the prior mass of `feats` and n the token count inside it. An
/// empty feature set contributes nothing.
pub fn log_md(stats: &ClusterStats, feats: &FeatureSet, alpha: &Prior) -> f64 {
    if feats.is_empty() {
        return 0.0;
    }
    let alpha0 = alpha.sum_over(feats);
    let mut n = 0u64;
    let mut acc = 0.0;
    for (&f, &t) in stats.term_counts() {
        if feats.contains(&f) {
            n += t;
            acc += ln_rising(alpha.feature(f), t);
        }
    }
    acc - ln_rising(alpha0, n)
}

/// Beta-binomial log probability of how `n_a + n_b` tokens split between two
/// blocks with prior masses `mass_a` and `mass_b` (no binomial coefficient).
///
/// Together with [`log_md`] this gives the aggregation identity
/// `log_md(A ∪ B) = log_split(n_A, n_B, α₀(A), α₀(B)) + log_md(A) + log_md(B)`.
/// A block with zero mass must hold zero tokens and then contributes nothing.
pub fn log_split(n_a: u64, n_b: u64, mass_a: f64, mass_b: f64) -> f64 {
    if mass_a == 0.0 || mass_b == 0.0 {
        debug_assert!(
            (mass_a > 0.0 || n_a == 0) && (mass_b > 0.0 || n_b == 0),
            "tokens in an empty block"
        );
        return 0.0;
    }
    ln_rising(mass_a, n_a) + ln_rising(mass_b, n_b) - ln_rising(mass_a + mass_b, n_a + n_b)
}

/// The four factors of the flat-clustering score, kept apart so callers can
/// see which ones a change touches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatScore {
    /// Split of all tokens between the useful and noise subspaces.
    pub type_split: f64,
    /// Pooled noise-feature counts under one shared distribution.
    pub noise_block: f64,
    /// Document counts per cluster.
    pub membership: f64,
    /// Per-cluster useful-feature counts.
    pub useful: f64,
}

impl FlatScore {
    pub fn total(&self) -> f64 {
        self.type_split + self.noise_block + self.membership + self.useful
    }
}

/// Factorized log marginal likelihood of a flat clustering.
///
/// The type-split and noise factors vanish when there are no noise features.
pub fn flat_score(
    clusters: &[ClusterStats],
    partition: &FeaturePartition,
    config: &ModelConfig,
) -> Result<FlatScore> {
    if clusters.is_empty() {
        return Err(Error::input("log_flat needs at least one cluster"));
    }
    let noise = partition.noise();
    let useful = partition.useful();

    let (type_split, noise_block) = if noise.is_empty() {
        (0.0, 0.0)
    } else {
        let pooled: ClusterStats = clusters.iter().sum();
        let t_n = pooled.tokens_in(noise);
        let t_u = pooled.total_tokens() - t_n;
        (
            log_split(t_u, t_n, config.gamma_u, config.gamma_n),
            log_md(&pooled, noise, &config.beta),
        )
    };

    let n_docs: u64 = clusters.iter().map(|c| c.doc_count()).sum();
    let sigma_total = config.sigma.sum_first(clusters.len());
    let membership = clusters
        .iter()
        .enumerate()
        .map(|(k, c)| ln_rising(config.sigma.get(k), c.doc_count()))
        .sum::<f64>()
        - ln_rising(sigma_total, n_docs);

    let useful_ll = clusters
        .iter()
        .map(|c| log_md(c, useful, &config.alpha))
        .sum();

    Ok(FlatScore {
        type_split,
        noise_block,
        membership,
        useful: useful_ll,
    })
}

/// Log marginal likelihood of a flat clustering with feature partition
/// `(N, U)`.
pub fn log_flat(
    clusters: &[ClusterStats],
    partition: &FeaturePartition,
    config: &ModelConfig,
) -> Result<f64> {
    flat_score(clusters, partition, config).map(|s| s.total())
}

/// Running merge delta over a growing noise set; adding features one at a
/// time gives the delta of every prefix in linear time.
#[derive(Debug, Clone, Default)]
pub(crate) struct DeltaAccumulator {
    mass: f64,
    tokens_a: u64,
    tokens_b: u64,
    per_feature: f64,
    len: usize,
}

impl DeltaAccumulator {
    pub(crate) fn push(&mut self, alpha_j: f64, a: u64, b: u64) {
        self.mass += alpha_j;
        self.tokens_a += a;
        self.tokens_b += b;
        self.len += 1;
        if a > 0 && b > 0 {
            self.per_feature +=
                ln_rising(alpha_j, a + b) - (ln_rising(alpha_j, a) + ln_rising(alpha_j, b));
        }
    }

    pub(crate) fn delta(&self) -> f64 {
        // Sharing a single feature is a no-op; skip the rounding residue.
        if self.len <= 1 {
            return 0.0;
        }
        ln_rising(self.mass, self.tokens_a) + ln_rising(self.mass, self.tokens_b)
            - ln_rising(self.mass, self.tokens_a + self.tokens_b)
            + self.per_feature
    }
}

/// Change in log marginal likelihood when clusters `a` and `b` start sharing
/// one distribution over `noise`:
///
/// ```text
/// ln[Γ(α₀+t_a)Γ(α₀+t_b) / (Γ(α₀)Γ(α₀+t_a+t_b))]
///   + Σ_j ln[Γ(α_j+τ_a,j+τ_b,j)Γ(α_j) / (Γ(α_j+τ_a,j)Γ(α_j+τ_b,j))]
/// ```
///
/// All counts are projections onto `noise`, so nothing but the two clusters'
/// statistics is read. An empty noise set changes nothing.
pub fn merge_delta(a: &ClusterStats, b: &ClusterStats, noise: &FeatureSet, alpha: &Prior) -> f64 {
    let mut acc = DeltaAccumulator::default();
    for &f in noise {
        acc.push(alpha.feature(f), a.count(f), b.count(f));
    }
    acc.delta()
}

/// Log marginal likelihood of a whole hierarchy, recomputed from the node
/// statistics by walking the tree.
///
/// Each node keeps one shared distribution over its own block of features:
/// a leaf over the useful set, an internal node over the noise it shares
/// with its subtree. When a node's parent shares part of that block further
/// up, the node keeps the rest of the block plus the split of its tokens
/// between the two parts. The flat-stage factors (type split, root noise,
/// membership) are carried over unchanged.
///
/// With no merges this equals [`log_flat`]; each merge changes it by exactly
/// its [`merge_delta`].
pub fn log_hierarchy(
    tree: &Dendrogram,
    partition: &FeaturePartition,
    config: &ModelConfig,
) -> Result<f64> {
    let leaves: Vec<ClusterStats> = tree.nodes()[..tree.n_leaves()]
        .iter()
        .map(|n| n.stats.clone())
        .collect();
    let flat = flat_score(&leaves, partition, config)?;
    let mut total = flat.type_split + flat.noise_block + flat.membership;

    let alpha = &config.alpha;
    for node in tree.nodes() {
        if node.synthetic {
            continue;
        }
        let parent_noise = node
            .parent
            .map(|p| &tree.nodes()[p])
            .filter(|p| !p.synthetic)
            .map(|p| &p.local_noise);
        match parent_noise {
            Some(shared) => {
                let kept: FeatureSet = node.eligible.difference(shared).copied().collect();
                let shared_tokens = node.stats.tokens_in(shared);
                let kept_tokens = node.stats.tokens_in(&kept);
                total += log_split(
                    shared_tokens,
                    kept_tokens,
                    alpha.sum_over(shared),
                    alpha.sum_over(&kept),
                );
                total += log_md(&node.stats, &kept, alpha);
            }
            None => total += log_md(&node.stats, &node.eligible, alpha),
        }
    }
    Ok(total)
}
