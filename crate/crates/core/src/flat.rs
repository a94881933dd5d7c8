//! First stage: hard-assignment EM over a multinomial mixture, restarted over
//! a range of cluster counts and scored by the flat marginal likelihood.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{ln_gamma, log_flat, log_split};
use crate::model::{
    stats_from_assignment, ClusterStats, FeatureId, FeaturePartition, FeatureSet, ModelConfig,
    Prior, SparseDocMatrix,
};

/// A hard partition of the documents plus its flat score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatClustering {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub stats: Vec<ClusterStats>,
    pub partition: FeaturePartition,
    /// `log_flat(stats, partition, config)`, nats.
    pub score: f64,
    /// Cluster count the producing run started from (before empty clusters were dropped).
    pub requested_k: usize,
    pub seed: u64,
}

impl FlatClustering {
    /// Builds a clustering from raw assignments, dropping empty clusters.
    pub fn from_assignments(
        data: &SparseDocMatrix,
        assignments: &[usize],
        partition: FeaturePartition,
        config: &ModelConfig,
    ) -> Result<Self> {
        let assignments = compact(assignments);
        let k = assignments.iter().max().map_or(0, |m| m + 1);
        if k == 0 {
            return Err(Error::input("cannot cluster an empty corpus"));
        }
        let stats = stats_from_assignment(data, &assignments, k)?;
        let score = log_flat(&stats, &partition, config)?;
        Ok(Self {
            k,
            assignments,
            stats,
            partition,
            score,
            requested_k: k,
            seed: config.seed,
        })
    }

    /// Document ids of each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (doc, &c) in self.assignments.iter().enumerate() {
            out[c].push(doc);
        }
        out
    }
}

/// Relabels cluster ids to `0..K'`, dropping unused ids and keeping the
/// relative order of the survivors.
fn compact(assignments: &[usize]) -> Vec<usize> {
    let max = assignments.iter().copied().max().map_or(0, |m| m + 1);
    let mut used = vec![false; max];
    for &c in assignments {
        used[c] = true;
    }
    let mut map = vec![usize::MAX; max];
    let mut next = 0;
    for (old, u) in used.iter().enumerate() {
        if *u {
            map[old] = next;
            next += 1;
        }
    }
    assignments.iter().map(|&c| map[c]).collect()
}

/// Dense log of smoothed term probabilities `(τ_j + α_j) / (t + α₀)` over
/// every feature.
fn smoothed_log_probs(
    counts: impl Iterator<Item = (FeatureId, u64)>,
    total: u64,
    alpha: &Prior,
    m: usize,
) -> Vec<f64> {
    let norm = (total as f64 + alpha.sum_first(m)).ln();
    let mut out: Vec<f64> = (0..m).map(|j| alpha.get(j).ln() - norm).collect();
    for (f, c) in counts {
        out[f as usize] = (c as f64 + alpha.get(f as usize)).ln() - norm;
    }
    out
}

/// Cross-entropy of a document row against a dense log-probability table.
fn row_log_lik(row: &[(FeatureId, u32)], log_p: &[f64]) -> f64 {
    row.iter().map(|&(f, c)| c as f64 * log_p[f as usize]).sum()
}

/// Initial hard assignment into `k` non-empty clusters.
///
/// Picks `k` distinct seed documents: the first uniformly, each further one
/// with probability proportional to its divergence from the closest seed
/// chosen so far (scored with `alpha`-smoothed term distributions). Every
/// document then goes to its best-fitting seed; seeds stay in their own
/// cluster. Deterministic in `seed`.
pub fn init_assignments(
    data: &SparseDocMatrix,
    k: usize,
    alpha: &Prior,
    seed: u64,
) -> Result<Vec<usize>> {
    let n = data.n_docs();
    if k == 0 || k > n {
        return Err(Error::input(format!(
            "cannot initialize {k} clusters over {n} documents"
        )));
    }
    let m = data.n_features();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Each document's fit to its own smoothed distribution, the divergence baseline.
    let self_fit: Vec<f64> = (0..n)
        .map(|d| {
            let row = data.row(d);
            let lp = smoothed_log_probs(
                row.iter().map(|&(f, c)| (f, c as u64)),
                data.doc_total(d),
                alpha,
                m,
            );
            row_log_lik(row, &lp)
        })
        .collect();

    let mut seeds: Vec<usize> = Vec::with_capacity(k);
    let mut tables: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut chosen = vec![false; n];
    let mut closest = vec![f64::INFINITY; n];
    while seeds.len() < k {
        let next = if seeds.is_empty() {
            rng.random_range(0..n)
        } else {
            let weights: Vec<f64> = (0..n)
                .map(|d| if chosen[d] { 0.0 } else { closest[d].max(0.0) })
                .collect();
            let total: f64 = weights.iter().sum();
            if total > 0.0 && total.is_finite() {
                let mut x = rng.random::<f64>() * total;
                let mut pick = None;
                for (d, w) in weights.iter().enumerate() {
                    if *w > 0.0 {
                        pick = Some(d);
                        if x < *w {
                            break;
                        }
                        x -= w;
                    }
                }
                pick.expect("positive total weight")
            } else {
                let free: Vec<usize> = (0..n).filter(|&d| !chosen[d]).collect();
                free[rng.random_range(0..free.len())]
            }
        };
        chosen[next] = true;
        seeds.push(next);
        let row = data.row(next);
        let table = smoothed_log_probs(
            row.iter().map(|&(f, c)| (f, c as u64)),
            data.doc_total(next),
            alpha,
            m,
        );
        for d in 0..n {
            let div = self_fit[d] - row_log_lik(data.row(d), &table);
            if div < closest[d] {
                closest[d] = div;
            }
        }
        tables.push(table);
    }

    let mut out: Vec<usize> = (0..n)
        .map(|d| {
            let row = data.row(d);
            let mut best = 0;
            let mut best_ll = f64::NEG_INFINITY;
            for (c, t) in tables.iter().enumerate() {
                let ll = row_log_lik(row, t);
                if ll > best_ll {
                    best_ll = ll;
                    best = c;
                }
            }
            best
        })
        .collect();
    for (c, &d) in seeds.iter().enumerate() {
        out[d] = c;
    }
    Ok(out)
}

/// Reassigns every document to the cluster with the highest posterior score
/// under smoothed parameters over the useful features. Ties go to the lower id.
fn e_step(
    data: &SparseDocMatrix,
    stats: &[ClusterStats],
    useful: &FeatureSet,
    useful_mask: &[bool],
    config: &ModelConfig,
) -> Vec<usize> {
    let m = data.n_features();
    let k = stats.len();
    let n_docs = data.n_docs() as f64;
    let sigma_total = config.sigma.sum_first(k);
    let alpha0 = config.alpha.sum_over(useful);

    let tables: Vec<(f64, Vec<f64>)> = stats
        .iter()
        .enumerate()
        .map(|(c, s)| {
            let log_weight =
                (s.doc_count() as f64 + config.sigma.get(c)).ln() - (n_docs + sigma_total).ln();
            let t_useful = s.tokens_in(useful) as f64;
            let norm = (t_useful + alpha0).ln();
            let mut lp: Vec<f64> = (0..m).map(|j| config.alpha.get(j).ln() - norm).collect();
            for (&f, &cnt) in s.term_counts() {
                lp[f as usize] = (cnt as f64 + config.alpha.get(f as usize)).ln() - norm;
            }
            (log_weight, lp)
        })
        .collect();

    (0..data.n_docs())
        .map(|d| {
            let row = data.row(d);
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (c, (lw, lp)) in tables.iter().enumerate() {
                let score = lw
                    + row
                        .iter()
                        .filter(|(f, _)| useful_mask[*f as usize])
                        .map(|&(f, cnt)| cnt as f64 * lp[f as usize])
                        .sum::<f64>();
                if score > best_score {
                    best_score = score;
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// One EM run from a seeded initialization.
///
/// Alternates hard E-steps and statistic updates until no more than
/// `config.em_tol` documents move or `config.em_max_iters` is reached.
/// Clusters that empty out are dropped. Returns the best-scoring partition
/// visited, which is never worse than the initial one.
pub fn em_run(
    data: &SparseDocMatrix,
    k: usize,
    partition: &FeaturePartition,
    config: &ModelConfig,
    seed: u64,
) -> Result<FlatClustering> {
    partition.validate(data.n_features())?;
    let useful = partition.useful();
    let mut useful_mask = vec![false; data.n_features()];
    for &f in useful {
        useful_mask[f as usize] = true;
    }

    let mut assign = compact(&init_assignments(data, k, &config.alpha, seed)?);
    let mut best = FlatClustering::from_assignments(data, &assign, partition.clone(), config)?;
    for _ in 0..config.em_max_iters {
        let kc = assign.iter().max().map_or(0, |m| m + 1);
        let stats = stats_from_assignment(data, &assign, kc)?;
        let next = compact(&e_step(data, &stats, useful, &useful_mask, config));
        let changed = next.iter().zip(&assign).filter(|(a, b)| a != b).count();
        assign = next;
        let current = FlatClustering::from_assignments(data, &assign, partition.clone(), config)?;
        if current.score > best.score {
            best = current;
        }
        if changed <= config.em_tol {
            break;
        }
    }
    best.requested_k = k;
    best.seed = seed;
    Ok(best)
}

/// Runs EM for every K in `config.k_range` (capped at the number of
/// documents) and every restart, and keeps the highest score. Ties go to the
/// smaller K, then the smaller seed. Restart `r` uses seed `config.seed + r`.
pub fn select_k(
    data: &SparseDocMatrix,
    partition: &FeaturePartition,
    config: &ModelConfig,
) -> Result<FlatClustering> {
    config.validate_for(data.n_features())?;
    let runs: Vec<(usize, u64)> = config
        .k_range
        .iter()
        .filter(|&k| k <= data.n_docs())
        .flat_map(|k| (0..config.restarts as u64).map(move |r| (k, config.seed.wrapping_add(r))))
        .collect();
    if runs.is_empty() {
        return Err(Error::input(format!(
            "no candidate K in {}..{} fits {} documents",
            config.k_range.min,
            config.k_range.max,
            data.n_docs()
        )));
    }
    let results: Vec<FlatClustering> = runs
        .par_iter()
        .map(|&(k, seed)| em_run(data, k, partition, config, seed))
        .collect::<Result<_>>()?;
    // Runs are in (K, seed) order, so keeping the first maximum applies the tie-breaks.
    let mut best: Option<FlatClustering> = None;
    for r in results {
        if best.as_ref().is_none_or(|b| r.score > b.score) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one run"))
}

/// Candidate root noise sets: prefixes of `order`, each with its flat score.
struct NoiseScan {
    order: Vec<FeatureId>,
    /// `(prefix length, score)`, starting with the empty prefix.
    candidates: Vec<(usize, f64)>,
}

fn ln_rising(a: f64, n: u64) -> f64 {
    if n == 0 {
        0.0
    } else {
        ln_gamma(a + n as f64) - ln_gamma(a)
    }
}

/// Running flat-score sums while features move from the useful block to the
/// noise block one at a time.
struct RunningFlat<'a> {
    config: &'a ModelConfig,
    membership: f64,
    beta0_n: f64,
    tokens_n: u64,
    noise_terms: f64,
    n_noise: usize,
    alpha0_u: f64,
    n_useful: usize,
    tokens_u: Vec<u64>,
    useful_terms: f64,
}

impl<'a> RunningFlat<'a> {
    fn new(stats: &[ClusterStats], n_features: usize, config: &'a ModelConfig) -> Self {
        let n_docs: u64 = stats.iter().map(|s| s.doc_count()).sum();
        let membership = stats
            .iter()
            .enumerate()
            .map(|(c, s)| ln_rising(config.sigma.get(c), s.doc_count()))
            .sum::<f64>()
            - ln_rising(config.sigma.sum_first(stats.len()), n_docs);
        let useful_terms = stats
            .iter()
            .flat_map(|s| s.term_counts().iter())
            .map(|(&f, &c)| ln_rising(config.alpha.feature(f), c))
            .sum();
        Self {
            config,
            membership,
            beta0_n: 0.0,
            tokens_n: 0,
            noise_terms: 0.0,
            n_noise: 0,
            alpha0_u: config.alpha.sum_first(n_features),
            n_useful: n_features,
            tokens_u: stats.iter().map(|s| s.total_tokens()).collect(),
            useful_terms,
        }
    }

    fn move_to_noise(&mut self, f: FeatureId, stats: &[ClusterStats], pooled: u64) {
        let (alpha, beta) = (&self.config.alpha, &self.config.beta);
        self.beta0_n += beta.feature(f);
        self.tokens_n += pooled;
        self.noise_terms += ln_rising(beta.feature(f), pooled);
        self.n_noise += 1;
        self.alpha0_u -= alpha.feature(f);
        self.n_useful -= 1;
        if self.n_useful == 0 {
            self.alpha0_u = 0.0;
        }
        for (c, s) in stats.iter().enumerate() {
            let t = s.count(f);
            self.tokens_u[c] -= t;
            self.useful_terms -= ln_rising(alpha.feature(f), t);
        }
    }

    fn score(&self) -> f64 {
        let (split, noise) = if self.n_noise == 0 {
            (0.0, 0.0)
        } else {
            let total_u = self.tokens_u.iter().sum();
            (
                log_split(
                    total_u,
                    self.tokens_n,
                    self.config.gamma_u,
                    self.config.gamma_n,
                ),
                self.noise_terms - ln_rising(self.beta0_n, self.tokens_n),
            )
        };
        let useful = if self.n_useful == 0 {
            0.0
        } else {
            self.useful_terms
                - self
                    .tokens_u
                    .iter()
                    .map(|&t| ln_rising(self.alpha0_u, t))
                    .sum::<f64>()
        };
        split + noise + self.membership + useful
    }
}

fn root_noise_scan(
    clustering: &FlatClustering,
    n_features: usize,
    config: &ModelConfig,
) -> NoiseScan {
    let stats = &clustering.stats;
    let alpha = &config.alpha;
    let pooled: ClusterStats = stats.iter().sum();
    let alpha0 = alpha.sum_first(n_features);
    let share = |s: &ClusterStats, j: usize| {
        (s.count(j as FeatureId) as f64 + alpha.get(j)) / (s.total_tokens() as f64 + alpha0)
    };

    // Rank by the largest deviation of any cluster's smoothed share from the pooled one.
    let mut keyed: Vec<(f64, FeatureId)> = (0..n_features)
        .map(|j| {
            let g = share(&pooled, j);
            let key = stats
                .iter()
                .map(|s| (share(s, j) - g).abs())
                .fold(0.0, f64::max);
            (key, j as FeatureId)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut running = RunningFlat::new(stats, n_features, config);
    let mut candidates = vec![(0, running.score())];
    let mut i = 0;
    while i < keyed.len() {
        // Features with equal keys move together.
        let key = keyed[i].0;
        while i < keyed.len() && keyed[i].0 == key {
            let f = keyed[i].1;
            running.move_to_noise(f, stats, pooled.count(f));
            i += 1;
        }
        candidates.push((i, running.score()));
    }
    NoiseScan {
        order: keyed.into_iter().map(|(_, f)| f).collect(),
        candidates,
    }
}

/// Greedy search for global noise features given a fixed clustering.
///
/// Features are ranked by how far their smoothed share in any cluster strays
/// from the pooled share; prefixes of that ranking (tied features move as a
/// group) become the noise set, and the best-scoring prefix wins. The empty
/// set is always a candidate.
pub fn root_noise_search(
    data: &SparseDocMatrix,
    clustering: &FlatClustering,
    config: &ModelConfig,
) -> Result<FeaturePartition> {
    let m = data.n_features();
    let scan = root_noise_scan(clustering, m, config);
    let mut best = scan.candidates[0];
    for &c in &scan.candidates[1..] {
        if c.1 > best.1 {
            best = c;
        }
    }
    FeaturePartition::with_noise(m, scan.order[..best.0].iter().copied().collect())
}

/// Full flat stage: model selection over K, then the optional root noise search.
pub fn fit_flat(data: &SparseDocMatrix, config: &ModelConfig) -> Result<FlatClustering> {
    let partition = FeaturePartition::all_useful(data.n_features());
    let mut best = select_k(data, &partition, config)?;
    if config.root_noise {
        let partition = root_noise_search(data, &best, config)?;
        best.score = log_flat(&best.stats, &partition, config)?;
        best.partition = partition;
    }
    Ok(best)
}
