use serde::{Deserialize, Serialize};

use super::corpus::FeatureId;
use super::stats::FeatureSet;
use crate::error::{Error, Result};

/// Dirichlet hyperparameters: one shared value or one value per index.
///
/// Every entry is strictly positive; construction and deserialization reject
/// anything else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, try_from = "PriorRepr")]
pub enum Prior {
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PriorRepr {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl TryFrom<PriorRepr> for Prior {
    type Error = Error;

    fn try_from(r: PriorRepr) -> Result<Self> {
        match r {
            PriorRepr::Scalar(x) => Prior::scalar(x),
            PriorRepr::Vector(v) => Prior::vector(v),
        }
    }
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

impl Prior {
    pub fn scalar(x: f64) -> Result<Self> {
        if !positive(x) {
            return Err(Error::input(format!("hyperparameter must be > 0, got {x}")));
        }
        Ok(Prior::Scalar(x))
    }

    pub fn vector(v: Vec<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::input("empty hyperparameter vector"));
        }
        if let Some(x) = v.iter().find(|x| !positive(**x)) {
            return Err(Error::input(format!("hyperparameter must be > 0, got {x}")));
        }
        Ok(Prior::Vector(v))
    }

    /// The uniform prior.
    pub fn ones() -> Self {
        Prior::Scalar(1.0)
    }

    /// Hyperparameter of index `i`. Panics if a vector prior is too short;
    /// [`ModelConfig::validate_for`] rules that out up front.
    pub fn get(&self, i: usize) -> f64 {
        match self {
            Prior::Scalar(x) => *x,
            Prior::Vector(v) => v[i],
        }
    }

    /// Sum over a feature set, i.e. the α₀ of that block.
    pub fn sum_over(&self, feats: &FeatureSet) -> f64 {
        match self {
            Prior::Scalar(x) => x * feats.len() as f64,
            Prior::Vector(v) => feats.iter().map(|&f| v[f as usize]).sum(),
        }
    }

    pub fn sum_first(&self, n: usize) -> f64 {
        match self {
            Prior::Scalar(x) => x * n as f64,
            Prior::Vector(v) => v[..n].iter().sum(),
        }
    }

    fn covers(&self, n: usize) -> bool {
        match self {
            Prior::Scalar(_) => true,
            Prior::Vector(v) => v.len() >= n,
        }
    }

    pub(crate) fn feature(&self, f: FeatureId) -> f64 {
        self.get(f as usize)
    }
}

impl Default for Prior {
    fn default() -> Self {
        Prior::ones()
    }
}

/// How the greedy noise search picks a prefix of the ranked features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrefixRule {
    /// Keep extending while the merge delta does not drop.
    #[default]
    StopAtFirstDecrease,
    /// Evaluate every prefix and keep the best.
    BestPrefix,
}

/// Merge driver for the agglomerative stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeMode {
    /// Per-merge noise feature selection; stop when no merge improves the score.
    #[default]
    Fs,
    /// Share the entire eligible set at every merge and always merge to one root.
    NoFs,
}

/// Inclusive range of candidate cluster counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KRange {
    pub min: usize,
    pub max: usize,
}

impl KRange {
    pub fn new(min: usize, max: usize) -> Result<Self> {
        let r = KRange { min, max };
        r.validate()?;
        Ok(r)
    }

    pub fn single(k: usize) -> Self {
        KRange { min: k, max: k }
    }

    fn validate(&self) -> Result<()> {
        if self.min < 1 || self.min > self.max {
            return Err(Error::input(format!(
                "invalid k range {}..{}",
                self.min, self.max
            )));
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> {
        self.min..=self.max
    }
}

impl std::str::FromStr for KRange {
    type Err = Error;

    /// Accepts `A..B` (inclusive) or a single integer.
    fn from_str(s: &str) -> Result<Self> {
        let parse = |x: &str| {
            x.trim()
                .parse::<usize>()
                .map_err(|_| Error::input(format!("bad k range {s:?}")))
        };
        match s.split_once("..") {
            Some((a, b)) => KRange::new(parse(a)?, parse(b.trim_start_matches('='))?),
            None => {
                let k = parse(s)?;
                KRange::new(k, k)
            }
        }
    }
}

/// Every hyperparameter and search setting of the two-stage pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Per-feature prior on useful-feature distributions.
    pub alpha: Prior,
    /// Per-feature prior on the root noise block.
    pub beta: Prior,
    pub gamma_u: f64,
    pub gamma_n: f64,
    /// Per-cluster prior on the membership proportions.
    pub sigma: Prior,
    pub k_range: KRange,
    pub restarts: usize,
    pub seed: u64,
    pub em_max_iters: usize,
    /// EM stops once at most this many documents change cluster in an iteration.
    pub em_tol: usize,
    pub prefix_rule: PrefixRule,
    pub mode: MergeMode,
    pub root_noise: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            alpha: Prior::ones(),
            beta: Prior::ones(),
            gamma_u: 1.0,
            gamma_n: 1.0,
            sigma: Prior::ones(),
            k_range: KRange { min: 3, max: 7 },
            restarts: 3,
            seed: 0,
            em_max_iters: 100,
            em_tol: 0,
            prefix_rule: PrefixRule::default(),
            mode: MergeMode::default(),
            root_noise: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !positive(self.gamma_u) || !positive(self.gamma_n) {
            return Err(Error::input("gamma hyperparameters must be > 0"));
        }
        self.k_range.validate()?;
        if self.restarts == 0 {
            return Err(Error::input("restarts must be positive"));
        }
        if self.em_max_iters == 0 {
            return Err(Error::input("em_max_iters must be positive"));
        }
        Ok(())
    }

    /// [`validate`](Self::validate) plus length checks of vector priors
    /// against the lexicon size and the largest candidate K.
    pub fn validate_for(&self, n_features: usize) -> Result<()> {
        self.validate()?;
        if !self.alpha.covers(n_features) || !self.beta.covers(n_features) {
            return Err(Error::input(format!(
                "alpha/beta vectors must have at least {n_features} entries"
            )));
        }
        if !self.sigma.covers(self.k_range.max) {
            return Err(Error::input(format!(
                "sigma vector must have at least {} entries",
                self.k_range.max
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn priors_reject_non_positive_values() {
        assert!(Prior::scalar(0.0).is_err());
        assert!(Prior::scalar(f64::NAN).is_err());
        assert!(Prior::vector(vec![1.0, -2.0]).is_err());
        assert!(serde_json::from_str::<Prior>("-1.0").is_err());
        assert_eq!(
            serde_json::from_str::<Prior>("[1.0, 2.5]").unwrap().get(1),
            2.5
        );
    }

    #[test]
    fn prior_block_sums() {
        let feats: FeatureSet = [0, 2].into_iter().collect();
        assert_eq!(Prior::Scalar(0.5).sum_over(&feats), 1.0);
        assert_eq!(Prior::Vector(vec![1.0, 2.0, 3.0]).sum_over(&feats), 4.0);
    }

    #[test]
    fn k_range_parsing() {
        assert_eq!("3..7".parse::<KRange>().unwrap(), KRange { min: 3, max: 7 });
        assert_eq!("4".parse::<KRange>().unwrap(), KRange::single(4));
        assert!("0..2".parse::<KRange>().is_err());
        assert!("5..2".parse::<KRange>().is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = ModelConfig {
            alpha: Prior::Vector(vec![1.0, 0.5]),
            prefix_rule: PrefixRule::BestPrefix,
            ..ModelConfig::default()
        };
        let text = toml::to_string(&c).unwrap();
        let back: ModelConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
        let partial: ModelConfig = toml::from_str("restarts = 5\nmode = \"no-fs\"").unwrap();
        assert_eq!(partial.restarts, 5);
        assert_eq!(partial.mode, MergeMode::NoFs);
        assert!(c.validate_for(3).is_err());
    }
}
