//! Bandit instances: ground-truth arm distributions, summaries and the
//! instance file format.
//!
//! Instance files are JSON documents:
//!
//! ```json
//! {
//!   "format": "infucb-instance",
//!   "version": 1,
//!   "label": "two-spike n=4 m=2",
//!   "threshold_mu0": 0.0,
//!   "epsilon": 1.0,
//!   "arms": [
//!     { "kind": "gaussian", "mean": 1.0, "variance": 1.0 },
//!     { "kind": "bernoulli", "p": 0.3 }
//!   ]
//! }
//! ```
//!
//! `threshold_mu0` and `epsilon` are optional. Floating point values are
//! written in shortest round-trip form, so save/load is lossless.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const INSTANCE_FORMAT: &str = "infucb-instance";
pub const INSTANCE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ArmDistribution {
    Gaussian { mean: f64, variance: f64 },
    Bernoulli { p: f64 },
}

impl ArmDistribution {
    pub fn mean(&self) -> f64 {
        match *self {
            ArmDistribution::Gaussian { mean, .. } => mean,
            ArmDistribution::Bernoulli { p } => p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ArmDistribution::Gaussian { mean, variance } => {
                if !mean.is_finite() {
                    return Err(Error::InvalidParameter(format!("gaussian mean must be finite, got {mean}")));
                }
                if !(variance > 0.0 && variance.is_finite()) {
                    return Err(Error::InvalidParameter(format!("gaussian variance must be positive, got {variance}")));
                }
            }
            ArmDistribution::Bernoulli { p } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidParameter(format!("bernoulli p must lie in [0,1], got {p}")));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ArmDistribution::Gaussian { mean, variance } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + variance.sqrt() * z
            }
            ArmDistribution::Bernoulli { p } => {
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArmKind {
    Gaussian,
    Bernoulli,
}

impl std::str::FromStr for ArmKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(ArmKind::Gaussian),
            "bernoulli" => Ok(ArmKind::Bernoulli),
            other => Err(Error::InvalidParameter(format!("unknown arm kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BanditInstance {
    pub label: String,
    pub threshold_mu0: Option<f64>,
    pub epsilon: Option<f64>,
    arms: Vec<ArmDistribution>,
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    format: String,
    version: u32,
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold_mu0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    arms: Vec<ArmDistribution>,
}

impl BanditInstance {
    pub fn new(label: impl Into<String>, arms: Vec<ArmDistribution>) -> Result<Self> {
        if arms.is_empty() {
            return Err(Error::InvalidParameter("an instance needs at least one arm".into()));
        }
        for arm in &arms {
            arm.validate()?;
        }
        Ok(Self { label: label.into(), threshold_mu0: None, epsilon: None, arms })
    }

    pub fn with_threshold(mut self, mu0: f64) -> Self {
        self.threshold_mu0 = Some(mu0);
        self
    }

    pub fn with_epsilon(mut self, eps: f64) -> Self {
        self.epsilon = Some(eps);
        self
    }

    pub fn gaussian(label: impl Into<String>, means: &[f64]) -> Result<Self> {
        Self::new(label, means.iter().map(|&mean| ArmDistribution::Gaussian { mean, variance: 1.0 }).collect())
    }

    pub fn bernoulli(label: impl Into<String>, ps: &[f64]) -> Result<Self> {
        Self::new(label, ps.iter().map(|&p| ArmDistribution::Bernoulli { p }).collect())
    }

    pub fn n_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn arms(&self) -> &[ArmDistribution] {
        &self.arms
    }

    pub fn means(&self) -> Vec<f64> {
        self.arms.iter().map(ArmDistribution::mean).collect()
    }

    pub fn max_mean(&self) -> f64 {
        self.arms.iter().map(ArmDistribution::mean).fold(f64::NEG_INFINITY, f64::max)
    }

    /// True when every arm is Bernoulli (rewards bounded in [0,1]).
    pub fn is_bounded(&self) -> bool {
        self.arms.iter().all(|a| matches!(a, ArmDistribution::Bernoulli { .. }))
    }

    pub fn sample_arm<R: Rng + ?Sized>(&self, arm: usize, rng: &mut R) -> Result<f64> {
        match self.arms.get(arm) {
            Some(d) => Ok(d.sample(rng)),
            None => Err(Error::ArmOutOfRange { index: arm, n: self.arms.len() }),
        }
    }

    #[inline]
    pub(crate) fn draw<R: Rng + ?Sized>(&self, arm: usize, rng: &mut R) -> f64 {
        self.arms[arm].sample(rng)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = InstanceFile {
            format: INSTANCE_FORMAT.into(),
            version: INSTANCE_VERSION,
            label: self.label.clone(),
            threshold_mu0: self.threshold_mu0,
            epsilon: self.epsilon,
            arms: self.arms.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text)?;
        if file.format != INSTANCE_FORMAT {
            return Err(Error::InvalidParameter(format!("not an instance file (format {:?})", file.format)));
        }
        if file.version != INSTANCE_VERSION {
            return Err(Error::InvalidParameter(format!("unsupported instance version {}", file.version)));
        }
        let mut inst = Self::new(file.label, file.arms)?;
        inst.threshold_mu0 = file.threshold_mu0;
        inst.epsilon = file.epsilon;
        Ok(inst)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// `m` arms at `mu0 + eps` and `n - m` arms at `mu0`, placed at random positions.
pub fn two_spike(n: usize, m: usize, mu0: f64, eps: f64, kind: ArmKind, seed: u64) -> Result<BanditInstance> {
    if m == 0 || m > n {
        return Err(Error::InvalidParameter(format!("two-spike needs 1 <= m <= n, got m={m}, n={n}")));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("two-spike needs eps > 0, got {eps}")));
    }
    if kind == ArmKind::Bernoulli && !(mu0 >= 0.0 && mu0 + eps <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "bernoulli two-spike needs 0 <= mu0 and mu0 + eps <= 1, got mu0={mu0}, eps={eps}"
        )));
    }
    let mut means: Vec<f64> = (0..n).map(|i| if i < m { mu0 + eps } else { mu0 }).collect();
    means.shuffle(&mut rng::stream(seed, rng::STREAM_INSTANCE));
    let label = format!("two-spike n={n} m={m} mu0={mu0} eps={eps}");
    let inst = match kind {
        ArmKind::Gaussian => BanditInstance::gaussian(label, &means)?,
        ArmKind::Bernoulli => BanditInstance::bernoulli(label, &means)?,
    };
    Ok(inst.with_threshold(mu0).with_epsilon(eps))
}

/// Means sorted in descending order plus the set sizes used by the hardness
/// functionals. Ranks are 1-based in the accessors, matching the formulas.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceSummary {
    pub sorted_means: Vec<f64>,
    /// `sort_permutation[arm] = rank - 1`.
    pub sort_permutation: Vec<usize>,
    /// `order[rank - 1] = arm`.
    pub order: Vec<usize>,
    pub eps: Option<f64>,
    pub mu0: Option<f64>,
    /// `|{i : mu_i > mu_1 - eps}|`
    pub m_eps: Option<usize>,
    /// `|{i : mu_i > mu0}|`
    pub m_thr: Option<usize>,
}

pub fn summarize(instance: &BanditInstance, eps: Option<f64>, mu0: Option<f64>) -> Result<InstanceSummary> {
    summarize_means(&instance.means(), eps, mu0)
}

pub fn summarize_means(means: &[f64], eps: Option<f64>, mu0: Option<f64>) -> Result<InstanceSummary> {
    if eps.is_none() && mu0.is_none() {
        return Err(Error::InvalidParameter("summarize needs eps or mu0".into()));
    }
    if means.is_empty() {
        return Err(Error::InvalidParameter("summarize needs at least one arm".into()));
    }
    if let Some(e) = eps {
        if !(e > 0.0) {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {e}")));
        }
    }
    let mut order: Vec<usize> = (0..means.len()).collect();
    // stable: ties keep original index order
    order.sort_by(|&a, &b| means[b].total_cmp(&means[a]));
    let sorted_means: Vec<f64> = order.iter().map(|&i| means[i]).collect();
    let mut sort_permutation = vec![0; means.len()];
    for (rank, &arm) in order.iter().enumerate() {
        sort_permutation[arm] = rank;
    }
    let top = sorted_means[0];
    let m_eps = eps.map(|e| sorted_means.iter().filter(|&&m| m > top - e).count());
    let m_thr = mu0.map(|t| sorted_means.iter().filter(|&&m| m > t).count());
    Ok(InstanceSummary { sorted_means, sort_permutation, order, eps, mu0, m_eps, m_thr })
}

impl InstanceSummary {
    pub fn n(&self) -> usize {
        self.sorted_means.len()
    }

    /// `mu_i` for 1-based rank `i`.
    pub fn mean_at(&self, rank: usize) -> f64 {
        self.sorted_means[rank - 1]
    }

    /// `Delta_{i,j} = mu_i - mu_j` for 1-based ranks.
    pub fn gap(&self, i: usize, j: usize) -> f64 {
        self.mean_at(i) - self.mean_at(j)
    }

    /// `Delta_{j,0} = mu_j - mu0`.
    pub fn gap_to_threshold(&self, j: usize) -> Option<f64> {
        self.mu0.map(|t| self.mean_at(j) - t)
    }

    /// Arms with `mu_i > mu0` (H_1), as original indices.
    pub fn h1_mask(&self) -> Option<Vec<bool>> {
        let t = self.mu0?;
        let mut mask = vec![false; self.n()];
        for (rank, &arm) in self.order.iter().enumerate() {
            mask[arm] = self.sorted_means[rank] > t;
        }
        Some(mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_bernoulli() {
        let inst = BanditInstance::bernoulli("b", &[1.0, 0.0]).unwrap();
        let mut r = rng::stream(1, 9);
        for _ in 0..100 {
            assert_eq!(inst.sample_arm(0, &mut r).unwrap(), 1.0);
            assert_eq!(inst.sample_arm(1, &mut r).unwrap(), 0.0);
        }
        assert!(matches!(inst.sample_arm(2, &mut r), Err(Error::ArmOutOfRange { index: 2, n: 2 })));
    }

    #[test]
    fn gaussian_mean_clt() {
        let inst = BanditInstance::gaussian("g", &[0.3]).unwrap();
        let mut r = rng::stream(11, 9);
        let n = 1_000_000;
        let s: f64 = (0..n).map(|_| inst.sample_arm(0, &mut r).unwrap()).sum();
        assert!((s / n as f64 - 0.3).abs() < 0.005);
    }

    #[test]
    fn sampling_is_deterministic() {
        let inst = BanditInstance::gaussian("g", &[0.3, -1.0]).unwrap();
        let draw = |seed| {
            let mut r = rng::stream(seed, 9);
            (0..100).map(|i| inst.sample_arm(i % 2, &mut r).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn validation() {
        assert!(BanditInstance::new("e", vec![]).is_err());
        assert!(BanditInstance::bernoulli("b", &[1.2]).is_err());
        assert!(BanditInstance::new("g", vec![ArmDistribution::Gaussian { mean: 0.0, variance: 0.0 }]).is_err());
    }

    #[test]
    fn two_spike_construction() {
        let inst = two_spike(4, 2, 0.0, 1.0, ArmKind::Gaussian, 3).unwrap();
        let mut m = inst.means();
        m.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(m, vec![1.0, 1.0, 0.0, 0.0]);

        let s = summarize(&two_spike(100, 10, 0.0, 0.5, ArmKind::Gaussian, 1).unwrap(), Some(0.5), None).unwrap();
        assert_eq!(s.m_eps, Some(10));

        let all = two_spike(5, 5, 0.2, 0.3, ArmKind::Bernoulli, 1).unwrap();
        assert!(all.means().iter().all(|&x| x == 0.5));
        assert_eq!(summarize(&all, None, Some(0.2)).unwrap().m_thr, Some(5));

        assert!(two_spike(4, 0, 0.0, 1.0, ArmKind::Gaussian, 1).is_err());
        assert!(two_spike(4, 5, 0.0, 1.0, ArmKind::Gaussian, 1).is_err());
        assert!(two_spike(4, 2, 0.6, 0.5, ArmKind::Bernoulli, 1).is_err());
        // positions depend on the seed
        let a = two_spike(64, 8, 0.0, 1.0, ArmKind::Gaussian, 1).unwrap().means();
        let b = two_spike(64, 8, 0.0, 1.0, ArmKind::Gaussian, 2).unwrap().means();
        assert_ne!(a, b);
    }

    #[test]
    fn summary_strictness() {
        let s = summarize_means(&[1.0, 1.0, 0.0, 0.0], Some(1.0), None).unwrap();
        assert_eq!(s.m_eps, Some(2));
        let s = summarize_means(&[0.9, 0.5, 0.5, 0.1], None, Some(0.5)).unwrap();
        assert_eq!(s.m_thr, Some(1));
        let s = summarize_means(&[0.5, 0.1, 0.9], None, Some(0.4)).unwrap();
        assert!((s.gap(1, 3) - 0.8).abs() < 1e-15);
        assert!((s.gap_to_threshold(2).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(s.order, vec![2, 0, 1]);
        assert_eq!(s.sort_permutation, vec![1, 2, 0]);
        assert_eq!(s.h1_mask().unwrap(), vec![true, false, true]);
        assert!(summarize_means(&[1.0], None, None).is_err());
    }

    #[test]
    fn stable_ties() {
        let s = summarize_means(&[0.2, 0.5, 0.2, 0.5], Some(0.1), None).unwrap();
        assert_eq!(s.order, vec![1, 3, 0, 2]);
    }

    #[test]
    fn json_round_trip() {
        let inst = BanditInstance::new(
            "mixed",
            vec![
                ArmDistribution::Gaussian { mean: 0.1 + 0.2, variance: 1.0 / 3.0 },
                ArmDistribution::Bernoulli { p: 0.7 },
            ],
        )
        .unwrap()
        .with_threshold(0.05)
        .with_epsilon(1e-7);
        let back = BanditInstance::from_json(&inst.to_json().unwrap()).unwrap();
        assert_eq!(back, inst);
        let plain = BanditInstance::bernoulli("p", &[0.5]).unwrap();
        let text = plain.to_json().unwrap();
        assert!(!text.contains("threshold_mu0"));
        assert_eq!(BanditInstance::from_json(&text).unwrap(), plain);
        assert!(BanditInstance::from_json(r#"{"format":"x","version":1,"label":"","arms":[]}"#).is_err());
    }
}
