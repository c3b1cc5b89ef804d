//! LUCB with an epsilon stopping rule.
//!
//! Each round pulls the empirical best arm `h` and the arm `l != h` with the
//! highest upper bound, using radius `beta(T, delta)`. The run stops once
//! `UCB(l) <= LCB(h) + eps` and certifies `h`. Before the adaptive phase every
//! arm is pulled once, two arms per round.

use serde::{Deserialize, Serialize};

use crate::engine::PullRecord;
use crate::error::{Error, Result};
use crate::instance::BanditInstance;
use crate::maxtree::MaxTree;
use crate::rng::{self, SimRng};

const K1: f64 = 1.25;

/// `sqrt(2 sigma2 ln(k1 n u^4 / delta) / u)`; with `sigma2 = 1/4` this is
/// `sqrt(ln(k1 n u^4 / delta) / (2u))`.
pub fn beta(u: u64, delta: f64, n: usize, sigma2: f64) -> f64 {
    let u = u as f64;
    (2.0 * sigma2 * (K1 * n as f64 * u.powi(4) / delta).ln() / u).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LucbConfig {
    pub delta: f64,
    pub epsilon: f64,
    /// Sub-Gaussian variance proxy in `beta`.
    pub variance_proxy: f64,
}

impl LucbConfig {
    /// Variance proxy 1/4 when every arm is Bernoulli, otherwise 1.
    pub fn for_instance(instance: &BanditInstance, delta: f64, epsilon: f64) -> Self {
        let variance_proxy = if instance.is_bounded() { 0.25 } else { 1.0 };
        Self { delta, epsilon, variance_proxy }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0,1), got {}", self.delta)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        if !(self.variance_proxy > 0.0 && self.variance_proxy.is_finite()) {
            return Err(Error::Config("variance proxy must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Lucb {
    cfg: LucbConfig,
    n: usize,
    counts: Vec<u64>,
    sums: Vec<f64>,
    means: MaxTree,
    ucbs: MaxTree,
    init_next: usize,
    t: u64,
    total_pulls: u64,
    stopped_at: Option<u64>,
    certified: Option<usize>,
    last: Vec<PullRecord>,
    rng: SimRng,
}

impl Lucb {
    pub fn new(n: usize, cfg: LucbConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if n == 0 {
            return Err(Error::Config("LUCB needs at least one arm".into()));
        }
        Ok(Self {
            cfg,
            n,
            counts: vec![0; n],
            sums: vec![0.0; n],
            means: MaxTree::new(n),
            ucbs: MaxTree::new(n),
            init_next: 0,
            t: 0,
            total_pulls: 0,
            stopped_at: None,
            certified: None,
            last: Vec::with_capacity(2),
            rng: rng::stream(seed, rng::STREAM_LUCB),
        })
    }

    pub fn config(&self) -> &LucbConfig {
        &self.cfg
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn total_pulls(&self) -> u64 {
        self.total_pulls
    }

    pub fn count(&self, arm: usize) -> u64 {
        self.counts[arm]
    }

    pub fn mean(&self, arm: usize) -> Option<f64> {
        (self.counts[arm] > 0).then(|| self.sums[arm] / self.counts[arm] as f64)
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped_at.is_some()
    }

    /// Round at which the stopping rule fired.
    pub fn stopped_at(&self) -> Option<u64> {
        self.stopped_at
    }

    pub fn certified(&self) -> Option<usize> {
        self.certified
    }

    pub fn initialized(&self) -> bool {
        self.init_next >= self.n
    }

    /// Empirical best arm (lowest id on ties); the certified arm once stopped.
    pub fn best(&self) -> Option<usize> {
        self.certified.or_else(|| self.means.argmax().map(|(a, _)| a))
    }

    /// Highest-UCB arm other than `h`.
    pub fn challenger(&mut self, h: usize) -> Option<usize> {
        let saved = self.ucbs.get(h);
        self.ucbs.set(h, f64::NEG_INFINITY);
        let l = self.ucbs.argmax().map(|(a, _)| a);
        self.ucbs.set(h, saved);
        l
    }

    pub fn radius(&self, arm: usize) -> f64 {
        beta(self.counts[arm], self.cfg.delta, self.n, self.cfg.variance_proxy)
    }

    pub fn lcb(&self, arm: usize) -> Option<f64> {
        self.mean(arm).map(|m| m - self.radius(arm))
    }

    pub fn ucb(&self, arm: usize) -> Option<f64> {
        self.mean(arm).map(|m| m + self.radius(arm))
    }

    /// Adds one observation of `arm`.
    pub fn observe(&mut self, arm: usize, reward: f64) {
        self.counts[arm] += 1;
        self.sums[arm] += reward;
        self.total_pulls += 1;
        let m = self.sums[arm] / self.counts[arm] as f64;
        self.means.set(arm, m);
        self.ucbs.set(arm, m + self.radius(arm));
    }

    fn pull(&mut self, instance: &BanditInstance, arm: usize, forced_init: bool) {
        let reward = instance.draw(arm, &mut self.rng);
        self.observe(arm, reward);
        self.last.push(PullRecord { t: self.t, bracket: 0, arm, reward, forced_init });
    }

    /// Evaluates the stopping rule; returns whether the run is stopped.
    pub fn check_stop(&mut self) -> bool {
        if self.is_stopped() {
            return true;
        }
        if !self.initialized() {
            return false;
        }
        let h = self.means.argmax().map(|(a, _)| a).expect("initialized");
        let stop = match self.challenger(h) {
            None => true,
            Some(l) => self.ucbs.get(l) <= self.lcb(h).expect("pulled") + self.cfg.epsilon,
        };
        if stop {
            self.stopped_at = Some(self.t);
            self.certified = Some(h);
        }
        stop
    }

    /// One round: two pulls (fewer at the end of initialization), none once stopped.
    pub fn round(&mut self, instance: &BanditInstance) -> &[PullRecord] {
        debug_assert_eq!(instance.n_arms(), self.n);
        self.last.clear();
        if self.is_stopped() {
            return &self.last;
        }
        self.t += 1;
        if !self.initialized() {
            let a = self.init_next;
            self.pull(instance, a, true);
            if a + 1 < self.n {
                self.pull(instance, a + 1, true);
            }
            self.init_next = (a + 2).min(self.n);
        } else {
            let h = self.means.argmax().map(|(a, _)| a).expect("initialized");
            self.pull(instance, h, false);
            if let Some(l) = self.challenger(h) {
                self.pull(instance, l, false);
            }
        }
        self.check_stop();
        &self.last
    }

    /// Runs until stopped or `max_rounds` rounds have elapsed; returns the stop round.
    pub fn run(&mut self, instance: &BanditInstance, max_rounds: u64) -> Option<u64> {
        while !self.is_stopped() && self.t < max_rounds {
            self.round(instance);
        }
        self.stopped_at
    }
}
