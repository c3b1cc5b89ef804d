use serde::{Deserialize, Serialize};

use super::{RoundObserver, RoundView};
use crate::recommend::EventKind;

/// One named per-trial value. `censored` marks a right-censored or undefined
/// value; `value` then holds the bound observed so far, if any.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub name: String,
    pub value: Option<f64>,
    pub censored: bool,
}

impl MetricValue {
    pub fn plain(name: impl Into<String>, value: f64) -> Self {
        Self { name: name.into(), value: Some(value), censored: false }
    }

    /// Censored when `value` is `None`.
    pub fn optional(name: impl Into<String>, value: Option<f64>) -> Self {
        Self { name: name.into(), censored: value.is_none(), value }
    }

    pub fn censored(name: impl Into<String>, bound: Option<f64>) -> Self {
        Self { name: name.into(), value: bound, censored: true }
    }
}

/// `tau_simple = 1 + max{t : mu_{O_t} <= mu_1 - eps}`, 0 if every output is good.
#[derive(Clone, Debug)]
pub struct TauSimpleCollector {
    good: Vec<bool>,
    last_bad: Option<u64>,
    final_good: bool,
}

impl TauSimpleCollector {
    pub fn new(means: &[f64], eps: f64) -> Self {
        let best = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let good = means.iter().map(|&m| m > best - eps).collect();
        Self { good, last_bad: None, final_good: false }
    }

    /// Feeds the output of round `t`; a missing output counts as not good.
    pub fn record(&mut self, t: u64, output: Option<usize>) {
        let ok = output.is_some_and(|a| self.good[a]);
        if !ok {
            self.last_bad = Some(t);
        }
        self.final_good = ok;
    }

    pub fn tau(&self) -> u64 {
        self.last_bad.map_or(0, |t| t + 1)
    }

    /// `false` means the value is right-censored at the horizon.
    pub fn final_good(&self) -> bool {
        self.final_good
    }

    pub fn tau_metric(&self) -> MetricValue {
        if self.final_good {
            MetricValue::plain("tau_simple", self.tau() as f64)
        } else {
            MetricValue::censored("tau_simple", Some(self.tau() as f64))
        }
    }
}

impl RoundObserver for TauSimpleCollector {
    fn on_round(&mut self, view: &RoundView<'_>) {
        self.record(view.t, view.output);
    }
}

/// Tracks one accepted set against ground truth `H_1 = {i : mu_i > mu0}`.
#[derive(Clone, Debug)]
pub struct DiscoveryCollector {
    h1: Vec<bool>,
    kind: EventKind,
    ks: Vec<usize>,
    tau_k: Vec<Option<u64>>,
    true_disc: usize,
    false_disc: usize,
    first_false: Option<u64>,
    checkpoints: Vec<u64>,
    next_cp: usize,
    series: Vec<(u64, f64, usize)>,
    stop_k: Option<usize>,
}

impl DiscoveryCollector {
    pub fn new(means: &[f64], mu0: f64, kind: EventKind, ks: &[usize], checkpoints: &[u64]) -> Self {
        let mut ks = ks.to_vec();
        ks.sort_unstable();
        ks.dedup();
        Self {
            h1: means.iter().map(|&m| m > mu0).collect(),
            kind,
            tau_k: vec![None; ks.len()],
            ks,
            true_disc: 0,
            false_disc: 0,
            first_false: None,
            checkpoints: checkpoints.to_vec(),
            next_cp: 0,
            series: Vec::new(),
            stop_k: None,
        }
    }

    pub fn stop_at_max_k(mut self) -> Self {
        self.stop_k = self.ks.last().copied();
        self
    }

    /// Feeds accepted arms of round `t` (arms must be new to the set).
    pub fn accept(&mut self, t: u64, arms: &[usize]) {
        for &a in arms {
            if self.h1[a] {
                self.true_disc += 1;
            } else {
                self.false_disc += 1;
                self.first_false.get_or_insert(t);
            }
        }
        for (i, &k) in self.ks.iter().enumerate() {
            if self.tau_k[i].is_none() && self.true_disc >= k {
                self.tau_k[i] = Some(t);
            }
        }
    }

    /// Closes round `t`, recording any checkpoint at or before it.
    pub fn end_round(&mut self, t: u64) {
        while self.next_cp < self.checkpoints.len() && self.checkpoints[self.next_cp] <= t {
            let cp = self.checkpoints[self.next_cp];
            self.series.push((cp, self.fdp(), self.true_disc));
            self.next_cp += 1;
        }
    }

    /// `|S ∩ H_0| / max(|S|, 1)`
    pub fn fdp(&self) -> f64 {
        self.false_disc as f64 / (self.true_disc + self.false_disc).max(1) as f64
    }

    pub fn true_discoveries(&self) -> usize {
        self.true_disc
    }

    pub fn false_discoveries(&self) -> usize {
        self.false_disc
    }

    pub fn first_false(&self) -> Option<u64> {
        self.first_false
    }

    pub fn tau_k(&self) -> Vec<(usize, Option<u64>)> {
        self.ks.iter().copied().zip(self.tau_k.iter().copied()).collect()
    }

    /// `(checkpoint, fdp, true discoveries)`
    pub fn series(&self) -> &[(u64, f64, usize)] {
        &self.series
    }

    pub fn metrics(&self, prefix: &str) -> Vec<MetricValue> {
        let mut out = vec![
            MetricValue::plain(format!("{prefix}discoveries"), (self.true_disc + self.false_disc) as f64),
            MetricValue::plain(format!("{prefix}true_discoveries"), self.true_disc as f64),
            MetricValue::plain(format!("{prefix}false_discoveries"), self.false_disc as f64),
            MetricValue::plain(format!("{prefix}fdp"), self.fdp()),
            MetricValue::plain(format!("{prefix}any_false"), if self.first_false.is_some() { 1.0 } else { 0.0 }),
        ];
        for (k, tau) in self.tau_k() {
            out.push(MetricValue::optional(format!("{prefix}tau_k{k}"), tau.map(|t| t as f64)));
        }
        out
    }
}

impl RoundObserver for DiscoveryCollector {
    fn on_round(&mut self, view: &RoundView<'_>) {
        let kind = self.kind;
        for ev in view.events.iter().filter(|e| e.kind == kind) {
            self.accept(view.t, &ev.arms);
        }
        self.end_round(view.t);
    }

    fn wants_stop(&self) -> bool {
        self.stop_k.is_some_and(|k| self.true_disc >= k)
    }
}

/// Normal-approximation summary over the uncensored values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub censored: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

const Z95: f64 = 1.96;

/// Mean, sample standard deviation and `mean ± 1.96 sd / sqrt(n)`; censored
/// values are only counted. The interval needs at least two values.
pub fn aggregate<'a>(values: impl IntoIterator<Item = &'a MetricValue>) -> Aggregate {
    let mut xs = Vec::new();
    let mut censored = 0;
    for v in values {
        match (v.censored, v.value) {
            (false, Some(x)) => xs.push(x),
            _ => censored += 1,
        }
    }
    aggregate_values(&xs, censored)
}

pub fn aggregate_values(xs: &[f64], censored: usize) -> Aggregate {
    let n = xs.len();
    if n == 0 {
        return Aggregate { n, censored, mean: None, sd: None, ci_lo: None, ci_hi: None };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return Aggregate { n, censored, mean: Some(mean), sd: None, ci_lo: None, ci_hi: None };
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let half = Z95 * sd / (n as f64).sqrt();
    Aggregate { n, censored, mean: Some(mean), sd: Some(sd), ci_lo: Some(mean - half), ci_hi: Some(mean + half) }
}
