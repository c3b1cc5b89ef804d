//! Trial runner, ground-truth metrics, aggregation, campaigns and replay.
//!
//! A trial drives one algorithm on one instance for up to `horizon` rounds and
//! streams every round to a list of [`RoundObserver`]s. The built-in observers
//! compute `tau_simple`, `tau_k`, FDR/TPR checkpoints and the trace hash
//! without storing the trace.

pub mod campaign;
pub mod metrics;
pub mod trace;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::bob::Bob;
use crate::confidence::ConfidenceSchedule;
use crate::engine::{Engine, EngineConfig, Mode, Objective, PullRecord};
use crate::error::{Error, Result};
use crate::instance::BanditInstance;
use crate::lucb::{Lucb, LucbConfig};
use crate::recommend::{EventKind, RecommendationEvent};

pub use metrics::{aggregate, Aggregate, DiscoveryCollector, MetricValue, TauSimpleCollector};
pub use trace::{sha256_hex, TraceHasher};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// The bracket engine.
    InfiniteUcb,
    /// The engine pinned to a single bracket holding every arm.
    UniformBh,
    Lucb,
    Bob,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::InfiniteUcb => "infinite-ucb",
            Algorithm::UniformBh => "uniform-bh",
            Algorithm::Lucb => "lucb",
            Algorithm::Bob => "bob",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "infinite-ucb" => Ok(Algorithm::InfiniteUcb),
            "uniform-bh" => Ok(Algorithm::UniformBh),
            "lucb" => Ok(Algorithm::Lucb),
            "bob" => Ok(Algorithm::Bob),
            other => Err(Error::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PullSource {
    Engine,
    FwpdJ,
    Lucb,
}

impl PullSource {
    pub fn as_str(self) -> &'static str {
        match self {
            PullSource::Engine => "engine",
            PullSource::FwpdJ => "fwpd_j",
            PullSource::Lucb => "lucb",
        }
    }
}

/// Per-trial settings. `epsilon` is the tolerance used for `tau_simple`;
/// `stop_epsilon` (default `epsilon`) is LUCB's stopping tolerance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub objective: Objective,
    pub horizon: u64,
    pub delta: f64,
    pub epsilon: Option<f64>,
    pub stop_epsilon: Option<f64>,
    pub mu0: Option<f64>,
    pub k: Vec<usize>,
    pub mode: Mode,
    pub share_samples: bool,
    pub prune: bool,
    pub cost_select: bool,
    pub bh_at_delta: bool,
    pub scale_c: f64,
    /// Explicit checkpoint rounds; defaults to powers of two up to the horizon, plus the horizon.
    pub checkpoints: Option<Vec<u64>>,
    /// End discovery runs once `max(k)` true discoveries are held.
    pub stop_at_max_k: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::InfiniteUcb,
            objective: Objective::BestArm,
            horizon: 10_000,
            delta: 0.05,
            epsilon: None,
            stop_epsilon: None,
            mu0: None,
            k: Vec::new(),
            mode: Mode::Theory,
            share_samples: false,
            prune: false,
            cost_select: false,
            bh_at_delta: false,
            scale_c: ConfidenceSchedule::default().scale_c,
            checkpoints: None,
            stop_at_max_k: false,
        }
    }
}

impl RunConfig {
    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            objective: self.objective,
            delta: self.delta,
            mu0: self.mu0,
            schedule: ConfidenceSchedule { scale_c: self.scale_c, ..ConfidenceSchedule::default() },
            mode: self.mode,
            share_samples: self.share_samples,
            prune: self.prune,
            cost_select: self.cost_select,
            bh_at_delta: self.bh_at_delta,
            single_bracket: self.algorithm == Algorithm::UniformBh,
        }
    }

    /// Checks objective-consistent parameters before any sampling.
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        match self.algorithm {
            Algorithm::InfiniteUcb | Algorithm::UniformBh => self.engine_config().validate()?,
            Algorithm::Lucb | Algorithm::Bob => {
                if self.objective != Objective::BestArm {
                    return Err(Error::Config(format!("{} only supports the best-arm objective", self.algorithm.as_str())));
                }
                if self.stop_epsilon.or(self.epsilon).is_none() {
                    return Err(Error::Config(format!("{} needs epsilon", self.algorithm.as_str())));
                }
                self.engine_config().validate()?;
            }
        }
        if self.objective == Objective::BestArm && self.epsilon.is_none() && self.algorithm != Algorithm::Lucb {
            return Err(Error::Config("best-arm runs need epsilon for tau_simple".into()));
        }
        if self.stop_at_max_k && self.k.is_empty() {
            return Err(Error::Config("stop_at_max_k needs a k list".into()));
        }
        if self.k.contains(&0) {
            return Err(Error::Config("k values must be at least 1".into()));
        }
        Ok(())
    }

    pub fn checkpoint_grid(&self) -> Vec<u64> {
        match &self.checkpoints {
            Some(c) => {
                let mut c: Vec<u64> = c.iter().copied().filter(|&x| x >= 1 && x <= self.horizon).collect();
                c.sort_unstable();
                c.dedup();
                c
            }
            None => default_checkpoints(self.horizon),
        }
    }

    fn lucb_config(&self, instance: &BanditInstance) -> LucbConfig {
        let eps = self.stop_epsilon.or(self.epsilon).unwrap_or(0.0);
        LucbConfig::for_instance(instance, self.delta, eps)
    }
}

/// `{1, 2, 4, ...} ∩ [1, horizon]`, plus the horizon.
pub fn default_checkpoints(horizon: u64) -> Vec<u64> {
    let mut out: Vec<u64> = (0..64).map(|j| 1u64 << j).take_while(|&c| c <= horizon).collect();
    if out.last() != Some(&horizon) {
        out.push(horizon);
    }
    out
}

/// Everything that happened in one round.
#[derive(Clone, Copy, Debug)]
pub struct RoundView<'a> {
    pub t: u64,
    pub pulls: &'a [(PullSource, PullRecord)],
    pub output: Option<usize>,
    pub events: &'a [RecommendationEvent],
}

pub trait RoundObserver {
    fn on_round(&mut self, view: &RoundView<'_>);
    /// Whether the observer wants the run to end after this round.
    fn wants_stop(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub rounds: u64,
    pub pulls: u64,
    /// LUCB stop round / best-of-both termination round.
    pub stopped_at: Option<u64>,
    pub final_output: Option<usize>,
    #[serde(skip)]
    pub wall: Duration,
}

enum Runner {
    Engine(Engine),
    Lucb(Lucb),
    Bob(Bob),
}

/// Drives one trial to the horizon (or an earlier stop), feeding every round to `observers`.
pub fn run_trial(
    instance: &BanditInstance,
    cfg: &RunConfig,
    seed: u64,
    observers: &mut [&mut dyn RoundObserver],
) -> Result<TrialSummary> {
    cfg.validate()?;
    let n = instance.n_arms();
    let start = Instant::now();
    let mut runner = match cfg.algorithm {
        Algorithm::InfiniteUcb | Algorithm::UniformBh => Runner::Engine(Engine::new(n, cfg.engine_config(), seed)?),
        Algorithm::Lucb => Runner::Lucb(Lucb::new(n, cfg.lucb_config(instance), seed)?),
        Algorithm::Bob => Runner::Bob(Bob::new(n, cfg.engine_config(), cfg.lucb_config(instance), seed)?),
    };
    let mut pulls: Vec<(PullSource, PullRecord)> = Vec::with_capacity(3);
    let no_events: Vec<RecommendationEvent> = Vec::new();
    let mut rounds = 0;
    let mut final_output = None;
    let mut total_pulls = 0u64;
    while rounds < cfg.horizon {
        pulls.clear();
        let (t, output, events, done) = match &mut runner {
            Runner::Engine(e) => {
                let out = e.step(instance);
                if let Some(p) = out.pull {
                    pulls.push((PullSource::Engine, p));
                }
                if let Some(p) = out.secondary {
                    pulls.push((PullSource::FwpdJ, p));
                }
                (out.t, out.output, &out.events, false)
            }
            Runner::Lucb(l) => {
                pulls.extend(l.round(instance).iter().map(|&p| (PullSource::Lucb, p)));
                (l.t(), l.best(), &no_events, l.is_stopped())
            }
            Runner::Bob(b) => {
                let r = b.step(instance);
                if let Some(p) = r.engine_pull {
                    pulls.push((PullSource::Engine, p));
                }
                pulls.extend(r.lucb_pulls.iter().map(|&p| (PullSource::Lucb, p)));
                (r.t, r.output, &no_events, r.terminated)
            }
        };
        rounds = t;
        total_pulls += pulls.len() as u64;
        final_output = output;
        let view = RoundView { t, pulls: &pulls, output, events };
        let mut stop = done;
        for obs in observers.iter_mut() {
            obs.on_round(&view);
            stop |= obs.wants_stop();
        }
        if stop {
            break;
        }
    }
    let stopped_at = match &runner {
        Runner::Engine(_) => None,
        Runner::Lucb(l) => l.stopped_at(),
        Runner::Bob(b) => b.terminated_at(),
    };
    Ok(TrialSummary { rounds, pulls: total_pulls, stopped_at, final_output, wall: start.elapsed() })
}

/// Event kind that defines the discovery set of an objective.
pub fn primary_event_kind(objective: Objective) -> Option<EventKind> {
    match objective {
        Objective::BestArm => None,
        Objective::FdrTpr => Some(EventKind::FdrAccept),
        Objective::FwerTpr => Some(EventKind::FwerAccept),
        Objective::FwerFwpd => Some(EventKind::FwpdAccept),
    }
}

/// Metrics of one trial, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialOutcome {
    pub summary: TrialSummary,
    pub trace_sha256: String,
    pub metrics: Vec<MetricValue>,
    /// `(set name, checkpoint, fdp, true discoveries)`
    pub series: Vec<(String, u64, f64, f64)>,
}

/// Runs one trial with the standard collectors and trace hashing.
pub fn evaluate_trial(
    instance: &BanditInstance,
    cfg: &RunConfig,
    seed: u64,
    trace_out: Option<&mut dyn std::io::Write>,
) -> Result<TrialOutcome> {
    cfg.validate()?;
    let means = instance.means();
    let mut hasher = TraceHasher::new(trace_out);
    let mut tau = cfg.epsilon.map(|eps| TauSimpleCollector::new(&means, eps));
    let checkpoints = cfg.checkpoint_grid();
    let mut discovery: Vec<(String, DiscoveryCollector)> = Vec::new();
    if let (Some(kind), Some(mu0)) = (primary_event_kind(cfg.objective), cfg.mu0) {
        let mut primary = DiscoveryCollector::new(&means, mu0, kind, &cfg.k, &checkpoints);
        if cfg.stop_at_max_k {
            primary = primary.stop_at_max_k();
        }
        discovery.push(("accepted".into(), primary));
        if cfg.objective == Objective::FwerFwpd {
            discovery.push(("bh".into(), DiscoveryCollector::new(&means, mu0, EventKind::FdrAccept, &cfg.k, &checkpoints)));
        }
    }
    let summary = {
        let mut obs: Vec<&mut dyn RoundObserver> = vec![&mut hasher];
        if let Some(t) = tau.as_mut() {
            obs.push(t);
        }
        for (_, d) in discovery.iter_mut() {
            obs.push(d);
        }
        run_trial(instance, cfg, seed, &mut obs)?
    };
    let trace_sha256 = hasher.finish()?;

    let mut metrics = vec![
        MetricValue::plain("rounds", summary.rounds as f64),
        MetricValue::plain("pulls", summary.pulls as f64),
    ];
    if let Some(t) = &tau {
        metrics.push(t.tau_metric());
        metrics.push(MetricValue::plain("final_output_good", if t.final_good() { 1.0 } else { 0.0 }));
    }
    match cfg.algorithm {
        Algorithm::Lucb => metrics.push(MetricValue::optional("tau_pac", summary.stopped_at.map(|t| t as f64))),
        Algorithm::Bob => metrics.push(MetricValue::optional("terminated_at", summary.stopped_at.map(|t| t as f64))),
        _ => {}
    }
    let mut series = Vec::new();
    for (name, d) in &discovery {
        let prefix = if name == "accepted" { String::new() } else { format!("{name}_") };
        metrics.extend(d.metrics(&prefix));
        for &(cp, fdp, tp) in d.series() {
            series.push((name.clone(), cp, fdp, tp as f64));
        }
    }
    Ok(TrialOutcome { summary, trace_sha256, metrics, series })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{two_spike, ArmKind};

    #[test]
    fn checkpoints_default_grid() {
        assert_eq!(default_checkpoints(10), vec![1, 2, 4, 8, 10]);
        assert_eq!(default_checkpoints(8), vec![1, 2, 4, 8]);
        let cfg = RunConfig { horizon: 20, checkpoints: Some(vec![30, 5, 5, 1]), ..RunConfig::default() };
        assert_eq!(cfg.checkpoint_grid(), vec![1, 5]);
    }

    #[test]
    fn horizon_rounds_and_single_arm_output() {
        let inst = BanditInstance::gaussian("one", &[0.3]).unwrap();
        let cfg = RunConfig { horizon: 100, epsilon: Some(0.1), ..RunConfig::default() };
        struct Outputs(Vec<Option<usize>>);
        impl RoundObserver for Outputs {
            fn on_round(&mut self, v: &RoundView<'_>) {
                self.0.push(v.output);
            }
        }
        let mut o = Outputs(Vec::new());
        let s = run_trial(&inst, &cfg, 1, &mut [&mut o]).unwrap();
        assert_eq!(s.rounds, 100);
        assert_eq!(o.0.len(), 100);
        assert!(o.0.iter().all(|&x| x == Some(0)));
    }

    #[test]
    fn validation_errors() {
        let inst = BanditInstance::gaussian("g", &[0.0, 1.0]).unwrap();
        let zero = RunConfig { horizon: 0, epsilon: Some(0.1), ..RunConfig::default() };
        assert!(run_trial(&inst, &zero, 0, &mut []).is_err());
        let fdr = RunConfig { objective: Objective::FdrTpr, ..RunConfig::default() };
        assert!(fdr.validate().is_err());
        let lucb_fdr = RunConfig { algorithm: Algorithm::Lucb, objective: Objective::FdrTpr, mu0: Some(0.0), epsilon: Some(0.1), ..RunConfig::default() };
        assert!(lucb_fdr.validate().is_err());
    }

    #[test]
    fn same_seed_same_hash() {
        let inst = two_spike(40, 4, 0.0, 0.5, ArmKind::Gaussian, 3).unwrap();
        let cfg = RunConfig {
            objective: Objective::FdrTpr,
            mu0: Some(0.0),
            k: vec![1, 2],
            horizon: 3000,
            ..RunConfig::default()
        };
        let a = evaluate_trial(&inst, &cfg, 9, None).unwrap();
        let b = evaluate_trial(&inst, &cfg, 9, None).unwrap();
        let c = evaluate_trial(&inst, &cfg, 10, None).unwrap();
        assert_eq!(a.trace_sha256, b.trace_sha256);
        assert_eq!(a.metrics, b.metrics);
        assert_ne!(a.trace_sha256, c.trace_sha256);
    }

    #[test]
    fn uniform_bh_single_bracket() {
        let inst = two_spike(64, 32, 0.0, 0.5, ArmKind::Gaussian, 1).unwrap();
        let cfg = RunConfig {
            algorithm: Algorithm::UniformBh,
            objective: Objective::FdrTpr,
            mu0: Some(0.0),
            horizon: 500,
            ..RunConfig::default()
        };
        let mut e = Engine::new(64, cfg.engine_config(), 0).unwrap();
        for _ in 0..500 {
            e.step(&inst);
        }
        assert_eq!(e.n_open(), 1);
        assert_eq!(e.brackets()[0].size(), 64);
    }

    #[test]
    fn lucb_run_ends_at_stop() {
        let inst = two_spike(10, 1, 0.0, 0.5, ArmKind::Gaussian, 0).unwrap();
        let cfg = RunConfig { algorithm: Algorithm::Lucb, epsilon: Some(0.5), horizon: 10_000_000, ..RunConfig::default() };
        let out = evaluate_trial(&inst, &cfg, 4, None).unwrap();
        assert_eq!(Some(out.summary.rounds), out.summary.stopped_at);
        let tau_pac = out.metrics.iter().find(|m| m.name == "tau_pac").unwrap();
        assert_eq!(tau_pac.value, out.summary.stopped_at.map(|t| t as f64));
    }
}
