//! Best-of-both combiner: the best-arm engine and LUCB run side by side on
//! separate sample streams. Until LUCB stops, the output is the engine's
//! `O_t`. When LUCB stops with `j`, the engine's output is kept if its lower
//! bound (in its best bracket `r0`) is at least `mean_j - beta(T_j, delta)`,
//! otherwise `j` is returned; either way the run then terminates.

use crate::engine::{Engine, EngineConfig, Objective, PullRecord};
use crate::error::{Error, Result};
use crate::instance::BanditInstance;
use crate::lucb::{Lucb, LucbConfig};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BobRound {
    pub t: u64,
    pub output: Option<usize>,
    pub engine_pull: Option<PullRecord>,
    pub lucb_pulls: Vec<PullRecord>,
    /// Set on the round the run terminates.
    pub terminated: bool,
}

/// Which side supplied the terminal arm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Winner {
    Engine,
    Lucb,
}

#[derive(Clone, Debug)]
pub struct Bob {
    engine: Engine,
    lucb: Lucb,
    t: u64,
    final_arm: Option<(usize, Winner)>,
    terminated_at: Option<u64>,
    round: BobRound,
}

impl Bob {
    /// `engine_cfg` must use the best-arm objective.
    pub fn new(n: usize, engine_cfg: EngineConfig, lucb_cfg: LucbConfig, seed: u64) -> Result<Self> {
        if engine_cfg.objective != Objective::BestArm {
            return Err(Error::Config("best-of-both runs the engine in best-arm mode".into()));
        }
        if (engine_cfg.delta - lucb_cfg.delta).abs() > 0.0 {
            return Err(Error::Config("engine and LUCB must share delta".into()));
        }
        Ok(Self {
            engine: Engine::new(n, engine_cfg, seed)?,
            lucb: Lucb::new(n, lucb_cfg, seed)?,
            t: 0,
            final_arm: None,
            terminated_at: None,
            round: BobRound::default(),
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn lucb(&self) -> &Lucb {
        &self.lucb
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn is_terminated(&self) -> bool {
        self.final_arm.is_some()
    }

    pub fn terminated_at(&self) -> Option<u64> {
        self.terminated_at
    }

    pub fn final_arm(&self) -> Option<usize> {
        self.final_arm.map(|(a, _)| a)
    }

    pub fn winner(&self) -> Option<Winner> {
        self.final_arm.map(|(_, w)| w)
    }

    pub fn total_pulls(&self) -> u64 {
        self.engine.total_pulls() + self.lucb.total_pulls()
    }

    /// One round; after termination the output is frozen and nothing is pulled.
    pub fn step(&mut self, instance: &BanditInstance) -> &BobRound {
        self.t += 1;
        self.round.t = self.t;
        self.round.engine_pull = None;
        self.round.lucb_pulls.clear();
        self.round.terminated = false;
        if let Some((arm, _)) = self.final_arm {
            self.round.output = Some(arm);
            return &self.round;
        }
        let out = self.engine.step(instance);
        self.round.engine_pull = out.pull;
        let o_t = out.output;
        self.round.lucb_pulls.extend_from_slice(self.lucb.round(instance));
        self.round.output = o_t;
        if self.lucb.is_stopped() {
            let j = self.lucb.certified().expect("stopped LUCB certifies an arm");
            let lucb_lcb = self.lucb.lcb(j).expect("certified arm was pulled");
            let winner = match o_t.and_then(|o| self.engine.arm_lcb(o).map(|(_, lcb)| (o, lcb))) {
                Some((o, lcb)) if lcb >= lucb_lcb => (o, Winner::Engine),
                _ => (j, Winner::Lucb),
            };
            self.final_arm = Some(winner);
            self.terminated_at = Some(self.t);
            self.round.output = Some(winner.0);
            self.round.terminated = true;
        }
        &self.round
    }

    /// Steps until termination or `max_rounds`.
    pub fn run(&mut self, instance: &BanditInstance, max_rounds: u64) -> Option<usize> {
        while !self.is_terminated() && self.t < max_rounds {
            self.step(instance);
        }
        self.final_arm()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{two_spike, ArmKind};

    fn cfgs(inst: &BanditInstance, eps: f64) -> (EngineConfig, LucbConfig) {
        (EngineConfig::new(Objective::BestArm, 0.05), LucbConfig::for_instance(inst, 0.05, eps))
    }

    #[test]
    fn outputs_engine_stream_before_stop() {
        let inst = two_spike(32, 2, 0.0, 0.5, ArmKind::Gaussian, 1).unwrap();
        let (e, l) = cfgs(&inst, 1e-9);
        let mut bob = Bob::new(32, e.clone(), l, 42).unwrap();
        let mut eng = Engine::new(32, e, 42).unwrap();
        for _ in 0..3000 {
            let a = bob.step(&inst).clone();
            let b = eng.step(&inst);
            assert_eq!(a.output, b.output);
            assert_eq!(a.engine_pull, b.pull);
            assert_eq!(a.lucb_pulls.len(), 2);
        }
        assert!(!bob.is_terminated());
    }

    #[test]
    fn three_pulls_per_round_before_termination() {
        let inst = two_spike(16, 1, 0.0, 0.5, ArmKind::Gaussian, 2).unwrap();
        let (e, l) = cfgs(&inst, 0.5);
        let mut bob = Bob::new(16, e, l, 5).unwrap();
        bob.run(&inst, 10_000_000).expect("terminates");
        let t = bob.terminated_at().unwrap();
        assert_eq!(bob.total_pulls(), 3 * t);
        let frozen = bob.final_arm();
        let r = bob.step(&inst);
        assert_eq!(r.output, frozen);
        assert!(r.engine_pull.is_none() && r.lucb_pulls.is_empty());
    }

    #[test]
    fn engine_wins_when_its_bound_is_higher() {
        let inst = BanditInstance::gaussian("g", &[0.0, 1.0]).unwrap();
        let (e, l) = cfgs(&inst, 100.0);
        let mut bob = Bob::new(2, e, l, 3).unwrap();
        bob.run(&inst, 10).unwrap();
        // LUCB stops right after init with beta(1) radii; the engine's bound decides
        let j = bob.lucb().certified().unwrap();
        let lucb_lcb = bob.lucb().lcb(j).unwrap();
        let o = bob.engine().best_arm_output().unwrap();
        let (_, lcb) = bob.engine().arm_lcb(o).unwrap();
        let expect = if lcb >= lucb_lcb { o } else { j };
        assert_eq!(bob.final_arm(), Some(expect));
    }

    #[test]
    fn rejects_non_best_arm_engine() {
        let cfg = EngineConfig::new(Objective::FdrTpr, 0.05).with_mu0(0.0);
        let l = LucbConfig { delta: 0.05, epsilon: 0.1, variance_proxy: 1.0 };
        assert!(Bob::new(4, cfg, l, 0).is_err());
    }
}
