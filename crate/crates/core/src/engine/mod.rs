//! The bracket engine: a doubling schedule of randomly drawn arm subsets,
//! cycled round-robin, each sampled with an unpulled-first / UCB rule.
//!
//! One [`Engine`] runs one trial. Per round it
//!
//! 1. opens bracket `l + 1` when `t >= 2^l * l`,
//! 2. advances the cursor `R_t = 1 + R_{t-1} * 1{R_{t-1} < l}`,
//! 3. pulls the lowest-id unpulled candidate of `A_{R_t}`, or else the UCB
//!    argmax (ties to the lowest arm id),
//! 4. applies the objective's output rule (see [`crate::recommend`]).
//!
//! Cached per-slot keys (UCB, LCB, BH level) are refreshed only for the slots
//! whose statistics changed, so a round costs `O(l + log |A_r|)` outside of
//! acceptance events.

mod bracket;
mod heuristics;

pub use bracket::{delta_prime, ArmStat, Bracket};
pub use heuristics::{choose_by_cost, cost_estimate, CostInputs, COST_SELECT_PROB};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::confidence::ConfidenceSchedule;
use crate::error::{Error, Result};
use crate::instance::BanditInstance;
use crate::recommend::{self, EventKind, RecommendationEvent};
use crate::rng::{self, SimRng};
use bracket::NO_P;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    BestArm,
    FdrTpr,
    FwerTpr,
    FwerFwpd,
}

impl std::str::FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "best-arm" => Ok(Objective::BestArm),
            "fdr-tpr" => Ok(Objective::FdrTpr),
            "fwer-tpr" => Ok(Objective::FwerTpr),
            "fwer-fwpd" => Ok(Objective::FwerFwpd),
            other => Err(Error::Config(format!("unknown objective {other:?}"))),
        }
    }
}

impl Objective {
    pub fn needs_threshold(self) -> bool {
        !matches!(self, Objective::BestArm)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Bracket sizes `min(n, 2^r)`, brackets open forever.
    #[default]
    Theory,
    /// First bracket of size `min(n, 64)`, no new brackets once one covers all arms.
    Practice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub objective: Objective,
    pub delta: f64,
    pub mu0: Option<f64>,
    pub schedule: ConfidenceSchedule,
    pub mode: Mode,
    /// Pool arm statistics across brackets (budgets stay bracket-local).
    pub share_samples: bool,
    /// Drop brackets dominated by a larger one (practice mode).
    pub prune: bool,
    /// Pick the bracket with the lowest cost estimate most of the time (practice, FDR).
    pub cost_select: bool,
    /// Run the BH step at `delta_r` instead of `delta'_r` (practice mode).
    pub bh_at_delta: bool,
    /// Only ever open one bracket, containing every arm.
    pub single_bracket: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            objective: Objective::BestArm,
            delta: 0.05,
            mu0: None,
            schedule: ConfidenceSchedule::default(),
            mode: Mode::Theory,
            share_samples: false,
            prune: false,
            cost_select: false,
            bh_at_delta: false,
            single_bracket: false,
        }
    }
}

impl EngineConfig {
    pub fn new(objective: Objective, delta: f64) -> Self {
        Self { objective, delta, ..Self::default() }
    }

    pub fn with_mu0(mut self, mu0: f64) -> Self {
        self.mu0 = Some(mu0);
        self
    }

    /// Practice-mode preset with shared samples.
    pub fn practice(mut self) -> Self {
        self.mode = Mode::Practice;
        self.share_samples = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0,1), got {}", self.delta)));
        }
        self.schedule.validate()?;
        if self.objective.needs_threshold() {
            match self.mu0 {
                Some(m) if m.is_finite() => {}
                _ => return Err(Error::Config(format!("objective {:?} needs a threshold mu0", self.objective))),
            }
        }
        if self.objective == Objective::FwerFwpd && self.delta >= 0.25 {
            return Err(Error::Config("fwer-fwpd needs delta < 1/4".into()));
        }
        if self.mode == Mode::Theory && (self.prune || self.cost_select || self.bh_at_delta) {
            return Err(Error::Config("prune, cost_select and bh_at_delta are practice-mode heuristics".into()));
        }
        if self.cost_select && self.objective != Objective::FdrTpr {
            return Err(Error::Config("cost_select applies to the fdr-tpr objective only".into()));
        }
        Ok(())
    }

    fn first_bracket_exp(&self) -> u32 {
        match self.mode {
            Mode::Theory => 1,
            Mode::Practice => 6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PullRecord {
    pub t: u64,
    pub bracket: usize,
    pub arm: usize,
    pub reward: f64,
    pub forced_init: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoundOutcome {
    pub t: u64,
    /// Bracket index `R_t`, `None` when every open bracket is exhausted.
    pub bracket: Option<usize>,
    pub opened: Option<usize>,
    pub pull: Option<PullRecord>,
    /// Second pull of the round (FWER-FWPD's `J_t`).
    pub secondary: Option<PullRecord>,
    /// `O_t` in best-arm mode.
    pub output: Option<usize>,
    pub events: Vec<RecommendationEvent>,
}

/// Grow-only arm set with insertion order.
#[derive(Clone, Debug)]
pub struct AcceptSet {
    mask: Vec<bool>,
    order: Vec<usize>,
}

impl AcceptSet {
    fn new(n: usize) -> Self {
        Self { mask: vec![false; n], order: Vec::new() }
    }

    #[inline]
    pub fn contains(&self, arm: usize) -> bool {
        self.mask[arm]
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Arms in acceptance order.
    pub fn arms(&self) -> &[usize] {
        &self.order
    }

    fn insert(&mut self, arm: usize) -> bool {
        if self.mask[arm] {
            false
        } else {
            self.mask[arm] = true;
            self.order.push(arm);
            true
        }
    }
}

#[derive(Clone, Debug)]
pub struct Engine {
    pub(crate) cfg: EngineConfig,
    pub(crate) n: usize,
    pub(crate) t: u64,
    cursor: usize,
    pub(crate) brackets: Vec<Bracket>,
    pub(crate) pooled: Vec<ArmStat>,
    /// `(bracket position, slot)` of every arm
    pub(crate) membership: Vec<Vec<(u32, u32)>>,
    pub(crate) s_set: AcceptSet,
    pub(crate) q_set: AcceptSet,
    pub(crate) d_set: AcceptSet,
    scratch: Vec<usize>,
    total_pulls: u64,
    full_opened: bool,
    explore_cursor: usize,
    brackets_to_open: usize,
    pub(crate) outcome: RoundOutcome,
    rng: SimRng,
}

impl Engine {
    pub fn new(n: usize, cfg: EngineConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if n == 0 {
            return Err(Error::Config("engine needs at least one arm".into()));
        }
        let first = cfg.first_bracket_exp();
        let log2n = (n as f64).log2().ceil() as usize;
        let brackets_to_open = if cfg.single_bracket { 1 } else { (log2n + 1).saturating_sub(first as usize).max(1) };
        Ok(Self {
            n,
            t: 0,
            cursor: 0,
            brackets: Vec::new(),
            pooled: vec![ArmStat::default(); n],
            membership: vec![Vec::new(); n],
            s_set: AcceptSet::new(n),
            q_set: AcceptSet::new(n),
            d_set: AcceptSet::new(n),
            scratch: (0..n).collect(),
            total_pulls: 0,
            full_opened: false,
            explore_cursor: 0,
            brackets_to_open,
            outcome: RoundOutcome::default(),
            rng: rng::stream(seed, rng::STREAM_ENGINE),
            cfg,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn n_arms(&self) -> usize {
        self.n
    }

    /// Rounds executed so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    /// Number of open brackets `l`.
    pub fn n_open(&self) -> usize {
        self.brackets.len()
    }

    /// Bracket selected in the last round (1-based, 0 before the first round).
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn brackets(&self) -> &[Bracket] {
        &self.brackets
    }

    pub fn total_pulls(&self) -> u64 {
        self.total_pulls
    }

    /// `S_t`
    pub fn accepted_fdr(&self) -> &AcceptSet {
        &self.s_set
    }

    /// `Q_t`
    pub fn accepted_fwer(&self) -> &AcceptSet {
        &self.q_set
    }

    /// `D_t`, the FWER-FWPD accepted set.
    pub fn accepted_fwpd(&self) -> &AcceptSet {
        &self.d_set
    }

    pub fn last_outcome(&self) -> &RoundOutcome {
        &self.outcome
    }

    /// Statistics of `arm` as seen by bracket position `b`.
    pub fn stat(&self, b: usize, slot: usize) -> ArmStat {
        if self.cfg.share_samples {
            self.pooled[self.brackets[b].arms[slot]]
        } else {
            self.brackets[b].local[slot]
        }
    }

    /// The set that removes arms from UCB sampling.
    #[inline]
    fn sampling_excluded(&self, arm: usize) -> bool {
        match self.cfg.objective {
            Objective::BestArm => false,
            Objective::FdrTpr | Objective::FwerFwpd => self.s_set.contains(arm),
            Objective::FwerTpr => self.q_set.contains(arm),
        }
    }

    #[inline]
    fn maintains_lcb(&self) -> bool {
        matches!(self.cfg.objective, Objective::BestArm | Objective::FwerTpr)
    }

    #[inline]
    fn maintains_bh(&self) -> bool {
        matches!(self.cfg.objective, Objective::FdrTpr | Objective::FwerFwpd)
    }

    pub(crate) fn bh_delta(&self, b: usize) -> f64 {
        let br = &self.brackets[b];
        if self.cfg.bh_at_delta {
            br.delta_r
        } else {
            br.delta_prime_r
        }
    }

    fn bracket_size(&self, r: usize) -> usize {
        if self.cfg.single_bracket {
            return self.n;
        }
        let exp = r as u32 - 1 + self.cfg.first_bracket_exp();
        if exp >= usize::BITS - 1 {
            self.n
        } else {
            self.n.min(1usize << exp)
        }
    }

    fn may_open(&self) -> bool {
        if self.cfg.single_bracket || self.cfg.mode == Mode::Practice {
            !self.full_opened
        } else {
            true
        }
    }

    /// Opens bracket `l + 1` if `t >= 2^l * l`.
    fn open_bracket_if_due(&mut self) -> Option<usize> {
        let l = self.brackets.len();
        if !self.may_open() {
            return None;
        }
        let due = if l >= 63 { false } else { self.t as u128 >= (1u128 << l) * l as u128 };
        if !due {
            return None;
        }
        let r = l + 1;
        let size = self.bracket_size(r);
        // partial Fisher-Yates
        for i in 0..size {
            let j = self.rng.random_range(i..self.n);
            self.scratch.swap(i, j);
        }
        let arms = self.scratch[..size].to_vec();
        let br = Bracket::new(r, arms, self.cfg.delta);
        let b = self.brackets.len();
        for (slot, &arm) in br.arms.iter().enumerate() {
            self.membership[arm].push((b as u32, slot as u32));
        }
        self.brackets.push(br);
        if size == self.n {
            self.full_opened = true;
        }
        if self.cfg.objective == Objective::FwerFwpd {
            self.brackets[b].sampling_delta = self.cfg.delta / recommend::fwpd_xi(0, self.brackets[b].delta_r, r);
        }
        // arms accepted before this bracket existed are already excluded here
        for slot in 0..size {
            let arm = self.brackets[b].arms[slot];
            if self.s_set.contains(arm) {
                self.note_accepted_in(b, slot);
            }
            if self.cfg.share_samples && self.pooled[arm].count > 0 {
                self.refresh_slot(b, slot);
            }
        }
        Some(r)
    }

    fn has_candidate(&mut self, b: usize) -> bool {
        self.advance_init_cursor(b);
        let br = &self.brackets[b];
        br.init_cursor < br.arms.len() || br.ucb.argmax().is_some()
    }

    fn advance_init_cursor(&mut self, b: usize) {
        let share = self.cfg.share_samples;
        let br = &self.brackets[b];
        let mut c = br.init_cursor;
        while c < br.arms.len() {
            let arm = br.arms[c];
            let count = if share { self.pooled[arm].count } else { br.local[c].count };
            if count > 0 || self.s_set.contains(arm) {
                c += 1;
            } else {
                break;
            }
        }
        self.brackets[b].init_cursor = c;
    }

    /// Round-robin successor of the cursor among active brackets with a candidate.
    fn select_round_robin(&mut self) -> Option<usize> {
        let l = self.brackets.len();
        let mut c = self.cursor;
        for _ in 0..l {
            c = if c < l { c + 1 } else { 1 };
            if self.brackets[c - 1].active && self.has_candidate(c - 1) {
                return Some(c - 1);
            }
        }
        None
    }

    fn select_bracket(&mut self) -> Option<usize> {
        if self.cfg.cost_select {
            self.select_by_cost()
        } else {
            self.select_round_robin()
        }
    }

    fn select_by_cost(&mut self) -> Option<usize> {
        let mut costs = Vec::with_capacity(self.brackets.len());
        for b in 0..self.brackets.len() {
            if self.brackets[b].active && self.has_candidate(b) {
                let c = match self.brackets[b].cost_estimate {
                    Some(c) => c,
                    None => {
                        let c = self.compute_cost(b);
                        self.brackets[b].cost_estimate = Some(c);
                        c
                    }
                };
                costs.push((b, c));
            }
        }
        if costs.is_empty() {
            return None;
        }
        let u: f64 = self.rng.random();
        Some(choose_by_cost(&costs, u, COST_SELECT_PROB, &mut self.explore_cursor))
    }

    fn compute_cost(&self, b: usize) -> f64 {
        let br = &self.brackets[b];
        let arms: Vec<(u64, Option<f64>)> = (0..br.arms.len())
            .filter(|&s| !self.s_set.contains(br.arms[s]))
            .map(|s| {
                let st = self.stat(b, s);
                (st.count, st.mean())
            })
            .collect();
        cost_estimate(&CostInputs {
            arms: &arms,
            bracket_size: br.arms.len(),
            brackets_to_open: self.brackets_to_open,
            delta: self.cfg.delta,
            mu0: self.cfg.mu0.unwrap_or(0.0),
        })
    }

    /// Candidate slot of bracket position `b` and whether it came from the unpulled-first rule.
    fn select_arm(&mut self, b: usize) -> Option<(usize, bool)> {
        self.advance_init_cursor(b);
        let br = &self.brackets[b];
        if br.init_cursor < br.arms.len() {
            return Some((br.init_cursor, true));
        }
        br.ucb.argmax().map(|(slot, _)| (slot, false))
    }

    /// Recomputes the cached keys of one slot after its statistics or exclusion changed.
    pub(crate) fn refresh_slot(&mut self, b: usize, slot: usize) {
        let st = self.stat(b, slot);
        let arm = self.brackets[b].arms[slot];
        let excluded = self.sampling_excluded(arm);
        let maintains_lcb = self.maintains_lcb();
        let maintains_bh = self.maintains_bh();
        let schedule = self.cfg.schedule;
        let delta = self.cfg.delta;
        let mu0 = self.cfg.mu0.unwrap_or(0.0);
        let bh_delta = if maintains_bh { self.bh_delta(b) } else { 0.0 };
        let br = &mut self.brackets[b];
        let Some(mean) = st.mean() else {
            br.ucb.set(slot, f64::NEG_INFINITY);
            br.lcb.set(slot, f64::NEG_INFINITY);
            return;
        };
        let ucb = if excluded { f64::NEG_INFINITY } else { mean + schedule.radius(st.count, br.sampling_delta) };
        br.ucb.set(slot, ucb);
        if maintains_lcb {
            let out_delta = br.output_delta(delta);
            br.lcb.set(slot, mean - schedule.radius(st.count, out_delta));
        }
        if maintains_bh {
            let p = recommend::bh_min_level(&schedule, st.count, mean, mu0, br.arms.len(), bh_delta);
            br.set_bh_p(slot, p.map_or(NO_P, |p| p as u32));
        }
        br.mark_dirty(slot);
        br.cost_estimate = None;
    }

    fn rebuild_ucb(&mut self, b: usize) {
        for slot in 0..self.brackets[b].arms.len() {
            let st = self.stat(b, slot);
            let arm = self.brackets[b].arms[slot];
            let key = match st.mean() {
                Some(mean) if !self.sampling_excluded(arm) => {
                    mean + self.cfg.schedule.radius(st.count, self.brackets[b].sampling_delta)
                }
                _ => f64::NEG_INFINITY,
            };
            self.brackets[b].ucb.set(slot, key);
        }
    }

    /// Records one physical pull made on behalf of bracket position `b`.
    pub(crate) fn record_observation(&mut self, b: usize, slot: usize, reward: f64) {
        let arm = self.brackets[b].arms[slot];
        self.total_pulls += 1;
        self.brackets[b].own_pulls[slot] += 1;
        if self.cfg.share_samples {
            let st = &mut self.pooled[arm];
            st.count += 1;
            st.sum += reward;
            for k in 0..self.membership[arm].len() {
                let (bb, ss) = self.membership[arm][k];
                self.refresh_slot(bb as usize, ss as usize);
            }
        } else {
            let st = &mut self.brackets[b].local[slot];
            st.count += 1;
            st.sum += reward;
            self.pooled[arm].count += 1;
            self.pooled[arm].sum += reward;
            self.refresh_slot(b, slot);
        }
    }

    pub(crate) fn pull(&mut self, instance: &BanditInstance, b: usize, slot: usize, forced_init: bool) -> PullRecord {
        let arm = self.brackets[b].arms[slot];
        let reward = instance.draw(arm, &mut self.rng);
        self.record_observation(b, slot, reward);
        PullRecord { t: self.t, bracket: self.brackets[b].r, arm, reward, forced_init }
    }

    /// Bookkeeping when an arm of bracket `b` enters `S_t`.
    fn note_accepted_in(&mut self, b: usize, slot: usize) {
        let br = &mut self.brackets[b];
        br.accepted_slots.push(slot as u32);
        br.ucb.set(slot, f64::NEG_INFINITY);
        br.cost_estimate = None;
        if self.cfg.objective == Objective::FwerFwpd {
            let xi = recommend::fwpd_xi(br.accepted_slots.len(), br.delta_r, br.r);
            let sd = self.cfg.delta / xi;
            if sd != br.sampling_delta {
                br.sampling_delta = sd;
                self.rebuild_ucb(b);
            }
        }
    }

    pub(crate) fn accept_fdr(&mut self, arm: usize) -> bool {
        if !self.s_set.insert(arm) {
            return false;
        }
        for k in 0..self.membership[arm].len() {
            let (b, slot) = self.membership[arm][k];
            self.note_accepted_in(b as usize, slot as usize);
        }
        true
    }

    pub(crate) fn accept_fwer(&mut self, arm: usize) -> bool {
        if !self.q_set.insert(arm) {
            return false;
        }
        for k in 0..self.membership[arm].len() {
            let (b, slot) = self.membership[arm][k];
            self.brackets[b as usize].ucb.set(slot as usize, f64::NEG_INFINITY);
        }
        true
    }

    pub(crate) fn accept_fwpd(&mut self, arm: usize) -> bool {
        self.d_set.insert(arm)
    }

    pub(crate) fn push_event(&mut self, kind: EventKind, bracket_r: usize, arms: Vec<usize>, p_hat: Option<usize>) {
        let t = self.t;
        self.outcome.events.push(RecommendationEvent { t, kind, arms, bracket_r, p_hat });
    }

    /// Executes one round.
    pub fn step(&mut self, instance: &BanditInstance) -> &RoundOutcome {
        debug_assert_eq!(instance.n_arms(), self.n);
        self.t += 1;
        self.outcome.events.clear();
        self.outcome.t = self.t;
        self.outcome.pull = None;
        self.outcome.secondary = None;
        self.outcome.output = None;
        self.outcome.opened = self.open_bracket_if_due();

        let selected = self.select_bracket();
        self.outcome.bracket = selected.map(|b| self.brackets[b].r);
        if let Some(b) = selected {
            self.cursor = b + 1;
            self.brackets[b].selected_rounds += 1;
            let s_before = self.brackets[b].accepted_slots.len();
            let (slot, forced) = self.select_arm(b).expect("selected bracket has a candidate");
            let rec = self.pull(instance, b, slot, forced);
            self.outcome.pull = Some(rec);
            match self.cfg.objective {
                Objective::BestArm => {}
                Objective::FdrTpr => self.fdr_step(b),
                Objective::FwerTpr => self.fwer_tpr_step(b),
                Objective::FwerFwpd => {
                    self.fdr_step(b);
                    self.fwpd_secondary(instance, b, s_before);
                }
            }
        }
        if self.cfg.objective == Objective::BestArm {
            if self.cfg.prune {
                self.prune_by_lcb();
            }
            self.outcome.output = self.best_arm_output().ok();
        } else if self.cfg.prune && !self.outcome.events.is_empty() && self.cfg.objective != Objective::FwerTpr {
            self.prune_by_score();
        }
        &self.outcome
    }

    /// Deactivates every bracket whose max LCB is strictly below that of a larger active bracket.
    pub(crate) fn prune_by_lcb(&mut self) {
        let maxes: Vec<Option<f64>> = self
            .brackets
            .iter()
            .map(|br| (br.active && br.init_cursor >= br.arms.len()).then(|| br.lcb.max_key()))
            .collect();
        self.prune_with(|i, j| match (maxes[i], maxes[j]) {
            (Some(a), Some(b)) => a < b,
            _ => false,
        });
    }

    /// FDR scoring rule: a bracket earns a point for every accepted arm it has
    /// pulled strictly more often than any other bracket.
    pub fn bracket_scores(&self) -> Vec<u64> {
        let mut scores = vec![0u64; self.brackets.len()];
        for &arm in self.s_set.arms() {
            let mut best: Option<(usize, u64)> = None;
            let mut unique = true;
            for &(b, slot) in &self.membership[arm] {
                let pulls = self.brackets[b as usize].own_pulls[slot as usize];
                match best {
                    None => best = Some((b as usize, pulls)),
                    Some((_, p)) if pulls > p => {
                        best = Some((b as usize, pulls));
                        unique = true;
                    }
                    Some((_, p)) if pulls == p => unique = false,
                    _ => {}
                }
            }
            if let Some((b, p)) = best {
                if unique && p > 0 {
                    scores[b] += 1;
                }
            }
        }
        scores
    }

    pub(crate) fn prune_by_score(&mut self) {
        let scores = self.bracket_scores();
        self.prune_with(|i, j| scores[i] < scores[j]);
    }

    /// `dominated(i, j)`: bracket `i` loses to the strictly larger bracket `j`.
    fn prune_with(&mut self, dominated: impl Fn(usize, usize) -> bool) {
        let l = self.brackets.len();
        let max_size = self.brackets.iter().filter(|b| b.active).map(|b| b.arms.len()).max().unwrap_or(0);
        let mut drop = vec![false; l];
        for i in 0..l {
            let bi = &self.brackets[i];
            if !bi.active || bi.arms.len() == max_size {
                continue;
            }
            drop[i] = (0..l).any(|j| {
                let bj = &self.brackets[j];
                bj.active && bj.arms.len() > bi.arms.len() && dominated(i, j)
            });
        }
        for (i, d) in drop.into_iter().enumerate() {
            if d {
                self.brackets[i].active = false;
            }
        }
    }
}
