//! Output and acceptance rules on top of the bracket engine.
//!
//! * best-arm: `O_t`, the LCB argmax over every pulled (arm, bracket) pair,
//!   with per-bracket budget `delta / (|A_r| r^2)`.
//! * FDR: a bandit Benjamini-Hochberg step on the selected bracket, growing `S_t`.
//! * FWER-TPR: Bonferroni-budget LCB acceptance into `Q_t`.
//! * FWER-FWPD: the BH step plus a second pull `J_t` that certifies members
//!   of `S_t` into `D_t`.

use serde::{Deserialize, Serialize};

use crate::confidence::{rlog, ConfidenceSchedule};
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::instance::BanditInstance;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    #[serde(rename = "output_Ot")]
    OutputOt,
    FdrAccept,
    FwerAccept,
    FwpdAccept,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::OutputOt => "output_Ot",
            EventKind::FdrAccept => "fdr_accept",
            EventKind::FwerAccept => "fwer_accept",
            EventKind::FwpdAccept => "fwpd_accept",
        }
    }
}

impl std::str::FromStr for EventKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "output_Ot" => Ok(EventKind::OutputOt),
            "fdr_accept" => Ok(EventKind::FdrAccept),
            "fwer_accept" => Ok(EventKind::FwerAccept),
            "fwpd_accept" => Ok(EventKind::FwpdAccept),
            other => Err(Error::Config(format!("unknown event kind {other:?}"))),
        }
    }
}

/// Arms newly added to an accepted set in round `t`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommendationEvent {
    pub t: u64,
    pub kind: EventKind,
    pub arms: Vec<usize>,
    pub bracket_r: usize,
    pub p_hat: Option<usize>,
}

/// `max(2 s, 5 / (3 (1 - 4 delta_r)) * log(1/delta_r) * r^2)` with `s = |S_t ∩ A_r|`.
pub fn fwpd_xi(accepted_in_bracket: usize, delta_r: f64, r: usize) -> f64 {
    let floor = 5.0 / (3.0 * (1.0 - 4.0 * delta_r)) * rlog(1.0 / delta_r) * (r * r) as f64;
    (2.0 * accepted_in_bracket as f64).max(floor)
}

/// `|A| - (1 - 2 d (1 + 4 d)) s + 4 (1 + 4 d) / 3 * log(5 log2(|A| / d) / d)` with `d = delta'_r`.
pub fn fwpd_chi(bracket_size: usize, accepted_in_bracket: usize, delta_prime_r: f64) -> f64 {
    let d = delta_prime_r;
    let a = bracket_size as f64;
    a - (1.0 - 2.0 * d * (1.0 + 4.0 * d)) * accepted_in_bracket as f64
        + 4.0 * (1.0 + 4.0 * d) / 3.0 * rlog(5.0 * (a / d).log2() / d)
}

/// Smallest BH level `p` in `1..=size` at which an arm with `count` pulls and
/// empirical `mean` has `mean - U(count, (p / size) bh_delta) >= mu0`.
pub fn bh_min_level(
    schedule: &ConfidenceSchedule,
    count: u64,
    mean: f64,
    mu0: f64,
    size: usize,
    bh_delta: f64,
) -> Option<usize> {
    if count == 0 {
        return None;
    }
    let clears = |p: usize| mean - schedule.radius(count, p as f64 / size as f64 * bh_delta) >= mu0;
    if !clears(size) {
        return None;
    }
    let gap = mean - mu0;
    let y = count as f64 * gap * gap / (schedule.scale_c * schedule.variance_proxy);
    let l = (2.0 * count as f64).log2();
    let guess = size as f64 * l * (-y).exp() / bh_delta;
    let mut p = if guess.is_finite() { (guess.ceil() as usize).clamp(1, size) } else { size };
    while p < size && !clears(p) {
        p += 1;
    }
    while p > 1 && clears(p - 1) {
        p -= 1;
    }
    Some(p)
}

/// Reference BH selection on explicit LCB functions: returns `(p_hat, s(p_hat))`.
pub fn bh_select(size: usize, mut qualifies: impl FnMut(usize, usize) -> bool) -> Option<(usize, Vec<usize>)> {
    (1..=size).rev().find_map(|p| {
        let s: Vec<usize> = (0..size).filter(|&i| qualifies(i, p)).collect();
        (s.len() >= p).then_some((p, s))
    })
}

impl Engine {
    /// `O_t`: LCB argmax over pulled (arm, bracket) pairs of active brackets;
    /// ties to the lowest arm id, then the lowest bracket.
    pub fn best_arm_output(&self) -> Result<usize> {
        let mut best: Option<(f64, usize)> = None;
        for br in self.brackets.iter().filter(|b| b.active) {
            if let Some((slot, key)) = br.lcb.argmax() {
                let arm = br.arms[slot];
                let better = match best {
                    None => true,
                    Some((k, a)) => key > k || (key == k && arm < a),
                };
                if better {
                    best = Some((key, arm));
                }
            }
        }
        best.map(|(_, a)| a).ok_or(Error::NoPulledArm)
    }

    /// Best lower bound of `arm` over active brackets, as `(r, lcb)`; lowest `r` on ties.
    pub fn arm_lcb(&self, arm: usize) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for &(b, slot) in &self.membership[arm] {
            let br = &self.brackets[b as usize];
            if !br.active {
                continue;
            }
            let st = self.stat(b as usize, slot as usize);
            let Some(mean) = st.mean() else { continue };
            let lcb = mean - self.cfg.schedule.radius(st.count, br.output_delta(self.cfg.delta));
            if best.map_or(true, |(_, v)| lcb > v) {
                best = Some((br.r, lcb));
            }
        }
        best
    }

    /// BH step on bracket position `b`: `S <- S ∪ s(p_hat)`.
    pub(crate) fn fdr_step(&mut self, b: usize) {
        let Some(p) = self.brackets[b].p_hat() else { return };
        let mut fresh: Vec<usize> = self.brackets[b]
            .slots_up_to(p)
            .map(|slot| self.brackets[b].arms[slot])
            .filter(|&arm| !self.s_set.contains(arm))
            .collect();
        if fresh.is_empty() {
            return;
        }
        fresh.sort_unstable();
        for &arm in &fresh {
            self.accept_fdr(arm);
        }
        let r = self.brackets[b].r;
        self.push_event(crate::recommend::EventKind::FdrAccept, r, fresh, Some(p as usize));
    }

    /// `Q <- Q ∪ {i in A_r : LCB at delta/(|A_r| r^2) >= mu0}`, checking changed slots only.
    pub(crate) fn fwer_tpr_step(&mut self, b: usize) {
        let mu0 = self.cfg.mu0.unwrap_or(f64::INFINITY);
        let dirty = self.brackets[b].take_dirty();
        let mut fresh: Vec<usize> = dirty
            .into_iter()
            .map(|s| s as usize)
            .filter(|&slot| self.brackets[b].lcb.get(slot) >= mu0)
            .map(|slot| self.brackets[b].arms[slot])
            .filter(|&arm| !self.q_set.contains(arm))
            .collect();
        if fresh.is_empty() {
            return;
        }
        fresh.sort_unstable();
        for &arm in &fresh {
            self.accept_fwer(arm);
        }
        let r = self.brackets[b].r;
        self.push_event(EventKind::FwerAccept, r, fresh, None);
    }

    /// The `J_t` pull and `D_t` update, over the first `s_before` accepted slots of `b`
    /// (`S_t ∩ A_r` before this round's BH step).
    pub(crate) fn fwpd_secondary(&mut self, instance: &BanditInstance, b: usize, s_before: usize) {
        if s_before == 0 {
            return;
        }
        let br = &self.brackets[b];
        let nu = s_before.max(1) as f64;
        let j_delta = br.delta_r / nu;
        let mut j: Option<(usize, f64)> = None;
        for &slot in &br.accepted_slots[..s_before] {
            let slot = slot as usize;
            let arm = br.arms[slot];
            if self.d_set.contains(arm) {
                continue;
            }
            let st = self.stat(b, slot);
            let key = match st.mean() {
                None => f64::INFINITY,
                Some(m) => m + self.cfg.schedule.radius(st.count, j_delta),
            };
            let better = match j {
                None => true,
                Some((s, k)) => key > k || (key == k && arm < br.arms[s]),
            };
            if better {
                j = Some((slot, key));
            }
        }
        let Some((j_slot, _)) = j else { return };
        let rec = self.pull(instance, b, j_slot, false);
        self.outcome.secondary = Some(rec);

        let br = &self.brackets[b];
        let chi = fwpd_chi(br.arms.len(), s_before, br.delta_prime_r);
        let acc_delta = self.cfg.delta / chi;
        let mu0 = self.cfg.mu0.unwrap_or(f64::INFINITY);
        let mut fresh: Vec<usize> = br.accepted_slots[..s_before]
            .iter()
            .map(|&s| s as usize)
            .filter(|&slot| !self.d_set.contains(br.arms[slot]))
            .filter(|&slot| {
                let st = self.stat(b, slot);
                st.mean().is_some_and(|m| m - self.cfg.schedule.radius(st.count, acc_delta) >= mu0)
            })
            .map(|slot| br.arms[slot])
            .collect();
        if fresh.is_empty() {
            return;
        }
        fresh.sort_unstable();
        for &arm in &fresh {
            self.accept_fwpd(arm);
        }
        let r = self.brackets[b].r;
        self.push_event(EventKind::FwpdAccept, r, fresh, None);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn radius(t: u64, d: f64) -> f64 {
        let l = ((2 * t) as f64).log2();
        (4.0 * ((l / d).ln()).max(1.0) / t as f64).sqrt()
    }

    #[test]
    fn xi_branches() {
        let delta_r = 0.05;
        let floor = 5.0 / (3.0 * 0.8) * 20f64.ln();
        assert!((fwpd_xi(0, delta_r, 1) - floor).abs() < 1e-12);
        assert!((fwpd_xi(0, 0.05 / 4.0, 2) - 5.0 / (3.0 * 0.95) * 80f64.ln() * 4.0).abs() < 1e-9);
        assert_eq!(fwpd_xi(1000, delta_r, 1), 2000.0);
    }

    #[test]
    fn chi_value() {
        // |A| = 64, delta = 0.05, r = 1
        let dr: f64 = 0.05;
        let dp = dr / (6.4 * (36.0 / dr).ln());
        let expect_empty = 64.0 + 4.0 * (1.0 + 4.0 * dp) / 3.0 * (5.0 * (64.0 / dp).log2() / dp).ln();
        assert!((fwpd_chi(64, 0, dp) - expect_empty).abs() < 1e-9);
        assert!((fwpd_chi(64, 0, dp) - 78.87055235725671).abs() < 1e-9, "{}", fwpd_chi(64, 0, dp));
        let with10 = expect_empty - (1.0 - 2.0 * dp * (1.0 + 4.0 * dp)) * 10.0;
        assert!((fwpd_chi(64, 10, dp) - with10).abs() < 1e-9);
    }

    #[test]
    fn bh_min_level_matches_scan() {
        let sched = ConfidenceSchedule::default();
        for count in [1u64, 3, 10, 50, 200, 1000] {
            for &mean in &[0.3, 0.8, 1.2, 2.0, 3.5] {
                for &size in &[1usize, 4, 64, 1000] {
                    let bh = 0.05 / (6.4 * 720f64.ln());
                    let scan = (1..=size).find(|&p| mean - radius(count, p as f64 / size as f64 * bh) >= 0.0);
                    assert_eq!(bh_min_level(&sched, count, mean, 0.0, size, bh), scan, "{count} {mean} {size}");
                }
            }
        }
    }

    #[test]
    fn bh_select_two_of_four() {
        // arms a, b clear mu0 at p >= 2, arms c, d never
        let got = bh_select(4, |i, p| i < 2 && p >= 2);
        assert_eq!(got, Some((2, vec![0, 1])));
        assert_eq!(bh_select(4, |_, _| false), None);
        assert_eq!(bh_select(4, |i, p| i == 0 && p >= 2), None);
    }
}
