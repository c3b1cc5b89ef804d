use std::collections::BTreeMap;

use crate::confidence::rlog;
use crate::maxtree::MaxTree;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ArmStat {
    pub count: u64,
    pub sum: f64,
}

impl ArmStat {
    #[inline]
    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// One randomly drawn arm subset with its own statistics and budgets.
#[derive(Clone, Debug)]
pub struct Bracket {
    pub(crate) r: usize,
    pub(crate) arms: Vec<usize>,
    pub(crate) local: Vec<ArmStat>,
    pub(crate) own_pulls: Vec<u64>,
    pub(crate) delta_r: f64,
    pub(crate) delta_prime_r: f64,
    pub(crate) active: bool,
    pub(crate) selected_rounds: u64,
    pub(crate) init_cursor: usize,
    pub(crate) sampling_delta: f64,
    pub(crate) ucb: MaxTree,
    pub(crate) lcb: MaxTree,
    /// smallest BH level `p` at which the slot clears the threshold, `u32::MAX` if none
    pub(crate) bh_p: Vec<u32>,
    pub(crate) bh_index: BTreeMap<u32, Vec<u32>>,
    /// slots whose statistics changed since the bracket was last processed
    pub(crate) dirty: Vec<u32>,
    pub(crate) dirty_flag: Vec<bool>,
    /// slots of `S_t ∩ A_r`, in acceptance order
    pub(crate) accepted_slots: Vec<u32>,
    pub(crate) cost_estimate: Option<f64>,
}

pub(crate) const NO_P: u32 = u32::MAX;

impl Bracket {
    pub(crate) fn new(r: usize, mut arms: Vec<usize>, delta: f64) -> Self {
        arms.sort_unstable();
        let len = arms.len();
        let delta_r = delta / (r * r) as f64;
        Self {
            r,
            local: vec![ArmStat::default(); len],
            own_pulls: vec![0; len],
            delta_r,
            delta_prime_r: delta_prime(delta_r),
            active: true,
            selected_rounds: 0,
            init_cursor: 0,
            sampling_delta: delta,
            ucb: MaxTree::new(len),
            lcb: MaxTree::new(len),
            bh_p: vec![NO_P; len],
            bh_index: BTreeMap::new(),
            dirty: Vec::new(),
            dirty_flag: vec![false; len],
            accepted_slots: Vec::new(),
            cost_estimate: None,
            arms,
        }
    }

    /// Bracket index `r`, starting at 1.
    pub fn index(&self) -> usize {
        self.r
    }

    /// Arm ids in ascending order.
    pub fn arms(&self) -> &[usize] {
        &self.arms
    }

    pub fn size(&self) -> usize {
        self.arms.len()
    }

    pub fn delta_r(&self) -> f64 {
        self.delta_r
    }

    pub fn delta_prime_r(&self) -> f64 {
        self.delta_prime_r
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    /// Rounds in which the cursor landed on this bracket and an arm was pulled.
    pub fn selected_rounds(&self) -> u64 {
        self.selected_rounds
    }

    /// Pulls made by this bracket (its own sampling decisions), per slot.
    pub fn own_pulls(&self) -> &[u64] {
        &self.own_pulls
    }

    pub fn slot_of(&self, arm: usize) -> Option<usize> {
        self.arms.binary_search(&arm).ok()
    }

    /// Budget of the lower confidence bounds used for outputs and FWER acceptance.
    pub fn output_delta(&self, delta: f64) -> f64 {
        delta / (self.arms.len() as f64 * (self.r * self.r) as f64)
    }

    pub(crate) fn mark_dirty(&mut self, slot: usize) {
        if !self.dirty_flag[slot] {
            self.dirty_flag[slot] = true;
            self.dirty.push(slot as u32);
        }
    }

    pub(crate) fn take_dirty(&mut self) -> Vec<u32> {
        let d = std::mem::take(&mut self.dirty);
        for &s in &d {
            self.dirty_flag[s as usize] = false;
        }
        d
    }

    pub(crate) fn set_bh_p(&mut self, slot: usize, p: u32) {
        let old = self.bh_p[slot];
        if old == p {
            return;
        }
        if old != NO_P {
            if let Some(list) = self.bh_index.get_mut(&old) {
                if let Some(pos) = list.iter().position(|&s| s as usize == slot) {
                    list.swap_remove(pos);
                }
                if list.is_empty() {
                    self.bh_index.remove(&old);
                }
            }
        }
        if p != NO_P {
            self.bh_index.entry(p).or_default().push(slot as u32);
        }
        self.bh_p[slot] = p;
    }

    /// Largest `p` with `|s(p)| >= p`, from the per-slot minimal levels.
    pub(crate) fn p_hat(&self) -> Option<u32> {
        let qualified: u32 = self.bh_index.values().map(|v| v.len() as u32).sum();
        if qualified == 0 {
            return None;
        }
        // C(p) is a step function, constant between consecutive keys
        let keys: Vec<(u32, u32)> = self.bh_index.iter().map(|(&k, v)| (k, v.len() as u32)).collect();
        let mut cumulative = qualified;
        for idx in (0..keys.len()).rev() {
            let (key, count) = keys[idx];
            let upper = keys.get(idx + 1).map_or(u32::MAX, |&(k, _)| k - 1);
            let candidate = cumulative.min(upper);
            if candidate >= key {
                return Some(candidate);
            }
            cumulative -= count;
        }
        None
    }

    /// Slots in `s(p)`.
    pub(crate) fn slots_up_to(&self, p: u32) -> impl Iterator<Item = usize> + '_ {
        self.bh_index.range(..=p).flat_map(|(_, v)| v.iter().map(|&s| s as usize))
    }
}

/// `delta_r / (6.4 log(36 / delta_r))`
pub fn delta_prime(delta_r: f64) -> f64 {
    delta_r / (6.4 * rlog(36.0 / delta_r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budgets() {
        let b = Bracket::new(3, vec![9, 2, 5], 0.09);
        assert_eq!(b.arms(), &[2, 5, 9]);
        assert!((b.delta_r() - 0.01).abs() < 1e-15);
        assert!(b.delta_prime_r() < b.delta_r());
        assert!((b.delta_prime_r() - 0.01 / (6.4 * 3600f64.ln())).abs() < 1e-15);
        let b1 = Bracket::new(1, vec![0], 0.05);
        assert!((b1.delta_prime_r() - 0.05 / (6.4 * 720f64.ln())).abs() < 1e-15);
    }

    fn brute_p_hat(ps: &[u32], size: u32) -> Option<u32> {
        (1..=size).rev().find(|&p| ps.iter().filter(|&&q| q <= p).count() as u32 >= p)
    }

    #[test]
    fn p_hat_matches_brute_force() {
        let cases: Vec<Vec<u32>> = vec![
            vec![NO_P, NO_P, NO_P, NO_P],
            vec![2, 2, NO_P, NO_P],
            vec![1, NO_P, NO_P, NO_P],
            vec![3, 3, NO_P, NO_P],
            vec![1, 4, 4, 4],
            vec![2, 3, 3, 4, 6, 6, NO_P, 1],
        ];
        for ps in cases {
            let size = ps.len() as u32;
            let mut b = Bracket::new(1, (0..ps.len()).collect(), 0.05);
            for (slot, &p) in ps.iter().enumerate() {
                b.set_bh_p(slot, p);
            }
            assert_eq!(b.p_hat(), brute_p_hat(&ps, size), "{ps:?}");
        }
    }

    #[test]
    fn bh_index_updates() {
        let mut b = Bracket::new(1, (0..4).collect(), 0.05);
        b.set_bh_p(0, 3);
        b.set_bh_p(1, 3);
        b.set_bh_p(0, 1);
        b.set_bh_p(1, NO_P);
        assert_eq!(b.slots_up_to(4).collect::<Vec<_>>(), vec![0]);
        assert_eq!(b.p_hat(), Some(1));
    }
}
