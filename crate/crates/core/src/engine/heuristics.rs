use crate::confidence::rlog;

/// Probability of taking the cheapest bracket in cost-driven selection.
pub const COST_SELECT_PROB: f64 = 0.9;

const TOP: usize = 5;
const GAP_FLOOR: f64 = 1e-2;

/// Statistics of one bracket's not-yet-accepted arms, as `(pulls, mean)`.
#[derive(Clone, Copy, Debug)]
pub struct CostInputs<'a> {
    pub arms: &'a [(u64, Option<f64>)],
    pub bracket_size: usize,
    pub brackets_to_open: usize,
    pub delta: f64,
    pub mu0: f64,
}

/// Estimated pulls for a bracket to accept five more arms.
///
/// The five empirically best arms are charged `gap^-2 log(|A| L / delta) - T`
/// with `gap = mean - mu0`; every other arm is charged `(lambda - mean)^-2 log(L / delta) - T`
/// where `lambda = mu0 + 2 (m5 - mu0)` and `m5` is the fifth largest mean.
/// Unpulled arms cost one pull. Negative terms count as zero.
pub fn cost_estimate(inp: &CostInputs<'_>) -> f64 {
    let mut pulled: Vec<(f64, u64)> = inp.arms.iter().filter_map(|&(t, m)| m.map(|m| (m, t))).collect();
    let unpulled = inp.arms.len() - pulled.len();
    pulled.sort_by(|a, b| b.0.total_cmp(&a.0));
    let l = inp.brackets_to_open.max(1) as f64;
    let log_top = rlog(inp.bracket_size as f64 * l / inp.delta);
    let log_rest = rlog(l / inp.delta);
    let top = pulled.len().min(TOP);
    let mut cost = unpulled as f64;
    for &(mean, t) in &pulled[..top] {
        let gap = (mean - inp.mu0).max(GAP_FLOOR);
        cost += (log_top / (gap * gap) - t as f64).max(0.0);
    }
    if top > 0 {
        let m5 = pulled[top - 1].0;
        let lambda = inp.mu0 + 2.0 * (m5 - inp.mu0);
        for &(mean, t) in &pulled[top..] {
            let gap = (lambda - mean).max(GAP_FLOOR);
            cost += (log_rest / (gap * gap) - t as f64).max(0.0);
        }
    }
    cost
}

/// Picks from `(bracket, cost)` candidates: the cheapest when `u < prob`,
/// otherwise the next of the remaining candidates in rotation.
pub fn choose_by_cost(costs: &[(usize, f64)], u: f64, prob: f64, rotation: &mut usize) -> usize {
    assert!(!costs.is_empty(), "no candidate brackets");
    let mut best = 0;
    for (i, &(_, c)) in costs.iter().enumerate() {
        if c < costs[best].1 {
            best = i;
        }
    }
    if costs.len() == 1 || u < prob {
        return costs[best].0;
    }
    let others = costs.len() - 1;
    let k = *rotation % others;
    *rotation = rotation.wrapping_add(1);
    let idx = if k >= best { k + 1 } else { k };
    costs[idx].0
}
