//! Exhaustive checks of the subset-hitting bound and a comparison table of
//! upper-bound functionals against the k-of-m lower bound.
//!
//! For a random `k`-subset `S` of `[m]` and any `ell`, some `ell`-subset
//! `sigma` satisfies
//!
//! ```text
//! P(sigma ∩ S ≠ ∅) >= 1 - C(m-k, ell) / C(m, ell) >= 1 - exp(-ell k / m)
//! ```
//!
//! [`min_hit_probability`] finds the best `sigma` by enumeration in exact rational
//! arithmetic; [`verify_bound_grid`] runs it for every `(m, k, ell)` up to a
//! size limit under the uniform distribution, where the first inequality is
//! an equality.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::rlog;
use crate::error::{Error, Result};
use crate::hardness::{hardness_best, hardness_fdr, hardness_fwer, hardness_low};
use crate::instance::{summarize, BanditInstance};

/// Largest `m` accepted by the enumerations.
pub const MAX_M: usize = 14;
/// Largest `m` of the default grid.
pub const DEFAULT_GRID_M: usize = 12;
pub const EXP_TOLERANCE: f64 = 1e-12;

pub fn binomial(n: usize, k: usize) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

fn subsets(m: usize, size: usize) -> Vec<u32> {
    (0u32..1 << m).filter(|s| s.count_ones() as usize == size).collect()
}

fn check_budget(m: usize) -> Result<()> {
    if m > MAX_M {
        return Err(Error::Budget(format!("m={m} exceeds the enumeration limit {MAX_M}")));
    }
    Ok(())
}

/// Explicit distribution over `k`-subsets of `[m]`, as bitmasks.
#[derive(Clone, Debug, PartialEq)]
pub struct SubsetDistribution {
    m: usize,
    k: usize,
    atoms: Vec<(u32, BigRational)>,
    uniform: bool,
}

impl SubsetDistribution {
    pub fn uniform(m: usize, k: usize) -> Result<Self> {
        check_budget(m)?;
        if k > m {
            return Err(Error::InvalidParameter(format!("need k <= m, got k={k}, m={m}")));
        }
        let masks = subsets(m, k);
        let p = BigRational::new(BigInt::one(), BigInt::from(masks.len()));
        Ok(Self { m, k, atoms: masks.into_iter().map(|s| (s, p.clone())).collect(), uniform: true })
    }

    pub fn point(m: usize, subset: u32) -> Result<Self> {
        Self::new(m, subset.count_ones() as usize, vec![(subset, BigRational::one())])
    }

    /// Validates masks (size `k`, inside `[m]`, distinct) and that the
    /// probabilities are nonnegative and sum to 1.
    pub fn new(m: usize, k: usize, atoms: Vec<(u32, BigRational)>) -> Result<Self> {
        check_budget(m)?;
        if k > m {
            return Err(Error::InvalidParameter(format!("need k <= m, got k={k}, m={m}")));
        }
        let mut seen = std::collections::HashSet::new();
        let mut total = BigRational::zero();
        for (s, p) in &atoms {
            if s.count_ones() as usize != k || (m < 32 && *s >> m != 0) {
                return Err(Error::InvalidParameter(format!("subset {s:#b} is not a {k}-subset of [{m}]")));
            }
            if !seen.insert(*s) {
                return Err(Error::InvalidParameter(format!("subset {s:#b} listed twice")));
            }
            if *p < BigRational::zero() {
                return Err(Error::InvalidParameter("negative probability".into()));
            }
            total += p;
        }
        if !total.is_one() {
            return Err(Error::InvalidParameter(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { m, k, atoms, uniform: false })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

fn rational_json<S: serde::Serializer>(r: &BigRational, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&r.to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HitCheck {
    pub m: usize,
    pub k: usize,
    pub ell: usize,
    /// `max_sigma P(sigma ∩ S ≠ ∅)`
    #[serde(serialize_with = "rational_json")]
    pub exact_best: BigRational,
    /// A maximizing `sigma`, lowest mask first.
    pub best_sigma: u32,
    /// `1 - C(m-k, ell) / C(m, ell)`
    #[serde(serialize_with = "rational_json")]
    pub formula_bound: BigRational,
    /// `1 - exp(-ell k / m)`
    pub exp_bound: f64,
}

impl HitCheck {
    /// Violated inequalities, empty when all hold.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let (zero, one) = (BigRational::zero(), BigRational::one());
        for (name, v) in [("exact_best", &self.exact_best), ("formula_bound", &self.formula_bound)] {
            if *v < zero || *v > one {
                out.push(format!("{name} = {v} outside [0,1]"));
            }
        }
        if self.exact_best < self.formula_bound {
            out.push(format!("exact_best {} < formula_bound {}", self.exact_best, self.formula_bound));
        }
        let formula = self.formula_bound.to_f64().unwrap_or(f64::NAN);
        if !(formula >= self.exp_bound - EXP_TOLERANCE) {
            out.push(format!("formula_bound {formula} < exp_bound {}", self.exp_bound));
        }
        out
    }
}

pub fn formula_bound(m: usize, k: usize, ell: usize) -> BigRational {
    BigRational::one() - BigRational::new(binomial(m - k, ell), binomial(m, ell))
}

pub fn exp_bound(m: usize, k: usize, ell: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    1.0 - (-(ell as f64) * k as f64 / m as f64).exp()
}

/// Best hitting probability of an `ell`-subset against `dist`, by enumeration.
pub fn min_hit_probability(m: usize, k: usize, ell: usize, dist: &SubsetDistribution) -> Result<HitCheck> {
    check_budget(m)?;
    if dist.m != m || dist.k != k {
        return Err(Error::InvalidParameter(format!(
            "distribution is over {}-subsets of [{}], expected {k}-subsets of [{m}]",
            dist.k, dist.m
        )));
    }
    if ell > m {
        return Err(Error::InvalidParameter(format!("need ell <= m, got ell={ell}, m={m}")));
    }
    let sigmas = subsets(m, ell);
    let (exact_best, best_sigma) = if dist.uniform {
        let (hits, sigma) = sigmas
            .iter()
            .map(|&sig| (dist.atoms.iter().filter(|(s, _)| s & sig != 0).count(), sig))
            .fold((0usize, sigmas[0]), |best, cur| if cur.0 > best.0 { cur } else { best });
        (BigRational::new(BigInt::from(hits), BigInt::from(dist.atoms.len())), sigma)
    } else {
        let mut best: Option<(BigRational, u32)> = None;
        for &sig in &sigmas {
            let p: BigRational = dist.atoms.iter().filter(|(s, _)| s & sig != 0).map(|(_, p)| p).sum();
            if best.as_ref().is_none_or(|(b, _)| p > *b) {
                best = Some((p, sig));
            }
        }
        best.expect("at least one sigma")
    };
    Ok(HitCheck {
        m,
        k,
        ell,
        exact_best,
        best_sigma,
        formula_bound: formula_bound(m, k, ell),
        exp_bound: exp_bound(m, k, ell),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridOptions {
    pub max_m: usize,
    /// Test hook: raises one formula bound so the check must fail.
    pub corrupt: bool,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self { max_m: DEFAULT_GRID_M, corrupt: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridRow {
    #[serde(flatten)]
    pub check: HitCheck,
    pub violations: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
}

impl GridReport {
    pub fn violation_count(&self) -> usize {
        self.rows.iter().filter(|r| !r.violations.is_empty()).count()
    }

    pub fn ok(&self) -> bool {
        self.violation_count() == 0
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("m\tk\tell\texact_best\tformula_bound\texp_bound\tstatus\n");
        for r in &self.rows {
            let c = &r.check;
            let status = if r.violations.is_empty() { "ok".to_string() } else { r.violations.join("; ") };
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                c.m, c.k, c.ell, c.exact_best, c.formula_bound, c.exp_bound, status
            ));
        }
        out
    }
}

/// Uniform-distribution checks for `1 <= k <= m <= max_m`, `0 <= ell <= m`.
/// Besides the inequalities, each row requires `exact_best == formula_bound`.
pub fn verify_bound_grid(opts: GridOptions) -> Result<GridReport> {
    check_budget(opts.max_m)?;
    let cases: Vec<(usize, usize)> = (1..=opts.max_m).flat_map(|m| (1..=m).map(move |k| (m, k))).collect();
    let blocks: Vec<Vec<GridRow>> = cases
        .par_iter()
        .map(|&(m, k)| -> Result<Vec<GridRow>> {
            let dist = SubsetDistribution::uniform(m, k)?;
            (0..=m)
                .map(|ell| {
                    let check = min_hit_probability(m, k, ell, &dist)?;
                    Ok(GridRow { check, violations: Vec::new() })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<GridRow> = blocks.into_iter().flatten().collect();
    if opts.corrupt {
        if let Some(r) = rows.iter_mut().find(|r| r.check.formula_bound > BigRational::zero() && !r.check.formula_bound.is_one()) {
            let bump = BigRational::new(BigInt::one(), binomial(r.check.m, r.check.ell));
            r.check.formula_bound += bump;
        }
    }
    for r in &mut rows {
        let mut v = r.check.violations();
        if r.check.exact_best != r.check.formula_bound {
            v.push(format!("exact_best {} != formula_bound {} under uniform", r.check.exact_best, r.check.formula_bound));
        }
        r.violations = v;
    }
    Ok(GridReport { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub functional: String,
    pub j: usize,
    pub upper: f64,
    /// `None` when the lower bound is not positive.
    pub ratio: Option<f64>,
    pub ratio_over_envelope: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundGapReport {
    pub n: usize,
    pub k: usize,
    pub delta: f64,
    pub h_low: f64,
    /// `max(H_low, eps^-2)`
    pub lower: f64,
    /// `ln(n / delta)`
    pub envelope: f64,
    pub rows: Vec<GapRow>,
    pub notes: Vec<String>,
}

impl BoundGapReport {
    /// Row with the smallest upper bound for `functional`.
    pub fn best(&self, functional: &str) -> Option<&GapRow> {
        self.rows.iter().filter(|r| r.functional == functional).min_by(|a, b| a.upper.total_cmp(&b.upper))
    }

    pub fn to_tsv(&self) -> String {
        let fmt = |x: Option<f64>| x.map_or_else(|| "undefined".to_string(), |v| v.to_string());
        let mut out = String::from("functional\tj\tupper\tratio\tratio_over_envelope\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.functional,
                r.j,
                r.upper,
                fmt(r.ratio),
                fmt(r.ratio_over_envelope)
            ));
        }
        out
    }
}

/// Ratios of the upper-bound functionals to `max(H_low_k(eps), eps^-2)`
/// across their `j` ranges.
pub fn bound_gap_report(instance: &BanditInstance, eps: f64, mu0: f64, k: usize, delta: f64) -> Result<BoundGapReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta must lie in (0,1), got {delta}")));
    }
    let s = summarize(instance, Some(eps), Some(mu0))?;
    let n = s.n();
    let m_eps = s.m_eps.expect("eps given");
    let m_thr = s.m_thr.expect("mu0 given");
    let mut notes = Vec::new();
    let h_low = if k <= m_eps {
        hardness_low(&s, k)?.clamped
    } else {
        notes.push(format!("k={k} exceeds m_eps={m_eps}; H_low omitted"));
        0.0
    };
    let lower = h_low.max(1.0 / (eps * eps));
    let envelope = rlog(n as f64 / delta);
    let mut rows = Vec::new();
    let mut push = |functional: &str, j: usize, upper: f64| {
        let ratio = (lower > 0.0).then(|| upper / lower);
        rows.push(GapRow {
            functional: functional.into(),
            j,
            upper,
            ratio,
            ratio_over_envelope: ratio.map(|r| r / envelope),
        });
    };
    if m_eps < n {
        for j in 1..=m_eps {
            push("h_best", j, hardness_best(&s, delta, j)?);
        }
    } else {
        notes.push("every arm is epsilon-good; h_best rows omitted".into());
    }
    if k <= m_thr {
        for j in k..=m_thr {
            let f = hardness_fdr(&s, delta, k, j)?;
            push("h_fdr", j, f.h_fdr);
            push("h_fdr_tilde", j, f.h_fdr_tilde);
            push("h_fwer", j, hardness_fwer(&s, delta, k, j)?);
        }
    } else {
        notes.push(format!("k={k} exceeds m_thr={m_thr}; threshold rows omitted"));
    }
    Ok(BoundGapReport { n, k, delta, h_low, lower, envelope, rows, notes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{two_spike, ArmKind};

    fn q(a: i64, b: i64) -> BigRational {
        BigRational::new(BigInt::from(a), BigInt::from(b))
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(4, 2), BigInt::from(6));
        assert_eq!(binomial(14, 7), BigInt::from(3432));
        assert_eq!(binomial(3, 5), BigInt::zero());
        assert_eq!(binomial(0, 0), BigInt::one());
    }

    #[test]
    fn four_two_two_is_five_sixths() {
        let c = min_hit_probability(4, 2, 2, &SubsetDistribution::uniform(4, 2).unwrap()).unwrap();
        assert_eq!(c.exact_best, q(5, 6));
        assert_eq!(c.formula_bound, q(5, 6));
        assert!(c.violations().is_empty());
    }

    #[test]
    fn large_ell_always_hits() {
        for (m, k) in [(5, 2), (7, 3), (6, 6)] {
            let dist = SubsetDistribution::uniform(m, k).unwrap();
            for ell in m - k + 1..=m {
                assert!(min_hit_probability(m, k, ell, &dist).unwrap().exact_best.is_one());
            }
        }
    }

    #[test]
    fn point_mass_is_hit() {
        let dist = SubsetDistribution::point(6, 0b100100).unwrap();
        let c = min_hit_probability(6, 2, 1, &dist).unwrap();
        assert!(c.exact_best.is_one());
        assert_eq!(c.best_sigma, 0b000100);
    }

    #[test]
    fn general_distribution_matches_brute_force() {
        // two subsets of [4] with weights 1/3, 2/3; sigma of size 1
        let dist = SubsetDistribution::new(4, 2, vec![(0b0011, q(1, 3)), (0b1100, q(2, 3))]).unwrap();
        let c = min_hit_probability(4, 2, 1, &dist).unwrap();
        assert_eq!(c.exact_best, q(2, 3));
        assert_eq!(c.best_sigma, 0b0100);
        assert!(c.exact_best > c.formula_bound);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(SubsetDistribution::uniform(15, 2), Err(Error::Budget(_))));
        assert!(matches!(
            verify_bound_grid(GridOptions { max_m: 15, corrupt: false }),
            Err(Error::Budget(_))
        ));
        assert!(SubsetDistribution::new(4, 2, vec![(0b0111, BigRational::one())]).is_err());
        assert!(SubsetDistribution::new(4, 2, vec![(0b0011, q(1, 2))]).is_err());
        assert!(SubsetDistribution::new(3, 1, vec![(0b1000, BigRational::one())]).is_err());
        let dist = SubsetDistribution::uniform(4, 2).unwrap();
        assert!(min_hit_probability(4, 2, 5, &dist).is_err());
        assert!(min_hit_probability(5, 2, 1, &dist).is_err());
    }

    #[test]
    fn small_grid_holds_and_corruption_is_caught() {
        let ok = verify_bound_grid(GridOptions { max_m: 7, corrupt: false }).unwrap();
        assert!(ok.ok());
        assert_eq!(ok.rows.len(), (1..=7).map(|m| m * (m + 1)).sum::<usize>());
        let bad = verify_bound_grid(GridOptions { max_m: 7, corrupt: true }).unwrap();
        assert_eq!(bad.violation_count(), 1);
        assert!(bad.to_tsv().lines().count() == bad.rows.len() + 1);
    }

    #[test]
    fn gap_report_two_spike() {
        let inst = two_spike(100, 10, 0.0, 1.0, ArmKind::Gaussian, 1).unwrap();
        let r = bound_gap_report(&inst, 1.0, 0.0, 1, 0.05).unwrap();
        let tilde_m = r.rows.iter().find(|x| x.functional == "h_fdr_tilde" && x.j == 10).unwrap();
        // n/j * k * gap^-2 * ln(1/delta) over max(H_low, 1)
        let expect_upper = 10.0 * (1.0f64 / 0.05).ln();
        assert!((tilde_m.upper - expect_upper).abs() < 1e-9);
        assert!(tilde_m.ratio.unwrap() > 0.0);
        assert!(r.best("h_best").is_some());

        let all_good = two_spike(8, 8, 0.0, 1.0, ArmKind::Gaussian, 1).unwrap();
        let r = bound_gap_report(&all_good, 1.0, 0.0, 2, 0.05).unwrap();
        assert!(r.rows.iter().all(|x| x.functional != "h_best"));
        assert!(!r.notes.is_empty());
    }

    #[test]
    fn gap_report_scales_with_k() {
        let inst = two_spike(64, 16, 0.0, 1.0, ArmKind::Gaussian, 2).unwrap();
        let a = bound_gap_report(&inst, 1.0, 0.0, 2, 0.05).unwrap();
        let b = bound_gap_report(&inst, 1.0, 0.0, 4, 0.05).unwrap();
        let up = |r: &BoundGapReport| r.rows.iter().find(|x| x.functional == "h_fdr_tilde" && x.j == 16).unwrap().upper;
        assert!((up(&b) / up(&a) - 2.0).abs() < 1e-12);
        // (3k - 1) / 64 for n=64, m=16, unit gap
        assert!((a.h_low - 5.0 / 64.0).abs() < 1e-12);
        assert!((b.h_low - 11.0 / 64.0).abs() < 1e-12);
    }
}
