//! Complexity functionals of an instance: the k-of-m lower bound, the upper
//! bound quantities for epsilon-good identification and for threshold
//! discovery under FDR and FWER control, and the classical PAC lower bounds.
//!
//! All functionals depend on the sorted means only. Ranks are 1-based and
//! every logarithm is [`reg_log`](crate::confidence::reg_log).

use serde::{Deserialize, Serialize};

use crate::confidence::rlog;
use crate::error::{Error, Result};
use crate::instance::InstanceSummary;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub raw: f64,
    pub clamped: f64,
    /// No arm lies outside the epsilon-good set; the bound is defined as 0.
    pub vacuous: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdrHardness {
    pub h_fdr: f64,
    pub h_fdr_tilde: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacBounds {
    pub k1: f64,
    /// Undefined when every arm is epsilon-good.
    pub km: Option<f64>,
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("delta must lie in (0,1), got {delta}")))
    }
}

fn m_eps(s: &InstanceSummary) -> Result<usize> {
    s.m_eps.ok_or_else(|| Error::InvalidParameter("summary has no epsilon".into()))
}

fn m_thr(s: &InstanceSummary) -> Result<(usize, f64)> {
    match (s.m_thr, s.mu0) {
        (Some(m), Some(mu0)) => Ok((m, mu0)),
        _ => Err(Error::InvalidParameter("summary has no threshold mu0".into())),
    }
}

#[inline]
fn inv_sq(x: f64) -> f64 {
    1.0 / (x * x)
}

/// Lower bound on the expected samples needed to return `k` of the `m`
/// epsilon-good arms.
pub fn hardness_low(s: &InstanceSummary, k: usize) -> Result<LowerBound> {
    let m = m_eps(s)?;
    let n = s.n();
    if k == 0 || k > m {
        return Err(Error::InvalidParameter(format!("k must lie in [1, m={m}], got {k}")));
    }
    if m == n {
        return Ok(LowerBound { raw: 0.0, clamped: 0.0, vacuous: true });
    }
    let mu1 = s.mean_at(1);
    let bottom: f64 = (m + 1..=n).map(|i| inv_sq(mu1 - s.mean_at(i))).sum();
    let raw = (-inv_sq(mu1 - s.mean_at(m + 1)) + (k as f64 / m as f64) * bottom) / 64.0;
    Ok(LowerBound { raw, clamped: raw.max(0.0), vacuous: false })
}

/// Expected samples for a bracket of size about `n / j` to surface an
/// epsilon-good arm.
pub fn hardness_best(s: &InstanceSummary, delta: f64, j: usize) -> Result<f64> {
    check_delta(delta)?;
    let m = m_eps(s)?;
    let n = s.n();
    if j == 0 || j > m {
        return Err(Error::InvalidParameter(format!("j must lie in [1, m={m}], got {j}")));
    }
    if m == n {
        return Err(Error::Undefined("every arm is epsilon-good; mu_{m+1} does not exist".into()));
    }
    let top: f64 = (1..=j).map(|i| inv_sq(s.gap(i, m + 1))).sum::<f64>()
        + (j + 1..=m).map(|i| inv_sq(s.gap(j, i).max(s.gap(i, m + 1)))).sum::<f64>();
    let bottom: f64 = (m + 1..=n).map(|i| inv_sq(s.gap(j, i))).sum();
    let jf = j as f64;
    Ok((top * rlog(n as f64 / (jf * delta)) + bottom * rlog(1.0 / delta)) / jf)
}

/// `(argmin_j, min_j)` of [`hardness_best`] over `j` in `[1, m]`; ties go to the smaller `j`.
pub fn best_minimizer(s: &InstanceSummary, delta: f64) -> Result<(usize, f64)> {
    let m = m_eps(s)?;
    let mut best = (0, f64::INFINITY);
    for j in 1..=m {
        let v = hardness_best(s, delta, j)?;
        if v < best.1 {
            best = (j, v);
        }
    }
    Ok(best)
}

fn check_kj(m: usize, k: usize, j: usize) -> Result<()> {
    if k == 0 || k > j || j > m {
        return Err(Error::InvalidParameter(format!("need 1 <= k <= j <= m={m}, got k={k}, j={j}")));
    }
    Ok(())
}

/// Top-arm and bottom-arm gap sums shared by the FDR functionals.
struct ThresholdParts {
    top: f64,
    bottom: f64,
    gap_j: f64,
}

fn threshold_parts(s: &InstanceSummary, m: usize, mu0: f64, j: usize) -> ThresholdParts {
    let n = s.n();
    let gap_j = s.mean_at(j) - mu0;
    let top = j as f64 * inv_sq(gap_j) + (j + 1..=m).map(|i| inv_sq(s.mean_at(i) - mu0)).sum::<f64>();
    let bottom = (m + 1..=n).map(|i| inv_sq(s.gap(j, i))).sum();
    ThresholdParts { top, bottom, gap_j }
}

fn fdr_from_parts(n: usize, delta: f64, k: usize, j: usize, p: &ThresholdParts) -> FdrHardness {
    let (nf, kf, jf) = (n as f64, k as f64, j as f64);
    let h_fdr = kf / jf * (p.top * rlog(nf * kf / (jf * delta)) + p.bottom * rlog(1.0 / delta));
    let h_fdr_tilde = nf / jf * kf * inv_sq(p.gap_j) * rlog(1.0 / delta);
    FdrHardness { h_fdr, h_fdr_tilde }
}

pub fn hardness_fdr(s: &InstanceSummary, delta: f64, k: usize, j: usize) -> Result<FdrHardness> {
    check_delta(delta)?;
    let (m, mu0) = m_thr(s)?;
    check_kj(m, k, j)?;
    let parts = threshold_parts(s, m, mu0, j);
    if !(parts.gap_j > 0.0) {
        return Err(Error::Undefined(format!("mu_{j} equals mu0")));
    }
    Ok(fdr_from_parts(s.n(), delta, k, j, &parts))
}

pub fn hardness_fwer(s: &InstanceSummary, delta: f64, k: usize, j: usize) -> Result<f64> {
    check_delta(delta)?;
    let (m, mu0) = m_thr(s)?;
    check_kj(m, k, j)?;
    Ok(fwer_unchecked(s, m, mu0, delta, k, j, &bottom_fwer(s, m, delta, j)))
}

fn bottom_fwer(s: &InstanceSummary, m: usize, delta: f64, j: usize) -> f64 {
    (m + 1..=s.n())
        .map(|i| {
            let g = inv_sq(s.gap(j, i));
            g * rlog(rlog(g) / delta)
        })
        .sum()
}

fn fwer_unchecked(s: &InstanceSummary, m: usize, mu0: f64, delta: f64, k: usize, j: usize, bottom: &f64) -> f64 {
    let (nf, kf, jf) = (s.n() as f64, k as f64, j as f64);
    let lead = nf * kf / (jf * delta);
    let top: f64 = (1..=m)
        .map(|i| {
            let g = inv_sq(s.mean_at(i.max(j)) - mu0);
            g * rlog(lead * rlog(g))
        })
        .sum();
    kf / jf * (top + bottom)
}

/// Classical PAC lower bounds for returning one (`k1`) or all (`km`)
/// epsilon-good arms.
pub fn hardness_pac(s: &InstanceSummary, delta: f64) -> Result<PacBounds> {
    if !(delta > 0.0 && delta < 1.0 / 2.4) {
        return Err(Error::InvalidParameter(format!("PAC bounds need 0 < delta < 1/2.4, got {delta}")));
    }
    let m = m_eps(s)?;
    let eps = s.eps.expect("m_eps implies eps");
    let n = s.n();
    let lg = rlog(1.0 / (2.4 * delta));
    let mu1 = s.mean_at(1);
    let k1 = 0.5 * lg * ((m as f64 - 1.0) * inv_sq(eps) + (m + 1..=n).map(|i| inv_sq(mu1 - s.mean_at(i))).sum::<f64>());
    let km = (m < n).then(|| {
        2.0 * lg
            * ((1..=m).map(|i| inv_sq(s.gap(i, m + 1))).sum::<f64>()
                + (m + 1..=n).map(|i| inv_sq(s.gap(m, i))).sum::<f64>())
    });
    Ok(PacBounds { k1, km })
}

/// Sample-complexity proxy for FWER-FWPD discovery of `k` arms, in terms of
/// the smallest positive threshold gap.
pub fn v_tilde(s: &InstanceSummary, delta: f64, k: usize) -> Result<f64> {
    check_delta(delta)?;
    let (m, mu0) = m_thr(s)?;
    if k == 0 || k > m {
        return Err(Error::InvalidParameter(format!("k must lie in [1, m={m}], got {k}")));
    }
    let n = s.n() as f64;
    let (mf, kf) = (m as f64, k as f64);
    let gap = s.mean_at(m) - mu0;
    let g = inv_sq(gap);
    let size = n / mf * kf;
    let loglog = rlog(rlog(size / delta));
    let shared = rlog(g) * rlog(size) / delta;
    let first = (size - kf) * g * rlog(kf.max(loglog) * shared);
    let keep = 1.0 - 2.0 * delta * (1.0 + 4.0 * delta);
    let second = kf * rlog((size - keep * kf).max(loglog) * shared);
    Ok(first + second)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardnessParams {
    pub delta: f64,
    pub eps: Option<f64>,
    pub mu0: Option<f64>,
    /// Emit the full `(k, j)` grid only when `m_thr` is at most this.
    pub grid_limit: usize,
}

impl Default for HardnessParams {
    fn default() -> Self {
        Self { delta: 0.05, eps: None, mu0: None, grid_limit: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowRow {
    pub k: usize,
    pub raw: f64,
    pub clamped: f64,
    pub vacuous: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRow {
    pub j: usize,
    pub h_best: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub k: usize,
    pub j: usize,
    pub h_fdr: f64,
    pub h_fdr_tilde: f64,
    pub h_fwer: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMin {
    pub k: usize,
    pub j_fdr: usize,
    pub h_fdr: f64,
    pub j_fdr_tilde: usize,
    pub h_fdr_tilde: f64,
    pub j_fwer: usize,
    pub h_fwer: f64,
    pub v_tilde: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeFlag {
    pub result: String,
    pub delta_range: String,
    pub satisfied: bool,
}

pub const REPORT_FORMAT: &str = "infucb-hardness";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardnessReport {
    pub format: String,
    pub version: u32,
    pub label: String,
    pub n: usize,
    pub delta: f64,
    pub eps: Option<f64>,
    pub mu0: Option<f64>,
    pub m_eps: Option<usize>,
    pub m_thr: Option<usize>,
    pub h_low: Vec<LowRow>,
    pub h_best: Vec<BestRow>,
    pub h_best_argmin: Option<usize>,
    pub h_best_min: Option<f64>,
    pub pac: Option<PacBounds>,
    pub threshold_min: Vec<ThresholdMin>,
    pub threshold_grid: Vec<ThresholdRow>,
    pub delta_flags: Vec<RangeFlag>,
}

impl HardnessReport {
    pub fn compute(label: &str, s: &InstanceSummary, params: &HardnessParams) -> Result<Self> {
        let delta = params.delta;
        check_delta(delta)?;
        let n = s.n();
        let mut report = HardnessReport {
            format: REPORT_FORMAT.into(),
            version: 1,
            label: label.into(),
            n,
            delta,
            eps: s.eps,
            mu0: s.mu0,
            m_eps: s.m_eps,
            m_thr: s.m_thr,
            h_low: Vec::new(),
            h_best: Vec::new(),
            h_best_argmin: None,
            h_best_min: None,
            pac: None,
            threshold_min: Vec::new(),
            threshold_grid: Vec::new(),
            delta_flags: delta_flags(delta),
        };

        if let Some(m) = s.m_eps {
            for k in 1..=m {
                let lb = hardness_low(s, k)?;
                report.h_low.push(LowRow { k, raw: lb.raw, clamped: lb.clamped, vacuous: lb.vacuous });
            }
            if m < n {
                for j in 1..=m {
                    report.h_best.push(BestRow { j, h_best: hardness_best(s, delta, j)? });
                }
                let (j, v) = best_minimizer(s, delta)?;
                report.h_best_argmin = Some(j);
                report.h_best_min = Some(v);
            }
            if delta < 1.0 / 2.4 {
                report.pac = Some(hardness_pac(s, delta)?);
            }
        }

        if let (Some(m), Some(mu0)) = (s.m_thr, s.mu0) {
            let parts: Vec<ThresholdParts> = (1..=m).map(|j| threshold_parts(s, m, mu0, j)).collect();
            let bottoms: Vec<f64> = (1..=m).map(|j| bottom_fwer(s, m, delta, j)).collect();
            let full = m <= params.grid_limit;
            for k in 1..=m {
                let mut mins = ThresholdMin {
                    k,
                    j_fdr: 0,
                    h_fdr: f64::INFINITY,
                    j_fdr_tilde: 0,
                    h_fdr_tilde: f64::INFINITY,
                    j_fwer: 0,
                    h_fwer: f64::INFINITY,
                    v_tilde: v_tilde(s, delta, k)?,
                };
                for j in k..=m {
                    let f = fdr_from_parts(n, delta, k, j, &parts[j - 1]);
                    let w = fwer_unchecked(s, m, mu0, delta, k, j, &bottoms[j - 1]);
                    if f.h_fdr < mins.h_fdr {
                        mins.j_fdr = j;
                        mins.h_fdr = f.h_fdr;
                    }
                    if f.h_fdr_tilde < mins.h_fdr_tilde {
                        mins.j_fdr_tilde = j;
                        mins.h_fdr_tilde = f.h_fdr_tilde;
                    }
                    if w < mins.h_fwer {
                        mins.j_fwer = j;
                        mins.h_fwer = w;
                    }
                    if full {
                        report.threshold_grid.push(ThresholdRow {
                            k,
                            j,
                            h_fdr: f.h_fdr,
                            h_fdr_tilde: f.h_fdr_tilde,
                            h_fwer: w,
                        });
                    }
                }
                report.threshold_min.push(mins);
            }
        }
        Ok(report)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn delta_flags(delta: f64) -> Vec<RangeFlag> {
    let flag = |result: &str, range: &str, ok: bool| RangeFlag {
        result: result.into(),
        delta_range: range.into(),
        satisfied: ok,
    };
    vec![
        flag("k-of-m lower bound", "(0, 1/16)", delta < 1.0 / 16.0),
        flag("epsilon-good and FDR/FWER upper bounds", "(0, 0.025]", delta <= 0.025),
        flag("FWER-FWPD upper bound", "(0, 1/600)", delta < 1.0 / 600.0),
        flag("PAC lower bounds", "(0, 1/2.4)", delta < 1.0 / 2.4),
        flag("best-of-both-worlds", "(0, 1/40)", delta < 1.0 / 40.0),
    ]
}
