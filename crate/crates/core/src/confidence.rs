//! Anytime confidence radii.
//!
//! The default radius is a finite law-of-the-iterated-logarithm bound for
//! sub-Gaussian rewards,
//!
//! ```text
//! U(t, delta) = sqrt( c * sigma^2 * reglog( log2(2t) / delta ) / t )
//! ```
//!
//! with `c = 4` and `sigma^2 = 1`. Every logarithm written `log` in the
//! algorithms and hardness formulas goes through [`reg_log`], which floors
//! the natural logarithm at 1.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confidence budgets below this value are clamped before taking logs.
pub const DELTA_FLOOR: f64 = 1e-300;

static CLAMP_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Number of times a confidence budget was clamped to [`DELTA_FLOOR`] in this process.
pub fn clamp_events() -> u64 {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

/// `max(ln(x), 1)`.
pub fn reg_log(x: f64) -> Result<f64> {
    if x > 0.0 && !x.is_nan() {
        Ok(rlog(x))
    } else {
        Err(Error::Domain(format!("reg_log requires a positive argument, got {x}")))
    }
}

/// Unchecked [`reg_log`] for internal callers that already hold a positive argument.
#[inline]
pub(crate) fn rlog(x: f64) -> f64 {
    debug_assert!(x > 0.0, "rlog of non-positive {x}");
    x.ln().max(1.0)
}

#[inline]
fn clamp_delta(delta: f64) -> f64 {
    if delta < DELTA_FLOOR {
        CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
        DELTA_FLOOR
    } else {
        delta
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSchedule {
    /// Leading constant of the squared radius.
    pub scale_c: f64,
    /// Sub-Gaussian variance proxy of the rewards.
    pub variance_proxy: f64,
}

impl Default for ConfidenceSchedule {
    fn default() -> Self {
        Self { scale_c: 4.0, variance_proxy: 1.0 }
    }
}

impl ConfidenceSchedule {
    pub fn new(scale_c: f64, variance_proxy: f64) -> Result<Self> {
        let schedule = Self { scale_c, variance_proxy };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale_c > 0.0 && self.scale_c.is_finite()) {
            return Err(Error::InvalidParameter(format!("scale_c must be positive, got {}", self.scale_c)));
        }
        if !(self.variance_proxy > 0.0 && self.variance_proxy.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "variance_proxy must be positive, got {}",
                self.variance_proxy
            )));
        }
        Ok(())
    }

    /// Radius after `t >= 1` pulls at confidence `delta`. Hot path; callers
    /// guarantee the preconditions.
    #[inline]
    pub fn radius(&self, t: u64, delta: f64) -> f64 {
        debug_assert!(t >= 1);
        let t = t as f64;
        let delta = clamp_delta(delta);
        let inner = (2.0 * t).log2() / delta;
        (self.scale_c * self.variance_proxy * rlog(inner) / t).sqrt()
    }

    /// Checked version of [`radius`](Self::radius).
    pub fn u_bound(&self, t: u64, delta: f64) -> Result<f64> {
        if t == 0 {
            return Err(Error::Domain("confidence radius is undefined for zero pulls".into()));
        }
        check_delta(delta)?;
        Ok(self.radius(t, delta))
    }

    /// Smallest `t >= 1` with `radius(t, delta) <= gamma`.
    pub fn u_inverse(&self, gamma: f64, delta: f64) -> Result<u64> {
        if !(gamma > 0.0) {
            return Err(Error::Domain(format!("u_inverse requires gamma > 0, got {gamma}")));
        }
        check_delta(delta)?;
        if self.radius(1, delta) <= gamma {
            return Ok(1);
        }
        // radius(lo) > gamma >= radius(hi)
        let mut lo = 1u64;
        let mut hi = 2u64;
        while self.radius(hi, delta) > gamma {
            lo = hi;
            hi = hi.checked_mul(2).ok_or_else(|| {
                Error::Domain(format!("u_inverse overflow for gamma={gamma}, delta={delta}"))
            })?;
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.radius(mid, delta) <= gamma {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("confidence level must lie in (0,1), got {delta}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_inverse(s: &ConfidenceSchedule, gamma: f64, delta: f64) -> u64 {
        (1u64..).find(|&t| s.radius(t, delta) <= gamma).unwrap()
    }

    #[test]
    fn reg_log_values() {
        assert_eq!(reg_log(std::f64::consts::E).unwrap(), 1.0);
        assert_eq!(reg_log(1.0).unwrap(), 1.0);
        assert_eq!(reg_log(0.5).unwrap(), 1.0);
        assert!((reg_log(720.0).unwrap() - 720f64.ln()).abs() < 1e-15);
        assert!((reg_log(720.0).unwrap() - 6.579251212010101).abs() < 1e-12);
        assert!(reg_log(0.0).is_err());
        assert!(reg_log(-3.0).is_err());
        assert!(reg_log(f64::NAN).is_err());
    }

    #[test]
    fn radius_at_one_pull() {
        let s = ConfidenceSchedule::default();
        let r = s.u_bound(1, 0.05).unwrap();
        assert!((r - (4.0 * 20f64.ln()).sqrt()).abs() < 1e-12);
        assert!((r - 3.4617).abs() < 1e-3);
    }

    #[test]
    fn radius_shrinks_with_pulls() {
        let s = ConfidenceSchedule::default();
        for t in [1u64, 10, 100] {
            assert!(s.u_bound(4 * t, 0.1).unwrap() < s.u_bound(t, 0.1).unwrap());
        }
    }

    #[test]
    fn radius_errors() {
        let s = ConfidenceSchedule::default();
        assert!(s.u_bound(0, 0.1).is_err());
        assert!(s.u_bound(3, 0.0).is_err());
        assert!(s.u_bound(3, 1.0).is_err());
        assert!(ConfidenceSchedule::new(0.0, 1.0).is_err());
        assert!(ConfidenceSchedule::new(1.0, -1.0).is_err());
    }

    #[test]
    fn inverse_matches_linear_scan() {
        let s = ConfidenceSchedule::default();
        assert_eq!(linear_inverse(&s, 1.0, 0.05), 19);
        assert_eq!(s.u_inverse(1.0, 0.05).unwrap(), 19);
        for &delta in &[0.3, 0.05, 1e-4, 1e-12] {
            for &gamma in &[4.0, 2.0, 1.0, 0.7, 0.5, 0.25, 0.1, 0.05] {
                assert_eq!(s.u_inverse(gamma, delta).unwrap(), linear_inverse(&s, gamma, delta), "{gamma} {delta}");
            }
        }
    }

    #[test]
    fn inverse_saturates_at_one() {
        let s = ConfidenceSchedule::default();
        let g = s.u_bound(1, 0.05).unwrap();
        assert_eq!(s.u_inverse(g, 0.05).unwrap(), 1);
        assert_eq!(s.u_inverse(g * 2.0, 0.05).unwrap(), 1);
    }

    #[test]
    fn tiny_delta_is_clamped() {
        let s = ConfidenceSchedule::default();
        let before = clamp_events();
        let r = s.radius(5, 1e-320);
        assert!(r.is_finite());
        assert_eq!(r, s.radius(5, DELTA_FLOOR));
        assert!(clamp_events() > before);
    }

    #[test]
    fn monotonicity_grid() {
        let s = ConfidenceSchedule::default();
        let deltas = [0.5, 0.1, 0.05, 0.01, 1e-3, 1e-6, 1e-12];
        for w in deltas.windows(2) {
            for t in 1..2000u64 {
                assert!(s.radius(t + 1, w[0]) < s.radius(t, w[0]));
                assert!(s.radius(t, w[1]) > s.radius(t, w[0]));
            }
        }
        let gammas = [3.0, 2.0, 1.0, 0.8, 0.4, 0.2, 0.1];
        for &d in &deltas {
            for g in gammas.windows(2) {
                assert!(s.u_inverse(g[1], d).unwrap() >= s.u_inverse(g[0], d).unwrap());
            }
        }
        for &g in &gammas {
            for w in deltas.windows(2) {
                assert!(s.u_inverse(g, w[1]).unwrap() >= s.u_inverse(g, w[0]).unwrap());
            }
        }
    }
}
