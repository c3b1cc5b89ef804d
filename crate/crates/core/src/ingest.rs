//! Instances built from experimental data files.
//!
//! Two comma-separated schemas are read, both with a header row:
//!
//! ```text
//! id,pos,total          caption ratings: positive votes out of total votes
//! gene_id,z1,z2         screen replicates: two Z-scores per gene
//! ```
//!
//! Caption rows become Bernoulli arms with `p = pos / total`. Screen rows are
//! averaged to one score per gene, a mixing distribution over a grid of means
//! is fitted to those scores, and Gaussian arms with unit variance are drawn
//! from it.

use std::io::Read;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{ArmDistribution, BanditInstance};
use crate::rng;

pub const CAPTION_HEADER: [&str; 3] = ["id", "pos", "total"];
pub const SCREEN_HEADER: [&str; 3] = ["gene_id", "z1", "z2"];

pub const GRID_LO: f64 = -4.0;
pub const GRID_HI: f64 = 4.0;
pub const DEFAULT_GRID_STEP: f64 = 0.01;
pub const DEFAULT_LAMBDA: f64 = 1e-4;
pub const DEFAULT_ITERATIONS: usize = 2000;
/// Variance of an average of two unit-variance Z-scores.
pub const OBS_VARIANCE: f64 = 0.5;

fn reader<R: Read>(src: R, header: &[&str; 3]) -> Result<csv::Reader<R>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(src);
    let got = rdr.headers().map_err(|e| csv_error(e, 1))?;
    if got.len() != 3 || got.iter().zip(header).any(|(a, b)| a != *b) {
        return Err(Error::Parse { line: 1, message: format!("expected header {}", header.join(",")) });
    }
    Ok(rdr)
}

fn csv_error(e: csv::Error, fallback: usize) -> Error {
    let line = e.position().map_or(fallback, |p| p.line() as usize);
    Error::Parse { line, message: e.to_string() }
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, line: usize) -> Result<T> {
    let raw = rec.get(i).ok_or_else(|| Error::Parse { line, message: format!("missing {name}") })?;
    raw.parse().map_err(|_| Error::Parse { line, message: format!("bad {name} {raw:?}") })
}

/// Reads caption rows `id,pos,total` into Bernoulli arms, in file order.
pub fn parse_captions<R: Read>(src: R, label: &str) -> Result<BanditInstance> {
    let mut rdr = reader(src, &CAPTION_HEADER)?;
    let mut arms = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(e, 0))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 3 {
            return Err(Error::Parse { line, message: format!("expected 3 fields, got {}", rec.len()) });
        }
        let pos: u64 = field(&rec, 1, "pos", line)?;
        let total: u64 = field(&rec, 2, "total", line)?;
        if total == 0 {
            return Err(Error::Parse { line, message: "total is 0".into() });
        }
        if pos > total {
            return Err(Error::Parse { line, message: format!("pos {pos} exceeds total {total}") });
        }
        arms.push(ArmDistribution::Bernoulli { p: pos as f64 / total as f64 });
    }
    if arms.is_empty() {
        return Err(Error::Parse { line: 1, message: "no caption rows".into() });
    }
    BanditInstance::new(label, arms)
}

pub fn load_caption_contest(path: impl AsRef<Path>) -> Result<BanditInstance> {
    let path = path.as_ref();
    let label = path.file_stem().map_or_else(|| "captions".into(), |s| s.to_string_lossy().into_owned());
    parse_captions(std::fs::File::open(path)?, &label)
}

/// Reads screen rows `gene_id,z1,z2` and returns `(z1 + z2) / 2` per gene.
pub fn parse_screens<R: Read>(src: R) -> Result<Vec<f64>> {
    let mut rdr = reader(src, &SCREEN_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(e, 0))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 3 {
            return Err(Error::Parse { line, message: format!("expected 3 fields, got {}", rec.len()) });
        }
        let z1: f64 = field(&rec, 1, "z1", line)?;
        let z2: f64 = field(&rec, 2, "z2", line)?;
        if !(z1.is_finite() && z2.is_finite()) {
            return Err(Error::Parse { line, message: "non-finite z-score".into() });
        }
        out.push(0.5 * (z1 + z2));
    }
    if out.is_empty() {
        return Err(Error::Parse { line: 1, message: "no screen rows".into() });
    }
    Ok(out)
}

pub fn load_screens(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    parse_screens(std::fs::File::open(path)?)
}

/// Discrete law of the arm means on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingDistribution {
    pub grid: Vec<f64>,
    pub weights: Vec<f64>,
    pub lambda: f64,
    /// Mean negative log-likelihood per observation at the fitted weights.
    pub nll: Option<f64>,
    /// Penalized objective `-nll + lambda * H(w)`.
    pub objective: Option<f64>,
}

impl MixingDistribution {
    /// A mixture given directly, without a fit.
    pub fn new(grid: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let mix = Self { grid, weights, lambda: 0.0, nll: None, objective: None };
        mix.validate()?;
        Ok(mix)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() || self.grid.len() != self.weights.len() {
            return Err(Error::InvalidParameter("grid and weights must be nonempty and of equal length".into()));
        }
        if self.grid.windows(2).any(|w| !(w[0] < w[1])) || self.grid.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("grid must be finite and strictly increasing".into()));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("weights sum to {total}, not 1")));
        }
        Ok(())
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.weights)
    }

    pub fn mean(&self) -> f64 {
        self.grid.iter().zip(&self.weights).map(|(x, w)| x * w).sum()
    }
}

fn entropy(w: &[f64]) -> f64 {
    -w.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Points `-4, -4 + step, ..., 4`; `step` must divide the span.
pub fn mean_grid(step: f64) -> Result<Vec<f64>> {
    let span = GRID_HI - GRID_LO;
    if !(step > 0.0 && step <= span) {
        return Err(Error::InvalidParameter(format!("grid step must lie in (0, {span}], got {step}")));
    }
    let cells = (span / step).round();
    if (cells * step - span).abs() > 1e-9 * span {
        return Err(Error::InvalidParameter(format!("grid step {step} does not divide {span}")));
    }
    let cells = cells as usize;
    Ok((0..=cells).map(|g| GRID_LO + span * g as f64 / cells as f64).collect())
}

/// Distinct sorted scores with their frequencies, so the fit depends on the
/// empirical distribution only.
fn empirical(z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if z.is_empty() {
        return Err(Error::InvalidParameter("no z-scores".into()));
    }
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("z-scores must be finite".into()));
    }
    let mut sorted = z.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut values: Vec<f64> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for x in sorted {
        match values.last() {
            Some(&v) if v == x => *counts.last_mut().unwrap() += 1,
            _ => {
                values.push(x);
                counts.push(1);
            }
        }
    }
    let n = z.len() as f64;
    Ok((values, counts.into_iter().map(|c| c as f64 / n).collect()))
}

struct Problem {
    freq: Vec<f64>,
    /// Row-major `kernel[i * g + j] = phi(z_i; x_j, 1/2)`.
    kernel: Vec<f64>,
    g: usize,
    lambda: f64,
}

impl Problem {
    fn new(z: &[f64], grid: &[f64], lambda: f64) -> Result<Self> {
        let (values, freq) = empirical(z)?;
        let norm = 1.0 / (2.0 * std::f64::consts::PI * OBS_VARIANCE).sqrt();
        let mut kernel = Vec::with_capacity(values.len() * grid.len());
        for &v in &values {
            kernel.extend(grid.iter().map(|&x| norm * (-(v - x) * (v - x) / (2.0 * OBS_VARIANCE)).exp()));
        }
        Ok(Self { freq, kernel, g: grid.len(), lambda })
    }

    /// Mean log-likelihood at `w`; fills `resp` with the E-step responsibilities.
    fn e_step(&self, w: &[f64], resp: &mut [f64]) -> f64 {
        resp.iter_mut().for_each(|r| *r = 0.0);
        let mut ll = 0.0;
        for (i, &f) in self.freq.iter().enumerate() {
            let row = &self.kernel[i * self.g..(i + 1) * self.g];
            let dens: f64 = row.iter().zip(w).map(|(k, w)| k * w).sum();
            ll += f * dens.ln();
            let scale = f / dens;
            for ((r, k), w) in resp.iter_mut().zip(row).zip(w) {
                *r += scale * k * w;
            }
        }
        ll
    }

    fn objective(&self, ll: f64, w: &[f64]) -> f64 {
        ll + self.lambda * entropy(w)
    }
}

/// Root in `u` of `r e^{-u} - lambda (u + 1) = nu`, `r > 0`, by safeguarded Newton.
fn solve_log_weight(r: f64, lambda: f64, nu: f64, start: f64) -> f64 {
    let f = |u: f64| r * (-u).exp() - lambda * (u + 1.0) - nu;
    let (mut lo, mut hi);
    let mut step = 1.0;
    if f(start) > 0.0 {
        lo = start;
        hi = start + step;
        while f(hi) > 0.0 {
            lo = hi;
            step *= 2.0;
            hi = start + step;
        }
    } else {
        hi = start;
        lo = start - step;
        while f(lo) <= 0.0 {
            hi = lo;
            step *= 2.0;
            lo = start - step;
        }
    }
    let mut u = if start > lo && start < hi { start } else { 0.5 * (lo + hi) };
    for _ in 0..200 {
        let fu = f(u);
        if fu > 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let d = -r * (-u).exp() - lambda;
        let mut next = u - fu / d;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() <= 1e-15 * (1.0 + u.abs()) || hi - lo <= 1e-15 * (1.0 + u.abs()) {
            return next;
        }
        u = next;
    }
    u
}

/// Maximizes `sum r_g ln w_g + lambda H(w)` over the simplex.
struct MStep {
    log_w: Vec<f64>,
    nu: f64,
}

impl MStep {
    fn new(w: &[f64]) -> Self {
        Self { log_w: w.iter().map(|&x| x.max(1e-300).ln()).collect(), nu: 1.0 }
    }

    fn weights_at(&mut self, resp: &[f64], lambda: f64, nu: f64) -> (f64, f64) {
        let mut total = 0.0;
        let mut slope = 0.0;
        for (lw, &r) in self.log_w.iter_mut().zip(resp) {
            let w = if r > 0.0 {
                *lw = solve_log_weight(r, lambda, nu, *lw);
                let w = lw.exp();
                slope -= w / (r / w + lambda);
                w
            } else {
                *lw = -1.0 - nu / lambda;
                let w = lw.exp();
                slope -= w / lambda;
                w
            };
            total += w;
        }
        (total - 1.0, slope)
    }

    fn solve(&mut self, resp: &[f64], lambda: f64, out: &mut [f64]) {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut nu = self.nu;
        let mut step = 1.0;
        for _ in 0..400 {
            let (g, slope) = self.weights_at(resp, lambda, nu);
            if g.abs() <= 1e-14 {
                break;
            }
            if g > 0.0 {
                lo = nu;
            } else {
                hi = nu;
            }
            let mut next = nu - g / slope;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = match (lo.is_finite(), hi.is_finite()) {
                    (true, true) => 0.5 * (lo + hi),
                    (true, false) => lo + step,
                    _ => hi - step,
                };
                step *= 2.0;
            }
            nu = next;
        }
        self.nu = nu;
        for (o, lw) in out.iter_mut().zip(&self.log_w) {
            *o = lw.exp();
        }
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|w| *w /= total);
    }
}

/// Fits weights on [`mean_grid`]`(grid_step)` maximizing
/// `(1/N) sum_i ln sum_g w_g phi(z_i; x_g, 1/2) + lambda H(w)`.
///
/// Starts from uniform weights and runs `iterations` minorize-maximize steps:
/// an EM E-step followed by an exact entropy-penalized M-step. With
/// `lambda = 0` this is plain EM.
pub fn fit_mixing_distribution(z: &[f64], grid_step: f64, lambda: f64, iterations: usize) -> Result<MixingDistribution> {
    fit_with_history(z, grid_step, lambda, iterations).map(|(m, _)| m)
}

/// Like [`fit_mixing_distribution`], also returning the objective before
/// the first and after every iteration.
pub fn fit_with_history(
    z: &[f64],
    grid_step: f64,
    lambda: f64,
    iterations: usize,
) -> Result<(MixingDistribution, Vec<f64>)> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let grid = mean_grid(grid_step)?;
    let p = Problem::new(z, &grid, lambda)?;
    let g = grid.len();
    let mut w = vec![1.0 / g as f64; g];
    let mut resp = vec![0.0; g];
    let mut mstep = MStep::new(&w);
    let mut ll = p.e_step(&w, &mut resp);
    let mut history = vec![p.objective(ll, &w)];
    for _ in 0..iterations {
        if lambda == 0.0 {
            let total: f64 = resp.iter().sum();
            for (wi, r) in w.iter_mut().zip(&resp) {
                *wi = r / total;
            }
        } else {
            mstep.solve(&resp, lambda, &mut w);
        }
        ll = p.e_step(&w, &mut resp);
        history.push(p.objective(ll, &w));
    }
    let objective = *history.last().unwrap();
    let mix = MixingDistribution { grid, weights: w, lambda, nll: Some(-ll), objective: Some(objective) };
    mix.validate()?;
    Ok((mix, history))
}

/// Draws `n` means i.i.d. from `mix` and returns unit-variance Gaussian arms.
pub fn synth_from_mixture(mix: &MixingDistribution, n: usize, seed: u64) -> Result<BanditInstance> {
    mix.validate()?;
    let index = WeightedIndex::new(&mix.weights).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut r = rng::stream(seed, rng::STREAM_INSTANCE);
    let arms = (0..n)
        .map(|_| ArmDistribution::Gaussian { mean: mix.grid[index.sample(&mut r)], variance: 1.0 })
        .collect();
    BanditInstance::new(format!("mixture n={n}"), arms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand_distr::StandardNormal;
    use rand::Rng;

    #[test]
    fn caption_rows() {
        let inst = parse_captions("id,pos,total\nc1,3,10\nc2,0,5\n".as_bytes(), "t").unwrap();
        assert_eq!(inst.means(), vec![0.3, 0.0]);
        assert!(inst.is_bounded());
    }

    #[test]
    fn caption_errors_carry_lines() {
        for (text, line) in [
            ("id,pos,total\nc1,3,10\nc2,1,0\n", 3),
            ("id,pos,total\nc1,11,10\n", 2),
            ("id,pos,total\nc1,x,10\n", 2),
            ("id,pos,total\nc1,1\n", 2),
            ("name,pos,total\nc1,1,2\n", 1),
        ] {
            match parse_captions(text.as_bytes(), "t") {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(parse_captions("id,pos,total\n".as_bytes(), "t").is_err());
    }

    #[test]
    fn screens_are_averaged() {
        let z = parse_screens("gene_id,z1,z2\ng1,1.0,2.0\ng2,-0.5,0.5\n".as_bytes()).unwrap();
        assert_eq!(z, vec![1.5, 0.0]);
        assert!(parse_screens("gene_id,z1,z2\ng1,nan,1\n".as_bytes()).is_err());
    }

    #[test]
    fn grid_shape() {
        let g = mean_grid(DEFAULT_GRID_STEP).unwrap();
        assert_eq!(g.len(), 801);
        assert_eq!((g[0], g[400], g[800]), (-4.0, 0.0, 4.0));
        assert!(mean_grid(0.3).is_err());
        assert!(mean_grid(0.0).is_err());
    }

    #[test]
    fn point_mass_data_concentrates() {
        let step = 0.25;
        let mix = fit_mixing_distribution(&[0.0; 50], step, 0.0, DEFAULT_ITERATIONS).unwrap();
        let near: f64 = mix.grid.iter().zip(&mix.weights).filter(|(x, _)| x.abs() <= step + 1e-12).map(|(_, w)| w).sum();
        assert!(near >= 0.99, "{near}");
    }

    #[test]
    fn strong_penalty_gives_uniform() {
        let z: Vec<f64> = (0..200).map(|i| if i % 10 == 0 { 1.0 } else { 0.0 }).collect();
        let mix = fit_mixing_distribution(&z, 0.1, 1e3, 50).unwrap();
        let g = mix.weights.len() as f64;
        let kl: f64 = mix.weights.iter().filter(|&&w| w > 0.0).map(|&w| w * (w * g).ln()).sum();
        assert!(kl <= 1e-3, "{kl}");
    }

    fn sample_scores(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::stream(seed, 9);
        (0..n)
            .map(|_| {
                let mu = if r.random::<f64>() < 0.9 { 0.0 } else { 1.5 };
                let e: f64 = r.sample(StandardNormal);
                mu + OBS_VARIANCE.sqrt() * e
            })
            .collect()
    }

    #[test]
    fn em_objective_is_monotone() {
        let z = sample_scores(400, 1);
        let (_, hist) = fit_with_history(&z, 0.05, 0.0, 300).unwrap();
        for w in hist.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn penalized_objective_is_monotone() {
        let z = sample_scores(300, 2);
        let (mix, hist) = fit_with_history(&z, 0.1, 1e-2, 200).unwrap();
        for w in hist.windows(2) {
            assert!(w[1] >= w[0] - 1e-10, "{} -> {}", w[0], w[1]);
        }
        assert!((mix.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn permutation_and_replication_invariant() {
        let z = sample_scores(200, 3);
        let a = fit_mixing_distribution(&z, 0.1, 1e-3, 100).unwrap();
        let mut shuffled = z.clone();
        shuffled.shuffle(&mut rng::stream(5, 5));
        let b = fit_mixing_distribution(&shuffled, 0.1, 1e-3, 100).unwrap();
        assert_eq!(a, b);
        let doubled: Vec<f64> = z.iter().chain(&z).copied().collect();
        let c = fit_mixing_distribution(&doubled, 0.1, 1e-3, 100).unwrap();
        assert_eq!(a.weights, c.weights);
    }

    #[test]
    fn entropy_trade_off() {
        let z = sample_scores(300, 4);
        let fits: Vec<MixingDistribution> =
            [0.0, 1e-3, 1e-2, 1e-1].iter().map(|&l| fit_mixing_distribution(&z, 0.2, l, 3000).unwrap()).collect();
        for w in fits.windows(2) {
            assert!(w[0].entropy() <= w[1].entropy() + 1e-6);
            assert!(w[0].nll.unwrap() <= w[1].nll.unwrap() + 1e-6);
        }
    }

    #[test]
    fn rejects_bad_scores() {
        assert!(fit_mixing_distribution(&[], 0.1, 0.0, 10).is_err());
        assert!(fit_mixing_distribution(&[0.0, f64::NAN], 0.1, 0.0, 10).is_err());
        assert!(fit_mixing_distribution(&[0.0], 0.1, -1.0, 10).is_err());
    }

    #[test]
    fn synth_point_mass_and_spike() {
        let point = MixingDistribution::new(vec![-1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]).unwrap();
        let inst = synth_from_mixture(&point, 50, 1).unwrap();
        assert!(inst.means().iter().all(|&m| m == 0.0));

        let spike = MixingDistribution::new(vec![0.0, 1.0], vec![0.97, 0.03]).unwrap();
        let n = 10_000;
        let inst = synth_from_mixture(&spike, n, 7).unwrap();
        let nonzero = inst.means().iter().filter(|&&m| m != 0.0).count() as f64;
        let sd = (n as f64 * 0.03 * 0.97).sqrt();
        assert!((nonzero - 300.0).abs() <= 4.0 * sd, "{nonzero}");
        assert_eq!(inst, synth_from_mixture(&spike, n, 7).unwrap());
        assert!(inst.arms().iter().all(|a| matches!(a, ArmDistribution::Gaussian { variance, .. } if *variance == 1.0)));
    }

    #[test]
    fn mixture_validation() {
        assert!(MixingDistribution::new(vec![0.0, 0.0], vec![0.5, 0.5]).is_err());
        assert!(MixingDistribution::new(vec![0.0, 1.0], vec![0.5, 0.6]).is_err());
        assert!(MixingDistribution::new(vec![0.0], vec![1.0, 0.0]).is_err());
    }
}
