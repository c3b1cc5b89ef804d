//! Campaigns: a TOML spec naming an instance, a list of runs and a trial
//! count. Every (run, trial) cell gets its seed from the master seed, so the
//! output files do not depend on the worker count. Wall-clock times go to a
//! separate `timing.csv`.
//!
//! ```toml
//! trials = 3
//! master_seed = 7
//! workers = 0            # 0 = all available cores
//! write_traces = false
//!
//! [instance.two_spike]
//! n = 64
//! m = 4
//! mu0 = 0.0
//! eps = 0.5
//! kind = "gaussian"
//! seed = 1
//!
//! [[run]]
//! name = "bracket"
//! algorithm = "infinite-ucb"
//! objective = "fdr-tpr"
//! horizon = 20000
//! mu0 = 0.0
//! k = [1, 2, 4]
//! ```
//!
//! `[instance] file = "path.json"` loads an instance file instead.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{aggregate, aggregate_values, Aggregate};
use super::{evaluate_trial, RunConfig, TrialOutcome};
use crate::error::{Error, Result};
use crate::instance::{two_spike, ArmKind, BanditInstance};
use crate::rng;

pub const MANIFEST_FORMAT: &str = "infucb-campaign";
pub const MANIFEST_VERSION: u32 = 1;
/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "INFUCB_OUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSource {
    File(PathBuf),
    TwoSpike { n: usize, m: usize, mu0: f64, eps: f64, kind: ArmKind, seed: u64 },
}

impl InstanceSource {
    /// Relative file paths resolve against `base`.
    pub fn resolve(&self, base: &Path) -> Result<BanditInstance> {
        match self {
            InstanceSource::File(p) => {
                let path = if p.is_absolute() { p.clone() } else { base.join(p) };
                BanditInstance::load(&path)
                    .map_err(|e| Error::Config(format!("cannot load instance {}: {e}", path.display())))
            }
            InstanceSource::TwoSpike { n, m, mu0, eps, kind, seed } => two_spike(*n, *m, *mu0, *eps, *kind, *seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NamedRun {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub config: RunConfig,
}

impl<'de> Deserialize<'de> for NamedRun {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            #[serde(default)]
            name: Option<String>,
            #[serde(flatten)]
            rest: serde_json::Map<String, serde_json::Value>,
        }
        let raw = Raw::deserialize(d)?;
        let config = serde_json::from_value(serde_json::Value::Object(raw.rest)).map_err(serde::de::Error::custom)?;
        Ok(NamedRun { name: raw.name, config })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSpec {
    #[serde(default = "one")]
    pub trials: u64,
    #[serde(default)]
    pub master_seed: u64,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub write_traces: bool,
    pub instance: InstanceSource,
    #[serde(rename = "run")]
    pub runs: Vec<NamedRun>,
}

fn one() -> u64 {
    1
}

impl CampaignSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: CampaignSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("a campaign needs at least one trial".into()));
        }
        if self.runs.is_empty() {
            return Err(Error::Config("a campaign needs at least one [[run]]".into()));
        }
        let names = self.run_names();
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(Error::Config(format!("duplicate run name {name:?}")));
            }
            if name.is_empty() || name.contains([',', '/', '\\', '\n']) {
                return Err(Error::Config(format!("invalid run name {name:?}")));
            }
        }
        for (name, run) in names.iter().zip(&self.runs) {
            run.config.validate().map_err(|e| Error::Config(format!("run {name:?}: {e}")))?;
        }
        Ok(())
    }

    pub fn run_names(&self) -> Vec<String> {
        self.runs
            .iter()
            .enumerate()
            .map(|(i, r)| r.name.clone().unwrap_or_else(|| format!("{}-{}", r.config.algorithm.as_str(), i + 1)))
            .collect()
    }

    /// Seed of trial `trial` (shared by every run so runs are paired).
    pub fn trial_seed(&self, trial: u64) -> u64 {
        rng::trial_seed(self.master_seed, trial)
    }
}

/// One finished (run, trial) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub run: String,
    pub trial: u64,
    pub seed: u64,
    pub outcome: TrialOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestCell {
    pub run: String,
    pub trial: u64,
    pub seed: u64,
    pub rounds: u64,
    pub trace_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub spec: CampaignSpec,
    /// The resolved instance, in instance-file form.
    pub instance: serde_json::Value,
    pub cells: Vec<ManifestCell>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: Manifest = serde_json::from_str(&fs::read_to_string(path)?)?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(Error::Config(format!("unsupported manifest {} v{}", m.format, m.version)));
        }
        Ok(m)
    }

    pub fn instance(&self) -> Result<BanditInstance> {
        BanditInstance::from_json(&self.instance.to_string())
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Runs every cell; results are ordered by run, then trial.
pub fn run_cells(spec: &CampaignSpec, instance: &BanditInstance, trace_dir: Option<&Path>) -> Result<Vec<CellResult>> {
    spec.validate()?;
    let names = spec.run_names();
    let cells: Vec<(usize, u64)> = (0..spec.runs.len()).flat_map(|r| (0..spec.trials).map(move |t| (r, t))).collect();
    let work = |&(r, trial): &(usize, u64)| -> Result<CellResult> {
        let seed = spec.trial_seed(trial);
        let cfg = &spec.runs[r].config;
        let outcome = match trace_dir {
            Some(dir) => {
                let path = dir.join(format!("{}_trial{trial}.tsv", names[r]));
                let mut w = BufWriter::new(File::create(&path)?);
                evaluate_trial(instance, cfg, seed, Some(&mut w))?
            }
            None => evaluate_trial(instance, cfg, seed, None)?,
        };
        Ok(CellResult { run: names[r].clone(), trial, seed, outcome })
    };
    pool(spec.workers)?.install(|| cells.par_iter().map(work).collect())
}

/// Files written by [`run_campaign`].
#[derive(Clone, Debug)]
pub struct CampaignOutput {
    pub dir: PathBuf,
    pub cells: Vec<CellResult>,
}

/// Runs a campaign and writes `trials.csv`, `metrics.csv`, `summary.csv`,
/// `series_<run>_<set>.csv`, `timing.csv` and `manifest.json` into `out_dir`.
pub fn run_campaign(spec: &CampaignSpec, base: &Path, out_dir: &Path) -> Result<CampaignOutput> {
    spec.validate()?;
    let instance = spec.instance.resolve(base)?;
    fs::create_dir_all(out_dir)?;
    let trace_dir = if spec.write_traces {
        let d = out_dir.join("traces");
        fs::create_dir_all(&d)?;
        Some(d)
    } else {
        None
    };
    let cells = run_cells(spec, &instance, trace_dir.as_deref())?;
    write_outputs(spec, &instance, &cells, out_dir)?;
    Ok(CampaignOutput { dir: out_dir.to_path_buf(), cells })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv output: {e}"))
}

fn write_outputs(spec: &CampaignSpec, instance: &BanditInstance, cells: &[CellResult], dir: &Path) -> Result<()> {
    let names = spec.run_names();
    let algo: BTreeMap<&str, &str> =
        names.iter().zip(&spec.runs).map(|(n, r)| (n.as_str(), r.config.algorithm.as_str())).collect();

    let mut trials = csv_writer(&dir.join("trials.csv"))?;
    trials.write_record(["run", "algorithm", "trial", "seed", "rounds", "pulls", "trace_sha256"]).map_err(csv_err)?;
    let mut metrics = csv_writer(&dir.join("metrics.csv"))?;
    metrics.write_record(["run", "trial", "seed", "metric", "value", "censored"]).map_err(csv_err)?;
    let mut timing = csv_writer(&dir.join("timing.csv"))?;
    timing.write_record(["run", "trial", "wall_seconds"]).map_err(csv_err)?;
    for c in cells {
        let o = &c.outcome;
        trials
            .write_record([
                c.run.as_str(),
                algo[c.run.as_str()],
                &c.trial.to_string(),
                &c.seed.to_string(),
                &o.summary.rounds.to_string(),
                &o.summary.pulls.to_string(),
                &o.trace_sha256,
            ])
            .map_err(csv_err)?;
        for m in &o.metrics {
            metrics
                .write_record([
                    c.run.as_str(),
                    &c.trial.to_string(),
                    &c.seed.to_string(),
                    &m.name,
                    &fmt_opt(m.value),
                    if m.censored { "1" } else { "0" },
                ])
                .map_err(csv_err)?;
        }
        timing
            .write_record([c.run.as_str(), &c.trial.to_string(), &format!("{:.6}", o.summary.wall.as_secs_f64())])
            .map_err(csv_err)?;
    }
    trials.flush()?;
    metrics.flush()?;
    timing.flush()?;

    let mut summary = csv_writer(&dir.join("summary.csv"))?;
    summary.write_record(["run", "metric", "n", "censored", "mean", "sd", "ci_lo", "ci_hi"]).map_err(csv_err)?;
    for name in &names {
        let run_cells: Vec<&CellResult> = cells.iter().filter(|c| &c.run == name).collect();
        let mut metric_names: Vec<&str> = Vec::new();
        for c in &run_cells {
            for m in &c.outcome.metrics {
                if !metric_names.contains(&m.name.as_str()) {
                    metric_names.push(&m.name);
                }
            }
        }
        for metric in metric_names {
            let agg = aggregate(run_cells.iter().flat_map(|c| c.outcome.metrics.iter().filter(|m| m.name == metric)));
            write_summary_row(&mut summary, name, metric, &agg)?;
        }

        // (set, checkpoint) -> per-trial values
        let mut series: BTreeMap<(String, u64), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for c in &run_cells {
            for (set, cp, fdp, tp) in &c.outcome.series {
                let e = series.entry((set.clone(), *cp)).or_default();
                e.0.push(*fdp);
                e.1.push(*tp);
            }
        }
        let sets: Vec<String> = {
            let mut s: Vec<String> = series.keys().map(|(s, _)| s.clone()).collect();
            s.dedup();
            s
        };
        for set in sets {
            for (metric, pick) in [("fdr", 0usize), ("true_discoveries", 1)] {
                let path = dir.join(format!("series_{name}_{set}_{metric}.csv"));
                let mut w = csv_writer(&path)?;
                w.write_record(["checkpoint", "value", "ci_lo", "ci_hi"]).map_err(csv_err)?;
                for ((s, cp), vals) in &series {
                    if s != &set {
                        continue;
                    }
                    let v = if pick == 0 { &vals.0 } else { &vals.1 };
                    let agg = aggregate_values(v, 0);
                    w.write_record([cp.to_string(), fmt_opt(agg.mean), fmt_opt(agg.ci_lo), fmt_opt(agg.ci_hi)])
                        .map_err(csv_err)?;
                }
                w.flush()?;
            }
        }
    }
    summary.flush()?;

    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        spec: CampaignSpec { output_dir: None, workers: 0, ..spec.clone() },
        instance: serde_json::from_str(&instance.to_json()?)?,
        cells: cells
            .iter()
            .map(|c| ManifestCell {
                run: c.run.clone(),
                trial: c.trial,
                seed: c.seed,
                rounds: c.outcome.summary.rounds,
                trace_sha256: c.outcome.trace_sha256.clone(),
            })
            .collect(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

fn write_summary_row(w: &mut csv::Writer<File>, run: &str, metric: &str, a: &Aggregate) -> Result<()> {
    w.write_record([
        run.to_string(),
        metric.to_string(),
        a.n.to_string(),
        a.censored.to_string(),
        fmt_opt(a.mean),
        fmt_opt(a.sd),
        fmt_opt(a.ci_lo),
        fmt_opt(a.ci_hi),
    ])
    .map_err(csv_err)
}

/// A cell whose recomputed trace hash differs from the stored one.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayMismatch {
    pub run: String,
    pub trial: u64,
    pub expected: String,
    pub actual: String,
}

/// Re-runs every cell of a manifest and compares trace hashes.
pub fn replay(manifest: &Manifest, workers: Option<usize>) -> Result<Vec<ReplayMismatch>> {
    let instance = manifest.instance()?;
    let mut spec = manifest.spec.clone();
    if let Some(w) = workers {
        spec.workers = w;
    }
    let cells = run_cells(&spec, &instance, None)?;
    let stored: BTreeMap<(&str, u64), &ManifestCell> =
        manifest.cells.iter().map(|c| ((c.run.as_str(), c.trial), c)).collect();
    if stored.len() != cells.len() {
        return Err(Error::Config(format!(
            "manifest lists {} cells, the spec expands to {}",
            stored.len(),
            cells.len()
        )));
    }
    let mut bad = Vec::new();
    for c in &cells {
        let expected = stored
            .get(&(c.run.as_str(), c.trial))
            .map(|m| m.trace_sha256.clone())
            .ok_or_else(|| Error::Config(format!("manifest has no cell {} / {}", c.run, c.trial)))?;
        if expected != c.outcome.trace_sha256 {
            bad.push(ReplayMismatch { run: c.run.clone(), trial: c.trial, expected, actual: c.outcome.trace_sha256.clone() });
        }
    }
    Ok(bad)
}

/// Output directory: explicit flag, then the spec, then `$INFUCB_OUT_DIR`, then `./infucb-out`.
pub fn output_dir(flag: Option<PathBuf>, spec: &CampaignSpec) -> PathBuf {
    flag.or_else(|| spec.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("infucb-out"))
}
