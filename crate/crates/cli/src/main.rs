use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use infucb::hardness::{HardnessParams, HardnessReport};
use infucb::harness::campaign::{self, CampaignSpec, Manifest};
use infucb::instance::summarize;
use infucb::verify::{self, GridOptions};
use infucb::{ingest, two_spike, ArmKind, BanditInstance, Error};

/// Anytime bandit identification: simulation campaigns, hardness reports,
/// dataset ingestion and exact verification.
#[derive(Parser)]
#[command(name = "infucb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a campaign spec and write result tables.
    Simulate(SimulateArgs),
    /// Evaluate the complexity functionals of an instance.
    Hardness(HardnessArgs),
    /// Build instances from data files.
    #[command(subcommand)]
    Ingest(IngestCommand),
    /// Check the subset-hitting bound by exhaustive enumeration.
    Verify(VerifyArgs),
    /// Re-run a finished campaign and compare trace hashes.
    Replay(ReplayArgs),
    /// Write a synthetic two-spike instance file.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Campaign spec (TOML).
    spec: PathBuf,
    /// Output directory; falls back to the spec, then $INFUCB_OUT_DIR, then ./infucb-out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed, overriding the spec.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores), overriding the spec.
    #[arg(long)]
    workers: Option<usize>,
    /// Trial count, overriding the spec.
    #[arg(long)]
    trials: Option<u64>,
    /// Write per-trial trace files.
    #[arg(long)]
    traces: bool,
}

#[derive(Args)]
struct SpikeArgs {
    /// Number of arms.
    #[arg(long)]
    n: usize,
    /// Number of high arms.
    #[arg(long)]
    m: usize,
    /// Mean of the low arms.
    #[arg(long, default_value_t = 0.0)]
    mu0: f64,
    /// Gap between high and low arms.
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    #[arg(long, default_value = "gaussian")]
    kind: ArmKind,
    /// Seed for the arm placement.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct HardnessArgs {
    /// Instance file; without it a two-spike instance is built from --n/--m.
    #[arg(long, conflicts_with_all = ["n", "m"])]
    instance: Option<PathBuf>,
    #[arg(long, requires = "m")]
    n: Option<usize>,
    #[arg(long, requires = "n")]
    m: Option<usize>,
    /// Two-spike low mean.
    #[arg(long = "spike-mu0", default_value_t = 0.0)]
    spike_mu0: f64,
    /// Two-spike gap.
    #[arg(long = "spike-eps", default_value_t = 1.0)]
    spike_eps: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Tolerance for epsilon-good functionals (default: the instance's).
    #[arg(long)]
    eps: Option<f64>,
    /// Threshold for discovery functionals (default: the instance's).
    #[arg(long)]
    mu0: Option<f64>,
    /// Largest m for which the full (k, j) grid is written.
    #[arg(long, default_value_t = 64)]
    grid_limit: usize,
    /// Also write an upper/lower ratio table for this k.
    #[arg(long)]
    bound_gap_k: Option<usize>,
    /// Destination of the ratio table (TSV); stdout when omitted.
    #[arg(long, requires = "bound_gap_k")]
    bound_gap_out: Option<PathBuf>,
    /// Report path (JSON); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum IngestCommand {
    /// Caption ratings `id,pos,total` to Bernoulli arms.
    Captions(CaptionArgs),
    /// Screen replicates `gene_id,z1,z2` to a fitted mixture and Gaussian arms.
    Screens(ScreenArgs),
}

#[derive(Args)]
struct CaptionArgs {
    input: PathBuf,
    /// Instance file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mu0: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
}

#[derive(Args)]
struct ScreenArgs {
    input: PathBuf,
    /// Instance file to write.
    #[arg(long)]
    out: PathBuf,
    /// Fitted mixture (JSON) to write.
    #[arg(long)]
    mixture_out: Option<PathBuf>,
    /// Arms to draw (default: one per gene).
    #[arg(long)]
    arms: Option<usize>,
    #[arg(long, default_value_t = ingest::DEFAULT_GRID_STEP)]
    grid_step: f64,
    #[arg(long, default_value_t = ingest::DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = ingest::DEFAULT_ITERATIONS)]
    iterations: usize,
    /// Threshold stored in the instance.
    #[arg(long, default_value_t = 0.0)]
    mu0: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct VerifyArgs {
    /// Largest m of the grid (at most 14).
    #[arg(long, default_value_t = verify::DEFAULT_GRID_M)]
    max_m: usize,
    /// Test hook: corrupt one bound so verification must fail.
    #[arg(long)]
    inject_corruption: bool,
    /// Report path (TSV); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// manifest.json of a finished campaign.
    manifest: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    spike: SpikeArgs,
    /// Instance file to write.
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Failed(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidParameter(_) | Error::Budget(_) | Error::Domain(_) => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Failed(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Failed(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn emit(out: Option<&Path>, text: &str) -> CmdResult {
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> CmdResult {
    let mut spec = CampaignSpec::load(&a.spec)?;
    if let Some(s) = a.seed {
        spec.master_seed = s;
    }
    if let Some(w) = a.workers {
        spec.workers = w;
    }
    if let Some(t) = a.trials {
        spec.trials = t;
    }
    if a.traces {
        spec.write_traces = true;
    }
    spec.validate()?;
    let base = a.spec.parent().unwrap_or(Path::new("."));
    let out = campaign::output_dir(a.out, &spec);
    let result = campaign::run_campaign(&spec, base, &out)?;
    println!("{} cells written to {}", result.cells.len(), result.dir.display());
    Ok(())
}

fn hardness(a: HardnessArgs) -> CmdResult {
    let instance = match (&a.instance, a.n, a.m) {
        (Some(p), _, _) => BanditInstance::load(p)?,
        (None, Some(n), Some(m)) => two_spike(n, m, a.spike_mu0, a.spike_eps, ArmKind::Gaussian, 0)?,
        _ => return Err(Failure::Usage("give --instance or --n and --m".into())),
    };
    let eps = a.eps.or(instance.epsilon);
    let mu0 = a.mu0.or(instance.threshold_mu0);
    if eps.is_none() && mu0.is_none() {
        return Err(Failure::Usage("the instance stores no eps or mu0; pass --eps or --mu0".into()));
    }
    let s = summarize(&instance, eps, mu0)?;
    let params = HardnessParams { delta: a.delta, eps, mu0, grid_limit: a.grid_limit };
    let report = HardnessReport::compute(&instance.label, &s, &params)?;
    emit(a.out.as_deref(), &(report.to_json()? + "\n"))?;
    if let Some(k) = a.bound_gap_k {
        let (Some(eps), Some(mu0)) = (eps, mu0) else {
            return Err(Failure::Usage("the ratio table needs both eps and mu0".into()));
        };
        let gap = verify::bound_gap_report(&instance, eps, mu0, k, a.delta)?;
        emit(a.bound_gap_out.as_deref(), &gap.to_tsv())?;
    }
    Ok(())
}

fn ingest_cmd(c: IngestCommand) -> CmdResult {
    match c {
        IngestCommand::Captions(a) => {
            let mut inst = ingest::load_caption_contest(&a.input)?;
            if let Some(mu0) = a.mu0 {
                inst = inst.with_threshold(mu0);
            }
            if let Some(eps) = a.eps {
                inst = inst.with_epsilon(eps);
            }
            inst.save(&a.out)?;
            println!("{} arms written to {}", inst.n_arms(), a.out.display());
        }
        IngestCommand::Screens(a) => {
            let z = ingest::load_screens(&a.input)?;
            let mix = ingest::fit_mixing_distribution(&z, a.grid_step, a.lambda, a.iterations)?;
            if let Some(p) = &a.mixture_out {
                fs::write(p, serde_json::to_string_pretty(&mix).map_err(Error::from)? + "\n")?;
            }
            let n = a.arms.unwrap_or(z.len());
            let inst = ingest::synth_from_mixture(&mix, n, a.seed)?.with_threshold(a.mu0);
            inst.save(&a.out)?;
            println!("{} arms written to {} (nll {:.6})", inst.n_arms(), a.out.display(), mix.nll.unwrap_or(f64::NAN));
        }
    }
    Ok(())
}

fn verify_cmd(a: VerifyArgs) -> CmdResult {
    let report = verify::verify_bound_grid(GridOptions { max_m: a.max_m, corrupt: a.inject_corruption })?;
    emit(a.out.as_deref(), &report.to_tsv())?;
    let bad = report.violation_count();
    if bad > 0 {
        return Err(Failure::Failed(format!("{bad} of {} cases violated", report.rows.len())));
    }
    eprintln!("all {} cases hold", report.rows.len());
    Ok(())
}

fn replay(a: ReplayArgs) -> CmdResult {
    let manifest = Manifest::load(&a.manifest)?;
    let bad = campaign::replay(&manifest, a.workers)?;
    if !bad.is_empty() {
        for m in &bad {
            eprintln!("{} trial {}: expected {}, got {}", m.run, m.trial, m.expected, m.actual);
        }
        return Err(Failure::Failed(format!("{} cells differ", bad.len())));
    }
    println!("{} cells reproduced", manifest.cells.len());
    Ok(())
}

fn generate(a: GenerateArgs) -> CmdResult {
    let s = a.spike;
    let inst = two_spike(s.n, s.m, s.mu0, s.eps, s.kind, s.seed)?;
    inst.save(&a.out)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Hardness(a) => hardness(a),
        Command::Ingest(c) => ingest_cmd(c),
        Command::Verify(a) => verify_cmd(a),
        Command::Replay(a) => replay(a),
        Command::Generate(a) => generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Failed(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
