mod moments;
mod record;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cvbench::analytic::covariance_noise_threshold;
use cvbench::channel::{mp_channel_moments, MPParams};
use cvbench::evm::{assemble_partial_evm, InputEnsemble, PartialEVM};
use cvbench::feasibility::{classify, Verdict, DEFAULT_TOL};
use cvbench::sweep::{
    alpha_curves_to_csv, alpha_dependence, channel_evm, curves_to_csv, curves_to_json,
    evm_noise_threshold, sweep_criteria, two_state_alpha_grid, Assembly, Bisection, Criterion,
    MomentMode, SweepConfig,
};
use num_complex::Complex64;
use serde_json::json;

use crate::moments::MomentsFile;
use crate::record::RunRecord;

#[derive(Parser)]
#[command(name = "cvbench", version, about = "Quantum-domain benchmarks for continuous-variable channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide whether channel data certifies entanglement.
    Classify(ClassifyArgs),
    /// Noise threshold at one transmissivity.
    Threshold(ThresholdArgs),
    /// Threshold curves over a transmissivity grid.
    Sweep(SweepArgs),
    /// Threshold against input amplitude for several ensemble sizes.
    AlphaScan(AlphaScanArgs),
    /// Build the expectation-value matrix from a measured-moments file.
    Ingest(IngestArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MomentModeArg {
    /// Means, variances and the x-p covariance.
    Full,
    /// Means and variances only.
    Homodyne,
}

impl From<MomentModeArg> for MomentMode {
    fn from(m: MomentModeArg) -> Self {
        match m {
            MomentModeArg::Full => MomentMode::FullMoments,
            MomentModeArg::Homodyne => MomentMode::HomodyneOnly,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AssemblyArg {
    Direct,
    PhaseCovariant,
}

impl From<AssemblyArg> for Assembly {
    fn from(a: AssemblyArg) -> Self {
        match a {
            AssemblyArg::Direct => Assembly::Direct,
            AssemblyArg::PhaseCovariant => Assembly::PhaseCovariant,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CriterionArg {
    Evm,
    Covariance,
}

impl From<CriterionArg> for Criterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::Evm => Criterion::Evm,
            CriterionArg::Covariance => Criterion::Covariance,
        }
    }
}

/// Ensemble and solver settings shared by the simulating commands.
#[derive(Args, Clone)]
struct ModelArgs {
    /// Number of input coherent states.
    #[arg(long = "n", default_value_t = 3)]
    n_states: usize,
    /// Input amplitude |α|.
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "full")]
    moment_mode: MomentModeArg,
    /// Margin tolerance of the verdict.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
}

#[derive(Args, Clone)]
struct BisectionArgs {
    /// Target width of the final n̄ bracket.
    #[arg(long, default_value_t = 1e-3)]
    precision: f64,
    /// Upper bracket end; defaults to 2η/(1−η)+1.
    #[arg(long)]
    upper: Option<f64>,
    #[arg(long, value_enum, default_value = "direct")]
    assembly: AssemblyArg,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Measured-moments JSON file instead of a simulated channel.
    #[arg(long, conflicts_with_all = ["eta", "nbar", "gain"])]
    input: Option<PathBuf>,
    /// Channel transmissivity.
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    /// Thermal photon number of the channel noise.
    #[arg(long, default_value_t = 0.0)]
    nbar: f64,
    /// Simulate a heterodyne measure-and-prepare channel with this gain.
    #[arg(long)]
    gain: Option<f64>,
    #[command(flatten)]
    model: ModelArgs,
    /// Print the verdict as JSON.
    #[arg(long)]
    json: bool,
    /// Append a run record to this file.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct ThresholdArgs {
    #[arg(long)]
    eta: f64,
    #[arg(long, value_enum, default_value = "evm")]
    criterion: CriterionArg,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    bisection: BisectionArgs,
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated transmissivities.
    #[arg(long, value_delimiter = ',', conflicts_with = "eta_range")]
    etas: Vec<f64>,
    /// START:STOP:COUNT, evenly spaced with both ends included.
    #[arg(long)]
    eta_range: Option<String>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "evm,covariance")]
    criteria: Vec<CriterionArg>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    bisection: BisectionArgs,
    /// Directory receiving NAME.csv, NAME.json and the run log.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, default_value = "sweep")]
    name: String,
    /// Run log path; defaults to OUT_DIR/runs.jsonl.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct AlphaScanArgs {
    #[arg(long, default_value_t = 0.5)]
    eta: f64,
    /// Comma-separated ensemble sizes.
    #[arg(long = "n", value_delimiter = ',', default_value = "2,3")]
    n_list: Vec<usize>,
    /// Comma-separated amplitudes; defaults to 0.1, 0.2, …, 1.5.
    #[arg(long, value_delimiter = ',')]
    alphas: Vec<f64>,
    #[arg(long, value_enum, default_value = "full")]
    moment_mode: MomentModeArg,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[command(flatten)]
    bisection: BisectionArgs,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, default_value = "alpha_scan")]
    name: String,
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    /// Measured-moments JSON file.
    path: PathBuf,
    /// Write the EVM JSON here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also run the verdict and exit with its code.
    #[arg(long)]
    classify: bool,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Classify(a) => cmd_classify(a),
        Command::Threshold(a) => cmd_threshold(a).map(|_| 0),
        Command::Sweep(a) => cmd_sweep(a).map(|_| 0),
        Command::AlphaScan(a) => cmd_alpha_scan(a).map(|_| 0),
        Command::Ingest(a) => cmd_ingest(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn sweep_config(model: &ModelArgs, bisection: &BisectionArgs, eta_grid: Vec<f64>, criteria: Vec<Criterion>) -> SweepConfig {
    SweepConfig {
        eta_grid,
        n_states: model.n_states,
        alpha: model.alpha,
        moment_mode: model.moment_mode.into(),
        tol: model.tol,
        bisection: Bisection {
            lower: 0.0,
            upper: bisection.upper,
            precision: bisection.precision,
        },
        assembly: bisection.assembly.into(),
        criteria,
    }
}

fn print_verdict(v: &Verdict, as_json: bool) -> Result<()> {
    if as_json {
        println!("{}", serde_json::to_string_pretty(v)?);
    } else {
        let ppt = v.ppt_margin.map_or("n/a".to_string(), |m| format!("{m:.6e}"));
        println!(
            "{} margin={:.6e} physical_margin={:.6e} ppt_margin={} tol={:e}",
            v.status, v.margin, v.physical_margin, ppt, v.tolerance
        );
    }
    Ok(())
}

fn verdict_code(v: &Verdict) -> u8 {
    v.status.exit_code() as u8
}

fn cmd_classify(a: ClassifyArgs) -> Result<u8> {
    let start = Instant::now();
    let (evm, source) = match &a.input {
        Some(path) => {
            let file = MomentsFile::read(path)?;
            for w in file.physicality_warnings() {
                eprintln!("warning: {w}");
            }
            (file.to_evm()?, json!({ "input": path }))
        }
        None => {
            let m = &a.model;
            let evm = match a.gain {
                Some(g) => mp_evm(g, m)?,
                None => {
                    let cfg = sweep_config(m, &default_bisection(), vec![], vec![]);
                    channel_evm(a.eta, a.nbar, &cfg)?
                }
            };
            (
                evm,
                json!({
                    "eta": a.eta, "nbar": a.nbar, "gain": a.gain, "n_states": m.n_states,
                    "alpha": m.alpha, "moment_mode": MomentMode::from(m.moment_mode),
                }),
            )
        }
    };
    let v = classify(&evm, a.model.tol)?;
    print_verdict(&v, a.json)?;
    if let Some(log) = &a.log {
        let cfg = json!({ "source": source, "tol": a.model.tol });
        RunRecord::new("classify", cfg, v, start.elapsed())?.append_to(log)?;
    }
    Ok(verdict_code(&v))
}

fn default_bisection() -> BisectionArgs {
    BisectionArgs {
        precision: 1e-3,
        upper: None,
        assembly: AssemblyArg::Direct,
    }
}

fn mp_evm(gain: f64, m: &ModelArgs) -> Result<PartialEVM> {
    let ens = InputEnsemble::equally_spaced(Complex64::new(m.alpha, 0.0), m.n_states)?;
    let mp = MPParams::new(gain)?;
    let mode = MomentMode::from(m.moment_mode);
    let moments: Vec<_> = (0..ens.n_states())
        .map(|j| mode.apply(mp_channel_moments(&mp, ens.amplitude(j))))
        .collect();
    Ok(assemble_partial_evm(&ens, &moments)?)
}

fn cmd_threshold(a: ThresholdArgs) -> Result<()> {
    let start = Instant::now();
    let cfg = sweep_config(&a.model, &a.bisection, vec![a.eta], vec![a.criterion.into()]);
    let t = match a.criterion {
        CriterionArg::Evm => evm_noise_threshold(a.eta, &cfg)?,
        CriterionArg::Covariance => covariance_noise_threshold(a.eta)?,
    };
    let excess = (1.0 - a.eta) * t;
    println!("eta={} nbar_threshold={t:.6} excess_variance={excess:.6}", a.eta);
    if let Some(log) = &a.log {
        let results = json!({ "eta": a.eta, "nbar_threshold": t, "excess_variance": excess });
        RunRecord::new("threshold", &cfg, results, start.elapsed())?.append_to(log)?;
    }
    Ok(())
}

fn parse_range(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        bail!("--eta-range expects START:STOP:COUNT, got {text:?}");
    }
    let start: f64 = parts[0].parse().with_context(|| format!("bad START in {text:?}"))?;
    let stop: f64 = parts[1].parse().with_context(|| format!("bad STOP in {text:?}"))?;
    let count: usize = parts[2].parse().with_context(|| format!("bad COUNT in {text:?}"))?;
    Ok(match count {
        0 => vec![],
        1 => vec![start],
        _ => (0..count)
            .map(|k| start + (stop - start) * k as f64 / (count - 1) as f64)
            .collect(),
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let start = Instant::now();
    let grid = match &a.eta_range {
        Some(r) => parse_range(r)?,
        None => a.etas.clone(),
    };
    let criteria = a.criteria.iter().map(|&c| c.into()).collect();
    let cfg = sweep_config(&a.model, &a.bisection, grid, criteria);
    let curves = sweep_criteria(&cfg)?;

    prepare_dir(&a.out_dir)?;
    let csv_path = a.out_dir.join(format!("{}.csv", a.name));
    let json_path = a.out_dir.join(format!("{}.json", a.name));
    write_file(&csv_path, &curves_to_csv(&curves)?)?;
    write_file(&json_path, &curves_to_json(&curves)?)?;

    for c in &curves {
        for p in &c.points {
            match (p.nbar_threshold, &p.error) {
                (Some(t), _) => println!("{} eta={} nbar_threshold={t:.6}", c.criterion, p.eta),
                (None, Some(e)) => eprintln!("warning: {} eta={}: {e}", c.criterion, p.eta),
                (None, None) => {}
            }
        }
    }
    let log = a.log.clone().unwrap_or_else(|| a.out_dir.join("runs.jsonl"));
    RunRecord::new("sweep", &cfg, &curves, start.elapsed())?.append_to(&log)?;
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

fn cmd_alpha_scan(a: AlphaScanArgs) -> Result<()> {
    let start = Instant::now();
    let alphas = if a.alphas.is_empty() {
        two_state_alpha_grid()
    } else {
        a.alphas.clone()
    };
    let template = SweepConfig {
        eta_grid: vec![a.eta],
        moment_mode: a.moment_mode.into(),
        tol: a.tol,
        bisection: Bisection {
            lower: 0.0,
            upper: a.bisection.upper,
            precision: a.bisection.precision,
        },
        assembly: a.bisection.assembly.into(),
        criteria: vec![Criterion::Evm],
        ..SweepConfig::default()
    };
    let curves = alpha_dependence(a.eta, &a.n_list, &alphas, &template)?;

    prepare_dir(&a.out_dir)?;
    let csv_path = a.out_dir.join(format!("{}.csv", a.name));
    let json_path = a.out_dir.join(format!("{}.json", a.name));
    write_file(&csv_path, &alpha_curves_to_csv(&curves)?)?;
    write_file(&json_path, &curves_to_json(&curves)?)?;

    for c in &curves {
        for p in c.points.iter().filter(|p| p.error.is_some()) {
            eprintln!("warning: N={} alpha={}: {}", c.n_states, p.alpha, p.error.as_deref().unwrap_or(""));
        }
        match c.best() {
            Some((alpha, t)) => println!("N={} best alpha={alpha} nbar_threshold={t:.6}", c.n_states),
            None => println!("N={} no threshold", c.n_states),
        }
    }
    let log = a.log.clone().unwrap_or_else(|| a.out_dir.join("runs.jsonl"));
    let cfg = json!({ "eta": a.eta, "n_list": a.n_list, "alphas": alphas, "template": template });
    RunRecord::new("alpha-scan", cfg, &curves, start.elapsed())?.append_to(&log)?;
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

fn cmd_ingest(a: IngestArgs) -> Result<u8> {
    let file = MomentsFile::read(&a.path)?;
    for w in file.physicality_warnings() {
        eprintln!("warning: {w}");
    }
    let evm = file.to_evm()?;
    let text = evm.to_json()?;
    match &a.output {
        Some(path) => write_file(path, &text)?,
        None => println!("{text}"),
    }
    if a.classify {
        let v = classify(&evm, a.tol)?;
        // Keep stdout parseable when it carries the EVM.
        if a.output.is_some() {
            print_verdict(&v, false)?;
        } else {
            eprintln!("{}", v.status);
        }
        return Ok(verdict_code(&v));
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_parsing() {
        assert_eq!(parse_range("0:0.5:3").unwrap(), vec![0.0, 0.25, 0.5]);
        assert_eq!(parse_range("0.2:0.9:1").unwrap(), vec![0.2]);
        assert!(parse_range("0:1").is_err());
        assert!(parse_range("a:1:2").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
