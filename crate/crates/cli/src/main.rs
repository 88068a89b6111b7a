mod grid;
mod output;
mod scenario_file;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand, ValueEnum};
use radtrial_core::decision::SubgroupPosterior;
use radtrial_core::sampler::sample_posterior;
use radtrial_core::simulate::{run_replicates, sensitivity_sweep, separate_design_posterior};
use radtrial_core::{Design, DesignConfig, Dose, GeneratorFamily, PatientRecord, ScenarioSpec, Subgroup, SweepAxis, UtilityEstimate};
use serde::{Deserialize, Serialize};

use output::Recorder;
use scenario_file::{verify_calibration, ScenarioFile};

#[derive(Parser)]
#[command(name = "radtrial", version, about = "Competing-risk adaptive dose-selection trial design and simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate latent event-time generators to a scenario's targets.
    Calibrate(CalibrateArgs),
    /// Simulate replicate trials and tabulate operating characteristics.
    Simulate(SimulateArgs),
    /// Interim (or final) decisions for an accumulating trial dataset.
    Conduct(ConductArgs),
    /// Operating characteristics over a grid of one design parameter.
    Sensitivity(SensitivityArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DesignArg {
    Ar,
    Separate,
    Er,
}

impl From<DesignArg> for Design {
    fn from(d: DesignArg) -> Design {
        match d {
            DesignArg::Ar => Design::Adaptive,
            DesignArg::Separate => Design::Separate,
            DesignArg::Er => Design::Equal,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Weibull,
    LogLogistic,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Scenario file, or `builtin:N` for preset N (1..=7).
    #[arg(long)]
    scenario: String,
    /// Override the generator family.
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    /// Where to write the calibrated scenario (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Calibrated scenario file, or `builtin:N`.
    #[arg(long)]
    scenario: String,
    #[arg(long, value_enum, default_value = "ar")]
    design: DesignArg,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
    /// Design configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output table (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct SensitivityArgs {
    #[command(flatten)]
    run: RunArgs,
    /// One of sample_size, re_proportion, generator_family, weights.
    #[arg(long)]
    axis: String,
    /// Grid values: `a,b,c`, `start:end:step`, family names, or weight rows
    /// (`all`, `1,3`, `0/5/10/20/100`).
    #[arg(long)]
    grid: String,
    /// Plot-data file (default: next to --out with a `.plot.csv` suffix).
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct ConductArgs {
    /// Patient records: CSV with columns w,d,x,delta1,delta2[,enroll_time].
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "ar")]
    design: DesignArg,
    #[arg(long)]
    config: Option<PathBuf>,
    /// MCMC seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also report the final selection (complete follow-up assumed).
    #[arg(long = "final")]
    final_analysis: bool,
    /// JSON report path (default: text report on stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure with its exit status: 2 for parse/usage, 3 for calibration and
/// 4 for runtime failures.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, error: error.into() }
}

fn runtime(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 4, error: error.into() }
}

impl From<radtrial_core::Error> for Failure {
    fn from(e: radtrial_core::Error) -> Self {
        use radtrial_core::Error as E;
        let code = match &e {
            E::InfeasibleTargets { .. } | E::Calibration { .. } | E::Uncalibrated => 3,
            E::InvalidArm { .. } | E::NonPositiveTime(_) | E::InvalidInput(_) | E::InvalidConfig(_) => 2,
            _ => 4,
        };
        let error = match e {
            E::Uncalibrated => anyhow!("scenario is not calibrated; run `radtrial calibrate` on it first"),
            other => other.into(),
        };
        Failure { code, error }
    }
}

type CliResult<T> = Result<T, Failure>;

fn read(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| runtime(anyhow!("cannot read {}: {e}", path.display())))
}

/// Loads a scenario and the bytes that identify it.
fn load_scenario(arg: &str) -> CliResult<(ScenarioSpec, Vec<u8>)> {
    if let Some(n) = arg.strip_prefix("builtin:") {
        let n: usize = n.parse().map_err(|_| usage(anyhow!("`{arg}`: expected builtin:N with N in 1..=7")))?;
        let spec = ScenarioSpec::preset(n)?;
        return Ok((spec, arg.as_bytes().to_vec()));
    }
    let bytes = read(Path::new(arg))?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| usage(anyhow!("{arg}: {e}")))?;
    let file = ScenarioFile::parse(&text).map_err(|e| usage(anyhow!("{arg}: {e}")))?;
    let spec = file.to_spec().map_err(|e| usage(anyhow!("{arg}: {e}")))?;
    spec.validate()?;
    Ok((spec, bytes))
}

/// Scenario ready for simulation: presets are calibrated on the fly, files
/// must already carry verified generators.
fn calibrated_scenario(arg: &str) -> CliResult<(ScenarioSpec, Vec<u8>)> {
    let (mut spec, bytes) = load_scenario(arg)?;
    if arg.starts_with("builtin:") {
        spec.calibrate()?;
    } else {
        verify_calibration(&spec)?;
    }
    Ok((spec, bytes))
}

fn load_config(path: Option<&Path>) -> CliResult<(DesignConfig, Vec<u8>)> {
    let Some(path) = path else {
        return Ok((DesignConfig::default(), Vec::new()));
    };
    let bytes = read(path)?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| usage(anyhow!("{}: {e}", path.display())))?;
    let cfg: DesignConfig = toml::from_str(&text).map_err(|e| usage(anyhow!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok((cfg, bytes))
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(usage(anyhow!("--workers must be positive"))),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(runtime)?;
            Ok(pool.install(f))
        }
    }
}

fn emit(out: Option<&Path>, recorder: &mut Recorder, bytes: &[u8]) -> CliResult<()> {
    match out {
        Some(path) => recorder.write(path, bytes).map_err(runtime),
        None => std::io::stdout().write_all(bytes).map_err(runtime),
    }
}

fn cmd_calibrate(args: CalibrateArgs) -> CliResult<()> {
    let (mut spec, bytes) = load_scenario(&args.scenario)?;
    if let Some(f) = args.family {
        let family = match f {
            FamilyArg::Weibull => GeneratorFamily::Weibull,
            FamilyArg::LogLogistic => GeneratorFamily::LogLogistic,
        };
        if family != spec.family {
            spec.family = family;
            spec.generators = None;
        }
    }
    let already = spec.is_calibrated() && verify_calibration(&spec).is_ok();
    if !already {
        spec.calibrate()?;
    }
    let residuals = verify_calibration(&spec)?;
    for arm in radtrial_core::Arm::ALL {
        eprintln!("{:<12} residual {:.3e}", arm.key(), residuals[arm.index()]);
    }
    let text = ScenarioFile::from_spec(&spec).render().map_err(runtime)?;
    let mut recorder = Recorder::new("calibrate", output::config_digest(&[("scenario", &bytes)]), None);
    emit(args.out.as_deref(), &mut recorder, text.as_bytes())?;
    if let Some(out) = &args.out {
        recorder.finish(out).map_err(runtime)?;
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> CliResult<()> {
    let run = args.run;
    if run.reps == 0 {
        return Err(usage(anyhow!("--reps must be positive")));
    }
    let (spec, scenario_bytes) = calibrated_scenario(&run.scenario)?;
    let (cfg, cfg_bytes) = load_config(run.config.as_deref())?;
    let design: Design = run.design.into();
    eprintln!("simulating {} replicates of {} under {}", run.reps, spec.name, design);
    let start = Instant::now();
    let oc = with_workers(run.workers, || run_replicates(&spec, design, &cfg, run.reps, run.seed))??;
    eprintln!("done in {:.1}s ({} failed replicates)", start.elapsed().as_secs_f64(), oc.failures.len());
    for (seed, msg) in &oc.failures {
        eprintln!("  replicate seed {seed}: {msg}");
    }
    let table = output::oc_table(&oc).map_err(runtime)?;
    let digest = output::config_digest(&[("scenario", &scenario_bytes), ("config", &cfg_bytes), ("design", design.label().as_bytes())]);
    let mut recorder = Recorder::new("simulate", digest, Some(run.seed));
    emit(run.out.as_deref(), &mut recorder, &table)?;
    if let Some(out) = &run.out {
        recorder.finish(out).map_err(runtime)?;
    }
    Ok(())
}

fn cmd_sensitivity(args: SensitivityArgs) -> CliResult<()> {
    let run = args.run;
    let axis = SweepAxis::from_label(&args.axis).ok_or_else(|| {
        usage(anyhow!("unknown axis `{}` (sample_size, re_proportion, generator_family, weights)", args.axis))
    })?;
    let grid = grid::parse_grid(axis, &args.grid).map_err(|e| usage(anyhow!("--grid: {e}")))?;
    if run.reps == 0 {
        return Err(usage(anyhow!("--reps must be positive")));
    }
    let (spec, scenario_bytes) = calibrated_scenario(&run.scenario)?;
    let (cfg, cfg_bytes) = load_config(run.config.as_deref())?;
    let design: Design = run.design.into();
    eprintln!("sweeping {} over {} points, {} replicates each", axis.label(), grid.len(), run.reps);
    let start = Instant::now();
    let points = with_workers(run.workers, || sensitivity_sweep(&spec, design, &cfg, axis, &grid, run.reps, run.seed))??;
    eprintln!("done in {:.1}s", start.elapsed().as_secs_f64());
    let table = output::sweep_table(axis.label(), &points).map_err(runtime)?;
    let plot = output::plot_table(&points).map_err(runtime)?;
    let digest = output::config_digest(&[
        ("scenario", &scenario_bytes),
        ("config", &cfg_bytes),
        ("design", design.label().as_bytes()),
        ("axis", axis.label().as_bytes()),
        ("grid", args.grid.as_bytes()),
    ]);
    let mut recorder = Recorder::new("sensitivity", digest, Some(run.seed));
    emit(run.out.as_deref(), &mut recorder, &table)?;
    let plot_path = args.plot.or_else(|| run.out.as_ref().map(|o| o.with_extension("plot.csv")));
    if let Some(p) = &plot_path {
        recorder.write(p, &plot).map_err(runtime)?;
    }
    if let Some(primary) = run.out.as_ref().or(plot_path.as_ref()) {
        recorder.finish(primary).map_err(runtime)?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct DataRow {
    w: u8,
    d: u8,
    x: f64,
    delta1: u8,
    delta2: u8,
    #[serde(default)]
    enroll_time: f64,
}

fn read_records(path: &Path) -> CliResult<Vec<PatientRecord>> {
    let bytes = read(path)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<DataRow>().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| usage(anyhow!("{} row {row_no}: {e}", path.display())))?;
        let rec = PatientRecord::from_indicators(row.w, row.d, row.x, row.delta1, row.delta2, row.enroll_time)
            .map_err(|e| usage(anyhow!("{} row {row_no}: {e}", path.display())))?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Serialize)]
struct SubgroupReport {
    subgroup: Subgroup,
    admissible: Vec<Dose>,
    utilities: Vec<UtilityEstimate>,
    /// Empty when no dose is admissible (enrollment would close).
    next_cohort_randomization: Vec<(Dose, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_selection: Option<Option<Dose>>,
}

#[derive(Serialize)]
struct ConductReport {
    design: Design,
    n_records: usize,
    mcmc_seed: u64,
    subgroups: Vec<SubgroupReport>,
}

fn cmd_conduct(args: ConductArgs) -> CliResult<()> {
    let records = read_records(&args.data)?;
    let (cfg, cfg_bytes) = load_config(args.config.as_deref())?;
    let needed = cfg.n1 * cfg.cohort_size;
    if records.len() < needed {
        return Err(usage(anyhow!(
            "{} holds {} records; the equal-randomization phase alone enrolls {needed}",
            args.data.display(),
            records.len()
        )));
    }
    let design: Design = args.design.into();
    let mcmc = radtrial_core::McmcConfig { seed: args.seed, ..cfg.mcmc };
    let draws = match design {
        Design::Separate => separate_design_posterior(&records, &cfg.prior, &mcmc)?,
        _ => sample_posterior(&records, &cfg.prior, &mcmc)?,
    };
    let mut subgroups = Vec::new();
    for subgroup in Subgroup::ALL {
        let post = SubgroupPosterior::new(subgroup, &draws, cfg.nu, design.probability_model())?;
        let admissible = post.admissible(&cfg);
        let utilities = subgroup.doses().map(|d| post.mean_utility(d, &cfg.weights)).to_vec();
        let next_cohort_randomization = if admissible.is_empty() {
            Vec::new()
        } else {
            post.randomization(&admissible, &cfg.weights, design == Design::Equal)?
        };
        let final_selection = args.final_analysis.then(|| post.final_selection(&admissible, &cfg));
        subgroups.push(SubgroupReport { subgroup, admissible, utilities, next_cohort_randomization, final_selection });
    }
    let report = ConductReport { design, n_records: records.len(), mcmc_seed: args.seed, subgroups };
    match &args.out {
        Some(out) => {
            let mut bytes = serde_json::to_vec_pretty(&report).map_err(runtime)?;
            bytes.push(b'\n');
            let data_bytes = read(&args.data)?;
            let digest = output::config_digest(&[("data", &data_bytes), ("config", &cfg_bytes), ("design", design.label().as_bytes())]);
            let mut recorder = Recorder::new("conduct", digest, Some(args.seed));
            recorder.write(out, &bytes).map_err(runtime)?;
            recorder.finish(out).map_err(runtime)?;
        }
        None => print!("{}", render_report(&report)),
    }
    Ok(())
}

fn doses(ds: &[Dose]) -> String {
    if ds.is_empty() {
        "none".into()
    } else {
        ds.iter().map(|d| d.label()).collect::<Vec<_>>().join(", ")
    }
}

fn render_report(r: &ConductReport) -> String {
    let mut s = format!("design {}  records {}  mcmc seed {}\n", r.design, r.n_records, r.mcmc_seed);
    for g in &r.subgroups {
        s += &format!("\n[{}]\nadmissible: {}\n", g.subgroup.label(), doses(&g.admissible));
        for u in &g.utilities {
            s += &format!("  utility {:<8} {:>8.3} (mcse {:.3})\n", u.dose.label(), u.mean, u.mcse);
        }
        if g.next_cohort_randomization.is_empty() {
            s += "next cohort: enrollment closed\n";
        } else {
            let parts: Vec<String> = g.next_cohort_randomization.iter().map(|(d, p)| format!("{} {:.4}", d.label(), p)).collect();
            s += &format!("next cohort: {}\n", parts.join(", "));
        }
        if let Some(sel) = &g.final_selection {
            s += &format!("final selection: {}\n", sel.map_or("none", |d| d.label()));
        }
    }
    s
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Conduct(a) => cmd_conduct(a),
        Command::Sensitivity(a) => cmd_sensitivity(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
