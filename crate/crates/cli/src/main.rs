use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ivfrail::first_stage::{first_stage_design, ipw_weights, logistic_fit, FirstStageRegressors};
use ivfrail::frailty::FrailtyFamily;
use ivfrail::io::{read_dataset, write_dataset, ColumnMap};
use ivfrail::simulation::{generate_dataset, parse_scenarios, replication_rng, run_monte_carlo, write_results};
use ivfrail::survival::{concordance_probability, kaplan_meier};
use ivfrail::two_stage::{estimate, EstimateReport, EstimatorKind};
use ivfrail::Error;

#[derive(Parser)]
#[command(name = "ivfrail", version, about = "Instrumental-variable Cox regression with individual frailty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the estimator family to a CSV dataset and report treatment hazard ratios.
    Analyze(AnalyzeArgs),
    /// Run Monte Carlo scenarios from a TOML file.
    Simulate(SimulateArgs),
    /// Kaplan-Meier curves per treatment group, optionally IPW-weighted.
    Km(KmArgs),
    /// Write one simulated dataset to CSV.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "time")]
    time: String,
    #[arg(long, default_value = "event")]
    event: String,
    #[arg(long, default_value = "treatment")]
    treatment: String,
    /// Comma-separated instrument columns.
    #[arg(long, value_delimiter = ',')]
    instrument: Vec<String>,
    /// Comma-separated measured covariate columns.
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    /// Comma-separated estimators; frailty estimators without a family
    /// suffix expand over `--frailty`.
    #[arg(long, value_delimiter = ',', default_value = "crude,naive,naive-frailty,2sri,2sri-frailty")]
    estimators: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "gaussian,gamma")]
    frailty: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenarios: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Seed for scenarios that do not set one.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct KmArgs {
    #[arg(long)]
    input: PathBuf,
    /// Binary (0/1) group column.
    #[arg(long)]
    group: String,
    #[arg(long, default_value = "time")]
    time: String,
    #[arg(long, default_value = "event")]
    event: String,
    /// Weight records by inverse propensity of group membership.
    #[arg(long, requires = "covariates")]
    ipw: bool,
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    /// Instrument column; prints the concordance of the instrument between groups.
    #[arg(long)]
    instrument: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    scenarios: PathBuf,
    /// Which scenario cell of the file (after sweep expansion).
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Replication number; the dataset equals that replication of `simulate`.
    #[arg(long, default_value_t = 0)]
    replication: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Simulate(a) => simulate(a),
        Command::Km(a) => km(a),
        Command::Generate(a) => generate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type CliResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn open(path: &Path) -> Result<File, Error> {
    File::open(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

fn expand_estimators(names: &[String], families: &[String]) -> Result<Vec<EstimatorKind>, Error> {
    let families = families
        .iter()
        .map(|f| match f.trim().to_ascii_lowercase().as_str() {
            "gaussian" => Ok(FrailtyFamily::Gaussian),
            "gamma" => Ok(FrailtyFamily::Gamma),
            other => Err(Error::InvalidInput(format!("unknown frailty family `{other}`"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::new();
    for name in names {
        let kind: EstimatorKind = name.parse()?;
        let explicit = name.trim().ends_with("-gaussian") || name.trim().ends_with("-gamma");
        if kind.frailty().is_some() && !explicit {
            out.extend(families.iter().map(|&f| kind.with_family(f)));
        } else {
            out.push(kind);
        }
    }
    out.dedup();
    Ok(out)
}

#[derive(Serialize)]
struct ReportRow {
    method: String,
    hr: Option<f64>,
    ci_lower: Option<f64>,
    ci_upper: Option<f64>,
    log_hr: Option<f64>,
    se: Option<f64>,
    theta_hat: Option<f64>,
    first_stage_r2: Option<f64>,
    boundary_theta: Option<bool>,
    converged: Option<bool>,
    iterations: Option<usize>,
    hr_ci: String,
    error: String,
}

impl ReportRow {
    fn from_result(kind: EstimatorKind, result: &Result<EstimateReport, Error>) -> Self {
        match result {
            Ok(r) => ReportRow {
                method: kind.label(),
                hr: Some(r.hr),
                ci_lower: Some(r.ci.0),
                ci_upper: Some(r.ci.1),
                log_hr: Some(r.log_hr),
                se: Some(r.se),
                theta_hat: r.diagnostics.theta_hat,
                first_stage_r2: r.diagnostics.first_stage_r2,
                boundary_theta: Some(r.diagnostics.boundary_theta),
                converged: Some(r.diagnostics.converged),
                iterations: Some(r.diagnostics.iterations),
                hr_ci: format!("{:.3} ({:.3}; {:.3})", r.hr, r.ci.0, r.ci.1),
                error: String::new(),
            },
            Err(e) => ReportRow {
                method: kind.label(),
                hr: None,
                ci_lower: None,
                ci_upper: None,
                log_hr: None,
                se: None,
                theta_hat: None,
                first_stage_r2: None,
                boundary_theta: None,
                converged: None,
                iterations: None,
                hr_ci: String::new(),
                error: e.to_string(),
            },
        }
    }
}

fn analyze(args: AnalyzeArgs) -> CliResult {
    let kinds = expand_estimators(&args.estimators, &args.frailty)?;
    let map = ColumnMap {
        time: args.time,
        event: args.event,
        treatment: args.treatment,
        covariates: args.covariates,
        instruments: args.instrument,
        weight: None,
    };
    let data = read_dataset(open(&args.input)?, &map)?;
    let results: Vec<(EstimatorKind, Result<EstimateReport, Error>)> =
        kinds.iter().map(|&k| (k, estimate(&data, k))).collect();
    let rows: Vec<ReportRow> = results.iter().map(|(k, r)| ReportRow::from_result(*k, r)).collect();

    let sink: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(std::io::stdout().lock()),
    };
    match args.format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(sink);
            for row in &rows {
                w.serialize(row)?;
            }
            w.flush()?;
        }
        Format::Json => {
            let mut sink = sink;
            serde_json::to_writer_pretty(&mut sink, &rows)?;
            writeln!(sink)?;
            sink.flush()?;
        }
    }

    let failures: Vec<&(EstimatorKind, Result<EstimateReport, Error>)> = results.iter().filter(|(_, r)| r.is_err()).collect();
    if !failures.is_empty() {
        eprintln!("{:<24} error", "estimator");
        for (k, r) in &failures {
            if let Err(e) = r {
                eprintln!("{:<24} {e}", k.label());
            }
        }
    }
    Ok(if failures.len() == results.len() { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn simulate(args: SimulateArgs) -> CliResult {
    let text = std::fs::read_to_string(&args.scenarios)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", args.scenarios.display())))?;
    let scenarios = parse_scenarios(&text, args.seed)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(args.threads).build()?;
    let total = scenarios.len();
    let mut summaries = Vec::with_capacity(total);
    for (i, sc) in scenarios.iter().enumerate() {
        let summary = pool.install(|| run_monte_carlo(&sc.config, &sc.estimators))?;
        eprintln!(
            "[{}/{}] {} ({} replications, censored {:.3})",
            i + 1,
            total,
            sc.config.id,
            sc.config.replications,
            summary.censored_fraction
        );
        summaries.push(summary);
    }
    let mut out = create(&args.out)?;
    write_results(&mut out, &summaries)?;
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn km(args: KmArgs) -> CliResult {
    let map = ColumnMap {
        time: args.time,
        event: args.event,
        treatment: args.group.clone(),
        covariates: args.covariates,
        instruments: args.instrument.into_iter().collect(),
        weight: None,
    };
    let data = read_dataset(open(&args.input)?, &map)?;
    let group = data.treatment();
    if let Some(bad) = group.iter().find(|&&g| g != 0.0 && g != 1.0) {
        return Err(Error::Schema {
            column: args.group,
            message: format!("group must be 0/1, found {bad}"),
        }
        .into());
    }
    let labels: Vec<bool> = group.iter().map(|&g| g == 1.0).collect();
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::Schema {
            column: args.group,
            message: "both groups must be present".into(),
        }
        .into());
    }

    let weights = if args.ipw {
        let x = first_stage_design(
            &data,
            FirstStageRegressors {
                instrument: false,
                covariates: true,
            },
        );
        let fit = logistic_fit(&labels, &x)?;
        let w = ipw_weights(&fit, &labels)?;
        if w.n_clipped > 0 {
            eprintln!("note: {} weights clipped", w.n_clipped);
        }
        Some(w.weights)
    } else {
        None
    };

    let times = data.times();
    let events = data.events();
    let mut w = csv::Writer::from_writer(create(&args.out)?);
    w.write_record(["group", "time", "survival", "lower", "upper", "at_risk", "events"])?;
    for g in [0u8, 1u8] {
        let idx: Vec<usize> = (0..data.len()).filter(|&i| labels[i] == (g == 1)).collect();
        let t: Vec<f64> = idx.iter().map(|&i| times[i]).collect();
        let e: Vec<bool> = idx.iter().map(|&i| events[i]).collect();
        let wt: Option<Vec<f64>> = weights.as_ref().map(|w| idx.iter().map(|&i| w[i]).collect());
        let curve = kaplan_meier(&t, &e, wt.as_deref())?;
        for k in 0..curve.times.len() {
            w.write_record([
                g.to_string(),
                curve.times[k].to_string(),
                curve.survival[k].to_string(),
                curve.ci_lower[k].to_string(),
                curve.ci_upper[k].to_string(),
                curve.at_risk[k].to_string(),
                curve.events[k].to_string(),
            ])?;
        }
    }
    w.flush()?;

    if data.n_instruments() > 0 {
        let inst = data.instrument(0);
        let g1: Vec<f64> = (0..data.len()).filter(|&i| labels[i]).map(|i| inst[i]).collect();
        let g0: Vec<f64> = (0..data.len()).filter(|&i| !labels[i]).map(|i| inst[i]).collect();
        let c = concordance_probability(&g1, &g0)?;
        println!(
            "concordance {} se {} ci {} {}",
            c.estimate, c.std_error, c.lower, c.upper
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn generate(args: GenerateArgs) -> CliResult {
    let text = std::fs::read_to_string(&args.scenarios)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", args.scenarios.display())))?;
    let scenarios = parse_scenarios(&text, args.seed)?;
    let sc = scenarios.get(args.index).ok_or_else(|| {
        Error::InvalidInput(format!("scenario index {} out of range ({} cells)", args.index, scenarios.len()))
    })?;
    let mut rng = replication_rng(sc.config.seed, args.replication);
    let sim = generate_dataset(&sc.config, &mut rng)?;
    let mut out = create(&args.out)?;
    write_dataset(&mut out, &sim.dataset)?;
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}
