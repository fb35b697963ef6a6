use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cmpp_core::report::{format_float, write_report, Row};
use cmpp_core::runner::{self, exit_code};
use cmpp_core::scenario::{Format, Job, Overrides, Scenario, BUILTINS};

#[derive(Parser)]
#[command(name = "cmpp", version, about = "Compound mixed Poisson measure-change lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every job listed in a scenario.
    Run(RunArgs),
    /// List the builtin scenarios.
    List,
    /// Print the source of a scenario.
    Show { scenario: String },
    /// Simulate paths and check counts and aggregates.
    Simulate(RunArgs),
    /// Check the measure change for admissibility.
    Validate(RunArgs),
    /// Derive g and the laws under the new measure.
    DeriveQ(RunArgs),
    /// Compare direct and density-weighted estimates.
    VerifyReweighting(RunArgs),
    /// Martingale tables for the surplus and density processes.
    VerifyMartingale(RunArgs),
    /// Unconditionally centered surplus versus degeneracy of g(Theta).
    Degeneracy(RunArgs),
    /// Drift of the log density over growing horizons.
    Singularity(RunArgs),
    /// Premium densities and loading conditions.
    Premium(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Builtin scenario name or path to a scenario file.
    scenario: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Report file (relative paths resolve against $CMPP_OUTPUT_DIR).
    #[arg(long)]
    output: Option<String>,
    /// csv or json-lines.
    #[arg(long, value_parser = parse_format)]
    format: Option<Format>,
    /// Override a scenario parameter, e.g. --param c=2.
    #[arg(long = "param", value_parser = parse_param)]
    params: Vec<(String, f64)>,
    /// Do not print the per-row summary.
    #[arg(long, short)]
    quiet: bool,
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse()
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected name=value, got '{s}'"))?;
    let v: f64 = v.trim().parse().map_err(|e| format!("bad value for '{k}': {e}"))?;
    Ok((k.trim().to_string(), v))
}

fn print_row(r: &Row) {
    let verdict = r.verdict.map_or("    ", |v| match v.as_str() {
        "pass" => "ok  ",
        "fail" => "FAIL",
        _ => "??  ",
    });
    let est = r.estimate.map(format_float).unwrap_or_default();
    let oracle = r.oracle.map(|o| format!(" (oracle {})", format_float(o))).unwrap_or_default();
    let detail = if r.estimate.is_none() { &r.detail } else { "" };
    println!("{verdict} {:<18} {}  {est}{oracle}{detail}", r.job, r.quantity);
}

fn execute(args: RunArgs, jobs: Option<&[Job]>) -> ExitCode {
    let mut scenario = match Scenario::resolve(&args.scenario) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let overrides = Overrides {
        seed: args.seed,
        paths: args.paths,
        horizon: args.horizon,
        output: args.output,
        format: args.format,
        params: args.params,
    };
    if let Err(e) = scenario.apply(&overrides) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let rows = match runner::run(&scenario, jobs) {
        Ok(rows) => rows,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let path = runner::output_path(&scenario);
    if let Err(e) = write_report(&rows, scenario.output.format, &path) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    if !args.quiet {
        for r in &rows {
            print_row(r);
        }
    }
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    println!("report: {} ({} rows, {failed} failing)", path.display(), rows.len());
    ExitCode::from(exit_code(&rows) as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, job) = match cli.command {
        Command::List => {
            for (name, src) in BUILTINS {
                let desc = Scenario::parse(src, name).map(|s| s.description().to_string()).unwrap_or_default();
                println!("{name:<14} {desc}");
            }
            return ExitCode::SUCCESS;
        }
        Command::Show { scenario } => {
            return match Scenario::resolve(&scenario) {
                Ok(s) => {
                    print!("{}", s.source());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            };
        }
        Command::Run(a) => (a, None),
        Command::Simulate(a) => (a, Some(Job::Simulate)),
        Command::Validate(a) => (a, Some(Job::Validate)),
        Command::DeriveQ(a) => (a, Some(Job::DeriveQ)),
        Command::VerifyReweighting(a) => (a, Some(Job::VerifyReweighting)),
        Command::VerifyMartingale(a) => (a, Some(Job::VerifyMartingale)),
        Command::Degeneracy(a) => (a, Some(Job::Degeneracy)),
        Command::Singularity(a) => (a, Some(Job::Singularity)),
        Command::Premium(a) => (a, Some(Job::Premium)),
    };
    match job {
        Some(j) => execute(args, Some(&[j])),
        None => execute(args, None),
    }
}
