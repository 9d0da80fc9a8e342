use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use strongapprox::experiment::{run, write_artifacts, ExperimentConfig, RunReport};
use strongapprox::Error;

#[derive(Parser)]
#[command(
    name = "strongapprox",
    version,
    about = "Coupling, Rosenthal and KMT diagnostics for dependent sequences"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Coupling coefficient estimates with analytic bounds.
    Coeffs(RunArgs),
    /// Dyadic decompositions, pointwise and moment checks.
    Rosenthal(RunArgs),
    /// Block schedule, ν_k and the condition tables.
    Kmt(RunArgs),
    /// Feasibility certificate of the rate system.
    Rates(RunArgs),
    /// Long-run variance by two estimators.
    Sigma2(RunArgs),
    /// Monte Carlo coefficients against analytic bounds.
    CompareBounds(RunArgs),
    /// Print the verdicts of a finished run.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn fail(kind: &str, err: &Error) -> ExitCode {
    let msg = serde_json::json!({ "error": kind, "message": err.to_string() });
    eprintln!("{msg}");
    ExitCode::from(2)
}

fn print_verdicts(report: &RunReport, dir: &Path) -> ExitCode {
    for v in &report.verdicts {
        println!("{} {}", if v.holds { "PASS" } else { "FAIL" }, v.name);
    }
    match report.first_failure() {
        Some(v) => {
            eprintln!(
                "verdict {} failed at {}",
                v.name,
                dir.join(&v.record).display()
            );
            ExitCode::from(1)
        }
        None => ExitCode::SUCCESS,
    }
}

fn execute(sub: &str, args: &RunArgs) -> ExitCode {
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => return fail("io", &e.into()),
    };
    let mut config = match ExperimentConfig::from_json(&text) {
        Ok(c) => c,
        Err(e) => return fail("validation", &e),
    };
    if config.experiment.subcommand() != sub {
        let e = Error::Config(format!(
            "config holds a {} experiment, not {sub}",
            config.experiment.name()
        ));
        return fail("validation", &e);
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if args.workers.is_some() {
        config.workers = args.workers;
    }
    if let Err(e) = config.validate() {
        return fail("validation", &e);
    }
    let out = match run(&config) {
        Ok(o) => o,
        Err(e) => return fail("run", &e),
    };
    if let Err(e) = write_artifacts(&out, &args.out) {
        return fail("io", &e);
    }
    println!("{} ({})", out.report.experiment, out.report.config_hash);
    print_verdicts(&out.report, &args.out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Coeffs(a) => execute("coeffs", a),
        Command::Rosenthal(a) => execute("rosenthal", a),
        Command::Kmt(a) => execute("kmt", a),
        Command::Rates(a) => execute("rates", a),
        Command::Sigma2(a) => execute("sigma2", a),
        Command::CompareBounds(a) => execute("compare-bounds", a),
        Command::Report { out } => {
            let text = match std::fs::read_to_string(out.join("summary.json")) {
                Ok(t) => t,
                Err(e) => return fail("io", &e.into()),
            };
            match serde_json::from_str::<RunReport>(&text) {
                Ok(r) => {
                    println!(
                        "{} seed {} hash {} samples {}",
                        r.experiment, r.seed, r.config_hash, r.samples
                    );
                    for (name, prov) in &r.provenance {
                        println!("  {name}: {prov}");
                    }
                    print_verdicts(&r, out)
                }
                Err(e) => fail("validation", &e.into()),
            }
        }
    }
}
