use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rcpor::protocol::Variant;
use rcpor::scenario::{self, FileSource, RunReport, ScenarioSpec};

#[derive(Parser)]
#[command(name = "rcpor", version, about = "Recurring contingent PoR payment scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and print (or write) its report.
    Run {
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Re-check conservation and expected payouts of a saved report.
    VerifyReport { path: PathBuf },
}

fn load_spec(path: &Path) -> Result<ScenarioSpec, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut spec: ScenarioSpec = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    // File paths in a spec are relative to the spec itself.
    if let FileSource::Path(p) = &mut spec.file {
        if p.is_relative() {
            if let Some(dir) = path.parent() {
                *p = dir.join(&*p);
            }
        }
    }
    Ok(spec)
}

fn run(spec_path: &Path, seed: Option<u64>, report: Option<&Path>, variant: Option<Variant>) -> Result<bool, String> {
    let mut spec = load_spec(spec_path)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(v) = variant {
        spec.variant = v;
    }
    let r = scenario::run(&spec).map_err(|e| e.to_string())?;
    let json = r.to_json();
    match report {
        Some(p) => std::fs::write(p, json + "\n").map_err(|e| format!("{}: {e}", p.display()))?,
        None => println!("{json}"),
    }
    eprintln!(
        "{}: a={} counters=(y_C={}, y'_C={}, y_S={}, y'_S={}) payouts C={} S={} R={}",
        if r.valid { "VALID" } else { "INVALID" },
        r.accepted as u8,
        r.counters.y_c,
        r.counters.y_c_prime,
        r.counters.y_s,
        r.counters.y_s_prime,
        r.payouts_actual.client,
        r.payouts_actual.server,
        r.payouts_actual.arbiter.map_or("-".to_string(), |v| v.to_string()),
    );
    Ok(r.valid)
}

fn verify_report(path: &Path) -> Result<bool, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let r: RunReport = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let check = scenario::verify_report(&r);
    for p in &check.problems {
        eprintln!("problem: {p}");
    }
    println!("{}", if check.ok() { "VALID" } else { "INVALID" });
    Ok(check.ok())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { spec, seed, report, variant } => run(spec, *seed, report.as_deref(), *variant),
        Command::VerifyReport { path } => verify_report(path),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
