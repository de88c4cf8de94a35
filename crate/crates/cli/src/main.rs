//! `gradfield`: run, validate and inspect experiments from JSON configs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gradfield::harness::Verdict;
use gradfield::runner::{run, validate, verify_run, RunConfig, RunManifest};

#[derive(Parser)]
#[command(name = "gradfield", version, about = "Gradient-field simulations and limit checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; overrides the config (results do not depend on it).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Equilibrium field chain with declared observables.
    Field(RunArgs),
    /// Joint walk trajectories or the covariance identity.
    Walk(RunArgs),
    /// Green's functions, capacities and heat kernels.
    Green(RunArgs),
    /// Trajectory soups and their occupation fields.
    Soup(RunArgs),
    /// Isomorphism residual by independent routes.
    Isomorphism(RunArgs),
    /// Scaling-limit ladders and the homogenized diffusivity.
    Scaling(RunArgs),
    /// Check a configuration without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Summarize a finished run and verify its artifact hashes.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(path: &Path) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn print_verdicts(m: &RunManifest) {
    for v in &m.verdicts {
        let tag = match v.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Inconclusive => "INCONCLUSIVE",
        };
        println!("{tag:<12} {}: {}", v.check, v.detail);
    }
    if let Some(e) = &m.error {
        println!("error: {e}");
    }
}

fn run_command(kind: &str, a: RunArgs) -> Result<ExitCode, String> {
    let mut cfg = load(&a.config)?;
    if cfg.experiment.name() != kind {
        return Err(format!("config describes a `{}` experiment, not `{kind}`", cfg.experiment.name()));
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(t) = a.threads {
        cfg.threads = t;
    }
    if let Some(o) = a.out {
        cfg.output_dir = Some(o);
    }
    let m = run(&cfg).map_err(|e| e.to_string())?;
    print_verdicts(&m);
    let dir = cfg.output_dir.unwrap_or_else(|| PathBuf::from("gradfield-out"));
    println!("manifest: {}", dir.join("manifest.json").display());
    Ok(if m.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Field(a) => run_command("field", a),
        Command::Walk(a) => run_command("walk", a),
        Command::Green(a) => run_command("green", a),
        Command::Soup(a) => run_command("soup", a),
        Command::Isomorphism(a) => run_command("isomorphism", a),
        Command::Scaling(a) => run_command("scaling", a),
        Command::Validate { config } => load(&config).map(|cfg| {
            let rep = validate(&cfg);
            for f in &rep.findings {
                println!("{:<5} {} ({}): {}", if f.pass { "ok" } else { "FAIL" }, f.check, f.location, f.message);
            }
            if rep.ok() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }),
        Command::Report { out } => verify_run(&out).map_err(|e| e.to_string()).map(|c| {
            let m = &c.manifest;
            println!("experiment {} (seed {}, config {})", m.experiment, m.seed, &m.config_hash[..16]);
            println!("wall time {:.2} s, code version {}", m.finished - m.started, m.code_version);
            print_verdicts(m);
            for a in &m.artifacts {
                let ok = !c.mismatched.contains(&a.file);
                println!("{:<8} {} ({} bytes)", if ok { "hash ok" } else { "MODIFIED" }, a.file, a.bytes);
            }
            if c.mismatched.is_empty() && m.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}
